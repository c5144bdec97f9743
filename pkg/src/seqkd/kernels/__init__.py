"""Kernel backend selection.

The hot sequence kernels (convolution and pooling) exist twice: a compiled
Cython extension (``_fast``) and a pure-numpy fallback (``ref``). The compiled
module is preferred when it imported cleanly; set ``SEQKD_PURE_PYTHON=1`` to
force the numpy path. ``seqkd bench --kernels`` times the two side by side.
"""

import os

from . import ref

if os.environ.get("SEQKD_PURE_PYTHON"):
    _impl = ref
else:
    try:
        from . import _fast as _impl
    except ImportError:
        _impl = ref


FUNCTION_NAMES = (
    "conv1d_same",
    "conv1d_same_backward",
    "maxpool1d",
    "maxpool1d_backward",
    "avgpool1d",
    "avgpool1d_backward",
    "maxpool2d",
    "maxpool2d_backward",
    "upsample1d",
    "upsample1d_backward",
)


def backend_name() -> str:
    return _impl.NAME


def available_backends():
    """All importable backend modules, compiled one first."""
    backends = []
    try:
        from . import _fast
        backends.append(_fast)
    except ImportError:
        pass
    backends.append(ref)
    return backends


def use_backend(module):
    """Repoint the public kernel functions at ``module``.

    Tests and the kernel benchmark use this to exercise a specific backend;
    normal code never calls it.
    """
    global _impl
    _impl = module
    g = globals()
    for name in FUNCTION_NAMES:
        g[name] = getattr(module, name)


use_backend(_impl)
