import sys
from pathlib import Path

import pytest

import seqkd.kernels as kernels

sys.path.insert(0, str(Path(__file__).parent))  # make `oracles` importable


@pytest.fixture(params=[mod.NAME for mod in kernels.available_backends()])
def kernel_backend(request):
    """Run the test once per importable kernel backend."""
    target = next(m for m in kernels.available_backends() if m.NAME == request.param)
    previous = kernels._impl
    kernels.use_backend(target)
    yield request.param
    kernels.use_backend(previous)
