"""Independent brute-force oracles used to check the fast implementations.

Everything here is written as plain index-by-index loops (or the naive
textbook formula) on purpose: these functions must stay decoupled from the
vectorized code paths they validate.
"""

import numpy as np


def finite_difference(f, arrays, step=1e-5):
    """Central-difference gradient of scalar ``f()`` wrt each array, in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            fp = f()
            flat[i] = old - step
            fm = f()
            flat[i] = old
            gflat[i] = (fp - fm) / (2.0 * step)
        grads.append(g)
    return grads


def max_rel_err(a, b, floor=1e-3):
    """Largest elementwise relative error, with a denominator floor.

    The floor keeps finite-difference noise on near-zero gradients from
    registering as a large relative error; real gradients sit well above it.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return float((np.abs(a - b) / denom).max())


def conv1d_oracle(x, w, b):
    """Direct sliding-window convolution, zero 'same' padding, stride 1."""
    B, L, Cin = x.shape
    K, _, Cout = w.shape
    left = (K - 1) // 2
    out = np.zeros((B, L, Cout))
    for i in range(B):
        for t in range(L):
            for k in range(K):
                s = t + k - left
                if 0 <= s < L:
                    for co in range(Cout):
                        for ci in range(Cin):
                            out[i, t, co] += x[i, s, ci] * w[k, ci, co]
            out[i, t] += b
    return out


def maxpool1d_oracle(x, size):
    B, L, C = x.shape
    out = np.empty((B, L // size, C))
    for i in range(B):
        for t in range(L // size):
            for c in range(C):
                out[i, t, c] = max(x[i, t * size + k, c] for k in range(size))
    return out


def avgpool1d_oracle(x, size):
    B, L, C = x.shape
    out = np.empty((B, L // size, C))
    for i in range(B):
        for t in range(L // size):
            for c in range(C):
                acc = 0.0
                for k in range(size):
                    acc += x[i, t * size + k, c]
                out[i, t, c] = acc / size
    return out


def maxpool2d_oracle(x, size):
    N, R, C = x.shape
    out = np.empty((N, R // size, C // size))
    for n in range(N):
        for r in range(R // size):
            for c in range(C // size):
                out[n, r, c] = max(
                    x[n, r * size + kr, c * size + kc]
                    for kr in range(size)
                    for kc in range(size)
                )
    return out


def masked_maxpool2d_oracle(scores, row_valid, col_valid, size):
    """Window max over valid (row, col) cells only.

    Returns (pooled, counted) where counted marks windows with at least one
    valid member; pooled is undefined (0) where counted is False.
    """
    R, C = scores.shape
    Ro, Co = R // size, C // size
    pooled = np.zeros((Ro, Co))
    counted = np.zeros((Ro, Co), dtype=bool)
    for a in range(Ro):
        for b in range(Co):
            members = [
                scores[a * size + kr, b * size + kc]
                for kr in range(size)
                for kc in range(size)
                if row_valid[a * size + kr] and col_valid[b * size + kc]
            ]
            if members:
                pooled[a, b] = max(members)
                counted[a, b] = True
    return pooled, counted


def masked_avgpool_oracle(h, valid, size):
    """Window mean over valid source positions only.

    h: (L, D), valid: (L,) bool. Returns (pooled (L//size, D), counted (L//size,)).
    """
    L, D = h.shape
    Lo = L // size
    pooled = np.zeros((Lo, D))
    counted = np.zeros(Lo, dtype=bool)
    for a in range(Lo):
        members = [h[a * size + k] for k in range(size) if valid[a * size + k]]
        if members:
            pooled[a] = np.mean(members, axis=0)
            counted[a] = True
    return pooled, counted


def softmax_oracle(v):
    e = np.exp(v - np.max(v))
    return e / e.sum()


def log_softmax_oracle(v):
    return np.log(softmax_oracle(v))


def span_search_oracle(start_logits, end_logits, ctx_lo, ctx_hi, max_answer_len, null_threshold):
    """Exhaustive O(l^2) span search with the null-answer convention.

    Valid spans have ctx_lo <= start <= end <= ctx_hi and
    end - start <= max_answer_len. Returns None when the position-0 null
    score beats the best span score plus null_threshold.
    """
    best = None
    best_score = -np.inf
    L = len(start_logits)
    for s in range(L):
        for e in range(L):
            if not (ctx_lo <= s <= e <= ctx_hi):
                continue
            if e - s > max_answer_len:
                continue
            sc = start_logits[s] + end_logits[e]
            if sc > best_score:
                best_score = sc
                best = (s, e)
    null_score = start_logits[0] + end_logits[0]
    if best is None or null_score > best_score + null_threshold:
        return None
    return best


def embedding_loss_oracle(teacher_emb, student_emb, proj, mask):
    """Scalar triple-loop MSE over valid positions, then batch mean."""
    B, l, e = teacher_emb.shape
    total = 0.0
    for i in range(B):
        errs = []
        for t in range(l):
            if not mask[i, t]:
                continue
            for c in range(e):
                p = 0.0
                for k in range(student_emb.shape[2]):
                    p += student_emb[i, t, k] * proj[k, c]
                errs.append((teacher_emb[i, t, c] - p) ** 2)
        total += sum(errs) / len(errs)
    return total / B


def hidden_loss_oracle(teacher_hidden, student_hidden, proj, mask, size=4):
    B, l, d = teacher_hidden.shape
    total = 0.0
    for i in range(B):
        pooled, counted = masked_avgpool_oracle(teacher_hidden[i], mask[i].astype(bool), size)
        errs = []
        for a in range(l // size):
            if not counted[a]:
                continue
            proj_row = student_hidden[i, a] @ proj
            for c in range(d):
                errs.append((pooled[a, c] - proj_row[c]) ** 2)
        total += sum(errs) / len(errs)
    return total / B


def attention_loss_oracle(teacher_scores, student_scores, teacher_mask, compressed_mask, size=4):
    B, H, l, _ = teacher_scores.shape
    lq = l // size
    total = 0.0
    for i in range(B):
        errs = []
        for h in range(H):
            pooled, counted = masked_maxpool2d_oracle(
                teacher_scores[i, h], teacher_mask[i].astype(bool), teacher_mask[i].astype(bool), size
            )
            for a in range(lq):
                for b in range(lq):
                    if counted[a, b] and compressed_mask[i, a] and compressed_mask[i, b]:
                        errs.append((pooled[a, b] - student_scores[i, h, a, b]) ** 2)
        total += sum(errs) / len(errs)
    return total / B


def softmax_distillation_oracle(t_start, t_end, s_start, s_end, temperature, mask):
    B, l = t_start.shape
    total = 0.0
    for i in range(B):
        valid = [t for t in range(l) if mask[i, t]]
        ce_sum = 0.0
        for tz, sz in ((t_start, s_start), (t_end, s_end)):
            p = softmax_oracle(np.array([tz[i, t] / temperature for t in valid]))
            logq = log_softmax_oracle(np.array([sz[i, t] / temperature for t in valid]))
            ce_sum += -(p * logq).sum()
        total += ce_sum / 2.0
    return temperature * temperature * total / B


def ground_truth_loss_oracle(s_start, s_end, start_t, end_t, has_label, mask):
    B, l = s_start.shape
    vals = []
    for i in range(B):
        if not has_label[i]:
            continue
        valid = [t for t in range(l) if mask[i, t]]
        ls = log_softmax_oracle(np.array([s_start[i, t] for t in valid]))
        le = log_softmax_oracle(np.array([s_end[i, t] for t in valid]))
        vals.append(-(ls[valid.index(start_t[i])] + le[valid.index(end_t[i])]) / 2.0)
    return float(np.mean(vals)) if vals else 0.0
