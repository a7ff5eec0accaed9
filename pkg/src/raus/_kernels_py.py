"""Pure numpy versions of the routines in ``_kernels.pyx``.

Same signatures and bit-identical results; used when the extension is not
built or ``RAUS_PURE_PYTHON`` is set.
"""
import numpy as np

# keeps the (chunk, R, M) comparison tensor around 16 MB
_CHUNK_ELEMENTS = 1 << 21


def _check(cum, u):
    cum = np.ascontiguousarray(cum, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    if cum.ndim != 2 or u.ndim != 2 or u.shape[1] != cum.shape[0]:
        raise ValueError("u must have one column per table row")
    return cum, u


def draw_outcomes(cum, u):
    """Outcome index per (trial, row); ``M`` marks a silent row."""
    cum, u = _check(cum, u)
    T, R = u.shape
    M = cum.shape[1]
    out = np.empty((T, R), dtype=np.int64)
    step = max(1, _CHUNK_ELEMENTS // max(1, R * M))
    for start in range(0, T, step):
        block = u[start:start + step, :, None] >= cum[None, :, :]
        out[start:start + step] = block.sum(axis=2)
    return out


def count_hits(cum, u, group, n_groups):
    """Per-trial outcome counts, shape ``(T, n_groups, M)``."""
    cum, u = _check(cum, u)
    group = np.asarray(group, dtype=np.int64)
    if group.shape != (cum.shape[0],):
        raise ValueError("u and group must have one entry per table row")
    if group.size and (group.min() < 0 or group.max() >= n_groups):
        raise ValueError("group index out of range")
    T = u.shape[0]
    M = cum.shape[1]
    idx = draw_outcomes(cum, u)
    # silent draws land in an extra column that is dropped afterwards
    flat = (np.arange(T)[:, None] * n_groups + group[None, :]) * (M + 1) + idx
    counts = np.bincount(flat.ravel(), minlength=T * n_groups * (M + 1))
    return counts.reshape(T, n_groups, M + 1)[:, :, :M].copy()
