"""Randomized vector quantization onto the scaled cross-polytope codebook.

A unit-ball vector ``u`` of length ``L`` is written as a convex combination
of the ``2L`` codewords ``+-sqrt(L) e_l``; drawing a codeword with the
combination weights as probabilities gives an unbiased quantizer whose
squared error is ``L - ||u||^2`` on average.  Long gradients are split into
``D`` equal subvectors that are quantized independently.

Codeword indices are 0-based: index ``l < L`` is ``+R e_l`` and index
``L + l`` is ``-R e_l``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "GradientVector",
    "CpCodebook",
    "QuantizedGradient",
    "normalize",
    "convex_weights_cp",
    "check_weights",
    "quantize",
    "split_subvectors",
    "quantize_gradient",
    "dequantize",
    "quantizer_mse_cp",
    "mpt_mse",
    "bits_required",
    "codebook_size_bounds",
]

UNIT_TOL = 1e-9
SUM_TOL = 1e-10


@dataclass(frozen=True)
class GradientVector:
    """Real vector with its 2-norm computed once."""

    values: np.ndarray
    norm: float = field(init=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.size < 1:
            raise ValueError("gradient vector must have at least one entry")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "norm", float(np.linalg.norm(values)))

    def __len__(self):
        return self.values.size


def _values(v):
    if isinstance(v, GradientVector):
        return v.values
    return np.asarray(v, dtype=np.float64).reshape(-1)


@dataclass(frozen=True)
class CpCodebook:
    """Cross-polytope codebook ``{+-sqrt(dim) e_l}`` with ``2 dim`` codewords."""

    dim: int

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"codebook dimension must be a positive integer, got {self.dim}")

    @property
    def radius(self) -> float:
        return math.sqrt(self.dim)

    @property
    def size(self) -> int:
        return 2 * self.dim

    @cached_property
    def codewords(self) -> np.ndarray:
        """``(2 dim, dim)`` array, row ``m`` is codeword ``m``."""
        eye = np.eye(self.dim) * self.radius
        cw = np.vstack([eye, -eye])
        cw.setflags(write=False)
        return cw

    def codeword(self, m: int) -> np.ndarray:
        return self.codewords[m]

    def combine(self, coeffs):
        """``sum_m coeffs[..., m] c_m`` over the last axis.

        Written out for the cross polytope, ``R (coeffs[+l] - coeffs[-l])``.
        """
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape[-1] != self.size:
            raise ValueError(f"expected {self.size} coefficients, got {coeffs.shape[-1]}")
        return self.radius * (coeffs[..., : self.dim] - coeffs[..., self.dim :])


@dataclass(frozen=True)
class QuantizedGradient:
    """One codeword index and one norm per subvector."""

    codeword_indices: np.ndarray
    subvector_norms: np.ndarray

    @property
    def D(self) -> int:
        return len(self.codeword_indices)


def normalize(v):
    """Split ``v`` into its norm and direction.

    Returns ``(norm, unit, silent)``; a zero vector gives a zero direction
    and ``silent=True`` (such a device never transmits).
    """
    x = _values(v)
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        return 0.0, np.zeros_like(x), True
    return norm, x / norm, False


def convex_weights_cp(unit, codebook: CpCodebook) -> np.ndarray:
    """Convex weights expressing ``unit`` over the cross-polytope codewords.

    Works on a single vector or a stack ``(..., dim)``.  With
    ``s = ||u||_1 / sqrt(dim)`` the weights are

        a[+l] = max(u_l, 0)/sqrt(dim) + (1 - s)/(2 dim)
        a[-l] = max(-u_l, 0)/sqrt(dim) + (1 - s)/(2 dim)

    which are nonnegative because ``||u||_1 <= sqrt(dim) ||u||_2 <= sqrt(dim)``.

    Raises
    ------
    ValueError
        If any input has 2-norm above ``1 + 1e-9`` or the wrong length.
    """
    u = np.asarray(unit, dtype=np.float64)
    if u.shape[-1] != codebook.dim:
        raise ValueError(f"expected vectors of length {codebook.dim}, got {u.shape[-1]}")
    norms = np.linalg.norm(u, axis=-1)
    if np.any(norms > 1.0 + UNIT_TOL):
        raise ValueError(
            f"input must lie in the unit ball (max norm {float(np.max(norms)):.12g}); normalize first"
        )
    R = codebook.radius
    slack = (1.0 - np.abs(u).sum(axis=-1, keepdims=True) / R) / codebook.size
    # clip the rounding-level negatives that appear exactly on the boundary
    slack = np.maximum(slack, 0.0)
    pos = np.maximum(u, 0.0) / R + slack
    neg = np.maximum(-u, 0.0) / R + slack
    return np.concatenate([pos, neg], axis=-1)


def check_weights(weights, codebook: CpCodebook, unit) -> None:
    """Raise ``ValueError`` unless ``weights`` are a valid convex combination for ``unit``."""
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("negative convex weight")
    if np.any(np.abs(w.sum(axis=-1) - 1.0) > SUM_TOL):
        raise ValueError("convex weights do not sum to one")
    recon = w @ codebook.codewords
    if np.any(np.abs(recon - np.asarray(unit)) > UNIT_TOL):
        raise ValueError("convex weights do not reconstruct the target vector")


def quantize(unit, codebook: CpCodebook, rng: np.random.Generator, size=None):
    """Draw codeword index(es) with the convex weights of ``unit`` as probabilities."""
    w = convex_weights_cp(unit, codebook)
    if w.ndim != 1:
        raise ValueError("quantize takes a single vector; use quantize_gradient for many")
    w = w / w.sum()
    return rng.choice(codebook.size, size=size, p=w)


def split_subvectors(v, D: int) -> list[GradientVector]:
    """Split ``v`` into ``D`` consecutive subvectors of equal length."""
    x = _values(v)
    if D < 1 or x.size % D:
        raise ValueError(f"D={D} does not divide L={x.size}")
    return [GradientVector(part) for part in x.reshape(D, -1)]


def quantize_gradient(v, D: int, rng: np.random.Generator) -> QuantizedGradient:
    """Quantize each of the ``D`` subvectors of ``v``; zero subvectors get index -1."""
    x = _values(v)
    if D < 1 or x.size % D:
        raise ValueError(f"D={D} does not divide L={x.size}")
    parts = x.reshape(D, -1)
    norms = np.linalg.norm(parts, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    units = parts / safe[:, None]
    cb = CpCodebook(parts.shape[1])
    cum = np.cumsum(convex_weights_cp(units, cb), axis=1)
    cum[:, -1] = 1.0
    idx = (rng.random(D)[:, None] >= cum).sum(axis=1)
    idx = np.where(norms > 0, idx, -1)
    return QuantizedGradient(idx, norms)


def dequantize(q: QuantizedGradient, sub_length: int) -> np.ndarray:
    """Reconstruct ``concat_d ||v_d|| c_{m_d}``; silent subvectors map to zero."""
    cb = CpCodebook(sub_length)
    out = np.zeros((q.D, sub_length))
    live = q.codeword_indices >= 0
    out[live] = q.subvector_norms[live, None] * cb.codewords[q.codeword_indices[live]]
    return out.reshape(-1)


def quantizer_mse_cp(dim: int) -> float:
    """Squared error of quantizing a unit vector with the cross polytope: ``dim - 1``."""
    if dim < 1:
        raise ValueError("dimension must be positive")
    return float(dim - 1)


def mpt_mse(norm: float, L: int, D: int) -> float:
    """Squared error of subvector quantization, ``norm^2 (L/D - 1)``."""
    if D < 1 or L % D:
        raise ValueError(f"D={D} does not divide L={L}")
    if norm < 0:
        raise ValueError("norm must be nonnegative")
    return norm**2 * (L // D - 1)


def bits_required(L: int, D: int) -> float:
    """Bits to send ``D`` codeword indices of a ``2L/D``-word codebook."""
    if D < 1 or L % D:
        raise ValueError(f"D={D} does not divide L={L}")
    return D * math.log2(2 * L / D)


def codebook_size_bounds(L: int, R: float) -> tuple[float, float]:
    """Large-``L`` bounds on the size of a uniformly spread codebook whose
    convex hull covers the unit ball and stays inside radius ``R``."""
    if L < 2 or R < 1:
        raise ValueError("need L >= 2 and R >= 1")
    growth = math.exp(L / (2.0 * R * R))
    return 2.0 * growth, math.sqrt(2.0 * math.pi * L) * growth
