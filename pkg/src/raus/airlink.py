"""One upload slot on the air: access decisions, preamble superposition and
the correlator bank at the base station.

Preambles are standard-basis sequences of length ``M``, so correlating the
received frame with preamble ``m`` is simply reading entry ``m``.  Every
function takes an explicit ``numpy.random.Generator``.

Two levels of API live here.  The per-round functions (``awgn_round``,
``noncoherent_round``...) follow the signal model literally and are what
the trainer and the tests use.  ``SlotSampler`` draws many slots at once for
Monte Carlo work; it fuses the access and codeword draws into one
categorical draw per device and subvector (outcome ``m`` with probability
``p a_m``, silence with ``1 - p``), which has the same joint law.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .quantizer import CpCodebook, convex_weights_cp

__all__ = [
    "AccessClampWarning",
    "PreamblePool",
    "TransmissionRound",
    "ChannelRealization",
    "access_probabilities",
    "transmit_decision",
    "draw_round",
    "preamble_counts",
    "awgn_round",
    "coherent_gain",
    "coherent_round",
    "sample_channel",
    "sample_channels",
    "noncoherent_round",
    "noncoherent_energies",
    "SlotSampler",
]


class AccessClampWarning(UserWarning):
    """A gradient norm exceeded ``V_max``; its access probability was clamped to 1."""


@dataclass(frozen=True)
class PreamblePool:
    size: int

    @property
    def length(self) -> int:
        return self.size

    @property
    def sequences(self) -> np.ndarray:
        return np.eye(self.size)

    def frame(self, correlator_outputs) -> np.ndarray:
        """Received frame ``sum_m z_m p_m`` rebuilt from correlator outputs."""
        z = np.asarray(correlator_outputs)
        return np.tensordot(self.sequences, z, axes=([0], [0]))

    def correlate(self, frame) -> np.ndarray:
        return np.tensordot(self.sequences, np.asarray(frame), axes=([1], [0]))


@dataclass(frozen=True)
class TransmissionRound:
    """Who transmits which preamble in one slot.

    ``beta`` and ``preamble_index`` have shape ``(K,)`` or ``(K, D)`` (one
    column per subvector mini-slot).  ``preamble_index`` is meaningful only
    where ``beta`` is 1.
    """

    beta: np.ndarray
    preamble_index: np.ndarray
    M: int

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.int8)
        idx = np.asarray(self.preamble_index, dtype=np.int64)
        if beta.shape != idx.shape:
            raise ValueError("beta and preamble_index must have the same shape")
        if not np.isin(beta, (0, 1)).all():
            raise ValueError("beta must be 0 or 1")
        active = idx[beta == 1]
        if active.size and (active.min() < 0 or active.max() >= self.M):
            raise ValueError(f"active preamble indices must be in [0, {self.M})")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "preamble_index", idx)

    @property
    def K(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class ChannelRealization:
    """Per-device fading vectors with power control ``P_k alpha_k = P``."""

    h: np.ndarray
    alpha: np.ndarray
    P: float

    @property
    def P_k(self) -> np.ndarray:
        return self.P / np.asarray(self.alpha, dtype=np.float64)

    @property
    def N(self) -> int:
        return self.h.shape[1]


def access_probabilities(norms, V_max: float):
    """Access probabilities ``||v|| / V_max`` clamped to [0, 1].

    Returns ``(p, n_clamped)`` where ``n_clamped`` counts norms above ``V_max``.
    """
    if V_max <= 0:
        raise ValueError("V_max must be positive")
    norms = np.asarray(norms, dtype=np.float64)
    p = norms / V_max
    n_clamped = int(np.count_nonzero(p > 1.0))
    return np.clip(p, 0.0, 1.0), n_clamped


def transmit_decision(norm: float, V_max: float, rng: np.random.Generator) -> int:
    """Bernoulli transmit flag with probability ``norm / V_max``."""
    p, clamped = access_probabilities(norm, V_max)
    if clamped:
        warnings.warn(f"norm {norm:.6g} exceeds V_max {V_max:.6g}", AccessClampWarning, stacklevel=2)
    return int(rng.random() < float(p))


def draw_round(units, p, codebook: CpCodebook, rng: np.random.Generator) -> TransmissionRound:
    """Independent access flags and codeword choices for a stack of units.

    ``units`` has shape ``(K, dim)`` or ``(K, D, dim)``; ``p`` matches the
    leading axes.
    """
    units = np.asarray(units, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    beta = (rng.random(p.shape) < p).astype(np.int8)
    cum = np.cumsum(convex_weights_cp(units, codebook), axis=-1)
    cum[..., -1] = 1.0
    idx = (rng.random(p.shape)[..., None] >= cum).sum(axis=-1)
    return TransmissionRound(beta, idx, codebook.size)


def preamble_counts(rnd: TransmissionRound) -> np.ndarray:
    """Active devices per preamble: shape ``(M,)`` or ``(D, M)``."""
    beta = rnd.beta.reshape(rnd.K, -1)
    idx = rnd.preamble_index.reshape(rnd.K, -1)
    D = beta.shape[1]
    counts = np.zeros((D, rnd.M), dtype=np.int64)
    d = np.broadcast_to(np.arange(D), beta.shape)
    on = beta == 1
    np.add.at(counts, (d[on], idx[on]), 1)
    return counts[0] if rnd.beta.ndim == 1 else counts


def awgn_round(rnd: TransmissionRound, P: float, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Correlator outputs ``z_m = sqrt(P) |active on m| + n_m`` with ``n_m ~ N(0, sigma2)``."""
    if P <= 0 or sigma2 < 0:
        raise ValueError("need P > 0 and sigma2 >= 0")
    counts = preamble_counts(rnd)
    z = math.sqrt(P) * counts
    if sigma2 > 0:
        z = z + math.sqrt(sigma2) * rng.standard_normal(counts.shape)
    return z


def coherent_gain(h: complex, P: float, P_max: float):
    """Channel-inverting transmit gain ``sqrt(P) conj(h) / |h|^2``.

    Returns ``(phi, permitted)``; ``permitted`` is false when ``|phi|^2``
    would exceed ``P_max`` (always for ``h = 0``).
    """
    h = complex(h)
    mag2 = abs(h) ** 2
    if mag2 == 0.0:
        return complex("inf"), False
    phi = math.sqrt(P) * h.conjugate() / mag2
    return phi, abs(phi) ** 2 <= P_max


def coherent_round(rnd: TransmissionRound, h, P: float, P_max: float, sigma2: float, rng):
    """Coherent slot with per-device channel inversion and power gating.

    Devices whose required power exceeds ``P_max`` stay silent.  Returns
    ``(z, gated_round)``.
    """
    h = np.asarray(h, dtype=np.complex128)
    mag2 = np.abs(h) ** 2
    with np.errstate(divide="ignore"):
        power = np.where(mag2 > 0, P / np.where(mag2 > 0, mag2, 1.0), np.inf)
    permitted = power <= P_max
    mask = permitted.reshape((rnd.K,) + (1,) * (rnd.beta.ndim - 1))
    gated = TransmissionRound(rnd.beta * mask, rnd.preamble_index, rnd.M)
    return awgn_round(gated, P, sigma2, rng), gated


def _cn(rng, shape, var):
    return rng.standard_normal(shape + (2,)).view(np.complex128).reshape(shape) * math.sqrt(var / 2.0)


def sample_channel(alpha: float, N: int, rng: np.random.Generator) -> np.ndarray:
    """``N`` i.i.d. circularly symmetric complex Gaussian entries of variance ``alpha``."""
    if alpha <= 0 or N < 1:
        raise ValueError("need alpha > 0 and N >= 1")
    return _cn(rng, (N,), alpha)


def sample_channels(alpha, N: int, P: float, rng: np.random.Generator) -> ChannelRealization:
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    h = _cn(rng, (alpha.size, N), 1.0) * np.sqrt(alpha)[:, None]
    return ChannelRealization(h, alpha, P)


def noncoherent_round(rnd: TransmissionRound, channels: ChannelRealization, N0: float, rng) -> np.ndarray:
    """Complex correlator outputs ``z_m = sum_{k on m} sqrt(P_k) h_k + n_m``.

    Shape ``(M, N)``, or ``(D, M, N)`` under subvector transmission.  The
    same channel vector serves all mini-slots of a round.
    """
    N = channels.N
    beta = rnd.beta.reshape(rnd.K, -1)
    idx = rnd.preamble_index.reshape(rnd.K, -1)
    D = beta.shape[1]
    z = np.zeros((D, rnd.M, N), dtype=np.complex128)
    tx = np.sqrt(channels.P_k)[:, None] * channels.h
    for d in range(D):
        on = beta[:, d] == 1
        np.add.at(z[d], idx[on, d], tx[on])
    if N0 > 0:
        z += _cn(rng, z.shape, N0)
    return z[0] if rnd.beta.ndim == 1 else z


def noncoherent_energies(counts, P: float, N0: float, N: int, rng) -> np.ndarray:
    """Sample ``||z_m||^2 / N`` directly from the preamble counts.

    Given ``a`` active devices on a preamble, ``z_m ~ CN(0, (P a + N0) I_N)``
    so ``||z_m||^2 / N = (P a + N0) Gamma(N, 1) / N`` exactly.  This avoids
    materialising the ``N``-antenna vectors in Monte Carlo loops.
    """
    counts = np.asarray(counts)
    var = P * counts + N0
    return var * rng.standard_gamma(N, size=counts.shape) / N


class SlotSampler:
    """Batched slot generator for a frozen population of subvectors.

    Parameters
    ----------
    sub_norms : array, shape (K, D)
        Norms of each device's subvectors.
    sub_units : array, shape (K, D, dim)
        Matching unit directions (zero where the norm is zero).
    V_sub : float
        Per-subvector norm bound used for the access probabilities.
    always_transmit : bool
        Skip the access step (conventional quantized upload).
    """

    def __init__(self, sub_norms, sub_units, V_sub: float, always_transmit: bool = False):
        sub_norms = np.asarray(sub_norms, dtype=np.float64)
        sub_units = np.asarray(sub_units, dtype=np.float64)
        self.K, self.D = sub_norms.shape
        self.codebook = CpCodebook(sub_units.shape[-1])
        if always_transmit:
            p, self.n_clamped = np.ones_like(sub_norms), 0
        else:
            p, self.n_clamped = access_probabilities(sub_norms, V_sub)
        w = convex_weights_cp(sub_units, self.codebook)
        cum = np.cumsum(w, axis=-1) * p[..., None]
        cum[..., -1] = p
        self.cum = np.ascontiguousarray(cum.reshape(self.K * self.D, -1))
        self.group = np.ascontiguousarray(np.tile(np.arange(self.D, dtype=np.int64), self.K))

    def counts(self, trials: int, rng: np.random.Generator) -> np.ndarray:
        """Active-device counts per (trial, subvector, preamble)."""
        u = rng.random((trials, self.K * self.D))
        return kernels.count_hits(self.cum, u, self.group, self.D)

    def outcomes(self, trials: int, rng: np.random.Generator) -> np.ndarray:
        """Chosen preamble per (trial, device, subvector); ``M`` means silent."""
        u = rng.random((trials, self.K * self.D))
        return kernels.draw_outcomes(self.cum, u).reshape(trials, self.K, self.D)
