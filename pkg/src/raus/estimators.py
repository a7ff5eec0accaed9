"""Aggregation estimates built from correlator outputs, the two baselines,
and the per-round timing model.

All RAUS estimators accept correlator outputs for one preamble pool
(shape ``(..., M)`` or ``(..., M, N)``) with arbitrary leading axes; a
``(D, M)`` stack yields the full ``D * dim`` vector after flattening.
The ``combine_*`` helpers return the raw ``(..., dim)`` arrays so that
Monte Carlo code can stay vectorised; the ``raus_estimate_*`` functions
wrap a single round in an :class:`AggregateEstimate`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .airlink import TransmissionRound
from .quantizer import CpCodebook, QuantizedGradient, bits_required, dequantize

__all__ = [
    "Scheme",
    "AggregateEstimate",
    "TimingParams",
    "combine_awgn",
    "combine_noncoherent",
    "combine_counts",
    "raus_estimate_awgn",
    "raus_estimate_noncoherent",
    "raus_estimate_asymptotic",
    "yang_estimate",
    "yang_noise",
    "tdma_aggregate",
    "round_time",
]


class Scheme(str, enum.Enum):
    RAUS_AWGN = "RAUS_AWGN"
    RAUS_NONCOHERENT = "RAUS_NONCOHERENT"
    RAUS_ASYMPTOTIC = "RAUS_ASYMPTOTIC"
    YANG = "YANG"
    TDMA_ORACLE = "TDMA_ORACLE"

    @property
    def is_raus(self) -> bool:
        return self.name.startswith("RAUS")


@dataclass(frozen=True)
class AggregateEstimate:
    g_hat: np.ndarray
    scheme: Scheme
    round_time: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        g = np.array(self.g_hat, dtype=np.float64).reshape(-1)
        g.setflags(write=False)
        object.__setattr__(self, "g_hat", g)


@dataclass(frozen=True)
class TimingParams:
    """Symbol counts for the timing model.

    ``tau_pilot=None`` means 10% of one analog gradient upload (``0.1 L``).
    """

    tau_pilot: float | None = None
    c: float = 1.0

    def __post_init__(self):
        if (self.tau_pilot is not None and self.tau_pilot < 0) or self.c < 0:
            raise ValueError("timing parameters must be nonnegative")


def _check_zero_sum(codebook):
    if not np.allclose(codebook.codewords.sum(axis=0), 0.0, atol=1e-12):
        raise ValueError("noncoherent estimator needs codewords summing to zero")


def combine_awgn(z, codebook: CpCodebook, K: int, P: float, V_max: float) -> np.ndarray:
    """``(V_max / (sqrt(P) K)) sum_m z_m c_m`` over the last axis of ``z``."""
    return codebook.combine(z) * (V_max / (math.sqrt(P) * K))


def combine_noncoherent(energy, codebook: CpCodebook, K: int, P: float, V_max: float) -> np.ndarray:
    """``(V_max / (P K)) sum_m e_m c_m`` where ``e_m = ||z_m||^2 / N``.

    The noise floor ``N0`` adds the same amount to every ``e_m`` and
    vanishes because the codewords sum to zero.
    """
    _check_zero_sum(codebook)
    return codebook.combine(energy) * (V_max / (P * K))


def combine_counts(counts, codebook: CpCodebook, K: int, V_max: float) -> np.ndarray:
    """Noise-free limit: ``(V_max / K) sum_k beta_k c_{m(k)}`` from preamble counts."""
    return codebook.combine(counts) * (V_max / K)


def _rt(round_symbols):
    return 0 if round_symbols is None else int(round_symbols)


def raus_estimate_awgn(z, codebook, K, P, V_max, round_symbols=None) -> AggregateEstimate:
    if K < 1 or P <= 0 or V_max <= 0:
        raise ValueError("need K >= 1, P > 0, V_max > 0")
    g = combine_awgn(z, codebook, K, P, V_max)
    return AggregateEstimate(g, Scheme.RAUS_AWGN, _rt(round_symbols))


def raus_estimate_noncoherent(z, codebook, K, P, V_max, N=None, round_symbols=None) -> AggregateEstimate:
    """Estimate from complex correlator outputs of shape ``(..., M, N)``."""
    z = np.asarray(z)
    if N is None:
        N = z.shape[-1]
    energy = np.sum(np.abs(z) ** 2, axis=-1) / N
    g = combine_noncoherent(energy, codebook, K, P, V_max)
    return AggregateEstimate(g, Scheme.RAUS_NONCOHERENT, _rt(round_symbols))


def raus_estimate_asymptotic(rnd: TransmissionRound, codebook, K, V_max, round_symbols=None) -> AggregateEstimate:
    from .airlink import preamble_counts

    g = combine_counts(preamble_counts(rnd), codebook, K, V_max)
    return AggregateEstimate(g, Scheme.RAUS_ASYMPTOTIC, _rt(round_symbols))


def yang_noise(shape, P, N, N0, K_bar, rng) -> np.ndarray:
    """Effective estimator noise ``n / sqrt(P N K_bar)`` with ``n_l ~ N(0, N0/2)``."""
    return rng.standard_normal(shape) * math.sqrt(N0 / 2.0 / (P * N * K_bar))


def yang_estimate(gradients, P, N, N0, rng, round_symbols=None) -> AggregateEstimate:
    """Asymptotic over-the-air aggregate of the minibatch ``gradients`` (``(K_bar, L)``).

    With ``K_bar << N`` the combined channel gains concentrate on
    ``sqrt(P N / K_bar)``, so the receiver sees
    ``a = sqrt(P N K_bar) mean(v_k) + n`` and scales it back.
    """
    V = np.atleast_2d(np.asarray(gradients, dtype=np.float64))
    K_bar = V.shape[0]
    if K_bar < 1:
        raise ValueError("minibatch must be nonempty")
    g = V.mean(axis=0)
    if N0 > 0:
        g = g + yang_noise(g.shape, P, N, N0, K_bar, rng)
    return AggregateEstimate(g, Scheme.YANG, _rt(round_symbols))


def tdma_aggregate(quantized: list[QuantizedGradient], sub_length: int, round_symbols=None) -> AggregateEstimate:
    """Error-free sequential uploads: ``(1/K) sum_k dequantize(q_k)``."""
    if not quantized:
        raise ValueError("need at least one upload")
    total = sum(dequantize(q, sub_length) for q in quantized)
    g = total / len(quantized)
    meta = {"norm_time_excluded": True}
    return AggregateEstimate(g, Scheme.TDMA_ORACLE, _rt(round_symbols), meta)


def round_time(scheme, K_bar: int, L: int, D: int = 1, timing: TimingParams | None = None) -> int:
    """Symbols needed for one iteration.

    * TDMA: ``K_bar`` sequential uploads of ``D`` indices of
      ``ceil(log2(2L/D))`` bits each (norm uploads not counted).
    * RAUS: ``D`` mini-slots of ``2L/D`` preamble symbols, ``2L`` in total.
    * YANG: ``K_bar`` pilots plus ``c L`` analog symbols, rounded up.
    """
    scheme = Scheme(scheme)
    timing = timing or TimingParams()
    if D < 1 or L % D:
        raise ValueError(f"D={D} does not divide L={L}")
    if scheme is Scheme.TDMA_ORACLE:
        per_index = math.ceil(bits_required(L, D) / D - 1e-9)
        return K_bar * D * per_index
    if scheme.is_raus:
        return 2 * L
    tau = 0.1 * L if timing.tau_pilot is None else timing.tau_pilot
    return math.ceil(K_bar * tau + timing.c * L - 1e-9)
