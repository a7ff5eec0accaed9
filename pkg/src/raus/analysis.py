"""Closed-form MSE expressions and Monte Carlo estimates to check them.

The Monte Carlo side freezes a gradient population and replays the upload
pipeline many times; the randomness is quantization, access, channel,
noise and (for the minibatch schemes) the minibatch draw.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .airlink import SlotSampler, noncoherent_energies
from .estimators import Scheme, combine_awgn, combine_counts, combine_noncoherent, yang_noise
from .quantizer import CpCodebook

__all__ = [
    "MseReport",
    "MseScenario",
    "theoretical_mse_raus_asymptotic",
    "theoretical_mse_raus_bound",
    "theoretical_mse_yang",
    "theoretical_mse_tdma",
    "second_moment_bound_noncoherent",
    "second_moment_bound_printed",
    "synthetic_gradients",
    "subvector_split",
    "empirical_mse",
    "derive_rng",
]

EPS = 1e-12
# uniforms per Monte Carlo chunk
_CHUNK = 1 << 20


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for ``(seed, *key)``; same inputs, same stream."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key)))


def theoretical_mse_raus_asymptotic(norms, L_sub: int, V_sub: float, K: int) -> float:
    """Asymptotic RAUS MSE for one subvector pool,
    ``(1/K^2) sum_k (L_sub V_sub - ||v_k||) ||v_k||``.

    Sum over the pools to get the full-vector figure.
    """
    norms = np.asarray(norms, dtype=np.float64)
    if np.any(norms > V_sub * (1 + 1e-12)):
        warnings.warn("some norms exceed the norm bound; the closed form assumes they do not", stacklevel=2)
    return math.fsum((L_sub * V_sub - norms) * norms) / K**2


def theoretical_mse_raus_bound(L_sub: int, V_sub: float, K: int) -> float:
    """Upper bound ``L_sub V_sub^2 / K`` on the asymptotic RAUS MSE."""
    if L_sub <= 0 or V_sub <= 0 or K <= 0:
        raise ValueError("inputs must be positive")
    return L_sub * V_sub**2 / K


def theoretical_mse_yang(norms, g_norm2: float, K_bar: int, P: float, N0: float, L=None, N=None) -> float:
    """Over-the-air baseline MSE ``(1/K_bar)(N0/(2P) + mean ||v_k||^2 - ||g||^2)``.

    Passing both ``L`` and ``N`` scales the noise term by ``L/N``: the
    model's noise ``n`` has ``L`` entries of variance ``N0/2`` and is divided
    by ``sqrt(P N K_bar)``, which gives ``L N0 / (2 P N K_bar)``.  The two
    forms coincide when ``L == N``.  The variance term treats the minibatch
    as drawn with replacement.
    """
    if K_bar < 1:
        raise ValueError("K_bar must be at least 1")
    norms = np.asarray(norms, dtype=np.float64)
    spread = float(np.mean(norms**2)) - g_norm2
    noise = N0 / (2.0 * P)
    if L is not None and N is not None:
        noise *= L / N
    return (noise + spread) / K_bar


def theoretical_mse_tdma(gradients, D: int, K_bar: int) -> float:
    """MSE of the conventional upload of a minibatch drawn without replacement.

    Quantization error ``||v_k||^2 (L/D - 1)`` averaged over the minibatch,
    plus the finite-population minibatch variance.
    """
    V = np.asarray(gradients, dtype=np.float64)
    K, L = V.shape
    sq = np.sum(V**2, axis=1)
    g = V.mean(axis=0)
    quant = float(np.mean(sq)) * (L // D - 1)
    spread = float(np.mean(sq)) - float(g @ g)
    fpc = (K - K_bar) / (K - 1) if K > 1 else 0.0
    return (quant + spread * fpc) / K_bar


def second_moment_bound_noncoherent(L, N, U, P, M, N0, V_max, K) -> float:
    """Bound on ``E||g_hat||^2`` for the noncoherent estimator with the cross polytope.

    ``L (1 + 2/N) (U + V_max M N0 / (P K))^2``, i.e. the bound on
    ``E||a||^2``, ``L (1+2/N) (P U / V_max + M N0 / K)^2``, rescaled by
    ``(V_max / P)^2``.  ``U`` bounds every gradient norm.
    """
    return L * (1.0 + 2.0 / N) * (U + V_max * M * N0 / (P * K)) ** 2


def second_moment_bound_printed(L, N, U, P, M, N0, V_max, K) -> float:
    """The same bound with the noise term written as ``P M N0 / (V_max K)``.

    Kept for comparison only; it agrees with
    :func:`second_moment_bound_noncoherent` when ``V_max = P``.
    """
    return L * (1.0 + 2.0 / N) * (U + P * M * N0 / (V_max * K)) ** 2


def synthetic_gradients(K: int, L: int, rng: np.random.Generator, mean_norm: float = 0.5, spread: float = 0.5) -> np.ndarray:
    """Frozen gradient population ``m + spread * xi_k / sqrt(L)``.

    ``m`` is a fixed random direction of length ``mean_norm``; ``xi_k`` are
    standard normal, so the population variance term is close to ``spread^2``.
    """
    direction = rng.standard_normal(L)
    direction *= mean_norm / np.linalg.norm(direction)
    return direction + spread * rng.standard_normal((K, L)) / math.sqrt(L)


def subvector_split(gradients, D: int):
    """Return ``(norms (K, D), units (K, D, L/D))`` for a ``(K, L)`` population."""
    V = np.asarray(gradients, dtype=np.float64)
    K, L = V.shape
    if D < 1 or L % D:
        raise ValueError(f"D={D} does not divide L={L}")
    parts = V.reshape(K, D, L // D)
    norms = np.linalg.norm(parts, axis=2)
    units = parts / np.where(norms > 0, norms, 1.0)[..., None]
    return norms, units


@dataclass
class MseScenario:
    """Frozen population plus link parameters for one Monte Carlo run.

    ``V_max`` defaults to ``sqrt(D)`` times the largest subvector norm, so
    that ``V_sub = V_max / sqrt(D)`` bounds every subvector.
    """

    gradients: np.ndarray
    D: int = 1
    V_max: float | None = None
    V_sub: float | None = None
    K_bar: int | None = None
    P: float = 1.0
    N: int = 100
    N0: float = 0.0
    sigma2: float = 0.0

    def __post_init__(self):
        self.gradients = np.asarray(self.gradients, dtype=np.float64)
        K, L = self.gradients.shape
        if self.D < 1 or L % self.D:
            raise ValueError(f"D={self.D} does not divide L={L}")
        norms, _ = subvector_split(self.gradients, self.D)
        if self.V_max is None:
            self.V_max = math.sqrt(self.D) * float(norms.max())
        if self.V_sub is None:
            self.V_sub = self.V_max / math.sqrt(self.D)
        if self.K_bar is None:
            self.K_bar = K
        if not 1 <= self.K_bar <= K:
            raise ValueError(f"K_bar={self.K_bar} must be in [1, K={K}]")

    @property
    def K(self) -> int:
        return self.gradients.shape[0]

    @property
    def L(self) -> int:
        return self.gradients.shape[1]

    @property
    def L_sub(self) -> int:
        return self.L // self.D

    @property
    def g(self) -> np.ndarray:
        return self.gradients.mean(axis=0)

    def echo(self) -> dict:
        return {
            "K": self.K, "L": self.L, "D": self.D, "L_bar": self.L_sub, "K_bar": self.K_bar,
            "V_max": self.V_max, "V_sub": self.V_sub, "P": self.P, "N": self.N,
            "N0": self.N0, "sigma2": self.sigma2,
        }


@dataclass
class MseReport:
    scheme: Scheme
    theoretical: float
    empirical: float
    stderr: float
    trials: int
    second_moment: float
    n_clamped: int = 0
    params: dict = field(default_factory=dict)

    @property
    def relative_gap(self) -> float:
        return abs(self.empirical - self.theoretical) / max(self.theoretical, EPS)

    def row(self) -> dict:
        out = asdict(self)
        out["scheme"] = Scheme(self.scheme).value
        out["relative_gap"] = self.relative_gap
        params = out.pop("params")
        out.update(params)
        return out


def _theoretical(scheme: Scheme, sc: MseScenario) -> float:
    if scheme.is_raus:
        norms, _ = subvector_split(sc.gradients, sc.D)
        return math.fsum(
            theoretical_mse_raus_asymptotic(norms[:, d], sc.L_sub, sc.V_sub, sc.K) for d in range(sc.D)
        )
    if scheme is Scheme.YANG:
        g = sc.g
        return theoretical_mse_yang(
            np.linalg.norm(sc.gradients, axis=1), float(g @ g), sc.K_bar, sc.P, sc.N0, L=sc.L, N=sc.N
        )
    return theoretical_mse_tdma(sc.gradients, sc.D, sc.K_bar)


def _minibatches(K, K_bar, trials, rng):
    keys = rng.random((trials, K))
    if K_bar == K:
        return np.broadcast_to(np.arange(K), (trials, K))
    return np.argpartition(keys, K_bar - 1, axis=1)[:, :K_bar]


def _raus_chunk(scheme, sc, sampler, n, rng):
    counts = sampler.counts(n, rng)
    cb = sampler.codebook
    if scheme is Scheme.RAUS_ASYMPTOTIC:
        g = combine_counts(counts, cb, sc.K, sc.V_sub)
    elif scheme is Scheme.RAUS_AWGN:
        z = math.sqrt(sc.P) * counts
        if sc.sigma2 > 0:
            z = z + math.sqrt(sc.sigma2) * rng.standard_normal(z.shape)
        g = combine_awgn(z, cb, sc.K, sc.P, sc.V_sub)
    else:
        e = noncoherent_energies(counts, sc.P, sc.N0, sc.N, rng)
        g = combine_noncoherent(e, cb, sc.K, sc.P, sc.V_sub)
    return g.reshape(n, sc.L)


def _yang_chunk(sc, n, rng):
    idx = _minibatches(sc.K, sc.K_bar, n, rng)
    g = sc.gradients[idx].mean(axis=1)
    if sc.N0 > 0:
        g = g + yang_noise(g.shape, sc.P, sc.N, sc.N0, sc.K_bar, rng)
    return g


def _tdma_chunk(sc, sampler, n, rng):
    idx = _minibatches(sc.K, sc.K_bar, n, rng)
    picks = sampler.outcomes(n, rng)  # (n, K, D), never silent
    norms, _ = subvector_split(sc.gradients, sc.D)
    cw = CpCodebook(sc.L_sub).codewords
    rows = np.arange(n)[:, None]
    chosen = picks[rows, idx]  # (n, K_bar, D)
    recon = norms[idx][..., None] * cw[chosen]
    return recon.mean(axis=1).reshape(n, sc.L)


def empirical_mse(scheme, scenario: MseScenario, trials: int, seed: int, key=()) -> MseReport:
    """Replay the upload pipeline ``trials`` times and compare with the closed form.

    Trials run in fixed-size chunks, each with its own stream derived from
    ``(seed, *key, chunk)``, so the result depends only on the arguments.
    """
    scheme = Scheme(scheme)
    if trials < 1:
        raise ValueError("trials must be at least 1")
    sc = scenario
    g = sc.g
    sampler = None
    if scheme.is_raus or scheme is Scheme.TDMA_ORACLE:
        norms, units = subvector_split(sc.gradients, sc.D)
        sampler = SlotSampler(norms, units, sc.V_sub, always_transmit=scheme is Scheme.TDMA_ORACLE)
    width = sc.K * sc.D if scheme.is_raus else max(sc.K * sc.D, sc.K_bar * sc.L)
    per_chunk = max(1, _CHUNK // width)
    errs, sq = [], []
    for chunk, start in enumerate(range(0, trials, per_chunk)):
        n = min(per_chunk, trials - start)
        rng = derive_rng(seed, *key, chunk)
        if scheme.is_raus:
            est = _raus_chunk(scheme, sc, sampler, n, rng)
        elif scheme is Scheme.YANG:
            est = _yang_chunk(sc, n, rng)
        else:
            est = _tdma_chunk(sc, sampler, n, rng)
        errs.append(np.sum((est - g) ** 2, axis=1))
        sq.append(np.sum(est**2, axis=1))
    errs = np.concatenate(errs)
    sq = np.concatenate(sq)
    mean = math.fsum(errs) / trials
    var = math.fsum((errs - mean) ** 2) / max(trials - 1, 1)
    return MseReport(
        scheme=scheme,
        theoretical=_theoretical(scheme, sc),
        empirical=mean,
        stderr=math.sqrt(var / trials),
        trials=trials,
        second_moment=math.fsum(sq) / trials,
        n_clamped=0 if sampler is None else sampler.n_clamped,
        params=sc.echo(),
    )
