"""Distributed SGD driven by the upload schemes.

Each round the server broadcasts ``theta``, every device evaluates its
local gradient, the gradients travel through the configured scheme and the
server applies ``theta <- theta - mu * g_hat``.  RAUS schemes always
aggregate all ``K`` devices; YANG and TDMA use a random minibatch.

For the SVC task the parameter vector is ``(w, w0)`` with the offset last;
the offset's gradient component is sent as its own one-dimensional
subvector (a two-word codebook ``{+1, -1}``) after the ``D`` feature
subvectors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .airlink import SlotSampler, noncoherent_energies
from .analysis import derive_rng, subvector_split
from .estimators import (
    AggregateEstimate,
    Scheme,
    TimingParams,
    combine_awgn,
    combine_counts,
    combine_noncoherent,
    round_time,
    yang_estimate,
)
from .quantizer import GradientVector, dequantize, quantize_gradient

__all__ = [
    "DevicePopulation",
    "TrainConfig",
    "TrainTrace",
    "svc_population",
    "quadratic_population",
    "local_gradient_hinge",
    "local_gradient_quadratic",
    "local_gradients",
    "cost",
    "select_minibatch",
    "default_v_max",
    "sgd_round",
    "noise_ball_bound",
    "train",
]


@dataclass(frozen=True)
class DevicePopulation:
    """One sample per device; ``labels`` is ``None`` for the quadratic task."""

    X: np.ndarray
    labels: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def task(self) -> str:
        return "quadratic" if self.labels is None else "svc"

    @property
    def dim(self) -> int:
        """Length of the parameter vector."""
        return self.n_features + (self.labels is not None)

    @property
    def optimum(self) -> np.ndarray | None:
        """Known minimizer (quadratic task only)."""
        return self.X.mean(axis=0) if self.labels is None else None


def svc_population(K: int, n_features: int, rng, separation: float = 2.0) -> DevicePopulation:
    """Two unit-covariance Gaussian clouds at ``+-separation * 1/sqrt(n)``, ``K/2`` each."""
    labels = np.where(np.arange(K) < K // 2, -1.0, 1.0)
    centre = separation / math.sqrt(n_features)
    X = labels[:, None] * centre + rng.standard_normal((K, n_features))
    return DevicePopulation(X, labels)


def quadratic_population(K: int, n_features: int, rng, offset: float = 1.0) -> DevicePopulation:
    X = offset / math.sqrt(n_features) + rng.standard_normal((K, n_features)) / math.sqrt(n_features)
    return DevicePopulation(X)


def local_gradient_hinge(w, w0: float, x, label: float, lam: float) -> GradientVector:
    """Subgradient of ``max(0, 1 - l (w.x - w0)) + lam ||w||^2``; offset entry last.

    On the kink (margin exactly 1) the hinge term is taken as flat.
    """
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty(w.size + 1)
    grad[:-1] = 2.0 * lam * w
    grad[-1] = 0.0
    if 1.0 - label * (w @ x - w0) > 0.0:
        grad[:-1] -= label * x
        grad[-1] = label
    return GradientVector(grad)


def local_gradient_quadratic(w, x) -> GradientVector:
    """Gradient of ``0.5 ||w - x||^2``."""
    return GradientVector(np.asarray(w, dtype=np.float64) - np.asarray(x, dtype=np.float64))


def local_gradients(theta, pop: DevicePopulation, lam: float = 0.0) -> np.ndarray:
    """All devices' local gradients, shape ``(K, dim)``."""
    theta = np.asarray(theta, dtype=np.float64)
    if pop.labels is None:
        return theta[None, :] - pop.X
    w, w0 = theta[:-1], theta[-1]
    active = 1.0 - pop.labels * (pop.X @ w - w0) > 0.0
    G = np.empty((pop.K, pop.dim))
    G[:, :-1] = 2.0 * lam * w
    G[:, :-1] -= np.where(active, pop.labels, 0.0)[:, None] * pop.X
    G[:, -1] = np.where(active, pop.labels, 0.0)
    return G


def cost(theta, pop: DevicePopulation, lam: float = 0.0) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    if pop.labels is None:
        return 0.5 * float(np.mean(np.sum((theta - pop.X) ** 2, axis=1)))
    w, w0 = theta[:-1], theta[-1]
    hinge = np.maximum(0.0, 1.0 - pop.labels * (pop.X @ w - w0))
    return float(np.mean(hinge)) + lam * float(w @ w)


def select_minibatch(K: int, K_bar: int, rng) -> np.ndarray:
    """Uniform ``K_bar``-subset of ``range(K)`` without replacement, sorted."""
    if not 1 <= K_bar <= K:
        raise ValueError(f"K_bar={K_bar} must be in [1, K={K}]")
    return np.sort(rng.choice(K, size=K_bar, replace=False))


def default_v_max(pop: DevicePopulation, lam: float = 0.0) -> float:
    """Gradient-norm bound for the feature part of the gradient.

    Quadratic: ``2 max ||x_k||`` (iterates stay near the data hull).
    SVC: ``2 (max ||x_k|| + 2 sqrt(lam))``, since the regularised optimum has
    ``lam ||w||^2 <= 1`` and the feature gradient is ``-l x + 2 lam w``.
    """
    radius = float(np.max(np.linalg.norm(pop.X, axis=1)))
    if pop.labels is None:
        return 2.0 * radius
    return 2.0 * (radius + 2.0 * math.sqrt(lam))


@dataclass
class TrainConfig:
    scheme: Scheme = Scheme.RAUS_NONCOHERENT
    mu: float = 0.1
    T: int = 2000
    K_bar: int | None = None
    lam: float = 1e-3
    D: int = 1
    V_max: float | None = None
    P: float = 1.0
    N: int = 100
    N0: float = 0.1
    sigma2: float = 0.0
    P_max: float = math.inf
    seed: int = 0
    timing: TimingParams = field(default_factory=TimingParams)

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if self.D < 1:
            raise ValueError("D must be positive")

    def check(self, pop: DevicePopulation):
        if pop.n_features % self.D:
            raise ValueError(f"D={self.D} does not divide the feature length {pop.n_features}")
        K_bar = pop.K if self.K_bar is None else self.K_bar
        if not 1 <= K_bar <= pop.K:
            raise ValueError(f"K_bar={K_bar} must be in [1, K={pop.K}]")


@dataclass
class TrainTrace:
    cost: np.ndarray
    dist2: np.ndarray | None
    symbols: np.ndarray
    n_clamped: int
    scheme: Scheme


@dataclass(frozen=True)
class _Group:
    start: int
    stop: int
    D: int
    V_sub: float


def _layout(pop: DevicePopulation, cfg: TrainConfig, V_max: float) -> list[_Group]:
    n = pop.n_features
    groups = [_Group(0, n, cfg.D, V_max / math.sqrt(cfg.D))]
    if pop.labels is not None:
        # hinge offset gradient is 0 or +-1
        groups.append(_Group(n, n + 1, 1, 1.0))
    return groups


def _raus_group(G, grp, cfg, K, permitted, rng):
    norms, units = subvector_split(G[:, grp.start:grp.stop], grp.D)
    if permitted is not None:
        norms = norms * permitted[:, None]
    sampler = SlotSampler(norms, units, grp.V_sub)
    counts = sampler.counts(1, rng)[0]
    cb = sampler.codebook
    if cfg.scheme is Scheme.RAUS_ASYMPTOTIC:
        g = combine_counts(counts, cb, K, grp.V_sub)
    elif cfg.scheme is Scheme.RAUS_AWGN:
        z = math.sqrt(cfg.P) * counts
        if cfg.sigma2 > 0:
            z = z + math.sqrt(cfg.sigma2) * rng.standard_normal(z.shape)
        g = combine_awgn(z, cb, K, cfg.P, grp.V_sub)
    else:
        e = noncoherent_energies(counts, cfg.P, cfg.N0, cfg.N, rng)
        g = combine_noncoherent(e, cb, K, cfg.P, grp.V_sub)
    return g.reshape(-1), sampler.n_clamped


def sgd_round(theta, pop: DevicePopulation, cfg: TrainConfig, rng, V_max: float | None = None):
    """One broadcast-upload-update iteration.

    Returns ``(theta_next, estimate, n_clamped)``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if V_max is None:
        V_max = cfg.V_max if cfg.V_max is not None else default_v_max(pop, cfg.lam)
    G = local_gradients(theta, pop, cfg.lam)
    K = pop.K
    groups = _layout(pop, cfg, V_max)
    n_clamped = 0
    if cfg.scheme.is_raus:
        permitted = None
        if cfg.scheme is Scheme.RAUS_AWGN and math.isfinite(cfg.P_max):
            # unit-mean Rayleigh fade per device; inversion needs P/|h|^2 <= P_max
            h2 = rng.exponential(1.0, size=K)
            permitted = (cfg.P / np.maximum(h2, 1e-300) <= cfg.P_max).astype(np.float64)
        parts = []
        for grp in groups:
            part, c = _raus_group(G, grp, cfg, K, permitted, rng)
            parts.append(part)
            n_clamped += c
        g_hat = np.concatenate(parts)
        symbols = sum(round_time(cfg.scheme, K, grp.stop - grp.start, grp.D) for grp in groups)
        est = AggregateEstimate(g_hat, cfg.scheme, symbols)
    else:
        K_bar = K if cfg.K_bar is None else cfg.K_bar
        idx = select_minibatch(K, K_bar, rng)
        if cfg.scheme is Scheme.YANG:
            symbols = round_time(Scheme.YANG, K_bar, pop.dim, 1, cfg.timing)
            est = yang_estimate(G[idx], cfg.P, cfg.N, cfg.N0, rng, symbols)
        else:
            parts = []
            for grp in groups:
                sub = G[idx, grp.start:grp.stop]
                L_sub = (grp.stop - grp.start) // grp.D
                recon = [dequantize(quantize_gradient(v, grp.D, rng), L_sub) for v in sub]
                parts.append(np.mean(recon, axis=0))
            symbols = sum(round_time(Scheme.TDMA_ORACLE, K_bar, grp.stop - grp.start, grp.D) for grp in groups)
            est = AggregateEstimate(np.concatenate(parts), Scheme.TDMA_ORACLE, symbols, {"norm_time_excluded": True})
    return theta - cfg.mu * est.g_hat, est, n_clamped


def noise_ball_bound(mu: float, kappa: float, sigma2: float) -> float:
    """Steady-state bound ``mu sigma2 / ((2 - mu kappa) kappa)`` on ``E||w_t - w*||^2``."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if not 0 < mu < 2.0 / kappa:
        raise ValueError(f"step size must lie in (0, 2/kappa) = (0, {2.0 / kappa:g}), got {mu}")
    return mu * sigma2 / ((2.0 - mu * kappa) * kappa)


def train(cfg: TrainConfig, pop: DevicePopulation) -> TrainTrace:
    """Run ``cfg.T`` rounds from ``theta = 0``; round ``t`` draws from stream ``(seed, t)``."""
    cfg.check(pop)
    V_max = cfg.V_max if cfg.V_max is not None else default_v_max(pop, cfg.lam)
    theta = np.zeros(pop.dim)
    w_star = pop.optimum
    costs = np.empty(cfg.T)
    dist2 = np.empty(cfg.T) if w_star is not None else None
    symbols = np.empty(cfg.T, dtype=np.int64)
    elapsed = 0
    n_clamped = 0
    for t in range(cfg.T):
        rng = derive_rng(cfg.seed, t)
        theta, est, c = sgd_round(theta, pop, cfg, rng, V_max)
        n_clamped += c
        elapsed += est.round_time
        costs[t] = cost(theta, pop, cfg.lam)
        symbols[t] = elapsed
        if dist2 is not None:
            dist2[t] = float(np.sum((theta - w_star) ** 2))
    return TrainTrace(costs, dist2, symbols, n_clamped, cfg.scheme)
