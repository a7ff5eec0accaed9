import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from raus.airlink import (
    SlotSampler,
    TransmissionRound,
    awgn_round,
    coherent_round,
    noncoherent_energies,
    noncoherent_round,
    sample_channels,
)
from raus.analysis import subvector_split
from raus.estimators import (
    AggregateEstimate,
    Scheme,
    TimingParams,
    combine_awgn,
    combine_counts,
    combine_noncoherent,
    raus_estimate_asymptotic,
    raus_estimate_awgn,
    raus_estimate_noncoherent,
    round_time,
    tdma_aggregate,
    yang_estimate,
)
from raus.quantizer import CpCodebook, quantize_gradient


def test_scheme_values():
    assert Scheme("YANG") is Scheme.YANG
    assert Scheme.RAUS_AWGN.is_raus and not Scheme.TDMA_ORACLE.is_raus
    with pytest.raises(ValueError):
        Scheme("FOO")


def test_aggregate_estimate_is_frozen():
    est = AggregateEstimate(np.ones((2, 2)), Scheme.YANG, 5)
    assert est.g_hat.shape == (4,)
    with pytest.raises(ValueError):
        est.g_hat[0] = 3.0


def test_combine_counts_by_hand():
    cb = CpCodebook(2)
    # 3 devices on +e0, 1 device on -e1
    g = combine_counts(np.array([3, 0, 0, 1]), cb, K=4, V_max=2.0)
    np.testing.assert_allclose(g, 2.0 / 4 * math.sqrt(2) * np.array([3, -1]))


def test_awgn_noiseless_equals_counts():
    cb = CpCodebook(3)
    counts = np.array([1, 0, 2, 0, 1, 0])
    P = 2.5
    np.testing.assert_allclose(
        combine_awgn(math.sqrt(P) * counts, cb, 7, P, 1.3), combine_counts(counts, cb, 7, 1.3)
    )


def test_noncoherent_floor_cancels():
    cb = CpCodebook(3)
    e = np.array([0.2, 0.5, 0.1, 0.0, 0.3, 0.7])
    np.testing.assert_allclose(combine_noncoherent(e + 5.0, cb, 4, 1.0, 1.0), combine_noncoherent(e, cb, 4, 1.0, 1.0))


def test_single_round_wrappers(rng):
    cb = CpCodebook(2)
    rnd = TransmissionRound([1, 1, 0], [0, 3, 1], 4)
    est = raus_estimate_asymptotic(rnd, cb, 3, 1.0, round_symbols=4)
    np.testing.assert_allclose(est.g_hat, math.sqrt(2) / 3 * np.array([1.0, -1.0]))
    assert est.round_time == 4 and est.scheme is Scheme.RAUS_ASYMPTOTIC
    z = awgn_round(rnd, 1.0, 0.0, rng)
    np.testing.assert_allclose(raus_estimate_awgn(z, cb, 3, 1.0, 1.0).g_hat, est.g_hat)
    with pytest.raises(ValueError):
        raus_estimate_awgn(z, cb, 0, 1.0, 1.0)
    ch = sample_channels(np.ones(3), 8, 1.0, rng)
    zn = noncoherent_round(rnd, ch, 0.1, rng)
    assert raus_estimate_noncoherent(zn, cb, 3, 1.0, 1.0).g_hat.shape == (2,)


def _population(rng, K, L, D):
    V = rng.standard_normal((K, L)) * 0.3 + 0.2
    norms, units = subvector_split(V, D)
    V_sub = float(norms.max()) * 1.2
    return V, norms, units, V_sub


@pytest.mark.parametrize("kind", ["counts", "awgn", "noncoherent"])
def test_raus_estimators_unbiased(rng, kind):
    K, L, D, T = 20, 8, 2, 40_000
    V, norms, units, V_sub = _population(rng, K, L, D)
    s = SlotSampler(norms, units, V_sub)
    counts = s.counts(T, rng)
    cb = s.codebook
    if kind == "counts":
        est = combine_counts(counts, cb, K, V_sub)
    elif kind == "awgn":
        est = combine_awgn(1.5 * counts + 0.3 * rng.standard_normal(counts.shape), cb, K, 2.25, V_sub)
    else:
        est = combine_noncoherent(noncoherent_energies(counts, 2.0, 0.5, 10, rng), cb, K, 2.0, V_sub)
    est = est.reshape(T, L)
    g = V.mean(axis=0)
    se = est.std(axis=0) / math.sqrt(T)
    assert np.all(np.abs(est.mean(axis=0) - g) < 5 * se)


def test_yang_noise_free_is_mean(rng):
    V = rng.standard_normal((5, 4))
    est = yang_estimate(V, 1.0, 10, 0.0, rng, round_symbols=12)
    np.testing.assert_allclose(est.g_hat, V.mean(axis=0))
    assert est.round_time == 12
    with pytest.raises(ValueError):
        yang_estimate(np.zeros((0, 4)), 1.0, 10, 0.0, rng)


def test_yang_noise_variance(rng):
    V = np.zeros((4, 20_000))
    est = yang_estimate(V, 2.0, 50, 1.0, rng)
    assert abs(est.g_hat.var() / (1.0 / 2 / (2.0 * 50 * 4)) - 1) < 0.03


def test_tdma_scalar_subvectors_exact(rng):
    V = rng.standard_normal((3, 6))
    qs = [quantize_gradient(v, 6, rng) for v in V]
    est = tdma_aggregate(qs, 1)
    np.testing.assert_allclose(est.g_hat, V.mean(axis=0))
    assert est.meta["norm_time_excluded"]
    with pytest.raises(ValueError):
        tdma_aggregate([], 1)


def test_round_time_values():
    assert round_time(Scheme.RAUS_NONCOHERENT, 10, 80) == 160
    assert round_time("RAUS_ASYMPTOTIC", 10, 80, D=10) == 160
    for K_bar in range(5, 55, 5):
        assert round_time(Scheme.YANG, K_bar, 80) == round((0.1 * K_bar + 1) * 80)
    assert round_time(Scheme.TDMA_ORACLE, 10, 80, D=10) == 10 * 10 * 4
    assert round_time(Scheme.TDMA_ORACLE, 10, 80, D=1) == 10 * 8
    assert round_time(Scheme.YANG, 10, 80, timing=TimingParams(tau_pilot=2, c=2)) == 180
    with pytest.raises(ValueError):
        round_time(Scheme.RAUS_AWGN, 10, 80, D=7)
    with pytest.raises(ValueError):
        round_time("NOPE", 10, 80)
    with pytest.raises(ValueError):
        TimingParams(c=-1)


@given(st.integers(1, 200), st.sampled_from([8, 16, 80, 96]))
def test_raus_round_time_independent_of_minibatch(K_bar, L):
    assert round_time(Scheme.RAUS_NONCOHERENT, K_bar, L) == 2 * L


@given(st.integers(1, 100), st.integers(1, 100))
def test_yang_round_time_increasing(K_bar, L):
    assert round_time(Scheme.YANG, K_bar + 1, L) >= round_time(Scheme.YANG, K_bar, L)


def test_power_gating_shrinks_estimate(rng):
    # with unit-mean Rayleigh fading a device survives gating with probability exp(-P/P_max),
    # so the gated estimate is the ungated mean scaled by that factor
    K, L, T = 30, 4, 30_000
    V, norms, units, V_sub = _population(rng, K, L, 1)
    cb = CpCodebook(L)
    P, P_max = 1.0, 2.0
    s = SlotSampler(norms, units, V_sub)
    acc = np.zeros(L)
    for _ in range(T // 1000):
        out = s.outcomes(1000, rng)[:, :, 0]
        for row in out:
            rnd = TransmissionRound((row < cb.size).astype(int), np.minimum(row, cb.size - 1), cb.size)
            h = np.sqrt(rng.exponential(1.0, K))
            z, _ = coherent_round(rnd, h, P, P_max, 0.0, rng)
            acc += combine_awgn(z, cb, K, P, V_sub)
    mean = acc / T
    np.testing.assert_allclose(mean, math.exp(-P / P_max) * V.mean(axis=0), atol=0.02)
