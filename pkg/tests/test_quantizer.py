import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from raus.quantizer import (
    CpCodebook,
    GradientVector,
    bits_required,
    check_weights,
    codebook_size_bounds,
    convex_weights_cp,
    dequantize,
    mpt_mse,
    normalize,
    quantize,
    quantize_gradient,
    quantizer_mse_cp,
    split_subvectors,
)


def test_gradient_vector_caches_norm():
    v = GradientVector([3.0, 4.0])
    assert v.norm == 5.0
    assert len(v) == 2
    with pytest.raises(ValueError):
        GradientVector([])


@pytest.mark.parametrize("dim", [1, 2, 5, 8])
def test_codebook_structure(dim):
    cb = CpCodebook(dim)
    assert cb.size == 2 * dim
    cw = cb.codewords
    np.testing.assert_allclose(np.linalg.norm(cw, axis=1), math.sqrt(dim))
    np.testing.assert_allclose(cw.sum(axis=0), 0.0, atol=1e-15)
    for m in range(dim):
        np.testing.assert_array_equal(cw[m], math.sqrt(dim) * np.eye(dim)[m])
        np.testing.assert_array_equal(cw[dim + m], -math.sqrt(dim) * np.eye(dim)[m])


def test_codebook_rejects_bad_dim():
    with pytest.raises(ValueError):
        CpCodebook(0)


def test_normalize_examples():
    norm, unit, silent = normalize([3.0, 4.0])
    assert norm == 5.0 and not silent
    np.testing.assert_allclose(unit, [0.6, 0.8])
    norm, unit, silent = normalize([0.0, 0.0])
    assert norm == 0.0 and silent
    np.testing.assert_array_equal(unit, [0.0, 0.0])


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e3, 1e3)))
def test_normalize_reconstructs(x):
    norm, unit, _ = normalize(x)
    np.testing.assert_allclose(norm * unit, x, rtol=1e-12, atol=1e-12)


def test_weights_worked_example():
    # by hand: a(+e1) = 1/sqrt2 + (1 - 1/sqrt2)/4, others (1 - 1/sqrt2)/4
    w = convex_weights_cp([1.0, 0.0], CpCodebook(2))
    np.testing.assert_allclose(w, [0.780330, 0.073223, 0.073223, 0.073223], atol=1e-6)
    np.testing.assert_allclose(w @ CpCodebook(2).codewords, [1.0, 0.0], atol=1e-12)


def test_weights_zero_vector_uniform():
    w = convex_weights_cp(np.zeros(5), CpCodebook(5))
    np.testing.assert_allclose(w, 0.1)


def test_weights_reject_outside_ball():
    with pytest.raises(ValueError, match="unit ball"):
        convex_weights_cp([1.0, 1.0], CpCodebook(2))


def test_weights_boundary_all_equal():
    dim = 8
    u = np.full(dim, 1 / math.sqrt(dim))
    w = convex_weights_cp(u, CpCodebook(dim))
    assert np.count_nonzero(w > 1e-15) == dim
    check_weights(w, CpCodebook(dim), u)


def test_weights_property_sweep(rng):
    # interior and boundary points of the unit ball
    cb = CpCodebook(8)
    x = rng.standard_normal((1000, 8))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    interior = x * rng.random(1000)[:, None] ** (1 / 8)
    for pts in (x, interior):
        w = convex_weights_cp(pts, cb)
        assert (w >= 0).all()
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-10)
        np.testing.assert_allclose(w @ cb.codewords, pts, atol=1e-9)


@settings(max_examples=200)
@given(arrays(np.float64, st.integers(1, 16), elements=st.floats(-1, 1)), st.floats(0, 1))
def test_weights_cover_unit_ball(x, radius):
    n = np.linalg.norm(x)
    u = x / n * radius if n > 0 else x
    cb = CpCodebook(u.size)
    check_weights(convex_weights_cp(u, cb), cb, u)


def test_quantize_degenerate():
    # a unit vector on a codeword axis with dim 1: codebook {+1, -1}
    rng = np.random.default_rng(0)
    assert all(quantize([1.0], CpCodebook(1), rng) == 0 for _ in range(50))
    assert all(quantize([-1.0], CpCodebook(1), rng) == 1 for _ in range(50))


def test_quantize_unbiased_and_mse(rng):
    cb = CpCodebook(8)
    u = rng.standard_normal(8)
    u /= np.linalg.norm(u)
    draws = cb.codewords[quantize(u, cb, rng, size=1_000_000)]
    assert np.max(np.abs(draws.mean(axis=0) - u)) < 0.01
    mse = np.mean(np.sum((draws - u) ** 2, axis=1))
    assert abs(mse - quantizer_mse_cp(8)) < 0.01 * 7


def test_quantize_zero_vector_symmetric(rng):
    cb = CpCodebook(8)
    draws = cb.codewords[quantize(np.zeros(8), cb, rng, size=1_000_000)]
    assert np.max(np.abs(draws.mean(axis=0))) < 0.01


def test_split_subvectors():
    parts = split_subvectors([1, 2, 3, 4], 2)
    np.testing.assert_array_equal(parts[0].values, [1, 2])
    np.testing.assert_array_equal(parts[1].values, [3, 4])
    assert len(split_subvectors([1, 2, 3], 1)) == 1
    scalars = split_subvectors([1, -2, 3], 3)
    assert [p.norm for p in scalars] == [1, 2, 3]
    with pytest.raises(ValueError):
        split_subvectors([1, 2, 3], 2)


@given(arrays(np.float64, 12, elements=st.floats(-100, 100)), st.sampled_from([1, 2, 3, 4, 6, 12]))
def test_split_reconstructs(x, D):
    parts = split_subvectors(x, D)
    np.testing.assert_array_equal(np.concatenate([p.values for p in parts]), x)
    assert math.isclose(sum(p.norm**2 for p in parts), float(x @ x), rel_tol=1e-9, abs_tol=1e-12)


def test_quantize_gradient_scalar_subvectors_exact(rng):
    v = rng.standard_normal(6)
    q = quantize_gradient(v, 6, rng)
    np.testing.assert_allclose(dequantize(q, 1), v)
    assert q.D == 6
    assert math.isclose(float(np.sum(q.subvector_norms**2)), float(v @ v), rel_tol=1e-9)


def test_quantize_gradient_indices_in_range(rng):
    v = rng.standard_normal(40)
    q = quantize_gradient(v, 5, rng)
    assert ((q.codeword_indices >= 0) & (q.codeword_indices < 16)).all()


def test_mpt_mse_examples():
    assert mpt_mse(1.0, 80, 10) == 7.0
    assert mpt_mse(3.0, 8, 8) == 0.0
    assert mpt_mse(0.0, 80, 10) == 0.0
    with pytest.raises(ValueError):
        mpt_mse(1.0, 80, 7)


def test_mpt_mse_matches_monte_carlo(rng):
    v = rng.standard_normal(16)
    recon = np.array([dequantize(quantize_gradient(v, 4, rng), 4) for _ in range(20000)])
    emp = np.mean(np.sum((recon - v) ** 2, axis=1))
    assert abs(emp - mpt_mse(float(np.linalg.norm(v)), 16, 4)) < 0.03 * mpt_mse(float(np.linalg.norm(v)), 16, 4)


def test_quantizer_mse_cp():
    assert quantizer_mse_cp(8) == 7
    assert quantizer_mse_cp(1) == 0


def test_bits_required():
    assert bits_required(80, 10) == 40
    assert bits_required(80, 1) == math.log2(160)
    assert bits_required(80, 10) > bits_required(80, 1)
    with pytest.raises(ValueError):
        bits_required(80, 3)


def test_codebook_size_bounds():
    lo, hi = codebook_size_bounds(16, 4)
    assert abs(lo - 3.2974) < 1e-3 and abs(hi - 16.531) < 1e-3


@given(st.integers(2, 500), st.floats(1, 50), st.floats(1, 50))
def test_codebook_size_bounds_order(L, R1, R2):
    lo, hi = codebook_size_bounds(L, R1)
    assert lo <= hi
    if R1 <= R2:
        assert codebook_size_bounds(L, R2)[0] <= lo
        assert codebook_size_bounds(L, R2)[1] <= hi
