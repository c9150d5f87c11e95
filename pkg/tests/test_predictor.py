import math

import numpy as np
import pytest

from landaulab.errors import BoundaryOnLevelSetWarning, DegenerateField, EmptyRegion
from landaulab.model import Grid, ModelSpec, sample_fields
from landaulab.predictor import (
    TestFunction as Bump,
    f0_pairing,
    frame_eigenvalues,
    index_total_bound,
    k_set,
    landau_level,
    local_f0,
    multi_indices,
    refinement_report,
    sigma_bands,
    weyl_count_prediction,
    weyl_measure,
)

L2PI = float(np.sqrt(2 * np.pi))


def torus_spec(b, b0, L=L2PI, V="0"):
    return ModelSpec.from_config({
        "domain": {"type": "torus", "lengths": [L, L]},
        "field_b": b, "potential": V, "b0": b0,
    })


VARB = "1 + 0.3*cos(2*pi*x1/L1)*cos(2*pi*x2/L2)"


@pytest.fixture(scope="module")
def varb_samples():
    spec = torus_spec(VARB, 0.7)
    return sample_fields(spec, Grid.build(spec.domain, [128, 128]))


# ---------------------------------------------------------------------------
# frame eigenvalues


def test_frame_single_block():
    J = np.array([[0.0, 1.7], [-1.7, 0.0]])
    assert np.allclose(frame_eigenvalues(np.eye(2), J), [1.7])


def test_frame_two_blocks():
    B = np.zeros((4, 4))
    B[0, 1], B[1, 0] = 1.0, -1.0
    B[2, 3], B[3, 2] = 2.0, -2.0
    assert np.allclose(frame_eigenvalues(np.eye(4), B), [1.0, 2.0])


def test_frame_metric_scaling():
    B = np.array([[0.0, 3.0], [-3.0, 0.0]])
    assert np.allclose(frame_eigenvalues(2 * np.eye(2), B), [1.5])


def test_frame_degenerate_rejected():
    B = np.zeros((4, 4))
    B[0, 1], B[1, 0] = 1.0, -1.0  # second block identically zero
    with pytest.raises(DegenerateField):
        frame_eigenvalues(np.eye(4), B)


# ---------------------------------------------------------------------------
# Landau levels and multi-indices


def test_landau_level_values():
    assert landau_level([1.0], 0.0, np.array([0])) == 1.0
    assert landau_level([1.0, 2.0], 0.5, np.array([1, 0])) == 5.5
    b, V = 0.83, -0.27
    k = 3
    assert landau_level([b], V, np.array([k])) == pytest.approx((2 * k + 1) * b + V)


def test_landau_level_monotone_in_k():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = rng.integers(1, 4)
        a = rng.uniform(0.2, 3.0, n)
        V = rng.uniform(-1, 1)
        k = rng.integers(0, 5, n)
        base = landau_level(a, V, k)
        for j in range(n):
            k2 = k.copy()
            k2[j] += 1
            assert landau_level(a, V, k2) > base


def test_multi_index_graded_lex():
    idx = multi_indices(2, 2)
    assert idx == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert all(sum(k) <= 3 for k in multi_indices(3, 3))


# ---------------------------------------------------------------------------
# band set


def test_sigma_bands_constant_field():
    spec = torus_spec("1", 1.0)
    s = sample_fields(spec, Grid.build(spec.domain, [32, 32]))
    bs = sigma_bands(s, K_max=6.0)
    got = {k: (lo, hi) for k, lo, hi in bs.bands}
    assert got == {(0,): (1.0, 1.0), (1,): (3.0, 3.0), (2,): (5.0, 5.0)}
    assert [tuple(g) for g in bs.gaps] == [(1.0, 3.0), (3.0, 5.0), (5.0, 6.0)]


def test_sigma_bands_variable_field(varb_samples):
    bs = sigma_bands(varb_samples, K_max=4.0)
    by_k = {k: (lo, hi) for k, lo, hi in bs.bands}
    assert by_k[(0,)] == pytest.approx((0.7, 1.3), abs=1e-12)
    assert by_k[(1,)] == pytest.approx((2.1, 3.9), abs=1e-12)
    assert len(bs.gaps) == 1
    assert bs.gaps[0] == pytest.approx((1.3, 2.1), abs=1e-12)


def test_sigma_bands_completeness_one_index_further(varb_samples):
    bs = sigma_bands(varb_samples, K_max=4.0)
    a = varb_samples.a
    V = varb_samples.V
    # every k at |k| = bound + 1 starts above K_max
    for k in multi_indices(varb_samples.n, bs.index_bound + 1):
        if sum(k) == bs.index_bound + 1:
            coeff = 2 * np.asarray(k, dtype=float) + 1
            lo = float(np.min(a @ coeff + V))
            assert lo > bs.K_max


def test_sigma_bands_gap_condition_matches_field_range():
    # gap at level k exists iff (2k-1) sup b < (2k+1) inf b
    rng = np.random.default_rng(3)
    for _ in range(10):
        bmin = rng.uniform(0.4, 1.0)
        bmax = bmin * rng.uniform(1.0, 1.8)
        amp = (bmax - bmin) / 2
        mid = (bmax + bmin) / 2
        spec = torus_spec(f"{mid} + {amp}*cos(2*pi*x1/L1)", bmin * 0.99)
        s = sample_fields(spec, Grid.build(spec.domain, [64, 64]))
        K_max = 7 * bmax
        bs = sigma_bands(s, K_max=K_max)
        gaps = bs.gaps
        for k in (1, 2, 3):
            lo_pred = (2 * k - 1) * bmax
            hi_pred = (2 * k + 1) * bmin
            has = any(abs(g[0] - lo_pred) < 1e-9 and abs(g[1] - hi_pred) < 1e-9
                      for g in gaps)
            assert has == (lo_pred < hi_pred - 1e-12)


def test_sigma_bands_empty_region():
    spec = torus_spec("1", 1.0)
    s = sample_fields(spec, Grid.build(spec.domain, [16, 16]))
    with pytest.raises(EmptyRegion):
        sigma_bands(s, region=np.zeros((16, 16), dtype=bool), K_max=4.0)


def test_index_total_bound():
    # (2|k|+1) * 0.7 <= 4 -> |k| <= 2.36 -> bound 2
    assert index_total_bound(0.7, 0.0, 4.0) == 2


# ---------------------------------------------------------------------------
# K set and distance field


def test_k_set_whole_domain_and_empty():
    spec = torus_spec("1", 1.0)
    s = sample_fields(spec, Grid.build(spec.domain, [32, 32]))
    ks = k_set(s, (0.5, 1.5))
    assert np.all(ks.indicator)
    assert np.all(ks.distance == 0.0)
    ks2 = k_set(s, (1.5, 2.5))
    assert ks2.empty
    assert np.all(np.isinf(ks2.distance))


def test_k_set_disk_distance_matches_analytic():
    # K = {x : 3 + V(x) in [1.5, 2.5]} = disk of radius sqrt(2 ln 2)
    spec = ModelSpec.from_config({
        "domain": {"type": "rectangle", "lengths": [6.0, 6.0]},
        "field_b": "1", "potential": "-exp(-r2/2)", "b0": 1.0,
    })
    grid = Grid.build(spec.domain, [64, 64])
    s = sample_fields(spec, grid)
    ks = k_set(s, (1.5, 2.5))
    assert not ks.empty
    X1, X2 = grid.meshes()
    d_true = np.maximum(np.hypot(X1, X2) - math.sqrt(2 * math.log(2)), 0.0)
    h = grid.h[0]
    assert np.max(np.abs(ks.distance - d_true)) <= 2 * h
    ks.validate()


# ---------------------------------------------------------------------------
# Weyl measures


def test_weyl_measure_constant_field():
    spec = torus_spec("1", 1.0)
    s = sample_fields(spec, Grid.build(spec.domain, [64, 64]))
    area = spec.domain.volume
    assert weyl_measure(s, (0,), (0.5, 1.5)) == pytest.approx(area, rel=1e-12)
    assert weyl_measure(s, (0,), (1.5, 2.5)) == 0.0


def test_weyl_measure_refinement_oracle(varb_samples):
    spec = torus_spec(VARB, 0.7)
    fine = sample_fields(spec, Grid.build(spec.domain, [512, 512]))
    mu_c = weyl_measure(varb_samples, (0,), (0.9, 1.1))
    mu_f = weyl_measure(fine, (0,), (0.9, 1.1))
    assert abs(mu_c - mu_f) / mu_f <= 0.01


def test_weyl_measure_monotone_and_additive(varb_samples):
    s = varb_samples
    inner = weyl_measure(s, (0,), (0.9, 1.0))
    outer = weyl_measure(s, (0,), (0.85, 1.05))
    assert inner <= outer
    beta = 0.97423  # generic split point, not a sampled level value
    total = weyl_measure(s, (0,), (0.85, 1.05))
    left = weyl_measure(s, (0,), (0.85, beta))
    right = weyl_measure(s, (0,), (beta, 1.05))
    lev = s.b
    assert not np.any(lev == beta)
    # closed intervals double-count the shared endpoint only on level nodes
    assert left + right == pytest.approx(total, rel=1e-12)


def test_weyl_count_prediction_constant_field():
    spec = torus_spec("1", 1.0)
    s = sample_fields(spec, Grid.build(spec.domain, [128, 128]))
    for p in (4, 16):
        pred = weyl_count_prediction(s, (0.5, 1.5), p)
        assert pred == pytest.approx(p, abs=1e-9 * p)
    assert weyl_count_prediction(s, (1.5, 2.5), 8) == 0.0


def test_weyl_count_prediction_gaussian_well_analytic():
    # constant b = 1 with V = -0.8 exp(-|x|^2/2): prediction over [0.3, 0.9]
    # equals p * vol{alpha <= 1+V <= beta} / (2 pi) = p * ln 7
    spec = ModelSpec.from_config({
        "domain": {"type": "rectangle", "lengths": [7.0, 7.0]},
        "field_b": "1", "potential": "-0.8*exp(-r2/2)", "b0": 1.0,
    })
    s = sample_fields(spec, Grid.build(spec.domain, [128, 128]))
    p = 10
    assert weyl_count_prediction(s, (0.3, 0.9), p) == pytest.approx(
        p * math.log(7.0), rel=0.01)


def test_weyl_count_endpoint_warning():
    spec = torus_spec("1", 1.0)
    s = sample_fields(spec, Grid.build(spec.domain, [32, 32]))
    with pytest.warns(BoundaryOnLevelSetWarning):
        weyl_count_prediction(s, (1.0, 1.5), 4)


# ---------------------------------------------------------------------------
# test function and trace pairings


def test_bump_shape():
    phi = Bump((0.5, 1.5))
    assert phi(1.0) == 1.0
    assert phi(0.5) == 0.0 and phi(1.5) == 0.0 and phi(2.0) == 0.0
    lam = np.linspace(0.3, 1.7, 300)
    vals = phi(lam)
    assert np.all(vals >= 0.0)
    assert np.max(vals) <= 1.0


def test_bump_derivative_matches_finite_difference():
    phi = Bump((0.9, 1.1))
    lam = np.linspace(0.905, 1.095, 41)
    eps = 1e-7
    fd = (phi(lam + eps) - phi(lam - eps)) / (2 * eps)
    assert np.allclose(phi.derivative(lam), fd, rtol=1e-5, atol=1e-4)


def test_f0_pairing_constant_field():
    spec = torus_spec("1", 1.0)
    s = sample_fields(spec, Grid.build(spec.domain, [64, 64]))
    phi = Bump((0.5, 1.5))
    # area = 2 pi: <f0, phi> = phi(1) * area / (2 pi) = 1
    assert f0_pairing(s, phi) == pytest.approx(1.0, rel=1e-9)
    assert f0_pairing(s, Bump((1.5, 2.5))) == 0.0


def test_f0_pairing_variable_field_fine_grid_oracle(varb_samples):
    spec = torus_spec(VARB, 0.7)
    fine = sample_fields(spec, Grid.build(spec.domain, [512, 512]))
    phi = Bump((0.9, 1.1))
    v_c = f0_pairing(varb_samples, phi)
    v_f = f0_pairing(fine, phi)
    assert abs(v_c - v_f) / abs(v_f) <= 1e-4  # smooth periodic integrand


def test_f0_pairing_linear(varb_samples):
    phi1 = Bump((0.8, 1.0))
    phi2 = Bump((1.0, 1.2))

    class Sum:
        support = (0.8, 1.2)

        def __call__(self, lam):
            return phi1(lam) + phi2(lam)

    lhs = f0_pairing(varb_samples, Sum())
    rhs = f0_pairing(varb_samples, phi1) + f0_pairing(varb_samples, phi2)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_local_f0_values(varb_samples):
    spec = torus_spec("1", 1.0)
    s = sample_fields(spec, Grid.build(spec.domain, [16, 16]))
    phi = Bump((0.5, 1.5))
    assert local_f0(s, phi, (3, 5)) == pytest.approx(1.0 / (2 * np.pi), rel=1e-12)
    assert local_f0(s, Bump((1.5, 2.5)), (3, 5)) == 0.0
    # variable field: (1/2pi) b0 sum_k phi((2k+1) b0) directly
    node = (17, 41)
    b0 = float(varb_samples.b[node])
    phi2 = Bump((0.9, 3.5))
    expected = b0 * sum(phi2((2 * k + 1) * b0) for k in range(4)) / (2 * np.pi)
    assert local_f0(varb_samples, phi2, node) == pytest.approx(expected, rel=1e-12)


def test_refinement_report():
    spec = torus_spec(VARB, 0.7)
    grid = Grid.build(spec.domain, [64, 64])
    coarse, fine, rel = refinement_report(
        spec, grid, lambda s: weyl_measure(s, (0,), (0.9, 1.1)))
    assert rel <= 0.05
    assert coarse != fine
