import numpy as np
import pytest

from landaulab.errors import (
    ConfigError,
    MetricNotSPD,
    NonDegeneracyViolation,
    ResolutionGateError,
)
from landaulab.model import Domain, Grid, ModelSpec, sample_fields, validate_model

L2PI = float(np.sqrt(2 * np.pi))


def torus_spec(b="1", V="0", b0=1.0, L=L2PI):
    return ModelSpec.from_config({
        "domain": {"type": "torus", "lengths": [L, L]},
        "field_b": b,
        "potential": V,
        "b0": b0,
    })


def test_validate_constant_field_passes():
    spec = torus_spec()
    report = validate_model(spec, Grid.build(spec.domain, [32, 32]))
    assert report.passed
    assert report.min_a == 1.0


def test_validate_vanishing_field_rejected():
    # sin(x1) vanishes on the torus; no b0 > 0 can hold
    spec = torus_spec(b="sin(x1)", b0=0.1)
    with pytest.raises(NonDegeneracyViolation):
        validate_model(spec, Grid.build(spec.domain, [64, 64]))


def test_validate_variable_field_min():
    spec = torus_spec(b="1 + 0.3*cos(2*pi*x1/L1)*cos(2*pi*x2/L2)", b0=0.7)
    # even grid hits the extrema of cos*cos exactly
    report = validate_model(spec, Grid.build(spec.domain, [128, 128]))
    assert report.passed
    assert report.min_a == pytest.approx(0.7, abs=1e-12)


def test_sample_constant_field():
    spec = torus_spec(b="2", b0=2.0)
    s = sample_fields(spec, Grid.build(spec.domain, [32, 32]))
    assert s.a.shape == (32, 32, 1)
    assert np.all(s.a == 2.0)


def test_sample_two_form_with_metric():
    # B12 = 3 with g = 2I: a = eigenvalue of g^{-1} B = 1.5
    spec = ModelSpec.from_config({
        "domain": {"type": "torus", "lengths": [1.0, 1.0]},
        "two_form": [["0", "3"], ["0", "0"]],
        "metric": [["2", "0"], ["0", "2"]],
        "potential": "0",
        "b0": 1.0,
    })
    s = sample_fields(spec, Grid.build(spec.domain, [8, 8]))
    assert np.allclose(s.a, 1.5, atol=1e-13)
    assert np.allclose(s.sqrt_g, 2.0, atol=1e-13)


def test_sample_potential_matches_closed_form():
    spec = ModelSpec.from_config({
        "domain": {"type": "rectangle", "lengths": [6.0, 6.0]},
        "field_b": "1",
        "potential": "-exp(-r2/2)",
        "b0": 1.0,
    })
    grid = Grid.build(spec.domain, [48, 48])
    s = sample_fields(spec, grid)
    X1, X2 = grid.meshes()
    assert np.array_equal(s.V, -np.exp(-(X1 ** 2 + X2 ** 2) / 2))


def test_scalar_b_gives_a_equals_abs_b():
    spec = torus_spec(b="1 + 0.3*cos(2*pi*x1/L1)*cos(2*pi*x2/L2)", b0=0.7)
    grid = Grid.build(spec.domain, [40, 40])
    s = sample_fields(spec, grid)
    assert np.array_equal(s.a[..., 0], np.abs(s.b))


def test_refined_grid_shares_coarse_nodes_exactly():
    for kind in ("torus", "rectangle"):
        dom = Domain(kind, (L2PI, 2.0))
        grid = Grid.build(dom, [12, 10])
        fine = grid.refine(2)
        for ax_c, ax_f in zip(grid.axes, fine.axes):
            if kind == "torus":
                assert np.array_equal(ax_c, ax_f[::2])
            else:
                assert np.array_equal(ax_c, ax_f[1::2])


def test_sampling_deterministic():
    spec = torus_spec(b="1 + 0.3*cos(2*pi*x1/L1)*cos(2*pi*x2/L2)", b0=0.7)
    grid = Grid.build(spec.domain, [64, 64])
    s1 = sample_fields(spec, grid)
    s2 = sample_fields(spec, grid)
    assert np.array_equal(s1.a, s2.a)
    assert np.array_equal(s1.V, s2.V)


def test_metric_not_spd_rejected():
    spec = ModelSpec.from_config({
        "domain": {"type": "rectangle", "lengths": [4.0, 4.0]},
        "field_b": "1",
        "potential": "0",
        "b0": 1.0,
        "metric": [["x1", "0"], ["0", "1"]],  # x1 < 0 on the centered box
    })
    with pytest.raises(MetricNotSPD):
        validate_model(spec, Grid.build(spec.domain, [16, 16]))


def test_resolution_gate():
    grid = Grid.build(Domain.torus(L2PI, L2PI), [32, 32])
    assert grid.resolution_ok(p=2, sup_b=1.0)
    assert not grid.resolution_ok(p=8, sup_b=1.0)
    with pytest.raises(ResolutionGateError):
        grid.check_resolution(p=8, sup_b=1.0)


def test_config_errors():
    with pytest.raises(ConfigError):
        Domain("torus", (1.0, 1.0, 1.0))  # odd dimension
    with pytest.raises(ConfigError):
        ModelSpec.from_config({
            "domain": {"type": "torus", "lengths": [1.0, 1.0]},
            "potential": "0", "b0": 1.0,
        })  # neither field_b nor two_form
    with pytest.raises(ConfigError):
        ModelSpec.from_config({
            "domain": {"type": "torus", "lengths": [1.0, 1.0]},
            "field_b": "1", "potential": "0", "b0": -1.0,
        })


def test_d4_two_form_block_diagonal():
    # two symplectic blocks with strengths 1 and 2 -> frame eigenvalues {1, 2}
    spec = ModelSpec.from_config({
        "domain": {"type": "torus", "lengths": [1.0, 1.0, 1.0, 1.0]},
        "two_form": [
            ["0", "1", "0", "0"],
            ["0", "0", "0", "0"],
            ["0", "0", "0", "2"],
            ["0", "0", "0", "0"],
        ],
        "potential": "0",
        "b0": 1.0,
    })
    grid = Grid.build(spec.domain, [3, 3, 3, 3])
    s = sample_fields(spec, grid)
    assert s.a.shape == (3, 3, 3, 3, 2)
    assert np.allclose(s.a[..., 0], 1.0, atol=1e-13)
    assert np.allclose(s.a[..., 1], 2.0, atol=1e-13)
