import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from landaulab.discretize import SparseHermitian, assemble, build_gauge, gauge_transform
from landaulab.errors import FluxNotQuantized, ResolutionGateError, UnsupportedGeometry
from landaulab.mmio import export_matrix, import_matrix
from landaulab.model import Grid, ModelSpec

L2PI = float(np.sqrt(2 * np.pi))

VARB = "1 + 0.3*cos(2*pi*x1/L1)*cos(2*pi*x2/L2)"


def make_spec(kind, lengths, b="1", V="0", b0=1.0):
    return ModelSpec.from_config({
        "domain": {"type": kind, "lengths": list(lengths)},
        "field_b": b, "potential": V, "b0": b0,
    })


# ---------------------------------------------------------------------------
# gauge construction


def test_rectangle_constant_field_landau_gauge():
    spec = make_spec("rectangle", [4.0, 4.0])
    grid = Grid.build(spec.domain, [32, 32])
    p = 2
    g = build_gauge(spec, grid, p)
    X1 = grid.meshes()[0]
    h2 = grid.h[1]
    # theta on a vertical edge at x1 is p * x1 * h
    assert np.allclose(g.theta_y, p * X1[:, :-1] * h2, atol=1e-14)
    assert np.all(g.theta_x == 0.0)
    assert g.plaquette_defect <= 1e-10


def test_rectangle_variable_field_plaquette_exactness():
    spec = make_spec("rectangle", [5.0, 5.0],
                     b="1 + 0.5*exp(-((x1-0.3)^2 + 0.7*(x2+0.2)^2))", b0=0.9)
    grid = Grid.build(spec.domain, [32, 32])
    g = build_gauge(spec, grid, 4)
    assert g.plaquette_defect <= 1e-10


def test_torus_flux_quantization():
    spec = make_spec("torus", [L2PI, L2PI])
    grid = Grid.build(spec.domain, [48, 48])
    g = build_gauge(spec, grid, 7)
    assert g.flux_quanta == pytest.approx(7.0, abs=1e-9)
    assert g.plaquette_defect <= 1e-10


def test_torus_flux_not_quantized():
    # area 1, b = 1: flux/2pi = 1/(2pi) is irrational in p
    spec = make_spec("torus", [1.0, 1.0])
    grid = Grid.build(spec.domain, [16, 16])
    with pytest.raises(FluxNotQuantized) as err:
        build_gauge(spec, grid, 3)
    assert err.value.nearest_admissible >= 1


def test_torus_variable_field_plaquette_exactness():
    spec = make_spec("torus", [L2PI, L2PI], b=VARB, b0=0.7)
    grid = Grid.build(spec.domain, [48, 48])
    g = build_gauge(spec, grid, 4)
    assert g.plaquette_defect <= 1e-10
    assert g.edge_quadrature_error <= 1e-11


def test_unsupported_geometry():
    spec = ModelSpec.from_config({
        "domain": {"type": "torus", "lengths": [1.0] * 4},
        "two_form": [["0", "1", "0", "0"], ["0"] * 4,
                     ["0", "0", "0", "1"], ["0"] * 4],
        "potential": "0", "b0": 1.0,
    })
    with pytest.raises(UnsupportedGeometry):
        build_gauge(spec, Grid.build(spec.domain, [4] * 4), 2)


# ---------------------------------------------------------------------------
# assembly


def test_free_dirichlet_laplacian_closed_form():
    # p=1, b=0, V=0 on a 3x3 interior: classical Dirichlet Laplacian
    L = 1.0
    spec = make_spec("rectangle", [L, L], b="0")
    grid = Grid.build(spec.domain, [4, 4])
    H = assemble(spec, grid, 1)
    H.check()
    assert H.n == 9
    h = grid.h[0]
    vals = np.linalg.eigvalsh(H.matrix.toarray())
    smallest = 2 * (2 / h ** 2) * (1 - np.cos(np.pi * h / L))
    assert vals[0] == pytest.approx(smallest, rel=1e-12)
    assert np.max(np.abs(H.matrix.toarray().imag)) == 0.0  # b = 0: real symmetric


def test_assemble_exactly_hermitian():
    spec = make_spec("torus", [L2PI, L2PI], b=VARB, b0=0.7)
    H = assemble(spec, Grid.build(spec.domain, [48, 48]), 4)
    assert H.hermitian_defect() == 0.0
    assert np.all(H.matrix.diagonal().imag == 0.0)


def test_spectrum_bounded_below_by_inf_V():
    spec = make_spec("rectangle", [4.0, 4.0], V="-0.8*exp(-r2/2)")
    grid = Grid.build(spec.domain, [64, 64])
    H = assemble(spec, grid, 2)
    lo = spla.eigsh(H.matrix, k=1, which="SA", return_eigenvectors=False,
                    v0=np.full(H.n, 1.0 + 0.0j))
    assert lo[0] >= -0.8 - 1e-8


def test_torus_landau_cluster_near_one_with_dense_oracle():
    # coarse dense oracle first: 32^2 at p=2 (flux quanta = 2)
    spec = make_spec("torus", [L2PI, L2PI])
    grid = Grid.build(spec.domain, [32, 32])
    H = assemble(spec, grid, 2)
    vals = np.linalg.eigvalsh(H.matrix.toarray())
    cluster = vals[:2]
    assert np.all(np.abs(cluster - 1.0) < 0.02)
    assert vals[2] > 2.5  # next cluster well separated
    # refinement trend: finer grid moves the cluster mean closer to 1
    H2 = assemble(spec, Grid.build(spec.domain, [64, 64]), 2)
    v2 = spla.eigsh(H2.matrix, k=2, sigma=1.0, which="LM",
                    return_eigenvectors=False, v0=np.full(H2.n, 1.0 + 0.5j))
    assert abs(np.mean(v2) - 1.0) < abs(np.mean(cluster) - 1.0)


def test_doubling_p_never_decreases_first_cluster_count():
    from landaulab.spectral import count_interval
    spec = make_spec("torus", [L2PI, L2PI])
    grid = Grid.build(spec.domain, [64, 64])
    counts = []
    for p in (1, 2, 4):
        H = assemble(spec, grid, p)
        counts.append(count_interval(H, (0.5, 1.5)).count)
    assert counts == sorted(counts)
    assert counts == [1, 2, 4]  # degeneracy = flux quanta


def test_resolution_gate_refusal():
    spec = make_spec("torus", [L2PI, L2PI])
    with pytest.raises(ResolutionGateError):
        assemble(spec, Grid.build(spec.domain, [32, 32]), 8)


def test_gauge_invariance_dense():
    spec = make_spec("torus", [L2PI, L2PI])
    grid = Grid.build(spec.domain, [32, 32])
    H1 = assemble(spec, grid, 2)
    rng = np.random.default_rng(11)
    chi = rng.uniform(0, 2 * np.pi, H1.n)
    H2 = gauge_transform(H1, chi)
    assert H2.hermitian_defect() == 0.0
    v1 = np.linalg.eigvalsh(H1.matrix.toarray())
    v2 = np.linalg.eigvalsh(H2.matrix.toarray())
    assert np.max(np.abs(v1 - v2) / (1 + np.abs(v1))) < 1e-9


# ---------------------------------------------------------------------------
# Matrix Market round trip


def test_mm_identity_file_layout(tmp_path):
    H = SparseHermitian(matrix=sp.identity(2, dtype=complex, format="csc"))
    path = tmp_path / "eye.mtx"
    export_matrix(H, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "%%MatrixMarket matrix coordinate complex hermitian"
    assert lines[1] == "2 2 2"
    assert len(lines) == 4  # header, size, two diagonal entries
    back = import_matrix(path)
    assert (back != H.matrix).nnz == 0


def test_mm_round_trip_bit_exact(tmp_path):
    spec = make_spec("torus", [L2PI, L2PI], b=VARB, b0=0.7)
    H = assemble(spec, Grid.build(spec.domain, [24, 24]), 1)
    p1 = tmp_path / "a.mtx"
    p2 = tmp_path / "b.mtx"
    export_matrix(H, p1)
    A = import_matrix(p1)
    export_matrix(A, p2)
    assert p1.read_bytes() == p2.read_bytes()
    d = (A - H.matrix).tocoo()
    assert d.nnz == 0 or np.max(np.abs(d.data)) == 0.0


def test_mm_rejects_non_hermitian(tmp_path):
    A = sp.csc_matrix(np.array([[1.0, 2.0], [0.0, 1.0]], dtype=complex))
    with pytest.raises(ValueError):
        export_matrix(A, tmp_path / "bad.mtx")


def test_mm_external_reader_reproduces_eigenvalues(tmp_path):
    # scipy.io.mmread is an independent implementation of the format
    spec = make_spec("torus", [L2PI, L2PI])
    grid = Grid.build(spec.domain, [128, 128])
    H = assemble(spec, grid, 8)
    path = tmp_path / "H.mtx"
    export_matrix(H, path)
    A_ext = scipy.io.mmread(str(path)).tocsc()
    v0 = np.full(H.n, 1.0 + 0.5j)
    ours = spla.eigsh(H.matrix, k=3, sigma=1.0, which="LM",
                      return_eigenvectors=False, v0=v0)
    theirs = spla.eigsh(A_ext, k=3, sigma=1.0, which="LM",
                        return_eigenvectors=False, v0=v0)
    assert np.allclose(np.sort(ours), np.sort(theirs), atol=1e-8)
