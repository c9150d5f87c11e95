"""Gauge data and sparse Peierls-phase assembly on 2D flat geometries.

The discrete operator is the 5-point magnetic finite-difference stencil

    H[i][i] = (1/p)(2/h1^2 + 2/h2^2) + V(x_i)
    H[i][j] = -(1/p)(1/h^2) exp(-i theta_e)   for the edge e: i -> j

with theta_e = p * \\int_e A . dl.  Phases are built so that every plaquette's
oriented phase sum equals p times the flux of the two-form through it (up to
quadrature tolerance), which is what keeps the discrete model gauge-exact.

Rectangle: Landau-type gauge A = (0, a2), a2(x1,x2) = \\int_0^{x1} b(s,x2) ds.
Torus: b is split into its mean plus a mean-zero part; the mean is realized
by the standard quantized-flux gauge with twists on the wrap edges of the
last column, the mean-zero part by a periodic potential from a spectral
Poisson solve for the stream function.  The wrap-edge twist convention is
part of the on-disk contract (external tools can reproduce it).
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import (
    FluxNotQuantized,
    GaugeConsistencyError,
    UnsupportedGeometry,
)
from .model import sample_fields

TWO_PI = 2.0 * np.pi

_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(4)

PLAQUETTE_TOL = 1e-10
EDGE_QUAD_TOL = 1e-12
FLUX_INT_TOL = 1e-8


@dataclass(frozen=True)
class GaugeData:
    """Edge phases theta = p * int A.dl for both lattice directions.

    theta_x[i, j] belongs to the edge (i,j) -> (i+1,j); theta_y[i, j] to
    (i,j) -> (i,j+1).  On the torus the arrays include the wrap edges (the
    i = N1-1 column of theta_x carries the quantization twist); on the
    rectangle they couple interior nodes only.
    """

    grid: object
    p: int
    theta_x: np.ndarray
    theta_y: np.ndarray
    total_flux: float
    flux_quanta: float
    plaquette_defect: float
    edge_quadrature_error: float


def _require_flat_2d(spec):
    if spec.domain.d != 2 or not spec.identity_metric or spec.field_b is None:
        raise UnsupportedGeometry(
            "gauge construction and assembly support d=2, identity metric, "
            "scalar field b only"
        )


def _b_callable(spec, grid):
    L = spec.domain.lengths

    def b(x1, x2):
        env = {"x1": x1, "x2": x2, "r2": x1 * x1 + x2 * x2,
               "L1": L[0], "L2": L[1]}
        return np.broadcast_to(np.asarray(spec.field_b.eval_env(env), dtype=float),
                               np.broadcast_shapes(np.shape(x1), np.shape(x2))).copy()

    return b


def _plaquette_flux(bfun, x1_corners, x2_corners, h1, h2):
    """4x4 Gauss flux of b through each cell [x1, x1+h1] x [x2, x2+h2]."""
    gn, gw = _GAUSS_NODES, _GAUSS_WEIGHTS
    s = x1_corners[..., None] + (gn + 1.0) * (h1 / 2.0)
    t = x2_corners[..., None] + (gn + 1.0) * (h2 / 2.0)
    vals = bfun(s[..., :, None], t[..., None, :])
    w2 = np.multiply.outer(gw, gw)
    return np.sum(vals * w2, axis=(-2, -1)) * (h1 * h2 / 4.0)


def _plaquette_defect(theta_x, theta_y, p_flux, periodic):
    if periodic:
        ps = (theta_x + np.roll(theta_y, -1, axis=0)
              - np.roll(theta_x, -1, axis=1) - theta_y)
    else:
        ps = (theta_x[:, :-1] + theta_y[1:, :] - theta_x[:, 1:] - theta_y[:-1, :])
    dev = ps - p_flux
    dev = (dev + np.pi) % TWO_PI - np.pi
    return float(np.max(np.abs(dev)))


class _StreamPotential:
    """Periodic vector potential A~ with dA~ = b - mean(b), from the Fourier
    solution of Lap psi = b - mean(b); A~ = (-d2 psi, d1 psi).

    Modes below threshold are dropped, so band-limited fields are exact and
    smooth fields are exact to spectral accuracy at the sampling grid.
    """

    def __init__(self, b_samples, grid):
        n1, n2 = grid.ncells
        h1, h2 = grid.h
        bt = b_samples - b_samples.mean()
        F = np.fft.fft2(bt)
        k1 = TWO_PI * np.fft.fftfreq(n1, d=h1)
        k2 = TWO_PI * np.fft.fftfreq(n2, d=h2)
        K1, K2 = np.meshgrid(k1, k2, indexing="ij")
        K2sum = K1 ** 2 + K2 ** 2
        K2sum[0, 0] = 1.0
        psi = -F / K2sum
        psi[0, 0] = 0.0
        scale = np.abs(psi).max()
        if scale == 0.0:
            self.k1 = np.zeros(0)
            self.k2 = np.zeros(0)
            self.coef = np.zeros(0, dtype=complex)
        else:
            keep = np.argwhere(np.abs(psi) > 1e-14 * scale)
            self.k1 = K1[keep[:, 0], keep[:, 1]]
            self.k2 = K2[keep[:, 0], keep[:, 1]]
            self.coef = psi[keep[:, 0], keep[:, 1]] / (n1 * n2)

    @property
    def nmodes(self):
        return len(self.coef)

    def _component(self, x1, x2, weights):
        # chunked so large grids do not blow up the (points x modes) temporary
        x1, x2 = np.broadcast_arrays(x1, x2)
        shape = x1.shape
        f1, f2 = x1.ravel(), x2.ravel()
        out = np.empty(f1.size)
        block = 1 << 19
        for start in range(0, f1.size, block):
            sl = slice(start, start + block)
            phase = np.exp(1j * (np.multiply.outer(f1[sl], self.k1)
                                 + np.multiply.outer(f2[sl], self.k2)))
            out[sl] = np.real(phase @ weights)
        return out.reshape(shape)

    def a1(self, x1, x2):
        if self.nmodes == 0:
            return np.zeros(np.broadcast_shapes(np.shape(x1), np.shape(x2)))
        return self._component(x1, x2, -1j * self.k2 * self.coef)

    def a2(self, x1, x2):
        if self.nmodes == 0:
            return np.zeros(np.broadcast_shapes(np.shape(x1), np.shape(x2)))
        return self._component(x1, x2, 1j * self.k1 * self.coef)


def _edge_quadrature(component, x1_start, x2_start, h, axis, tol=EDGE_QUAD_TOL,
                     max_doublings=5):
    """int of one A-component along an axis-aligned edge of length h, by
    composite 4-point Gauss with global panel doubling until converged."""
    gn, gw = _GAUSS_NODES, _GAUSS_WEIGHTS
    prev = None
    est = None
    err = np.inf
    panels = 1
    for _ in range(max_doublings + 1):
        offs = (np.arange(panels)[:, None] + (gn[None, :] + 1.0) / 2.0) * (h / panels)
        if axis == 0:
            vals = component(x1_start[..., None, None] + offs,
                             x2_start[..., None, None])
        else:
            vals = component(x1_start[..., None, None],
                             x2_start[..., None, None] + offs)
        est = np.sum(vals * gw, axis=(-2, -1)) * (h / panels / 2.0)
        if prev is not None:
            err = float(np.max(np.abs(est - prev)))
            if err < tol:
                break
        prev = est
        panels *= 2
    return est, err


def nearest_admissible_p(p, total_flux, tol=FLUX_INT_TOL, limit=1000):
    """Closest positive integer p' with p' * flux in 2 pi Z, or None."""
    for delta in range(limit + 1):
        for cand in (p + delta, p - delta):
            if cand < 1:
                continue
            quanta = cand * total_flux / TWO_PI
            if abs(quanta - round(quanta)) <= tol * max(1.0, abs(quanta)):
                return int(cand)
    return None


def _torus_gauge(spec, grid, p, b_samples):
    L1, L2 = spec.domain.lengths
    h1, h2 = grid.h
    b_mean = float(b_samples.mean())
    total_flux = b_mean * L1 * L2
    quanta = p * total_flux / TWO_PI
    if abs(quanta - round(quanta)) > FLUX_INT_TOL * max(1.0, abs(quanta)):
        raise FluxNotQuantized(p, total_flux,
                               nearest_admissible_p(p, total_flux))
    F = p * b_mean

    stream = _StreamPotential(b_samples, grid)
    X1, X2 = grid.meshes()
    theta_x, err_x = _edge_quadrature(stream.a1, X1, X2, h1, axis=0)
    theta_y, err_y = _edge_quadrature(stream.a2, X1, X2, h2, axis=1)
    theta_x = p * theta_x
    theta_y = p * theta_y + F * X1 * h2
    # quantization twist on the wrap column; consistent at the corner only
    # because p * total flux is an integer multiple of 2 pi
    theta_x[-1, :] += -F * L1 * X2[-1, :]
    return theta_x, theta_y, total_flux, quanta, p * max(err_x, err_y)


def _rectangle_gauge(spec, grid, p, bfun, b_samples):
    h1, h2 = grid.h
    x1 = grid.axes[0]
    x2 = grid.axes[1]
    m1, m2 = grid.shape
    gn, gw = _GAUSS_NODES, _GAUSS_WEIGHTS

    theta_x = np.zeros((m1 - 1, m2))  # A1 = 0 in the Landau gauge

    span = b_samples.max() - b_samples.min()
    if span <= 1e-13 * max(1.0, np.abs(b_samples).max()):
        # constant field: a2 = b * x1 exactly
        b0 = float(b_samples.flat[0])
        theta_y = p * b0 * np.broadcast_to(x1[:, None], (m1, m2 - 1)) * h2
        return theta_x, theta_y.copy(), 0.0
    # cumulative per-cell Gauss for a2(x1_i, t) = int_0^{x1_i} b(s, t) ds,
    # then an outer Gauss rule in t across each vertical edge
    tq = x2[:-1, None] + (gn[None, :] + 1.0) * (h2 / 2.0)   # (m2-1, 4)
    t = tq.ravel()
    lines = np.concatenate([[0.0], x1]) if 0.0 not in x1 else x1
    order = np.argsort(lines)
    lines = lines[order]
    i_zero = int(np.searchsorted(lines, 0.0))
    C = np.zeros((len(lines), len(t)))
    prev_theta = None
    err = np.inf
    for panels in (1, 2, 4):
        C[:] = 0.0
        for i in range(i_zero, len(lines) - 1):
            seg = lines[i + 1] - lines[i]
            offs = (np.arange(panels)[:, None] + (gn[None, :] + 1.0) / 2.0) * (seg / panels)
            s = lines[i] + offs
            C[i + 1] = C[i] + (bfun(s[..., None], t[None, None, :]) * gw[None, :, None]).sum((0, 1)) * (seg / panels / 2.0)
        for i in range(i_zero, 0, -1):
            seg = lines[i] - lines[i - 1]
            offs = (np.arange(panels)[:, None] + (gn[None, :] + 1.0) / 2.0) * (seg / panels)
            s = lines[i] - offs
            C[i - 1] = C[i] - (bfun(s[..., None], t[None, None, :]) * gw[None, :, None]).sum((0, 1)) * (seg / panels / 2.0)
        a2_nodes = C[np.searchsorted(lines, x1)]
        theta_y = p * (a2_nodes.reshape(m1, m2 - 1, 4) * gw).sum(-1) * (h2 / 2.0)
        if prev_theta is not None:
            err = float(np.max(np.abs(theta_y - prev_theta)))
            if err < EDGE_QUAD_TOL:
                break
        prev_theta = theta_y
    return theta_x, theta_y, err


def build_gauge(spec, grid, p, plaquette_tol=PLAQUETTE_TOL):
    """Edge phases for H_p on the grid; validates the plaquette invariant.

    Raises FluxNotQuantized on the torus when p * flux is not in 2 pi Z and
    GaugeConsistencyError when plaquette phase sums disagree with the flux
    beyond ``plaquette_tol`` (for a torus field that usually means the grid
    aliases the two-form).
    """
    _require_flat_2d(spec)
    p = int(p)
    if p < 1:
        raise ValueError("p must be a positive integer")
    bfun = _b_callable(spec, grid)
    samples = sample_fields(spec, grid)
    b_samples = samples.b

    h1, h2 = grid.h
    if grid.periodic:
        theta_x, theta_y, flux, quanta, qerr = _torus_gauge(spec, grid, p, b_samples)
        X1, X2 = grid.meshes()
        p_flux = p * _plaquette_flux(bfun, X1, X2, h1, h2)
        defect = _plaquette_defect(theta_x, theta_y, p_flux, periodic=True)
    else:
        theta_x, theta_y, qerr = _rectangle_gauge(spec, grid, p, bfun, b_samples)
        flux = 0.0
        quanta = 0.0
        X1, X2 = grid.meshes()
        p_flux = p * _plaquette_flux(bfun, X1[:-1, :-1], X2[:-1, :-1], h1, h2)
        defect = _plaquette_defect(theta_x, theta_y, p_flux, periodic=False)
    if defect > plaquette_tol:
        raise GaugeConsistencyError(
            f"plaquette phase sums deviate from p*flux by {defect:.3e} "
            f"(tolerance {plaquette_tol:g}); refine the grid if the field "
            "is not band-limited"
        )
    return GaugeData(grid=grid, p=p, theta_x=theta_x, theta_y=theta_y,
                     total_flux=flux, flux_quanta=quanta,
                     plaquette_defect=defect, edge_quadrature_error=qerr)


@dataclass(frozen=True)
class SparseHermitian:
    """Assembled H_p: complex sparse matrix with exact Hermitian symmetry."""

    matrix: sp.csc_matrix
    grid: object = None
    p: int = None

    @property
    def n(self):
        return self.matrix.shape[0]

    def hermitian_defect(self):
        d = (self.matrix - self.matrix.getH()).tocoo()
        return float(np.max(np.abs(d.data))) if d.nnz else 0.0

    def check(self):
        if self.hermitian_defect() != 0.0:
            raise AssertionError("matrix is not exactly Hermitian")
        if np.any(self.matrix.diagonal().imag != 0.0):
            raise AssertionError("diagonal is not exactly real")
        return True


def assemble(spec, grid, p, gauge=None):
    """Assemble the sparse Hermitian matrix of H_p.

    Refuses to run when the grid has fewer than 8 nodes per magnetic length
    (under-resolved Peierls lattices produce lattice artifacts unrelated to
    the continuum operator).
    """
    _require_flat_2d(spec)
    samples = sample_fields(spec, grid)
    grid.check_resolution(p, samples.sup_b)
    if gauge is None:
        gauge = build_gauge(spec, grid, p)
    h1, h2 = grid.h
    t1 = (1.0 / p) / h1 ** 2
    t2 = (1.0 / p) / h2 ** 2
    shape = grid.shape
    n = grid.nnodes
    idx = np.arange(n).reshape(shape)
    diag = np.full(n, 2.0 * t1 + 2.0 * t2) + samples.V.ravel()

    rows, cols, vals = [], [], []

    def add_edges(u, v, theta, t):
        hop = -t * np.exp(-1j * theta.ravel())
        rows.append(u.ravel())
        cols.append(v.ravel())
        vals.append(hop)
        rows.append(v.ravel())
        cols.append(u.ravel())
        vals.append(np.conj(hop))

    if grid.periodic:
        add_edges(idx, np.roll(idx, -1, axis=0), gauge.theta_x, t1)
        add_edges(idx, np.roll(idx, -1, axis=1), gauge.theta_y, t2)
    else:
        add_edges(idx[:-1, :], idx[1:, :], gauge.theta_x, t1)
        add_edges(idx[:, :-1], idx[:, 1:], gauge.theta_y, t2)

    H = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n), dtype=complex,
    )
    H = (H + sp.diags(diag.astype(complex))).tocsc()
    H.sort_indices()
    return SparseHermitian(matrix=H, grid=grid, p=int(p))


def gauge_transform(H, chi):
    """Conjugate by the diagonal unitary exp(i chi): the discrete-gradient
    gauge change theta_e -> theta_e + chi(head) - chi(tail).  Spectra agree
    exactly, which the gauge-invariance checks exploit."""
    mat = H.matrix if isinstance(H, SparseHermitian) else H
    u = np.exp(1j * np.asarray(chi, dtype=float).ravel())
    U = sp.diags(u)
    out = (U.getH() @ mat @ U).tocsc()
    out.sort_indices()
    # re-symmetrize exactly: roundoff in the triple product may break the
    # bitwise A = A^H contract the counting code relies on
    out = 0.5 * (out + out.getH())
    out = out.tocsc()
    out.sort_indices()
    if isinstance(H, SparseHermitian):
        return SparseHermitian(matrix=out, grid=H.grid, p=H.p)
    return out
