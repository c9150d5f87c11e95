"""Analytic predictions: frame eigenvalues, local Landau levels, band set,
gap structure, K-sets with distance fields, Weyl measures and counts, and
the leading trace pairing.

Everything here is a pure function of immutable field samples.  Sums are
taken with numpy's pairwise reduction over C-ordered arrays, so repeated
runs give bitwise-identical results.  Multi-indices are enumerated in
graded lexicographic order to keep reports deterministic.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .errors import (
    BoundaryOnLevelSetWarning,
    DegenerateField,
    EmptyRegion,
)

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# frame eigenvalues


def frame_eigenvalues(g_x, B_form):
    """Positive numbers a_1 <= ... <= a_n with spec(g^{-1} B) = {+-i a_j}.

    Computed from the symmetrized product A = g^{-1/2} B g^{-1/2}: A is real
    antisymmetric, so -A@A is symmetric PSD with eigenvalues a_j^2, each
    doubled.
    """
    B = np.asarray(B_form, dtype=float)
    d = B.shape[-1]
    if d % 2 != 0:
        raise ValueError("dimension must be even")
    a2 = _frame_sq(np.asarray(g_x, dtype=float) if g_x is not None else None, B)
    a = np.sqrt(np.maximum(a2, 0.0))
    amax = np.max(a)
    if np.min(a) < 1e-12 * amax or amax == 0.0:
        raise DegenerateField(
            f"two-form is degenerate: frame eigenvalues {np.sort(a)}"
        )
    return np.sort(a)


def _frame_sq(g, B):
    """Squared frame eigenvalues; g=None means identity.  Batched over
    leading axes."""
    if g is None:
        A = B
    else:
        w, Q = np.linalg.eigh(g)
        S = (Q * (1.0 / np.sqrt(w))[..., None, :]) @ np.swapaxes(Q, -1, -2)
        A = S @ B @ S
    M = -A @ A
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    vals = np.linalg.eigvalsh(M)  # ascending, pairs (a_j^2, a_j^2)
    return vals[..., ::2]


def frame_eigenvalues_batched(g, B):
    """Per-node frame eigenvalues for arrays of shape (..., d, d); output
    (..., n) sorted ascending."""
    a = np.sqrt(np.maximum(_frame_sq(g, B), 0.0))
    return np.sort(a, axis=-1)


# ---------------------------------------------------------------------------
# local Landau levels


def landau_level(a, V_x, k):
    """Lambda_k(x) = sum_j (2 k_j + 1) a_j(x) + V(x)."""
    a = np.asarray(a, dtype=float)
    k = np.asarray(k)
    if a.shape[-1] != k.shape[-1]:
        raise ValueError("len(a) must equal len(k)")
    return float(np.sum((2 * k + 1) * a)) + float(V_x)


def _levels_field(samples, k):
    """Lambda_k at every node, vectorized; k is a length-n integer tuple."""
    coeff = 2 * np.asarray(k, dtype=float) + 1.0
    return np.tensordot(samples.a, coeff, axes=([-1], [0])) + samples.V


def multi_indices(n, total_max):
    """All k in Z_+^n with |k| <= total_max, in graded lexicographic order."""
    out = []
    for total in range(total_max + 1):
        out.extend(_compositions(n, total))
    return out


def _compositions(n, total):
    if n == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(n - 1, total - first):
            yield (first,) + rest


def index_total_bound(a_min, V_min, K_max):
    """Largest |k| that can reach K_max: (2|k|+n) a_min + V_min <= K_max.

    Levels with larger |k| exceed K_max everywhere, which makes band
    enumeration complete.
    """
    if a_min <= 0:
        raise DegenerateField("need a_min > 0 for the truncation bound")
    return max(int(np.floor((K_max - V_min) / (2.0 * a_min))), -1)


# ---------------------------------------------------------------------------
# band set


@dataclass(frozen=True)
class LandauBandSet:
    """Per multi-index band [lo, hi] of Lambda_k over a region, the derived
    gap list, and the truncation data that makes the enumeration complete."""

    region_id: str
    K_max: float
    n: int
    bands: tuple          # ((k, lo, hi), ...) graded-lex in k, lo <= K_max
    gaps: tuple           # open intervals of [min lo, K_max] missing all bands
    index_bound: int

    def band_union(self):
        """Merged disjoint intervals covering all bands (clipped at nothing)."""
        ivs = sorted((lo, hi) for _, lo, hi in self.bands)
        merged = []
        for lo, hi in ivs:
            if merged and lo <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        return [(lo, hi) for lo, hi in merged]

    def as_dict(self):
        return {
            "region": self.region_id,
            "K_max": self.K_max,
            "bands": [{"k": list(k), "lo": lo, "hi": hi} for k, lo, hi in self.bands],
            "gaps": [list(g) for g in self.gaps],
            "index_bound": self.index_bound,
        }


def sigma_bands(samples, region=None, K_max=None, region_id="full"):
    """Enumerate the local Landau bands over a node region up to K_max.

    Every k whose band could start below K_max is visited; the bound
    |k| <= (K_max - inf V)/(2 min a) - n/2 is what guarantees completeness.
    """
    if K_max is None:
        raise ValueError("K_max is required")
    if region is None:
        region = np.ones(samples.grid.shape, dtype=bool)
    if not np.any(region):
        raise EmptyRegion("band region contains no nodes")
    a = samples.a[region]
    V = samples.V[region]
    n = samples.n
    a_min = float(np.min(a))
    V_min = float(np.min(V))
    bound = index_total_bound(a_min, V_min, K_max)
    bands = []
    for k in multi_indices(n, max(bound, 0)):
        coeff = 2 * np.asarray(k, dtype=float) + 1.0
        lev = a @ coeff + V
        lo, hi = float(np.min(lev)), float(np.max(lev))
        if lo <= K_max:
            bands.append((tuple(k), lo, hi))
    gaps = _derive_gaps(bands, K_max)
    return LandauBandSet(region_id=region_id, K_max=float(K_max), n=n,
                         bands=tuple(bands), gaps=tuple(gaps),
                         index_bound=bound)


def _derive_gaps(bands, K_max):
    if not bands:
        return []
    ivs = sorted((lo, min(hi, K_max)) for _, lo, hi in bands)
    gaps = []
    cursor = ivs[0][0]
    for lo, hi in ivs:
        if lo > cursor:
            gaps.append((cursor, lo))
        cursor = max(cursor, hi)
        if cursor >= K_max:
            break
    if cursor < K_max:
        gaps.append((cursor, K_max))
    return gaps


# ---------------------------------------------------------------------------
# K-set and distance field


@dataclass(frozen=True)
class KSetField:
    """Indicator of K_[a,b] = {x : some Lambda_k(x) in [a,b]} plus the
    grid-metric distance to it (inf when the set is empty)."""

    interval: tuple
    indicator: np.ndarray
    distance: np.ndarray
    grid: object

    @property
    def empty(self):
        return not bool(np.any(self.indicator))

    def validate(self, tol=1e-9):
        """One relaxation sweep: no grid edge may shortcut the distance."""
        worst = _relaxation_defect(self.distance, self.grid)
        if worst > tol:
            raise AssertionError(
                f"distance field violates edge triangle inequality by {worst:.3e}"
            )
        if not np.all(self.distance[self.indicator] == 0.0):
            raise AssertionError("distance nonzero on the K-set")
        if (not self.empty) and np.any(self.distance[~self.indicator] <= 0.0):
            raise AssertionError("distance not positive off the K-set")
        return worst


# 8-neighbour moves plus knight moves: the chamfer metric they induce is
# within ~2% of Euclidean, which the localization fits need.
_MOVES = [(1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (2, -1), (1, 2), (-1, 2)]


def _edge_list(grid):
    shape = grid.shape
    h1, h2 = grid.h
    n = shape[0] * shape[1]
    idx = np.arange(n).reshape(shape)
    rows, cols, w = [], [], []
    for di, dj in _MOVES:
        weight = float(np.hypot(di * h1, dj * h2))
        if grid.periodic:
            tgt = np.roll(np.roll(idx, -di, axis=0), -dj, axis=1)
            rows.append(idx.ravel())
            cols.append(tgt.ravel())
            w.append(np.full(n, weight))
        else:
            si = slice(max(0, -di), shape[0] - max(0, di)) if di >= 0 else slice(-di, shape[0])
            sj = slice(max(0, -dj), shape[1] - max(0, dj)) if dj >= 0 else slice(-dj, shape[1])
            src = idx[si, sj]
            ti = slice(max(0, di), shape[0] + min(0, di)) if di >= 0 else slice(0, shape[0] + di)
            tj = slice(max(0, dj), shape[1] + min(0, dj)) if dj >= 0 else slice(0, shape[1] + dj)
            tgt = idx[ti, tj]
            rows.append(src.ravel())
            cols.append(tgt.ravel())
            w.append(np.full(src.size, weight))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    w = np.concatenate(w)
    return rows, cols, w


def _grid_distance(indicator, grid):
    if not np.any(indicator):
        return np.full(grid.shape, np.inf)
    rows, cols, w = _edge_list(grid)
    n = indicator.size
    adj = sp.csr_matrix(
        (np.concatenate([w, w]), (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    )
    sources = np.flatnonzero(indicator.ravel())
    dist = dijkstra(adj, directed=False, indices=sources, min_only=True)
    dist[sources] = 0.0
    return dist.reshape(grid.shape)


def _relaxation_defect(distance, grid):
    rows, cols, w = _edge_list(grid)
    d = distance.ravel()
    finite = np.isfinite(d[rows]) & np.isfinite(d[cols])
    if not np.any(finite):
        return 0.0
    defect = np.maximum(d[cols][finite] - (d[rows][finite] + w[finite]),
                        d[rows][finite] - (d[cols][finite] + w[finite]))
    return float(np.max(defect, initial=0.0))


def k_set(samples, interval, grid=None):
    """Indicator and distance field of K_[a,b].

    Distance is the multi-source shortest path in the grid-edge metric
    (diagonal and knight moves, scaled by h).  An empty K yields +inf.
    """
    if grid is None:
        grid = samples.grid
    lo, hi = float(interval[0]), float(interval[1])
    if hi < lo:
        raise ValueError("empty interval")
    n = samples.n
    a_min = float(np.min(samples.a))
    V_min = float(np.min(samples.V))
    bound = index_total_bound(a_min, V_min, hi)
    indicator = np.zeros(samples.grid.shape, dtype=bool)
    for k in multi_indices(n, max(bound, 0)):
        lev = _levels_field(samples, k)
        indicator |= (lev >= lo) & (lev <= hi)
    distance = _grid_distance(indicator, grid)
    return KSetField(interval=(lo, hi), indicator=indicator,
                     distance=distance, grid=grid)


# ---------------------------------------------------------------------------
# Weyl measures and counts


def weyl_measure(samples, k, interval):
    """mu({x : Lambda_k(x) in [alpha, beta]}) by a Riemann sum of the
    Liouville density (prod a_j) sqrt|g| over the closed level region."""
    lo, hi = float(interval[0]), float(interval[1])
    lev = _levels_field(samples, k)
    inside = (lev >= lo) & (lev <= hi)
    dens = samples.liouville_density()
    weights = np.broadcast_to(dens, lev.shape)
    return float(np.sum(weights[inside])) * samples.grid.cell_volume


def weyl_count_prediction(samples, interval, p, endpoint_tol=1e-9):
    """p^n/(2pi)^n * sum_k mu({Lambda_k in [alpha, beta]}).

    Warns (BoundaryOnLevelSetWarning) when an endpoint lies on a level set
    of non-negligible measure: there the count prediction is ill-posed.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    lo, hi = float(interval[0]), float(interval[1])
    n = samples.n
    bound = index_total_bound(float(np.min(samples.a)), float(np.min(samples.V)), hi)
    total = 0.0
    dens = None
    for k in multi_indices(n, max(bound, 0)):
        lev = _levels_field(samples, k)
        inside = (lev >= lo) & (lev <= hi)
        if dens is None:
            dens = np.broadcast_to(samples.liouville_density(), lev.shape)
        total += float(np.sum(dens[inside]))
        for edge in (lo, hi):
            tol = endpoint_tol * max(1.0, abs(edge))
            on_edge = np.abs(lev - edge) <= tol
            if np.count_nonzero(on_edge) * samples.grid.cell_volume > 1e-6 * samples.grid.domain.volume:
                warnings.warn(
                    f"interval endpoint {edge} sits on the Lambda_{k} level set "
                    "over a positive-measure region; the Weyl count is ill-posed "
                    "there (endpoint in the exceptional set)",
                    BoundaryOnLevelSetWarning,
                    stacklevel=2,
                )
    mu = total * samples.grid.cell_volume
    return (p / TWO_PI) ** n * mu


# ---------------------------------------------------------------------------
# test functions and trace pairings


@dataclass(frozen=True)
class TestFunction:
    """Smooth bump supported on (alpha, beta):
    phi(lambda) = exp(1 - 1/(1-t^2)), t = (2 lambda - alpha - beta)/(beta - alpha);
    phi peaks at 1 in the midpoint and vanishes to all orders at the ends."""

    support: tuple

    def __post_init__(self):
        lo, hi = self.support
        if not hi > lo:
            raise ValueError("support must be a nonempty open interval")
        object.__setattr__(self, "support", (float(lo), float(hi)))

    def _t(self, lam):
        lo, hi = self.support
        return (2.0 * np.asarray(lam, dtype=float) - lo - hi) / (hi - lo)

    def __call__(self, lam):
        t = self._t(lam)
        out = np.zeros_like(t)
        inside = np.abs(t) < 1.0
        ti = t[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - ti * ti))
        if np.isscalar(lam) or np.ndim(lam) == 0:
            return float(out)
        return out

    def derivative(self, lam):
        t = self._t(lam)
        out = np.zeros_like(t)
        inside = np.abs(t) < 1.0
        ti = t[inside]
        lo, hi = self.support
        phi = np.exp(1.0 - 1.0 / (1.0 - ti * ti))
        out[inside] = phi * (-2.0 * ti / (1.0 - ti * ti) ** 2) * (2.0 / (hi - lo))
        if np.isscalar(lam) or np.ndim(lam) == 0:
            return float(out)
        return out

    @property
    def max_abs_derivative(self):
        lo, hi = self.support
        lam = np.linspace(lo, hi, 4001)
        return float(np.max(np.abs(self.derivative(lam))))


def f0_pairing(samples, phi):
    """<f_0, phi> = (2pi)^{-n} sum_k int phi(Lambda_k) (prod a_j) sqrt|g| dx."""
    hi = phi.support[1]
    n = samples.n
    bound = index_total_bound(float(np.min(samples.a)), float(np.min(samples.V)), hi)
    dens = None
    total = 0.0
    for k in multi_indices(n, max(bound, 0)):
        lev = _levels_field(samples, k)
        if dens is None:
            dens = np.broadcast_to(samples.liouville_density(), lev.shape)
        total += float(np.sum(phi(lev) * dens))
    return total * samples.grid.cell_volume / TWO_PI ** n


def local_f0(samples, phi, node):
    """f_0(x_0) = (2pi)^{-n} (prod a_j(x_0)) sum_k phi(Lambda_k(x_0))."""
    a = samples.a[node]
    V = float(samples.V[node])
    hi = phi.support[1]
    bound = index_total_bound(float(np.min(a)), V, hi)
    total = 0.0
    for k in multi_indices(len(a), max(bound, 0)):
        total += phi(landau_level(a, V, np.asarray(k)))
    return float(np.prod(a)) * total / TWO_PI ** len(a)


# ---------------------------------------------------------------------------
# refinement convergence report


def refinement_report(spec, grid, quantity, factor=2):
    """Evaluate a quantity on the grid and on a factor-refined grid.

    ``quantity`` maps FieldSamples to a float.  Returns (coarse, fine,
    relative difference); the predict surface includes this for every
    quadrature-based number it reports.
    """
    from .model import sample_fields

    coarse = quantity(sample_fields(spec, grid))
    fine = quantity(sample_fields(spec, grid.refine(factor)))
    denom = max(abs(coarse), abs(fine), 1e-300)
    return coarse, fine, abs(fine - coarse) / denom
