"""Eigenvalue counting by matrix inertia, validated eigenpairs in gaps,
spectral traces, and eigenfunction localization metrics.

Counting uses Sylvester inertia from a symmetric-indefinite triangular
factorization: SuperLU in symmetric mode with pure diagonal pivoting and a
symmetric fill-reducing ordering factors H - sigma*I = P L D L^H P^T, so the
number of negative entries of D is the number of eigenvalues below sigma.
Pivot breakdown (a shift sitting on an eigenvalue) is detected and retried
on a fixed deterministic ladder of perturbed shifts.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceFailure, FactorizationFailure, ShiftTooClose

_SHIFT_EPS = 1e-8
_PIVOT_REL_TOL = 1e-14
_DIAG_IMAG_TOL = 1e-6


def _as_csc(H):
    mat = H.matrix if hasattr(H, "matrix") else H
    return sp.csc_matrix(mat, dtype=complex)


def _ldl_negative_count(M):
    """Negative-pivot count of a Hermitian factorization of M, or raise
    ShiftTooClose when the diagonal-pivot factorization is untrustworthy."""
    try:
        lu = spla.splu(
            M,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options=dict(SymmetricMode=True),
        )
    except RuntimeError as exc:  # exactly singular pivot
        raise ShiftTooClose(str(exc)) from None
    if not np.array_equal(lu.perm_r, lu.perm_c):
        # SuperLU abandoned the diagonal on a zero pivot: factorization is
        # no longer congruent to M
        raise ShiftTooClose("row pivoting broke the symmetric factorization")
    d = lu.U.diagonal()
    scale = float(np.max(np.abs(d)))
    if scale == 0.0 or float(np.min(np.abs(d))) < _PIVOT_REL_TOL * scale:
        raise ShiftTooClose("near-zero pivot in the triangular factor")
    if float(np.max(np.abs(d.imag))) > _DIAG_IMAG_TOL * scale:
        raise FactorizationFailure("factorization diagonal is not real")
    return int(np.sum(d.real < 0.0))


def _shift_ladder(sigma):
    delta = _SHIFT_EPS * (1.0 + abs(sigma))
    return [sigma,
            sigma + delta, sigma - delta,
            sigma + 10 * delta, sigma - 10 * delta,
            sigma + 100 * delta]


def inertia_with_log(H, sigma):
    """(count of eigenvalues below the shift, shift actually used)."""
    A = _as_csc(H)
    eye = sp.identity(A.shape[0], dtype=complex, format="csc")
    last = None
    for trial in _shift_ladder(float(sigma)):
        try:
            return _ldl_negative_count((A - trial * eye).tocsc()), trial
        except ShiftTooClose as exc:
            last = exc
    raise FactorizationFailure(
        f"no usable factorization near shift {sigma}: {last}"
    )


def inertia(H, sigma):
    """Number of eigenvalues of H below sigma (Sylvester inertia count)."""
    return inertia_with_log(H, sigma)[0]


@dataclass
class SpectralSlice:
    """An interval with its eigenvalue count and (optionally) validated
    eigenpairs.  shift_log records every factorization shift used."""

    interval: tuple
    count: int
    method: str
    eigenvalues: np.ndarray = None
    vectors: np.ndarray = None
    residuals: np.ndarray = None
    shift_log: list = field(default_factory=list)

    def as_dict(self):
        out = {
            "interval": list(self.interval),
            "count": self.count,
            "method": self.method,
            "shift_log": [list(map(float, s)) for s in self.shift_log],
        }
        if self.eigenvalues is not None:
            out["eigenvalues"] = [float(v) for v in self.eigenvalues]
        if self.residuals is not None:
            out["residuals"] = [float(r) for r in self.residuals]
        return out


def count_interval(H, interval):
    """N([alpha, beta]; H) = inertia(beta) - inertia(alpha).

    Counts eigenvalues in [alpha, beta); when an endpoint lands on an
    eigenvalue the deterministic shift perturbation decides the side, and
    the shift actually used is recorded in the slice.
    """
    alpha, beta = float(interval[0]), float(interval[1])
    if not alpha < beta:
        raise ValueError("need alpha < beta")
    n_lo, used_lo = inertia_with_log(H, alpha)
    n_hi, used_hi = inertia_with_log(H, beta)
    return SpectralSlice(
        interval=(alpha, beta),
        count=n_hi - n_lo,
        method="inertia",
        shift_log=[(alpha, used_lo), (beta, used_hi)],
    )


_DENSE_CUTOFF = 256


def _validate_pairs(A, vals, vecs, residual_tol, ortho_tol):
    if vals.size == 0:
        return np.zeros(0)
    R = A @ vecs - vecs * vals[None, :]
    residuals = np.linalg.norm(R, axis=0) / np.linalg.norm(vecs, axis=0)
    gram = vecs.conj().T @ vecs
    ortho = float(np.max(np.abs(gram - np.eye(vals.size))))
    if np.max(residuals) > residual_tol:
        raise ConvergenceFailure(
            f"eigenpair residual {np.max(residuals):.3e} exceeds {residual_tol:g}",
            residuals=residuals,
        )
    if ortho > ortho_tol:
        raise ConvergenceFailure(f"eigenvectors not orthonormal: {ortho:.3e}")
    return residuals


def eigenpairs_in_interval(H, interval, max_m, seed=1234,
                           residual_tol=1e-8, ortho_tol=1e-8):
    """All eigenpairs in [alpha, beta], validated against the inertia count.

    Shift-invert Lanczos centered in the interval, re-run with a larger
    subspace until exactly N pairs inside the interval are found; residual
    and orthogonality bounds are enforced, and a shortfall after the retry
    ladder raises ConvergenceFailure rather than returning partial results.
    """
    A = _as_csc(H)
    n = A.shape[0]
    slice_count = count_interval(H, interval)
    N = slice_count.count
    alpha, beta = slice_count.interval
    if N > max_m:
        raise ConvergenceFailure(
            f"{N} eigenvalues in [{alpha}, {beta}] exceed max_m = {max_m}"
        )
    if N == 0:
        return SpectralSlice(interval=(alpha, beta), count=0, method="eigenpairs",
                             eigenvalues=np.zeros(0), vectors=np.zeros((n, 0)),
                             residuals=np.zeros(0), shift_log=slice_count.shift_log)

    if n <= _DENSE_CUTOFF:
        vals_all, vecs_all = np.linalg.eigh(A.toarray())
        inside = (vals_all >= alpha) & (vals_all <= beta)
        vals, vecs = vals_all[inside], vecs_all[:, inside]
        residuals = _validate_pairs(A, vals, vecs, residual_tol, ortho_tol)
        return SpectralSlice(interval=(alpha, beta), count=len(vals),
                             method="eigenpairs", eigenvalues=vals, vectors=vecs,
                             residuals=residuals, shift_log=slice_count.shift_log)

    sigma = 0.5 * (alpha + beta)
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    k = min(N + 4, n - 2)
    shift_log = list(slice_count.shift_log)
    last_got = None
    for attempt in range(4):
        ncv = min(n - 1, max(2 * k + 1, 2 * N + 20))
        used_sigma = sigma
        vals = None
        for trial in _shift_ladder(sigma):
            try:
                vals, vecs = spla.eigsh(A, k=k, sigma=trial, which="LM",
                                        v0=v0, ncv=ncv)
                used_sigma = trial
                break
            except RuntimeError:
                continue
        if vals is None:
            raise FactorizationFailure(
                f"shift-invert factorization failed near {sigma}"
            )
        shift_log.append((sigma, used_sigma))
        # Rayleigh-Ritz refinement: Lanczos vectors for a degenerate cluster
        # can come back with overlapping copies, so re-diagonalize H on the
        # (rank-revealed) returned subspace
        vals, vecs = _rayleigh_ritz(A, vecs)
        inside = (vals >= alpha) & (vals <= beta)
        got = int(np.count_nonzero(inside))
        if got == N:
            vals_in = vals[inside]
            vecs_in = vecs[:, inside]
            residuals = _validate_pairs(A, vals_in, vecs_in, residual_tol, ortho_tol)
            return SpectralSlice(interval=(alpha, beta), count=N,
                                 method="eigenpairs", eigenvalues=vals_in,
                                 vectors=vecs_in, residuals=residuals,
                                 shift_log=shift_log)
        if got > N:
            raise ConvergenceFailure(
                f"found {got} eigenvalues in [{alpha}, {beta}] but inertia "
                f"says {N}; counting and extraction disagree"
            )
        last_got = got
        k = min(k + (N - got) + 4, n - 2)
    raise ConvergenceFailure(
        f"only {last_got} of {N} eigenpairs converged in [{alpha}, {beta}]",
        iterations=4,
    )


def _rayleigh_ritz(A, vecs):
    """Exact eigenpairs of A restricted to span(vecs), rank-revealed."""
    U, s, _ = np.linalg.svd(vecs, full_matrices=False)
    keep = s > 1e-8 * s[0]
    Q = U[:, keep]
    T = Q.conj().T @ (A @ Q)
    T = 0.5 * (T + T.conj().T)
    w, S = np.linalg.eigh(T)
    return w, Q @ S


@dataclass
class TraceResult:
    value: float
    method: str
    count: int
    slice: SpectralSlice = None
    evaluations: int = 0

    def as_dict(self):
        return {"value": self.value, "method": self.method, "count": self.count,
                "evaluations": self.evaluations}


def trace_phi(H, phi, max_eigenpairs=512, method="auto", tol=1e-6, seed=1234):
    """tr phi(H) for a bump phi: sum of phi over eigenvalues in supp phi.

    Uses validated eigenpairs when the count is small; otherwise quadrature
    of the counting function: the support is bisected until each piece
    either contains no eigenvalue (exact zero contribution, certified by
    monotonicity of the inertia) or phi varies less than the tolerance
    budget across it.
    """
    alpha, beta = phi.support
    slice_count = count_interval(H, (alpha, beta))
    N = slice_count.count
    if method == "auto":
        method = "eigenpairs" if N <= max_eigenpairs else "counting"
    if method == "eigenpairs":
        pairs = eigenpairs_in_interval(H, (alpha, beta), max_m=max(N, 1), seed=seed)
        value = float(np.sum(phi(pairs.eigenvalues))) if pairs.count else 0.0
        return TraceResult(value=value, method="eigenpairs", count=N, slice=pairs)
    if method != "counting":
        raise ValueError(f"unknown trace method {method!r}")

    memo = {}

    def count_below(x):
        if x not in memo:
            memo[x] = inertia_with_log(H, x)[0]
        return memo[x]

    phimax_slope = phi.max_abs_derivative
    tol_abs = tol * max(N, 1)
    total = 0.0
    stack = [(alpha, count_below(alpha), beta, count_below(beta))]
    while stack:
        a, na, b, nb = stack.pop()
        hits = nb - na
        if hits == 0:
            continue
        budget = tol_abs * (b - a) / (beta - alpha)
        if hits * phimax_slope * (b - a) <= budget or (b - a) < 1e-13 * (beta - alpha):
            total += hits * phi(0.5 * (a + b))
            continue
        m = 0.5 * (a + b)
        nm = count_below(m)
        stack.append((a, na, m, nm))
        stack.append((m, nm, b, nb))
    return TraceResult(value=float(total), method="counting", count=N,
                       evaluations=len(memo))


# ---------------------------------------------------------------------------
# localization


@dataclass
class LocalizationReport:
    """Exponential-weight masses and shell-decay fits for gap eigenpairs.

    ``masses[i, j]`` is M(c_j) = sum_x exp(2 c_j sqrt(p) d(x)) |u_i(x)|^2 dV
    for the i-th pair.  Shell masses are binned in the scaled distance
    xi = sqrt(p) * d; ``rate_scaled`` is the per-pair decay rate in xi (the
    slope of log shell-mass is -2 * rate), and ``decay_rate`` the raw rate
    per unit distance, rate_scaled * sqrt(p).  The ensemble rates are fitted
    on the mean shell profile of all pairs, which is the robust estimator
    the sqrt(p)-scaling checks consume.
    """

    p: int
    c_values: np.ndarray
    masses: np.ndarray
    excluded_mass: np.ndarray
    shell_edges_scaled: np.ndarray
    shell_masses: np.ndarray
    rate_scaled: np.ndarray
    decay_rate: np.ndarray
    ensemble_rate_scaled: float
    ensemble_decay_rate: float
    norm_defect: float

    def as_dict(self):
        return {
            "p": self.p,
            "c_values": [float(c) for c in self.c_values],
            "masses": [[float(v) for v in row] for row in self.masses],
            "excluded_mass": [float(v) for v in self.excluded_mass],
            "rate_scaled": [float(v) for v in self.rate_scaled],
            "decay_rate": [float(v) for v in self.decay_rate],
            "ensemble_rate_scaled": self.ensemble_rate_scaled,
            "ensemble_decay_rate": self.ensemble_decay_rate,
            "norm_defect": self.norm_defect,
        }


DEFAULT_C_LADDER = (0.0, 0.25, 0.5, 1.0, 1.5, 2.0)
_SHELL_FLOOR = 1e-22


def _fit_rate(centers, masses, window, floor):
    ok = (masses > floor) & (centers >= window[0]) & (centers <= window[1])
    if np.count_nonzero(ok) < 4:
        return np.nan
    x = centers[ok]
    y = np.log(masses[ok])
    A = np.vstack([x, np.ones_like(x)]).T
    slope = np.linalg.lstsq(A, y, rcond=None)[0][0]
    return -0.5 * slope


def localization_metrics(pairs, kset, p, c_ladder=None, dxi=0.5, xi_max=8.0,
                         fit_window=(1.0, 5.5)):
    """Weighted masses M(c) and shell-decay rates for validated eigenpairs.

    Vectors are renormalized to unit mass in the cell-volume quadrature, so
    M(0) = 1 up to roundoff (reported as ``norm_defect``).  Nodes at
    infinite distance (empty K) are excluded and their mass is flagged.
    """
    if c_ladder is None:
        c_ladder = DEFAULT_C_LADDER
    c_values = np.asarray(c_ladder, dtype=float)
    vectors = pairs.vectors if hasattr(pairs, "vectors") else pairs
    grid = kset.grid
    cellvol = grid.cell_volume
    d = kset.distance.ravel()
    finite = np.isfinite(d)
    m = vectors.shape[1]
    sq = np.sqrt(float(p))

    masses = np.zeros((m, len(c_values)))
    excluded = np.zeros(m)
    edges = np.arange(0.0, xi_max + dxi, dxi)
    nshell = len(edges) - 1
    shell_masses = np.zeros((m, nshell))
    xi = sq * d[finite]
    which = np.clip(np.digitize(xi, edges) - 1, 0, nshell)
    centers = 0.5 * (edges[:-1] + edges[1:])

    norm_defect = 0.0
    rate_scaled = np.zeros(m)
    for i in range(m):
        w = np.abs(vectors[:, i]) ** 2 * cellvol
        total = float(np.sum(w))
        w = w / total
        excluded[i] = float(np.sum(w[~finite]))
        wf = w[finite]
        for j, c in enumerate(c_values):
            masses[i, j] = float(np.sum(np.exp(2.0 * c * xi) * wf))
        shell_masses[i] = np.bincount(which, weights=wf, minlength=nshell + 1)[:nshell]
        if 0.0 in c_values:
            j0 = int(np.argwhere(c_values == 0.0)[0][0])
            norm_defect = max(norm_defect, abs(masses[i, j0] + excluded[i] - 1.0))
        rate_scaled[i] = _fit_rate(centers, shell_masses[i], fit_window, _SHELL_FLOOR)

    mean_shells = shell_masses.mean(axis=0) if m else np.zeros(nshell)
    ens_scaled = _fit_rate(centers, mean_shells, fit_window, _SHELL_FLOOR)
    return LocalizationReport(
        p=int(p),
        c_values=c_values,
        masses=masses,
        excluded_mass=excluded,
        shell_edges_scaled=edges,
        shell_masses=shell_masses,
        rate_scaled=rate_scaled,
        decay_rate=rate_scaled * sq,
        ensemble_rate_scaled=float(ens_scaled),
        ensemble_decay_rate=float(ens_scaled * sq),
        norm_defect=float(norm_defect),
    )


# ---------------------------------------------------------------------------
# cluster geometry


def cluster_distance(eigs, band_set, K_max):
    """Max over eigenvalues <= K_max of the distance to the band union;
    0 when every eigenvalue lies inside some band."""
    eigs = np.asarray(eigs, dtype=float)
    eigs = eigs[eigs <= K_max]
    if eigs.size == 0:
        return 0.0
    union = band_set.band_union()
    dist = np.full(eigs.shape, np.inf)
    for lo, hi in union:
        inside = (eigs >= lo) & (eigs <= hi)
        dist[inside] = 0.0
        dist = np.minimum(dist, np.minimum(np.abs(eigs - lo), np.abs(eigs - hi)))
    return float(np.max(dist))


def band_frontier_edges(band_set, K_max):
    """Endpoints of the merged band union that border a gap (or the region
    below the spectrum) inside [0, K_max]; the K_max cap itself is not a
    physical edge and is excluded."""
    edges = []
    for lo, hi in band_set.band_union():
        for e in (lo, hi):
            if e <= K_max + 1e-12:
                edges.append(e)
    return sorted(set(edges))


def band_frontier_approach(eigs, band_set, K_max):
    """How closely the spectrum approaches each band frontier edge:
    returns (max over edges of the distance to the nearest eigenvalue,
    per-edge dict).  Together with cluster_distance (the outward
    protrusion) this bounds the Hausdorff distance between the spectrum
    and the band union on [0, K_max]."""
    eigs = np.asarray(eigs, dtype=float)
    per_edge = {}
    for e in band_frontier_edges(band_set, K_max):
        per_edge[e] = float(np.min(np.abs(eigs - e))) if eigs.size else np.inf
    approach = max(per_edge.values()) if per_edge else 0.0
    return approach, per_edge
