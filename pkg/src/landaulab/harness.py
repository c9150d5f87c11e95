"""Experiment driver: declarative configs, p-sweeps, prediction-vs-
measurement comparison, power-law fits and report emission.

Predictor quantities are p-independent apart from the p^n prefactor, so
they are computed once per sweep on the (fine) predictor grid and reused
for every row.  Per-p failures are recorded in the row and the sweep
continues.  Reports serialize with sorted keys and repr-exact floats, so a
given config and seed reproduce the results payload byte for byte; wall
times and the timestamp live in a separate session block.
"""

import hashlib
import json
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy
import scipy.sparse.linalg as spla

from . import __version__
from .discretize import assemble, build_gauge
from .errors import (
    ConfigError,
    DegenerateFit,
    FluxAdjustedWarning,
    LandauLabError,
    ResolutionMarginWarning,
)
from .model import Grid, ModelSpec, sample_fields, validate_model
from .predictor import (
    TWO_PI,
    TestFunction,
    f0_pairing,
    k_set,
    local_f0,
    sigma_bands,
    weyl_measure,
)
from .spectral import (
    band_frontier_approach,
    band_frontier_edges,
    cluster_distance,
    count_interval,
    eigenpairs_in_interval,
    localization_metrics,
    trace_phi,
)

ALL_CHECKS = ("weyl", "trace", "cluster", "localization", "ldos")
MARGIN_LENGTHS = 5.0  # recommended K-set clearance from the Dirichlet wall


def config_hash(cfg_dict):
    data = json.dumps(cfg_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(data.encode()).hexdigest()


@dataclass
class ExperimentConfig:
    model: ModelSpec
    p_list: list
    intervals: list
    phi: TestFunction
    K_max: float
    checks: tuple
    seed: int
    grid_rule: dict
    predictor_nodes: list
    max_eigenpairs: int
    ldos_nodes: object
    raw: dict

    @classmethod
    def from_dict(cls, cfg):
        model = ModelSpec.from_config(cfg["model"])
        p_list = [int(p) for p in cfg.get("p", [])]
        if p_list != sorted(set(p_list)):
            raise ConfigError("p list must be strictly increasing")
        intervals = [tuple(float(x) for x in iv) for iv in cfg.get("intervals", [])]
        for lo, hi in intervals:
            if not lo < hi:
                raise ConfigError(f"bad interval [{lo}, {hi}]")
        phi_cfg = cfg.get("phi")
        phi = TestFunction(tuple(phi_cfg["support"])) if phi_cfg else None
        checks = tuple(cfg.get("checks", ["weyl"]))
        for c in checks:
            if c not in ALL_CHECKS:
                raise ConfigError(f"unknown check {c!r}; options: {ALL_CHECKS}")
        grid_rule = cfg.get("grid", {"per_magnetic_length": 8})
        if "nodes" not in grid_rule and "per_magnetic_length" not in grid_rule:
            raise ConfigError("grid rule needs 'nodes' or 'per_magnetic_length'")
        d = model.domain.d
        predictor_nodes = cfg.get("predictor_grid", {}).get("nodes", [512] * d)
        return cls(
            model=model,
            p_list=p_list,
            intervals=intervals,
            phi=phi,
            K_max=float(cfg.get("K_max", 0.0)) or None,
            checks=checks,
            seed=int(cfg.get("seed", 1234)),
            grid_rule=grid_rule,
            predictor_nodes=[int(n) for n in predictor_nodes],
            max_eigenpairs=int(cfg.get("max_eigenpairs", 512)),
            ldos_nodes=cfg.get("ldos_nodes", "mean"),
            raw=cfg,
        )

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def hash(self):
        return config_hash(self.raw)

    def grid_for(self, p, sup_b):
        dom = self.model.domain
        if "nodes" in self.grid_rule:
            return Grid.build(dom, self.grid_rule["nodes"])
        kappa = float(self.grid_rule["per_magnetic_length"])
        scale = np.sqrt(p * sup_b)
        ncells = [max(2 * int(np.ceil(kappa * L * scale / 2.0)), 4)
                  for L in dom.lengths]
        return Grid.build(dom, ncells)


def filter_quantized_p(p_list, total_flux, tol=1e-8):
    """Replace non-admissible torus p by the nearest flux-quantized value."""
    from .discretize import nearest_admissible_p

    out = []
    for p in p_list:
        quanta = p * total_flux / TWO_PI
        if abs(quanta - round(quanta)) <= tol * max(1.0, abs(quanta)):
            out.append(p)
            continue
        padj = nearest_admissible_p(p, total_flux, tol=tol)
        if padj is None:
            warnings.warn(
                f"p={p} is not flux-quantized and no admissible value is "
                "nearby; dropping it",
                FluxAdjustedWarning,
                stacklevel=2,
            )
            continue
        warnings.warn(
            f"p={p} is not flux-quantized (p*flux/2pi = {quanta:.6g}); "
            f"using p={padj} instead",
            FluxAdjustedWarning,
            stacklevel=2,
        )
        out.append(padj)
    return sorted(set(out))


@dataclass
class PowerLawFit:
    exponent: float
    amplitude: float
    r_squared: float
    exponent_stderr: float
    floored: bool = False

    def as_dict(self):
        return {
            "exponent": self.exponent,
            "amplitude": self.amplitude,
            "r_squared": self.r_squared,
            "exponent_stderr": self.exponent_stderr,
            "exponent_ci95": [self.exponent - 1.96 * self.exponent_stderr,
                              self.exponent + 1.96 * self.exponent_stderr],
            "floored": self.floored,
        }


def fit_power_law(xs, ys):
    """Least squares of log y on log x: y ~ amplitude * x^exponent."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 3:
        raise DegenerateFit("need at least 3 points")
    if np.any(ys <= 0.0):
        raise DegenerateFit("nonpositive sample in power-law fit")
    lx, ly = np.log(xs), np.log(ys)
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    fitted = A @ coef
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum((ly - fitted) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    dof = len(xs) - 2
    var = ss_res / dof if dof > 0 else 0.0
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    stderr = float(np.sqrt(var / sxx)) if sxx > 0 else np.inf
    return PowerLawFit(exponent=float(coef[0]), amplitude=float(np.exp(coef[1])),
                       r_squared=r2, exponent_stderr=stderr)


def fit_power_law_floored(xs, ys, floor):
    """fit_power_law with zero samples replaced by the resolution floor."""
    ys = np.asarray(ys, dtype=float)
    flagged = bool(np.any(ys <= 0.0))
    if flagged:
        ys = np.maximum(ys, floor)
    fit = fit_power_law(xs, ys)
    fit.floored = flagged
    return fit


# ---------------------------------------------------------------------------
# prediction stage (p-independent)


@dataclass
class PredictionCache:
    config_hash: str
    samples: object
    bands: object
    measures: dict          # interval -> sum_k mu_k
    f0: float
    refinement: dict

    def count_prediction(self, interval, p):
        n = self.samples.n
        return (p / TWO_PI) ** n * self.measures[tuple(interval)]


def build_predictions(config):
    spec = config.model
    grid = Grid.build(spec.domain, config.predictor_nodes)
    validate_model(spec, grid)
    samples = sample_fields(spec, grid)
    K_max = config.K_max or (max(hi for _, hi in config.intervals) + 1.0
                             if config.intervals else samples.min_a * 3)
    bands = sigma_bands(samples, K_max=K_max)
    fine = sample_fields(spec, grid.refine(2))
    measures = {}
    refinement = {}
    for iv in config.intervals:
        mu = _interval_measure(samples, bands, iv)
        mu_fine = _interval_measure(fine, bands, iv)
        measures[iv] = mu
        denom = max(abs(mu), abs(mu_fine), 1e-300)
        refinement[f"mu{list(iv)}"] = {"coarse": mu, "fine": mu_fine,
                                       "rel_diff": abs(mu - mu_fine) / denom}
    f0 = None
    if config.phi is not None:
        f0 = f0_pairing(samples, config.phi)
        f0_fine = f0_pairing(fine, config.phi)
        denom = max(abs(f0), abs(f0_fine), 1e-300)
        refinement["f0"] = {"coarse": f0, "fine": f0_fine,
                            "rel_diff": abs(f0 - f0_fine) / denom}
    return PredictionCache(config_hash=config.hash(), samples=samples,
                           bands=bands, measures=measures, f0=f0,
                           refinement=refinement)


def _interval_measure(samples, bands, interval):
    total = 0.0
    for k, lo, hi in bands.bands:
        if hi < interval[0] or lo > interval[1]:
            continue
        total += weyl_measure(samples, k, interval)
    return total


# ---------------------------------------------------------------------------
# per-p measurements


def _nearest_eigenvalues(H, sigma, k, seed):
    A = H.matrix
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    k = min(k, n - 2)
    delta = 1e-8 * (1.0 + abs(sigma))
    for trial in (sigma, sigma + delta, sigma - delta, sigma + 10 * delta):
        try:
            return np.sort(spla.eigsh(A, k=k, sigma=trial, which="LM", v0=v0,
                                      return_eigenvectors=False))
        except RuntimeError:
            continue
    raise LandauLabError(f"shift-invert failed near {sigma}")


def cluster_check(H, bands, K_max, spectrum_floor, seed=1234, per_edge_k=4):
    """Containment measurement for one operator.

    Counts eigenvalues in every maximal region outside the band union below
    K_max (inertia certificates), extracts any that protrude, and locates
    the eigenvalue nearest each band frontier edge.  Returns the faithful
    one-sided protrusion distance together with the frontier-approach
    distance; both are reported because the protrusion is typically zero
    (the spectrum sits strictly inside the bands) while the approach decays
    at the semiclassical rate.
    """
    union = bands.band_union()
    edges = band_frontier_edges(bands, K_max)
    pad = 1e-6
    outside = []
    lo0 = union[0][0]
    if lo0 > spectrum_floor:
        outside.append((spectrum_floor, lo0))
    cursor = union[0][1]
    for lo, hi in union[1:]:
        if lo > cursor and cursor < K_max:
            outside.append((cursor, min(lo, K_max)))
        cursor = max(cursor, hi)
    if cursor < K_max:
        outside.append((cursor, K_max))

    collected = []
    region_counts = {}
    for a, b in outside:
        if b - a <= 4 * pad:
            continue
        sl = count_interval(H, (a + pad, b - pad))
        region_counts[f"({a:.9g},{b:.9g})"] = sl.count
        if sl.count > 0:
            pairs = eigenpairs_in_interval(H, (a + pad, b - pad),
                                           max_m=max(sl.count, 1), seed=seed)
            collected.append(pairs.eigenvalues)
    for e in edges:
        collected.append(_nearest_eigenvalues(H, e, per_edge_k, seed))
    eigs = np.concatenate(collected) if collected else np.zeros(0)
    protrusion = cluster_distance(eigs, bands, K_max)
    approach, per_edge = band_frontier_approach(eigs, bands, K_max)
    return {
        "protrusion": protrusion,
        "approach": approach,
        "per_edge": {f"{e:.9g}": v for e, v in per_edge.items()},
        "outside_region_counts": region_counts,
    }


def boundary_margin_lengths(kset, p, sup_b):
    """Distance from the K-set to the Dirichlet wall, in magnetic lengths."""
    if kset.grid.periodic or kset.empty:
        return np.inf
    d = kset.distance
    wall = np.concatenate([d[0, :], d[-1, :], d[:, 0], d[:, -1]])
    return float(np.min(wall) * np.sqrt(p * sup_b))


def run_row(config, pred, p):
    """All configured measurements for a single tensor power."""
    spec = config.model
    t0 = time.time()
    sup_b = pred.samples.sup_b
    grid = config.grid_for(p, sup_b)
    gauge = build_gauge(spec, grid, p)
    H = assemble(spec, grid, p, gauge=gauge)
    row = {
        "p": p,
        "grid": list(grid.ncells),
        "flux_quanta": gauge.flux_quanta,
        "plaquette_defect": gauge.plaquette_defect,
    }
    if "weyl" in config.checks:
        counts = {}
        for iv in config.intervals:
            sl = count_interval(H, iv)
            prediction = pred.count_prediction(iv, p)
            ratio = sl.count / prediction if prediction else np.inf
            counts[f"{list(iv)}"] = {
                "measured": sl.count,
                "predicted": prediction,
                "ratio": ratio,
                "shift_log": [list(s) for s in sl.shift_log],
            }
        row["weyl"] = counts
    if "trace" in config.checks and config.phi is not None:
        tr = trace_phi(H, config.phi, max_eigenpairs=config.max_eigenpairs,
                       seed=config.seed)
        predicted = p ** pred.samples.n * pred.f0
        row["trace"] = {
            "measured": tr.value,
            "predicted": predicted,
            "rel_error": abs(tr.value - predicted) / abs(predicted),
            "method": tr.method,
            "count": tr.count,
        }
    if "cluster" in config.checks:
        floor = float(np.min(pred.samples.V)) - 1.0
        row["cluster"] = cluster_check(H, pred.bands, pred.bands.K_max,
                                       spectrum_floor=floor, seed=config.seed)
    if "localization" in config.checks:
        iv = config.intervals[0]
        samples_p = sample_fields(spec, grid)
        kset = k_set(samples_p, iv)
        margin = boundary_margin_lengths(kset, p, sup_b)
        if margin < MARGIN_LENGTHS:
            warnings.warn(
                f"K-set sits {margin:.2f} magnetic lengths from the wall "
                f"(recommended >= {MARGIN_LENGTHS}); gap eigenvalues may feel "
                "the boundary",
                ResolutionMarginWarning,
                stacklevel=2,
            )
        pairs = eigenpairs_in_interval(H, iv, max_m=config.max_eigenpairs,
                                       seed=config.seed)
        loc = localization_metrics(pairs, kset, p)
        row["localization"] = {
            "interval": list(iv),
            "count": pairs.count,
            "boundary_margin_lengths": margin,
            "ensemble_rate_scaled": loc.ensemble_rate_scaled,
            "ensemble_decay_rate": loc.ensemble_decay_rate,
            "rate_scaled_median": float(np.nanmedian(loc.rate_scaled)) if pairs.count else np.nan,
            "norm_defect": loc.norm_defect,
        }
    if "ldos" in config.checks and config.phi is not None:
        row["ldos"] = ldos_row(config, pred, H, grid)
    row["seconds"] = time.time() - t0
    return row


def ldos_row(config, pred, H, grid):
    """p^{-n} K_phi(x,x) against the leading local density of states."""
    phi = config.phi
    pairs = eigenpairs_in_interval(H, phi.support, max_m=config.max_eigenpairs,
                                   seed=config.seed)
    n_dim = pred.samples.n
    p = H.p
    samples_p = sample_fields(config.model, grid)
    cellvol = grid.cell_volume
    if pairs.count == 0:
        kdiag = np.zeros(grid.shape)
    else:
        weights = phi(pairs.eigenvalues)
        kdiag = ((np.abs(pairs.vectors) ** 2) @ weights).reshape(grid.shape) / cellvol
    measured = kdiag / p ** n_dim
    if config.ldos_nodes == "mean":
        # node-averaged comparison: mean of K over all nodes against the mean
        # of f0 over a strided probe (f0 is smooth, a coarse probe suffices)
        mean_meas = float(np.mean(measured))
        stride = [max(s // 16, 1) for s in grid.shape]
        probe = [tuple(i * st for i, st in zip(idx, stride))
                 for idx in np.ndindex(*[s // st for s, st in zip(grid.shape, stride)])]
        f0_mean = float(np.mean([local_f0(samples_p, phi, node) for node in probe]))
        rel = abs(mean_meas - f0_mean) / max(abs(f0_mean), 1e-300)
        return {"mode": "mean", "measured_mean": mean_meas,
                "predicted_mean": f0_mean, "rel_deviation": rel,
                "count": pairs.count}
    rows = []
    for node in config.ldos_nodes:
        node = tuple(int(i) for i in node)
        f0_val = local_f0(samples_p, phi, node)
        meas = float(measured[node])
        rows.append({"node": list(node), "measured": meas, "predicted": f0_val,
                     "rel_deviation": abs(meas - f0_val) / max(abs(f0_val), 1e-300)})
    return {"mode": "nodes", "rows": rows, "count": pairs.count}


# ---------------------------------------------------------------------------
# sweep


@dataclass
class ExperimentReport:
    provenance: dict
    predictions: dict
    rows: list
    fits: dict
    session: dict = field(default_factory=dict)

    def results_payload(self):
        return {"provenance": self.provenance, "predictions": self.predictions,
                "rows": self.rows, "fits": self.fits}

    def to_json(self):
        payload = dict(self.results_payload())
        payload["session"] = self.session
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def write(self, outdir):
        os.makedirs(outdir, exist_ok=True)
        path = os.path.join(outdir, "report.json")
        with open(path, "w") as fh:
            fh.write(self.to_json())
        csv_path = os.path.join(outdir, "report.csv")
        with open(csv_path, "w") as fh:
            fh.write(self._csv())
        return path

    def _csv(self):
        keys = sorted({k for row in self.rows for k in _flatten(row)})
        lines = [",".join(keys)]
        for row in self.rows:
            flat = _flatten(row)
            lines.append(",".join(str(flat.get(k, "")) for k in keys))
        return "\n".join(lines) + "\n"


def _flatten(obj, prefix=""):
    out = {}
    if isinstance(obj, dict):
        for k, v in obj.items():
            out.update(_flatten(v, f"{prefix}{k}." if prefix else f"{k}."))
    elif isinstance(obj, (list, tuple)):
        out[prefix[:-1]] = ";".join(str(x) for x in obj)
    else:
        out[prefix[:-1]] = obj
    return out


def run_sweep(config):
    """Execute every configured check for every p; per-p failures are
    recorded in the row and do not abort the sweep."""
    t_start = time.time()
    pred = build_predictions(config)
    p_list = config.p_list
    if config.model.domain.periodic:
        flux = float(np.mean(pred.samples.b)) * config.model.domain.volume
        p_list = filter_quantized_p(p_list, flux)

    workers = int(os.environ.get("LANDAU_THREADS", "1"))
    rows = []
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {pool.submit(_safe_row, config, pred, p): p for p in p_list}
            rows = [f.result() for f in futs]
    else:
        rows = [_safe_row(config, pred, p) for p in p_list]
    rows.sort(key=lambda r: r["p"])

    fits = _sweep_fits(config, rows)
    provenance = {
        "config_hash": config.hash(),
        "config": config.raw,
        "seed": config.seed,
        "versions": {"landaulab": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__},
    }
    predictions = {
        "bands": pred.bands.as_dict(),
        "measures": {f"{list(iv)}": mu for iv, mu in pred.measures.items()},
        "f0_pairing": pred.f0,
        "refinement": pred.refinement,
        "predictor_grid": list(config.predictor_nodes),
    }
    report = ExperimentReport(provenance=provenance, predictions=predictions,
                              rows=rows, fits=fits)
    report.session = {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
                      "seconds": time.time() - t_start}
    return report


def _safe_row(config, pred, p):
    try:
        return run_row(config, pred, p)
    except LandauLabError as exc:
        return {"p": p, "error": f"{type(exc).__name__}: {exc}"}


def _sweep_fits(config, rows):
    fits = {}
    ok = [r for r in rows if "error" not in r]
    ps = [r["p"] for r in ok]
    if len(ps) < 3:
        return fits
    if "weyl" in config.checks and config.intervals:
        key = f"{list(config.intervals[0])}"
        devs = [abs(r["weyl"][key]["ratio"] - 1.0) for r in ok]
        floor = 0.5 / max(r["weyl"][key]["predicted"] for r in ok)
        try:
            fits["weyl_ratio_deviation"] = fit_power_law_floored(ps, devs, floor).as_dict()
        except DegenerateFit:
            pass
    if "trace" in config.checks and all("trace" in r for r in ok):
        errs = [r["trace"]["rel_error"] for r in ok]
        try:
            fits["trace_rel_error"] = fit_power_law_floored(ps, errs, 1e-12).as_dict()
        except DegenerateFit:
            pass
    if "cluster" in config.checks and all("cluster" in r for r in ok):
        approach = [r["cluster"]["approach"] for r in ok]
        protr = [r["cluster"]["protrusion"] for r in ok]
        try:
            fits["cluster_approach"] = fit_power_law_floored(ps, approach, 1e-12).as_dict()
        except DegenerateFit:
            pass
        try:
            fits["cluster_protrusion"] = fit_power_law_floored(ps, protr, 1e-12).as_dict()
        except DegenerateFit:
            pass
    if "localization" in config.checks and all("localization" in r for r in ok):
        rates = [r["localization"]["ensemble_decay_rate"] for r in ok]
        if all(np.isfinite(rates)) and len(rates) >= 3:
            try:
                fits["localization_rate"] = fit_power_law(ps, rates).as_dict()
            except DegenerateFit:
                pass
    return fits


def ldos_check(config, nodes=None):
    """Standalone LDOS comparison across the sweep (spec surface)."""
    if nodes is not None:
        config.ldos_nodes = nodes
    pred = build_predictions(config)
    out = []
    for p in config.p_list:
        grid = config.grid_for(p, pred.samples.sup_b)
        H = assemble(config.model, grid, p)
        out.append({"p": p, **ldos_row(config, pred, H, grid)})
    return out
