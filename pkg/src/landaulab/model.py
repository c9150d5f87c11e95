"""Continuous problem data and its sampling onto computational grids.

A model is a domain (flat torus or Dirichlet rectangle, even dimension),
a metric g, a magnetic two-form, an electric potential V and a declared
uniform lower bound b0 for the frame eigenvalues.  Sampling is a pure
function of (spec, grid): identical inputs give bitwise-identical arrays.

Coordinate conventions: torus nodes sit at i*h_i in [0, L_i); rectangle
nodes are the interior points of a centered box, -L_i/2 + i*h_i for
i = 1..N_i-1 (the boundary rows carry the Dirichlet condition and are not
sampled).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    MetricNotSPD,
    NonDegeneracyViolation,
    ResolutionGateError,
)
from .expr import FieldExpression

RESOLUTION_GATE = 0.125  # max h*sqrt(p*sup b): at least 8 nodes per magnetic length


@dataclass(frozen=True)
class Domain:
    kind: str  # 'torus' | 'rectangle'
    lengths: tuple

    def __post_init__(self):
        if self.kind not in ("torus", "rectangle"):
            raise ConfigError(f"unknown domain kind {self.kind!r}")
        if len(self.lengths) % 2 != 0:
            raise ConfigError("dimension must be even (d = 2n)")
        if any(L <= 0 for L in self.lengths):
            raise ConfigError("side lengths must be positive")

    @classmethod
    def torus(cls, *lengths):
        return cls("torus", tuple(float(L) for L in lengths))

    @classmethod
    def rectangle(cls, *lengths):
        return cls("rectangle", tuple(float(L) for L in lengths))

    @property
    def d(self):
        return len(self.lengths)

    @property
    def periodic(self):
        return self.kind == "torus"

    @property
    def volume(self):
        return float(np.prod(self.lengths))


@dataclass(frozen=True)
class Grid:
    """Tensor grid over a domain: N_i cells per dimension, h_i = L_i/N_i."""

    domain: Domain
    ncells: tuple
    h: tuple = field(init=False)
    axes: tuple = field(init=False)

    def __post_init__(self):
        if len(self.ncells) != self.domain.d:
            raise ConfigError("grid rank does not match domain dimension")
        if any(n < 2 for n in self.ncells):
            raise ConfigError("need at least 2 cells per dimension")
        h = tuple(L / n for L, n in zip(self.domain.lengths, self.ncells))
        if self.domain.periodic:
            axes = tuple(np.arange(n) * hi for n, hi in zip(self.ncells, h))
        else:
            axes = tuple(
                -L / 2 + np.arange(1, n) * hi
                for L, n, hi in zip(self.domain.lengths, self.ncells, h)
            )
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "axes", axes)

    @classmethod
    def build(cls, domain, ncells):
        return cls(domain, tuple(int(n) for n in ncells))

    @property
    def periodic(self):
        return self.domain.periodic

    @property
    def shape(self):
        return tuple(len(ax) for ax in self.axes)

    @property
    def nnodes(self):
        return int(np.prod(self.shape))

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    def refine(self, factor=2):
        return Grid.build(self.domain, [factor * n for n in self.ncells])

    def meshes(self):
        return np.meshgrid(*self.axes, indexing="ij")

    def env(self):
        """Expression environment: coordinates, r2 and domain lengths."""
        xs = self.meshes()
        env = {f"x{i + 1}": x for i, x in enumerate(xs)}
        env["r2"] = sum(x * x for x in xs)
        for i, L in enumerate(self.domain.lengths):
            env[f"L{i + 1}"] = L
        return env

    def resolution_ok(self, p, sup_b):
        """Gate: h_i * sqrt(p * sup b) <= 1/8 for every direction."""
        if sup_b <= 0:
            return True
        scale = np.sqrt(p * sup_b)
        return max(self.h) * scale <= RESOLUTION_GATE * (1 + 1e-12)

    def check_resolution(self, p, sup_b):
        if not self.resolution_ok(p, sup_b):
            need = [int(np.ceil(L * np.sqrt(p * sup_b) / RESOLUTION_GATE))
                    for L in self.domain.lengths]
            raise ResolutionGateError(
                f"grid {self.ncells} under-resolves the magnetic length at p={p} "
                f"(sup b = {sup_b:.6g}); need at least {need} cells"
            )


def _as_expr(obj):
    return obj if isinstance(obj, FieldExpression) else FieldExpression(obj)


@dataclass(frozen=True)
class ModelSpec:
    """Problem data: domain, metric, two-form, potential and the bound b0.

    For d=2 the magnetic field is given by the scalar b with B = b dv_g
    (so the frame eigenvalue is a_1 = |b| regardless of the metric).  In
    general even dimension the two-form is given entrywise above the
    diagonal and mirrored, which keeps antisymmetry exact by construction.
    """

    domain: Domain
    potential: FieldExpression
    b0: float
    field_b: FieldExpression = None           # d=2 scalar route
    two_form: tuple = None                    # tuple of tuples of FieldExpression, i<j
    metric: tuple = None                      # None means identity

    def __post_init__(self):
        if (self.field_b is None) == (self.two_form is None):
            raise ConfigError("specify exactly one of field_b (d=2) or two_form")
        if self.field_b is not None and self.domain.d != 2:
            raise ConfigError("scalar field_b is only meaningful for d=2")
        if self.b0 <= 0:
            raise ConfigError("b0 must be positive")

    @property
    def identity_metric(self):
        return self.metric is None

    @classmethod
    def from_config(cls, cfg):
        try:
            dom = Domain(cfg["domain"]["type"], tuple(float(x) for x in cfg["domain"]["lengths"]))
            potential = _as_expr(cfg.get("potential", "0"))
            b0 = float(cfg["b0"])
        except KeyError as exc:
            raise ConfigError(f"missing model config key: {exc.args[0]!r}") from None
        field_b = cfg.get("field_b")
        two_form = cfg.get("two_form")
        if field_b is not None:
            field_b = _as_expr(field_b)
        if two_form is not None:
            d = dom.d
            if len(two_form) != d or any(len(row) != d for row in two_form):
                raise ConfigError("two_form must be a d x d matrix of expressions")
            two_form = tuple(
                tuple(_as_expr(two_form[i][j]) if j > i else None for j in range(d))
                for i in range(d)
            )
        metric = cfg.get("metric", "identity")
        if metric == "identity":
            metric = None
        else:
            d = dom.d
            if len(metric) != d or any(len(row) != d for row in metric):
                raise ConfigError("metric must be 'identity' or a d x d matrix")
            metric = tuple(tuple(_as_expr(e) for e in row) for row in metric)
        return cls(domain=dom, potential=potential, b0=b0, field_b=field_b,
                   two_form=two_form, metric=metric)

    def config_dict(self):
        """Round-trippable plain-dict form (used for hashing/provenance)."""
        out = {
            "domain": {"type": self.domain.kind, "lengths": list(self.domain.lengths)},
            "potential": self.potential.text,
            "b0": self.b0,
        }
        if self.field_b is not None:
            out["field_b"] = self.field_b.text
        if self.two_form is not None:
            d = self.domain.d
            out["two_form"] = [
                ["0" if j <= i else self.two_form[i][j].text for j in range(d)]
                for i in range(d)
            ]
        out["metric"] = ("identity" if self.metric is None
                         else [[e.text for e in row] for row in self.metric])
        return out


@dataclass(frozen=True)
class FieldSamples:
    """Field values at grid nodes.

    ``a`` has shape grid.shape + (n,), sorted ascending along the last axis.
    ``sqrt_g`` may be the scalar 1.0 for the identity metric.  ``b`` is the
    d=2 scalar field when the model was given that way, else None.
    """

    grid: Grid
    V: np.ndarray
    a: np.ndarray
    sqrt_g: np.ndarray
    b: np.ndarray = None
    two_form: np.ndarray = None
    g: np.ndarray = None

    @property
    def n(self):
        return self.a.shape[-1]

    @property
    def sup_b(self):
        """Largest frame eigenvalue over the grid (sets the magnetic length)."""
        return float(np.max(self.a))

    @property
    def min_a(self):
        return float(np.min(self.a))

    def liouville_density(self):
        """prod_j a_j(x) * sqrt|g|(x), the density of the Liouville measure."""
        return np.prod(self.a, axis=-1) * self.sqrt_g


def _eval_on_grid(expr, env, shape):
    val = expr.eval_env(env)
    return np.broadcast_to(np.asarray(val, dtype=float), shape).copy()


def sample_fields(spec, grid):
    """Evaluate all model fields at the grid nodes.

    Frame eigenvalues are computed per node from (g, B); for the d=2 scalar
    route they reduce to |b| exactly.
    """
    from .predictor import frame_eigenvalues_batched

    env = grid.env()
    shape = grid.shape
    d = spec.domain.d
    V = _eval_on_grid(spec.potential, env, shape)

    g = None
    sqrt_g = 1.0
    if spec.metric is not None:
        g = np.empty(shape + (d, d))
        for i in range(d):
            for j in range(d):
                g[..., i, j] = _eval_on_grid(spec.metric[i][j], env, shape)
        if not np.array_equal(g, np.swapaxes(g, -1, -2)):
            raise MetricNotSPD("metric matrix is not exactly symmetric")
        eig = np.linalg.eigvalsh(g)
        if np.min(eig) <= 0:
            raise MetricNotSPD(
                f"metric has nonpositive eigenvalue {np.min(eig):.6g} at a node"
            )
        sqrt_g = np.sqrt(np.prod(eig, axis=-1))

    b = None
    two_form = None
    if spec.field_b is not None:
        b = _eval_on_grid(spec.field_b, env, shape)
        # B = b dv_g: the single frame eigenvalue is |b| for any metric
        a = np.abs(b)[..., None]
    else:
        two_form = np.empty(shape + (d, d))
        for i in range(d):
            for j in range(d):
                if j > i:
                    two_form[..., i, j] = _eval_on_grid(spec.two_form[i][j], env, shape)
            two_form[..., i, i] = 0.0
        for i in range(d):
            for j in range(i):
                two_form[..., i, j] = -two_form[..., j, i]
        a = frame_eigenvalues_batched(g, two_form)
    return FieldSamples(grid=grid, V=V, a=a, sqrt_g=sqrt_g, b=b,
                        two_form=two_form, g=g)


@dataclass
class ValidationReport:
    passed: bool
    min_a: float
    b0: float
    sup_V: float
    inf_V: float
    metric_cond_max: float
    messages: list

    def as_dict(self):
        return {
            "passed": self.passed,
            "min_a": self.min_a,
            "b0": self.b0,
            "sup_V": self.sup_V,
            "inf_V": self.inf_V,
            "metric_cond_max": self.metric_cond_max,
            "messages": list(self.messages),
        }


def validate_model(spec, grid):
    """Check the standing assumptions on the sample grid.

    Raises NonDegeneracyViolation / MetricNotSPD on failure; returns a
    ValidationReport on success.  Only pointwise bounds at the nodes are
    checked (boundedness of derivatives is assumed, not verified).
    """
    try:
        samples = sample_fields(spec, grid)
    except MetricNotSPD:
        raise
    messages = []
    cond = 1.0
    if samples.g is not None:
        eig = np.linalg.eigvalsh(samples.g)
        cond = float(np.max(eig[..., -1] / eig[..., 0]))
    V = samples.V
    if not np.all(np.isfinite(V)):
        raise ConfigError("potential is not finite at some node")
    report = ValidationReport(
        passed=True,
        min_a=samples.min_a,
        b0=spec.b0,
        sup_V=float(np.max(V)),
        inf_V=float(np.min(V)),
        metric_cond_max=cond,
        messages=messages,
    )
    if samples.min_a < spec.b0:
        report.passed = False
        messages.append(
            f"min frame eigenvalue {samples.min_a:.6g} < declared b0 {spec.b0:.6g}"
        )
        raise NonDegeneracyViolation(messages[-1])
    if samples.two_form is not None:
        asym = samples.two_form + np.swapaxes(samples.two_form, -1, -2)
        if np.any(asym != 0.0):
            report.passed = False
            raise ConfigError("two-form is not exactly antisymmetric")
    return report
