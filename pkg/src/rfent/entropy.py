"""Weighted and unweighted forward reduced volumes, the l+ identity suite,
the rescaling law and the l+ lower bound."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import jax.numpy as jnp
import numpy as np

from . import lgeodesic as lg
from .errors import ConfigurationError, CoverageError, PreconditionError
from .geometry import curvature as cv
from .geometry import models as gm
from .quadrature import Nodes, QuadratureScheme, radial_nodes_on, sphere_area
from .variation import density_many

MAX_FAILED_FRACTION = 0.2
RELATIVE_FLOOR = 1e-8
MONOTONE_SLACK = 1e-6


def rigidity_constant(n):
    """(4 pi)^{n/2}, the flat-space value of the weighted volume."""
    return (4.0 * math.pi) ** (n / 2)


def _as_scheme(scheme):
    return QuadratureScheme() if scheme is None else QuadratureScheme.from_spec(scheme)


def _check_t(model, t):
    t = float(t)
    model.check_time(t)
    if t <= 0:
        raise ConfigurationError(f"time must be positive, got {t}")
    return t


# --------------------------------------------------------------------------
# Omega(t) on finite-diameter models


def omega_radius(model, t, *, rounds=6, lanes=63):
    """|V| beyond which the radial geodesic leaves Omega(t) before time t.

    Infinite on models without conjugate points. Found by repeated
    multisection on batches of radial shots.
    """
    if not math.isfinite(model.diameter):
        return math.inf
    n = model.dim

    def inside(r):
        V = np.zeros((len(r), n))
        V[:, 0] = r
        tab = density_many(model, V, [t])
        return tab.in_omega[:, 0] & ~tab.failed

    lo, hi = 0.0, 1.0
    while inside(np.array([hi]))[0]:
        lo, hi = hi, 2.0 * hi
    for _ in range(rounds):
        r = np.linspace(lo, hi, lanes + 2)[1:-1]
        ok = inside(r)
        k = int(np.argmin(ok)) if not ok.all() else len(r)
        lo = r[k - 1] if k > 0 else lo
        hi = r[k] if k < len(r) else hi
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# weighted volume


@dataclass(frozen=True)
class VolumeEstimate:
    t: float
    value: float
    error: float
    omega_fraction: float
    failed_fraction: float
    nodes: int
    scheme: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _nodes_for(model, t, scheme):
    """Rule for the integral at time t; radial rules on finite-diameter models
    are restricted to the ball |V| < omega_radius so the integrand is smooth."""
    n = model.dim
    if scheme.kind == "radial-spherical":
        if not model.isotropic:
            raise ConfigurationError("the radial rule needs a rotationally symmetric model")
        r_star = omega_radius(model, t)
        if math.isfinite(r_star):
            return radial_nodes_on(n, r_star, scheme.order)
    return scheme.nodes(n)


def _sum(model, nodes, t_grid, jobs):
    tab = density_many(model, nodes.V, t_grid, jobs=jobs)
    failed_frac = float(np.mean(tab.failed))
    if failed_frac > MAX_FAILED_FRACTION:
        raise CoverageError(f"{failed_frac:.0%} of quadrature nodes failed to shoot")
    dens = np.where(tab.failed[:, None], 0.0, tab.density)
    return nodes.weights @ dens, tab, failed_frac


def weighted_volume(model, t, scheme=None, *, jobs=1):
    """Weighted forward reduced volume at time ``t`` with an error estimate.

    The estimate compares against the rule of half the order (Gaussian rules)
    or uses the sample standard error (Monte Carlo), and never drops below a
    relative floor set by the ODE tolerances.
    """
    scheme = _as_scheme(scheme)
    scheme.check_dim(model.dim)
    t = _check_t(model, t)
    nodes = _nodes_for(model, t, scheme)
    val, tab, failed = _sum(model, nodes, [t], jobs)
    value = float(val[0])
    if scheme.kind == "monte-carlo":
        contrib = nodes.weights * np.where(tab.failed, 0.0, tab.density[:, 0])
        err = float(np.std(contrib) * math.sqrt(len(contrib)))
    else:
        half, _, _ = _sum(model, _nodes_for(model, t, scheme.halved()), [t], jobs)
        err = abs(value - float(half[0]))
    err = max(err, RELATIVE_FLOOR * abs(value))
    return VolumeEstimate(
        t=t, value=value, error=err, omega_fraction=float(np.mean(tab.in_omega[:, 0] & ~tab.failed)),
        failed_fraction=failed, nodes=len(nodes.weights), scheme=asdict(scheme),
    )


# --------------------------------------------------------------------------
# monotonicity report


@dataclass(frozen=True)
class EntropyReport:
    model: str
    dim: int
    t_grid: np.ndarray
    Vtilde: np.ndarray
    Vtilde_err: np.ndarray
    omega_fraction: np.ndarray
    theta: np.ndarray
    monotone_pass: bool
    nodewise_pass: bool
    bound_pass: bool

    @property
    def bound_gap(self):
        return rigidity_constant(self.dim) - self.Vtilde

    @property
    def passed(self):
        return self.monotone_pass and self.nodewise_pass and self.bound_pass

    def rows(self):
        for i, t in enumerate(self.t_grid):
            yield {
                "t": float(t),
                "Vtilde": float(self.Vtilde[i]),
                "Vtilde_err": float(self.Vtilde_err[i]),
                "theta": float(self.theta[i]),
                "omega_fraction": float(self.omega_fraction[i]),
                "bound_gap": float(self.bound_gap[i]),
                "monotone_pass": self.monotone_pass,
            }

    def write_csv(self, path):
        fields = ["t", "Vtilde", "Vtilde_err", "theta", "omega_fraction", "bound_gap", "monotone_pass"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            for row in self.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else str(v).lower()) for k, v in row.items()})


def non_increasing(values, slack=MONOTONE_SLACK):
    values = np.asarray(values)
    return bool(np.all(values[..., 1:] <= values[..., :-1] * (1.0 + slack)))


def monotonicity_report(model, t_grid, scheme=None, *, jobs=1, theta_mesh=None):
    """Weighted volume along ``t_grid`` with shared nodes.

    Every node is followed through all times on one trajectory, so the
    nodewise density check is exact. On finite-diameter models with the radial
    rule the reported values use the Omega(t)-adapted rule at each time while
    the nodewise check still runs on the shared Laguerre nodes.
    """
    scheme = _as_scheme(scheme)
    scheme.check_dim(model.dim)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) == 0 or np.any(np.diff(t_grid) <= 0):
        raise ConfigurationError("t_grid must be a non-empty increasing sequence")
    for t in t_grid:
        _check_t(model, t)
    n = model.dim
    shared = scheme.nodes(n)
    vals, tab, _ = _sum(model, shared, t_grid, jobs)
    live = ~tab.failed
    dens = tab.density[live]
    nodewise = bool(np.all(dens[:, 1:] <= dens[:, :-1] * (1.0 + MONOTONE_SLACK) + 1e-300))
    omega = np.mean(tab.in_omega & live[:, None], axis=0)
    split = scheme.kind == "radial-spherical" and math.isfinite(model.diameter)
    if split or scheme.kind == "monte-carlo":
        est = [weighted_volume(model, t, scheme, jobs=jobs) for t in t_grid]
        values = np.array([e.value for e in est])
        errs = np.array([e.error for e in est])
    else:
        half, _, _ = _sum(model, scheme.halved().nodes(n), t_grid, jobs)
        values = np.asarray(vals)
        errs = np.maximum(np.abs(values - half), RELATIVE_FLOOR * np.abs(values))
    theta = np.full(len(t_grid), np.nan)
    if theta_mesh is not None:
        for i, t in enumerate(t_grid):
            th = theta_volume(model, t, theta_mesh)
            theta[i] = th.value if th.converged else np.nan
    cap = rigidity_constant(n) * (1.0 + MONOTONE_SLACK)
    return EntropyReport(
        model=model.name, dim=n, t_grid=t_grid, Vtilde=values, Vtilde_err=errs, omega_fraction=omega,
        theta=theta, monotone_pass=non_increasing(values), nodewise_pass=nodewise,
        bound_pass=bool(np.all((values > 0) & (values <= cap))),
    )


# --------------------------------------------------------------------------
# unweighted volume


@dataclass(frozen=True)
class ThetaResult:
    t: float
    value: float
    converged: bool
    domains: tuple
    values: tuple
    reason: str = ""


def _ray_seeds(model, t, d_targets):
    """Initial vectors along the first axis whose geodesics end near the
    requested g(0)-distances, interpolated from a table of radial shots."""
    n = model.dim
    r_max = 1.0
    for _ in range(40):
        V = np.zeros((1, n))
        V[0, 0] = r_max
        ys, status, _ = lg.run_batch(model, V, np.array([0.0, math.sqrt(t)]))
        reach = model.distance_from_basepoint(ys[0, -1, :n]) if status[0] == 0 else math.inf
        if reach >= d_targets.max():
            break
        r_max *= 2.0
    r = np.linspace(0.0, r_max, 257)
    V = np.zeros((len(r), n))
    V[:, 0] = r
    ys, status, _ = lg.run_batch(model, V, np.array([0.0, math.sqrt(t)]))
    ok = status == 0
    d = np.array([model.distance_from_basepoint(y[-1, :n]) for y in ys[ok]])
    r_ok = r[ok]
    keep = np.concatenate([[True], np.diff(d) > 0])
    seeds = np.zeros((len(d_targets), n))
    seeds[:, 0] = np.interp(d_targets, d[keep], r_ok[keep])
    return seeds


def _theta_on(model, t, d_max, mesh, order):
    n = model.dim
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, d_max, mesh + 1)
    d = (0.5 * (edges[:-1, None] + edges[1:, None]) + 0.5 * np.diff(edges)[:, None] * x).ravel()
    wd = (0.5 * np.diff(edges)[:, None] * w).ravel()
    u = np.array([model.chart_radius(di) for di in d])
    pts = np.zeros((len(d), n))
    pts[:, 0] = u
    L, _ = lg.lplus_many(model, pts, t, _ray_seeds(model, t, d))
    l_plus = L / (2.0 * math.sqrt(t))
    w0 = np.array([float(gm.conformal_factor(model, jnp.asarray(p), 0.0)) for p in pts])
    wt = np.array([float(gm.conformal_factor(model, jnp.asarray(p), t)) for p in pts])
    area = sphere_area(n) * (np.sqrt(w0) * u) ** (n - 1) * (wt / w0) ** (n / 2)
    return float(np.sum(wd * t ** (-n / 2) * np.exp(l_plus) * area))


def theta_volume(model, t, mesh=16, *, order=8, domain=None, growth_tol=1e-3):
    """Unweighted forward reduced volume by radial integration over distance.

    On compact models the whole manifold (up to the chart's exit radius) is
    integrated. Otherwise the integral is evaluated on a ball and on the ball
    of twice the radius; a relative change above ``growth_tol`` is reported
    as divergence instead of a value.
    """
    if int(mesh) < 2:
        raise ConfigurationError(f"theta mesh needs at least two cells, got {mesh}")
    if not model.isotropic:
        raise ConfigurationError("theta_volume integrates along a ray and needs a symmetric model")
    t = _check_t(model, t)
    mesh = int(mesh)
    if math.isfinite(model.diameter):
        u_exit = 0.5 * gm.SPHERE_EXIT_RADIUS / math.sqrt(float(model.kappa))
        d_max = min(model.diameter, model.distance_from_basepoint(np.array([u_exit])))
        value = _theta_on(model, t, d_max, mesh, order)
        return ThetaResult(t, value, True, (d_max,), (value,))
    d0 = domain if domain is not None else 8.0 * math.sqrt(t * float(model.scale))
    a = _theta_on(model, t, d0, mesh, order)
    b = _theta_on(model, t, 2.0 * d0, mesh, order)
    if not (math.isfinite(a) and math.isfinite(b)) or abs(b - a) > growth_tol * abs(a):
        return ThetaResult(t, math.inf, False, (d0, 2 * d0), (a, b),
                           reason=f"integral grew by a factor {b / a:.3g} when the domain doubled")
    return ThetaResult(t, b, True, (d0, 2 * d0), (a, b))


# --------------------------------------------------------------------------
# identity suite


@dataclass(frozen=True)
class IdentityRow:
    relation: str
    kind: str
    lhs: float
    rhs: float
    residual: float
    passed: bool


@dataclass(frozen=True)
class IdentityTable:
    y: np.ndarray
    t: float
    rows: tuple
    skipped: str | None = None

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    def to_dicts(self):
        return [asdict(r) for r in self.rows]


def _five_point(f_m2, f_m1, f_0, f_p1, f_p2, h):
    d1 = (f_m2 - 8 * f_m1 + 8 * f_p1 - f_p2) / (12 * h)
    d2 = (-f_m2 + 16 * f_m1 - 30 * f_0 + 16 * f_p1 - f_p2) / (12 * h * h)
    return d1, d2


def identity_suite(model, y, t, *, h=1e-2, ht=1e-2, tol=1e-4):
    """Residuals of the five l+ relations at ``(y, t)``.

    Derivatives of l+ come from fourth-order central differences, with the
    spatial step ``h`` measured in g(t)-length and ``ht`` relative to ``t``.
    The chart metric of every analytic model is diagonal, which the Laplacian
    relies on.
    """
    y = np.asarray(y, dtype=float)
    n = model.dim
    t = _check_t(model, t)
    roots = lg.shooting_roots(model, y, t)
    if not roots.unique:
        return IdentityTable(y, t, (), skipped="several minimising shooting roots (cut locus)")
    V = roots.V[0]
    geod = lg.shoot(model, V, t, with_k=True)
    bundle = cv.curvature_at(model, y, t)
    if np.any(np.abs(bundle.g - np.diag(np.diag(bundle.g))) > 1e-14):
        raise ConfigurationError("identity suite expects a diagonal chart metric")
    hx = h / math.sqrt(float(np.max(np.diag(bundle.g))))
    dt = ht * t
    offsets = (-2, -1, 1, 2)
    pts, ts = [], []
    for i in range(n):
        for k in offsets:
            pts.append(y + k * hx * np.eye(n)[i])
            ts.append(t)
    for k in offsets:
        pts.append(y)
        ts.append(t + k * dt)
    ts = np.array(ts)
    L, _ = lg.lplus_many(model, np.array(pts), ts, np.tile(V, (len(pts), 1)))
    l_vals = L / (2.0 * np.sqrt(ts))
    l0 = geod.length / (2.0 * math.sqrt(t))
    grad = np.zeros(n)
    hess_diag = np.zeros(n)
    for i in range(n):
        m2, m1, p1, p2 = l_vals[4 * i: 4 * i + 4]
        grad[i], hess_diag[i] = _five_point(m2, m1, l0, p1, p2, hx)
    m2, m1, p1, p2 = l_vals[4 * n:]
    l_t, _ = _five_point(m2, m1, l0, p1, p2, dt)
    ginv = np.linalg.inv(bundle.g)
    grad_sq = float(grad @ ginv @ grad)
    lap = float(np.sum(np.diag(ginv) * hess_diag) - np.einsum("ij,kij,k->", ginv, bundle.christoffel, grad))
    R, K = float(bundle.R), float(geod.K)
    t32 = t**1.5
    spec = [
        ("dl/dt", "equality", l_t, R - l0 / t - K / (2 * t32)),
        ("|grad l|^2", "equality", grad_sq, l0 / t - R + K / t32),
        ("laplacian bound", "inequality", lap, R + n / (2 * t) - K / (2 * t32)),
        ("heat-type inequality", "inequality", l_t + lap + grad_sq - R - n / (2 * t), 0.0),
        ("trace inequality", "inequality", 2 * lap + grad_sq - R - (l0 + n) / t, 0.0),
    ]
    rows = []
    for name, kind, lhs, rhs in spec:
        res = lhs - rhs
        ok = abs(res) <= tol if kind == "equality" else res <= tol
        rows.append(IdentityRow(name, kind, float(lhs), float(rhs), float(res), bool(ok)))
    return IdentityTable(y, t, tuple(rows))


# --------------------------------------------------------------------------
# rescaling


@dataclass(frozen=True)
class RescaleResult:
    lam: float
    t: float
    rescaled: float
    original: float
    difference: float
    tolerance: float

    @property
    def passed(self):
        return self.difference <= self.tolerance

    def to_dict(self):
        return asdict(self)


def rescale_check(model, lam, t, scheme=None, *, jobs=1):
    """Weighted volume of ``lam g(t / lam)`` at ``t`` against the original at ``t / lam``."""
    rescaled = model.rescaled(lam)
    model.check_time(t / lam)
    a = weighted_volume(rescaled, t, scheme, jobs=jobs)
    b = weighted_volume(model, t / lam, scheme, jobs=jobs)
    return RescaleResult(float(lam), float(t), a.value, b.value, abs(a.value - b.value), a.error + b.error)


# --------------------------------------------------------------------------
# lower bound for l+


@dataclass(frozen=True)
class LowerBoundReport:
    t: float
    c: float
    points: np.ndarray
    l_plus: np.ndarray
    bound: np.ndarray
    ricci_min: float
    ricci_max: float

    @property
    def margin(self):
        return self.l_plus - self.bound

    @property
    def passed(self):
        return bool(np.all(self.margin >= -1e-8))

    @property
    def upper_ricci_certified(self):
        """Whether Rc <= c g also held on the samples (needed by the comparison argument)."""
        return self.ricci_max <= self.c + 1e-12


def ricci_range(model, radius, t, *, radial=9, times=9):
    """Extreme eigenvalues of Rc (relative to g) over sampled points of the
    chart ball of g(0)-radius ``radius`` and times in [0, t]."""
    n = model.dim
    lo, hi = math.inf, -math.inf
    dirs = np.vstack([np.eye(n), -np.eye(n), np.ones((1, n)) / math.sqrt(n)])
    for d in np.linspace(0.0, radius, radial):
        u = model.chart_radius(d)
        for e in dirs:
            for s in np.linspace(0.0, t, times):
                ev = cv.ricci_eigenvalues(model, u * e, s)
                lo, hi = min(lo, float(ev[0])), max(hi, float(ev[-1]))
    return lo, hi


def lplus_lower_bound_check(model, y_grid, t, c):
    """Check  l+(y, t) >= exp(-2ct) d_0(x, y)^2 / (4t) - nct/3  on ``y_grid``.

    ``Rc >= -c g`` is certified on samples first; a failure raises
    :class:`PreconditionError`.
    """
    t = _check_t(model, t)
    pts = np.atleast_2d(np.asarray(y_grid, dtype=float))
    d = np.array([model.distance_from_basepoint(p) for p in pts])
    radius = float(d.max()) if len(d) else 0.0
    if math.isfinite(model.diameter):
        radius = min(radius, 0.99 * model.diameter)
    lo, hi = ricci_range(model, radius, t)
    if lo < -c - 1e-12:
        raise PreconditionError(f"Rc >= -{c} g fails: smallest sampled eigenvalue {lo:.6g}")
    l_plus = np.array([lg.reduced_length(model, p, t) for p in pts])
    bound = math.exp(-2 * c * t) * d**2 / (4 * t) - model.dim * c * t / 3
    return LowerBoundReport(t, float(c), pts, l_plus, bound, lo, hi)


__all__ = [
    "EntropyReport",
    "IdentityRow",
    "IdentityTable",
    "LowerBoundReport",
    "RescaleResult",
    "ThetaResult",
    "VolumeEstimate",
    "identity_suite",
    "lplus_lower_bound_check",
    "monotonicity_report",
    "non_increasing",
    "omega_radius",
    "rescale_check",
    "ricci_range",
    "rigidity_constant",
    "theta_volume",
    "weighted_volume",
]
