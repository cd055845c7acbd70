"""Jacobi fields, reduced-volume density and second-variation checks.

Jacobi fields are the V-derivatives of the exponential map, propagated by the
linearised geodesic system (see :mod:`rfent.lgeodesic`). With ``beta`` the
path in ``s = sqrt(eta)`` they satisfy ``J(0) = 0`` and ``J'(0) = 2 E0_i``.

The transported frame solves, in the ``s`` parameter and for ``Z = Y / s``,

    Z' = -Gamma(p, Z) + 2 s Rc^# Z,

integrated backwards from ``Z(sqrt t) = E / sqrt t``. Under an exact Ricci flow
``<Z_i, Z_j>`` is constant, which is the Gram law ``<Y_i, Y_j> = (eta/t) delta``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import jax
import jax.numpy as jnp
import numpy as np

from . import lgeodesic as lg
from .errors import PropagationError, TruncationError
from .geometry import conformal as cf
from .geometry import curvature as cv
from .geometry import models as gm
from .ode import STATUS_EXITED, STATUS_FAILED, STATUS_OK, clenshaw_curtis_weights, integrate

BISECT_TOL = 1e-8


# --------------------------------------------------------------------------
# helpers evaluated along sampled paths


def _w_rate(model, b, p, s):
    eta = s * s
    w = gm.conformal_factor(model, b, eta)
    dw = jax.grad(gm.conformal_factor, argnums=1)(model, b, eta)
    wt = jax.grad(gm.conformal_factor, argnums=2)(model, b, eta)
    return w, dw @ p + 2.0 * s * wt


_w_rate_many = jax.jit(jax.vmap(_w_rate, in_axes=(None, 0, 0, 0)))
_bundle_many = jax.jit(jax.vmap(cv._bundle_arrays, in_axes=(None, 0, 0)))


def bundles_along(model, beta, s):
    """Curvature arrays (generic autodiff formulas) at the points (beta_k, s_k^2)."""
    out = _bundle_many(model, jnp.asarray(beta), jnp.asarray(np.asarray(s) ** 2))
    return {k: np.asarray(v) for k, v in out.items()}


def _gram_terms(model, s, beta, p, J, dJ):
    """Signed volume factor det(J) sqrt(det g) and d/ds log L+J_V."""
    n = model.dim
    w, wdot = (np.asarray(a) for a in _w_rate_many(model, jnp.asarray(beta), jnp.asarray(p), jnp.asarray(s)))
    signed = np.linalg.det(J) * w ** (n / 2.0)
    dlog = np.full(len(s), np.nan)
    for k in range(len(s)):
        if s[k] <= 0:
            continue
        JtJ = J[k].T @ J[k]
        G = w[k] * JtJ
        Gp = w[k] * (dJ[k].T @ J[k] + J[k].T @ dJ[k]) + wdot[k] * JtJ
        dlog[k] = 0.5 * np.trace(np.linalg.solve(G, Gp))
    return signed, dlog


def random_rotation(n, seed):
    """Haar-distributed orthogonal matrix with determinant +1."""
    q, r = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, n)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# --------------------------------------------------------------------------
# Jacobi frames


@dataclass(frozen=True)
class JacobiFrame:
    """Jacobi fields along a geodesic, sampled at the geodesic's nodes.

    ``J[k][:, i]`` holds the chart components of ``J_i`` at ``s[k]``. ``detL``
    follows the convention ``L+J_V = 0`` for ``t >= tau_V``.
    """

    geod: lg.LPlusGeodesic
    E0: np.ndarray
    s: np.ndarray
    J: np.ndarray
    dJ: np.ndarray
    detL: np.ndarray
    detL_signed: np.ndarray
    tau_V: float
    dlog_detL_dt: np.ndarray
    K: np.ndarray

    @property
    def t(self):
        return self.s**2

    @property
    def bound(self):
        """n / (2t) - t^{-3/2} K / 2 at the sample times (nan at t = 0)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            t = self.t
            return np.where(t > 0, self.geod.model.dim / (2 * t) - 0.5 * t**-1.5 * self.K, np.nan)


def _signed_det_at(model, V, s_end, jframe):
    ys, status, s_stop = lg.run_batch(model, V[None], np.array([0.0, s_end]), with_jac=True, jframe=jframe)
    parts = lg.unpack(ys[0, -1], model.dim)
    if status[0] != STATUS_OK:
        return math.nan
    w = float(gm.conformal_factor(model, jnp.asarray(parts["beta"]), s_end * s_end))
    return float(np.linalg.det(parts["J"]) * w ** (model.dim / 2))


def locate_sign_change(fun, lo, hi, tol):
    """Bisection for a sign change of ``fun`` on [lo, hi] until hi - lo <= tol."""
    f_lo = fun(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = fun(mid)
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return lo, hi


def jacobi_propagate(geod, model=None, *, rotation=None, check_minimality=False):
    """Propagate the n Jacobi fields along ``geod``; locate tau_V on [0, t].

    ``rotation`` (an orthogonal matrix) replaces the initial frame ``E0`` by
    ``E0 @ rotation``; ``L+J_V`` does not depend on that choice. With
    ``check_minimality`` a competing shooting root with smaller L+ can move
    tau_V earlier than the first conjugate point.
    """
    model = model or geod.model
    n = model.dim
    E0 = np.asarray(lg.frame0(model))
    if rotation is not None:
        E0 = E0 @ np.asarray(rotation, dtype=float)
    ys, status, s_stop = lg.run_batch(model, geod.V[None], geod.s, with_k=True, with_jac=True, jframe=E0)
    ys, status, s_stop = ys[0], int(status[0]), float(s_stop[0])
    if status == STATUS_FAILED:
        raise PropagationError("Jacobi system blew up", s_stop**2)
    if status == STATUS_EXITED:
        raise TruncationError("geodesic left the chart while propagating Jacobi fields", s_stop**2)
    parts = lg.unpack(ys, n)
    s = geod.s
    signed, dlog_ds = _gram_terms(model, s, parts["beta"], parts["p"], parts["J"], parts["dJ"])
    tau = math.inf
    pos = np.flatnonzero(s > 0)
    flips = np.flatnonzero(np.sign(signed[pos][1:]) != np.sign(signed[pos][:-1]))
    if flips.size:
        k = pos[flips[0]]
        lo, hi = s[k], s[k + 1]
        tol_s = BISECT_TOL / (2.0 * hi)
        lo, hi = locate_sign_change(lambda x: _signed_det_at(model, geod.V, x, E0), lo, hi, tol_s)
        tau = hi * hi
    if check_minimality:
        tau = min(tau, minimality_loss_time(model, geod.V, min(tau, geod.t_end)))
    detL = np.where(s**2 < tau, np.abs(signed), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        dlog_dt = np.where(s > 0, dlog_ds / (2 * s), np.nan)
    return JacobiFrame(
        geod=geod, E0=E0, s=s, J=parts["J"], dJ=parts["dJ"], detL=detL, detL_signed=signed,
        tau_V=tau, dlog_detL_dt=dlog_dt, K=parts["K"],
    )


def jacobi_fd_oracle(model, V, t, h=1e-5):
    """Central differences of the exponential map: columns d exp(E0_i)."""
    lg.require_analytic(model)
    n = model.dim
    V = np.asarray(V, dtype=float)
    pts = np.concatenate([V + h * np.eye(n), V - h * np.eye(n)])
    ys, status, s_stop = lg.run_batch(model, pts, np.array([0.0, math.sqrt(t)]))
    if np.any(status != STATUS_OK):
        raise TruncationError("finite-difference shots left the chart", float(np.min(s_stop)) ** 2)
    ends = ys[:, -1, :n]
    return ((ends[:n] - ends[n:]) / (2 * h)).T


def minimality_check(model, V, t):
    """Whether the geodesic of ``V`` still minimises at ``t``.

    Searches for other shooting roots to the same endpoint; returns
    ``(minimal, L_V, L_best)``.
    """
    geod = lg.shoot(model, V, t, with_k=False)
    roots = lg.shooting_roots(model, geod.endpoint, t, extra_seeds=V)
    best = float(roots.L[0])
    return best >= geod.length - 1e-9 * (1 + abs(geod.length)), geod.length, best


def minimality_loss_time(model, V, t, tol=1e-6):
    """First time in (0, t] at which ``gamma_V`` stops minimising (inf if never)."""
    if not math.isfinite(t) or minimality_check(model, V, t)[0]:
        return math.inf
    lo, hi = 0.0, t
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if minimality_check(model, V, mid)[0]:
            lo = mid
        else:
            hi = mid
    return hi


# --------------------------------------------------------------------------
# density


@dataclass(frozen=True)
class DensityTable:
    """Density and its ingredients for many initial vectors at shared times."""

    t: np.ndarray
    V: np.ndarray
    density: np.ndarray
    L: np.ndarray
    K: np.ndarray
    detL: np.ndarray
    dlog_detL_dt: np.ndarray
    tau: np.ndarray
    failed: np.ndarray

    @property
    def in_omega(self):
        return self.tau[:, None] > self.t[None, :]


def density_many(model, V, t_grid, *, with_k=False, jobs=1):
    """Evaluate ``t^{-n/2} exp(l+) L+J_V`` for every row of ``V`` at each time."""
    lg.require_analytic(model)
    V = np.atleast_2d(np.asarray(V, dtype=float))
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if np.any(np.diff(t_grid) <= 0) or t_grid[0] <= 0:
        raise ValueError("t_grid must be positive and strictly increasing")
    for t in t_grid:
        model.check_time(float(t))
    n = model.dim
    s_out = np.concatenate([[0.0], np.sqrt(t_grid)])
    ys, status, s_stop = lg.run_batch(model, V, s_out, with_k=with_k, with_jac=True, jobs=jobs)
    N, k = len(V), len(t_grid)
    parts = lg.unpack(ys[:, 1:], n)
    density = np.zeros((N, k))
    detL = np.zeros((N, k))
    dlog = np.full((N, k), np.nan)
    tau = np.full(N, np.inf)
    failed = status == STATUS_FAILED
    sq = np.sqrt(t_grid)
    for i in range(N):
        if failed[i]:
            density[i] = np.nan
            continue
        valid = np.ones(k, bool)
        if status[i] == STATUS_EXITED:
            tau[i] = lg.antipode_time(model, ys[i, -1], float(s_stop[i]))
            if not math.isfinite(tau[i]):
                failed[i] = True
                density[i] = np.nan
                continue
            # samples at or past the chart exit are not representable
            valid = sq < s_stop[i]
        signed, dl = _gram_terms(model, sq, parts["beta"][i], parts["p"][i], parts["J"][i], parts["dJ"][i])
        bad = np.flatnonzero(valid & (signed <= 0))
        if bad.size:
            # the Jacobian degenerated between samples: conjugate point
            tau[i] = min(tau[i], t_grid[bad[0]])
        keep = valid & (t_grid < tau[i])
        detL[i] = np.where(keep, np.abs(signed), 0.0)
        with np.errstate(over="ignore"):
            density[i] = np.where(keep, sq ** (-n) * np.exp(parts["L"][i] / (2 * sq)) * detL[i], 0.0)
        dlog[i] = np.where(keep, dl / (2 * sq), np.nan)
    return DensityTable(
        t=t_grid, V=V, density=density, L=parts["L"], K=parts["K"] if with_k else np.full((N, k), np.nan),
        detL=detL, dlog_detL_dt=dlog, tau=tau, failed=failed,
    )


def density(model, V, t):
    """Reduced-volume density at a single initial vector and time."""
    tab = density_many(model, np.atleast_2d(V), [t])
    if tab.failed[0]:
        raise PropagationError("density evaluation failed", math.nan)
    return float(tab.density[0, 0])


@dataclass(frozen=True)
class DensityMonotonicityReport:
    V: np.ndarray
    t: np.ndarray
    density: np.ndarray
    dlog_detL_dt: np.ndarray
    bound: np.ndarray
    monotone_pass: bool
    bound_pass: bool

    @property
    def passed(self):
        return self.monotone_pass and self.bound_pass


def density_monotonicity_check(model, V, t_grid, *, slack=1e-6, bound_slack=1e-4):
    """Density non-increase on ``t_grid`` and the log-derivative bound."""
    tab = density_many(model, np.atleast_2d(V), t_grid, with_k=True)
    if tab.failed[0]:
        raise PropagationError("density evaluation failed", math.nan)
    d = tab.density[0]
    t = tab.t
    n = model.dim
    bound = n / (2 * t) - 0.5 * t**-1.5 * tab.K[0]
    mono = bool(np.all(d[1:] <= d[:-1] * (1 + slack)))
    live = np.isfinite(tab.dlog_detL_dt[0])
    bnd = bool(np.all(tab.dlog_detL_dt[0][live] <= bound[live] + bound_slack))
    return DensityMonotonicityReport(np.asarray(V, float), t, d, tab.dlog_detL_dt[0], bound, mono, bnd)


# --------------------------------------------------------------------------
# transported frame


def _transport_rhs(s, y, model):
    n = model.dim
    bp = y[: 2 * n]
    Z = y[2 * n:].reshape(n, n)
    f = lg._geodesic_rhs(s, bp, model)
    b, p = bp[:n], bp[n:]
    eta = s * s
    w = gm.conformal_factor(model, b, eta)
    rc = cf.ricci(model, b, eta)
    gz = jax.vmap(lambda z: cf.christoffel_contract(model, b, eta, p, z), in_axes=1, out_axes=1)(Z)
    dZ = -gz + 2.0 * s * (rc @ Z) / w
    return jnp.concatenate([f, dZ.ravel()])


@jax.jit
def _transport(model, y_end, s_out):
    return integrate(lambda s, y: _transport_rhs(s, y, model), y_end, s_out, rtol=lg.RTOL, atol=lg.ATOL)


@dataclass(frozen=True)
class TransportedFrame:
    """Frame fields along a geodesic with ``Etilde_i(t) = E_i``.

    Arrays are sampled at increasing ``s``; ``Z = Etilde / s`` is the regular
    variable that is actually integrated.
    """

    s: np.ndarray
    beta: np.ndarray
    p: np.ndarray
    Z: np.ndarray
    Etilde: np.ndarray
    gram: np.ndarray
    gram_residual: float
    E: np.ndarray


def transported_frame(geod, model=None, *, frame=None):
    model = model or geod.model
    n = model.dim
    t = geod.t_end
    y = geod.endpoint
    if frame is None:
        g = np.asarray(cv.metric(model, jnp.asarray(y), t))
        w, U = np.linalg.eigh(g)
        frame = (U / np.sqrt(w)) @ U.T
    frame = np.asarray(frame, dtype=float)
    y_end = np.concatenate([y, geod.dbeta[-1], (frame / math.sqrt(t)).ravel()])
    s_out = geod.s[::-1]
    ys, status, s_stop = _transport(model, jnp.asarray(y_end), jnp.asarray(s_out))
    if int(status) != STATUS_OK:
        raise PropagationError("transport integration failed", float(s_stop) ** 2)
    ys = np.asarray(ys)[::-1]
    s = geod.s
    Z = ys[:, 2 * n:].reshape(-1, n, n)
    Et = s[:, None, None] * Z
    w, _ = (np.asarray(a) for a in _w_rate_many(model, jnp.asarray(ys[:, :n]), jnp.asarray(ys[:, n: 2 * n]),
                                                  jnp.asarray(s)))
    gram = w[:, None, None] * np.einsum("mki,mkj->mij", Et, Et)
    target = (s**2 / t)[:, None, None] * np.eye(n)
    return TransportedFrame(
        s=s, beta=ys[:, :n], p=ys[:, n: 2 * n], Z=Z, Etilde=Et, gram=gram,
        gram_residual=float(np.max(np.abs(gram - target))), E=frame,
    )


def _h_pair_integrand(model, s, beta, p, Z):
    """Integrand in s of int sqrt(eta) H(X, Y) d eta with Y = s Z."""
    b = bundles_along(model, beta, s)
    s2 = s**2
    hess = np.einsum("mi,mij,mj->m", Z, b["hessR"], Z)
    rm = np.einsum("mabcd,ma,mb,mc,md->m", b["Rm"], p, Z, Z, p)
    rcz = np.einsum("mij,mj->mi", b["Rc"], Z)
    rc_sq = np.einsum("mi,mi->m", rcz, np.linalg.solve(b["g"], rcz[..., None])[..., 0])
    rc = np.einsum("mi,mi->m", Z, rcz)
    drc = np.einsum("mi,mij,mj->m", Z, b["dRcdt"], Z)
    n1 = np.einsum("mkij,mk,mi,mj->m", b["nablaRc"], Z, Z, p)
    n2 = np.einsum("mkij,mk,mi,mj->m", b["nablaRc"], p, Z, Z)
    return (-2 * s2**2 * hess + s2 * rm + 4 * s2**2 * rc_sq + 2 * s2 * rc + 4 * s2**2 * drc
            - 4 * s2 * s * n1 + 4 * s2 * s * n2)


@dataclass(frozen=True)
class HessianReport:
    y: np.ndarray
    t: float
    lhs: np.ndarray
    rhs: np.ndarray
    residual: np.ndarray
    passed: bool
    skipped: str | None = None
    gram_residual: float = math.nan

    @property
    def trace_gap(self):
        return float(np.sum(self.rhs - self.lhs))

    def to_dict(self):
        d = asdict(self)
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}


def hessian_inequality_check(model, y, t, *, h=1e-3, tol=1e-4):
    """Compare the covariant Hessian of L+(., t) at ``y`` with the bound
    ``|E|^2/sqrt t + 2 sqrt t Rc(E, E) - int sqrt(eta) H(X, Etilde) d eta``
    for each vector ``E`` of a g(t)-orthonormal frame at ``y``."""
    y = np.asarray(y, dtype=float)
    n = model.dim
    roots = lg.shooting_roots(model, y, t)
    if not roots.unique:
        return HessianReport(y, t, np.full(n, np.nan), np.full(n, np.nan), np.full(n, np.nan), True,
                             skipped="point is on the cut locus (several minimising roots)")
    V = roots.V[0]
    geod = lg.shoot(model, V, t, with_k=False)
    frame = transported_frame(geod, model)
    E = frame.E
    step = h * max(1.0, float(np.linalg.norm(y)))
    pts = np.concatenate([y + step * E.T, y - step * E.T])
    L, _ = lg.lplus_many(model, pts, t, np.tile(V, (2 * n, 1)))
    L0 = geod.length
    d2 = (L[:n] - 2 * L0 + L[n:]) / step**2
    bundle = cv.curvature_at(model, y, t)
    dL = bundle.g @ geod.dbeta[-1]
    gamma_EE = np.einsum("kij,ia,ja->ak", bundle.christoffel, E, E)
    lhs = d2 - gamma_EE @ dL
    w = clenshaw_curtis_weights(len(frame.s)) * frame.s[-1]
    integral = np.array([w @ _h_pair_integrand(model, frame.s, frame.beta, frame.p, frame.Z[:, :, i])
                         for i in range(n)])
    rc_EE = np.einsum("ia,ij,ja->a", E, bundle.Rc, E)
    rhs = 1.0 / math.sqrt(t) + 2 * math.sqrt(t) * rc_EE - integral
    residual = lhs - rhs
    return HessianReport(y, float(t), lhs, rhs, residual, bool(np.all(residual <= tol)),
                         gram_residual=frame.gram_residual)


# --------------------------------------------------------------------------
# second variation


@dataclass(frozen=True)
class SecondVariationReport:
    fd: float
    formula: float
    boundary: float
    residual: float
    passed: bool


def second_variation_check(model, geod, Y, *, eps=1e-3, tol=1e-3):
    """Second derivative of L+ along ``beta + eps Y`` against the integral
    formula. ``Y`` is a JAX-traceable map ``s -> chart vector`` with Y(0) = 0."""
    s = geod.s
    n = model.dim
    Ys = np.asarray(jax.vmap(lambda x: jnp.asarray(Y(x), dtype=float))(jnp.asarray(s))).reshape(len(s), n)
    dYs = np.asarray(jax.vmap(lambda x: jax.jvp(lambda z: jnp.asarray(Y(z), dtype=float), (x,), (1.0,))[1])(
        jnp.asarray(s))).reshape(len(s), n)
    if np.linalg.norm(Ys[0]) > 1e-12:
        raise ValueError("variation field must vanish at s = 0")
    beta, p = geod.beta, geod.dbeta

    def length(e):
        return lg.length_from_samples(model, s, beta + e * Ys, p + e * dYs)

    Ls = [length(k * eps) for k in (-2, -1, 0, 1, 2)]
    fd = (-Ls[0] + 16 * Ls[1] - 30 * Ls[2] + 16 * Ls[3] - Ls[4]) / (12 * eps**2)

    b = bundles_along(model, beta, s)
    cov = dYs + np.einsum("mkij,mi,mj->mk", b["christoffel"], p, Ys)
    kin = np.einsum("mi,mij,mj->m", cov, b["g"], cov)
    hess = np.einsum("mi,mij,mj->m", Ys, b["hessR"], Ys)
    rm = np.einsum("mabcd,ma,mb,mc,md->m", b["Rm"], p, Ys, Ys, p)
    n1 = np.einsum("mkij,mk,mi,mj->m", b["nablaRc"], Ys, Ys, p)
    n2 = np.einsum("mkij,mk,mi,mj->m", b["nablaRc"], p, Ys, Ys)
    integrand = kin + 2 * s**2 * hess - rm + 4 * s * n1 - 2 * s * n2
    w = clenshaw_curtis_weights(len(s)) * s[-1]
    gYY = np.einsum("kij,i,j->k", b["christoffel"][-1], Ys[-1], Ys[-1])
    boundary = float(p[-1] @ b["g"][-1] @ gYY)
    formula = float(w @ integrand) + boundary
    # differences below the rounding level of L+ / eps^2 carry no information
    floor = 1e-14 * (1 + abs(Ls[2])) / eps**2
    scale = max(abs(fd), abs(formula), floor)
    residual = abs(fd - formula) / scale
    return SecondVariationReport(float(fd), formula, boundary, residual, residual <= tol)


__all__ = [
    "DensityMonotonicityReport",
    "DensityTable",
    "HessianReport",
    "JacobiFrame",
    "SecondVariationReport",
    "TransportedFrame",
    "density",
    "density_many",
    "density_monotonicity_check",
    "hessian_inequality_check",
    "jacobi_fd_oracle",
    "jacobi_propagate",
    "locate_sign_change",
    "minimality_check",
    "minimality_loss_time",
    "random_rotation",
    "second_variation_check",
    "transported_frame",
]
