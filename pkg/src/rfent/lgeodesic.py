"""Forward L+ geodesics from the basepoint (x, 0).

Geodesics are integrated in the regular parameter ``s = sqrt(eta)``. Writing
``beta(s) = gamma(s^2)`` and ``p = dbeta/ds`` the forward length becomes

    L+ = int_0^sqrt(t) ( |p|^2_{g(s^2)} / 2 + 2 s^2 R(beta, s^2) ) ds,

whose Euler-Lagrange system is

    beta' = p,
    p'    = -Gamma(p, p) - 2 s g^{-1} (d_t g) p + 2 s^2 grad R,

with ``beta(0) = x`` and ``p(0) = 2V``; the velocity in the eta parameter is
``X = p / (2 s)``. Along the way the length and the K-integral

    K' = 2 s^4 d_t R + 2 s^3 <dR, p> + s^2 Rc(p, p) + 2 s^2 R

are carried as extra states, and optionally the Jacobi matrix
``d(beta, p) / dV`` obtained by forward-mode linearisation.

Tangent vectors at the basepoint are given in coordinates with respect to a
g(0)-orthonormal frame ``E0`` (``E0 = g(x, 0)^{-1/2}`` in the chart), so
``|V|^2_{g(0)}`` is the Euclidean norm of the coordinate vector.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import jax
import jax.numpy as jnp
import numpy as np
from scipy.optimize import minimize

from .errors import (
    AdmissibilityError,
    ChartError,
    ConfigurationError,
    IntegrationError,
    NonconvergenceError,
    StencilError,
    TruncationError,
)
from .geometry import conformal as cf
from .geometry import curvature as cv
from .geometry import models as gm
from .ode import STATUS_EXITED, STATUS_FAILED, STATUS_OK, chebyshev_lobatto, clenshaw_curtis_weights, integrate

RTOL = 1e-10
ATOL = 1e-10
N_SAMPLES = 65
CHUNK = 64
NEWTON_TOL = 1e-11


def require_analytic(model):
    if not isinstance(model, gm.ManifoldModel):
        raise ConfigurationError(
            f"{getattr(model, 'name', model)!r}: geodesic computations need an analytic model "
            "(flat, einstein or the cigar warped product)"
        )


# --------------------------------------------------------------------------
# kernel


def frame0(model):
    """g(x, 0)^{-1/2}: columns form a g(0)-orthonormal basis of T_x M."""
    g0 = cv.metric(model, jnp.zeros(model.dim), 0.0)
    w, U = jnp.linalg.eigh(g0)
    return (U / jnp.sqrt(w)) @ U.T


def _geodesic_rhs(s, bp, model):
    n = model.dim
    b, p = bp[:n], bp[n:]
    eta = s * s
    w = gm.conformal_factor(model, b, eta)
    acc = (
        -cf.christoffel_contract(model, b, eta, p, p)
        - 4.0 * s * cf.dphi_dt(model, b, eta) * p
        + 2.0 * eta * cf.grad_scalar(model, b, eta) / w
    )
    return jnp.concatenate([p, acc])


def _k_rate(s, b, p, model):
    eta = s * s
    R = cf.scalar(model, b, eta)
    dRdt = cf.dscalar_dt(model, b, eta)
    dR = cf.grad_scalar(model, b, eta)
    rc = cf.ricci(model, b, eta)
    return 2 * eta**2 * dRdt + 2 * eta * s * (dR @ p) + eta * (p @ rc @ p) + 2 * eta * R


def state_size(n, with_jac):
    return 2 * n + 2 + (2 * n * n if with_jac else 0)


def _kernel(model, v, s_out, jframe, with_k, with_jac):
    n = model.dim
    E0 = frame0(model)
    parts = [jnp.zeros(n), 2.0 * E0 @ v, jnp.zeros(2)]
    if with_jac:
        parts += [jnp.zeros(n * n), (2.0 * jframe).ravel()]
    y0 = jnp.concatenate(parts)

    def rhs(s, y):
        bp = y[: 2 * n]
        b, p = bp[:n], bp[n:]
        if with_jac:
            f, lin = jax.linearize(lambda z: _geodesic_rhs(s, z, model), bp)
        else:
            f = _geodesic_rhs(s, bp, model)
        eta = s * s
        dL = 0.5 * gm.conformal_factor(model, b, eta) * (p @ p) + 2.0 * eta * cf.scalar(model, b, eta)
        dK = _k_rate(s, b, p, model) if with_k else jnp.zeros(())
        out = [f, jnp.stack([dL, dK])]
        if with_jac:
            T = jnp.concatenate(
                [y[2 * n + 2: 2 * n + 2 + n * n].reshape(n, n), y[2 * n + 2 + n * n:].reshape(n, n)], axis=0
            )
            dT = jax.vmap(lin, in_axes=1, out_axes=1)(T)
            out += [dT[:n].ravel(), dT[n:].ravel()]
        return jnp.concatenate(out)

    def inside(y):
        return gm.inside_chart(model, y[:n])

    return integrate(rhs, y0, s_out, rtol=RTOL, atol=ATOL, inside=inside)


@partial(jax.jit, static_argnames=("with_k", "with_jac"))
def _batched(model, v, s_out, jframe, with_k=False, with_jac=False):
    return jax.vmap(lambda vv, ss: _kernel(model, vv, ss, jframe, with_k, with_jac))(v, s_out)


def _pad_size(k):
    # two lane counts only, so each kernel variant compiles at most twice
    return 8 if k <= 8 else CHUNK


def run_batch(model, v, s_out, *, with_k=False, with_jac=False, jframe=None, jobs=1):
    """Integrate many geodesics; returns (states, status, s_stop) as numpy arrays.

    ``v`` has shape (N, n) and ``s_out`` (N, m) or (m,). With ``with_jac`` the
    Jacobi fields ``J_i`` with ``J_i(0) = 0``, ``J_i'(0) = 2 jframe[:, i]`` are
    carried along (``jframe`` defaults to the orthonormal frame ``E0``). Lanes
    are processed in fixed chunks so the floating-point result of each lane
    does not depend on ``jobs``.
    """
    require_analytic(model)
    jf = frame0(model) if jframe is None else jnp.asarray(jframe, dtype=float)
    v = np.atleast_2d(np.asarray(v, dtype=float))
    N = v.shape[0]
    s_out = np.asarray(s_out, dtype=float)
    if s_out.ndim == 1:
        s_out = np.broadcast_to(s_out, (N, s_out.size))
    chunks = []
    for start in range(0, N, CHUNK):
        stop = min(start + CHUNK, N)
        size = _pad_size(stop - start)
        vi = np.empty((size, v.shape[1]))
        si = np.empty((size, s_out.shape[1]))
        vi[: stop - start], si[: stop - start] = v[start:stop], s_out[start:stop]
        vi[stop - start:], si[stop - start:] = v[start], s_out[start]
        chunks.append((vi, si, stop - start))

    def work(chunk):
        vi, si, k = chunk
        ys, st, ss = _batched(model, jnp.asarray(vi), jnp.asarray(si), jf, with_k=with_k, with_jac=with_jac)
        return np.asarray(ys)[:k], np.asarray(st)[:k], np.asarray(ss)[:k]

    if jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]
    if not results:
        d = state_size(model.dim, with_jac)
        return np.zeros((0, s_out.shape[1], d)), np.zeros(0, int), np.zeros(0)
    ys = np.concatenate([r[0] for r in results])
    status = np.concatenate([r[1] for r in results])
    s_stop = np.concatenate([r[2] for r in results])
    return ys, status, s_stop


def unpack(state, n):
    """Split a state vector (or stack of them) into named parts."""
    state = np.asarray(state)
    out = {
        "beta": state[..., :n],
        "p": state[..., n: 2 * n],
        "L": state[..., 2 * n],
        "K": state[..., 2 * n + 1],
    }
    if state.shape[-1] > 2 * n + 2:
        jb = state[..., 2 * n + 2: 2 * n + 2 + n * n]
        jp = state[..., 2 * n + 2 + n * n:]
        out["J"] = jb.reshape(jb.shape[:-1] + (n, n))
        out["dJ"] = jp.reshape(jp.shape[:-1] + (n, n))
    return out


def antipode_time(model, state, s_exit):
    """Extrapolated time at which a geodesic that left the chart reaches the
    antipode of the basepoint (finite-diameter models only; ``nan`` otherwise).

    The sphere chart is singular at the antipode, so integration stops a
    distance of order ``2 / SPHERE_EXIT_RADIUS`` short of it; the remaining
    distance is covered at the exit speed, which is accurate to second order.
    """
    if not math.isfinite(model.diameter):
        return math.nan
    n = model.dim
    b, p = np.asarray(state[:n]), np.asarray(state[n: 2 * n])
    eta = s_exit * s_exit
    w_t = float(gm.conformal_factor(model, jnp.asarray(b), eta))
    w_0 = float(gm.conformal_factor(model, jnp.asarray(b), 0.0))
    remaining = math.sqrt(w_t / w_0) * max(model.diameter - model.distance_from_basepoint(b), 0.0)
    speed = math.sqrt(w_t) * float(np.linalg.norm(p))
    return (s_exit + remaining / speed) ** 2


# --------------------------------------------------------------------------
# geodesic record


@dataclass(frozen=True)
class LPlusGeodesic:
    """A shot L+ geodesic sampled at Chebyshev-Lobatto nodes in s = sqrt(eta)."""

    model: gm.ManifoldModel
    V: np.ndarray
    t_end: float
    s: np.ndarray
    beta: np.ndarray
    dbeta: np.ndarray
    length: float
    K: float
    X_end: np.ndarray

    @property
    def samples(self):
        return list(zip(self.s, self.beta, self.dbeta))

    @property
    def endpoint(self):
        return self.beta[-1]

    @property
    def reduced_length(self):
        return self.length / (2.0 * math.sqrt(self.t_end))

    @property
    def V_chart(self):
        return np.asarray(frame0(self.model)) @ self.V


def _check_t(model, t, positive=True):
    if positive and not t > 0:
        raise ConfigurationError(f"time must be positive, got {t!r}")
    model.check_time(t)


def shoot(model, V, t, *, samples=N_SAMPLES, with_k=True):
    """Integrate the L+ geodesic with initial vector ``V`` up to time ``t``."""
    require_analytic(model)
    _check_t(model, t)
    V = np.asarray(V, dtype=float).reshape(model.dim)
    if not np.all(np.isfinite(V)):
        raise ConfigurationError("initial vector must be finite")
    s_nodes = math.sqrt(t) * np.asarray(chebyshev_lobatto(samples))
    ys, status, s_stop = run_batch(model, V[None], s_nodes, with_k=with_k)
    ys, status, s_stop = ys[0], int(status[0]), float(s_stop[0])
    if status == STATUS_EXITED:
        raise TruncationError(f"L+ geodesic with V={V.tolist()} left the chart of {model.name}", s_stop**2)
    if status == STATUS_FAILED:
        raise IntegrationError(f"geodesic integration failed near t={s_stop**2:.6g}")
    parts = unpack(ys, model.dim)
    s_end = s_nodes[-1]
    return LPlusGeodesic(
        model=model,
        V=V,
        t_end=float(t),
        s=s_nodes,
        beta=parts["beta"],
        dbeta=parts["p"],
        length=float(parts["L"][-1]),
        K=float(parts["K"][-1]) if with_k else math.nan,
        X_end=parts["p"][-1] / (2.0 * s_end),
    )


# --------------------------------------------------------------------------
# forward length of arbitrary paths


@jax.jit
def _integrand(model, b, p, s):
    eta = s * s
    return 0.5 * gm.conformal_factor(model, b, eta) * (p @ p) + 2.0 * eta * cf.scalar(model, b, eta)


_integrand_many = jax.jit(jax.vmap(_integrand, in_axes=(None, 0, 0, 0)))
_inside_many = jax.jit(jax.vmap(gm.inside_chart, in_axes=(None, 0)))


def length_from_samples(model, s, beta, dbeta):
    """Clenshaw-Curtis quadrature of the length on Chebyshev-Lobatto samples."""
    s = np.asarray(s, dtype=float)
    w = clenshaw_curtis_weights(len(s)) * (s[-1] - s[0])
    f = np.asarray(_integrand_many(model, jnp.asarray(beta), jnp.asarray(dbeta), jnp.asarray(s)))
    return float(w @ f)


def lplus_length(model, path, t, *, order=64):
    """Forward length of a path from (x, 0) to time ``t``.

    ``path`` is either an :class:`LPlusGeodesic`, a tuple ``(s, beta, dbeta)``
    of Chebyshev-Lobatto samples in ``s = sqrt(eta)``, or a JAX-traceable
    callable ``eta -> x(eta)`` giving chart coordinates. Callables are
    integrated with ``order``-point Gauss-Legendre in ``s``.
    """
    require_analytic(model)
    _check_t(model, t)
    if isinstance(path, LPlusGeodesic):
        return length_from_samples(model, path.s, path.beta, path.dbeta)
    if isinstance(path, tuple):
        return length_from_samples(model, *path)
    if not callable(path):
        raise ConfigurationError("path must be an LPlusGeodesic, a sample tuple or a callable")

    def beta(s):
        return jnp.asarray(path(s * s), dtype=float)

    def dbeta(s):
        return jax.jvp(beta, (s,), (jnp.ones_like(s),))[1]

    start = np.asarray(beta(jnp.asarray(0.0)))
    if start.shape != (model.dim,) or np.linalg.norm(start) > 1e-12:
        raise AdmissibilityError(f"path must start at the basepoint, got {start.tolist()}")
    root = math.sqrt(t)
    probe = root * 10.0 ** -np.arange(2.0, 9.0)
    speeds = []
    for sp in probe:
        v = np.asarray(dbeta(jnp.asarray(sp)))
        speeds.append(float(np.linalg.norm(v)))
    speeds = np.array(speeds)
    if not np.all(np.isfinite(speeds)) or speeds[-1] > 10.0 * (1.0 + speeds[0]):
        raise AdmissibilityError("sqrt(eta)|gamma'| is unbounded as eta -> 0")
    x, w = np.polynomial.legendre.leggauss(order)
    s = 0.5 * root * (x + 1.0)
    w = 0.5 * root * w
    B = np.asarray(jax.vmap(beta)(jnp.asarray(s)))
    P = np.asarray(jax.vmap(dbeta)(jnp.asarray(s)))
    if not np.all(np.asarray(_inside_many(model, jnp.asarray(B)))):
        raise ChartError("path leaves the chart")
    f = np.asarray(_integrand_many(model, jnp.asarray(B), jnp.asarray(P), jnp.asarray(s)))
    return float(w @ f)


# --------------------------------------------------------------------------
# inverse exponential map


def _as_points(model, y):
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[None]
    for yi in y:
        model.check_point(yi)
    return y


def _evaluate(model, v, s_end, jobs=1):
    ys, status, _ = run_batch(model, v, np.stack([np.zeros_like(s_end), s_end], axis=1), with_jac=True, jobs=jobs)
    parts = unpack(ys[:, -1], model.dim)
    return parts["beta"], parts["J"], parts["L"], status


@partial(jax.jit, static_argnums=0)
def _conformal_many(model, ys, eta):
    return jax.vmap(lambda y, e: gm.conformal_factor(model, y, e))(ys, eta)


def newton_solve(model, targets, s_end, seeds, *, tol=NEWTON_TOL, max_iter=40, jobs=1):
    """Damped Newton iteration for beta(s_end; v) = target, lane by lane.

    Returns ``(v, residual, L, converged)``. The Jacobian is the propagated
    Jacobi matrix ``d beta / d v``.
    """
    targets = np.asarray(targets, dtype=float)
    s_end = np.asarray(s_end, dtype=float)
    v = np.array(seeds, dtype=float)
    N = v.shape[0]
    beta, J, L, status = _evaluate(model, v, s_end, jobs)
    F = beta - targets
    res = np.where(status == STATUS_OK, np.linalg.norm(F, axis=1), np.inf)
    # tolerance in g(t)-length: stretched chart regions get a looser coordinate bound
    w = np.asarray(_conformal_many(model, jnp.asarray(targets), jnp.asarray(s_end**2)))
    scale = np.maximum(np.maximum(1.0, np.linalg.norm(targets, axis=1)), 1.0 / np.sqrt(w))
    alive = np.isfinite(res)
    for _ in range(max_iter):
        active = alive & (res > tol * scale)
        if not active.any():
            break
        idx = np.flatnonzero(active)
        delta = np.zeros_like(v)
        for i in idx:
            try:
                delta[i] = np.linalg.solve(J[i], -F[i])
            except np.linalg.LinAlgError:
                delta[i] = np.linalg.lstsq(J[i], -F[i], rcond=None)[0]
        lam = np.ones(N)
        pending = active.copy()
        for _ in range(30):
            idx = np.flatnonzero(pending)
            if idx.size == 0:
                break
            trial = v[idx] + lam[idx, None] * delta[idx]
            b2, J2, L2, st2 = _evaluate(model, trial, s_end[idx], jobs)
            F2 = b2 - targets[idx]
            r2 = np.where(st2 == STATUS_OK, np.linalg.norm(F2, axis=1), np.inf)
            ok = (r2 < res[idx] * (1.0 - 1e-4 * lam[idx])) | (r2 <= tol * scale[idx])
            acc = idx[ok]
            v[acc], F[acc], J[acc], L[acc], res[acc] = trial[ok], F2[ok], J2[ok], L2[ok], r2[ok]
            pending[acc] = False
            lam[idx[~ok]] *= 0.5
        alive &= ~pending  # lanes whose line search stalled are abandoned
    converged = alive & (res <= tol * scale)
    return v, res, L, converged


def _seed_grid(model, y, t):
    n = model.dim
    d = model.distance_from_basepoint(y)
    mag = d / (2.0 * math.sqrt(t)) if d > 0 else 0.5
    seeds = []
    E0inv = np.linalg.inv(np.asarray(frame0(model)))
    direction = E0inv @ y
    nrm = np.linalg.norm(direction)
    seeds.append(direction / nrm * d / (2.0 * math.sqrt(t)) if nrm > 0 else np.zeros(n))
    for corner in np.array(np.meshgrid(*[[-1.0, 0.0, 1.0]] * n, indexing="ij")).reshape(n, -1).T:
        seeds.append(mag * corner)
    return np.array(seeds)


@dataclass(frozen=True)
class RootSet:
    """All distinct shooting roots found for one target, ordered by length."""

    V: np.ndarray
    L: np.ndarray
    residual: np.ndarray

    @property
    def unique(self):
        if len(self.L) < 2:
            return True
        return self.L[1] - self.L[0] > 1e-6 * (1.0 + abs(self.L[0]))


def _dedupe(v, L, res):
    order = np.lexsort(v.T[::-1])
    kept = []
    for i in order:
        if all(np.linalg.norm(v[i] - v[j]) > 1e-6 * (1 + np.linalg.norm(v[j])) for j in kept):
            kept.append(i)
    kept = np.array(kept, dtype=int)
    # least length first; among lengths tied to 1e-9 the lexicographically
    # smallest V wins (``kept`` is already in lexicographic order)
    Lk = L[kept]
    tied = Lk - Lk.min() <= 1e-9 * (1.0 + abs(Lk.min()))
    first = kept[np.flatnonzero(tied)[0]]
    rest = [i for i in kept[np.argsort(Lk, kind="stable")] if i != first]
    kept = np.array([first] + rest, dtype=int)
    return RootSet(v[kept], L[kept], res[kept])


def shooting_roots(model, y, t, *, extra_seeds=None, tol=NEWTON_TOL, jobs=1):
    """Multi-start Newton over the seed grid; returns a :class:`RootSet`."""
    require_analytic(model)
    _check_t(model, t)
    y = _as_points(model, y)[0]
    seeds = _seed_grid(model, y, t)
    if extra_seeds is not None:
        seeds = np.vstack([np.atleast_2d(extra_seeds), seeds])
    N = len(seeds)
    v, res, L, ok = newton_solve(model, np.tile(y, (N, 1)), np.full(N, math.sqrt(t)), seeds, tol=tol, jobs=jobs)
    if not ok.any():
        finite = np.isfinite(res)
        best = int(np.argmin(np.where(finite, res, np.inf))) if finite.any() else 0
        raise NonconvergenceError(
            f"no shooting root for y={y.tolist()} at t={t}", best=v[best], residual=float(res[best])
        )
    return _dedupe(v[ok], L[ok], res[ok])


def exp_inverse(model, y, t, *, jobs=1):
    """Minimising initial vector V with L+exp(V, t) = y, and its geodesic."""
    roots = shooting_roots(model, y, t, jobs=jobs)
    V = roots.V[0]
    return V, shoot(model, V, t)


def reduced_length(model, y, t):
    """l+(y, t) = L+(y, t) / (2 sqrt t)."""
    roots = shooting_roots(model, y, t)
    return float(roots.L[0]) / (2.0 * math.sqrt(t))


def lplus_many(model, ys, ts, seeds, *, tol=1e-12, jobs=1):
    """L+ at many (y, t) by Newton continuation from nearby seeds.

    Used for finite-difference stencils: each seed should be the minimiser
    at a neighbouring point so the same branch is followed.
    """
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    ts = np.broadcast_to(np.asarray(ts, dtype=float), (len(ys),))
    ok_chart = np.asarray(_inside_many(model, jnp.asarray(ys)))
    if not ok_chart.all():
        raise StencilError("finite-difference stencil leaves the chart")
    v, res, L, ok = newton_solve(model, ys, np.sqrt(ts), np.atleast_2d(seeds), tol=tol, jobs=jobs)
    if not ok.all():
        bad = int(np.flatnonzero(~ok)[0])
        raise NonconvergenceError(f"stencil point {ys[bad].tolist()} did not converge", v[bad], float(res[bad]))
    return L, v


# --------------------------------------------------------------------------
# K-integral and identity residuals


@dataclass(frozen=True)
class GeodesicDiagnostics:
    eta: np.ndarray
    HX_samples: np.ndarray
    K: float
    K_ode: float
    grad_identity_residual: float
    kr_residual: float
    el_defect: float
    grad_fd: np.ndarray = field(repr=False, default=None)
    grad_formula: np.ndarray = field(repr=False, default=None)


def _path_terms(model, b, p, s):
    eta = s * s
    g = cv.metric(model, b, eta)
    R = cv.scalar(model, b, eta)
    dRdt = jax.grad(cv.scalar, argnums=2)(model, b, eta)
    dR = cv.grad_scalar(model, b, eta)
    rc = cv.ricci(model, b, eta)
    gam = cv.christoffel(model, b, eta)
    return g, R, dRdt, dR, rc, gam


_path_terms_many = jax.jit(jax.vmap(_path_terms, in_axes=(None, 0, 0, 0)))
_rhs_many = jax.jit(jax.vmap(lambda m, s, bp: _geodesic_rhs(s, bp, m), in_axes=(None, 0, 0)))


def k_integral(geod, model=None, *, grad_check=True, fd_step=1e-5):
    """K-integral, H(X) samples and the identity residuals along ``geod``."""
    model = model or geod.model
    s = geod.s
    t = geod.t_end
    g, R, dRdt, dR, rc, gam = (np.asarray(a) for a in _path_terms_many(
        model, jnp.asarray(geod.beta), jnp.asarray(geod.dbeta), jnp.asarray(s)))
    p = geod.dbeta
    pp = np.einsum("ki,kij,kj->k", p, rc, p)
    Rp = np.einsum("ki,ki->k", dR, p)
    rate = 2 * s**4 * dRdt + 2 * s**3 * Rp + s**2 * pp + 2 * s**2 * R
    w = clenshaw_curtis_weights(len(s)) * s[-1]
    K = float(w @ rate)
    pos = s > 0
    sp = s[pos]
    HX = dRdt[pos] + Rp[pos] / sp + pp[pos] / (2 * sp**2) + R[pos] / sp**2
    X = geod.X_end
    x_sq = float(X @ g[-1] @ X)
    kr = abs(t**1.5 * (R[-1] + x_sq) - K - 0.5 * geod.length)

    # Euler-Lagrange defect of the eta-parametrised equation, relative to the
    # size of the individual terms
    acc = np.asarray(_rhs_many(model, jnp.asarray(s[pos]), jnp.asarray(np.hstack([geod.beta[pos], p[pos]]))))[
        :, model.dim:
    ]
    Xs = p[pos] / (2 * sp[:, None])
    d2 = acc / (4 * sp[:, None] ** 2) - p[pos] / (4 * sp[:, None] ** 3)
    nabla_xx = d2 + np.einsum("nkij,ni,nj->nk", gam[pos], Xs, Xs)
    gradR = np.linalg.solve(g[pos], dR[pos][..., None])[..., 0]
    rcX = np.linalg.solve(g[pos], np.einsum("nij,nj->ni", rc[pos], Xs)[..., None])[..., 0]
    defect = gradR - 2 * nabla_xx + 4 * rcX - Xs / sp[:, None] ** 2
    size = 1.0 + np.linalg.norm(Xs, axis=1) / sp**2 + np.linalg.norm(gradR, axis=1)
    el = float(np.max(np.linalg.norm(defect, axis=1) / size)) if pos.any() else 0.0

    grad_res, grad_fd, grad_formula = math.nan, None, None
    if grad_check:
        grad_formula = g[-1] @ p[-1]  # covector of 2 sqrt(t) X
        grad_fd = gradient_fd(model, geod, fd_step)
        diff = grad_fd - grad_formula
        grad_res = float(math.sqrt(max(diff @ np.linalg.solve(g[-1], diff), 0.0)))
    return GeodesicDiagnostics(
        eta=sp**2, HX_samples=HX, K=K, K_ode=geod.K, grad_identity_residual=grad_res,
        kr_residual=float(kr), el_defect=el, grad_fd=grad_fd, grad_formula=grad_formula,
    )


def gradient_fd(model, geod, h=1e-5):
    """Central-difference coordinate gradient of L+(., t) at the endpoint."""
    n = model.dim
    y = geod.endpoint
    step = h * max(1.0, float(np.linalg.norm(y)))
    pts = np.concatenate([y + step * np.eye(n), y - step * np.eye(n)])
    L, _ = lplus_many(model, pts, geod.t_end, np.tile(geod.V, (2 * n, 1)))
    return (L[:n] - L[n:]) / (2 * step)


# --------------------------------------------------------------------------
# path-space minimisation oracle


def minimize_path(model, y, t, *, degree=10, order=48, starts=4, seed=0):
    """Independent estimate of L+(y, t) by direct minimisation over paths.

    Paths are ``beta(s) = (s / sqrt t) y + sigma (1 - sigma) sum_k c_k P_k(sigma)``
    with ``sigma = s / sqrt t`` and Legendre polynomials ``P_k``; the action is
    integrated by Gauss-Legendre quadrature and minimised with BFGS from a few
    deterministic starting paths. Returns the smallest action found.
    """
    require_analytic(model)
    _check_t(model, t)
    y = _as_points(model, y)[0]
    n = model.dim
    root = math.sqrt(t)
    x, w = np.polynomial.legendre.leggauss(order)
    sig = 0.5 * (x + 1.0)
    w = jnp.asarray(0.5 * root * w)
    s = jnp.asarray(root * sig)
    V = np.polynomial.legendre.legvander(2 * sig - 1, degree)
    dV = np.stack([np.polynomial.legendre.legval(2 * sig - 1, np.polynomial.legendre.legder(np.eye(degree + 1)[k])) * 2
                   for k in range(degree + 1)], axis=1)
    bump = sig * (1 - sig)
    dbump = 1 - 2 * sig
    basis = jnp.asarray(bump[:, None] * V)
    dbasis = jnp.asarray((dbump[:, None] * V + bump[:, None] * dV) / root)
    lin = jnp.asarray(sig[:, None] * y[None])
    dlin = jnp.asarray(np.tile(y / root, (order, 1)))

    def action(c):
        c = c.reshape(degree + 1, n)
        B = lin + basis @ c
        P = dlin + dbasis @ c
        inside = jax.vmap(gm.inside_chart, in_axes=(None, 0))(model, B)
        f = jax.vmap(_integrand, in_axes=(None, 0, 0, 0))(model, B, P, s)
        return jnp.where(jnp.all(inside), w @ f, jnp.inf)

    fun = jax.jit(jax.value_and_grad(action))

    def wrapped(c):
        val, grad = fun(jnp.asarray(c))
        return float(val), np.asarray(grad, dtype=float)

    rng = np.random.default_rng(seed)
    best = math.inf
    scale = 0.25 * max(1.0, float(np.linalg.norm(y)))
    for k in range(starts):
        c0 = np.zeros((degree + 1) * n) if k == 0 else scale * rng.standard_normal((degree + 1) * n) / (degree + 1)
        if not math.isfinite(wrapped(c0)[0]):
            continue
        sol = minimize(wrapped, c0, jac=True, method="BFGS", options={"gtol": 1e-10, "maxiter": 2000})
        if math.isfinite(sol.fun):
            best = min(best, float(sol.fun))
    return best


__all__ = [
    "GeodesicDiagnostics",
    "LPlusGeodesic",
    "RootSet",
    "antipode_time",
    "exp_inverse",
    "frame0",
    "k_integral",
    "lplus_length",
    "lplus_many",
    "minimize_path",
    "reduced_length",
    "run_batch",
    "shoot",
    "shooting_roots",
]
