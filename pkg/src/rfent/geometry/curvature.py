"""Curvature of analytic models by automatic differentiation of the metric.

Index conventions (chart components, all arrays in float64):

* ``christoffel(...)[k, i, j]`` is Gamma^k_ij.
* ``riemann(...)[a, b, c, d]`` is g(R(d_a, d_b) d_c, d_d) with
  R(X, Y)Z = nabla_X nabla_Y Z - nabla_Y nabla_X Z, so that
  ``R(X, Y, Y, X)`` is |X ^ Y|^2 times the sectional curvature.
* ``nabla_rc[k, i, j]`` is (nabla_k Rc)_ij.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import jax
import jax.numpy as jnp
import numpy as np
import scipy.linalg

from ..errors import ChartError, DomainError
from . import models as _m


def metric(model, u, t):
    return _m.metric(model, u, t)


def metric_dt(model, u, t):
    return jax.jacfwd(metric, argnums=2)(model, u, t)


def christoffel(model, u, t):
    g = metric(model, u, t)
    dg = jax.jacfwd(metric, argnums=1)(model, u, t)  # dg[a, b, c] = d_c g_ab
    low = 0.5 * (jnp.einsum("jki->kij", dg) + jnp.einsum("ikj->kij", dg) - jnp.einsum("ijk->kij", dg))
    return jnp.linalg.solve(g, low.reshape(g.shape[0], -1)).reshape(low.shape)


def riemann_up(model, u, t):
    """R^l_ijk with R(d_i, d_j) d_k = R^l_ijk d_l."""
    gam = christoffel(model, u, t)
    dgam = jax.jacfwd(christoffel, argnums=1)(model, u, t)  # dgam[l, j, k, i] = d_i Gamma^l_jk
    term = jnp.einsum("ljki->lijk", dgam) - jnp.einsum("likj->lijk", dgam)
    quad = jnp.einsum("lim,mjk->lijk", gam, gam) - jnp.einsum("ljm,mik->lijk", gam, gam)
    return term + quad


def riemann(model, u, t):
    g = metric(model, u, t)
    return jnp.einsum("lijk,ld->ijkd", riemann_up(model, u, t), g)


def ricci(model, u, t):
    return jnp.einsum("iijk->jk", riemann_up(model, u, t))


def scalar(model, u, t):
    g = metric(model, u, t)
    return jnp.trace(jnp.linalg.solve(g, ricci(model, u, t)))


def grad_scalar(model, u, t):
    """Coordinate differential dR (a covector)."""
    return jax.grad(scalar, argnums=1)(model, u, t)


def hess_scalar(model, u, t):
    d2 = jax.hessian(scalar, argnums=1)(model, u, t)
    return d2 - jnp.einsum("kij,k->ij", christoffel(model, u, t), grad_scalar(model, u, t))


def nabla_ricci(model, u, t):
    gam = christoffel(model, u, t)
    rc = ricci(model, u, t)
    drc = jax.jacfwd(ricci, argnums=1)(model, u, t)  # drc[i, j, k] = d_k Rc_ij
    return (
        jnp.einsum("ijk->kij", drc)
        - jnp.einsum("mki,mj->kij", gam, rc)
        - jnp.einsum("mkj,im->kij", gam, rc)
    )


def _bundle_arrays(model, u, t):
    return dict(
        g=metric(model, u, t),
        christoffel=christoffel(model, u, t),
        Rm=riemann(model, u, t),
        Rc=ricci(model, u, t),
        R=scalar(model, u, t),
        dR=grad_scalar(model, u, t),
        hessR=hess_scalar(model, u, t),
        dRdt=jax.grad(scalar, argnums=2)(model, u, t),
        dRcdt=jax.jacfwd(ricci, argnums=2)(model, u, t),
        nablaRc=nabla_ricci(model, u, t),
        dgdt=metric_dt(model, u, t),
    )


_bundle_jit = jax.jit(_bundle_arrays)


@dataclass(frozen=True)
class CurvatureBundle:
    """Curvature data at one spacetime point, in chart components.

    Bilinear forms are stored as covariant matrices; ``gradR`` is the vector
    g^{-1} dR. The helper methods evaluate the contractions used by the
    variational formulas on vectors given in chart components.
    """

    g: np.ndarray
    christoffel: np.ndarray
    Rm: np.ndarray
    Rc: np.ndarray
    R: float
    dR: np.ndarray
    hessR: np.ndarray
    dRdt: float
    dRcdt: np.ndarray
    nablaRc: np.ndarray
    dgdt: np.ndarray

    @property
    def gradR(self):
        return np.linalg.solve(self.g, self.dR)

    def rm(self, X, Y):
        """R(X, Y, X, Y): sectional curvature times |X ^ Y|^2."""
        return float(np.einsum("abcd,a,b,c,d->", self.Rm, X, Y, Y, X))

    def nabla_rc(self, Z, A, B):
        """(nabla_Z Rc)(A, B)."""
        return float(np.einsum("kij,k,i,j->", self.nablaRc, Z, A, B))

    def inner(self, X, Y):
        return float(X @ self.g @ Y)

    def H(self, X, eta):
        """H(X) = dR/dt + 2<grad R, X> + 2 Rc(X, X) + R / eta."""
        return self.dRdt + 2.0 * float(self.dR @ X) + 2.0 * float(X @ self.Rc @ X) + self.R / eta

    def H_pair(self, X, Y, eta):
        """H(X, Y) for a variation field Y along an L+ geodesic."""
        rc_y = self.Rc @ Y
        rc_sq = float(rc_y @ np.linalg.solve(self.g, rc_y))
        return (
            -float(Y @ self.hessR @ Y)
            + 2.0 * self.rm(X, Y)
            + 2.0 * rc_sq
            + float(Y @ self.Rc @ Y) / eta
            + 2.0 * float(Y @ self.dRcdt @ Y)
            - 4.0 * self.nabla_rc(Y, Y, X)
            + 4.0 * self.nabla_rc(X, Y, Y)
        )


def _check(model, p, t):
    model.check_time(float(t))
    p = np.asarray(p, dtype=float)
    model.check_point(p)
    return jnp.asarray(p), float(t)


def metric_at(model, p, t):
    """Metric components g_ij(p, t)."""
    if not isinstance(model, _m.ManifoldModel):
        return model.metric_at(p, t)
    u, t = _check(model, p, t)
    return np.asarray(_metric_jit(model, u, t))


_metric_jit = jax.jit(metric)


def curvature_at(model, p, t):
    """All curvature quantities at (p, t) as a :class:`CurvatureBundle`."""
    if not isinstance(model, _m.ManifoldModel):
        return model.curvature_at(p, t)
    u, t = _check(model, p, t)
    arrs = _bundle_jit(model, u, t)
    return CurvatureBundle(**{k: (float(v) if np.ndim(v) == 0 else np.asarray(v)) for k, v in arrs.items()})


@partial(jax.jit, static_argnums=())
def _residual_kernel(model, u, t, h):
    dg = (metric(model, u, t + h) - metric(model, u, t - h)) / (2.0 * h)
    return jnp.max(jnp.abs(dg + 2.0 * ricci(model, u, t)))


def flow_residual(model, p, t, h=1e-4):
    """max |(g(t+h) - g(t-h)) / 2h + 2 Rc(t)| over components."""
    if not isinstance(model, _m.ManifoldModel):
        return model.flow_residual(p, t, h)
    if not (t - h > 0.0 and t + h < model.t_max):
        raise DomainError(t - h if t - h <= 0 else t + h, model.t_max)
    u, t = _check(model, p, t)
    if model.is_flat:
        return 0.0
    return float(_residual_kernel(model, u, t, float(h)))


def ricci_eigenvalues(model, p, t):
    """Eigenvalues of Rc relative to g at (p, t), ascending."""
    b = curvature_at(model, p, t)
    return scipy.linalg.eigh(b.Rc, b.g, eigvals_only=True)


def min_ricci_eigenvalue(model, p, t):
    """Smallest eigenvalue of Rc relative to g at (p, t)."""
    return float(ricci_eigenvalues(model, p, t)[0])


__all__ = [
    "CurvatureBundle",
    "ChartError",
    "christoffel",
    "curvature_at",
    "flow_residual",
    "metric_at",
    "min_ricci_eigenvalue",
    "ricci_eigenvalues",
    "ricci",
    "riemann",
    "scalar",
]
