"""Closed-form curvature of the conformally flat analytic charts.

Every analytic model has ``g = exp(2 phi) delta`` in its chart, so the
quantities needed inside the geodesic integrator follow from derivatives of
``phi`` alone:

    Gamma^k_ij = delta_ki phi_j + delta_kj phi_i - delta_ij phi_k,
    Rc = -(n-2) (Hess0 phi - dphi dphi) - (Lap0 phi + (n-2) |dphi|^2) delta,
    R  = -exp(-2 phi) (2 (n-1) Lap0 phi + (n-1)(n-2) |dphi|^2),

with flat-space Hessian and Laplacian. These are far cheaper to trace and
compile than the generic formulas in :mod:`.curvature`, which serve as their
independent check.
"""

import jax
import jax.numpy as jnp

from .models import conformal_factor


def phi(model, u, t):
    return 0.5 * jnp.log(conformal_factor(model, u, t))


def christoffel_contract(model, u, t, p, q):
    """Gamma(p, q) as a vector."""
    d = jax.grad(phi, argnums=1)(model, u, t)
    return p * (d @ q) + q * (d @ p) - (p @ q) * d


def ricci(model, u, t):
    n = model.dim
    d = jax.grad(phi, argnums=1)(model, u, t)
    H = jax.hessian(phi, argnums=1)(model, u, t)
    lap = jnp.trace(H)
    return -(n - 2) * (H - jnp.outer(d, d)) - (lap + (n - 2) * d @ d) * jnp.eye(n)


def scalar(model, u, t):
    n = model.dim
    f = phi(model, u, t)
    d = jax.grad(phi, argnums=1)(model, u, t)
    lap = jnp.trace(jax.hessian(phi, argnums=1)(model, u, t))
    return -jnp.exp(-2.0 * f) * (2 * (n - 1) * lap + (n - 1) * (n - 2) * d @ d)


def grad_scalar(model, u, t):
    return jax.grad(scalar, argnums=1)(model, u, t)


def dscalar_dt(model, u, t):
    return jax.grad(scalar, argnums=2)(model, u, t)


def dphi_dt(model, u, t):
    return jax.grad(phi, argnums=2)(model, u, t)
