"""Adaptive Dormand-Prince 5(4) integrator written in JAX.

The integrator is jit- and vmap-compatible: all control flow goes through
``lax`` primitives and the number of outputs is static. A lane whose state
leaves the admissible region (``inside`` returns False) is frozen and its
exit abscissa is reported, located to ``exit_tol`` by step rejection.
"""

from __future__ import annotations

import jax
import jax.numpy as jnp
import numpy as np
from jax import lax

# Dormand & Prince (1980), RK5(4)7M
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_E = tuple(b - b4 for b, b4 in zip(_B, _B4))

STATUS_OK = 0
STATUS_EXITED = 1
STATUS_FAILED = 2

ORDER = 5


_A_MAT = [[0.0] * 7 for _ in range(7)]
for _i, _row in enumerate(_A):
    _A_MAT[_i][: len(_row)] = list(_row)


def _dp_step(fun, s, y, f0, h, args):
    # stages run in a loop so that ``fun`` is traced once per step
    a = jnp.asarray(_A_MAT, dtype=y.dtype)
    c = jnp.asarray(_C, dtype=y.dtype)
    ks = jnp.zeros((7,) + y.shape, dtype=y.dtype).at[0].set(f0)

    def stage(i, ks):
        dy = jnp.tensordot(a[i], ks, axes=1)
        return ks.at[i].set(fun(s + c[i] * h, y + h * dy, *args))

    ks = lax.fori_loop(1, 7, stage, ks)
    y_new = y + h * jnp.tensordot(jnp.asarray(_B, dtype=y.dtype), ks, axes=1)
    err = h * jnp.tensordot(jnp.asarray(_E, dtype=y.dtype), ks, axes=1)
    # FSAL: last stage is f(s + h, y_new)
    return y_new, err, ks[6]


def integrate(fun, y0, s_out, args=(), *, rtol=1e-10, atol=1e-10, inside=None,
              exit_tol=1e-11, max_steps=20000):
    """Integrate ``y' = fun(s, y, *args)`` from ``s_out[0]`` through ``s_out``.

    ``s_out`` must be monotone (either direction). Returns ``(ys, status,
    s_stop)`` where ``ys[k]`` is the state at ``s_out[k]`` (the frozen state
    after an exit or failure) and ``s_stop`` is the abscissa reached.
    """
    if inside is None:
        inside = lambda y: True  # noqa: E731
    span = s_out[-1] - s_out[0]
    direction = jnp.where(span >= 0, 1.0, -1.0)
    h_init = jnp.maximum(jnp.abs(span), 1e-300) / 64.0
    h_floor = exit_tol * jnp.maximum(jnp.abs(span), 1e-300)

    def error_norm(y, y_new, err):
        scale = atol + rtol * jnp.maximum(jnp.abs(y), jnp.abs(y_new))
        return jnp.sqrt(jnp.mean((err / scale) ** 2))

    def advance(carry, s_target):
        def cond(c):
            s, _, _, _, status, nsteps = c
            return (status == STATUS_OK) & (direction * (s_target - s) > 0) & (nsteps < max_steps)

        def body(c):
            s, y, f, h, status, nsteps = c
            remaining = jnp.abs(s_target - s)
            h_try = jnp.minimum(h, remaining)
            last = h_try >= remaining
            y_new, err, f_new = _dp_step(fun, s, y, f, direction * h_try, args)
            en = error_norm(y, y_new, err)
            finite = jnp.all(jnp.isfinite(y_new)) & jnp.isfinite(en)
            ok_region = inside(y_new) & finite
            accept = ok_region & (en <= 1.0)
            factor = jnp.where(
                en > 0, 0.9 * en ** (-1.0 / ORDER), 5.0
            )
            factor = jnp.clip(factor, 0.2, 5.0)
            h_next = jnp.where(ok_region, h_try * factor, h_try * 0.25)
            s_acc = jnp.where(last, s_target, s + direction * h_try)
            s2 = jnp.where(accept, s_acc, s)
            y2 = jnp.where(accept, y_new, y)
            f2 = jnp.where(accept, f_new, f)
            # keep the pre-clipped step when the interval end forced a short step
            h2 = jnp.where(accept & last, jnp.maximum(h_next, h), h_next)
            stuck = (~accept) & (h_next < h_floor)
            status2 = jnp.where(
                stuck, jnp.where(finite & (~inside(y_new)), STATUS_EXITED, STATUS_FAILED), status
            )
            return s2, y2, f2, h2, status2, nsteps + 1

        s, y, f, h, status, nsteps = lax.while_loop(cond, body, carry)
        status = jnp.where((status == STATUS_OK) & (nsteps >= max_steps), STATUS_FAILED, status)
        carry = (s, y, f, h, status, nsteps)
        return carry, y

    s0 = s_out[0]
    f0 = fun(s0, y0, *args)
    carry0 = (s0, y0, f0, h_init, jnp.asarray(STATUS_OK), jnp.asarray(0))
    carry, ys = lax.scan(advance, carry0, s_out[1:])
    ys = jnp.concatenate([y0[None, :], ys], axis=0)
    s_stop, status = carry[0], carry[4]
    return ys, status, s_stop


def chebyshev_lobatto(m):
    """Chebyshev-Lobatto nodes mapped to [0, 1], increasing."""
    k = jnp.arange(m)
    return 0.5 * (1.0 - jnp.cos(jnp.pi * k / (m - 1)))


def clenshaw_curtis_weights(m):
    """Weights on [0, 1] matching :func:`chebyshev_lobatto` (numpy)."""
    N = m - 1
    theta = np.pi * np.arange(N + 1) / N
    w = np.zeros(N + 1)
    inner = np.arange(1, N)
    v = np.ones(N - 1)
    if N % 2 == 0:
        w[0] = w[N] = 1.0 / (N**2 - 1)
        for k in range(1, N // 2):
            v -= 2.0 * np.cos(2 * k * theta[inner]) / (4 * k**2 - 1)
        v -= np.cos(N * theta[inner]) / (N**2 - 1)
    else:
        w[0] = w[N] = 1.0 / N**2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[inner]) / (4 * k**2 - 1)
    w[inner] = 2.0 * v / N
    return 0.5 * w


__all__ = ["integrate", "chebyshev_lobatto", "clenshaw_curtis_weights", "STATUS_OK", "STATUS_EXITED", "STATUS_FAILED"]
