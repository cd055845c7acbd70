"""Rotationally symmetric Ricci flow on warped products, solved numerically.

The metric is written as ``A(r,t)^2 dr^2 + b(r,t)^2 g_sphere`` on a fixed
radial coordinate ``r`` (r equals arclength at t = 0). With this choice the
scheme integrates the Ricci flow itself rather than a gauge-modified flow:

    A_t = -(n-1) K_rad A,        b_t = -(K_rad + (n-2) K_tan) b,

where ``K_rad = -b_ss / b`` and ``K_tan = (1 - b_s^2) / b^2`` are the radial and
tangential sectional curvatures (s is arclength). The unknown ``b`` is stored
as ``B = b / psi(r)`` with ``psi(r) = r`` (open profiles) or
``(L/pi) sin(pi r / L)`` (profiles closing up at ``r = L``), which makes the
axis terms regular. ``K_tan`` is obtained from the identity
``d(1 - b_s^2) = K_rad d(b^2)`` integrated from the nearest pole, which avoids
the 0/0 form at the axis.

Space is discretised on the staggered grid ``r_i = (i + 1/2) dr`` with even
reflection at poles; time uses the three-stage strong-stability-preserving
Runge-Kutta scheme with ``dt <= CFL * (min A * dr)^2``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline

from ..errors import ChartError, ConfigurationError, DomainError, NeckDegenerationError

CFL = 0.2
PROFILES = ("sin", "sinh", "linear", "table")
TIME_FD_STEP = 1e-4
_CHECKPOINT_DT = 1.0 / 128.0


@dataclass
class WarpedState:
    t: float
    A: np.ndarray
    B: np.ndarray


def _profile_function(profile, s_max, table=None):
    if profile == "sin":
        return lambda s: (s_max / math.pi) * np.sin(math.pi * s / s_max), True
    if profile == "sinh":
        return np.sinh, False
    if profile == "linear":
        return lambda s: np.asarray(s, dtype=float), False
    if profile == "table":
        s_tab, phi_tab = table
        closed = abs(phi_tab[-1]) < 1e-9 * max(1.0, float(np.max(phi_tab)))
        spline = CubicSpline(s_tab, phi_tab)
        return spline, closed
    raise ConfigurationError(f"unknown warped profile {profile!r}; expected one of {PROFILES}")


def read_profile_csv(path):
    """Read a two-column (s, phi) table, header optional."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip().startswith("#"):
                continue
            try:
                rows.append((float(rec[0]), float(rec[1])))
            except ValueError:
                if rows:
                    raise ConfigurationError(f"non-numeric row in profile table: {rec}") from None
    if len(rows) < 4:
        raise ConfigurationError("profile table needs at least four rows")
    arr = np.array(rows)
    s, phi = arr[:, 0], arr[:, 1]
    if s[0] != 0.0 or abs(phi[0]) > 1e-12:
        raise ConfigurationError("profile table must start at (0, 0)")
    if np.any(np.diff(s) <= 0):
        raise ConfigurationError("profile table s column must be strictly increasing")
    if np.any(phi[1:-1] <= 0):
        raise ConfigurationError("profile must be positive in the interior")
    slope = (phi[1] - phi[0]) / (s[1] - s[0])
    if abs(slope - 1.0) > 1e-2:
        raise ConfigurationError(f"profile must close smoothly at s=0 (phi_s(0)=1), got {slope:.4g}")
    return s, phi


class WarpedFlow:
    """Numerical Ricci flow of ``ds^2 + phi(s)^2 g_sphere``.

    The object owns its evolving state; :meth:`state_at` hands out copies
    computed along a fixed schedule of checkpoints, so results do not depend
    on the order in which times are requested.
    """

    family = "warped"
    is_flat = False

    def __init__(self, dim, profile="sin", mesh=256, s_max=math.pi, table=None):
        if not isinstance(dim, int) or dim < 2:
            raise ConfigurationError(f"dimension must be an integer >= 2, got {dim!r}")
        if not isinstance(mesh, int) or mesh < 2:
            raise ConfigurationError(f"radial mesh needs at least 2 cells, got {mesh!r}")
        if profile == "table":
            if table is None:
                raise ConfigurationError("profile 'table' requires a (s, phi) table")
            s_max = float(table[0][-1])
        if not s_max > 0:
            raise ConfigurationError("s_max must be positive")
        self.dim = dim
        self.profile = profile
        self.mesh = mesh
        self.s_max = float(s_max)
        phi, self.closed = _profile_function(profile, self.s_max, table)
        self.dr = self.s_max / mesh
        self.r = (np.arange(mesh) + 0.5) * self.dr
        L = self.s_max
        if self.closed:
            self.psi = (L / math.pi) * np.sin(math.pi * self.r / L)
            self._pp = (math.pi / L) / np.tan(math.pi * self.r / L)
            self._ppp = np.full(mesh, -((math.pi / L) ** 2))
        else:
            self.psi = self.r.copy()
            self._pp = 1.0 / self.r
            self._ppp = np.zeros(mesh)
        B0 = np.asarray(phi(self.r), dtype=float) / self.psi
        if np.any(~np.isfinite(B0)) or np.any(B0 <= 0):
            raise ConfigurationError("initial profile must be positive in the interior")
        self._state = WarpedState(0.0, np.ones(mesh), B0)
        self._checkpoints = {0: WarpedState(0.0, np.ones(mesh), B0.copy())}
        self.t_max = math.inf
        if profile == "sin" and abs(L - math.pi) < 1e-12:
            self.t_max = 1.0 / (2.0 * (dim - 1))

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_spec(cls, spec):
        spec = dict(spec)
        dim = spec.pop("dim")
        profile = spec.pop("profile", "sin")
        mesh = int(spec.pop("mesh", 256))
        s_max = float(spec.pop("s_max", math.pi))
        table = None
        path = spec.pop("table", None)
        if profile == "table":
            if path is None:
                raise ConfigurationError("profile 'table' requires a 'table' CSV path")
            table = read_profile_csv(path)
        if spec:
            raise ConfigurationError(f"unknown model keys: {sorted(spec)}")
        return cls(dim, profile, mesh, s_max, table)

    @property
    def name(self):
        return f"warped({self.profile}, mesh={self.mesh})"

    @property
    def basepoint(self):
        return np.zeros(self.dim)

    def to_dict(self):
        return {"family": "warped", "dim": self.dim, "profile": self.profile,
                "mesh": self.mesh, "s_max": self.s_max}

    def check_time(self, t):
        if not (0.0 <= t < self.t_max):
            raise DomainError(t, self.t_max)

    # -- discretisation -------------------------------------------------------

    def _ghosted(self, X):
        right = X[-1:] if self.closed else (3 * X[-1:] - 3 * X[-2:-1] + X[-3:-2])
        return np.concatenate([X[:1], X, right])

    def _curvatures(self, A, B):
        Ag, Bg = self._ghosted(A), self._ghosted(B)
        dr = self.dr
        Ar = (Ag[2:] - Ag[:-2]) / (2 * dr)
        Br = (Bg[2:] - Bg[:-2]) / (2 * dr)
        Brr = (Bg[2:] - 2 * B + Bg[:-2]) / dr**2
        pp, ppp = self._pp, self._ppp
        bss_b = (ppp + 2 * pp * Br / B + Brr / B) / A**2 - (pp + Br / B) * Ar / A**3
        k_rad = -bss_b
        b2 = (B * self.psi) ** 2
        k_tan = self._tangential(k_rad, b2)
        return k_rad, k_tan

    def _tangential(self, k_rad, b2):
        def cumulative(k, w):
            inc = 0.5 * (k[1:] + k[:-1]) * np.diff(w)
            return np.concatenate([[k[0] * w[0]], k[0] * w[0] + np.cumsum(inc)])

        if not self.closed:
            return cumulative(k_rad, b2) / b2
        half = self.mesh // 2
        left = cumulative(k_rad, b2)
        right = cumulative(k_rad[::-1], b2[::-1])[::-1]
        out = np.where(np.arange(self.mesh) < half, left, right)
        return out / b2

    def _rhs(self, A, B):
        k_rad, k_tan = self._curvatures(A, B)
        n = self.dim
        ra = -(n - 1) * k_rad
        rb = -(k_rad + (n - 2) * k_tan)
        if not self.closed:
            ra[-1], rb[-1] = ra[-2], rb[-2]
        return A * ra, B * rb

    def max_step(self, state=None):
        state = state or self._state
        return CFL * (float(np.min(state.A)) * self.dr) ** 2

    def _step(self, state, dt):
        A, B = state.A, state.B
        fa, fb = self._rhs(A, B)
        A1, B1 = A + dt * fa, B + dt * fb
        fa, fb = self._rhs(A1, B1)
        A2 = 0.75 * A + 0.25 * (A1 + dt * fa)
        B2 = 0.75 * B + 0.25 * (B1 + dt * fb)
        fa, fb = self._rhs(A2, B2)
        A3 = A / 3.0 + 2.0 / 3.0 * (A2 + dt * fa)
        B3 = B / 3.0 + 2.0 / 3.0 * (B2 + dt * fb)
        t_new = state.t + dt
        ok = np.all(np.isfinite(A3)) and np.all(np.isfinite(B3))
        if not ok or np.min(B3) <= 0.0 or np.min(A3) <= 0.0:
            self.t_max = min(self.t_max, t_new)
            raise NeckDegenerationError(t_new)
        return WarpedState(t_new, A3, B3)

    def _advance(self, state, t_target):
        span = t_target - state.t
        if span <= 0:
            return WarpedState(state.t, state.A.copy(), state.B.copy())
        steps = max(1, math.ceil(span / self.max_step(state)))
        dt = span / steps
        for _ in range(steps):
            state = self._step(state, dt)
            if dt > self.max_step(state) * 1.5:
                # curvature blow-up: restart the remaining span with finer steps
                return self._advance(state, t_target)
        state.t = t_target
        return state

    def state_at(self, t):
        """Immutable copy of the evolved state at time ``t``."""
        self.check_time(t)
        j = int(math.floor(t / _CHECKPOINT_DT))
        k = max(i for i in self._checkpoints if i <= j)
        state = self._checkpoints[k]
        while k < j:
            state = self._advance(state, (k + 1) * _CHECKPOINT_DT)
            k += 1
            self._checkpoints[k] = state
        return self._advance(state, t)

    # -- owner-side stepping ----------------------------------------------------

    @property
    def state(self):
        s = self._state
        return WarpedState(s.t, s.A.copy(), s.B.copy())

    def step(self, dt):
        if not dt > 0:
            raise ConfigurationError(f"time step must be positive, got {dt!r}")
        limit = self.max_step()
        if dt > limit * (1 + 1e-12):
            raise ConfigurationError(
                f"time step {dt:.3g} violates dt <= {CFL} (min A dr)^2 = {limit:.3g}"
            )
        self._state = self._step(self._state, dt)
        return self.profile_arclength()

    def profile_arclength(self, state=None):
        """(s, phi) samples of the current profile in arclength."""
        state = state or self._state
        s = cumulative_simpson(state.A, x=self.r, initial=0.0) + 0.5 * self.dr * state.A[0]
        return s, state.B * self.psi

    # -- evaluators -------------------------------------------------------------

    def _radial_fields(self, state):
        """Fourth-order evaluation of A, b and their r-derivatives on the grid."""
        A, b = state.A, state.B * self.psi
        dr = self.dr

        def ghost2(X, odd):
            sign = -1.0 if odd else 1.0
            left = sign * X[1::-1]
            if self.closed:
                right = sign * X[:-3:-1]
            else:
                m = len(X)
                idx = np.arange(m - 5, m)
                coeffs = np.polyfit(idx, X[idx], 4)
                right = np.polyval(coeffs, [m, m + 1])
            return np.concatenate([left, X, right])

        def d1(X):
            return (-X[4:] + 8 * X[3:-1] - 8 * X[1:-3] + X[:-4]) / (12 * dr)

        def d2(X):
            return (-X[4:] + 16 * X[3:-1] - 30 * X[2:-2] + 16 * X[1:-3] - X[:-4]) / (12 * dr**2)

        Ag, bg = ghost2(A, False), ghost2(b, True)
        return A, d1(Ag), b, d1(bg), d2(bg)

    def sectional(self, state):
        """Radial and tangential sectional curvature on the grid (direct formulas)."""
        A, Ar, b, br, brr = self._radial_fields(state)
        bss = brr / A**2 - br * Ar / A**3
        k_rad = -bss / b
        k_tan = (1.0 - (br / A) ** 2) / b**2
        return k_rad, k_tan

    def _radius(self, p):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        r = float(p[0])
        if not (self.r[0] <= r <= self.r[-1]):
            raise ChartError(
                f"radius {r} outside the interior mesh range [{self.r[0]:.4g}, {self.r[-1]:.4g}]"
            )
        return r

    def _interp(self, values, r, nu=0):
        return float(CubicSpline(self.r, values)(r, nu))

    def metric_at(self, p, t):
        """Metric at radius ``p[0]`` in polar components (r, theta_1..theta_{n-1})
        at an equatorial angular position, where the round sphere metric is the
        identity."""
        r = self._radius(p)
        st = self.state_at(t)
        A = self._interp(st.A, r)
        b = self._interp(st.B * self.psi, r)
        return np.diag([A**2] + [b**2] * (self.dim - 1))

    def _scalar_grid(self, state):
        k_rad, k_tan = self.sectional(state)
        n = self.dim
        return 2 * (n - 1) * k_rad + (n - 1) * (n - 2) * k_tan, k_rad, k_tan

    def _point_data(self, r, t):
        st = self.state_at(t)
        A_, Ar_, b_, br_, _ = self._radial_fields(st)
        R, k_rad, k_tan = self._scalar_grid(st)
        n = self.dim
        A = self._interp(A_, r)
        Ar = self._interp(Ar_, r)
        b = self._interp(b_, r)
        br = self._interp(br_, r)
        f_rr = (n - 1) * k_rad * A_**2
        f_tt = (k_rad + (n - 2) * k_tan) * b_**2
        return dict(
            A=A, Ar=Ar, b=b, br=br,
            R=self._interp(R, r), Rr=self._interp(R, r, 1), Rrr=self._interp(R, r, 2),
            k_rad=self._interp(k_rad, r), k_tan=self._interp(k_tan, r),
            rc_rr=self._interp(f_rr, r), rc_tt=self._interp(f_tt, r),
            rc_rr_r=self._interp(f_rr, r, 1), rc_tt_r=self._interp(f_tt, r, 1),
        )

    def curvature_at(self, p, t):
        from .curvature import CurvatureBundle

        r = self._radius(p)
        self.check_time(t)
        h = TIME_FD_STEP
        if t + h >= self.t_max:
            raise DomainError(t + h, self.t_max)
        n = self.dim
        d = self._point_data(r, t)
        up = self._point_data(r, t + h)
        if t - h >= 0:
            dn = self._point_data(r, t - h)
            dt_ = lambda key: (up[key] - dn[key]) / (2 * h)  # noqa: E731
        else:
            dn = self._point_data(r, t + 2 * h)
            dt_ = lambda key: (-3 * d[key] + 4 * up[key] - dn[key]) / (2 * h)  # noqa: E731
        A, Ar, b, br = d["A"], d["Ar"], d["b"], d["br"]
        g = np.diag([A**2] + [b**2] * (n - 1))
        gam = np.zeros((n, n, n))
        gam[0, 0, 0] = Ar / A
        for i in range(1, n):
            gam[0, i, i] = -b * br / A**2
            gam[i, 0, i] = gam[i, i, 0] = br / b
        Rc = np.diag([d["rc_rr"]] + [d["rc_tt"]] * (n - 1))
        dR = np.zeros(n)
        dR[0] = d["Rr"]
        hess = np.zeros((n, n))
        hess[0, 0] = d["Rrr"]
        hess -= np.einsum("kij,k->ij", gam, dR)
        dRc = np.zeros((n, n, n))  # dRc[k, i, j] = d_k Rc_ij
        dRc[0] = np.diag([d["rc_rr_r"]] + [d["rc_tt_r"]] * (n - 1))
        nabla = dRc - np.einsum("mki,mj->kij", gam, Rc) - np.einsum("mkj,im->kij", gam, Rc)
        Rm = np.zeros((n, n, n, n))
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                kij = d["k_rad"] if 0 in (i, j) else d["k_tan"]
                val = kij * g[i, i] * g[j, j]
                # R(d_i, d_j, d_j, d_i) = K |d_i ^ d_j|^2
                Rm[i, j, j, i] = val
                Rm[i, j, i, j] = -val
        dRcdt = np.diag([dt_("rc_rr")] + [dt_("rc_tt")] * (n - 1))
        dgdt = np.diag([dt_("A") * 2 * A] + [dt_("b") * 2 * b] * (n - 1))
        return CurvatureBundle(
            g=g, christoffel=gam, Rm=Rm, Rc=Rc, R=d["R"], dR=dR, hessR=hess,
            dRdt=dt_("R"), dRcdt=dRcdt, nablaRc=nabla, dgdt=dgdt,
        )

    def flow_residual(self, p, t, h=TIME_FD_STEP):
        """max |(g(t+h) - g(t-h)) / 2h + 2 Rc(t)| at radius ``p[0]``."""
        if not (t - h > 0.0 and t + h < self.t_max):
            raise DomainError(t - h if t - h <= 0 else t + h, self.t_max)
        r = self._radius(p)
        gp = self.metric_at(p, t + h)
        gm = self.metric_at(p, t - h)
        d = self._point_data(r, t)
        rc = np.diag([d["rc_rr"]] + [d["rc_tt"]] * (self.dim - 1))
        return float(np.max(np.abs((gp - gm) / (2 * h) + 2 * rc)))

    def interior_radii(self, count=16, margin=0.1):
        """Evenly spaced radii away from the poles and the outer boundary."""
        lo = max(self.r[0], margin * self.s_max)
        hi = min(self.r[-1], (1 - margin) * self.s_max)
        return np.linspace(lo, hi, count)


def evolve_warped(flow, dt, grid=None):
    """Advance ``flow`` by one step of size ``dt``; returns the (s, phi) profile.

    ``grid`` may be passed to assert the radial mesh the caller expects.
    """
    if not isinstance(flow, WarpedFlow):
        raise ConfigurationError("evolve_warped needs a WarpedFlow (numerical warped model)")
    if grid is not None and (len(grid) != flow.mesh or not np.allclose(grid, flow.r)):
        raise ConfigurationError("grid does not match the flow's radial mesh")
    return flow.step(dt)


__all__ = ["CFL", "WarpedFlow", "evolve_warped", "read_profile_csv"]
