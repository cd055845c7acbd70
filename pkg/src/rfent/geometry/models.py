"""Analytic Ricci-flow backgrounds.

Every analytic model lives on a single global chart centred at the basepoint
(the origin) in which the metric is conformally flat:

* ``flat``      g = lambda * delta                         (Cartesian)
* ``einstein``  g = c(t) * 4 / (1 + kappa |u|^2)^2 * delta (Poincare ball for
  kappa < 0, stereographic from the antipode for kappa > 0),
  c(t) = 1 - 2 (n-1) kappa t
* ``warped`` with profile ``cigar`` (n = 2): Hamilton's cigar
  g = delta / (exp(4t) + |u|^2), i.e. ds^2 + tanh(s)^2 dtheta^2 at t = 0.

``scale`` realises the parabolic rescaling g_scale(t) = scale * g(t / scale).
Models are pytrees: ``kappa`` and ``scale`` are traced leaves, while
``family``, ``dim`` and ``profile`` are static, so one compiled kernel serves
every rescaled copy of a family.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import jax
import jax.numpy as jnp
import numpy as np

from ..errors import ChartError, ConfigurationError, DomainError

FAMILIES = ("flat", "einstein", "warped")
ANALYTIC_PROFILES = ("cigar",)

# stereographic radius at which a sphere geodesic is declared to have reached
# the antipode (geodesic distance to the antipode ~ 2 / radius)
SPHERE_EXIT_RADIUS = 1e4
_FAR = 1e12


@jax.tree_util.register_pytree_node_class
@dataclass(frozen=True)
class ManifoldModel:
    """A Ricci flow g(t) on a global chart with basepoint at the origin."""

    family: str
    dim: int
    kappa: float = 0.0
    scale: float = 1.0
    profile: str | None = None

    def tree_flatten(self):
        return (self.kappa, self.scale), (self.family, self.dim, self.profile)

    @classmethod
    def tree_unflatten(cls, aux, children):
        family, dim, profile = aux
        kappa, scale = children
        return cls(family, dim, kappa, scale, profile)

    # -- construction -------------------------------------------------------

    @classmethod
    def flat(cls, dim):
        return cls("flat", dim).validated()

    @classmethod
    def einstein(cls, dim, kappa):
        return cls("einstein", dim, float(kappa)).validated()

    @classmethod
    def hyperbolic(cls, dim):
        return cls.einstein(dim, -1.0)

    @classmethod
    def sphere(cls, dim):
        return cls.einstein(dim, 1.0)

    @classmethod
    def cigar(cls):
        return cls("warped", 2, profile="cigar").validated()

    def validated(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not isinstance(self.dim, int) or self.dim < 2:
            raise ConfigurationError(f"dimension must be an integer >= 2, got {self.dim!r}")
        if not (float(self.scale) > 0.0):
            raise ConfigurationError(f"scale must be positive, got {self.scale!r}")
        if self.family == "warped":
            if self.profile not in ANALYTIC_PROFILES:
                raise ConfigurationError(
                    f"analytic warped profile must be one of {ANALYTIC_PROFILES}, got {self.profile!r}"
                    " (numerical profiles are handled by WarpedFlow)"
                )
            if self.profile == "cigar" and self.dim != 2:
                raise ConfigurationError("the cigar profile is two-dimensional")
        return self

    def rescaled(self, lam):
        """The flow lam * g(t / lam)."""
        if not lam > 0:
            raise ConfigurationError(f"rescaling factor must be positive, got {lam!r}")
        return replace(self, scale=float(self.scale) * float(lam))

    # -- python-side metadata ------------------------------------------------

    @property
    def name(self):
        if self.family == "einstein":
            return f"einstein(kappa={float(self.kappa):g})"
        if self.family == "warped":
            return f"warped({self.profile})"
        return self.family

    @property
    def t_max(self):
        if self.family == "einstein" and self.kappa > 0:
            return float(self.scale) / (2.0 * (self.dim - 1) * float(self.kappa))
        return math.inf

    @property
    def basepoint(self):
        return np.zeros(self.dim)

    @property
    def is_flat(self):
        return self.family == "flat" or (self.family == "einstein" and self.kappa == 0.0)

    @property
    def isotropic(self):
        """All analytic models are rotationally symmetric about the basepoint."""
        return True

    def check_time(self, t):
        if not (0.0 <= t < self.t_max):
            raise DomainError(t, self.t_max)

    def check_point(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ChartError(f"point must have shape ({self.dim},), got {u.shape}")
        if not bool(inside_chart(self, jnp.asarray(u))):
            raise ChartError(f"point {u.tolist()} outside the chart of {self.name}")

    def distance_from_basepoint(self, u):
        """Riemannian distance d_{g(0)}(x, u)."""
        r = float(np.linalg.norm(u))
        lam = float(self.scale)
        k = float(self.kappa)
        if self.family == "flat":
            d = r
        elif self.family == "einstein":
            if k < 0:
                d = 2.0 * math.atanh(math.sqrt(-k) * r) / math.sqrt(-k)
            elif k > 0:
                d = 2.0 * math.atan(math.sqrt(k) * r) / math.sqrt(k)
            else:
                d = 2.0 * r
        else:
            d = math.asinh(r)
        return math.sqrt(lam) * d

    def chart_radius(self, d):
        """Inverse of :meth:`distance_from_basepoint` along a ray."""
        d = d / math.sqrt(float(self.scale))
        k = float(self.kappa)
        if self.family == "flat":
            return d
        if self.family == "einstein":
            if k < 0:
                return math.tanh(0.5 * math.sqrt(-k) * d) / math.sqrt(-k)
            if k > 0:
                return math.tan(0.5 * math.sqrt(k) * d) / math.sqrt(k)
            return 0.5 * d
        return math.sinh(d)

    @property
    def diameter(self):
        if self.family == "einstein" and self.kappa > 0:
            return math.sqrt(float(self.scale)) * math.pi / math.sqrt(float(self.kappa))
        return math.inf

    def to_dict(self):
        d = {"family": self.family, "dim": self.dim}
        if self.family == "einstein":
            d["kappa"] = float(self.kappa)
        if self.family == "warped":
            d["profile"] = self.profile
        if float(self.scale) != 1.0:
            d["scale"] = float(self.scale)
        return d


def conformal_factor(model, u, t):
    """w(u, t) with g = w * delta."""
    lam = model.scale
    tt = t / lam
    rho = jnp.dot(u, u)
    n = model.dim
    if model.family == "flat":
        w = jnp.ones_like(rho)
    elif model.family == "einstein":
        c = 1.0 - 2.0 * (n - 1) * model.kappa * tt
        w = 4.0 * c / (1.0 + model.kappa * rho) ** 2
    elif model.profile == "cigar":
        w = 1.0 / (jnp.exp(4.0 * tt) + rho)
    else:
        raise ConfigurationError(f"no analytic metric for {model!r}")
    return lam * w


def metric(model, u, t):
    """Metric components g_ij(u, t) in the global chart."""
    return conformal_factor(model, u, t) * jnp.eye(model.dim)


def inside_chart(model, u):
    rho = jnp.dot(u, u)
    if model.family == "einstein":
        k = model.kappa
        limit = jnp.where(
            k < 0, (1.0 - 1e-9) / jnp.abs(jnp.where(k < 0, k, 1.0)),
            jnp.where(k > 0, SPHERE_EXIT_RADIUS**2 / jnp.where(k > 0, k, 1.0), _FAR),
        )
        return rho < limit
    return rho < _FAR


def load_model(spec):
    """Build a model from a JSON string, a path, or a mapping.

    Numerical warped profiles (``sin``, ``sinh``, ``linear``, ``table``) return
    a :class:`~rfent.geometry.warped.WarpedFlow` instead of an analytic model.
    """
    if isinstance(spec, str):
        text = spec.strip()
        if not text.startswith("{"):
            with open(spec) as fh:
                text = fh.read()
        spec = json.loads(text)
    spec = dict(spec)
    family = spec.pop("family", None)
    if family is None:
        raise ConfigurationError("model definition needs a 'family'")
    family = str(family).lower()
    aliases = {"hyperbolic": ("einstein", -1.0), "sphere": ("einstein", 1.0)}
    if family in aliases:
        family, kappa = aliases[family]
        spec.setdefault("kappa", kappa)
    if family == "cigar":
        family = "warped"
        spec.setdefault("profile", "cigar")
    dim = spec.pop("dim", None)
    if dim is None:
        dim = 2 if spec.get("profile") == "cigar" else None
    if dim is None:
        raise ConfigurationError("model definition needs 'dim'")
    if family == "warped" and spec.get("profile") not in ANALYTIC_PROFILES:
        from .warped import WarpedFlow

        return WarpedFlow.from_spec(dict(spec, dim=dim))
    kappa = float(spec.pop("kappa", 0.0))
    scale = float(spec.pop("scale", 1.0))
    profile = spec.pop("profile", None)
    if spec:
        raise ConfigurationError(f"unknown model keys: {sorted(spec)}")
    return ManifoldModel(family, dim, kappa, scale, profile).validated()
