"""Quadrature rules for integrals of the form  int f(V) exp(-2|V|^2) dV  over R^n.

Nodes are generated for the Gaussian ``exp(-c|V|^2)`` and the remaining factor
``exp((c - 2)|V|^2)`` is folded into the weights. The default ``c = 1`` matches
the growth ``exp(|V|^2)`` of the reduced-volume density, so on flat space the
integrand seen by the rule is a pure Gaussian and every rule is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import product

import numpy as np
from scipy import special

from .errors import ConfigurationError

KINDS = ("tensor-hermite", "radial-spherical", "monte-carlo")
ALIASES = {"hermite": "tensor-hermite", "radial": "radial-spherical", "mc": "monte-carlo"}
WEIGHT_EXPONENT = 2.0


def sphere_area(n):
    """Area of the unit sphere S^{n-1} in R^n."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def gaussian_mass(n):
    """int exp(-2|V|^2) dV = (pi/2)^{n/2}."""
    return (math.pi / WEIGHT_EXPONENT) ** (n / 2)


@dataclass(frozen=True)
class Nodes:
    """Quadrature points ``V`` (rows) and weights; ``radii`` for radial rules."""

    V: np.ndarray
    weights: np.ndarray
    radial: bool = False

    @property
    def radii(self):
        return self.V[:, 0] if self.radial else np.linalg.norm(self.V, axis=1)

    def integrate(self, f_values):
        return float(np.dot(self.weights, f_values))


@dataclass(frozen=True)
class QuadratureScheme:
    kind: str = "tensor-hermite"
    order: int = 32
    seed: int = 0
    node_exponent: float = 1.0
    dim: int | None = None
    weight_exponent: float = WEIGHT_EXPONENT

    def __post_init__(self):
        kind = ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ConfigurationError(f"unknown quadrature kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if int(self.order) < 1:
            raise ConfigurationError(f"quadrature order must be positive, got {self.order}")
        object.__setattr__(self, "order", int(self.order))
        if not self.node_exponent > 0:
            raise ConfigurationError("node_exponent must be positive")
        if self.weight_exponent != WEIGHT_EXPONENT:
            raise ConfigurationError("the weight exponent is fixed at 2")

    @classmethod
    def from_spec(cls, spec):
        if isinstance(spec, QuadratureScheme):
            return spec
        if isinstance(spec, str):
            return cls(kind=spec)
        spec = dict(spec)
        unknown = set(spec) - {"kind", "order", "seed", "node_exponent", "dim"}
        if unknown:
            raise ConfigurationError(f"unknown quadrature keys: {sorted(unknown)}")
        return cls(**spec)

    def check_dim(self, n):
        if self.dim is not None and self.dim != n:
            raise ConfigurationError(f"quadrature scheme built for dim {self.dim}, model has dim {n}")
        if n < 1:
            raise ConfigurationError(f"dimension must be positive, got {n}")

    def halved(self):
        """The companion rule used for error estimates."""
        return replace(self, order=max(1, self.order // 2))

    def nodes(self, n):
        self.check_dim(n)
        c = self.node_exponent
        if self.kind == "tensor-hermite":
            x, w = special.roots_hermite(self.order)
            v1 = x / math.sqrt(c)
            w1 = w / math.sqrt(c) * np.exp((c - WEIGHT_EXPONENT) * v1**2)
            V = np.array(list(product(v1, repeat=n)))
            W = np.array([math.prod(ws) for ws in product(w1, repeat=n)])
            return Nodes(V, W)
        if self.kind == "radial-spherical":
            x, w = special.roots_genlaguerre(self.order, (n - 2) / 2)
            r = np.sqrt(x / c)
            W = sphere_area(n) * c ** (-n / 2) / 2.0 * w * np.exp((c - WEIGHT_EXPONENT) * r**2)
            V = np.zeros((self.order, n))
            V[:, 0] = r
            return Nodes(V, W, radial=True)
        rng = np.random.default_rng(self.seed)
        V = rng.normal(scale=math.sqrt(1.0 / (2.0 * c)), size=(self.order, n))
        W = (math.pi / c) ** (n / 2) / self.order * np.exp((c - WEIGHT_EXPONENT) * np.sum(V**2, axis=1))
        return Nodes(V, W)


def radial_nodes_on(n, r_max, order):
    """Gauss-Legendre rule on [0, r_max] for  omega_{n-1} int F(r) r^{n-1} exp(-2 r^2) dr."""
    x, w = np.polynomial.legendre.leggauss(order)
    r = 0.5 * r_max * (x + 1.0)
    W = sphere_area(n) * 0.5 * r_max * w * r ** (n - 1) * np.exp(-WEIGHT_EXPONENT * r**2)
    V = np.zeros((order, n))
    V[:, 0] = r
    return Nodes(V, W, radial=True)


__all__ = ["ALIASES", "KINDS", "Nodes", "QuadratureScheme", "gaussian_mass", "radial_nodes_on", "sphere_area"]
