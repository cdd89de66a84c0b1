"""Convex-concave payoffs L(F, G) in output space.

The min player controls F (length ``dim_f``), the max player controls G
(length ``dim_g``). Each payoff can describe itself to the compiled kernels
through ``jit_spec``; payoffs built from user callables return ``None``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels as K
from .errors import DimensionMismatch, DomainError, InvalidDistribution, UnknownDivergence


class Convexity(enum.Enum):
    CONVEX_CONCAVE = "ConvexConcave"
    STRICTLY_CONVEX_CONCAVE = "StrictlyConvexConcave"
    BILINEAR = "BilinearLinearLinear"


def _vec(x, n, what):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (n,):
        raise DimensionMismatch(f"{what} must have length {n}, got shape {x.shape}")
    return x


class PayoffFn:
    """Base class. Subclasses implement ``_value``, ``_grad_f`` and ``_grad_g``."""

    name = "payoff"
    convexity = Convexity.CONVEX_CONCAVE

    def __init__(self, dim_f: int, dim_g: int, guard_f=None, guard_g=None):
        self.dim_f = int(dim_f)
        self.dim_g = int(dim_g)
        inf = math.inf
        self.guard_f = guard_f if guard_f is not None else (np.full(dim_f, -inf), np.full(dim_f, inf))
        self.guard_g = guard_g if guard_g is not None else (np.full(dim_g, -inf), np.full(dim_g, inf))

    @property
    def domain_guard(self):
        return {"f": self.guard_f, "g": self.guard_g}

    def in_domain(self, F, G) -> bool:
        F = np.asarray(F, dtype=float)
        G = np.asarray(G, dtype=float)
        return bool(np.all(F > self.guard_f[0]) and np.all(F < self.guard_f[1])
                    and np.all(G > self.guard_g[0]) and np.all(G < self.guard_g[1]))

    def value(self, F, G) -> float:
        return float(self._value(_vec(F, self.dim_f, "F"), _vec(G, self.dim_g, "G")))

    def grad_f(self, F, G) -> np.ndarray:
        return self._grad_f(_vec(F, self.dim_f, "F"), _vec(G, self.dim_g, "G"))

    def grad_g(self, F, G) -> np.ndarray:
        return self._grad_g(_vec(F, self.dim_f, "F"), _vec(G, self.dim_g, "G"))

    def jit_spec(self):
        """(pint, pflt, reg, center_f, center_g) for the kernels, or None."""
        return None

    def to_spec(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} has no config form")

    def __repr__(self):
        return f"{type(self).__name__}(dim_f={self.dim_f}, dim_g={self.dim_g})"


def _no_reg(n, m):
    return np.zeros(2), np.zeros(n), np.zeros(m)


class Bilinear(PayoffFn):
    """(f - p)(g - q) on scalar outputs."""

    name = "bilinear"
    convexity = Convexity.BILINEAR

    def __init__(self, p: float, q: float):
        super().__init__(1, 1)
        self.p = float(p)
        self.q = float(q)

    def _value(self, F, G):
        return (F[0] - self.p) * (G[0] - self.q)

    def _grad_f(self, F, G):
        return np.array([G[0] - self.q])

    def _grad_g(self, F, G):
        return np.array([F[0] - self.p])

    def jit_spec(self):
        return (np.array([K.PAY_SHIFTED_BILINEAR], dtype=np.int64),
                np.array([self.p, self.q]), *_no_reg(1, 1))

    def to_spec(self):
        return {"name": "bilinear", "p": self.p, "q": self.q}


def bilinear_payoff(p: float, q: float) -> Bilinear:
    return Bilinear(p, q)


class MatrixBilinear(PayoffFn):
    """F^T A G."""

    name = "matrix_bilinear"
    convexity = Convexity.BILINEAR

    def __init__(self, A):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if not np.all(np.isfinite(A)):
            raise ValueError("payoff matrix must be finite")
        super().__init__(A.shape[0], A.shape[1])
        self.A = A

    def _value(self, F, G):
        return F @ self.A @ G

    def _grad_f(self, F, G):
        return self.A @ G

    def _grad_g(self, F, G):
        return self.A.T @ F

    def jit_spec(self):
        return (np.array([K.PAY_MATRIX_BILINEAR], dtype=np.int64),
                np.ascontiguousarray(self.A).ravel().copy(), *_no_reg(self.dim_f, self.dim_g))

    def to_spec(self):
        return {"name": "matrix_bilinear", "A": self.A.tolist()}


def matrix_bilinear_payoff(A) -> MatrixBilinear:
    return MatrixBilinear(A)


RPS_MATRIX = np.array([[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]])


def check_distribution(p, name="p_data", strict=True) -> np.ndarray:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.ndim != 1 or p.size == 0 or not np.all(np.isfinite(p)):
        raise InvalidDistribution(f"{name} must be a non-empty finite vector")
    if strict and np.any(p <= 0):
        raise InvalidDistribution(f"{name} must be fully mixed (all entries > 0)")
    if np.any(p < 0):
        raise InvalidDistribution(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > 1e-12:
        raise InvalidDistribution(f"{name} sums to {p.sum()!r}, not 1")
    return p


class VanillaGan(PayoffFn):
    """Lagrangian of the discrete-support GAN with a simplex multiplier.

    L(F, (G, lam)) = sum p_data log g + sum f log(1 - g) + lam (sum f - 1).
    The max player holds d discriminator values followed by the multiplier.
    """

    name = "vanilla_gan"
    convexity = Convexity.CONVEX_CONCAVE

    def __init__(self, p_data):
        p = check_distribution(p_data)
        d = p.size
        inf = math.inf
        super().__init__(d, d + 1,
                         guard_f=(np.zeros(d), np.ones(d)),
                         guard_g=(np.r_[np.zeros(d), -inf], np.r_[np.ones(d), inf]))
        self.p_data = p
        self.d = d

    def _value(self, F, G):
        g, lam = G[:-1], G[-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            return float(self.p_data @ np.log(g) + F @ np.log1p(-g) + lam * (F.sum() - 1.0))

    def _grad_f(self, F, G):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log1p(-G[:-1]) + G[-1]

    def _grad_g(self, F, G):
        g = G[:-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.r_[self.p_data / g - F / (1.0 - g), F.sum() - 1.0]

    def equilibrium(self):
        """(F*, G*) with multiplier -log(1/2) = log 2 under this sign convention."""
        return self.p_data.copy(), np.r_[np.full(self.d, 0.5), math.log(2.0)]

    def jit_spec(self):
        return (np.array([K.PAY_VANILLA_GAN], dtype=np.int64), self.p_data.copy(),
                *_no_reg(self.dim_f, self.dim_g))

    def to_spec(self):
        return {"name": "vanilla_gan", "p_data": self.p_data.tolist()}


def vanilla_gan_payoff(p_data) -> VanillaGan:
    return VanillaGan(p_data)


class WganGaussian(PayoffFn):
    """Hidden payoff of the 1-D Gaussian WGAN: L(u, v) = u v - v^2/2.

    The min player's output is u = alpha_star^2 - alpha^2 (generator through
    ``wgan_quadratic``), the max player's output is the discriminator weight
    v. With ``regularized=False`` the quadratic term is dropped.
    """

    name = "wgan_gaussian"

    def __init__(self, alpha_star_sq: float = 1.0, regularized: bool = True):
        if alpha_star_sq <= 0:
            raise ValueError("alpha_star_sq must be positive")
        super().__init__(1, 1)
        self.alpha_star_sq = float(alpha_star_sq)
        self.regularized = bool(regularized)
        self.convexity = (Convexity.STRICTLY_CONVEX_CONCAVE if regularized
                          else Convexity.BILINEAR)

    @property
    def _r(self):
        return 1.0 if self.regularized else 0.0

    def _value(self, F, G):
        return F[0] * G[0] - 0.5 * self._r * G[0] ** 2

    def _grad_f(self, F, G):
        return np.array([G[0]])

    def _grad_g(self, F, G):
        return np.array([F[0] - self._r * G[0]])

    def jit_spec(self):
        return (np.array([K.PAY_WGAN], dtype=np.int64), np.array([self._r]), *_no_reg(1, 1))

    def to_spec(self):
        return {"name": "wgan_gaussian", "alpha_star_sq": self.alpha_star_sq,
                "regularized": self.regularized}


def wgan_gaussian_payoff(alpha_star_sq: float = 1.0, regularized: bool = True) -> WganGaussian:
    return WganGaussian(alpha_star_sq, regularized)


# ---------------------------------------------------------------------------
# f-divergences

@dataclass(frozen=True)
class FDivSpec:
    """Convex generator f with f(1) = 0, its derivative and Fenchel conjugate.

    ``conj_domain`` is the open interval on which the conjugate is finite.
    """

    name: str
    code: int
    f: Callable[[float], float]
    fprime: Callable[[float], float]
    fconj: Callable[[float], float]
    fconj_prime: Callable[[float], float]
    conj_domain: tuple

    def check_conj_arg(self, t):
        t = np.asarray(t, dtype=float)
        lo, hi = self.conj_domain
        if np.any(t <= lo) or np.any(t >= hi):
            raise DomainError(f"{self.name}: conjugate argument outside {self.conj_domain}")


def _xlogx(u):
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(u > 0, u * np.log(np.where(u > 0, u, 1.0)), 0.0)


_LOG2 = math.log(2.0)

FDIVS = {
    "KL": FDivSpec(
        "KL", K.DIV_KL,
        f=lambda u: _xlogx(u),
        fprime=lambda u: 1.0 + np.log(u),
        fconj=lambda t: np.exp(np.asarray(t, dtype=float) - 1.0),
        fconj_prime=lambda t: np.exp(np.asarray(t, dtype=float) - 1.0),
        conj_domain=(-math.inf, math.inf)),
    "reverseKL": FDivSpec(
        "reverseKL", K.DIV_REVERSE_KL,
        f=lambda u: -np.log(u),
        fprime=lambda u: -1.0 / np.asarray(u, dtype=float),
        fconj=lambda t: -1.0 - np.log(-np.asarray(t, dtype=float)),
        fconj_prime=lambda t: -1.0 / np.asarray(t, dtype=float),
        conj_domain=(-math.inf, 0.0)),
    "JS": FDivSpec(
        "JS", K.DIV_JS,
        f=lambda u: _xlogx(u) - (np.asarray(u, dtype=float) + 1.0) * np.log((np.asarray(u, dtype=float) + 1.0) / 2.0),
        fprime=lambda u: np.log(2.0 * np.asarray(u, dtype=float) / (1.0 + np.asarray(u, dtype=float))),
        fconj=lambda t: -np.log(2.0 - np.exp(np.asarray(t, dtype=float))),
        fconj_prime=lambda t: np.exp(np.asarray(t, dtype=float)) / (2.0 - np.exp(np.asarray(t, dtype=float))),
        conj_domain=(-math.inf, _LOG2)),
    "Pearson": FDivSpec(
        "Pearson", K.DIV_PEARSON,
        f=lambda u: (np.asarray(u, dtype=float) - 1.0) ** 2,
        fprime=lambda u: 2.0 * (np.asarray(u, dtype=float) - 1.0),
        fconj=lambda t: 0.25 * np.asarray(t, dtype=float) ** 2 + np.asarray(t, dtype=float),
        fconj_prime=lambda t: 0.5 * np.asarray(t, dtype=float) + 1.0,
        conj_domain=(-math.inf, math.inf)),
}

_FDIV_ALIASES = {
    "kl": "KL", "reversekl": "reverseKL", "reverse_kl": "reverseKL", "js": "JS",
    "jensen-shannon": "JS", "pearson": "Pearson", "pearson-chi2": "Pearson", "chi2": "Pearson",
}


def get_fdiv(name) -> FDivSpec:
    if isinstance(name, FDivSpec):
        return name
    key = _FDIV_ALIASES.get(str(name).lower(), name)
    try:
        return FDIVS[key]
    except KeyError:
        raise UnknownDivergence(f"unknown f-divergence {name!r}; known: {sorted(FDIVS)}") from None


class FGan(PayoffFn):
    """sum p_data D - sum p_G f*(D): min player p_G, max player D."""

    name = "fgan"
    convexity = Convexity.CONVEX_CONCAVE

    def __init__(self, p_data, f_div):
        p = check_distribution(p_data)
        self.fdiv = get_fdiv(f_div)
        d = p.size
        lo, hi = self.fdiv.conj_domain
        # generator masses live in (0, 1); concavity in D needs them non-negative
        super().__init__(d, d, guard_f=(np.zeros(d), np.ones(d)),
                         guard_g=(np.full(d, lo), np.full(d, hi)))
        self.p_data = p

    def _value(self, F, G):
        return float(self.p_data @ G - F @ self.fdiv.fconj(G))

    def _grad_f(self, F, G):
        return -self.fdiv.fconj(G)

    def _grad_g(self, F, G):
        return self.p_data - F * self.fdiv.fconj_prime(G)

    def jit_spec(self):
        return (np.array([K.PAY_FGAN, self.fdiv.code], dtype=np.int64), self.p_data.copy(),
                *_no_reg(self.dim_f, self.dim_g))

    def to_spec(self):
        return {"name": "fgan", "p_data": self.p_data.tolist(), "f_div": self.fdiv.name}


def fgan_payoff(p_data, f_div) -> FGan:
    return FGan(p_data, f_div)


class Custom(PayoffFn):
    """Payoff from user callables; its convexity class is whatever the caller declares."""

    name = "custom"

    def __init__(self, value, grad_f, grad_g, dim_f, dim_g,
                 convexity=Convexity.CONVEX_CONCAVE, guard_f=None, guard_g=None):
        super().__init__(dim_f, dim_g, guard_f, guard_g)
        self._v, self._gf, self._gg = value, grad_f, grad_g
        self.convexity = convexity

    def _value(self, F, G):
        return self._v(F, G)

    def _grad_f(self, F, G):
        return np.asarray(self._gf(F, G), dtype=float)

    def _grad_g(self, F, G):
        return np.asarray(self._gg(F, G), dtype=float)


class RegularizedPayoff(PayoffFn):
    """base + lam_f/2 |F - c_f|^2 - lam_g/2 |G - c_g|^2.

    ``sides`` selects which players receive the quadratic term; the default
    regularizes both with the same lambda.
    """

    name = "regularized"

    def __init__(self, base: PayoffFn, lam: float, center_f=None, center_g=None, sides="both"):
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        if sides not in ("both", "f", "g"):
            raise ValueError("sides must be 'both', 'f' or 'g'")
        super().__init__(base.dim_f, base.dim_g, base.guard_f, base.guard_g)
        self.base = base
        self.lam = float(lam)
        self.sides = sides
        self.lam_f = self.lam if sides in ("both", "f") else 0.0
        self.lam_g = self.lam if sides in ("both", "g") else 0.0
        self.center_f = (np.zeros(base.dim_f) if center_f is None
                         else _vec(center_f, base.dim_f, "center_f"))
        self.center_g = (np.zeros(base.dim_g) if center_g is None
                         else _vec(center_g, base.dim_g, "center_g"))
        if self.lam > 0:
            self.convexity = Convexity.STRICTLY_CONVEX_CONCAVE
        else:
            self.convexity = base.convexity

    def _value(self, F, G):
        df = F - self.center_f
        dg = G - self.center_g
        return (self.base._value(F, G) + 0.5 * self.lam_f * (df @ df)
                - 0.5 * self.lam_g * (dg @ dg))

    def _grad_f(self, F, G):
        return self.base._grad_f(F, G) + self.lam_f * (F - self.center_f)

    def _grad_g(self, F, G):
        return self.base._grad_g(F, G) - self.lam_g * (G - self.center_g)

    def jit_spec(self):
        inner = self.base.jit_spec()
        if inner is None or isinstance(self.base, RegularizedPayoff):
            return None
        pint, pflt = inner[0], inner[1]
        return (pint, pflt, np.array([self.lam_f, self.lam_g]),
                self.center_f.copy(), self.center_g.copy())

    def to_spec(self):
        spec = self.base.to_spec()
        spec = dict(spec)
        spec["regularize"] = {"lambda": self.lam, "center_f": self.center_f.tolist(),
                              "center_g": self.center_g.tolist(), "sides": self.sides}
        return spec


def regularize(base: PayoffFn, lam: float, center_f=None, center_g=None,
               sides: str = "both") -> RegularizedPayoff:
    return RegularizedPayoff(base, lam, center_f, center_g, sides)


def payoff_from_spec(spec: dict) -> PayoffFn:
    """Build a payoff from its config dict (``name`` plus parameters, optional ``regularize``)."""
    spec = dict(spec)
    name = spec.get("name")
    reg = spec.pop("regularize", None)
    if name == "bilinear":
        base = Bilinear(spec.get("p", 0.0), spec.get("q", 0.0))
    elif name == "matrix_bilinear":
        A = spec.get("A")
        if isinstance(A, str):
            if A.lower() != "rps":
                raise ValueError(f"unknown named matrix {A!r}")
            A = RPS_MATRIX
        base = MatrixBilinear(A)
    elif name == "vanilla_gan":
        base = VanillaGan(spec["p_data"])
    elif name == "wgan_gaussian":
        base = WganGaussian(spec.get("alpha_star_sq", 1.0), spec.get("regularized", True))
    elif name == "fgan":
        base = FGan(spec["p_data"], spec["f_div"])
    else:
        raise ValueError(f"unknown payoff {name!r}")
    if reg is not None:
        base = RegularizedPayoff(base, reg["lambda"], reg.get("center_f"), reg.get("center_g"),
                                 reg.get("sides", "both"))
    return base
