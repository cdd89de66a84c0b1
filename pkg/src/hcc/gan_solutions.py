"""Closed-form solutions of discrete-support GAN, f-GAN and WGAN games.

Generators are distributions p_G on a finite support, discriminators are
vectors D. Best responses, divergences and max-min constants have closed
forms; the earth mover's distance is solved with a transportation simplex
and non-realizable generator sets with projected gradient descent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog, minimize_scalar

from .errors import (
    DimensionMismatch,
    DomainError,
    EmptyFeasibleSet,
    HCCError,
    Infeasible,
    InvalidDistribution,
    InvalidMetric,
    ProjectionFailure,
    ZeroDenominator,
)
from .payoffs import FDivSpec, check_distribution, get_fdiv

TIE_TOL = 1e-9
LOG4 = math.log(4.0)


def _pair(p_data, p_G):
    p = check_distribution(p_data, "p_data", strict=False)
    q = check_distribution(p_G, "p_G", strict=False)
    if p.shape != q.shape:
        raise DimensionMismatch("p_data and p_G must have the same length")
    return p, q


def _xlogy(x, y):
    """x log y with 0 log 0 = 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = x * np.log(y)
    return np.where(x == 0, 0.0, out)


def kl(p, q) -> float:
    """KL(p || q) with the 0 log 0 = 0 convention."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return float(np.sum(_xlogy(p, p) - _xlogy(p, q)))


def jsd(p, q) -> float:
    m = 0.5 * (np.asarray(p, dtype=float) + np.asarray(q, dtype=float))
    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


# ---------------------------------------------------------------------------
# vanilla GAN

def gan_value(p_data, p_G, D) -> float:
    """sum p_data log D + sum p_G log(1 - D)."""
    D = np.asarray(D, dtype=float)
    return float(np.sum(_xlogy(p_data, D)) + np.sum(_xlogy(p_G, 1.0 - D)))


def gan_opt_discriminator(p_data, p_G) -> np.ndarray:
    p, q = _pair(p_data, p_G)
    den = p + q
    if np.any(den <= 0):
        raise ZeroDenominator("p_data + p_G vanishes on some coordinate")
    return p / den


def gan_value_and_jsd(p_data, p_G):
    """Best-response value V(G, D*_G) and the Jensen-Shannon divergence.

    The two are computed independently and checked against
    V = -log 4 + 2 JSD.
    """
    p, q = _pair(p_data, p_G)
    V = gan_value(p, q, gan_opt_discriminator(p, q))
    J = jsd(p, q)
    if abs(V - (-LOG4 + 2.0 * J)) > 1e-10:
        raise HCCError(f"value {V!r} disagrees with -log4 + 2 JSD = {-LOG4 + 2 * J!r}")
    return V, J


# ---------------------------------------------------------------------------
# f-GAN

def fgan_value(p_data, p_G, D, f_div) -> float:
    fd = get_fdiv(f_div)
    D = np.asarray(D, dtype=float)
    return float(np.dot(p_data, D) - np.dot(p_G, fd.fconj(D)))


def fdiv_value(p_data, p_G, f_div) -> float:
    """D_f(p_data || p_G) = sum p_G f(p_data / p_G)."""
    fd = get_fdiv(f_div)
    p, q = _pair(p_data, p_G)
    if np.any(q <= 0):
        raise DomainError("D_f needs p_G > 0 on every coordinate")
    return float(np.sum(q * fd.f(p / q)))


def fgan_opt_discriminator(p_data, p_G, f_div) -> np.ndarray:
    """D*(x) = f'(p_data(x) / p_G(x))."""
    fd = get_fdiv(f_div)
    p, q = _pair(p_data, p_G)
    if np.any(q <= 0):
        raise DomainError("the best response needs p_G > 0 on every coordinate")
    with np.errstate(divide="ignore", invalid="ignore"):
        D = np.asarray(fd.fprime(p / q), dtype=float)
    if not np.all(np.isfinite(D)):
        raise DomainError(f"{fd.name}: f' is not finite at some ratio p_data/p_G")
    return D


def fgan_value_and_fdiv(p_data, p_G, f_div):
    p, q = _pair(p_data, p_G)
    V = fgan_value(p, q, fgan_opt_discriminator(p, q, f_div), f_div)
    Df = fdiv_value(p, q, f_div)
    if abs(V - Df) > 1e-9:
        raise HCCError(f"best-response value {V!r} disagrees with D_f = {Df!r}")
    return V, Df


# ---------------------------------------------------------------------------
# WGAN / earth mover's distance

def check_metric(metric, n: Optional[int] = None) -> np.ndarray:
    C = np.asarray(metric, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or (n is not None and C.shape[0] != n):
        raise InvalidMetric(f"metric must be a square matrix of size {n}")
    if not np.all(np.isfinite(C)) or np.any(C < 0):
        raise InvalidMetric("metric entries must be finite and non-negative")
    if np.any(np.abs(np.diag(C)) > 0) or np.max(np.abs(C - C.T)) > 1e-12:
        raise InvalidMetric("metric must be symmetric with a zero diagonal")
    # C[i,k] <= C[i,j] + C[j,k]
    if np.any(C[:, None, :] > C[:, :, None] + C[None, :, :] + 1e-9):
        raise InvalidMetric("metric violates the triangle inequality")
    return C


def wgan_value(p_data, p_G, D) -> float:
    return float(np.dot(np.asarray(p_data) - np.asarray(p_G), D))


def _tree_cycle(basis, n, i0, j0):
    """Alternating cycle through entering cell (i0, j0) and the basis tree."""
    adj = {}
    for (i, j) in basis:
        adj.setdefault(("r", i), []).append(("c", j))
        adj.setdefault(("c", j), []).append(("r", i))
    start, goal = ("c", j0), ("r", i0)
    prev = {start: None}
    queue = [start]
    for node in queue:
        if node == goal:
            break
        for nb in adj.get(node, ()):
            if nb not in prev:
                prev[nb] = node
                queue.append(nb)
    if goal not in prev:
        raise Infeasible("basis is not a spanning tree")
    nodes = [goal]
    while prev[nodes[-1]] is not None:
        nodes.append(prev[nodes[-1]])
    # nodes runs row i0 -> ... -> column j0; convert to cells
    cells = [(i0, j0)]
    for a, b in zip(nodes[::-1][:-1], nodes[::-1][1:]):
        r, c = (a[1], b[1]) if a[0] == "r" else (b[1], a[1])
        cells.append((r, c))
    return cells


def solve_transport(a, b, C, max_iter: int = 100_000):
    """Min-cost transportation by the MODI simplex method.

    Returns (plan, cost, u, v) where u_i + v_j <= C_ij with equality on the
    basis.
    """
    a = np.asarray(a, dtype=float).copy()
    b = np.asarray(b, dtype=float).copy()
    n, m = a.size, b.size
    if abs(a.sum() - b.sum()) > 1e-9:
        raise Infeasible("supply and demand are unbalanced")
    X = np.zeros((n, m))
    basis = []
    i = j = 0
    ra, rb = a.copy(), b.copy()
    # northwest corner; always n + m - 1 basic cells even when degenerate
    while True:
        basis.append((i, j))
        x = min(ra[i], rb[j])
        X[i, j] = x
        ra[i] -= x
        rb[j] -= x
        if i == n - 1 and j == m - 1:
            break
        if j == m - 1 or (i < n - 1 and ra[i] <= rb[j]):
            i += 1
        else:
            j += 1
    X[X < 0] = 0.0

    tol = 1e-12 * max(1.0, float(np.abs(C).max()))
    for it in range(max_iter):
        u = np.full(n, np.nan)
        v = np.full(m, np.nan)
        u[0] = 0.0
        pending = list(basis)
        while pending:
            rest = []
            for (i, j) in pending:
                if not np.isnan(u[i]):
                    v[j] = C[i, j] - u[i]
                elif not np.isnan(v[j]):
                    u[i] = C[i, j] - v[j]
                else:
                    rest.append((i, j))
            if len(rest) == len(pending):
                raise Infeasible("basis is disconnected")
            pending = rest
        red = C - u[:, None] - v[None, :]
        # Bland-style smallest index after many pivots guards against cycling
        if it < 50 * (n + m):
            k = int(np.argmin(red))
        else:
            neg = np.flatnonzero(red.ravel() < -tol)
            k = int(neg[0]) if neg.size else int(np.argmin(red))
        ie, je = divmod(k, m)
        if red[ie, je] >= -tol:
            return X, float(np.sum(X * C)), u, v
        cycle = _tree_cycle(basis, n, ie, je)
        minus = cycle[1::2]
        theta = min(X[c] for c in minus)
        leave = next(c for c in minus if X[c] == theta)
        for s, c in enumerate(cycle):
            X[c] += theta if s % 2 == 0 else -theta
        X[leave] = 0.0
        basis.remove(leave)
        basis.append((ie, je))
    raise HCCError("transportation simplex did not terminate")


def wgan_emd(p_data, p_G, metric):
    """Earth mover's distance and an optimal 1-Lipschitz potential D.

    D is the c-transform of the transport duals, so sum (p_data - p_G) D
    equals the primal cost.
    """
    p, q = _pair(p_data, p_G)
    if p.size > 64:
        raise ValueError("supports larger than 64 points are not supported")
    C = check_metric(metric, p.size)
    X, cost, u, v = solve_transport(p, q, C)
    D = np.min(C - v[None, :], axis=1)
    D = D - D.min()
    return cost, D


def emd_dual_value(p_data, p_G, D) -> float:
    return wgan_value(p_data, p_G, D)


# ---------------------------------------------------------------------------
# max-min constants and inner minimization

@dataclass
class MaxminDescription:
    kind: str
    constant: float
    value: float
    value_numeric: Optional[float] = None
    constant_numeric: Optional[float] = None
    note: str = ""


def _kind(kind):
    k = str(kind).lower().replace("-", "").replace("_", "")
    if k == "gan":
        return "GAN"
    if k == "fgan":
        return "fGAN"
    if k == "wgan":
        return "WGAN"
    raise ValueError(f"unknown GAN kind {kind!r}")


def maxmin_discriminator(kind, f_div=None) -> MaxminDescription:
    """Constant max-min discriminator and the max-min value for an unrestricted generator.

    For f-GANs the formula f'(1) - f*(f'(1)) is reported together with a
    numerical line search over constant discriminators.
    """
    kind = _kind(kind)
    if kind == "GAN":
        return MaxminDescription("GAN", 0.5, 2.0 * math.log(0.5))
    if kind == "WGAN":
        return MaxminDescription("WGAN", 0.0, 0.0, note="any constant discriminator is max-min")
    fd = get_fdiv(f_div)
    c = float(fd.fprime(1.0))
    formula = c - float(fd.fconj(c))
    lo, hi = fd.conj_domain
    a = max(c - 10.0, lo + 1e-9) if math.isfinite(lo) else c - 10.0
    b = min(c + 10.0, hi - 1e-9) if math.isfinite(hi) else c + 10.0
    res = minimize_scalar(lambda t: -(t - float(fd.fconj(t))), bounds=(a, b), method="bounded",
                          options={"xatol": 1e-12})
    return MaxminDescription("fGAN", c, formula, float(-res.fun), float(res.x),
                             note=f"divergence {fd.name}")


def inner_min_generator(D, kind, p_data=None, f_div=None, tol: float = TIE_TOL):
    """Support set S of the generator's best response to D and the inner value.

    The minimizing generator puts all its mass where its penalty is largest:
    argmax D for GAN and WGAN, argmax f*(D) for f-GAN. Ties within ``tol``.
    The inner value needs ``p_data``; it is ``None`` otherwise.
    """
    kind = _kind(kind)
    D = np.atleast_1d(np.asarray(D, dtype=float))
    if kind == "fGAN":
        fd = get_fdiv(f_div)
        score = np.asarray(fd.fconj(D), dtype=float)
    else:
        score = D
    top = float(score.max())
    S = [int(i) for i in np.flatnonzero(score >= top - tol)]
    if p_data is None:
        return S, None
    p = np.asarray(p_data, dtype=float)
    if kind == "GAN":
        value = float(np.sum(_xlogy(p, D))) + math.log1p(-top)
    elif kind == "fGAN":
        value = float(np.dot(p, D)) - top
    else:
        value = float(np.dot(p, D)) - top
    return S, value


# ---------------------------------------------------------------------------
# constrained generator sets

@dataclass(frozen=True, eq=False)
class DiscreteGanInstance:
    """Finite-support GAN instance.

    ``constraints`` is a list of (a, b) meaning a . p_G <= b; an empty list
    means the generator ranges over the whole simplex.
    """

    p_data: np.ndarray
    kind: str = "GAN"
    metric: Optional[np.ndarray] = None
    constraints: tuple = ()
    f_div: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p_data, dtype=float))
        object.__setattr__(self, "p_data", check_distribution(p, strict=False))
        object.__setattr__(self, "kind", _kind(self.kind))
        cons = []
        for a, b in self.constraints:
            a = np.asarray(a, dtype=float)
            if a.shape != p.shape:
                raise DimensionMismatch("constraint vector length differs from the support size")
            cons.append((a, float(b)))
        object.__setattr__(self, "constraints", tuple(cons))
        if self.metric is not None:
            object.__setattr__(self, "metric", check_metric(self.metric, p.size))
        if self.kind == "WGAN" and self.metric is None:
            raise InvalidMetric("a WGAN instance needs a metric")
        if self.kind == "fGAN":
            get_fdiv(self.f_div)

    @property
    def support_size(self) -> int:
        return self.p_data.size

    @property
    def realizable(self) -> bool:
        return self.feasible(self.p_data)

    def feasible(self, g, tol: float = 1e-9) -> bool:
        g = np.asarray(g, dtype=float)
        if np.any(g < -tol) or abs(g.sum() - 1.0) > tol:
            return False
        return all(a @ g <= b + tol for a, b in self.constraints)

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteGanInstance":
        cons = [(c["a"], c["b"]) for c in d.get("constraints", []) or []]
        return cls(np.asarray(d["p_data"], dtype=float), d.get("kind", "GAN"),
                   None if d.get("metric") is None else np.asarray(d["metric"], dtype=float),
                   tuple(cons), d.get("f_div"), int(d.get("seed", 0)))


def project_simplex(y) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    y = np.asarray(y, dtype=float)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(y - tau, 0.0)


def _check_nonempty(inst: DiscreteGanInstance):
    if not inst.constraints:
        return
    n = inst.support_size
    A = np.array([a for a, _ in inst.constraints])
    b = np.array([b for _, b in inst.constraints])
    res = linprog(np.zeros(n), A_ub=A, b_ub=b, A_eq=np.ones((1, n)), b_eq=[1.0],
                  bounds=[(0, None)] * n, method="highs")
    if res.status != 0:
        raise EmptyFeasibleSet("the generator constraints exclude every distribution")


def project_feasible(inst: DiscreteGanInstance, y, tol: float = 1e-13,
                     max_sweeps: int = 100_000) -> np.ndarray:
    """Projection onto simplex intersected with the halfspaces, by Dykstra's algorithm."""
    y = np.asarray(y, dtype=float)
    if not inst.constraints:
        return project_simplex(y)
    sets = [project_simplex]
    for a, b in inst.constraints:
        aa = float(a @ a)
        if aa == 0:
            if b < 0:
                raise EmptyFeasibleSet("constraint 0 <= b with b < 0")
            continue
        sets.append(lambda x, a=a, b=b, aa=aa: x - max(0.0, (a @ x - b) / aa) * a)
    x = y.copy()
    incr = [np.zeros_like(y) for _ in sets]
    for _ in range(max_sweeps):
        x_old = x
        for k, proj in enumerate(sets):
            z = proj(x + incr[k])
            incr[k] = x + incr[k] - z
            x = z
        if np.max(np.abs(x - x_old)) < tol:
            break
    else:
        if not inst.feasible(x, 1e-7):
            raise ProjectionFailure("Dykstra projection did not converge")
    return x


def _divergence(inst: DiscreteGanInstance, g):
    """(objective, gradient in p_G) for the instance's divergence."""
    p = inst.p_data
    if inst.kind == "GAN":
        m = 0.5 * (p + g)
        with np.errstate(divide="ignore", invalid="ignore"):
            grad = 0.5 * (np.log(np.maximum(g, 1e-300)) - np.log(np.maximum(m, 1e-300)))
        return jsd(p, g), grad
    if inst.kind == "fGAN":
        fd = get_fdiv(inst.f_div)
        gg = np.maximum(g, 1e-300)
        u = p / gg
        val = float(np.sum(gg * fd.f(u)))
        grad = np.asarray(fd.f(u) - u * fd.fprime(u), dtype=float)
        return val, grad
    cost, D = wgan_emd(p, project_simplex(g), inst.metric)
    return cost, -D


@dataclass
class NonRealizableSolution:
    G_star: np.ndarray
    D_star: Optional[np.ndarray]
    value: float
    certificates: dict = field(default_factory=dict)
    potentials: Optional[np.ndarray] = None
    iterations: int = 0
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "G_star": self.G_star.tolist(),
            "D_star": None if self.D_star is None else self.D_star.tolist(),
            "value": self.value,
            "certificates": self.certificates,
            "potentials": None if self.potentials is None else self.potentials.tolist(),
            "note": self.note,
        }


def _random_feasible(inst, rng, k):
    n = inst.support_size
    out = []
    while len(out) < k:
        g = rng.dirichlet(np.ones(n))
        out.append(g if inst.feasible(g) else project_feasible(inst, g))
    return out


def _random_discriminators(inst, rng, k):
    n = inst.support_size
    if inst.kind == "GAN":
        return rng.uniform(1e-6, 1 - 1e-6, size=(k, n))
    if inst.kind == "fGAN":
        fd = get_fdiv(inst.f_div)
        u = np.exp(rng.uniform(math.log(0.01), math.log(100.0), size=(k, n)))
        return np.asarray(fd.fprime(u), dtype=float)
    C = inst.metric
    w = rng.uniform(-1.0, 1.0, size=(k, n)) * C.max()
    # c-transform of an arbitrary vector is 1-Lipschitz for the metric
    return np.min(w[:, None, :] + C[None, :, :], axis=2)


def game_value(inst: DiscreteGanInstance, g, D) -> float:
    if inst.kind == "GAN":
        return gan_value(inst.p_data, g, D)
    if inst.kind == "fGAN":
        return fgan_value(inst.p_data, g, D, inst.f_div)
    return wgan_value(inst.p_data, g, D)


def nonrealizable_solve(instance: DiscreteGanInstance, kind=None, max_iter: int = 10_000,
                        step: float = 1e-2, eps_cert: float = 1e-4,
                        n_deviations: int = 1000) -> NonRealizableSolution:
    """Minimize the game's divergence over the generator set and certify the saddle.

    Projected gradient descent with step halving on non-decrease. The
    certificates sample random discriminators against G* and random feasible
    generators against D*; their worst violations are reported.
    """
    inst = instance
    if kind is not None and _kind(kind) != inst.kind:
        inst = DiscreteGanInstance(inst.p_data, kind, inst.metric, inst.constraints, inst.f_div,
                                   inst.seed)
    _check_nonempty(inst)
    g = project_feasible(inst, inst.p_data)
    val, grad = _divergence(inst, g)
    h = step
    it = 0
    for it in range(1, max_iter + 1):
        cand = project_feasible(inst, g - h * grad)
        cval, cgrad = _divergence(inst, cand)
        if cval < val - 1e-16 and np.max(np.abs(cand - g)) > 0:
            g, val, grad = cand, cval, cgrad
            h = min(h * 1.5, 1.0)
        else:
            h *= 0.5
            if h < 1e-14:
                break
    G = g

    potentials = None
    note = ""
    if inst.kind == "GAN":
        D = gan_opt_discriminator(inst.p_data, G)
        value = -LOG4 + 2.0 * jsd(inst.p_data, G)
    elif inst.kind == "fGAN":
        D = fgan_opt_discriminator(inst.p_data, G, inst.f_div)
        value = fdiv_value(inst.p_data, G, inst.f_div)
    else:
        value, potentials = wgan_emd(inst.p_data, G, inst.metric)
        D = None
        note = "no closed form for D*; potentials are the transport duals at G*"

    rng = np.random.default_rng(inst.seed)
    Ds = _random_discriminators(inst, rng, n_deviations)
    primal = max(game_value(inst, G, d) - value for d in Ds)
    certs = {"max_primal_violation": float(max(primal, 0.0))}
    D_for_dual = D if D is not None else potentials
    Gs = _random_feasible(inst, rng, n_deviations)
    dual = max(value - game_value(inst, gg, D_for_dual) for gg in Gs)
    certs["max_dual_violation"] = float(max(dual, 0.0))
    certs["eps_cert"] = eps_cert
    certs["passed"] = bool(certs["max_primal_violation"] <= eps_cert
                           and (D is None or certs["max_dual_violation"] <= eps_cert))
    return NonRealizableSolution(G, D, float(value), certs, potentials, it, note)


def solve_instance(inst: DiscreteGanInstance) -> NonRealizableSolution:
    return nonrealizable_solve(inst)
