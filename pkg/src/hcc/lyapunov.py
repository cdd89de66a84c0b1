"""Initialization-dependent Lyapunov function and trajectory diagnostics.

H(F, G) = sum_i int_{p_i}^{f_i} (z - p_i) / |grad f_i(X(z))|^2 dz plus the
same sum over the max player's coordinates. Sigmoid and identity coordinates
use exact antiderivatives; other operators are integrated numerically along
their ascent paths.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import HiddenGame, Trajectory
from .errors import (
    DimensionMismatch,
    EmptySolutionSet,
    NoConvergence,
    NonPositiveR,
    OutOfRange,
    QuadratureFailure,
    SingularJacobian,
)
from .operators import AscentPath, OperatorKind, bank_paths, grad_norm_sq_at_output
from .payoffs import PayoffFn, RegularizedPayoff


def sigmoid_antiderivative(z: float, p: float) -> float:
    """An antiderivative of (z - p) / (z^2 (1 - z)^2) on (0, 1), from partial fractions."""
    return ((1.0 - 2.0 * p) * (math.log(z) - math.log1p(-z))
            + (1.0 - p) / (1.0 - z) + p / z)


def adaptive_simpson(fn, a: float, b: float, tol: float, max_evals: int = 1_000_000) -> float:
    """Adaptive Simpson quadrature with the usual Richardson correction."""
    if a == b:
        return 0.0
    evals = [0]

    def f(x):
        evals[0] += 1
        if evals[0] > max_evals:
            raise QuadratureFailure(f"no convergence to tol={tol} within {max_evals} evaluations")
        return fn(x)

    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        a, b, fa, fm, fb, whole, eps, depth = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        delta = left + right - whole
        if depth >= 50 or abs(delta) <= 15.0 * eps:
            total += left + right + delta / 15.0
        else:
            stack.append((a, m, fa, flm, fm, left, 0.5 * eps, depth + 1))
            stack.append((m, b, fm, frm, fb, right, 0.5 * eps, depth + 1))
    return total


@dataclass(frozen=True, eq=False)
class LyapunovContext:
    """Ascent paths frozen at an initialization plus the target solution (p, q)."""

    paths_F: tuple
    paths_G: tuple
    target_p: np.ndarray
    target_q: np.ndarray
    quadrature_tol: float = 1e-10

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.target_p, dtype=float))
        q = np.atleast_1d(np.asarray(self.target_q, dtype=float))
        object.__setattr__(self, "paths_F", tuple(self.paths_F))
        object.__setattr__(self, "paths_G", tuple(self.paths_G))
        object.__setattr__(self, "target_p", p)
        object.__setattr__(self, "target_q", q)
        if len(self.paths_F) != p.size or len(self.paths_G) != q.size:
            raise DimensionMismatch("one path per target coordinate is required")
        for path, t in zip(self.paths, self.targets):
            if not path.contains(t):
                raise OutOfRange(
                    f"target {t} is not strictly inside range {path.range} of operator "
                    f"{path.operator_index}")

    @property
    def paths(self):
        return self.paths_F + self.paths_G

    @property
    def targets(self):
        return np.r_[self.target_p, self.target_q]

    @classmethod
    def from_game(cls, game: HiddenGame, theta0, phi0, p, q, quadrature_tol: float = 1e-10,
                  **path_kwargs) -> "LyapunovContext":
        return cls(bank_paths(game.bank_f, theta0, **path_kwargs),
                   bank_paths(game.bank_g, phi0, **path_kwargs), p, q, quadrature_tol)

    def coordinate_H(self, k: int, z: float) -> float:
        path, t = self.paths[k], float(self.targets[k])
        z = float(z)
        if not path.contains(z):
            raise OutOfRange(f"output {z} outside range {path.range}")
        kind = path.op.kind
        if kind is OperatorKind.IDENTITY:
            return 0.5 * (z - t) ** 2
        if kind is OperatorKind.SIGMOID:
            return max(sigmoid_antiderivative(z, t) - sigmoid_antiderivative(t, t), 0.0)
        return adaptive_simpson(lambda s: (s - t) / grad_norm_sq_at_output(path, s), t, z,
                                self.quadrature_tol)


def eval_H(ctx: LyapunovContext, F, G) -> float:
    F = np.atleast_1d(np.asarray(F, dtype=float))
    G = np.atleast_1d(np.asarray(G, dtype=float))
    if F.size != ctx.target_p.size or G.size != ctx.target_q.size:
        raise DimensionMismatch("F/G lengths do not match the context")
    return float(sum(ctx.coordinate_H(k, z) for k, z in enumerate(np.r_[F, G])))


def H_series(ctx: LyapunovContext, traj: Trajectory) -> np.ndarray:
    """H at every recorded time.

    Closed-form coordinates are evaluated directly. Other coordinates start
    from an adaptive quadrature at the first record and then add a
    three-point Simpson increment per recorded segment.
    """
    Z = np.hstack([traj.outputs_f, traj.outputs_g])
    if Z.shape[1] != len(ctx.paths):
        raise DimensionMismatch("trajectory width does not match the context")
    total = np.zeros(Z.shape[0])
    if Z.shape[0] == 0:
        return total
    for k, (path, t) in enumerate(zip(ctx.paths, ctx.targets)):
        z = Z[:, k]
        kind = path.op.kind
        if kind in (OperatorKind.IDENTITY, OperatorKind.SIGMOID):
            total += np.array([ctx.coordinate_H(k, v) for v in z])
            continue
        vals = np.empty(z.size)
        vals[0] = ctx.coordinate_H(k, z[0])
        w = lambda s: (s - t) / grad_norm_sq_at_output(path, s)
        w_prev = w(z[0])
        for i in range(1, z.size):
            a, b = z[i - 1], z[i]
            if a == b:
                vals[i] = vals[i - 1]
                continue
            w_next = w(b)
            vals[i] = vals[i - 1] + (b - a) / 6.0 * (w_prev + 4.0 * w(0.5 * (a + b)) + w_next)
            w_prev = w_next
        total += vals
    return total


@dataclass
class AuditReport:
    monotone: bool
    constant: bool
    max_increment: float
    first_violation: Optional[int]
    max_abs_change: float
    H_initial: float
    H_final: float
    n_samples: int
    tolerance: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        return "\n".join(f"{k}={_fmt(v)}" for k, v in self.to_dict().items())


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def audit_monotone_H(ctx: LyapunovContext, traj: Trajectory, tol: float = 1e-7,
                     constant_tol: float = 1e-5, H: Optional[np.ndarray] = None) -> AuditReport:
    """Check that H never increases by more than ``tol`` between records."""
    H = H_series(ctx, traj) if H is None else np.asarray(H, dtype=float)
    if H.size == 0:
        return AuditReport(True, True, 0.0, None, 0.0, math.nan, math.nan, 0, tol)
    inc = np.diff(H)
    max_inc = float(inc.max()) if inc.size else 0.0
    bad = np.nonzero(inc > tol)[0]
    first = int(bad[0]) + 1 if bad.size else None
    drift = float(np.max(np.abs(H - H[0])))
    return AuditReport(first is None, drift < constant_tol, max_inc, first, drift,
                       float(H[0]), float(H[-1]), int(H.size), tol)


def distance_r(traj: Trajectory, p, q) -> np.ndarray:
    """r(t) = |F(t) - p|^2 + |G(t) - q|^2."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if traj.outputs_f.shape[1] != p.size or traj.outputs_g.shape[1] != q.size:
        raise DimensionMismatch("target dimensions do not match the trajectory")
    return ((traj.outputs_f - p) ** 2).sum(axis=1) + ((traj.outputs_g - q) ** 2).sum(axis=1)


def annotate(traj: Trajectory, p, q, ctx: Optional[LyapunovContext] = None) -> Trajectory:
    """Copy of ``traj`` with r (and H when a context is given) attached."""
    r = distance_r(traj, p, q)
    H = H_series(ctx, traj) if ctx is not None else None
    return traj.with_diagnostics(r=r, H=H)


@dataclass
class ConvergenceVerdict:
    kind: str  # "Converged", "Cycling" or "Undecided"
    point: Optional[int] = None
    details: dict = field(default_factory=dict)

    def __str__(self):
        return self.kind


def detect_convergence(traj: Trajectory, solution_set: Sequence, tol: float = 1e-3,
                       window: float = 10.0, factor: float = 2.0,
                       plateau: float = 0.9) -> ConvergenceVerdict:
    """Classify the tail of a trajectory.

    Converged: some solution keeps r below ``tol`` over the final ``window``.
    Cycling: for every solution, r over the window either rises above
    ``factor`` times its window minimum after reaching it, or stays on a
    plateau (the minimum over the last third of the window is at least
    ``plateau`` times the minimum over the first third, and above ``tol``).
    Otherwise Undecided.
    """
    sols = list(solution_set)
    if not sols:
        raise EmptySolutionSet("solution_set is empty")
    if len(traj) < 2 or window >= traj.duration:
        return ConvergenceVerdict("Undecided", details={"reason": "trajectory shorter than window"})
    t = traj.times
    mask = t >= t[-1] - window
    rs = np.array([distance_r(traj, p, q)[mask] for p, q in sols])
    worst = rs.max(axis=1)
    best = int(np.argmin(worst))
    details = {"window_max_r": [float(v) for v in worst]}
    if worst[best] < tol:
        return ConvergenceVerdict("Converged", best, details)

    cycling = []
    for r in rs:
        kmin = int(np.argmin(r))
        rmin = float(r[kmin])
        rebound = r[kmin:].max() > factor * rmin
        third = max(1, r.size // 3)
        first, last = r[:third].min(), r[-third:].min()
        flat = last >= plateau * first and last >= tol
        cycling.append(bool(rebound or flat))
    details["cycling_per_solution"] = cycling
    if all(cycling):
        return ConvergenceVerdict("Cycling", None, details)
    return ConvergenceVerdict("Undecided", None, details)


@dataclass
class RateFit:
    c0: float
    rate: float
    r_squared: float
    degenerate: bool = False

    def to_dict(self):
        return asdict(self)


def fit_rate(traj: Trajectory, p, q, fit_interval=None) -> RateFit:
    """Least-squares fit of log r(t) = log c0 - rate * t over ``fit_interval``.

    The default interval skips the first 10% of the run.
    """
    r = distance_r(traj, p, q)
    t = traj.times
    if fit_interval is None:
        fit_interval = (t[0] + 0.1 * (t[-1] - t[0]), t[-1])
    lo, hi = fit_interval
    sel = (t >= lo) & (t <= hi)
    if sel.sum() < 2:
        raise ValueError("fit interval holds fewer than two samples")
    rr, tt = r[sel], t[sel]
    if np.any(rr <= 0):
        raise NonPositiveR("r reached zero inside the fit interval; the rate is unbounded")
    y = np.log(rr)
    slope, intercept = np.polyfit(tt, y, 1)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float(((y - (slope * tt + intercept)) ** 2).sum())
    if ss_tot <= 1e-24 * max(1.0, float((y ** 2).sum())):
        return RateFit(math.exp(intercept), 0.0 if abs(slope) < 1e-12 else -float(slope),
                       math.nan, True)
    return RateFit(math.exp(intercept), -float(slope), 1.0 - ss_res / ss_tot, False)


def solve_regularized_equilibrium(payoff: RegularizedPayoff, x0, y0, newton_tol: float = 1e-12,
                                  max_iter: int = 200, fd_step: float = 1e-6):
    """Damped Newton on grad_f L' = 0, grad_g L' = 0.

    The Jacobian comes from central differences of the analytic gradients.
    Returns the stationary (p, q).
    """
    if not isinstance(payoff, RegularizedPayoff) or payoff.lam <= 0:
        raise ValueError("a regularized payoff with lambda > 0 is required")
    n, m = payoff.dim_f, payoff.dim_g
    z = np.r_[np.atleast_1d(np.asarray(x0, dtype=float)), np.atleast_1d(np.asarray(y0, dtype=float))]
    if z.size != n + m:
        raise DimensionMismatch(f"initial point must have {n} + {m} entries")

    def resid(v):
        return np.r_[payoff.grad_f(v[:n], v[n:]), payoff.grad_g(v[:n], v[n:])]

    R = resid(z)
    norm = float(np.linalg.norm(R))
    for _ in range(max_iter):
        if norm < newton_tol:
            return z[:n].copy(), z[n:].copy()
        J = np.empty((n + m, n + m))
        for k in range(n + m):
            e = np.zeros(n + m)
            e[k] = fd_step
            J[:, k] = (resid(z + e) - resid(z - e)) / (2.0 * fd_step)
        try:
            if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e14:
                raise np.linalg.LinAlgError
            step = np.linalg.solve(J, -R)
        except np.linalg.LinAlgError:
            raise SingularJacobian("stationarity Jacobian is singular") from None
        t = 1.0
        while t > 1e-10:
            cand = z + t * step
            Rc = resid(cand)
            nc = float(np.linalg.norm(Rc))
            if np.isfinite(nc) and nc < norm:
                break
            t *= 0.5
        else:
            raise NoConvergence(f"line search stalled with residual {norm:.3e}")
        z, R, norm = cand, Rc, nc
    if norm < newton_tol:
        return z[:n].copy(), z[n:].copy()
    raise NoConvergence(f"residual {norm:.3e} after {max_iter} iterations")
