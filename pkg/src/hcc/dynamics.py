"""Continuous flows of hidden games and a discrete stochastic GDA.

All continuous flows use fixed-step RK4. When every operator and the payoff
have compiled kernels the inner loop runs in numba; otherwise (or with
``backend="numpy"``) the same scheme runs on numpy arrays.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from ._jit import resolve_backend
from .errors import (
    DegeneratePath,
    DimensionMismatch,
    DomainGuardViolation,
    NonFiniteState,
    OutOfRange,
    RangeExit,
)
from .operators import (
    AscentPath,
    OperatorBank,
    OperatorKind,
    ScalarOperator,
    grad_norm_sq_at_output,
)
from .payoffs import Bilinear, PayoffFn, WganGaussian


class HiddenGame:
    """Payoff plus the two operator banks (F is the min side, G the max side)."""

    def __init__(self, payoff: PayoffFn, bank_f, bank_g):
        if not isinstance(bank_f, OperatorBank):
            bank_f = OperatorBank(bank_f)
        if not isinstance(bank_g, OperatorBank):
            bank_g = OperatorBank(bank_g)
        if payoff.dim_f != len(bank_f) or payoff.dim_g != len(bank_g):
            raise DimensionMismatch(
                f"payoff is {payoff.dim_f}x{payoff.dim_g}, banks are {len(bank_f)}x{len(bank_g)}")
        self.payoff = payoff
        self.bank_f = bank_f
        self.bank_g = bank_g

    @property
    def N(self):
        return self.bank_f.total_param_dim

    @property
    def M(self):
        return self.bank_g.total_param_dim

    @property
    def jittable(self) -> bool:
        return self.bank_f.jittable and self.bank_g.jittable and self.payoff.jit_spec() is not None

    def outputs(self, theta, phi):
        return self.bank_f.apply(theta), self.bank_g.apply(phi)

    def kernel_game(self, ranges=None):
        pint, pflt, reg, cf, cg = self.payoff.jit_spec()
        fc, fp, fo = self.bank_f.kernel_arrays()
        gc, gp, go = self.bank_g.kernel_arrays()
        n, m = len(self.bank_f), len(self.bank_g)
        if ranges is None:
            ranges = (np.full(n, -np.inf), np.full(n, np.inf), np.full(m, -np.inf), np.full(m, np.inf))
        gf, gg = self.payoff.guard_f, self.payoff.guard_g
        arr = lambda a: np.ascontiguousarray(a, dtype=float)
        return (fc, arr(fp), fo, gc, arr(gp), go, pint, arr(pflt), arr(reg), arr(cf), arr(cg),
                arr(gf[0]), arr(gf[1]), arr(gg[0]), arr(gg[1]),
                arr(ranges[0]), arr(ranges[1]), arr(ranges[2]), arr(ranges[3]))


@dataclass
class Trajectory:
    """Time-indexed record of a run.

    ``theta`` and ``phi`` are ``None`` for output-space trajectories. ``r`` and
    ``H`` stay ``None`` until attached by the ``lyapunov`` helpers.
    """

    times: np.ndarray
    theta: Optional[np.ndarray]
    phi: Optional[np.ndarray]
    outputs_f: np.ndarray
    outputs_g: np.ndarray
    L: np.ndarray
    r: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.shape[0]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0]) if len(self) else 0.0

    def with_diagnostics(self, r=None, H=None) -> "Trajectory":
        return replace(self, r=self.r if r is None else np.asarray(r, dtype=float),
                       H=self.H if H is None else np.asarray(H, dtype=float))

    def columns(self) -> list[str]:
        cols = ["t"]
        if self.theta is not None:
            cols += [f"theta_{i}" for i in range(self.theta.shape[1])]
        if self.phi is not None:
            cols += [f"phi_{j}" for j in range(self.phi.shape[1])]
        cols += [f"f_{i}" for i in range(self.outputs_f.shape[1])]
        cols += [f"g_{j}" for j in range(self.outputs_g.shape[1])]
        return cols + ["L", "r", "H"]

    def to_csv(self, dest=None) -> str:
        """Serialize to CSV text (floats via repr, absent diagnostics left empty)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        blocks = [self.times[:, None]]
        if self.theta is not None:
            blocks.append(self.theta)
        if self.phi is not None:
            blocks.append(self.phi)
        blocks += [self.outputs_f, self.outputs_g, self.L[:, None]]
        body = np.hstack(blocks) if len(self) else np.empty((0, sum(b.shape[1] for b in blocks)))
        for k in range(len(self)):
            row = [repr(float(v)) for v in body[k]]
            row.append("" if self.r is None else repr(float(self.r[k])))
            row.append("" if self.H is None else repr(float(self.H[k])))
            w.writerow(row)
        text = buf.getvalue()
        if dest is not None:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "Trajectory":
        if isinstance(source, str) and "\n" in source:
            text = source
        else:
            with open(source, newline="") as fh:
                text = fh.read()
        rows = list(csv.reader(io.StringIO(text)))
        header, rows = rows[0], rows[1:]

        def take(prefix):
            idx = [i for i, c in enumerate(header) if c.startswith(prefix)]
            if not idx:
                return None
            return np.array([[float(r[i]) for i in idx] for r in rows]).reshape(len(rows), len(idx))

        def diag(name):
            i = header.index(name)
            vals = [r[i] for r in rows]
            if not vals or any(v == "" for v in vals):
                return None
            return np.array([float(v) for v in vals])

        col = lambda name: np.array([float(r[header.index(name)]) for r in rows])
        return cls(col("t"), take("theta_"), take("phi_"), take("f_"), take("g_"), col("L"),
                   diag("r"), diag("H"))


def step_count(t_end: float, dt: float) -> int:
    """Number of RK4 steps covering [0, t_end]; snaps to an integer within 1e-9."""
    if not (t_end > 0 and dt > 0):
        raise ValueError("t_end and dt must be positive")
    ratio = t_end / dt
    near = round(ratio)
    if abs(ratio - near) <= 1e-9 * max(1.0, ratio):
        return int(near)
    return int(math.floor(ratio))


_STATUS_ERRORS = {
    K.STATUS_DOMAIN: (DomainGuardViolation, "payoff domain guard violated"),
    K.STATUS_NONFINITE: (NonFiniteState, "state became non-finite"),
    K.STATUS_RANGE: (RangeExit, "output reached the boundary of its attainable range"),
}


class _Stop(Exception):
    def __init__(self, status):
        self.status = status


def _rk4_numpy(rhs, y0, n_steps, dt, record_every):
    """Generic RK4 loop matching the compiled one. ``rhs(y)`` returns (dy, record)."""
    records, ys = [], []
    y = np.array(y0, dtype=float)
    try:
        k1, rec = rhs(y)
    except _Stop as stop:
        return ys, records, stop.status, 0
    ys.append(y.copy())
    records.append(rec)
    half = 0.5 * dt
    for step in range(1, n_steps + 1):
        try:
            k2, _ = rhs(y + half * k1)
            k3, _ = rhs(y + half * k2)
            k4, _ = rhs(y + dt * k3)
            y = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(y)):
                return ys, records, K.STATUS_NONFINITE, step
            k1, rec = rhs(y)
        except _Stop as stop:
            return ys, records, stop.status, step
        if step % record_every == 0:
            ys.append(y.copy())
            records.append(rec)
    return ys, records, K.STATUS_OK, n_steps


def _payoff_eval(payoff, F, G):
    if not payoff.in_domain(F, G):
        raise _Stop(K.STATUS_DOMAIN)
    with np.errstate(all="ignore"):
        L = payoff._value(F, G)
        gF = payoff._grad_f(F, G)
        gG = payoff._grad_g(F, G)
    return L, gF, gG


def _finish(ys, recs, status, step, dt, record_every, build):
    traj = build(ys, recs)
    traj.meta.update(dt=dt, record_every=record_every)
    if status != K.STATUS_OK:
        exc, msg = _STATUS_ERRORS[status]
        t = step * dt
        raise exc(f"{msg} at t={t:g}", time=t, trajectory=traj)
    return traj


def _times(count, dt, record_every):
    return np.arange(count) * (dt * record_every)


def _prepare_param(bank, x, name):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (bank.total_param_dim,):
        raise DimensionMismatch(f"{name} must have length {bank.total_param_dim}, got {x.shape}")
    return x


def gda_flow(game: HiddenGame, theta0, phi0, t_end: float, dt: float = 1e-3,
             record_every: int = 1, backend: str = "auto") -> Trajectory:
    """RK4 on theta' = -grad f_i dL/df_i, phi' = +grad g_j dL/dg_j."""
    return _param_flow(game, theta0, phi0, t_end, dt, record_every, backend, K.MODE_GDA)


def hgd_mod_flow(f_op: ScalarOperator, g_op: ScalarOperator, p: float, q: float, theta0, phi0,
                 t_end: float, dt: float = 1e-3, record_every: int = 1,
                 backend: str = "auto") -> Trajectory:
    """Modified Hamiltonian flow on L = (f - p)(g - q).

    theta' = -grad f |grad g|^2 (f - p), phi' = -grad g |grad f|^2 (g - q).
    Both players descend, so the flow contracts toward the output target.
    """
    game = HiddenGame(Bilinear(p, q), [f_op], [g_op])
    return _param_flow(game, theta0, phi0, t_end, dt, record_every, backend, K.MODE_HGD)


def _param_flow(game, theta0, phi0, t_end, dt, record_every, backend, mode):
    theta0 = _prepare_param(game.bank_f, theta0, "theta0")
    phi0 = _prepare_param(game.bank_g, phi0, "phi0")
    record_every = int(record_every)
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    n_steps = step_count(t_end, dt)
    N = game.N
    use = resolve_backend(backend, game.jittable)
    y0 = np.concatenate([theta0, phi0])

    if use == "jit":
        ys, Fs, Gs, Ls, status, step = K.integrate(mode, y0, n_steps, dt, record_every,
                                                   game.kernel_game())

        def build(_ys, _recs):
            c = ys.shape[0]
            return Trajectory(_times(c, dt, record_every), ys[:, :N].copy(), ys[:, N:].copy(),
                              Fs.copy(), Gs.copy(), Ls.copy())
        return _finish(None, None, int(status), int(step), dt, record_every, build)

    payoff, bf, bg = game.payoff, game.bank_f, game.bank_g
    dims_f = np.diff(bf.offsets)
    dims_g = np.diff(bg.offsets)

    def rhs(y):
        th, ph = y[:N], y[N:]
        F, gradF = bf.apply_with_grad(th)
        G, gradG = bg.apply_with_grad(ph)
        L, gF, gG = _payoff_eval(payoff, F, G)
        if mode == K.MODE_GDA:
            dy = np.concatenate([-gradF * np.repeat(gF, dims_f), gradG * np.repeat(gG, dims_g)])
        else:
            p, q = payoff.p, payoff.q
            nf, ng = gradF @ gradF, gradG @ gradG
            dy = np.concatenate([-gradF * ng * (F[0] - p), -gradG * nf * (G[0] - q)])
        if not np.all(np.isfinite(dy)):
            raise _Stop(K.STATUS_NONFINITE)
        return dy, (F, G, L)

    ys, recs, status, step = _rk4_numpy(rhs, y0, n_steps, dt, record_every)

    def build(ys, recs):
        c = len(ys)
        Y = np.array(ys).reshape(c, y0.size)
        return Trajectory(_times(c, dt, record_every), Y[:, :N], Y[:, N:],
                          np.array([r[0] for r in recs]).reshape(c, len(bf)),
                          np.array([r[1] for r in recs]).reshape(c, len(bg)),
                          np.array([r[2] for r in recs], dtype=float).reshape(c))
    return _finish(ys, recs, status, step, dt, record_every, build)


def _closed_form(path: AscentPath) -> bool:
    return path.op.kind in (OperatorKind.SIGMOID, OperatorKind.IDENTITY)


def transformed_flow(game: HiddenGame, paths_F: Sequence[AscentPath], paths_G: Sequence[AscentPath],
                     f0, g0, t_end: float, dt: float = 1e-3, record_every: int = 1,
                     backend: str = "auto") -> Trajectory:
    """RK4 in output space: f' = -|grad f(X(f))|^2 dL/df, g' = +|grad g(X(g))|^2 dL/dg.

    Stops with ``RangeExit`` when a coordinate comes within 1e-9 of its range
    boundary.
    """
    n, m = game.payoff.dim_f, game.payoff.dim_g
    if len(paths_F) != n or len(paths_G) != m:
        raise DimensionMismatch(f"need {n} F paths and {m} G paths")
    for path in list(paths_F) + list(paths_G):
        if path.degenerate:
            raise DegeneratePath(f"path of operator {path.operator_index} is degenerate")
    f0 = np.atleast_1d(np.asarray(f0, dtype=float))
    g0 = np.atleast_1d(np.asarray(g0, dtype=float))
    if f0.shape != (n,) or g0.shape != (m,):
        raise DimensionMismatch("f0/g0 lengths do not match the payoff")
    for path, z in zip(list(paths_F) + list(paths_G), np.r_[f0, g0]):
        if not path.contains(z):
            raise OutOfRange(f"initial output {z} is outside range {path.range}")
    record_every = int(record_every)
    n_steps = step_count(t_end, dt)
    lo = np.array([p.lo for p in list(paths_F) + list(paths_G)])
    hi = np.array([p.hi for p in list(paths_F) + list(paths_G)])
    closed = all(_closed_form(p) for p in list(paths_F) + list(paths_G))
    use = resolve_backend(backend, closed and game.payoff.jit_spec() is not None)
    y0 = np.r_[f0, g0]

    if use == "jit":
        # kernel codes must describe the paths' operators, not whatever the bank holds
        tmp = HiddenGame(game.payoff, OperatorBank([p.op for p in paths_F]),
                         OperatorBank([p.op for p in paths_G]))
        kg = tmp.kernel_game((lo[:n], hi[:n], lo[n:], hi[n:]))
        ys, Fs, Gs, Ls, status, step = K.integrate(K.MODE_TRANSFORMED, y0, n_steps, dt,
                                                   record_every, kg)

        def build(_ys, _recs):
            c = ys.shape[0]
            return Trajectory(_times(c, dt, record_every), None, None, Fs.copy(), Gs.copy(),
                              Ls.copy())
        return _finish(None, None, int(status), int(step), dt, record_every, build)

    payoff = game.payoff
    paths = list(paths_F) + list(paths_G)

    def rhs(y):
        if not np.all((y > lo + K.RANGE_TOL) & (y < hi - K.RANGE_TOL)):
            raise _Stop(K.STATUS_RANGE)
        F, G = y[:n], y[n:]
        L, gF, gG = _payoff_eval(payoff, F, G)
        gns = np.array([grad_norm_sq_at_output(p, z) for p, z in zip(paths, y)])
        dy = np.r_[-gns[:n] * gF, gns[n:] * gG]
        if not np.all(np.isfinite(dy)):
            raise _Stop(K.STATUS_NONFINITE)
        return dy, (F.copy(), G.copy(), L)

    ys, recs, status, step = _rk4_numpy(rhs, y0, n_steps, dt, record_every)

    def build(ys, recs):
        c = len(ys)
        Y = np.array(ys).reshape(c, n + m)
        return Trajectory(_times(c, dt, record_every), None, None, Y[:, :n], Y[:, n:],
                          np.array([r[2] for r in recs], dtype=float).reshape(c))
    return _finish(ys, recs, status, step, dt, record_every, build)


# ---------------------------------------------------------------------------
# stochastic discrete GDA

def philox_stream(seed: int) -> np.random.Generator:
    """Counter-based stream keyed by the seed; step k uses the k-th block of draws."""
    return np.random.Generator(np.random.Philox(key=int(seed)))


class StochasticGradSource:
    """Interface for sampled gradient estimates.

    ``draw(rng, k)`` returns noise for k consecutive steps (leading axis = step)
    and must consume the stream in step order so results do not depend on how
    steps are chunked. ``grads(theta, phi, noise)`` maps one step's noise to
    (g_theta, g_phi).
    """

    batch: int = 1

    def draw(self, rng, k):
        raise NotImplementedError

    def grads(self, theta, phi, noise):
        raise NotImplementedError

    jit_chunk = None


class WganSampler(StochasticGradSource):
    """Minibatch gradients for the Gaussian WGAN toy.

    Real samples are alpha_star * z, fake samples alpha * z' with z, z' ~ N(0, 1).
    theta = (alpha,), phi = (v,).
    """

    def __init__(self, alpha_star_sq: float = 1.0, batch: int = 256, regularized: bool = True):
        if batch < 1:
            raise ValueError("batch must be >= 1")
        self.alpha_star_sq = float(alpha_star_sq)
        self.batch = int(batch)
        self.regularized = bool(regularized)

    @classmethod
    def from_game(cls, game: HiddenGame, batch: int = 256) -> "WganSampler":
        payoff = game.payoff
        if not isinstance(payoff, WganGaussian):
            raise TypeError("WganSampler needs a WganGaussian payoff")
        return cls(payoff.alpha_star_sq, batch, payoff.regularized)

    def draw(self, rng, k):
        return rng.standard_normal((k, 2, self.batch))

    def grads(self, theta, phi, noise):
        alpha, v = theta[0], phi[0]
        md = self.alpha_star_sq * np.mean(noise[0] ** 2)
        mg = np.mean(noise[1] ** 2)
        g_v = md - alpha * alpha * mg - (v if self.regularized else 0.0)
        g_a = -2.0 * alpha * v * mg
        return np.array([g_a]), np.array([g_v])

    def jit_chunk(self, theta, phi, lr, noise):
        k = noise.shape[0]
        out_a = np.empty(k)
        out_v = np.empty(k)
        K.wgan_sgda_chunk(theta[0], phi[0], lr, 1.0 if self.regularized else 0.0,
                          self.alpha_star_sq, np.ascontiguousarray(noise[:, 0, :]),
                          np.ascontiguousarray(noise[:, 1, :]), out_a, out_v)
        return out_a[:, None], out_v[:, None]


def sgda_discrete(game: HiddenGame, sampler: StochasticGradSource, theta0, phi0, steps: int,
                  lr: float, seed: int, record_every: int = 1, backend: str = "auto",
                  chunk: int = 4096) -> Trajectory:
    """Euler SGDA: theta -= lr g_theta, phi += lr g_phi with a fresh batch each step.

    ``times`` holds step indices. Deterministic for a given seed, independent of
    ``chunk`` and of the backend up to floating-point summation order.
    """
    if lr < 0:
        raise ValueError("lr must be non-negative")
    steps = int(steps)
    record_every = int(record_every)
    theta = _prepare_param(game.bank_f, theta0, "theta0").copy()
    phi = _prepare_param(game.bank_g, phi0, "phi0").copy()
    use = resolve_backend(backend, sampler.jit_chunk is not None)
    rng = philox_stream(seed)
    th_rec = [theta.copy()]
    ph_rec = [phi.copy()]
    done = 0
    while done < steps:
        k = min(chunk, steps - done)
        noise = sampler.draw(rng, k)
        if use == "jit":
            ths, phs = sampler.jit_chunk(theta, phi, lr, noise)
        else:
            ths = np.empty((k, theta.size))
            phs = np.empty((k, phi.size))
            for i in range(k):
                g_th, g_ph = sampler.grads(theta, phi, noise[i])
                theta = theta - lr * g_th
                phi = phi + lr * g_ph
                ths[i], phs[i] = theta, phi
        if not (np.all(np.isfinite(ths)) and np.all(np.isfinite(phs))):
            bad = int(np.argmax(~(np.isfinite(ths).all(1) & np.isfinite(phs).all(1))))
            traj = _sgda_traj(game, th_rec, ph_rec, record_every)
            raise NonFiniteState(f"state became non-finite at step {done + bad + 1}",
                                 time=done + bad + 1, trajectory=traj)
        theta, phi = ths[-1].copy(), phs[-1].copy()
        idx = np.arange(done + 1, done + k + 1)
        keep = idx % record_every == 0
        th_rec.extend(ths[keep])
        ph_rec.extend(phs[keep])
        done += k
    return _sgda_traj(game, th_rec, ph_rec, record_every)


def _sgda_traj(game, th_rec, ph_rec, record_every):
    th = np.array(th_rec)
    ph = np.array(ph_rec)
    F = np.array([game.bank_f.apply(t) for t in th])
    G = np.array([game.bank_g.apply(p) for p in ph])
    L = np.array([game.payoff.value(f, g) for f, g in zip(F, G)])
    traj = Trajectory(np.arange(len(th), dtype=float) * record_every, th, ph, F, G, L)
    traj.meta.update(dt=1.0, record_every=record_every)
    return traj
