"""Scalar operators, gradient-ascent paths, attainable ranges and safety checks.

A hidden game feeds each parameter block through one smooth scalar map. This
module provides those maps, the ascent/descent paths that describe which
outputs an initialization can reach, and the inverse map from an output back
to the point on the path that produces it.
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from ._jit import resolve_backend
from .errors import (
    DegeneratePath,
    DimensionMismatch,
    HCCError,
    NonFiniteValue,
    OutOfRange,
    ZeroDimInput,
)


class OperatorKind(enum.Enum):
    SIGMOID = "Sigmoid1D"
    IDENTITY = "Identity1D"
    CUSTOM = "Custom"


@dataclass(frozen=True, eq=False)
class ScalarOperator:
    """One coordinate map f: R^input_dim -> R together with its gradient.

    ``code`` and ``param`` identify a compiled kernel; ``code = -1`` marks an
    operator that only has the Python callables.
    """

    input_dim: int
    eval: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    kind: OperatorKind = OperatorKind.CUSTOM
    name: str = "custom"
    code: int = -1
    param: float = 0.0
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.input_dim) <= 0:
            raise ZeroDimInput(f"operator {self.name!r} has input_dim={self.input_dim}")

    @property
    def jittable(self) -> bool:
        return self.code >= 0

    def value_grad(self, x) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float).reshape(self.input_dim)
        z = float(self.eval(x))
        g = np.asarray(self.grad(x), dtype=float).reshape(self.input_dim)
        if not math.isfinite(z) or not np.all(np.isfinite(g)):
            raise NonFiniteValue(f"operator {self.name!r} returned a non-finite value at {x}")
        return z, g

    def __repr__(self):
        return f"ScalarOperator({self.name}, dim={self.input_dim})"


def _sig(x):
    # numerically stable logistic
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def sigmoid() -> ScalarOperator:
    def ev(x):
        return _sig(float(x[0]))

    def gr(x):
        s = _sig(float(x[0]))
        return np.array([s * (1.0 - s)])

    return ScalarOperator(1, ev, gr, OperatorKind.SIGMOID, "sigmoid", K.OP_SIGMOID, 0.0,
                          {"kind": "sigmoid"})


def identity() -> ScalarOperator:
    def ev(x):
        return float(x[0])

    def gr(x):
        return np.ones(1)

    return ScalarOperator(1, ev, gr, OperatorKind.IDENTITY, "identity", K.OP_IDENTITY, 0.0,
                          {"kind": "identity"})


def xor_relax() -> ScalarOperator:
    """s1(1 - s2) + s2(1 - s1) with s_k = sigmoid(x_k): a smooth XOR of two bits."""

    def ev(x):
        s1, s2 = _sig(float(x[0])), _sig(float(x[1]))
        return s1 * (1.0 - s2) + s2 * (1.0 - s1)

    def gr(x):
        s1, s2 = _sig(float(x[0])), _sig(float(x[1]))
        return np.array([s1 * (1.0 - s1) * (1.0 - 2.0 * s2),
                         s2 * (1.0 - s2) * (1.0 - 2.0 * s1)])

    return ScalarOperator(2, ev, gr, OperatorKind.CUSTOM, "xor_relax", K.OP_XOR, 0.0,
                          {"kind": "custom", "name": "xor_relax"})


def wgan_quadratic(alpha_star: float = 1.0) -> ScalarOperator:
    """alpha -> alpha_star**2 - alpha**2, the generator map of the Gaussian WGAN toy."""
    a2 = float(alpha_star) ** 2

    def ev(x):
        return a2 - float(x[0]) ** 2

    def gr(x):
        return np.array([-2.0 * float(x[0])])

    return ScalarOperator(1, ev, gr, OperatorKind.CUSTOM, "wgan_quadratic", K.OP_WGAN_QUAD, a2,
                          {"kind": "custom", "name": "wgan_quadratic",
                           "alpha_star": float(alpha_star)})


def custom(eval: Callable, grad: Callable, input_dim: int, name: str = "custom") -> ScalarOperator:
    """Wrap user callables. Such operators always run on the numpy path."""
    return ScalarOperator(int(input_dim), eval, grad, OperatorKind.CUSTOM, name)


_REGISTRY = {
    "sigmoid": lambda **kw: sigmoid(),
    "identity": lambda **kw: identity(),
    "xor_relax": lambda **kw: xor_relax(),
    "wgan_quadratic": lambda alpha_star=1.0, **kw: wgan_quadratic(alpha_star),
}

_CALL = re.compile(r"^\s*([a-z_]+)\s*(?:\(\s*([^)]*)\s*\))?\s*$")


def operator_from_spec(spec) -> ScalarOperator:
    """Build an operator from a config entry.

    Accepts ``"sigmoid"``, ``"wgan_quadratic(1.0)"``, ``{"kind": "identity"}`` or
    ``{"kind": "custom", "name": "wgan_quadratic", "alpha_star": 2.0}``.
    """
    if isinstance(spec, str):
        m = _CALL.match(spec)
        if not m or m.group(1) not in _REGISTRY:
            raise HCCError(f"unknown operator {spec!r}")
        name, arg = m.group(1), m.group(2)
        if arg:
            return _REGISTRY[name](alpha_star=float(arg))
        return _REGISTRY[name]()
    if isinstance(spec, dict):
        kind = spec.get("kind", "custom")
        name = spec.get("name", kind) if kind == "custom" else kind
        if name not in _REGISTRY:
            raise HCCError(f"unknown operator {name!r}")
        kwargs = {k: v for k, v in spec.items() if k not in ("kind", "name")}
        return _REGISTRY[name](**kwargs)
    raise HCCError(f"cannot build an operator from {spec!r}")


class OperatorBank:
    """Ordered operators acting on disjoint slices of one flat parameter vector."""

    def __init__(self, operators: Sequence[ScalarOperator]):
        self.operators = tuple(operators)
        dims = [op.input_dim for op in self.operators]
        self.offsets = np.concatenate([[0], np.cumsum(dims)]).astype(np.int64)
        self.total_param_dim = int(self.offsets[-1])

    def __len__(self):
        return len(self.operators)

    def __iter__(self):
        return iter(self.operators)

    def __getitem__(self, i):
        return self.operators[i]

    @classmethod
    def uniform(cls, op_factory: Callable[[], ScalarOperator], n: int) -> "OperatorBank":
        return cls([op_factory() for _ in range(n)])

    @property
    def jittable(self) -> bool:
        return all(op.jittable for op in self.operators)

    def blocks(self, flat) -> list[np.ndarray]:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.total_param_dim,):
            raise DimensionMismatch(
                f"expected {self.total_param_dim} parameters, got shape {flat.shape}")
        return [flat[self.offsets[i]:self.offsets[i + 1]] for i in range(len(self))]

    def apply(self, flat) -> np.ndarray:
        return np.array([op.eval(b) for op, b in zip(self.operators, self.blocks(flat))])

    def apply_with_grad(self, flat) -> tuple[np.ndarray, np.ndarray]:
        """Outputs and the concatenated per-block gradients (length total_param_dim)."""
        out = np.empty(len(self))
        grads = np.empty(self.total_param_dim)
        for i, (op, b) in enumerate(zip(self.operators, self.blocks(flat))):
            out[i] = op.eval(b)
            grads[self.offsets[i]:self.offsets[i + 1]] = op.grad(b)
        return out, grads

    def kernel_arrays(self):
        codes = np.array([op.code for op in self.operators], dtype=np.int64)
        params = np.array([op.param for op in self.operators], dtype=float)
        return codes, params, self.offsets.copy()


# ---------------------------------------------------------------------------
# ascent paths

_STOP_NAMES = {
    K.STOP_HORIZON: "horizon",
    K.STOP_STALL: "stall",
    K.STOP_BOUND: "bound",
    K.STOP_NONMONOTONE: "nonmonotone",
    K.STOP_MAXSTEPS: "max_steps",
    K.STOP_NONFINITE: "nonfinite",
}
_TRUNCATING = {K.STOP_HORIZON, K.STOP_BOUND, K.STOP_MAXSTEPS}


@dataclass(frozen=True, eq=False)
class AscentPath:
    """Sampled gradient ascent and descent through one operator's init.

    ``z`` is strictly increasing; ``x[k]`` is the input producing ``z[k]``,
    ``gns[k]`` its squared gradient norm and ``dxdz[k] = grad / gns`` the
    derivative of the inverse map, used for Hermite interpolation.
    """

    op: ScalarOperator
    operator_index: int
    init: np.ndarray
    z: np.ndarray
    x: np.ndarray
    gns: np.ndarray
    dxdz: np.ndarray
    lo: float
    hi: float
    lo_truncated: bool
    hi_truncated: bool
    degenerate: bool
    stop_reasons: tuple = ()

    @property
    def range(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    @property
    def init_output(self) -> float:
        return float(self.op.eval(self.init))

    @property
    def samples(self):
        return list(zip(self.z, self.x, self.gns))

    def contains(self, z: float) -> bool:
        return (not self.degenerate) and self.lo < z < self.hi


def _branch_numpy(op, x0, direction, step, horizon, stall_tol, max_gap, output_bound, max_steps):
    x = np.array(x0, dtype=float)
    z, g = op.value_grad(x)
    zs, xs, gs = [z], [x.copy()], [g.copy()]
    t = 0.0
    stop = K.STOP_MAXSTEPS
    vg = op.value_grad
    while True:
        gn = float(g @ g)
        if gn < stall_tol:
            stop = K.STOP_STALL
            break
        if t >= horizon * (1.0 - 1e-12):
            stop = K.STOP_HORIZON
            break
        if abs(z) > output_bound:
            stop = K.STOP_BOUND
            break
        if len(zs) > max_steps:
            break
        h = min(step, max_gap * max(1.0, abs(z)) / gn, horizon - t)
        try:
            k1 = direction * g
            k2 = direction * vg(x + 0.5 * h * k1)[1]
            k3 = direction * vg(x + 0.5 * h * k2)[1]
            k4 = direction * vg(x + h * k3)[1]
            x_new = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            z_new, g_new = vg(x_new)
        except NonFiniteValue:
            stop = K.STOP_NONFINITE
            break
        if direction * (z_new - z) <= 0.0:
            stop = K.STOP_NONMONOTONE
            break
        x, z, g = x_new, z_new, g_new
        t += h
        zs.append(z)
        xs.append(x.copy())
        gs.append(g.copy())
    return np.array(zs), np.array(xs), np.array(gs), stop


def build_ascent_path(op: ScalarOperator, init, horizon: float = 50.0, step: float = 1e-2,
                      stall_tol: float = 1e-12, *, operator_index: int = 0,
                      max_gap: float = 1e-3, output_bound: float = 1e4,
                      max_steps: int = 200_000, backend: str = "auto") -> AscentPath:
    """Integrate x' = +grad f and x' = -grad f from ``init`` with RK4.

    Steps are shortened so consecutive outputs differ by at most
    ``max_gap * max(1, |z|)``. Branches stop when the squared gradient norm
    drops below ``stall_tol`` (a genuine endpoint), or on the time horizon or
    ``|z| > output_bound`` (a truncated endpoint).
    """
    if step <= 0 or horizon <= 0 or stall_tol <= 0:
        raise ValueError("step, horizon and stall_tol must be positive")
    init = np.asarray(init, dtype=float).reshape(-1)
    if init.shape[0] != op.input_dim:
        raise DimensionMismatch(f"init has length {init.shape[0]}, operator expects {op.input_dim}")
    z0, g0 = op.value_grad(init)

    if float(g0 @ g0) < stall_tol:
        return AscentPath(op, operator_index, init, np.array([z0]), init[None, :].copy(),
                          np.array([float(g0 @ g0)]), np.zeros((1, op.input_dim)),
                          z0, z0, False, False, True, ("stall", "stall"))

    use = resolve_backend(backend, op.jittable)
    branches = []
    for direction in (1.0, -1.0):
        if use == "jit":
            zs, xs, gs, stop = K.ascent_branch(op.code, op.param, init, direction, step, horizon,
                                               stall_tol, max_gap, output_bound, max_steps)
            stop = int(stop)
        else:
            zs, xs, gs, stop = _branch_numpy(op, init, direction, step, horizon, stall_tol,
                                             max_gap, output_bound, max_steps)
        if stop == K.STOP_NONFINITE:
            raise NonFiniteValue(f"operator {op.name!r} produced a non-finite value along its path")
        branches.append((zs, xs, gs, stop))

    (za, xa, ga, stop_up), (zd, xd, gd, stop_down) = branches
    z = np.concatenate([zd[:0:-1], za])
    x = np.concatenate([xd[:0:-1], xa])
    g = np.concatenate([gd[:0:-1], ga])
    gns = np.einsum("ij,ij->i", g, g)
    dxdz = g / gns[:, None]

    if op.kind is OperatorKind.SIGMOID:
        lo, hi, lo_t, hi_t = 0.0, 1.0, False, False
    elif op.kind is OperatorKind.IDENTITY:
        lo, hi, lo_t, hi_t = -math.inf, math.inf, False, False
    else:
        lo, hi = float(z[0]), float(z[-1])
        lo_t, hi_t = stop_down in _TRUNCATING, stop_up in _TRUNCATING
    return AscentPath(op, operator_index, init, z, x, gns, dxdz, lo, hi, lo_t, hi_t, False,
                      (_STOP_NAMES[stop_up], _STOP_NAMES[stop_down]))


def _check_inside(path: AscentPath, z: float):
    if path.degenerate:
        raise DegeneratePath(f"path of operator {path.operator_index} sits at a stationary point")
    if not (path.lo < z < path.hi):
        raise OutOfRange(f"output {z} outside range ({path.lo}, {path.hi})")


def inverse_map(path: AscentPath, z: float) -> np.ndarray:
    """Input on the path whose output is ``z``.

    Between samples this uses cubic Hermite interpolation in z with slopes
    grad/|grad|^2. Sigmoid and identity operators fall back to their closed
    form inverse outside the sampled span.
    """
    z = float(z)
    _check_inside(path, z)
    zs = path.z
    if z < zs[0] or z > zs[-1]:
        if path.op.kind is OperatorKind.SIGMOID:
            return np.array([math.log(z) - math.log1p(-z)])
        if path.op.kind is OperatorKind.IDENTITY:
            return np.array([z])
        # the endpoint lies between the last sample and the open range bound
        return (path.x[0] if z < zs[0] else path.x[-1]).copy()
    k = int(np.searchsorted(zs, z, side="right")) - 1
    if k >= len(zs) - 1:
        return path.x[-1].copy()
    z0, z1 = zs[k], zs[k + 1]
    h = z1 - z0
    s = (z - z0) / h
    s2, s3 = s * s, s * s * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    return (h00 * path.x[k] + h10 * h * path.dxdz[k]
            + h01 * path.x[k + 1] + h11 * h * path.dxdz[k + 1])


def grad_norm_sq_at_output(path: AscentPath, z: float) -> float:
    """|grad f|^2 at the path point with output z (closed form for sigmoid and identity)."""
    z = float(z)
    _check_inside(path, z)
    if path.op.kind is OperatorKind.SIGMOID:
        w = z * (1.0 - z)
        return w * w
    if path.op.kind is OperatorKind.IDENTITY:
        return 1.0
    g = path.op.grad(inverse_map(path, z))
    return float(np.dot(g, g))


class Verdict(enum.Enum):
    SAFE = "Safe"
    UNSAFE = "Unsafe"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class SafetyReport:
    verdicts_f: tuple
    verdicts_g: tuple

    @property
    def overall(self) -> Verdict:
        allv = self.verdicts_f + self.verdicts_g
        if any(v is Verdict.UNSAFE for v in allv):
            return Verdict.UNSAFE
        if all(v is Verdict.SAFE for v in allv):
            return Verdict.SAFE
        return Verdict.UNKNOWN

    @property
    def safe(self) -> bool:
        return self.overall is Verdict.SAFE


def coordinate_verdict(path: AscentPath, target: float) -> Verdict:
    if path.degenerate:
        return Verdict.UNSAFE
    target = float(target)
    if path.lo < target < path.hi:
        return Verdict.SAFE
    if target == path.lo or target == path.hi:
        return Verdict.UNKNOWN
    if target < path.lo:
        return Verdict.UNKNOWN if path.lo_truncated else Verdict.UNSAFE
    return Verdict.UNKNOWN if path.hi_truncated else Verdict.UNSAFE


def is_safe(paths_F: Sequence[AscentPath], paths_G: Sequence[AscentPath], p, q) -> SafetyReport:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if len(paths_F) != p.shape[0] or len(paths_G) != q.shape[0]:
        raise DimensionMismatch(
            f"{len(paths_F)} F paths vs {p.shape[0]} targets, {len(paths_G)} G paths vs {q.shape[0]}")
    return SafetyReport(tuple(coordinate_verdict(pa, t) for pa, t in zip(paths_F, p)),
                        tuple(coordinate_verdict(pa, t) for pa, t in zip(paths_G, q)))


def bank_paths(bank: OperatorBank, flat_init, **kwargs) -> list[AscentPath]:
    """One ascent path per operator of ``bank`` from the flat parameter vector."""
    return [build_ascent_path(op, b, operator_index=i, **kwargs)
            for i, (op, b) in enumerate(zip(bank.operators, bank.blocks(flat_init)))]
