"""Compiled inner loops.

Everything here works on flat arrays and integer codes so numba can compile
it in nopython mode. The object-level classes in ``operators``, ``payoffs``
and ``dynamics`` translate themselves into these codes; games that contain
user-supplied callables never reach this module and run on the numpy path.
"""
import math

import numpy as np

from ._jit import njit

OP_IDENTITY = 0
OP_SIGMOID = 1
OP_XOR = 2
OP_WGAN_QUAD = 3

PAY_SHIFTED_BILINEAR = 0
PAY_MATRIX_BILINEAR = 1
PAY_VANILLA_GAN = 2
PAY_WGAN = 3
PAY_FGAN = 4

DIV_KL = 0
DIV_REVERSE_KL = 1
DIV_JS = 2
DIV_PEARSON = 3

MODE_GDA = 0
MODE_TRANSFORMED = 1
MODE_HGD = 2

STATUS_OK = 0
STATUS_DOMAIN = 1
STATUS_NONFINITE = 2
STATUS_RANGE = 3

# ascent-branch stop reasons
STOP_HORIZON = 0
STOP_STALL = 1
STOP_BOUND = 2
STOP_NONMONOTONE = 3
STOP_MAXSTEPS = 4
STOP_NONFINITE = 5

RANGE_TOL = 1e-9


@njit(cache=True)
def sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def op_value_grad(code, param, x, off, grad):
    """Evaluate operator ``code`` on x[off:off+dim]; write its gradient into grad[off:]."""
    if code == OP_IDENTITY:
        grad[off] = 1.0
        return x[off]
    elif code == OP_SIGMOID:
        s = sigmoid(x[off])
        grad[off] = s * (1.0 - s)
        return s
    elif code == OP_XOR:
        s1 = sigmoid(x[off])
        s2 = sigmoid(x[off + 1])
        grad[off] = s1 * (1.0 - s1) * (1.0 - 2.0 * s2)
        grad[off + 1] = s2 * (1.0 - s2) * (1.0 - 2.0 * s1)
        return s1 * (1.0 - s2) + s2 * (1.0 - s1)
    else:
        grad[off] = -2.0 * x[off]
        return param - x[off] * x[off]


@njit(cache=True)
def closed_form_gns(code, z):
    if code == OP_SIGMOID:
        w = z * (1.0 - z)
        return w * w
    return 1.0


@njit(cache=True)
def fconj(div, t):
    if div == DIV_KL:
        return math.exp(t - 1.0)
    elif div == DIV_REVERSE_KL:
        if t >= 0.0:
            return np.nan
        return -1.0 - math.log(-t)
    elif div == DIV_JS:
        e = math.exp(t)
        if e >= 2.0:
            return np.nan
        return -math.log(2.0 - e)
    return 0.25 * t * t + t


@njit(cache=True)
def fconj_prime(div, t):
    if div == DIV_KL:
        return math.exp(t - 1.0)
    elif div == DIV_REVERSE_KL:
        return -1.0 / t
    elif div == DIV_JS:
        e = math.exp(t)
        return e / (2.0 - e)
    return 0.5 * t + 1.0


@njit(cache=True)
def payoff_value_grad(pint, pflt, F, G, gF, gG):
    code = pint[0]
    n = F.shape[0]
    m = G.shape[0]
    if code == PAY_SHIFTED_BILINEAR:
        p = pflt[0]
        q = pflt[1]
        gF[0] = G[0] - q
        gG[0] = F[0] - p
        return (F[0] - p) * (G[0] - q)
    elif code == PAY_MATRIX_BILINEAR:
        for i in range(n):
            gF[i] = 0.0
        for j in range(m):
            gG[j] = 0.0
        for i in range(n):
            for j in range(m):
                a = pflt[i * m + j]
                gF[i] += a * G[j]
                gG[j] += a * F[i]
        val = 0.0
        for i in range(n):
            val += F[i] * gF[i]
        return val
    elif code == PAY_VANILLA_GAN:
        lam = G[n]
        val = 0.0
        total = 0.0
        for x in range(n):
            pd = pflt[x]
            g = G[x]
            f = F[x]
            l1 = math.log(1.0 - g) if g < 1.0 else -np.inf
            lg = math.log(g) if g > 0.0 else -np.inf
            val += pd * lg + f * l1
            gF[x] = l1 + lam
            gG[x] = pd / g - f / (1.0 - g)
            total += f
        gG[n] = total - 1.0
        return val + lam * (total - 1.0)
    elif code == PAY_WGAN:
        reg = pflt[0]
        u = F[0]
        v = G[0]
        gF[0] = v
        gG[0] = u - reg * v
        return u * v - 0.5 * reg * v * v
    else:
        div = pint[1]
        val = 0.0
        for x in range(n):
            c = fconj(div, G[x])
            val += pflt[x] * G[x] - F[x] * c
            gF[x] = -c
            gG[x] = pflt[x] - F[x] * fconj_prime(div, G[x])
        return val


@njit(cache=True)
def _apply_bank(codes, params, off, x, out, grad):
    for i in range(codes.shape[0]):
        out[i] = op_value_grad(codes[i], params[i], x, off[i], grad)


@njit(cache=True)
def _rhs(mode, y, game, dy, F, G, gF, gG, bf, bg):
    """Vector field of the chosen flow at y. Returns (status, L)."""
    (f_codes, f_params, f_off, g_codes, g_params, g_off, pint, pflt,
     reg, cf, cg, glo_f, ghi_f, glo_g, ghi_g, rlo_f, rhi_f, rlo_g, rhi_g) = game
    n = f_codes.shape[0]
    m = g_codes.shape[0]
    N = f_off[n]

    if mode == MODE_TRANSFORMED:
        for i in range(n):
            F[i] = y[i]
            if not (y[i] > rlo_f[i] + RANGE_TOL and y[i] < rhi_f[i] - RANGE_TOL):
                return STATUS_RANGE, np.nan
        for j in range(m):
            G[j] = y[n + j]
            if not (G[j] > rlo_g[j] + RANGE_TOL and G[j] < rhi_g[j] - RANGE_TOL):
                return STATUS_RANGE, np.nan
    else:
        _apply_bank(f_codes, f_params, f_off, y, F, bf)
        for j in range(m):
            G[j] = op_value_grad(g_codes[j], g_params[j], y[N:], g_off[j], bg)

    for i in range(n):
        if not (F[i] > glo_f[i] and F[i] < ghi_f[i]):
            return STATUS_DOMAIN, np.nan
    for j in range(m):
        if not (G[j] > glo_g[j] and G[j] < ghi_g[j]):
            return STATUS_DOMAIN, np.nan

    L = payoff_value_grad(pint, pflt, F, G, gF, gG)
    lam_f = reg[0]
    lam_g = reg[1]
    if lam_f != 0.0 or lam_g != 0.0:
        for i in range(n):
            d = F[i] - cf[i]
            L += 0.5 * lam_f * d * d
            gF[i] += lam_f * d
        for j in range(m):
            d = G[j] - cg[j]
            L -= 0.5 * lam_g * d * d
            gG[j] -= lam_g * d

    if mode == MODE_GDA:
        for i in range(n):
            for k in range(f_off[i], f_off[i + 1]):
                dy[k] = -bf[k] * gF[i]
        for j in range(m):
            for k in range(g_off[j], g_off[j + 1]):
                dy[N + k] = bg[k] * gG[j]
    elif mode == MODE_TRANSFORMED:
        for i in range(n):
            dy[i] = -closed_form_gns(f_codes[i], F[i]) * gF[i]
        for j in range(m):
            dy[n + j] = closed_form_gns(g_codes[j], G[j]) * gG[j]
    else:
        # modified Hamiltonian flow on a 1x1 shifted bilinear game
        p = pflt[0]
        q = pflt[1]
        nf = 0.0
        for k in range(N):
            nf += bf[k] * bf[k]
        ng = 0.0
        for k in range(g_off[1]):
            ng += bg[k] * bg[k]
        for k in range(N):
            dy[k] = -bf[k] * ng * (F[0] - p)
        for k in range(g_off[1]):
            dy[N + k] = -bg[k] * nf * (G[0] - q)

    for k in range(dy.shape[0]):
        if not math.isfinite(dy[k]):
            return STATUS_NONFINITE, L
    return STATUS_OK, L


@njit(cache=True)
def integrate(mode, y0, n_steps, dt, record_every, game):
    """Fixed-step RK4. Returns records and (status, failing step)."""
    n = game[0].shape[0]
    m = game[3].shape[0]
    S = y0.shape[0]
    K = n_steps // record_every + 1
    rec_y = np.empty((K, S))
    rec_F = np.empty((K, n))
    rec_G = np.empty((K, m))
    rec_L = np.empty(K)
    F = np.empty(n)
    G = np.empty(m)
    gF = np.empty(n)
    gG = np.empty(m)
    N = game[2][n]
    M = game[5][m]
    bf = np.zeros(max(N, 1))
    bg = np.zeros(max(M, 1))
    y = y0.copy()
    tmp = np.empty(S)
    k1 = np.empty(S)
    k2 = np.empty(S)
    k3 = np.empty(S)
    k4 = np.empty(S)

    status, L = _rhs(mode, y, game, k1, F, G, gF, gG, bf, bg)
    if status != STATUS_OK:
        return rec_y[:0], rec_F[:0], rec_G[:0], rec_L[:0], status, 0
    rec_y[0] = y
    rec_F[0] = F
    rec_G[0] = G
    rec_L[0] = L
    r = 1
    half = 0.5 * dt
    for step in range(1, n_steps + 1):
        for k in range(S):
            tmp[k] = y[k] + half * k1[k]
        status, _ = _rhs(mode, tmp, game, k2, F, G, gF, gG, bf, bg)
        if status != STATUS_OK:
            return rec_y[:r], rec_F[:r], rec_G[:r], rec_L[:r], status, step
        for k in range(S):
            tmp[k] = y[k] + half * k2[k]
        status, _ = _rhs(mode, tmp, game, k3, F, G, gF, gG, bf, bg)
        if status != STATUS_OK:
            return rec_y[:r], rec_F[:r], rec_G[:r], rec_L[:r], status, step
        for k in range(S):
            tmp[k] = y[k] + dt * k3[k]
        status, _ = _rhs(mode, tmp, game, k4, F, G, gF, gG, bf, bg)
        if status != STATUS_OK:
            return rec_y[:r], rec_F[:r], rec_G[:r], rec_L[:r], status, step
        for k in range(S):
            y[k] = y[k] + dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])
            if not math.isfinite(y[k]):
                return rec_y[:r], rec_F[:r], rec_G[:r], rec_L[:r], STATUS_NONFINITE, step
        status, L = _rhs(mode, y, game, k1, F, G, gF, gG, bf, bg)
        if status != STATUS_OK:
            return rec_y[:r], rec_F[:r], rec_G[:r], rec_L[:r], status, step
        if step % record_every == 0:
            rec_y[r] = y
            rec_F[r] = F
            rec_G[r] = G
            rec_L[r] = L
            r += 1
    return rec_y, rec_F, rec_G, rec_L, STATUS_OK, n_steps


@njit(cache=True)
def ascent_branch(code, param, x0, direction, step, horizon, stall_tol,
                  max_gap, output_bound, max_steps):
    """Integrate x' = direction * grad f(x) with RK4 from x0.

    The step is shrunk so that one step moves the output by at most
    ``max_gap * max(1, |z|)``. Returns outputs, inputs, gradients and a stop
    code.
    """
    dim = x0.shape[0]
    zs = np.empty(max_steps + 1)
    xs = np.empty((max_steps + 1, dim))
    gs = np.empty((max_steps + 1, dim))
    x = x0.copy()
    grad = np.empty(dim)
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    tmp = np.empty(dim)
    z = op_value_grad(code, param, x, 0, grad)
    if not math.isfinite(z):
        return zs[:0], xs[:0], gs[:0], STOP_NONFINITE
    zs[0] = z
    xs[0] = x
    gs[0] = grad
    count = 1
    t = 0.0
    stop = STOP_MAXSTEPS
    while True:
        gn = 0.0
        for k in range(dim):
            gn += grad[k] * grad[k]
        if gn < stall_tol:
            stop = STOP_STALL
            break
        if t >= horizon * (1.0 - 1e-12):
            stop = STOP_HORIZON
            break
        if abs(z) > output_bound:
            stop = STOP_BOUND
            break
        if count > max_steps:
            stop = STOP_MAXSTEPS
            break
        h = min(step, max_gap * max(1.0, abs(z)) / gn, horizon - t)
        for k in range(dim):
            k1[k] = direction * grad[k]
            tmp[k] = x[k] + 0.5 * h * k1[k]
        op_value_grad(code, param, tmp, 0, k2)
        for k in range(dim):
            k2[k] *= direction
            tmp[k] = x[k] + 0.5 * h * k2[k]
        op_value_grad(code, param, tmp, 0, k3)
        for k in range(dim):
            k3[k] *= direction
            tmp[k] = x[k] + h * k3[k]
        op_value_grad(code, param, tmp, 0, k4)
        for k in range(dim):
            k4[k] *= direction
            tmp[k] = x[k] + h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])
        z_new = op_value_grad(code, param, tmp, 0, k1)
        if not math.isfinite(z_new):
            stop = STOP_NONFINITE
            break
        if direction * (z_new - z) <= 0.0:
            stop = STOP_NONMONOTONE
            break
        for k in range(dim):
            x[k] = tmp[k]
            grad[k] = k1[k]
        z = z_new
        t += h
        zs[count] = z
        xs[count] = x
        gs[count] = grad
        count += 1
    return zs[:count], xs[:count], gs[:count], stop


@njit(cache=True)
def wgan_sgda_chunk(alpha, v, lr, reg, alpha_star_sq, data_noise, gen_noise,
                    out_alpha, out_v):
    """Euler SGDA steps for the sampled WGAN objective, one row of noise per step."""
    K = data_noise.shape[0]
    B = data_noise.shape[1]
    for k in range(K):
        md = 0.0
        mg = 0.0
        for b in range(B):
            md += data_noise[k, b] * data_noise[k, b]
            mg += gen_noise[k, b] * gen_noise[k, b]
        md = alpha_star_sq * md / B
        mg = mg / B
        g_v = md - alpha * alpha * mg - reg * v
        g_a = -2.0 * alpha * v * mg
        alpha = alpha - lr * g_a
        v = v + lr * g_v
        out_alpha[k] = alpha
        out_v[k] = v
    return alpha, v
