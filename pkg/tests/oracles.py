"""Independent reference implementations used as test oracles.

Nothing here imports the package: scalar loops, plain Python floats or
mpmath, written directly from the model formulas.
"""

import math

import mpmath as mp
import numpy as np

# Frozen values, evaluated with mpmath at 30 significant digits.
SOFTPLUS_1 = 1.31326168751822283404899549497
LOGISTIC_1 = 0.731058578630004879251159241822
LN2_TIMES_30 = 20.7944154167983592825169636437
ADADELTA_STEP1 = (0.05, -0.00447209123431083861013012099025, 9.99980000399992000159996800064e-7)
ADADELTA_STEP2 = (0.0975, -0.0045290622655332073671951795828, 1.97560125063383184803458113872e-6)
NOISE_VAR_K3 = 0.466516495768403707990671633075
NOISE_VAR_K10 = 0.267444716835728371237466186104
EXP_06_OVER_01 = 1.82211880039050897487536766816

# Reference pair-study values: positions, velocities and the force on each agent.
PAIR_TABLE = {
    "S1": ((0, 0.22), (0, -0.22), (0, -1), (0, 1), (0.0, 2.1118), (0.0, -2.1118)),
    "S2": ((0, 0.22), (0, -0.22), (0, 1), (0, 1), (0.0, 2.1118), (0.0, -2.1118)),
    "S3": ((0.01, 0.22), (-0.01, -0.22), (0, -1), (0, 1), (0.0417, 2.0961), (-0.0417, -2.0961)),
    "S4": ((0.01, 0.22), (-0.01, -0.22), (0, 1), (0, 1), (0.0952, 2.0936), (-0.0952, -2.0936)),
    "S5": ((0.22, 0), (-0.22, 0), (0, -1), (0, 1), (2.1118, 1.1867), (-2.1118, -1.1867)),
    "S6": ((0.22, 0), (-0.22, 0), (0, 1), (0, 1), (2.1118, 0.0), (-2.1118, 0.0)),
}
REFERENCE_SF = dict(A=0.0044, k=34.9539, kappa=9.8894, r=0.25, B=0.1)


def softplus_mp(x):
    mp.mp.dps = 40
    return float(mp.log1p(mp.e ** mp.mpf(x)))


def sf_pair_force_mp(xi, xj, vi, vj, A, k, kappa, r, B):
    """Pair force on i from j, written out component by component in mpmath."""
    mp.mp.dps = 30
    xi, xj, vi, vj = ([mp.mpf(repr(float(c))) for c in p] for p in (xi, xj, vi, vj))
    A, k, kappa, r, B = (mp.mpf(repr(float(c))) for c in (A, k, kappa, r, B))
    R = 2 * r
    dx = [xi[0] - xj[0], xi[1] - xj[1]]
    d = mp.sqrt(dx[0] ** 2 + dx[1] ** 2)
    n = [dx[0] / d, dx[1] / d]
    t = [-n[1], n[0]]
    s = (vj[0] - vi[0]) * t[0] + (vj[1] - vi[1]) * t[1]
    h = max(R - d, 0)
    a = A * mp.e ** ((R - d) / B) + k * h
    return (float(a * n[0] + kappa * h * s * t[0]), float(a * n[1] + kappa * h * s * t[1]))


def adadelta_reference(grads, rho=0.95, eps=1e-6):
    """Straight-line scalar loop over components and steps."""
    grads = [list(map(float, g)) for g in grads]
    dim = len(grads[0])
    eg2 = [0.0] * dim
    edx2 = [0.0] * dim
    updates = []
    for g in grads:
        step = []
        for i in range(dim):
            eg2[i] = rho * eg2[i] + (1 - rho) * g[i] * g[i]
            dx = -math.sqrt(edx2[i] + eps) / math.sqrt(eg2[i] + eps) * g[i]
            edx2[i] = rho * edx2[i] + (1 - rho) * dx * dx
            step.append(dx)
        updates.append(step)
    return np.array(updates), np.array(eg2), np.array(edx2)


def euler_reference(f, y0, dt, steps):
    ys = [list(map(float, y0))]
    for _ in range(steps):
        y = ys[-1]
        fy = f(y)
        ys.append([a + dt * b for a, b in zip(y, fy)])
    return np.array(ys)


def central_difference(fun, x, step=1e-6):
    """Jacobian of a vector function by central differences, shape (out, in)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        up, dn = x.copy(), x.copy()
        up[i] += step
        dn[i] -= step
        cols.append((np.atleast_1d(fun(up)) - np.atleast_1d(fun(dn))) / (2 * step))
    return np.array(cols).T
