"""Tracking cost and the exact discrete adjoint of the explicit Euler map.

Forward: y_{n+1} = y_n + dt F(y_n, u) on a fine grid with ``stride`` Euler
steps per data interval. Cost: 0.5 * dt_data * sum_{m<M} |P y_{m*stride} - z_m|^2
where P keeps the observed (position) components.

The costate here is lambda_n = dC/dy_n, so

    lambda_N = 0
    lambda_n = lambda_{n+1} + dt J_y(y_n)^T lambda_{n+1} + dC_n/dy_n
    dC/du    = sum_n dt J_u(y_n)^T lambda_{n+1}
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import IntegrationError, ModelFamily, Scene, SimConfig, Trajectory


@dataclass
class CostReport:
    value: float
    per_agent: np.ndarray


@dataclass
class AdjointTrace:
    lambdas: np.ndarray  # (steps + 1, state_dim)


@dataclass
class GradientResult:
    grad: np.ndarray
    cost: CostReport


def _data_dt(ref: Trajectory) -> float:
    if len(ref.times) < 2:
        raise ValueError("reference needs at least two time nodes")
    steps = np.diff(ref.times)
    dt = float(steps.mean())
    if not np.allclose(steps, dt, rtol=1e-9, atol=1e-12):
        raise ValueError("reference time grid is not uniform")
    return dt


def tracking_cost(traj: Trajectory, ref: Trajectory, n_agents: int, spatial_dim: int = 1) -> CostReport:
    """Rectangle rule over nodes 0..M-1; only the first n_agents*spatial_dim components count."""
    rel_t = traj.times - traj.times[0]
    rel_ref = ref.times - ref.times[0]
    if traj.states.shape[0] != ref.states.shape[0] or not np.allclose(rel_t, rel_ref, atol=1e-9):
        raise ValueError("trajectory and reference are not on the same time grid")
    dt = _data_dt(ref)
    obs = n_agents * spatial_dim
    diff = traj.states[:-1, :obs] - ref.states[:-1, :obs]
    per_agent = 0.5 * dt * (diff**2).reshape(diff.shape[0], n_agents, spatial_dim).sum(axis=(0, 2))
    return CostReport(float(per_agent.sum()), per_agent)


def _check_alignment(traj: Trajectory, ref: Trajectory, cfg: SimConfig):
    if (traj.states.shape[0] - 1) != (ref.states.shape[0] - 1) * cfg.stride:
        raise ValueError("fine trajectory length does not match reference length times stride")
    if not np.isclose(_data_dt(ref), cfg.dt * cfg.stride, rtol=1e-9):
        raise ValueError("dt * stride must equal the reference spacing")


def backward_sweep(traj: Trajectory, ref: Trajectory, family: ModelFamily, u, scene: Scene, cfg: SimConfig) -> AdjointTrace:
    _check_alignment(traj, ref, cfg)
    u = np.asarray(u, dtype=float)
    dt, stride = cfg.dt, cfg.stride
    dt_data = dt * stride
    obs = family.observed_dim(scene.n_agents)
    steps = traj.states.shape[0] - 1
    lam = np.zeros_like(traj.states)
    for n in range(steps - 1, -1, -1):
        y = traj.states[n]
        nxt = lam[n + 1]
        cur = nxt + dt * family.vjp_state(y, u, scene, nxt)
        if n % stride == 0:
            cur[:obs] += dt_data * (y[:obs] - ref.states[n // stride, :obs])
        if not np.all(np.isfinite(cur)):
            raise IntegrationError(n, "non-finite costate")
        lam[n] = cur
    return AdjointTrace(lam)


def reduced_gradient(traj: Trajectory, ref: Trajectory, adjoint: AdjointTrace, family: ModelFamily, u, scene: Scene,
                     cfg: SimConfig) -> GradientResult:
    u = np.asarray(u, dtype=float)
    grad = np.zeros(family.n_params)
    for n in range(traj.states.shape[0] - 1):
        grad += cfg.dt * family.vjp_params(traj.states[n], u, scene, adjoint.lambdas[n + 1])
    cost = tracking_cost(traj.subsample(cfg.stride), ref, scene.n_agents, family.spatial_dim)
    return GradientResult(grad, cost)


def cost_and_gradient(family: ModelFamily, u, y0, ref: Trajectory, scene: Scene, cfg: SimConfig) -> GradientResult:
    """Forward solve plus one fused backward pass (same result as
    :func:`backward_sweep` followed by :func:`reduced_gradient`)."""
    u = np.asarray(u, dtype=float)
    traj = family.simulate(y0, u, scene, cfg)
    _check_alignment(traj, ref, cfg)
    dt, stride = cfg.dt, cfg.stride
    dt_data = dt * stride
    obs = family.observed_dim(scene.n_agents)
    lam = np.zeros(traj.states.shape[1])
    grad = np.zeros(family.n_params)
    for n in range(traj.states.shape[0] - 2, -1, -1):
        y = traj.states[n]
        gs, gp = family.vjp(y, u, scene, lam)
        grad += dt * gp
        lam = lam + dt * gs
        if n % stride == 0:
            lam[:obs] += dt_data * (y[:obs] - ref.states[n // stride, :obs])
        if not np.all(np.isfinite(lam)):
            raise IntegrationError(n, "non-finite costate")
    cost = tracking_cost(traj.subsample(stride), ref, scene.n_agents, family.spatial_dim)
    return GradientResult(grad, cost)


def cost(family: ModelFamily, u, y0, ref: Trajectory, scene: Scene, cfg: SimConfig) -> CostReport:
    traj = family.simulate(y0, u, scene, cfg)
    return tracking_cost(traj.subsample(cfg.stride), ref, scene.n_agents, family.spatial_dim)


def fd_gradient(family: ModelFamily, u, y0, ref: Trajectory, scene: Scene, cfg: SimConfig, step=1e-6) -> np.ndarray:
    """Central differences of the full discrete cost, one parameter at a time."""
    if not step > 0:
        raise ValueError("step must be positive")
    u = np.asarray(u, dtype=float)
    g = np.empty(u.size)
    for i in range(u.size):
        up, dn = u.copy(), u.copy()
        up[i] += step
        dn[i] -= step
        g[i] = (cost(family, up, y0, ref, scene, cfg).value - cost(family, dn, y0, ref, scene, cfg).value) / (2 * step)
    return g
