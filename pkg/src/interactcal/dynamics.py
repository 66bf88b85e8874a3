"""Forward systems for traffic (first order, 1D) and crowds (second order, 2D).

Every model family exposes the right-hand side ``rhs(y, u, scene)`` of the
flattened state ``y`` together with the two pullbacks the discrete adjoint
needs: ``vjp_state`` (J_y^T w) and ``vjp_params`` (J_u^T w).

State layout: traffic ``(x_1..x_N)`` with ``x_{i+1}`` the car ahead of
``x_i``; crowd ``(x_1, .., x_N, v_1, .., v_N)`` with 2D entries flattened
row-major.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import nn
from .forces import (
    L_MIN,
    DegeneratePairError,
    Diagnostics,
    LwrParams,
    SocialForceParams,
    WallGeometry,
    lwr_derivatives,
    lwr_velocity,
    relaxation_force,
    relaxation_vjp,
    social_force_derivatives,
    social_pair_force,
    social_wall_derivatives,
)
from .optim import AdmissibleSet

MODEL_KINDS = ("traffic_lwr", "traffic_nn", "crowd_sf", "crowd_nn")


class IntegrationError(RuntimeError):
    def __init__(self, step, message="non-finite state"):
        super().__init__(f"{message} at step {step}")
        self.step = step


@dataclass(frozen=True)
class SimConfig:
    dt: float
    steps: int
    model: str
    stride: int = 1  # Euler steps per reference-data interval

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.steps < 1 or self.stride < 1:
            raise ValueError("steps and stride must be at least 1")
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model {self.model!r}")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (M + 1, state_dim)

    def subsample(self, stride: int) -> "Trajectory":
        return Trajectory(self.times[::stride], self.states[::stride])


@dataclass
class Scene:
    """Per-sequence data a model needs besides the state.

    ``groups`` labels agents belonging to independent sequences that are
    integrated together as one block system; agents only interact within
    their group. Traffic groups must be contiguous in the state.
    """

    n_agents: int
    destinations: np.ndarray | None = None
    groups: np.ndarray | None = None

    def __post_init__(self):
        g = np.zeros(self.n_agents, dtype=int) if self.groups is None else np.asarray(self.groups, dtype=int)
        if g.shape != (self.n_agents,):
            raise ValueError("one group label per agent is required")
        self.groups = g
        # traffic: agents with a car ahead in their own group
        same = g[1:] == g[:-1]
        self.followers = np.flatnonzero(same)
        self.leaders = np.ones(self.n_agents, dtype=bool)
        self.leaders[self.followers] = False
        i, j = np.nonzero(~np.eye(self.n_agents, dtype=bool) & (g[:, None] == g[None, :]))
        self.pairs = (i, j)


def traffic_rhs(positions, velocity_fn, v0_lead, scene: Scene | None = None):
    """Follower speeds from the gap to the car ahead; leaders drive at v0_lead."""
    x = np.asarray(positions, dtype=float)
    scene = scene or Scene(x.size)
    out = np.full_like(x, v0_lead)
    f = scene.followers
    if f.size:
        out[f] = velocity_fn(x[f + 1] - x[f])
    return out


def euler_integrate(y0, rhs, cfg: SimConfig) -> Trajectory:
    """Explicit Euler: y_{n+1} = y_n + dt F(y_n), every step stored."""
    y0 = np.asarray(y0, dtype=float)
    states = np.empty((cfg.steps + 1, y0.size))
    states[0] = y0
    y = y0
    for n in range(cfg.steps):
        y = y + cfg.dt * rhs(y)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(n + 1)
        states[n + 1] = y
    return Trajectory(cfg.dt * np.arange(cfg.steps + 1), states)


class ModelFamily:
    """Common interface of the four model families.

    Subclasses implement ``rhs(y, u, scene)`` and ``vjp(y, u, scene, w)``
    returning (J_y^T w, J_u^T w).
    """

    kind: str
    spatial_dim: int
    order: int  # 1: positions only, 2: positions and velocities

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def state_dim(self, n_agents: int) -> int:
        return n_agents * self.spatial_dim * self.order

    def observed_dim(self, n_agents: int) -> int:
        """Leading state components compared against reference positions."""
        return n_agents * self.spatial_dim

    def simulate(self, y0, u, scene: Scene, cfg: SimConfig) -> Trajectory:
        u = np.asarray(u, dtype=float)
        return euler_integrate(y0, lambda y: self.rhs(y, u, scene), cfg)

    def vjp_state(self, y, u, scene, w):
        return self.vjp(y, u, scene, w)[0]

    def vjp_params(self, y, u, scene, w):
        return self.vjp(y, u, scene, w)[1]


class LwrTraffic(ModelFamily):
    """Follower-leader LWR model; parameters (v0, L)."""

    spatial_dim = 1
    order = 1
    kind = "traffic_lwr"

    def __init__(self, variant="log", L_min=L_MIN):
        LwrParams(0.0, 1.0, variant)
        self.variant = variant
        self.L_min = L_min
        self.param_names = ["v0", "L"]
        self.diagnostics = Diagnostics()

    @property
    def label(self):
        return "lwr_" + self.variant

    def admissible(self) -> AdmissibleSet:
        return AdmissibleSet.lwr(self.L_min)

    def initial_params(self, rng=None):
        return np.array([30.0, 5.0])

    def _p(self, u):
        return LwrParams(float(u[0]), float(u[1]), self.variant)

    def rhs(self, y, u, scene=None):
        p = self._p(u)
        return traffic_rhs(y, lambda gap: lwr_velocity(gap, p, self.diagnostics), p.v0, scene)

    def vjp(self, y, u, scene, w):
        scene = scene or Scene(y.size)
        gs = np.zeros_like(w)
        gp = np.array([w[scene.leaders].sum(), 0.0])
        f = scene.followers
        if f.size:
            d_gap, d_v0, d_L = lwr_derivatives(y[f + 1] - y[f], self._p(u))
            wf = w[f]
            c = wf * d_gap
            gs[f] -= c
            gs[f + 1] += c
            gp[0] += wf @ d_v0
            gp[1] = wf @ d_L
        return gs, gp


class NNTraffic(ModelFamily):
    """Follower speed from a 1-in/1-out network of the raw gap; parameters (v0, weights)."""

    spatial_dim = 1
    order = 1
    kind = "traffic_nn"

    def __init__(self, hidden=(4,)):
        self.spec = nn.NetSpec((1, *hidden, 1))
        self.param_names = ["v0"] + [f"w{i}" for i in range(self.spec.param_count)]

    @property
    def label(self):
        return "nn_" + "_".join(str(h) for h in self.spec.layer_sizes[1:-1])

    def admissible(self) -> AdmissibleSet:
        return AdmissibleSet.nonneg(1).concat(AdmissibleSet.box_pm1(self.spec.param_count))

    def initial_params(self, rng):
        return np.concatenate([[30.0], rng.uniform(-1.0, 1.0, self.spec.param_count)])

    def net(self, u):
        return nn.NetParams(self.spec, u[1:])

    def rhs(self, y, u, scene=None):
        net = self.net(u)

        def velocity(gap):
            out, _ = nn.forward(net, gap[:, None])
            return out[:, 0]

        return traffic_rhs(y, velocity, u[0], scene)

    def vjp(self, y, u, scene, w):
        scene = scene or Scene(y.size)
        gs = np.zeros_like(w)
        gp = np.zeros(self.n_params)
        gp[0] = w[scene.leaders].sum()
        f = scene.followers
        if f.size:
            net = self.net(u)
            _, trace = nn.forward(net, (y[f + 1] - y[f])[:, None])
            cot = w[f, None]
            c = nn.vjp_input(net, trace, cot)[:, 0]
            gs[f] -= c
            gs[f + 1] += c
            gp[1:] = nn.grad_params_transposed(net, trace, cot)
        return gs, gp


class _Crowd(ModelFamily):
    spatial_dim = 2
    order = 2

    def __init__(self, walls: WallGeometry | None, fixed: SocialForceParams):
        self.walls = walls
        self.fixed = fixed

    def split(self, y, n):
        return y[: 2 * n].reshape(n, 2), y[2 * n:].reshape(n, 2)

    def _group_sizes(self, scene):
        return np.bincount(scene.groups)[scene.groups][:, None].astype(float)

    def rhs(self, y, u, scene: Scene):
        n = scene.n_agents
        x, v = self.split(y, n)
        if scene.destinations is None:
            acc = np.zeros_like(v)
        else:
            acc = relaxation_force(x, v, scene.destinations, self.fixed.tau)
        i, j = scene.pairs
        if i.size:
            f = self.pair_forces(x[i] - x[j], v[i] - v[j], u)
            scale = 1.0 / (self._group_sizes(scene) * self.fixed.m)
            np.add.at(acc, i, f * scale[i])
        if self.walls is not None:
            acc += self.wall_forces(x, v, u).sum(axis=1) / (self.walls.count * self.fixed.m)
        return np.concatenate([v.ravel(), acc.ravel()])

    def vjp(self, y, u, scene: Scene, w):
        n = scene.n_agents
        x, v = self.split(y, n)
        wx, wv = self.split(w, n)
        gx = np.zeros((n, 2))
        gv = wx.copy()
        gp = np.zeros(self.n_params)
        if scene.destinations is not None:
            rx, rv = relaxation_vjp(x, v, scene.destinations, self.fixed.tau, wv)
            gx += rx
            gv += rv
        i, j = scene.pairs
        if i.size:
            scale = 1.0 / (self._group_sizes(scene) * self.fixed.m)
            cdx, cdv, cp = self.pair_vjp(x[i] - x[j], v[i] - v[j], u, wv[i] * scale[i])
            np.add.at(gx, i, cdx)
            np.add.at(gx, j, -cdx)
            np.add.at(gv, i, cdv)
            np.add.at(gv, j, -cdv)
            gp += cp
        if self.walls is not None:
            cot = np.broadcast_to(wv[:, None, :] / (self.walls.count * self.fixed.m), (n, self.walls.count, 2))
            cdx, cdv, cp = self.wall_vjp(x, v, u, cot)
            gx += cdx.sum(axis=1)
            gv += cdv.sum(axis=1)
            gp += cp
        return np.concatenate([gx.ravel(), gv.ravel()]), gp


class SocialForceCrowd(_Crowd):
    """Social force model with walls; calibrated parameters (A, k, kappa)."""

    kind = "crowd_sf"
    label = "sf"

    def __init__(self, walls=None, fixed: SocialForceParams | None = None):
        super().__init__(walls, fixed or SocialForceParams(0.0, 0.0, 0.0))
        self.param_names = ["A", "k", "kappa"]

    def admissible(self) -> AdmissibleSet:
        return AdmissibleSet.nonneg(3)

    def initial_params(self, rng):
        return rng.uniform(0.0, 50.0, 3)

    def params(self, u) -> SocialForceParams:
        return self.fixed.with_calibrated(u)

    def pair_forces(self, dx, dv, u):
        return social_pair_force(dx, dv, self.params(u), 2 * self.fixed.r)

    def wall_forces(self, x, v, u):
        """Per (agent, wall point) force terms, shape (N, N_wall, 2)."""
        p = self.params(u)
        dx = x[:, None, :] - self.walls.points
        d = np.linalg.norm(dx, axis=-1)
        if np.any(d == 0.0):
            raise DegeneratePairError("agent coincides with a wall point")
        nrm = dx / d[..., None]
        y = p.r - d
        h = np.maximum(y, 0.0)
        s = v @ self.walls.tangents.T
        normal = p.A * np.exp(y / p.B) + p.k * h
        return normal[..., None] * nrm + (p.kappa * h * s)[..., None] * self.walls.tangents

    def pair_vjp(self, dx, dv, u, cot):
        part = social_force_derivatives(dx, dv, self.params(u), 2 * self.fixed.r)
        return (
            np.einsum("pi,pij->pj", cot, part.d_dx),
            np.einsum("pi,pij->pj", cot, part.d_dv),
            np.einsum("pi,pik->k", cot, part.d_params),
        )

    def wall_vjp(self, x, v, u, cot):
        part = social_wall_derivatives(x, v, self.walls, self.params(u))
        return (
            np.einsum("awi,awij->awj", cot, part.d_dx),
            np.einsum("awi,awij->awj", cot, part.d_dv),
            np.einsum("awi,awik->k", cot, part.d_params),
        )


class NNCrowd(_Crowd):
    """Two networks of (relative position, relative velocity): pedestrians and walls.

    Parameters are the pedestrian-network weights followed by the wall-network
    weights. Self pairs are excluded from the pedestrian sum.
    """

    kind = "crowd_nn"

    def __init__(self, walls=None, hidden=(4,), fixed: SocialForceParams | None = None):
        super().__init__(walls, fixed or SocialForceParams(0.0, 0.0, 0.0))
        self.spec = nn.NetSpec((4, *hidden, 2))
        k = self.spec.param_count
        self.param_names = [f"int{i}" for i in range(k)] + [f"wall{i}" for i in range(k)]

    @property
    def label(self):
        return "crowd_nn_" + "_".join(str(h) for h in self.spec.layer_sizes[1:-1])

    def admissible(self) -> AdmissibleSet:
        return AdmissibleSet.box_pm1(self.n_params)

    def initial_params(self, rng):
        return rng.uniform(-1.0, 1.0, self.n_params)

    def nets(self, u):
        k = self.spec.param_count
        return nn.NetParams(self.spec, u[:k]), nn.NetParams(self.spec, u[k:])

    def pair_forces(self, dx, dv, u):
        out, _ = nn.forward(self.nets(u)[0], np.hstack([dx, dv]))
        return out

    def _wall_inputs(self, x, v):
        dx = x[:, None, :] - self.walls.points
        vv = np.broadcast_to(v[:, None, :], dx.shape)
        return np.concatenate([dx, vv], axis=-1).reshape(-1, 4)

    def wall_forces(self, x, v, u):
        out, _ = nn.forward(self.nets(u)[1], self._wall_inputs(x, v))
        return out.reshape(x.shape[0], self.walls.count, 2)

    def pair_vjp(self, dx, dv, u, cot):
        net = self.nets(u)[0]
        _, trace = nn.forward(net, np.hstack([dx, dv]))
        g = nn.vjp_input(net, trace, cot)
        gp = np.zeros(self.n_params)
        gp[: self.spec.param_count] = nn.grad_params_transposed(net, trace, cot)
        return g[:, :2], g[:, 2:], gp

    def wall_vjp(self, x, v, u, cot):
        net = self.nets(u)[1]
        _, trace = nn.forward(net, self._wall_inputs(x, v))
        flat = np.reshape(cot, (-1, 2))
        g = nn.vjp_input(net, trace, flat).reshape(x.shape[0], self.walls.count, 4)
        gp = np.zeros(self.n_params)
        gp[self.spec.param_count:] = nn.grad_params_transposed(net, trace, flat)
        return g[..., :2], g[..., 2:], gp


def crowd_rhs(state_positions, state_velocities, family: _Crowd, u, destinations=None):
    """Accelerations of every pedestrian; returns (dx, dv) each of shape (N, 2)."""
    x = np.asarray(state_positions, dtype=float)
    v = np.asarray(state_velocities, dtype=float)
    y = np.concatenate([x.ravel(), v.ravel()])
    out = family.rhs(y, np.asarray(u, dtype=float), Scene(x.shape[0], destinations))
    return family.split(out, x.shape[0])


def make_family(kind: str, *, variant="log", hidden=(4,), walls=None, fixed=None) -> ModelFamily:
    if kind == "traffic_lwr":
        return LwrTraffic(variant)
    if kind == "traffic_nn":
        return NNTraffic(tuple(hidden))
    if kind == "crowd_sf":
        return SocialForceCrowd(walls, fixed)
    if kind == "crowd_nn":
        return NNCrowd(walls, tuple(hidden), fixed)
    raise ValueError(f"unknown model {kind!r}")


def write_trajectory_csv(path, traj: Trajectory, family: ModelFamily, n_agents: int, agent_ids=None):
    """Header t,agent_id,x for traffic and t,agent_id,x,y,vx,vy for crowds."""
    ids = list(agent_ids) if agent_ids is not None else list(range(n_agents))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if family.spatial_dim == 1:
            w.writerow(["t", "agent_id", "x"])
            for t, y in zip(traj.times, traj.states):
                for a, xi in zip(ids, y):
                    w.writerow([repr(float(t)), a, repr(float(xi))])
        else:
            w.writerow(["t", "agent_id", "x", "y", "vx", "vy"])
            for t, y in zip(traj.times, traj.states):
                x = y[: 2 * n_agents].reshape(n_agents, 2)
                v = y[2 * n_agents:].reshape(n_agents, 2)
                for a, xi, vi in zip(ids, x, v):
                    w.writerow([repr(float(t)), a, *(repr(float(c)) for c in (*xi, *vi))])


def read_trajectory_csv(path) -> tuple[Trajectory, list]:
    """Inverse of :func:`write_trajectory_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    crowd = header == ["t", "agent_id", "x", "y", "vx", "vy"]
    if not crowd and header != ["t", "agent_id", "x"]:
        raise ValueError(f"{path}: unrecognised trajectory header {header}")
    ids = []
    for r in rows:
        if r[1] not in ids:
            ids.append(r[1])
        else:
            break
    n = len(ids)
    times = np.array([float(r[0]) for r in rows[::n]])
    if crowd:
        vals = np.array([[float(c) for c in r[2:]] for r in rows]).reshape(len(times), n, 4)
        states = np.concatenate([vals[..., :2].reshape(len(times), -1), vals[..., 2:].reshape(len(times), -1)], axis=1)
    else:
        states = np.array([float(r[2]) for r in rows]).reshape(len(times), n)
    return Trajectory(times, states), ids
