"""Adjoint gradients against central finite differences on random small instances."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import adjoint
from .dynamics import LwrTraffic, ModelFamily, NNCrowd, NNTraffic, Scene, SimConfig, SocialForceCrowd, Trajectory
from .optim import project
from .forces import SocialForceParams, WallGeometry


@dataclass
class GradcheckRow:
    family: str
    instance: int
    param_index: int
    adjoint_grad: float
    fd_grad: float
    rel_err: float
    fd_floor: float  # components below this are compared absolutely


def fd_resolution(cost_value, step, operations, tol=1e-5):
    """Gradient magnitude below which central differences cannot resolve a
    relative error of ``tol``.

    Round-off in the cost grows at worst linearly with the number of
    accumulated state updates, so two cost evaluations differ by up to about
    operations * eps * |cost|, which the difference quotient divides by the step.
    """
    return operations * np.finfo(float).eps * abs(cost_value) / (step * tol)


def relative_error(adj, fd, floor=0.0):
    """|adj - fd| / max(|adj|, |fd|, floor); components under ``floor`` are in
    effect compared absolutely at tol * floor."""
    adj = np.asarray(adj, dtype=float)
    fd = np.asarray(fd, dtype=float)
    scale = np.maximum(np.maximum(np.abs(adj), np.abs(fd)), floor)
    scale = np.where(scale > 0, scale, 1.0)
    return np.abs(adj - fd) / scale


def check_walls() -> WallGeometry:
    return WallGeometry.corridor(length=2.0, width=1.2, spacing=0.3)


def default_families() -> list[ModelFamily]:
    """Every family covered by the exactness check: LWR log/linear, traffic
    networks with 2, 4 and 10 hidden neurons, social force and the 4-4-2 crowd network."""
    walls = check_walls()
    fixed = SocialForceParams(0.0, 0.0, 0.0)
    return [
        LwrTraffic("log"),
        LwrTraffic("linear"),
        NNTraffic((2,)),
        NNTraffic((4,)),
        NNTraffic((10,)),
        SocialForceCrowd(walls, fixed),
        NNCrowd(walls, (4,), fixed),
    ]


def random_params(family: ModelFamily, rng) -> np.ndarray:
    if family.kind == "traffic_lwr":
        return np.array([rng.uniform(15.0, 35.0), rng.uniform(2.5, 7.0)])
    if family.kind == "traffic_nn":
        return np.concatenate([[rng.uniform(15.0, 35.0)], rng.uniform(-1.0, 1.0, family.n_params - 1)])
    if family.kind == "crowd_sf":
        return rng.uniform([0.2, 1.0, 1.0], [2.0, 10.0, 10.0])
    return rng.uniform(-1.0, 1.0, family.n_params)


def random_instance(family: ModelFamily, u, rng, n_agents: int, nodes: int, noise=0.3, spread=0.1):
    """Initial state, scene, fine-grid config and a noisy reference simulated
    at a perturbation of ``u`` (relative size ``spread``).

    Traffic uses a 0.2 s data grid with five Euler steps per interval, crowds
    a 0.04 s grid with one step per interval.
    """
    if family.spatial_dim == 1:
        gaps = rng.uniform(8.0, 25.0, n_agents - 1)
        y0 = np.concatenate([[0.0], np.cumsum(gaps)])
        scene = Scene(n_agents)
        dt, stride = 0.04, 5
    else:
        x = rng.uniform(-0.6, 0.6, (n_agents, 2))
        v = rng.normal(0.0, 1.0, (n_agents, 2))
        y0 = np.concatenate([x.ravel(), v.ravel()])
        scene = Scene(n_agents, x + rng.normal(0.0, 2.0, (n_agents, 2)))
        dt, stride = 0.04, 1
    cfg = SimConfig(dt, (nodes - 1) * stride, family.kind, stride)
    u_ref = project(u * (1.0 + spread * rng.uniform(-1.0, 1.0, u.size)), family.admissible())
    traj = family.simulate(y0, u_ref, scene, cfg).subsample(stride)
    states = traj.states + rng.normal(0.0, noise, traj.states.shape)
    states[0] = y0
    return y0, scene, cfg, Trajectory(traj.times, states)


class CorruptedJacobian(ModelFamily):
    """Wraps a family and perturbs its state vector-Jacobian product (negative control)."""

    def __init__(self, inner: ModelFamily, scale=1.01):
        self.inner = inner
        self.scale = scale

    def __getattr__(self, name):
        return getattr(self.inner, name)

    @property
    def n_params(self):
        return self.inner.n_params

    def observed_dim(self, n_agents):
        return self.inner.observed_dim(n_agents)

    def simulate(self, y0, u, scene, cfg):
        return self.inner.simulate(y0, u, scene, cfg)

    def vjp(self, y, u, scene, w):
        gs, gp = self.inner.vjp(y, u, scene, w)
        return self.scale * gs, gp


def family_name(family: ModelFamily) -> str:
    return getattr(family, "label", family.kind)


def run_gradcheck(families, instances, rng, agents=(2, 4), nodes=(3, 25), step=1e-6, corrupt=False):
    """One row per (instance, parameter) for every family."""
    rows = []
    for family in families:
        probe = CorruptedJacobian(family) if corrupt else family
        for i in range(instances):
            n = int(rng.integers(agents[0], agents[1] + 1))
            m = int(rng.integers(nodes[0], nodes[1] + 1))
            u = random_params(family, rng)
            y0, scene, cfg, ref = random_instance(family, u, rng, n, m)
            res = adjoint.cost_and_gradient(probe, u, y0, ref, scene, cfg)
            floor = fd_resolution(res.cost.value, step, (cfg.steps + 1) * y0.size)
            fd = adjoint.fd_gradient(family, u, y0, ref, scene, cfg, step)
            rel = relative_error(res.grad, fd, floor)
            adj = res.grad
            name = family_name(family)
            rows.extend(GradcheckRow(name, i, j, float(a), float(f), float(r), float(floor))
                        for j, (a, f, r) in enumerate(zip(adj, fd, rel)))
    return rows


def write_report(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["family", "instance", "param_index", "adjoint_grad", "fd_grad", "rel_err", "fd_floor"])
        for r in rows:
            w.writerow([r.family, r.instance, r.param_index, repr(r.adjoint_grad), repr(r.fd_grad), repr(r.rel_err),
                        repr(r.fd_floor)])
