import numpy as np
import pytest

from interactcal import adjoint as A
from interactcal import dynamics as D
from interactcal.calibration import sequence_gradient
from interactcal.data import SequenceSample, merge_samples
from interactcal.forces import SF_OPTIMUM, WallGeometry


class ScalarGrowth(D.ModelFamily):
    """y' = u * y with a single scalar state and parameter."""

    kind = "traffic_lwr"
    spatial_dim = 1
    order = 1
    param_names = ["u"]

    def rhs(self, y, u, scene=None):
        return u[0] * y

    def vjp(self, y, u, scene, w):
        return u[0] * w, np.array([y @ w])


def test_cost_of_matching_trajectories_is_zero():
    t = np.arange(4) * 0.2
    traj = D.Trajectory(t, np.random.default_rng(0).normal(size=(4, 3)))
    assert A.tracking_cost(traj, traj, 3).value == 0.0


def test_single_node_rectangle_rule():
    traj = D.Trajectory(np.array([0.0, 0.2]), np.array([[1.0], [7.0]]))
    ref = D.Trajectory(np.array([0.0, 0.2]), np.array([[0.0], [-3.0]]))
    assert A.tracking_cost(traj, ref, 1).value == pytest.approx(0.1, rel=1e-15)


def test_cost_invariant_under_consistent_relabeling(rng):
    t = np.arange(6) * 0.2
    x, z = rng.normal(size=(2, 6, 4))
    perm = [2, 0, 3, 1]
    a = A.tracking_cost(D.Trajectory(t, x), D.Trajectory(t, z), 4)
    b = A.tracking_cost(D.Trajectory(t, x[:, perm]), D.Trajectory(t, z[:, perm]), 4)
    assert b.value == pytest.approx(a.value, rel=1e-14)
    assert np.allclose(b.per_agent, a.per_agent[perm])


def test_grid_mismatch_rejected():
    a = D.Trajectory(np.arange(3) * 0.2, np.zeros((3, 1)))
    b = D.Trajectory(np.arange(4) * 0.2, np.zeros((4, 1)))
    with pytest.raises(ValueError):
        A.tracking_cost(a, b, 1)


def _lwr_instance(rng, n=3, nodes=6, stride=5):
    fam = D.LwrTraffic("log")
    u = np.array([24.0, 5.5])
    y0 = np.cumsum(rng.uniform(10, 20, n))
    cfg = D.SimConfig(0.04, (nodes - 1) * stride, fam.kind, stride)
    return fam, u, y0, D.Scene(n), cfg


def test_zero_mismatch_gives_zero_costate_and_gradient(rng):
    fam, u, y0, scene, cfg = _lwr_instance(rng)
    traj = fam.simulate(y0, u, scene, cfg)
    ref = traj.subsample(cfg.stride)
    lam = A.backward_sweep(traj, ref, fam, u, scene, cfg)
    assert np.array_equal(lam.lambdas, np.zeros_like(lam.lambdas))
    res = A.reduced_gradient(traj, ref, lam, fam, u, scene, cfg)
    assert np.array_equal(res.grad, [0.0, 0.0])
    assert np.allclose(A.fd_gradient(fam, u, y0, ref, scene, cfg), 0.0, atol=1e-10)


def test_terminal_costate_is_zero_and_fused_pass_agrees(rng):
    fam, u, y0, scene, cfg = _lwr_instance(rng)
    ref = D.Trajectory(np.arange(6) * 0.2, rng.normal(size=(6, 3)) + y0)
    traj = fam.simulate(y0, u, scene, cfg)
    lam = A.backward_sweep(traj, ref, fam, u, scene, cfg)
    assert np.array_equal(lam.lambdas[-1], np.zeros(3))
    two_pass = A.reduced_gradient(traj, ref, lam, fam, u, scene, cfg)
    fused = A.cost_and_gradient(fam, u, y0, ref, scene, cfg)
    assert np.allclose(fused.grad, two_pass.grad, rtol=1e-13)
    assert fused.cost.value == two_pass.cost.value


def test_hand_expanded_scalar_growth_two_nodes():
    fam = ScalarGrowth()
    dt, u, y0 = 0.1, 0.7, 2.0
    z = np.array([[1.5], [2.5], [9.0]])
    ref = D.Trajectory(np.array([0.0, 0.1, 0.2]), z)
    cfg = D.SimConfig(dt, 2, fam.kind)
    res = A.cost_and_gradient(fam, [u], [y0], ref, D.Scene(1), cfg)
    y1 = y0 * (1 + dt * u)
    assert res.cost.value == pytest.approx(0.5 * dt * ((y0 - 1.5) ** 2 + (y1 - 2.5) ** 2), rel=1e-15)
    # only the node-1 mismatch depends on u, through y1 = y0 (1 + dt u)
    assert res.grad[0] == pytest.approx(dt * (y1 - 2.5) * y0 * dt, rel=1e-14)


def test_leader_row_has_no_state_coupling(rng):
    fam, u, y0, scene, _ = _lwr_instance(rng)
    w = np.zeros(3)
    w[-1] = 1.0
    assert np.array_equal(fam.vjp_state(y0, u, scene, w), np.zeros(3))


def test_gradient_linear_in_mismatch_scale(rng):
    fam, u, y0, scene, cfg = _lwr_instance(rng)
    x = fam.simulate(y0, u, scene, cfg).subsample(cfg.stride)
    z = x.states + rng.normal(size=x.states.shape)
    base = A.cost_and_gradient(fam, u, y0, D.Trajectory(x.times, z), scene, cfg).grad
    for alpha in (0.5, 3.0):
        ref = D.Trajectory(x.times, x.states + alpha * (z - x.states))
        assert np.allclose(A.cost_and_gradient(fam, u, y0, ref, scene, cfg).grad, alpha * base, rtol=1e-10)


def test_fd_gradient_on_quadratic_drift():
    # a lone leader drifts at v0, so the cost is quadratic in v0 and independent of L
    fam = D.LwrTraffic("linear")
    dt, stride, nodes, y0 = 0.04, 5, 6, 1.0
    z = np.array([0.0, 3.0, 8.0, 12.0, 15.0, 21.0])
    ref = D.Trajectory(np.arange(nodes) * dt * stride, z[:, None])
    cfg = D.SimConfig(dt, (nodes - 1) * stride, fam.kind, stride)
    v0 = 20.0
    t = ref.times[:-1]
    closed = dt * stride * np.sum((y0 + v0 * t - z[:-1]) * t)
    fd = A.fd_gradient(fam, [v0, 5.0], [y0], ref, D.Scene(1), cfg)
    assert fd[0] == pytest.approx(closed, rel=1e-8)
    assert fd[1] == 0.0
    exact = A.cost_and_gradient(fam, [v0, 5.0], [y0], ref, D.Scene(1), cfg).grad
    assert exact[0] == pytest.approx(closed, rel=1e-12)
    with pytest.raises(ValueError):
        A.fd_gradient(fam, [v0, 5.0], [y0], ref, D.Scene(1), cfg, step=0.0)


@pytest.mark.parametrize("kind", ["traffic_lwr", "traffic_nn", "crowd_sf", "crowd_nn"])
def test_adjoint_matches_finite_differences(kind, rng):
    walls = WallGeometry.corridor(2.0, 1.2, 0.3)
    fam = D.make_family(kind, walls=walls, fixed=SF_OPTIMUM)
    if fam.spatial_dim == 1:
        u = np.array([25.0, 4.0]) if kind == "traffic_lwr" else fam.initial_params(rng)
        y0 = np.cumsum(rng.uniform(10, 20, 3))
        scene = D.Scene(3)
        cfg = D.SimConfig(0.04, 20, kind, 5)
        nodes = 5
    else:
        u = np.array([0.8, 5.0, 4.0]) if kind == "crowd_sf" else fam.initial_params(rng)
        y0 = np.concatenate([[-0.3, 0.1, 0.0, -0.15, 0.3, 0.2], rng.normal(scale=0.5, size=6)])
        scene = D.Scene(3, rng.uniform(-1, 1, (3, 2)))
        cfg = D.SimConfig(0.04, 8, kind, 1)
        nodes = 9
    ref_states = fam.simulate(y0, u * 1.05, scene, cfg).subsample(cfg.stride).states
    ref = D.Trajectory(np.arange(nodes) * cfg.dt * cfg.stride, ref_states)
    exact = A.cost_and_gradient(fam, u, y0, ref, scene, cfg).grad
    fd = A.fd_gradient(fam, u, y0, ref, scene, cfg)
    scale = np.abs(fd).max()
    assert np.abs(exact - fd).max() <= 1e-6 * scale


def _traffic_sample(rng, n, nodes, offset):
    fam = D.LwrTraffic("linear")
    y0 = offset + np.cumsum(rng.uniform(10, 20, n))
    cfg = D.SimConfig(0.04, (nodes - 1) * 5, fam.kind, 5)
    states = fam.simulate(y0, [21.0, 5.0], D.Scene(n), cfg).subsample(5).states
    states = states + rng.normal(scale=0.1, size=states.shape)
    return SequenceSample("traffic", np.arange(nodes) * 0.2, states, [f"{offset}:{i}" for i in range(n)])


def test_merged_block_gradient_is_sum_of_sequence_gradients(rng):
    fam, u = D.LwrTraffic("linear"), np.array([26.0, 4.5])
    samples = [_traffic_sample(rng, n, 7, 100.0 * k) for k, n in enumerate((2, 3, 4))]
    parts = [sequence_gradient(fam, u, s, 0.04) for s in samples]
    merged = sequence_gradient(fam, u, merge_samples(samples), 0.04)
    assert np.allclose(merged.grad, sum(p.grad for p in parts), rtol=1e-12)
    assert merged.cost.value == pytest.approx(sum(p.cost.value for p in parts), rel=1e-13)
