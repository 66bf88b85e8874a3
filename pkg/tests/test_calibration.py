import json

import numpy as np
import pytest

from interactcal import dynamics as D
from interactcal.calibration import CalibrationError, batch_gradient, dataset_cost, run_calibration
from interactcal.data import SequenceSample, synth_generate
from interactcal.forces import SF_OPTIMUM
from interactcal.optim import NoiseSchedule


def _lwr_data(n, noise, seed=0):
    return synth_generate(D.LwrTraffic("linear"), [22.0, 5.0], n, (2, 4), noise, rng=np.random.default_rng(seed),
                          dt=0.04, nodes=11)


def test_zero_mismatch_without_noise_leaves_parameters_unchanged():
    data = _lwr_data(1, 0.0)
    res = run_calibration(data, D.LwrTraffic("linear"), [22.0, 5.0], dt=0.04, iterations=20,
                          sched=NoiseSchedule(eta1=0.0))
    assert np.array_equal(res.final_params, [22.0, 5.0])
    assert np.array_equal(res.best_params, [22.0, 5.0])


def test_zero_mismatch_with_noise_moves_only_by_noise():
    data = _lwr_data(1, 0.0)
    res = run_calibration(data, D.LwrTraffic("linear"), [22.0, 5.0], dt=0.04, iterations=5,
                          sched=NoiseSchedule(eta1=1.0, seed=4))
    assert not np.array_equal(res.final_params, [22.0, 5.0])
    # ADADELTA steps start near sqrt(eps), so five noisy steps stay tiny
    assert np.abs(res.final_params - [22.0, 5.0]).max() < 0.05


def test_two_runs_give_identical_histories():
    data = _lwr_data(12, 0.05)
    runs = [run_calibration(data, D.LwrTraffic("linear"), [30.0, 5.0], dt=0.04, batch_size=4, iterations=60,
                            sched=NoiseSchedule(eta1=0.0, seed=9)) for _ in range(2)]
    assert runs[0].history == runs[1].history
    assert np.array_equal(runs[0].best_params, runs[1].best_params)


def test_iterates_stay_admissible():
    fam = D.LwrTraffic("linear")
    data = _lwr_data(4, 0.05)
    seen = []
    run_calibration(data, fam, [30.0, 2.0], dt=0.04, iterations=40, sched=NoiseSchedule(eta1=50.0, seed=1),
                    callback=lambda k, u, c: seen.append(u.copy()))
    assert all(fam.admissible().contains(u) for u in seen)


def test_batch_gradient_matches_per_sequence_mean():
    fam, u = D.LwrTraffic("linear"), np.array([27.0, 4.0])
    data = _lwr_data(5, 0.05)
    grad, costs, bad = batch_gradient(fam, u, data, 0.04)
    singles = [batch_gradient(fam, u, [s], 0.04) for s in data]
    assert bad == 0
    assert np.allclose(grad, np.mean([g for g, _, _ in singles], axis=0), rtol=1e-12)
    assert np.allclose(costs, [c[0] for _, c, _ in singles], rtol=1e-12)


def _coincident_crowd_sample():
    t = np.arange(3) * 0.04
    state = np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0])
    return SequenceSample("crowd", t, np.tile(state, (3, 1)), ["a", "b"], destinations=np.ones((2, 2)))


def test_degenerate_sequences_are_skipped_and_all_degenerate_aborts():
    fam = D.SocialForceCrowd(None, SF_OPTIMUM)
    good = synth_generate(fam, SF_OPTIMUM.calibrated, 2, 2, 0.0, rng=np.random.default_rng(3), dt_data=0.04,
                          dt=0.04, nodes=3)
    grad, costs, bad = batch_gradient(fam, SF_OPTIMUM.calibrated, good + [_coincident_crowd_sample()], 0.04)
    assert bad == 1 and len(costs) == 2 and np.all(np.isfinite(grad))
    with pytest.raises(CalibrationError):
        run_calibration([_coincident_crowd_sample()], fam, SF_OPTIMUM.calibrated, dt=0.04, iterations=3)
    with pytest.raises(CalibrationError):
        dataset_cost(fam, SF_OPTIMUM.calibrated, [_coincident_crowd_sample()], 0.04)


def test_empty_dataset_rejected():
    with pytest.raises(CalibrationError):
        run_calibration([], D.LwrTraffic(), [30.0, 5.0], dt=0.04)


def test_checkpoint_contents(tmp_path):
    path = tmp_path / "ck.json"
    res = run_calibration(_lwr_data(3, 0.05), D.LwrTraffic("linear"), [30.0, 5.0], dt=0.04, iterations=10,
                          sched=NoiseSchedule(eta1=0.0), checkpoint_path=path, checkpoint_every=5)
    ck = json.loads(path.read_text())
    assert ck["iteration"] == 10
    assert ck["params"] == res.final_params.tolist()
    assert ck["best_params"] == res.best_params.tolist()
    assert ck["param_names"] == ["v0", "L"]
    assert set(ck["adadelta"]) >= {"eg2", "edx2", "k"}
    assert "rng_state" in ck
