"""Mini-batch stochastic descent over a collection of reference sequences."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import adjoint
from .data import SequenceSample, merge_samples
from .dynamics import IntegrationError, ModelFamily
from .forces import DegeneratePairError
from .optim import AdadeltaState, AdmissibleSet, NoiseSchedule, adadelta_step, noisy_gradient, project

log = logging.getLogger(__name__)


class CalibrationError(RuntimeError):
    pass


_SKIPPABLE = (DegeneratePairError, IntegrationError, FloatingPointError)


def sequence_gradient(family: ModelFamily, u, sample: SequenceSample, dt: float) -> adjoint.GradientResult:
    cfg = sample.sim_config(family, dt)
    return adjoint.cost_and_gradient(family, u, sample.initial_state, sample.reference, sample.scene, cfg)


def sequence_cost(family: ModelFamily, u, sample: SequenceSample, dt: float) -> float:
    cfg = sample.sim_config(family, dt)
    return adjoint.cost(family, u, sample.initial_state, sample.reference, sample.scene, cfg).value


def dataset_cost(family: ModelFamily, u, samples, dt: float, threads: int = 1) -> tuple[float, list]:
    """Mean cost over all sequences plus the per-sequence values (None if degenerate)."""

    def one(s):
        try:
            return sequence_cost(family, u, s, dt)
        except _SKIPPABLE:
            return None

    per = _map(one, samples, threads)
    ok = [c for c in per if c is not None]
    if not ok:
        raise CalibrationError("every sequence is degenerate under these parameters")
    return float(np.mean(ok)), per


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def batch_gradient(family: ModelFamily, u, batch, dt, threads=1):
    """Mean reduced gradient over a batch, the per-sequence costs and the number
    of degenerate sequences skipped.

    Sequences sharing a time grid are integrated together as one block
    system; a failing block is retried sequence by sequence.
    """
    blocks: dict = {}
    for s in batch:
        blocks.setdefault((len(s.times), round(s.dt, 12)), []).append(s)

    def run_block(group):
        try:
            merged = merge_samples(group) if len(group) > 1 else group[0]
            r = sequence_gradient(family, u, merged, dt)
            return r.grad, [float(c) for c in _group_costs(r.cost.per_agent, merged)], 0
        except _SKIPPABLE:
            if len(group) == 1:
                return np.zeros(u.size), [], 1
        g, costs, bad = np.zeros(u.size), [], 0
        for s in group:
            gi, ci, bi = run_block([s])
            g += gi
            costs += ci
            bad += bi
        return g, costs, bad

    grad, costs, bad = np.zeros(u.size), [], 0
    for g, c, b in _map(run_block, list(blocks.values()), threads):
        grad += g
        costs += c
        bad += b
    if costs:
        grad /= len(costs)
    return grad, costs, bad


def _group_costs(per_agent, sample):
    if sample.groups is None:
        return [per_agent.sum()]
    return np.bincount(sample.groups, weights=per_agent)


@dataclass
class CalibrationResult:
    best_params: np.ndarray
    best_cost: float
    history: list  # per-iteration mean batch cost
    final_params: np.ndarray
    state: AdadeltaState
    skipped: int = 0
    evaluations: list = field(default_factory=list)  # (iteration, full cost)


def _checkpoint(path, family, u, state, k, rng, best_u, best_cost):
    payload = {
        "schema_version": 1,
        "model": family.kind,
        "label": getattr(family, "label", family.kind),
        "param_names": list(family.param_names),
        "params": np.asarray(u).tolist(),
        "best_params": np.asarray(best_u).tolist(),
        "best_cost": best_cost,
        "iteration": k,
        "adadelta": state.to_dict(),
        "rng_state": rng.bit_generator.state,
    }
    spec = getattr(family, "spec", None)
    if spec is not None:
        payload["layer_sizes"] = list(spec.layer_sizes)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def run_calibration(
    dataset: list[SequenceSample],
    family: ModelFamily,
    init,
    *,
    dt: float,
    batch_size: int = 16,
    iterations: int = 2000,
    sched: NoiseSchedule = NoiseSchedule(),
    admissible: AdmissibleSet | None = None,
    rho: float = 0.95,
    eps: float = 1e-6,
    eval_every: int = 10,
    threads: int = 1,
    checkpoint_path=None,
    checkpoint_every: int = 0,
    callback=None,
) -> CalibrationResult:
    """Per iteration: draw a batch without replacement (reshuffled each epoch),
    average the reduced gradients, add annealed noise, take an ADADELTA step
    and project. The full-dataset cost is evaluated every ``eval_every``
    iterations and after the last one; the best evaluated iterate is returned.
    """
    if not dataset:
        raise CalibrationError("no sequences to calibrate on")
    admissible = admissible or family.admissible()
    rng = sched.rng()
    u = project(np.asarray(init, dtype=float), admissible)
    state = AdadeltaState.zeros(u.size, rho, eps)
    batch_size = max(1, min(batch_size, len(dataset)))

    best_u, best_cost = u.copy(), np.inf
    history, evaluations = [], []
    skipped = 0
    order, pos = rng.permutation(len(dataset)), 0

    def evaluate(k):
        nonlocal best_u, best_cost
        try:
            c, _ = dataset_cost(family, u, dataset, dt, threads)
        except CalibrationError:
            return
        evaluations.append((k, c))
        if c < best_cost:
            best_cost, best_u = c, u.copy()

    evaluate(0)
    for k in range(iterations):
        if pos >= len(order):
            order, pos = rng.permutation(len(dataset)), 0
        batch = [dataset[i] for i in order[pos:pos + batch_size]]
        pos += batch_size

        grad, costs, bad = batch_gradient(family, u, batch, dt, threads)
        skipped += bad
        if not costs:
            if skipped >= len(dataset) and not np.isfinite(best_cost):
                raise CalibrationError(f"all sequences degenerate (skipped {skipped})")
            history.append(float("nan"))
            continue
        history.append(float(np.mean(costs)))

        grad = noisy_gradient(grad, sched, state.k, rng)
        step, state = adadelta_step(state, grad)
        u = project(u + step, admissible)

        if (eval_every and (k + 1) % eval_every == 0) or k + 1 == iterations:
            evaluate(k + 1)
        if checkpoint_path and checkpoint_every and (k + 1) % checkpoint_every == 0:
            _checkpoint(checkpoint_path, family, u, state, k + 1, rng, best_u, best_cost)
        if callback is not None:
            callback(k, u, history[-1])

    if not np.isfinite(best_cost):
        raise CalibrationError("no admissible iterate produced a finite dataset cost")
    if checkpoint_path:
        _checkpoint(checkpoint_path, family, u, state, iterations, rng, best_u, best_cost)
    log.info("calibration finished: best cost %.6g, %d skipped sequence evaluations", best_cost, skipped)
    return CalibrationResult(best_u, best_cost, history, u, state, skipped, evaluations)
