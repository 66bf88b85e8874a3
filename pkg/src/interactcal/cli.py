"""Command-line entry point: ``interactcal <subcommand> [options]``.

Exit status 0 on success, 1 when inputs or configuration are invalid, 2 on a
numerical failure (diverging simulation, failed gradient check, ...).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .calibration import CalibrationError, dataset_cost, run_calibration
from .config import ConfigError, RunConfig
from .data import (CoverageError, DataFormatError, DatasetManifest, SequenceSample, extract_crowd_sequences,
                   extract_traffic_sequences, load_tracks, samples_to_tracks, synth_generate, write_tracks)
from .dynamics import IntegrationError, ModelFamily, make_family
from .forces import SF_OPTIMUM, DegeneratePairError, SocialForceParams, WallGeometry
from .gradcheck import default_families, run_gradcheck, write_report
from .optim import NoiseSchedule

log = logging.getLogger("interactcal")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class NumericalFailure(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers

def build_family(cfg: RunConfig) -> ModelFamily:
    walls = None
    if cfg.is_crowd:
        if cfg.walls_file:
            walls = WallGeometry.from_csv(cfg.walls_file)
        else:
            walls = WallGeometry.corridor(cfg.corridor_length, cfg.corridor_width, cfg.wall_spacing)
    fixed = SocialForceParams(0.0, 0.0, 0.0, m=cfg.mass, r=cfg.radius, tau=cfg.tau, B=cfg.B)
    family = make_family(cfg.model, variant=cfg.lwr_variant, hidden=tuple(int(h) for h in cfg.hidden),
                         walls=walls, fixed=fixed)
    if cfg.model == "traffic_lwr":
        family.L_min = cfg.L_min
    return family


def dataset_name(path) -> str:
    return Path(path).stem


def load_dataset(cfg: RunConfig, path) -> tuple[list[SequenceSample], DatasetManifest]:
    tracks = load_tracks(path, lane=cfg.lane)
    dropped = sum(tr.dropped for tr in tracks)
    if dropped:
        log.warning("%s: dropped %d rows with non-finite coordinates", path, dropped)
    if cfg.is_crowd:
        samples = extract_crowd_sequences(tracks, cfg.crowd_dt_data, cfg.crowd_steps)
        grid = {"dt_data": cfg.crowd_dt_data, "steps": cfg.crowd_steps}
    else:
        samples = extract_traffic_sequences(tracks, cfg.traffic_dt_data, cfg.min_agents)
        grid = {"dt_data": cfg.traffic_dt_data, "min_agents": cfg.min_agents}
    manifest = DatasetManifest.build(samples, str(path), grid, {"lane": cfg.lane, "dropped_rows": dropped})
    return samples, manifest


def resolve_params(cfg: RunConfig, family: ModelFamily) -> np.ndarray:
    if cfg.params is not None:
        u = np.asarray(cfg.params, dtype=float)
    elif cfg.params_file:
        with open(cfg.params_file) as fh:
            ck = json.load(fh)
        u = np.asarray(ck.get("best_params", ck.get("params")), dtype=float)
    elif cfg.model == "crowd_sf":
        u = SF_OPTIMUM.calibrated
    else:
        raise ConfigError("this command needs 'params' or 'params_file'")
    if u.shape != (family.n_params,):
        raise ConfigError(f"{family.kind} expects {family.n_params} parameters, got {u.size}")
    return u


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- commands

def cmd_calibrate(cfg: RunConfig) -> int:
    if not cfg.data:
        print("error: no sequences: the configuration lists no data files", file=sys.stderr)
        return EXIT_INVALID
    family = build_family(cfg)
    out = _out(cfg)
    init_rng = np.random.default_rng([cfg.seed, 1])
    summary = []
    for path in cfg.data:
        name = dataset_name(path)
        samples, manifest = load_dataset(cfg, path)
        if not samples:
            print(f"error: no sequences extracted from {path}", file=sys.stderr)
            return EXIT_INVALID
        manifest.write(out / f"manifest_{name}.json")
        init = np.asarray(cfg.init, dtype=float) if cfg.init is not None else family.initial_params(init_rng)
        if init.shape != (family.n_params,):
            raise ConfigError(f"init must have {family.n_params} entries")
        result = run_calibration(
            samples, family, init, dt=cfg.dt, batch_size=cfg.batch, iterations=cfg.iterations,
            sched=NoiseSchedule(cfg.eta1, cfg.eta2, cfg.seed), rho=cfg.rho, eps=cfg.eps,
            eval_every=cfg.eval_every, threads=cfg.threads, checkpoint_path=out / f"checkpoint_{name}.json",
            checkpoint_every=cfg.checkpoint_every,
        )
        full = dict(result.evaluations)
        _write_rows(out / f"loss_history_{name}.csv", ["iteration", "batch_cost", "full_cost"],
                    [[k + 1, _fmt(c), _fmt(full[k + 1]) if k + 1 in full else ""]
                     for k, c in enumerate(result.history)])
        plotting.loss_history(out / f"loss_history_{name}.png", result.history, result.evaluations, name)
        summary.append([name, len(samples), *map(_fmt, result.best_params), _fmt(result.best_cost), result.skipped])
        print(f"{name}: " + ", ".join(f"{p}={v:.6g}" for p, v in zip(family.param_names, result.best_params))
              + f", cost={result.best_cost:.6g}")
    _write_rows(out / "summary.csv", ["dataset", "sequences", *family.param_names, "best_cost", "skipped"], summary)
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, corrupt=False) -> int:
    out = _out(cfg)
    rng = np.random.default_rng(cfg.seed)
    rows = run_gradcheck(default_families(), cfg.gradcheck_instances, rng, tuple(cfg.gradcheck_agents),
                         tuple(cfg.gradcheck_nodes), cfg.gradcheck_step, corrupt=corrupt)
    write_report(out / "gradcheck.csv", rows)
    plotting.gradcheck_errors(out / "gradcheck.png", [r.family for r in rows], [r.rel_err for r in rows],
                              cfg.gradcheck_tol)
    worst: dict[str, float] = {}
    for r in rows:
        worst[r.family] = max(worst.get(r.family, 0.0), r.rel_err)
    for fam, err in worst.items():
        status = "ok" if err <= cfg.gradcheck_tol else "FAIL"
        print(f"{fam:12s} max rel_err {err:.3e} {status}")
    if max(worst.values()) > cfg.gradcheck_tol:
        raise NumericalFailure(f"adjoint gradient disagrees with finite differences (tol {cfg.gradcheck_tol})")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    if not cfg.data:
        raise ConfigError("simulate needs data files for the initial conditions")
    family = build_family(cfg)
    u = resolve_params(cfg, family)
    out = _out(cfg)
    for path in cfg.data:
        name = dataset_name(path)
        samples, _ = load_dataset(cfg, path)
        if not samples:
            raise ConfigError(f"no sequences extracted from {path}")
        simulated = []
        for k, s in enumerate(samples):
            sim_cfg = s.sim_config(family, cfg.dt)
            traj = family.simulate(s.initial_state, u, s.scene, sim_cfg).subsample(sim_cfg.stride)
            ids = [f"{k}:{a}" for a in s.agent_ids]
            simulated.append(SequenceSample(s.kind, s.times, traj.states, ids, s.destinations, f"simulated {k}"))
        # crowd windows share their end node, traffic sequences are kept apart
        tracks = samples_to_tracks(simulated, gap_nodes=-1 if cfg.is_crowd else 5)
        write_tracks(out / f"simulated_{name}.csv", tracks)
        plotting.trajectories(out / f"simulated_{name}.png", simulated[0].times, simulated[0].positions(),
                              f"{name}: first sequence")
        print(f"{name}: simulated {len(simulated)} sequences")
    return EXIT_OK


def cmd_cost(cfg: RunConfig) -> int:
    if not cfg.data:
        raise ConfigError("cost needs data files")
    family = build_family(cfg)
    u = resolve_params(cfg, family)
    out = _out(cfg)
    rows, names, means = [], [], []
    for path in cfg.data:
        name = dataset_name(path)
        samples, _ = load_dataset(cfg, path)
        if not samples:
            raise ConfigError(f"no sequences extracted from {path}")
        try:
            mean, per = dataset_cost(family, u, samples, cfg.dt, cfg.threads)
        except CalibrationError as exc:
            raise NumericalFailure(f"{name}: {exc}") from exc
        skipped = sum(c is None for c in per)
        rows.append([name, len(samples), skipped, _fmt(mean)])
        names.append(name)
        means.append(mean)
        print(f"{name}: mean cost {mean:.6g} over {len(samples) - skipped} sequences")
    average = float(np.mean(means))
    rows.append(["average", sum(r[1] for r in rows), sum(r[2] for r in rows), _fmt(average)])
    _write_rows(out / "cost_report.csv", ["dataset", "sequences", "skipped", "cost"], rows)
    plotting.cost_table(out / "cost_report.png", names + ["average"], means + [average])
    print(f"average: {average:.6g}")
    return EXIT_OK


def synth_truth(cfg: RunConfig, family: ModelFamily, rng) -> np.ndarray:
    if cfg.synth_params is not None:
        return np.asarray(cfg.synth_params, dtype=float)
    if family.kind == "traffic_lwr":
        return np.array([22.0, 5.0])
    if family.kind == "crowd_sf":
        return SF_OPTIMUM.calibrated
    return family.initial_params(rng)


def cmd_synth(cfg: RunConfig) -> int:
    family = build_family(cfg)
    out = _out(cfg)
    rng = np.random.default_rng(cfg.seed)
    truth = synth_truth(cfg, family, rng)
    if truth.shape != (family.n_params,):
        raise ConfigError(f"synth_params must have {family.n_params} entries")
    nodes = cfg.crowd_steps + 1 if cfg.is_crowd else cfg.synth_nodes
    samples = synth_generate(family, truth, cfg.synth_sequences, tuple(cfg.synth_agents), cfg.synth_noise,
                             rng=rng, dt_data=cfg.dt_data, dt=cfg.dt, nodes=nodes)
    tracks = samples_to_tracks(samples, gap_nodes=-1 if cfg.is_crowd else 5)
    write_tracks(out / "synth.csv", tracks)
    grid = {"dt_data": cfg.dt_data, "nodes": nodes}
    provenance = {"model": family.kind, "truth": truth.tolist(), "noise_std": cfg.synth_noise, "seed": cfg.seed}
    DatasetManifest.build(samples, "synth.csv", grid, provenance).write(out / "synth_manifest.json")
    with open(out / "synth_truth.json", "w") as fh:
        json.dump({"model": family.kind, "param_names": list(family.param_names), "params": truth.tolist()}, fh,
                  indent=2)
    print(f"wrote {len(samples)} sequences to {out / 'synth.csv'}")
    return EXIT_OK


def cmd_force_grid(cfg: RunConfig) -> int:
    family = build_family(cfg)
    u = resolve_params(cfg, family)
    out = _out(cfg)
    n = cfg.grid_resolution
    if not cfg.is_crowd:
        gaps = np.linspace(0.0, cfg.traffic_gap_max, n)
        speed = traffic_speed(family, u, gaps)
        _write_rows(out / "force_curve.csv", ["gap", "speed"], [[_fmt(g), _fmt(s)] for g, s in zip(gaps, speed)])
        plotting.force_curve(out / "force_curve.png", gaps, {getattr(family, "label", family.kind): speed})
        print(f"wrote {out / 'force_curve.csv'}")
        return EXIT_OK
    axis = np.linspace(-cfg.grid_extent, cfg.grid_extent, n)
    gx, gy = np.meshgrid(axis, axis)
    dx = np.column_stack([gx.ravel(), gy.ravel()])
    for k, dv in enumerate(cfg.grid_dv):
        force = crowd_pair_grid(family, u, dx, np.asarray(dv, dtype=float))
        for c, comp in enumerate(("fx", "fy")):
            rows = [[_fmt(a), _fmt(b), _fmt(f)] for a, b, f in zip(dx[:, 0], dx[:, 1], force[:, c])]
            _write_rows(out / f"force_grid_{comp}_dv{k}.csv", ["dx", "dy", comp], rows)
            plotting.force_contour(out / f"force_grid_{comp}_dv{k}.png", axis, axis, force[:, c].reshape(n, n),
                                   f"{comp}, dv = ({dv[0]:g}, {dv[1]:g})")
    print(f"wrote {2 * len(cfg.grid_dv)} grids to {out}")
    return EXIT_OK


def traffic_speed(family: ModelFamily, u, gaps) -> np.ndarray:
    """Follower speed as a function of the gap (the traffic interaction law)."""
    y = np.column_stack([np.zeros_like(gaps), gaps])
    return np.array([family.rhs(row, u)[0] for row in y])


def crowd_pair_grid(family, u, dx, dv) -> np.ndarray:
    """Pair force over relative positions; NaN where the force is undefined (coincident agents)."""
    force = np.full((dx.shape[0], 2), np.nan)
    ok = np.linalg.norm(dx, axis=1) > 0 if family.kind == "crowd_sf" else np.ones(dx.shape[0], bool)
    force[ok] = family.pair_forces(dx[ok], np.broadcast_to(dv, dx[ok].shape), u)
    return force


SCENARIO_HEADER = ["name", "x_blue_x", "x_blue_y", "x_red_x", "x_red_y", "v_blue_x", "v_blue_y", "v_red_x", "v_red_y"]


def read_scenarios(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != SCENARIO_HEADER:
            raise DataFormatError(path, 1, "header must be " + ",".join(SCENARIO_HEADER))
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(SCENARIO_HEADER):
                raise DataFormatError(path, lineno, f"expected {len(SCENARIO_HEADER)} fields, got {len(row)}")
            try:
                vals = np.array([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataFormatError(path, lineno, str(exc)) from exc
            if not np.all(np.isfinite(vals)):
                raise DataFormatError(path, lineno, "non-finite value")
            rows.append({"name": row[0].strip(), "x_blue": vals[0:2], "x_red": vals[2:4],
                         "v_blue": vals[4:6], "v_red": vals[6:8]})
    return rows


def pair_study_forces(family, u, scenario) -> dict:
    """Interaction force on each agent plus the wall force at its position."""
    x = np.vstack([scenario["x_blue"], scenario["x_red"]])
    v = np.vstack([scenario["v_blue"], scenario["v_red"]])
    inter = family.pair_forces(np.vstack([x[0] - x[1], x[1] - x[0]]), np.vstack([v[0] - v[1], v[1] - v[0]]), u)
    wall = np.zeros((2, 2))
    if family.walls is not None:
        wall = family.wall_forces(x, v, u).sum(axis=1) / family.walls.count
    return {"interaction": inter, "wall": wall, "total": inter + wall}


def cmd_pair_study(cfg: RunConfig) -> int:
    if not cfg.is_crowd:
        raise ConfigError("pair-study applies to the crowd models")
    if not cfg.scenario_file:
        raise ConfigError("pair-study needs a scenario_file")
    family = build_family(cfg)
    u = resolve_params(cfg, family)
    out = _out(cfg)
    scenarios = read_scenarios(cfg.scenario_file)
    header = ["name", "force_blue_x", "force_blue_y", "force_red_x", "force_red_y",
              "interaction_blue_x", "interaction_blue_y", "interaction_red_x", "interaction_red_y",
              "wall_blue_x", "wall_blue_y", "wall_red_x", "wall_red_y"]
    rows, panels = [], []
    for sc in scenarios:
        f = pair_study_forces(family, u, sc)
        rows.append([sc["name"], *map(_fmt, f["total"].ravel()), *map(_fmt, f["interaction"].ravel()),
                     *map(_fmt, f["wall"].ravel())])
        panels.append({**sc, "force_blue": f["total"][0], "force_red": f["total"][1]})
        print(f"{sc['name']}: blue ({f['total'][0, 0]:.4f}, {f['total'][0, 1]:.4f}) "
              f"red ({f['total'][1, 0]:.4f}, {f['total'][1, 1]:.4f})")
    _write_rows(out / "pair_study.csv", header, rows)
    plotting.pair_study(out / "pair_study.png", panels)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out-dir", default=argparse.SUPPRESS)
    common.add_argument("--lane", default=argparse.SUPPRESS, help="keep only rows of this lane")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="interactcal", parents=[common],
                                     description="Calibrate interaction forces of agent models from trajectories.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [("calibrate", "fit model parameters to trajectory data"),
                       ("gradcheck", "compare adjoint gradients with finite differences"),
                       ("simulate", "simulate every sequence of the data at given parameters"),
                       ("cost", "evaluate the tracking cost per dataset"),
                       ("synth", "generate a synthetic dataset from known parameters"),
                       ("force-grid", "tabulate the interaction force on a grid"),
                       ("pair-study", "forces on two agents for listed scenarios")]:
        p = sub.add_parser(name, parents=[common], help=text)
        if name in ("calibrate", "simulate", "cost"):
            p.add_argument("--data", action="append", help="track CSV (repeatable); overrides the config")
        if name == "pair-study":
            p.add_argument("--scenarios", help="scenario CSV; overrides the config")
        if name == "gradcheck":
            p.add_argument("--corrupt-jacobian", action="store_true", help=argparse.SUPPRESS)
    return parser


def _config_from_args(args) -> RunConfig:
    raw = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
    for key, attr in [("seed", "seed"), ("threads", "threads"), ("out_dir", "out_dir"), ("lane", "lane"),
                      ("data", "data"), ("scenario_file", "scenarios")]:
        value = getattr(args, attr, None)
        if value is not None:
            raw[key] = value
    return RunConfig.from_dict(raw)


COMMANDS = {
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "cost": cmd_cost,
    "synth": cmd_synth,
    "force-grid": cmd_force_grid,
    "pair-study": cmd_pair_study,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, corrupt=args.corrupt_jacobian)
        return COMMANDS[args.command](cfg)
    except (NumericalFailure, IntegrationError, DegeneratePairError, FloatingPointError, CalibrationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DataFormatError, CoverageError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
