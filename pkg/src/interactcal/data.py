"""Trajectory ingestion, grid alignment, sequence extraction and synthetic data.

Ingestion CSV: header ``t,agent_id,x[,y][,lane]``, seconds and metres.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import IntegrationError, ModelFamily, Scene, SimConfig, Trajectory


class DataFormatError(ValueError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


class CoverageError(ValueError):
    """Requested grid nodes lie outside the recorded span of a track."""


@dataclass
class RawTrack:
    agent_id: str
    times: np.ndarray
    positions: np.ndarray  # (n,) for 1D data, (n, 2) for 2D
    dropped: int = 0  # rows skipped for non-finite coordinates

    @property
    def dim(self) -> int:
        return 1 if self.positions.ndim == 1 else 2

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])


@dataclass
class SequenceSample:
    """One window of reference data with every agent present at every node.

    ``states`` follows the model state layout: traffic (x_1..x_N) sorted so
    that agent i+1 leads agent i; crowd (x_1..x_N, v_1..v_N) flattened.
    """

    kind: str  # "traffic" or "crowd"
    times: np.ndarray
    states: np.ndarray
    agent_ids: list
    destinations: np.ndarray | None = None
    source: str = ""
    groups: np.ndarray | None = None  # set on merged block samples only

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def initial_state(self) -> np.ndarray:
        return self.states[0]

    @property
    def reference(self) -> Trajectory:
        return Trajectory(self.times, self.states)

    @property
    def scene(self) -> Scene:
        return Scene(self.n_agents, self.destinations, self.groups)

    def positions(self) -> np.ndarray:
        if self.kind == "traffic":
            return self.states
        n = self.n_agents
        return self.states[:, : 2 * n].reshape(len(self.times), n, 2)

    def sim_config(self, family: ModelFamily, dt: float) -> SimConfig:
        """Euler configuration whose step divides the data spacing."""
        stride = int(round(self.dt / dt))
        if stride < 1 or not math.isclose(stride * dt, self.dt, rel_tol=1e-9):
            raise ValueError(f"simulation step {dt} does not divide data step {self.dt}")
        return SimConfig(self.dt / stride, (len(self.times) - 1) * stride, family.kind, stride)


def merge_samples(samples: list[SequenceSample]) -> SequenceSample:
    """Stack sequences on a common grid into one block sample.

    The block cost is the sum of the sequence costs and agents never interact
    across sequences, so gradients add up as well.
    """
    first = samples[0]
    if any(s.kind != first.kind or len(s.times) != len(first.times) or not math.isclose(s.dt, first.dt)
           for s in samples):
        raise ValueError("only sequences of one kind on identical grids can be merged")
    groups = np.concatenate([np.full(s.n_agents, g) for g, s in enumerate(samples)])
    ids = [a for s in samples for a in s.agent_ids]
    if first.kind == "traffic":
        states = np.concatenate([s.states for s in samples], axis=1)
        dest = None
    else:
        m1 = len(first.times)
        pos = np.concatenate([s.states[:, : 2 * s.n_agents] for s in samples], axis=1)
        vel = np.concatenate([s.states[:, 2 * s.n_agents:] for s in samples], axis=1)
        states = np.concatenate([pos, vel], axis=1).reshape(m1, -1)
        dest = None
        if all(s.destinations is not None for s in samples):
            dest = np.concatenate([s.destinations for s in samples], axis=0)
    return SequenceSample(first.kind, first.times, states, ids, dest, source="merged", groups=groups)


def load_tracks(path, lane=None) -> list[RawTrack]:
    """Read an ingestion CSV into one track per agent (first-appearance order)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        header = [h.strip() for h in header]
        if header[:3] != ["t", "agent_id", "x"] or header[3:] not in ([], ["y"], ["lane"], ["y", "lane"]):
            raise DataFormatError(path, 1, f"header must be t,agent_id,x[,y][,lane], got {','.join(header)}")
        has_y = "y" in header
        lane_col = header.index("lane") if "lane" in header else None

        data: dict[str, list] = {}
        dropped: dict[str, int] = {}
        last_t: dict[str, float] = {}
        row_dim = None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(path, lineno, f"expected {len(header)} columns, got {len(row)}")
            if lane is not None and lane_col is not None and row[lane_col].strip() != str(lane):
                continue
            agent = row[1].strip()
            try:
                t = float(row[0])
                coords = [float(row[2])]
                if has_y:
                    ystr = row[3].strip()
                    dim = 2 if ystr else 1
                    if ystr:
                        coords.append(float(ystr))
                else:
                    dim = 1
            except ValueError:
                raise DataFormatError(path, lineno, f"unparsable number in {row!r}") from None
            if row_dim is None:
                row_dim = dim
            elif dim != row_dim:
                raise DataFormatError(path, lineno, "mixed 1D and 2D rows in one file")
            if not math.isfinite(t):
                raise DataFormatError(path, lineno, "non-finite timestamp")
            if agent in last_t and t <= last_t[agent]:
                raise DataFormatError(path, lineno, f"timestamps of agent {agent} are not strictly increasing")
            last_t[agent] = t
            data.setdefault(agent, [])
            dropped.setdefault(agent, 0)
            if not all(math.isfinite(c) for c in coords):
                dropped[agent] += 1
                continue
            data[agent].append((t, *coords))

    tracks = []
    for agent, rows in data.items():
        if not rows:
            continue
        arr = np.array(rows, dtype=float)
        pos = arr[:, 1] if arr.shape[1] == 2 else arr[:, 1:]
        tracks.append(RawTrack(agent, arr[:, 0], pos, dropped[agent]))
    return tracks


def write_tracks(path, tracks: list[RawTrack]):
    """Write tracks in the ingestion schema (rows grouped by agent)."""
    two_d = any(tr.dim == 2 for tr in tracks)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "agent_id", "x", "y"] if two_d else ["t", "agent_id", "x"])
        for tr in tracks:
            for t, p in zip(tr.times, tr.positions):
                coords = np.atleast_1d(p)
                w.writerow([repr(float(t)), tr.agent_id, *(repr(float(c)) for c in coords)])


def interpolate_to_grid(track: RawTrack, grid) -> np.ndarray:
    """Piecewise-linear positions at ``grid``; raises CoverageError outside the span."""
    grid = np.asarray(grid, dtype=float)
    t0, t1 = track.span
    tol = 1e-9 * max(1.0, abs(t0), abs(t1))
    if grid.min() < t0 - tol or grid.max() > t1 + tol:
        raise CoverageError(f"agent {track.agent_id} does not cover [{grid.min()}, {grid.max()}]")
    g = np.clip(grid, t0, t1)
    if track.dim == 1:
        return np.interp(g, track.times, track.positions)
    return np.column_stack([np.interp(g, track.times, track.positions[:, c]) for c in range(2)])


def _global_grid(tracks, dt):
    start = min(tr.times[0] for tr in tracks)
    stop = max(tr.times[-1] for tr in tracks)
    k0 = math.ceil(start / dt - 1e-9)
    k1 = math.floor(stop / dt + 1e-9)
    return k0, dt * np.arange(k0, k1 + 1)


def _covering(track, grid):
    t0, t1 = track.span
    tol = 1e-9 * max(1.0, abs(t0), abs(t1))
    return (grid >= t0 - tol) & (grid <= t1 + tol)


def extract_traffic_sequences(tracks: list[RawTrack], dt_data=0.2, min_agents=2, min_nodes=2) -> list[SequenceSample]:
    """Maximal windows over which the set of fully covered agents stays constant
    and has at least ``min_agents`` members."""
    if not dt_data > 0:
        raise ValueError("dt_data must be positive")
    if not tracks:
        return []
    _, grid = _global_grid(tracks, dt_data)
    cover = np.array([_covering(tr, grid) for tr in tracks])  # (agents, nodes)

    out = []
    n = grid.size
    start = 0
    while start < n:
        members = cover[:, start]
        stop = start + 1
        while stop < n and np.array_equal(cover[:, stop], members):
            stop += 1
        if members.sum() >= min_agents and stop - start >= min_nodes:
            sel = [tr for tr, m in zip(tracks, members) if m]
            out.append(_traffic_window(sel, grid[start:stop]))
        start = stop
    return out


def _traffic_window(tracks, grid):
    pos = np.column_stack([interpolate_to_grid(tr, grid) if tr.dim == 1 else interpolate_to_grid(tr, grid)[:, 0]
                           for tr in tracks])
    # travel direction from the mean net displacement; flip so motion is increasing
    direction = 1.0 if np.mean(pos[-1] - pos[0]) >= 0 else -1.0
    pos = direction * pos
    order = np.argsort(pos[0], kind="stable")
    return SequenceSample("traffic", grid.copy(), pos[:, order], [tracks[i].agent_id for i in order],
                          source=f"window {grid[0]:.6g}-{grid[-1]:.6g}")


def finite_difference_velocity(positions, dt):
    """Forward difference at the start, backward at the end, central inside."""
    return np.gradient(np.asarray(positions, dtype=float), dt, axis=0, edge_order=1)


def extract_crowd_sequences(tracks: list[RawTrack], dt=0.04, steps=25) -> list[SequenceSample]:
    """Consecutive windows of ``steps`` intervals; only fully covered pedestrians kept."""
    if not tracks:
        return []
    if any(tr.dim != 2 for tr in tracks):
        raise ValueError("crowd sequences need 2D tracks")
    _, grid = _global_grid(tracks, dt)
    out = []
    for w in range((grid.size - 1) // steps):
        window = grid[w * steps: (w + 1) * steps + 1]
        sel = [tr for tr in tracks if np.all(_covering(tr, window))]
        if not sel:
            continue
        pos = np.stack([interpolate_to_grid(tr, window) for tr in sel], axis=1)  # (M+1, N, 2)
        vel = finite_difference_velocity(pos, dt)
        m1 = window.size
        states = np.concatenate([pos.reshape(m1, -1), vel.reshape(m1, -1)], axis=1)
        out.append(SequenceSample("crowd", window.copy(), states, [tr.agent_id for tr in sel],
                                  destinations=pos[-1].copy(), source=f"window {w}"))
    return out


@dataclass
class DatasetManifest:
    sequences: list = field(default_factory=list)
    grid: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @classmethod
    def build(cls, samples, source, grid, provenance=None):
        seqs = []
        for s in samples:
            seqs.append({
                "source": source,
                "window": [float(s.times[0]), float(s.times[-1])],
                "nodes": int(len(s.times)),
                "agents": int(s.n_agents),
                "agent_ids": list(map(str, s.agent_ids)),
                "digest": hashlib.sha256(np.ascontiguousarray(s.states).tobytes()).hexdigest()[:16],
            })
        return cls(seqs, dict(grid), dict(provenance or {}))

    def to_json(self) -> str:
        return json.dumps({"sequences": self.sequences, "grid": self.grid, "provenance": self.provenance},
                          indent=2, sort_keys=True)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")


def _traffic_initial(rng, n_agents, gap_range):
    gaps = rng.uniform(*gap_range, n_agents - 1)
    return np.concatenate([[0.0], np.cumsum(gaps)])


def _crowd_initial(rng, n_agents, walls, fixed, box, speed=1.3, tries=200):
    half_len, half_wid = box
    for _ in range(tries):
        x = np.column_stack([rng.uniform(-half_len, half_len, n_agents),
                             rng.uniform(-half_wid, half_wid, n_agents)])
        d = np.linalg.norm(x[:, None] - x[None], axis=-1) + np.eye(n_agents) * 1e9
        if d.min() > 2 * fixed.r:
            break
    heading = rng.choice([-1.0, 1.0], n_agents)
    v = np.column_stack([heading * rng.normal(speed, 0.1, n_agents), rng.normal(0.0, 0.1, n_agents)])
    dest = x + np.column_stack([heading * 10.0, np.zeros(n_agents)])
    return np.concatenate([x.ravel(), v.ravel()]), dest


def synth_generate(family: ModelFamily, true_params, n_sequences, agents_per_sequence, noise_std=0.0, *,
                   rng: np.random.Generator, dt_data=0.2, dt=0.002, nodes=26, gap_range=(10.0, 35.0),
                   crowd_box=(3.0, 0.7), max_retries=20) -> list[SequenceSample]:
    """Simulate ``n_sequences`` windows at ``true_params`` and add position noise.

    ``agents_per_sequence`` is an int or an inclusive (low, high) range. Crowd
    samples keep the simulated destinations.
    """
    u = np.asarray(true_params, dtype=float)
    if not family.admissible().contains(u):
        raise ValueError("true parameters are not admissible")
    lo, hi = (agents_per_sequence, agents_per_sequence) if np.isscalar(agents_per_sequence) else agents_per_sequence
    stride = int(round(dt_data / dt))
    cfg = SimConfig(dt_data / stride, (nodes - 1) * stride, family.kind, stride)
    out = []
    for s in range(n_sequences):
        for _ in range(max_retries):
            n = int(rng.integers(lo, hi + 1))
            if family.spatial_dim == 1:
                y0, dest = _traffic_initial(rng, n, gap_range), None
            else:
                fixed = getattr(family, "fixed")
                y0, dest = _crowd_initial(rng, n, family.walls, fixed, crowd_box)
            try:
                traj = family.simulate(y0, u, Scene(n, dest), cfg).subsample(stride)
            except (IntegrationError, ValueError):
                continue
            break
        else:
            raise RuntimeError(f"could not simulate sequence {s} after {max_retries} attempts")
        states = traj.states.copy()
        obs = family.observed_dim(n)
        if noise_std > 0:
            states[:, :obs] += rng.normal(0.0, noise_std, states[:, :obs].shape)
        times = dt_data * np.arange(nodes)
        ids = [f"s{s}a{i}" for i in range(n)]
        out.append(SequenceSample("traffic" if family.spatial_dim == 1 else "crowd", times, states, ids,
                                  destinations=dest, source=f"synthetic {s}"))
    return out


def samples_to_tracks(samples: list[SequenceSample], gap_nodes=5) -> list[RawTrack]:
    """Lay sequences end to end in time (separated by empty nodes) as raw tracks."""
    tracks = []
    offset = 0
    for s in samples:
        m1 = len(s.times)
        k = offset + np.arange(m1)
        times = s.dt * k
        pos = s.positions()
        for i, aid in enumerate(s.agent_ids):
            tracks.append(RawTrack(str(aid), times, pos[:, i].copy()))
        offset += m1 + gap_nodes
    return tracks
