"""PNG figures written next to the CSV outputs (non-interactive Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def loss_history(path, history, evaluations=(), title="calibration"):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(np.arange(1, len(history) + 1), history, lw=0.8, alpha=0.7, label="batch cost")
    if len(evaluations):
        it, cost = zip(*evaluations)
        ax.semilogy(it, cost, "o-", ms=2, label="full cost")
    ax.set_xlabel("iteration")
    ax.set_ylabel("cost")
    ax.set_title(title)
    ax.legend()
    _save(fig, path)


def force_contour(path, xs, ys, values, title, xlabel="dx", ylabel="dy"):
    """Filled contour of values[iy, ix] over the grid xs by ys."""
    fig, ax = plt.subplots(figsize=(5, 4.2))
    cs = ax.contourf(xs, ys, values, levels=30, cmap="RdBu_r")
    fig.colorbar(cs, ax=ax)
    ax.set_aspect("equal")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    _save(fig, path)


def force_curve(path, gaps, curves: dict, title="follower speed against gap"):
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in curves.items():
        ax.plot(gaps, values, label=label)
    ax.axhline(0.0, color="0.6", lw=0.5)
    ax.set_xlabel("gap (m)")
    ax.set_ylabel("speed (m/s)")
    ax.set_title(title)
    ax.legend()
    _save(fig, path)


def pair_study(path, rows, scale=0.15):
    """One panel per scenario: positions, velocity arrows and force arrows.

    ``rows`` are dicts with keys name, x_blue, x_red, v_blue, v_red,
    force_blue, force_red (2-vectors).
    """
    n = len(rows)
    cols = min(n, 2)
    nrows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(nrows, cols, figsize=(3.6 * cols, 3.6 * nrows), squeeze=False)
    for ax, r in zip(axes.ravel(), rows):
        fmax = max(np.linalg.norm(r["force_blue"]), np.linalg.norm(r["force_red"]), 1e-12)
        span = max(np.linalg.norm(np.subtract(r["x_blue"], r["x_red"])), 0.2)
        centre = (np.asarray(r["x_blue"]) + np.asarray(r["x_red"])) / 2
        for who, color in (("blue", "tab:blue"), ("red", "tab:red")):
            x, v, f = (np.asarray(r[k + "_" + who]) for k in ("x", "v", "force"))
            ax.plot(*x, "o", color=color)
            ax.arrow(*x, *(scale * span * v), color=color, width=0.01 * span, length_includes_head=True)
            ax.arrow(*x, *(0.6 * span * f / fmax), color="k", width=0.01 * span, length_includes_head=True)
        half = 1.2 * span
        ax.set_xlim(centre[0] - half, centre[0] + half)
        ax.set_ylim(centre[1] - half, centre[1] + half)
        ax.set_title(r["name"])
        ax.set_aspect("equal")
    for ax in axes.ravel()[n:]:
        ax.set_visible(False)
    _save(fig, path)


def trajectories(path, times, positions, title="simulated trajectories"):
    """Traffic: positions (T, N) against time. Crowds: paths from (T, N, 2)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    if positions.ndim == 2:
        ax.plot(times, positions, lw=0.8)
        ax.set_xlabel("t (s)")
        ax.set_ylabel("x (m)")
    else:
        for i in range(positions.shape[1]):
            ax.plot(positions[:, i, 0], positions[:, i, 1], lw=0.8)
            ax.plot(*positions[0, i], "k.", ms=3)
        ax.set_aspect("equal")
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
    ax.set_title(title)
    _save(fig, path)


def gradcheck_errors(path, families, rel_errs, tol):
    fig, ax = plt.subplots(figsize=(6, 4))
    names = list(dict.fromkeys(families))
    for k, name in enumerate(names):
        errs = np.array([e for f, e in zip(families, rel_errs) if f == name])
        ax.semilogy(np.full(errs.size, k) + np.linspace(-0.3, 0.3, errs.size), np.maximum(errs, 1e-17), ".", ms=3)
    ax.axhline(tol, color="r", lw=0.8)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30)
    ax.set_ylabel("relative error")
    _save(fig, path)


def cost_table(path, names, costs):
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(names) + 2), 3.5))
    ax.bar(range(len(names)), costs)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30)
    ax.set_ylabel("mean cost")
    _save(fig, path)
