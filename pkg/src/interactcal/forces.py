"""Reference interaction forces: LWR car-following and the social force model.

Pair and wall functions are vectorised over leading axes; the last axis of
``dx``/``dv`` is the 2D coordinate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

Z_FLOOR = 1e-6
L_MIN = 2.0

# rotation taking a unit normal n to the tangent (-n2, n1)
_ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


class DegeneratePairError(ValueError):
    """Two interacting points coincide, so the normal direction is undefined."""


@dataclass
class Diagnostics:
    clamped: int = 0


@dataclass(frozen=True)
class LwrParams:
    v0: float
    L: float
    variant: str = "log"

    def __post_init__(self):
        if self.variant not in ("log", "linear"):
            raise ValueError(f"unknown LWR variant {self.variant!r}")


def _lwr_ratio(gap, L, diagnostics):
    z = np.asarray(gap, dtype=float) / L
    if np.min(z) > Z_FLOOR:
        return z, None
    low = z <= Z_FLOOR
    if diagnostics is not None:
        diagnostics.clamped += int(np.count_nonzero(low))
    return np.where(low, Z_FLOOR, z), low


def lwr_velocity(gap, params: LwrParams, diagnostics: Diagnostics | None = None):
    """Follower speed v0*log(z) or v0*(1 - 1/z) with z = gap / L."""
    z, _ = _lwr_ratio(gap, params.L, diagnostics)
    if params.variant == "log":
        v = params.v0 * np.log(z)
    else:
        v = params.v0 * (1.0 - 1.0 / z)
    return v if np.ndim(v) else float(v)


def lwr_derivatives(gap, params: LwrParams):
    """Partials of :func:`lwr_velocity` with respect to (gap, v0, L).

    In the clamped region the velocity is constant in gap and L.
    """
    gap = np.asarray(gap, dtype=float)
    z, low = _lwr_ratio(gap, params.L, None)
    v0, L = params.v0, params.L
    if low is not None:
        gap = np.where(low, z * L, gap)
    if params.variant == "log":
        d_v0 = np.log(z)
        d_gap = v0 / gap
        d_L = np.full_like(z, -v0 / L)
    else:
        d_v0 = 1.0 - 1.0 / z
        d_gap = v0 * L / gap**2
        d_L = -v0 / gap
    if low is not None:
        d_gap = np.where(low, 0.0, d_gap)
        d_L = np.where(low, 0.0, d_L)
    if gap.ndim == 0:
        return float(d_gap), float(d_v0), float(d_L)
    return d_gap, d_v0, d_L


@dataclass(frozen=True)
class SocialForceParams:
    A: float
    k: float
    kappa: float
    m: float = 1.0
    r: float = 0.25
    tau: float = 0.5
    B: float = 0.1

    @property
    def calibrated(self) -> np.ndarray:
        return np.array([self.A, self.k, self.kappa])

    def with_calibrated(self, u) -> "SocialForceParams":
        A, k, kappa = (float(v) for v in u)
        return SocialForceParams(A, k, kappa, self.m, self.r, self.tau, self.B)


# Reference fitted values, used by the pair study and force grids.
SF_OPTIMUM = SocialForceParams(A=0.0044, k=34.9539, kappa=9.8894)


@dataclass(frozen=True)
class WallGeometry:
    """Stationary wall discretisation points, each with a unit tangent."""

    points: np.ndarray
    tangents: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] < 1 or pts.shape[1] != 2:
            raise ValueError("wall geometry needs at least one 2D point")
        if self.tangents is None:
            tan = np.tile([1.0, 0.0], (pts.shape[0], 1))
        else:
            tan = np.atleast_2d(np.asarray(self.tangents, dtype=float))
            if tan.shape != pts.shape:
                raise ValueError("one tangent per wall point is required")
            tan = tan / np.linalg.norm(tan, axis=1, keepdims=True)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "tangents", tan)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @classmethod
    def corridor(cls, length=10.0, width=2.0, spacing=0.1, x0=None) -> "WallGeometry":
        """Two straight horizontal walls at y = +-width/2."""
        x0 = -length / 2 if x0 is None else x0
        xs = x0 + spacing * np.arange(int(round(length / spacing)) + 1)
        top = np.column_stack([xs, np.full_like(xs, width / 2)])
        bottom = np.column_stack([xs, np.full_like(xs, -width / 2)])
        pts = np.vstack([top, bottom])
        return cls(pts, np.tile([1.0, 0.0], (pts.shape[0], 1)))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "tangent_x", "tangent_y"])
            for p, t in zip(self.points, self.tangents):
                w.writerow([repr(float(v)) for v in (*p, *t)])

    @classmethod
    def from_csv(cls, path) -> "WallGeometry":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["x", "y", "tangent_x", "tangent_y"]:
                raise ValueError(f"{path}: expected header x,y,tangent_x,tangent_y")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    rows.append([float(v) for v in row])
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: malformed wall record {row!r}") from None
                if len(rows[-1]) != 4:
                    raise ValueError(f"{path}:{lineno}: expected 4 columns")
        if not rows:
            raise ValueError(f"{path}: no wall points")
        arr = np.array(rows)
        return cls(arr[:, :2], arr[:, 2:])


def _geometry(dx):
    dx = np.asarray(dx, dtype=float)
    d = np.linalg.norm(dx, axis=-1)
    if np.any(d == 0.0):
        raise DegeneratePairError("coincident positions in pair force")
    n = dx / d[..., None]
    t = np.stack([-n[..., 1], n[..., 0]], axis=-1)
    return d, n, t


def social_pair_force(dx, dv, params: SocialForceParams, contact_radius):
    """Force on agent i from agent j given dx = x_i - x_j and dv = v_i - v_j."""
    d, n, t = _geometry(dx)
    y = contact_radius - d
    h = np.maximum(y, 0.0)
    tang = -np.sum(np.asarray(dv, dtype=float) * t, axis=-1)
    normal = params.A * np.exp(y / params.B) + params.k * h
    return normal[..., None] * n + (params.kappa * h * tang)[..., None] * t


def social_wall_force(position, velocity, wall: WallGeometry, params: SocialForceParams):
    """Summed (not averaged) wall force on one agent or a stack of agents.

    ``position``/``velocity`` have shape (2,) or (N, 2); the caller applies
    the 1/(N_wall m) prefactor.
    """
    x = np.asarray(position, dtype=float)
    v = np.asarray(velocity, dtype=float)
    dx = x[..., None, :] - wall.points
    d, n, _ = _geometry(dx)
    y = params.r - d
    h = np.maximum(y, 0.0)
    tang = np.sum(v[..., None, :] * wall.tangents, axis=-1)
    normal = params.A * np.exp(y / params.B) + params.k * h
    f = normal[..., None] * n + (params.kappa * h * tang)[..., None] * wall.tangents
    return f.sum(axis=-2)


def relaxation_force(position, velocity, destination, tau):
    """(v_des - v)/tau, v_des pointing at the destination with the current speed."""
    x = np.asarray(position, dtype=float)
    v = np.asarray(velocity, dtype=float)
    to_dest = np.asarray(destination, dtype=float) - x
    dist = np.linalg.norm(to_dest, axis=-1, keepdims=True)
    speed = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(dist > 0, dist, 1.0)
    v_des = np.where(dist > 0, to_dest / safe * speed, 0.0)
    return (v_des - v) / tau


def relaxation_vjp(position, velocity, destination, tau, cot):
    """Pull back a cotangent on the relaxation force to (position, velocity).

    Arrays have shape (N, 2). Where the speed or the distance to the
    destination is zero the non-smooth factor is treated as locally constant.
    """
    x = np.asarray(position, dtype=float)
    v = np.asarray(velocity, dtype=float)
    cot = np.asarray(cot, dtype=float) / tau
    to_dest = np.asarray(destination, dtype=float) - x
    dist = np.linalg.norm(to_dest, axis=-1, keepdims=True)
    speed = np.linalg.norm(v, axis=-1, keepdims=True)
    ok = dist > 0
    e = np.where(ok, to_dest / np.where(ok, dist, 1.0), 0.0)
    ce = np.sum(cot * e, axis=-1, keepdims=True)
    # d e / d x = -(I - e e^T) / dist
    g_x = np.where(ok, -speed * (cot - ce * e) / np.where(ok, dist, 1.0), 0.0)
    moving = speed > 0
    g_v = np.where(moving, ce * v / np.where(moving, speed, 1.0), 0.0) - cot
    return g_x, g_v


@dataclass
class PairPartials:
    """Derivatives of one or many pair forces.

    ``d_params`` has shape (..., 2, 3) for (A, k, kappa); ``d_dx`` and
    ``d_dv`` are (..., 2, 2) Jacobians with rows indexing force components.
    """

    d_params: np.ndarray
    d_dx: np.ndarray
    d_dv: np.ndarray


def social_force_derivatives(dx, dv, params: SocialForceParams, contact_radius) -> PairPartials:
    dv = np.asarray(dv, dtype=float)
    d, n, t = _geometry(dx)
    y = contact_radius - d
    h = np.maximum(y, 0.0)
    H = (y > 0).astype(float)
    e = np.exp(y / params.B)
    s = -np.sum(dv * t, axis=-1)
    a = params.A * e + params.k * h

    d_params = np.stack([e[..., None] * n, h[..., None] * n, (h * s)[..., None] * t], axis=-1)

    eye = np.eye(2)
    nn_ = n[..., :, None] * n[..., None, :]
    P = (eye - nn_) / d[..., None, None]
    dt_dx = _ROT @ P
    da_dx = -(params.A * e / params.B + params.k * H)[..., None] * n
    ds_dx = -np.einsum("...i,...ij->...j", dv, dt_dx)
    dh_dx = -H[..., None] * n
    d_dx = (
        n[..., :, None] * da_dx[..., None, :]
        + a[..., None, None] * P
        + params.kappa
        * (
            t[..., :, None] * (s[..., None] * dh_dx + h[..., None] * ds_dx)[..., None, :]
            + (h * s)[..., None, None] * dt_dx
        )
    )
    d_dv = -(params.kappa * h)[..., None, None] * (t[..., :, None] * t[..., None, :])
    return PairPartials(d_params, d_dx, d_dv)


def social_wall_derivatives(position, velocity, wall: WallGeometry, params: SocialForceParams) -> PairPartials:
    """Per-(agent, wall point) partials of the wall force; leading axes (N, N_wall)."""
    x = np.atleast_2d(np.asarray(position, dtype=float))
    v = np.atleast_2d(np.asarray(velocity, dtype=float))
    dx = x[:, None, :] - wall.points
    d, n, _ = _geometry(dx)
    tw = np.broadcast_to(wall.tangents, dx.shape)
    y = params.r - d
    h = np.maximum(y, 0.0)
    H = (y > 0).astype(float)
    e = np.exp(y / params.B)
    s = np.sum(v[:, None, :] * tw, axis=-1)
    a = params.A * e + params.k * h

    d_params = np.stack([e[..., None] * n, h[..., None] * n, (h * s)[..., None] * tw], axis=-1)
    P = (np.eye(2) - n[..., :, None] * n[..., None, :]) / d[..., None, None]
    da_dx = -(params.A * e / params.B + params.k * H)[..., None] * n
    dh_dx = -H[..., None] * n
    d_dx = (
        n[..., :, None] * da_dx[..., None, :]
        + a[..., None, None] * P
        + params.kappa * s[..., None, None] * (tw[..., :, None] * dh_dx[..., None, :])
    )
    d_dv = (params.kappa * h)[..., None, None] * (tw[..., :, None] * tw[..., None, :])
    return PairPartials(d_params, d_dx, d_dv)
