"""ADADELTA with annealed gradient noise and projection onto the admissible set."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class AdadeltaState:
    eg2: np.ndarray
    edx2: np.ndarray
    rho: float = 0.95
    eps: float = 1e-6
    k: int = 0

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if not self.eps > 0.0:
            raise ValueError("eps must be positive")

    @classmethod
    def zeros(cls, n: int, rho=0.95, eps=1e-6) -> "AdadeltaState":
        return cls(np.zeros(n), np.zeros(n), rho, eps, 0)

    def to_dict(self) -> dict:
        return {"eg2": self.eg2.tolist(), "edx2": self.edx2.tolist(), "rho": self.rho, "eps": self.eps, "k": self.k}

    @classmethod
    def from_dict(cls, d) -> "AdadeltaState":
        return cls(np.asarray(d["eg2"], float), np.asarray(d["edx2"], float), d["rho"], d["eps"], int(d["k"]))


def adadelta_step(state: AdadeltaState, grad) -> tuple[np.ndarray, AdadeltaState]:
    g = np.asarray(grad, dtype=float)
    if g.shape != state.eg2.shape:
        raise ValueError(f"gradient has shape {g.shape}, accumulators {state.eg2.shape}")
    rho, eps = state.rho, state.eps
    eg2 = rho * state.eg2 + (1.0 - rho) * g * g
    update = -np.sqrt(state.edx2 + eps) / np.sqrt(eg2 + eps) * g
    edx2 = rho * state.edx2 + (1.0 - rho) * update * update
    return update, replace(state, eg2=eg2, edx2=edx2, k=state.k + 1)


@dataclass(frozen=True)
class NoiseSchedule:
    eta1: float = 1.0
    eta2: float = 0.55
    seed: int = 0

    def __post_init__(self):
        if self.eta1 < 0 or self.eta2 <= 0:
            raise ValueError("eta1 must be non-negative and eta2 positive")

    def variance(self, k):
        return self.eta1 / (1.0 + np.asarray(k, dtype=float)) ** self.eta2

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def noisy_gradient(grad, sched: NoiseSchedule, k: int, rng: np.random.Generator) -> np.ndarray:
    """grad + N(0, eta1/(1+k)^eta2 I). The stream advances even when eta1 is 0."""
    if k < 0:
        raise ValueError("iteration counter must be non-negative")
    g = np.asarray(grad, dtype=float)
    noise = rng.standard_normal(g.shape)
    return g + np.sqrt(sched.variance(k)) * noise


@dataclass(frozen=True)
class AdmissibleSet:
    """Componentwise box [lower, upper]; infinite bounds mean unconstrained."""

    lower: np.ndarray
    upper: np.ndarray
    kind: str = "custom"

    @classmethod
    def box_pm1(cls, n):
        return cls(np.full(n, -1.0), np.full(n, 1.0), "box_pm1")

    @classmethod
    def nonneg(cls, n):
        return cls(np.zeros(n), np.full(n, np.inf), "nonneg")

    @classmethod
    def lwr(cls, L_min=2.0):
        # (v0, L)
        return cls(np.array([-np.inf, L_min]), np.array([np.inf, np.inf]), "lwr")

    @classmethod
    def unconstrained(cls, n):
        return cls(np.full(n, -np.inf), np.full(n, np.inf), "unconstrained")

    def concat(self, other: "AdmissibleSet") -> "AdmissibleSet":
        kind = self.kind if self.kind == other.kind else f"{self.kind}+{other.kind}"
        return AdmissibleSet(np.concatenate([self.lower, other.lower]), np.concatenate([self.upper, other.upper]), kind)

    def contains(self, u) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lower) and np.all(u <= self.upper))

    def __len__(self):
        return len(self.lower)


def project(u, admissible: AdmissibleSet) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != admissible.lower.shape:
        raise ValueError(f"parameter vector has shape {u.shape}, admissible set {admissible.lower.shape}")
    return np.clip(u, admissible.lower, admissible.upper)
