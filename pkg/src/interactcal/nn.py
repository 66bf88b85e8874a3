"""Feed-forward networks with bias units, softplus hidden layers and a linear output.

Inputs may be a single vector of shape ``(n_in,)`` or a batch ``(B, n_in)``;
every function keeps the leading batch axis when one is given.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def softplus(x):
    """log(1 + e^x), split into branches so large arguments do not overflow."""
    x = np.asarray(x, dtype=float)
    out = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)
    return out if out.ndim else float(out)


def logistic(x):
    """Derivative of :func:`softplus`."""
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class NetSpec:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "softplus"
    output_activation: str = "identity"

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("a network needs at least an input and an output layer")
        if any(n < 1 for n in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if self.hidden_activation != "softplus" or self.output_activation != "identity":
            raise ValueError("only softplus hidden and identity output activations are supported")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        """Weight matrix shapes (targets, sources + bias) for each layer transition."""
        s = self.layer_sizes
        return [(s[l + 1], s[l] + 1) for l in range(len(s) - 1)]

    @property
    def param_count(self) -> int:
        return sum(r * c for r, c in self.shapes)


@dataclass(frozen=True)
class NetParams:
    """Network weights flattened layer by layer, target-neuron-major, bias weight first.

    ``matrices`` are views into ``values``; row ``k`` of matrix ``l`` holds the
    weights feeding neuron ``k`` of layer ``l + 1`` with column 0 the bias.
    """

    spec: NetSpec
    values: np.ndarray
    matrices: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size != self.spec.param_count:
            raise ValueError(
                f"expected {self.spec.param_count} weights for {self.spec.layer_sizes}, got {values.size}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("network weights must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        mats, offset = [], 0
        for rows, cols in self.spec.shapes:
            mats.append(values[offset:offset + rows * cols].reshape(rows, cols))
            offset += rows * cols
        object.__setattr__(self, "matrices", mats)

    @classmethod
    def zeros(cls, spec: NetSpec) -> "NetParams":
        return cls(spec, np.zeros(spec.param_count))

    @classmethod
    def uniform(cls, spec: NetSpec, rng: np.random.Generator, low=-1.0, high=1.0) -> "NetParams":
        return cls(spec, rng.uniform(low, high, spec.param_count))

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.spec.layer_sizes), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NetParams":
        return cls(NetSpec(tuple(d["layer_sizes"])), np.asarray(d["values"], dtype=float))


@dataclass(frozen=True)
class NetEvalTrace:
    """Intermediate values of one forward pass.

    ``activations[l]`` carries a leading bias entry of 1 for every non-output
    layer; ``pre_activations[l]`` is the weighted input of layer ``l + 1``.
    """

    activations: list
    pre_activations: list
    batched: bool


def forward(params: NetParams, x) -> tuple[np.ndarray, NetEvalTrace]:
    x = np.asarray(x, dtype=float)
    batched = x.ndim == 2
    xb = x if batched else x[None, :]
    if xb.ndim != 2 or xb.shape[1] != params.spec.n_in:
        raise ValueError(f"input must have {params.spec.n_in} features, got shape {x.shape}")

    ones = np.ones((xb.shape[0], 1))
    a = np.hstack([ones, xb])
    acts, pres = [a], []
    last = len(params.matrices) - 1
    for l, w in enumerate(params.matrices):
        z = a @ w.T
        pres.append(z)
        if l == last:
            a = z
        else:
            a = np.hstack([ones, softplus(z)])
        acts.append(a)

    out = acts[-1] if batched else acts[-1][0]
    return out, NetEvalTrace(acts, pres, batched)


def _check_trace(params: NetParams, trace: NetEvalTrace):
    if len(trace.pre_activations) != len(params.matrices) or any(
        z.shape[1] != w.shape[0] for z, w in zip(trace.pre_activations, params.matrices)
    ):
        raise ValueError("trace does not belong to a network of this shape")


def vjp_input(params: NetParams, trace: NetEvalTrace, cotangent) -> np.ndarray:
    """Pull a cotangent on the output back to the input (cotangent^T dW/dx)."""
    _check_trace(params, trace)
    g = np.asarray(cotangent, dtype=float)
    g = g if trace.batched else g[None, :]
    last = len(params.matrices) - 1
    for l in range(last, -1, -1):
        if l != last:
            g = g * logistic(trace.pre_activations[l])
        g = g @ params.matrices[l][:, 1:]
    return g if trace.batched else g[0]


def jac_input(params: NetParams, trace: NetEvalTrace) -> np.ndarray:
    """Jacobian of the output with respect to the input, shape ``(n_out, n_in)``
    (or ``(B, n_out, n_in)`` for a batched trace)."""
    _check_trace(params, trace)
    n_out = params.spec.n_out
    batch = trace.activations[0].shape[0]
    g = np.broadcast_to(np.eye(n_out), (batch, n_out, n_out))
    last = len(params.matrices) - 1
    for l in range(last, -1, -1):
        if l != last:
            g = g * logistic(trace.pre_activations[l])[:, None, :]
        g = g @ params.matrices[l][:, 1:]
    return g if trace.batched else g[0]


def grad_params_transposed(params: NetParams, trace: NetEvalTrace, cotangent) -> np.ndarray:
    """Parameter pullback (dW/du)^T cotangent, summed over the batch."""
    _check_trace(params, trace)
    g = np.asarray(cotangent, dtype=float)
    g = g if trace.batched else g[None, :]
    if g.shape[1] != params.spec.n_out:
        raise ValueError(f"cotangent must have {params.spec.n_out} entries")
    blocks = []
    last = len(params.matrices) - 1
    for l in range(last, -1, -1):
        if l != last:
            g = g * logistic(trace.pre_activations[l])
        blocks.append((g.T @ trace.activations[l]).ravel())
        g = g @ params.matrices[l][:, 1:]
    return np.concatenate(blocks[::-1])


def lipschitz_bound(params: NetParams) -> float:
    """Upper bound on the global Lipschitz constant (softplus is 1-Lipschitz)."""
    return float(np.prod([np.linalg.norm(w[:, 1:], 2) for w in params.matrices]))
