"""MLPs for the generator, critic and importance network; Adam; latent priors."""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .errors import ConfigError

HIDDEN_ACTIVATIONS = ("relu", "leaky_relu")
OUTPUT_ACTIVATIONS = ("identity", "relu", "tanh")
LEAKY_SLOPE = 0.2
EVAL_CHUNK = 65_536  # rows per forward pass in Net.__call__


@dataclass(frozen=True)
class LatentPrior:
    kind: str = "gaussian"  # "gaussian" or "uniform" on [-1, 1]^d
    dim: int = 2

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise ConfigError(f"unknown prior kind {self.kind!r}")
        if self.dim < 1:
            raise ConfigError("prior dimension must be >= 1")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return prior_sample(self, n, rng)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim}


def prior_sample(prior: LatentPrior, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. latent vectors, shape ``(n, d)``."""
    if n < 0:
        raise ConfigError("sample count must be non-negative")
    if prior.kind == "gaussian":
        return rng.standard_normal((n, prior.dim))
    return rng.uniform(-1.0, 1.0, size=(n, prior.dim))


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths include the input and output dimensions."""

    widths: Tuple[int, ...]
    hidden: str = "relu"
    output: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 3:
            raise ConfigError("an MLP needs at least one hidden layer")
        if any(w < 1 for w in self.widths):
            raise ConfigError(f"layer widths must be positive: {self.widths}")
        if self.hidden not in HIDDEN_ACTIVATIONS:
            raise ConfigError(f"unknown hidden activation {self.hidden!r}")
        if self.output not in OUTPUT_ACTIVATIONS:
            raise ConfigError(f"unknown output activation {self.output!r}")

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @classmethod
    def make(cls, in_dim: int, hidden_widths: Sequence[int], out_dim: int, **kw) -> "MlpSpec":
        return cls((in_dim, *hidden_widths, out_dim), **kw)

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "hidden": self.hidden, "output": self.output}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(tuple(d["widths"]), d.get("hidden", "relu"), d.get("output", "identity"))


@dataclass
class MlpParams:
    weights: List[np.ndarray]
    biases: List[np.ndarray]  # each (1, fan_out)

    def arrays(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "MlpParams":
        arrays = list(arrays)
        return cls(arrays[0::2], arrays[1::2])

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def check(self, spec: MlpSpec) -> None:
        if len(self.weights) != spec.n_layers or len(self.biases) != spec.n_layers:
            raise ConfigError("parameter count does not match the MLP spec")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (spec.widths[i], spec.widths[i + 1]) or b.shape != (1, spec.widths[i + 1]):
                raise ConfigError(f"layer {i}: shapes {w.shape}, {b.shape} do not match spec {spec.widths}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ConfigError(f"layer {i}: non-finite parameters")

    def equals(self, other: "MlpParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


def mlp_init(spec: MlpSpec, seed) -> MlpParams:
    """He-normal weights (std sqrt(2 / fan_in)) and zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros((1, fan_out)))
    return MlpParams(weights, biases)


def param_names(prefix: str, spec: MlpSpec) -> List[str]:
    names = []
    for i in range(spec.n_layers):
        names += [f"{prefix}.W{i}", f"{prefix}.b{i}"]
    return names


def param_feed(prefix: str, params: MlpParams) -> Dict[str, np.ndarray]:
    names = [f"{prefix}.{k}{i}" for i in range(len(params.weights)) for k in ("W", "b")]
    return dict(zip(names, params.arrays()))


def param_inputs(graph: ad.Graph, prefix: str, spec: MlpSpec) -> List[ad.Node]:
    return [graph.input(name) for name in param_names(prefix, spec)]


def build_mlp(x: ad.Node, spec: MlpSpec, params: Sequence[ad.Node]) -> ad.Node:
    """Wire an MLP into ``x``'s graph using the parameter nodes ``params``."""
    h = x
    last = spec.n_layers - 1
    for i in range(spec.n_layers):
        h = ad.add_bias(h @ params[2 * i], params[2 * i + 1])
        act = spec.hidden if i < last else spec.output
        if act == "relu":
            h = ad.relu(h)
        elif act == "leaky_relu":
            h = ad.leaky_relu(h, LEAKY_SLOPE)
        elif act == "tanh":
            h = ad.tanh(h)
    return h


class _ForwardGraph:
    """Cached graph computing an MLP output and the gradient of its row sum."""

    def __init__(self, spec: MlpSpec):
        g = ad.Graph()
        self.graph = g
        self.x = g.input("x")
        self.params = param_inputs(g, "net", spec)
        self.out = build_mlp(self.x, spec, self.params)
        self.input_grad = ad.gradients(ad.sum_(self.out), [self.x])[0]


@functools.lru_cache(maxsize=None)
def _forward_graph(spec: MlpSpec) -> _ForwardGraph:
    return _ForwardGraph(spec)


@dataclass
class Net:
    """An MLP together with its parameters."""

    spec: MlpSpec
    params: MlpParams

    def _feed(self, x) -> dict:
        x = ad.as_tensor(x, "x")
        if x.shape[1] != self.spec.in_dim:
            raise ConfigError(f"input has {x.shape[1]} columns, network expects {self.spec.in_dim}")
        feed = param_feed("net", self.params)
        feed["x"] = x
        return feed

    def _chunked(self, x, node_of) -> np.ndarray:
        # every intermediate is kept during evaluation, so very large batches go in slices
        fg = _forward_graph(self.spec)
        feed = self._feed(x)
        x = feed["x"]
        if len(x) <= EVAL_CHUNK:
            return ad.eval_node(fg.graph, feed, node_of(fg))
        parts = []
        for i in range(0, len(x), EVAL_CHUNK):
            feed["x"] = x[i:i + EVAL_CHUNK]
            parts.append(ad.eval_node(fg.graph, feed, node_of(fg)))
        return np.concatenate(parts)

    def __call__(self, x) -> np.ndarray:
        return self._chunked(x, lambda fg: fg.out)

    def input_gradient(self, x) -> np.ndarray:
        """Per-row gradient of a scalar-output network with respect to its input."""
        if self.spec.out_dim != 1:
            raise ConfigError("input_gradient needs a scalar-output network")
        return self._chunked(x, lambda fg: fg.input_grad)

    def copy(self) -> "Net":
        return Net(self.spec, self.params.copy())


def generator_forward(G: Net, z) -> np.ndarray:
    return G(z)


def critic_forward(D: Net, x) -> np.ndarray:
    return D(x)


def importance_forward(w: Net, z) -> np.ndarray:
    return w(z)


# --------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> List[np.ndarray]:
    """One bias-corrected Adam descent step; returns new arrays and updates ``state``."""
    if len(params) != len(grads):
        raise ConfigError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or state.m[i].shape != p.shape:
            raise ConfigError(f"Adam: shape mismatch at slot {i}: {p.shape} vs {g.shape}")
        m = state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        v = state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        out.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    return out


class Optimizer:
    """Adam bound to one network's parameter list."""

    def __init__(self, lr: float, betas: Tuple[float, float]):
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1])

    def step(self, params: MlpParams, grads: Sequence[np.ndarray]) -> MlpParams:
        return MlpParams.from_arrays(adam_step(params.arrays(), grads, self.state))
