"""Dense feed-forward networks, Adam, and seeded random streams.

Everything learned in the package (actor, critic, dynamics model, trainer
Q-network, REINFORCE policy) is an :class:`Mlp`.  Parameters live in one flat
float64 vector; per-layer weight and bias arrays are views into it, so an
optimizer can update the flat vector while the forward pass reads the views.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("identity", "tanh")


class RngStream:
    """Seeded source of randomness. All stochastic code draws from one of these."""

    def __init__(self, seed: int | np.random.SeedSequence):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)
        self.seed = self._seq.entropy
        self.gen = np.random.Generator(np.random.PCG64(self._seq))

    def uniform(self) -> float:
        """One draw from [0, 1)."""
        return float(self.gen.random())

    def uniform_array(self, low, high) -> np.ndarray:
        low = np.asarray(low, dtype=np.float64)
        high = np.asarray(high, dtype=np.float64)
        return low + (high - low) * self.gen.random(low.shape)

    def normal(self, size=None) -> np.ndarray:
        return self.gen.standard_normal(size)

    def integers(self, n: int, size=None):
        """Uniform integer(s) in [0, n)."""
        return self.gen.integers(0, n, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def spawn(self, n: int) -> list["RngStream"]:
        return [RngStream(s) for s in self._seq.spawn(n)]


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # derivative w.r.t. pre-activation z, given a = act(z)
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


class Mlp:
    """Fully connected network with a flat parameter vector.

    ``layer_sizes`` lists every width including input and output, e.g.
    ``(3, 64, 64, 1)``. Weight ``k`` has shape ``(layer_sizes[k], layer_sizes[k+1])``
    so a batch ``x`` of shape ``(B, in)`` maps as ``x @ W + b``.
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        rng: RngStream | None = None,
        hidden_activation: str = "tanh",
        output_activation: str = "identity",
    ):
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {layer_sizes!r}")
        if hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {hidden_activation!r}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.layer_sizes = sizes
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation

        n = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
        self.params = np.zeros(n, dtype=np.float64)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        self._bind_views()
        if rng is not None:
            self.init_params(rng)

    def _bind_views(self) -> None:
        self.weights.clear()
        self.biases.clear()
        off = 0
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(self.params[off:off + a * b].reshape(a, b))
            off += a * b
            self.biases.append(self.params[off:off + b])
            off += b

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def init_params(self, rng: RngStream) -> None:
        """Uniform in +-1/sqrt(fan_in) for weights and biases of each layer."""
        for w, b in zip(self.weights, self.biases):
            bound = 1.0 / np.sqrt(w.shape[0])
            w[...] = rng.uniform_array(np.full(w.shape, -bound), np.full(w.shape, bound))
            b[...] = rng.uniform_array(np.full(b.shape, -bound), np.full(b.shape, bound))

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != self.params.shape:
            raise ValueError(f"expected {self.params.shape} parameters, got {flat.shape}")
        self.params[...] = flat

    def get_params(self) -> np.ndarray:
        return self.params.copy()

    def same_architecture(self, other: "Mlp") -> bool:
        return (
            self.layer_sizes == other.layer_sizes
            and self.hidden_activation == other.hidden_activation
            and self.output_activation == other.output_activation
        )

    def clone(self) -> "Mlp":
        net = Mlp(self.layer_sizes, None, self.hidden_activation, self.output_activation)
        net.params[...] = self.params
        return net

    def _check_input(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"input shape {x.shape} does not match input size {self.n_in}")
        return x, single

    def _forward_cache(self, x: np.ndarray):
        zs, acts = [], [x]
        last = len(self.weights) - 1
        a = x
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            kind = self.output_activation if k == last else self.hidden_activation
            a = _activate(kind, z)
            zs.append(z)
            acts.append(a)
        return zs, acts

    def forward(self, x) -> np.ndarray:
        """Evaluate the network on one input vector or a ``(B, in)`` batch."""
        x, single = self._check_input(x)
        _, acts = self._forward_cache(x)
        return acts[-1][0] if single else acts[-1]

    __call__ = forward

    def forward_cached(self, x) -> tuple[np.ndarray, tuple]:
        """Batch forward pass that also returns the activations :meth:`backprop` can reuse."""
        x, _ = self._check_input(x)
        cache = self._forward_cache(x)
        return cache[1][-1], cache

    def backprop(self, x, output_gradient, cache: tuple | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Reverse-mode gradients of ``sum(output * output_gradient)``.

        Returns ``(param_grads, input_grad)``. ``param_grads`` is laid out like
        :attr:`params`; for a batch the contributions of all rows are summed.
        ``cache`` must come from :meth:`forward_cached` on the same ``x`` and
        unchanged parameters.
        """
        x, single = self._check_input(x)
        g = np.asarray(output_gradient, dtype=np.float64)
        if single:
            g = g[None, :] if g.ndim == 1 else g
        if g.shape != (x.shape[0], self.n_out):
            raise ValueError(f"output gradient shape {g.shape} does not match {(x.shape[0], self.n_out)}")
        zs, acts = cache if cache is not None else self._forward_cache(x)
        grads = np.empty_like(self.params)
        views = _views(grads, self.layer_sizes)
        last = len(self.weights) - 1
        delta = g
        for k in range(last, -1, -1):
            kind = self.output_activation if k == last else self.hidden_activation
            delta = delta * _activation_grad(kind, zs[k], acts[k + 1])
            gw, gb = views[k]
            np.matmul(acts[k].T, delta, out=gw)
            gb[...] = delta.sum(axis=0)
            delta = delta @ self.weights[k].T
        return grads, (delta[0] if single else delta)


def _views(flat: np.ndarray, sizes: tuple[int, ...]) -> list[tuple[np.ndarray, np.ndarray]]:
    out, off = [], 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        w = flat[off:off + a * b].reshape(a, b)
        off += a * b
        out.append((w, flat[off:off + b]))
        off += b
    return out


def unflatten(flat: np.ndarray, sizes: Sequence[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat parameter vector into per-layer ``(weight, bias)`` copies."""
    return [(w.copy(), b.copy()) for w, b in _views(np.asarray(flat, dtype=np.float64), tuple(sizes))]


def flatten(layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in layers])


@dataclass
class AdamState:
    n_params: int
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: np.ndarray = field(default=None, repr=False)
    second_moment: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.first_moment is None:
            self.first_moment = np.zeros(self.n_params)
        if self.second_moment is None:
            self.second_moment = np.zeros(self.n_params)

    def reset(self) -> None:
        self.first_moment[...] = 0.0
        self.second_moment[...] = 0.0
        self.step_count = 0


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, learning_rate: float) -> np.ndarray:
    """Bias-corrected Adam update of ``params`` in place; returns ``params``."""
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    if params.shape != grads.shape or params.size != state.n_params:
        raise ValueError("params, grads and optimizer state disagree in size")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradient passed to adam_step")
    state.step_count += 1
    t = state.step_count
    m, v = state.first_moment, state.second_moment
    m *= state.beta1
    m += (1.0 - state.beta1) * grads
    v *= state.beta2
    v += (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    params -= learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params
