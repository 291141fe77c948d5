"""Minimal reverse-mode autodiff for the generator/predictor pair.

Covers exactly the operations the two training losses need: dense layers,
relu/tanh, softmax, elementwise arithmetic, reductions, the masked
gumbel-softmax column sampler and a straight-through estimator, plus an
adaptive-moment optimizer. float64 throughout; trajectories are bit
reproducible for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NonFiniteGradientError

_MASK_PENALTY = -1e9


class Tensor:
    """Node in the computation tape; grad accumulates during backward()."""

    __slots__ = ("data", "grad", "_parents", "_backward", "requires_grad")

    def __init__(self, data, parents=(), backward=None, requires_grad=True):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def backward(self):
        if self.data.size != 1:
            raise ContractError("backward() expects a scalar loss")
        order = []
        seen = set()

        def topo(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                topo(p)
            order.append(node)

        topo(self)
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    # sugar used by the training code
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, requires_grad=False) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad=requires_grad)


def constant(x) -> Tensor:
    return Tensor(x, requires_grad=False)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary_op(a, b, out_data, da, db) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(out_data, parents=(a, b))

    def backward():
        if a.requires_grad:
            a.grad += _unbroadcast(da(out.grad), a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(db(out.grad), b.data.shape)

    out._backward = backward
    return out


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _binary_op(a, b, a.data + b.data, lambda g: g, lambda g: g)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _binary_op(a, b, a.data - b.data, lambda g: g, lambda g: -g)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _binary_op(a, b, a.data * b.data, lambda g: g * b.data, lambda g: g * a.data)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _binary_op(
        a, b, a.data / b.data,
        lambda g: g / b.data,
        lambda g: -g * a.data / (b.data * b.data),
    )


def neg(a):
    a = as_tensor(a)
    out = Tensor(-a.data, parents=(a,))

    def backward():
        if a.requires_grad:
            a.grad += -out.grad

    out._backward = backward
    return out


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ContractError(f"matmul shapes do not conform: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, parents=(a, b))

    def backward():
        if a.requires_grad:
            a.grad += out.grad @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ out.grad

    out._backward = backward
    return out


def relu(a):
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), parents=(a,))

    def backward():
        if a.requires_grad:
            a.grad += out.grad * (a.data > 0.0)

    out._backward = backward
    return out


def tanh(a):
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data), parents=(a,))

    def backward():
        if a.requires_grad:
            a.grad += out.grad * (1.0 - out.data * out.data)

    out._backward = backward
    return out


def exp(a):
    a = as_tensor(a)
    out = Tensor(np.exp(a.data), parents=(a,))

    def backward():
        if a.requires_grad:
            a.grad += out.grad * out.data

    out._backward = backward
    return out


def square(a):
    a = as_tensor(a)
    out = Tensor(a.data * a.data, parents=(a,))

    def backward():
        if a.requires_grad:
            a.grad += out.grad * 2.0 * a.data

    out._backward = backward
    return out


def sqrt(a):
    """Elementwise square root; the derivative at exactly 0 is defined as 0.

    The zero convention keeps an RMSE loss finite-gradient at a perfect fit.
    """
    a = as_tensor(a)
    root = np.sqrt(a.data)
    out = Tensor(root, parents=(a,))

    def backward():
        if a.requires_grad:
            with np.errstate(divide="ignore", invalid="ignore"):
                d = np.where(root > 0.0, 0.5 / root, 0.0)
            a.grad += out.grad * d

    out._backward = backward
    return out


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), parents=(a,))

    def backward():
        if not a.requires_grad:
            return
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.grad += np.broadcast_to(g, a.data.shape)

    out._backward = backward
    return out


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    size = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / size)


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s, parents=(a,))

    def backward():
        if a.requires_grad:
            g = out.grad
            inner = (g * s).sum(axis=axis, keepdims=True)
            a.grad += s * (g - inner)

    out._backward = backward
    return out


def slice_cols(a, start, stop):
    a = as_tensor(a)
    out = Tensor(a.data[:, start:stop], parents=(a,))

    def backward():
        if a.requires_grad:
            a.grad[:, start:stop] += out.grad

    out._backward = backward
    return out


def concat_cols(parts):
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=1), parents=tuple(parts))
    widths = [p.data.shape[1] for p in parts]

    def backward():
        offset = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p.grad += out.grad[:, offset : offset + w]
            offset += w

    out._backward = backward
    return out


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward the discrete values, route the gradient to the relaxation."""
    if hard.shape != soft.data.shape:
        raise ContractError(f"straight-through shapes differ: {hard.shape} vs {soft.data.shape}")
    out = Tensor(hard, parents=(soft,))

    def backward():
        if soft.requires_grad:
            soft.grad += out.grad

    out._backward = backward
    return out


def cosine_rows(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Mean over rows of the cosine similarity between two (B, F) tensors."""
    dot = tsum(mul(a, b), axis=1)
    na = sqrt(add(tsum(square(a), axis=1), eps))
    nb = sqrt(add(tsum(square(b), axis=1), eps))
    return tmean(div(dot, mul(na, nb)))


# -- layers -----------------------------------------------------------------------

_ACTIVATIONS = {"relu": relu, "tanh": tanh}


class MLP:
    """Dense stack with the chosen nonlinearity between layers, linear output."""

    def __init__(self, sizes, activation: str = "relu", rng: np.random.Generator | None = None):
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ContractError(f"bad layer sizes {sizes}")
        if activation not in _ACTIVATIONS:
            raise ContractError(f"unknown activation {activation!r}")
        rng = rng or np.random.default_rng()
        self.sizes = tuple(sizes)
        self.activation = activation
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append(Tensor(rng.normal(0.0, scale, (fan_in, fan_out))))
            self.biases.append(Tensor(np.zeros(fan_out)))

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != self.sizes[0]:
            raise ContractError(
                f"input shape {x.data.shape} does not match first layer size {self.sizes[0]}"
            )
        act = _ACTIVATIONS[self.activation]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = add(matmul(h, w), b)
            if i < last:
                h = act(h)
        return h

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def state_dict(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"layer{i}.W"] = w.data
            out[f"layer{i}.b"] = b.data
        return out

    def load_state_dict(self, state: dict) -> None:
        for i in range(len(self.weights)):
            self.weights[i].data = np.asarray(state[f"layer{i}.W"], dtype=np.float64)
            self.biases[i].data = np.asarray(state[f"layer{i}.b"], dtype=np.float64)


def save_params(path, state: dict) -> None:
    """Checkpoint as JSON: {parameter name: nested float lists}."""
    with open(path, "w") as fh:
        json.dump({k: np.asarray(v).tolist() for k, v in state.items()}, fh)
        fh.write("\n")


def load_params(path) -> dict:
    with open(path) as fh:
        return {k: np.asarray(v, dtype=np.float64) for k, v in json.load(fh).items()}


# -- optimizer --------------------------------------------------------------------


@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Adaptive-moment optimizer over a fixed parameter list."""

    def __init__(self, params, cfg: AdamConfig = AdamConfig()):
        self.params = list(params)
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        """One update from the accumulated grads.

        Raises NonFiniteGradientError (state untouched) so the caller can
        skip the offending batch.
        """
        grads = []
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError("non-finite gradient; skipping batch")
            grads.append(g)
        self.t += 1
        c = self.cfg
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p.data = p.data - c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


# -- masked gumbel-softmax sequence sampler ----------------------------------------


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    return -np.log(-np.log(u + 1e-20) + 1e-20)


def masked_gumbel_sequence(
    logits: Tensor,
    automaton,
    temperature: float = 1.0,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
):
    """Sample token columns left to right under the grammar legality mask.

    Args:
        logits: (batch, S*D) tensor, column k occupying [k*D, (k+1)*D).
        automaton: a MaskAutomaton for the target vocabulary and length S.
        temperature: softmax temperature, > 0.
        rng: noise source; required unless noise is given.
        noise: optional precomputed (batch, S, D) gumbel noise; pass zeros
            to disable stochasticity (the hard path is then a masked argmax).

    Returns:
        (soft, hard, token_ids): soft is the (batch, S*D) relaxed tensor on
        the gradient path, hard the matching {0,1} ndarray (every sequence
        decodes to a valid program), token_ids the (batch, S) id matrix.
    """
    if temperature <= 0:
        raise ContractError(f"temperature must be > 0, got {temperature}")
    D = automaton.vocab.size
    S = automaton.max_len
    batch = logits.data.shape[0]
    if logits.data.shape[1] != S * D:
        raise ContractError(f"logits shape {logits.data.shape} does not match S*D = {S * D}")
    if noise is None:
        if rng is None:
            raise ContractError("pass an rng or precomputed noise")
        noise = gumbel_noise(rng, (batch, S, D))

    state = automaton.initial_state(batch)
    soft_cols = []
    hard = np.zeros((batch, S, D))
    token_ids = np.zeros((batch, S), dtype=np.int64)
    for k in range(S):
        mask = automaton.column_mask(state, k)
        penalty = np.where(mask, 0.0, _MASK_PENALTY)
        col = slice_cols(logits, k * D, (k + 1) * D)
        noisy = mul(add(col, penalty + noise[:, k, :]), 1.0 / temperature)
        soft_col = softmax(noisy, axis=1)
        ids = np.argmax(soft_col.data, axis=1)
        hard[np.arange(batch), k, ids] = 1.0
        token_ids[:, k] = ids
        soft_cols.append(soft_col)
        state = automaton.step(state, ids)
    soft = concat_cols(soft_cols)
    return soft, hard.reshape(batch, S * D), token_ids


def gumbel_softmax_masked(
    logits: np.ndarray,
    automaton,
    temperature: float = 1.0,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
):
    """Single-program convenience wrapper over D x S logits.

    Returns (relaxed D x S, hard D x S); hard always decodes to a valid
    program. Use masked_gumbel_sequence directly for batched training.
    """
    logits = np.asarray(logits, dtype=np.float64)
    D, S = logits.shape
    flat = Tensor(logits.T.reshape(1, S * D), requires_grad=False)
    soft, hard, _ = masked_gumbel_sequence(flat, automaton, temperature, rng, noise)
    return (
        soft.data.reshape(S, D).T,
        hard.reshape(S, D).T,
    )
