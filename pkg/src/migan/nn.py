"""
Small multilayer perceptrons with hand-written reverse-mode gradients.

Parameters live in one flat float64 buffer: for each layer, the weight
matrix (d_out x d_in, row-major) followed by the bias. Every gradient
returned here uses the same layout, so optimizers and checkpoints only
ever see a 1-D array.

Batched functions take inputs of shape (B, d_in) and return gradients
*summed* over the batch; callers scale the upstream to get means.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

ACTIVATIONS = ("identity", "relu", "tanh")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}
_PIECEWISE_LINEAR = {"identity", "relu"}

CHECKPOINT_MAGIC = b"MIGANMLP"
CHECKPOINT_VERSION = 1


class MlpParams:
    """Weights and biases of a fully connected network.

    Parameters
    ----------
    sizes : sequence of int
        Layer widths ``(d_0, d_1, ..., d_L)``; ``d_0`` is the input size.
    activations : sequence of str
        One tag per linear layer, from ``identity``, ``relu``, ``tanh``.
    data : ndarray, optional
        Flat parameter buffer (copied). Zeros if omitted.
    """

    def __init__(self, sizes: Sequence[int], activations: Sequence[str],
                 data: Optional[np.ndarray] = None):
        self.sizes = tuple(int(s) for s in sizes)
        self.activations = tuple(activations)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"bad layer sizes {self.sizes}")
        if len(self.activations) != len(self.sizes) - 1:
            raise ValueError("need one activation per layer")
        for a in self.activations:
            if a not in _ACT_CODE:
                raise ValueError(f"unknown activation {a!r}")
        n = self.n_params
        if data is None:
            self.data = np.zeros(n)
        else:
            data = np.array(data, dtype=float).reshape(-1)
            if data.size != n:
                raise ValueError(f"expected {n} parameters, got {data.size}")
            self.data = data
        self.weights, self.biases = self._views(self.data)

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def d_in(self) -> int:
        return self.sizes[0]

    @property
    def d_out(self) -> int:
        return self.sizes[-1]

    @property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.weights, self.biases))

    def _views(self, flat):
        weights, biases = [], []
        off = 0
        for d_in, d_out in zip(self.sizes[:-1], self.sizes[1:]):
            weights.append(flat[off:off + d_out * d_in].reshape(d_out, d_in))
            off += d_out * d_in
            biases.append(flat[off:off + d_out])
            off += d_out
        return weights, biases

    def unflatten(self, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """View a flat gradient as per-layer ``(dW, db)`` pairs."""
        w, b = self._views(np.asarray(flat))
        return list(zip(w, b))

    def copy(self) -> "MlpParams":
        return MlpParams(self.sizes, self.activations, self.data)

    def with_data(self, data: np.ndarray) -> "MlpParams":
        return MlpParams(self.sizes, self.activations, data)

    def __repr__(self):
        return f"MlpParams(sizes={self.sizes}, activations={self.activations})"

    # checkpoint format:
    #   magic "MIGANMLP" | u16 version | u16 n_layers
    #   per layer: u32 d_out | u32 d_in | u8 activation code (0 identity, 1 relu, 2 tanh)
    #   float64 little-endian parameters in flat order (W row-major, then b, per layer)
    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack("<HH", CHECKPOINT_VERSION, self.n_layers))
        for d_in, d_out, act in zip(self.sizes[:-1], self.sizes[1:], self.activations):
            buf.write(struct.pack("<IIB", d_out, d_in, _ACT_CODE[act]))
        buf.write(self.data.astype("<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MlpParams":
        params, used = cls._read(blob, 0)
        if used != len(blob):
            raise ValueError("trailing bytes after MLP checkpoint")
        return params

    @classmethod
    def _read(cls, blob: bytes, off: int) -> tuple["MlpParams", int]:
        if blob[off:off + 8] != CHECKPOINT_MAGIC:
            raise ValueError("not an MLP checkpoint")
        off += 8
        version, n_layers = struct.unpack_from("<HH", blob, off)
        off += 4
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        sizes, acts = [], []
        for _ in range(n_layers):
            d_out, d_in, code = struct.unpack_from("<IIB", blob, off)
            off += 9
            if not sizes:
                sizes.append(d_in)
            elif sizes[-1] != d_in:
                raise ValueError("layer dimensions do not chain")
            sizes.append(d_out)
            acts.append(ACTIVATIONS[code])
        n = sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))
        data = np.frombuffer(blob, dtype="<f8", count=n, offset=off).astype(float)
        return cls(sizes, acts, data), off + 8 * n


def init_mlp(sizes: Sequence[int], hidden: str, rng: np.random.Generator,
             output: str = "identity") -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    acts = [hidden] * (len(sizes) - 2) + [output]
    params = MlpParams(sizes, acts)
    for W in params.weights:
        d_out, d_in = W.shape
        limit = np.sqrt(6.0 / (d_in + d_out))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return params


def generator_net(p: int, rng: np.random.Generator, width: Optional[int] = None) -> MlpParams:
    """``p -> h -> h -> p`` tanh network; ``h`` defaults to ``p``."""
    h = width or p
    return init_mlp((p, h, h, p), "tanh", rng)


def critic_net(p: int, rng: np.random.Generator, width: Optional[int] = None) -> MlpParams:
    """``p -> h -> h -> 1`` relu network; ``h`` defaults to ``p``."""
    h = width or p
    return init_mlp((p, h, h, 1), "relu", rng)


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_deriv(name, z, a):
    # relu'(0) is taken as 0
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(float)
    return np.ones_like(z)


def forward_cache(params: MlpParams, X: np.ndarray):
    """Batched forward pass keeping pre-activations and activations."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.d_in:
        raise ValueError(f"input shape {X.shape} does not match d_in={params.d_in}")
    acts, zs = [X], []
    a = X
    for W, b, name in zip(params.weights, params.biases, params.activations):
        z = a @ W.T + b
        a = _act(name, z)
        zs.append(z)
        acts.append(a)
    return acts, zs


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on one vector or a (B, d_in) batch."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return forward_cache(params, x[None, :])[0][-1][0]
    return forward_cache(params, x)[0][-1]


def backprop(params: MlpParams, acts, zs, upstream: np.ndarray,
             want_params: bool = True, want_input: bool = False):
    """Reverse pass from ``upstream`` = dL/d(output), shape (B, d_out).

    Returns ``(flat_grad or None, input_grad or None)``.
    """
    grad = np.zeros(params.n_params) if want_params else None
    gw, gb = params._views(grad) if want_params else (None, None)
    delta = np.asarray(upstream, dtype=float)
    for l in range(params.n_layers - 1, -1, -1):
        delta = delta * _act_deriv(params.activations[l], zs[l], acts[l + 1])
        if want_params:
            gw[l][...] = delta.T @ acts[l]
            gb[l][...] = delta.sum(axis=0)
        if l > 0 or want_input:
            delta = delta @ params.weights[l]
    return grad, (delta if want_input else None)


def grad_params(params: MlpParams, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Flat gradient of ``upstream . output`` w.r.t. the parameters.

    For a batch input, ``upstream`` has shape (B, d_out) and the result is
    summed over rows.
    """
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if x.ndim == 1:
        x, upstream = x[None, :], upstream.reshape(1, -1)
    if upstream.shape != (x.shape[0], params.d_out):
        raise ValueError(f"upstream shape {upstream.shape} does not match output")
    acts, zs = forward_cache(params, x)
    return backprop(params, acts, zs, upstream)[0]


def grad_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Gradient of a scalar-output network w.r.t. its input (row-wise for batches)."""
    if params.d_out != 1:
        raise ValueError("grad_input needs a scalar-output network")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    acts, zs = forward_cache(params, X)
    g = backprop(params, acts, zs, np.ones((X.shape[0], 1)),
                 want_params=False, want_input=True)[1]
    return g[0] if single else g


class PenaltyResult(NamedTuple):
    value: float
    grad: np.ndarray
    zero_norm: int


def _check_penalty_net(params: MlpParams):
    if params.d_out != 1:
        raise ValueError("gradient penalty needs a scalar-output critic")
    bad = [a for a in params.activations if a not in _PIECEWISE_LINEAR]
    if bad:
        raise ValueError(f"gradient penalty supports relu/identity layers only, got {bad}")


def penalty_from_cache(params: MlpParams, acts, zs, lam: float, scale: float = 1.0):
    """Gradient penalty on cached rows; see :func:`grad_penalty_params`.

    Returns ``(sum of penalties, scale * summed flat grad, zero-norm count)``.
    """
    L = params.n_layers
    B = acts[0].shape[0]
    slopes = [_act_deriv(params.activations[l], zs[l], acts[l + 1]) for l in range(L)]
    # deltas[l] = d output / d z_l, row-wise
    deltas = [None] * L
    deltas[L - 1] = slopes[L - 1]
    for l in range(L - 2, -1, -1):
        deltas[l] = slopes[l] * (deltas[l + 1] @ params.weights[l + 1])
    g = deltas[0] @ params.weights[0]
    norm = np.sqrt(np.einsum("ij,ij->i", g, g))
    value = lam * np.sum((norm - 1.0) ** 2)

    zero = norm == 0.0
    safe = np.where(zero, 1.0, norm)
    coef = np.where(zero, 0.0, 2.0 * lam * (norm - 1.0) / safe) * scale
    c = coef[:, None] * g

    # activation slopes are locally constant in the parameters, so only the
    # weights on the path output -> input pick up gradient; biases get none
    grad = np.zeros(params.n_params)
    gw, _ = params._views(grad)
    for l in range(L):
        gw[l][...] = deltas[l].T @ c
        if l < L - 1:
            c = slopes[l] * (c @ params.weights[l].T)
    return value, grad, int(zero.sum())


def grad_penalty_params(params: MlpParams, x_tilde: np.ndarray, lam: float) -> PenaltyResult:
    """``lam * (||grad_x D(x_tilde)||_2 - 1)^2`` and its parameter gradient.

    Differentiates through the input gradient (double backprop). Only
    piecewise-linear activations are supported, whose second derivative
    vanishes almost everywhere. At ``||grad|| = 0`` the norm is not
    differentiable; that row contributes a zero gradient and is counted in
    ``zero_norm``. A batch input returns the batch mean.
    """
    _check_penalty_net(params)
    x = np.asarray(x_tilde, dtype=float)
    X = x[None, :] if x.ndim == 1 else x
    acts, zs = forward_cache(params, X)
    B = X.shape[0]
    value, grad, zero = penalty_from_cache(params, acts, zs, lam, scale=1.0 / B)
    return PenaltyResult(value / B, grad, zero)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n_params: int, lr=1e-3, beta1=0.5, beta2=0.9, eps=1e-8) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0, lr, beta1, beta2, eps)

    def copy(self) -> "AdamState":
        return AdamState(self.first_moment.copy(), self.second_moment.copy(),
                         self.step_count, self.lr, self.beta1, self.beta2, self.eps)


def adam_update_(data, grad, state: AdamState) -> None:
    """In-place bias-corrected Adam step on ``data`` and ``state``."""
    from . import kernels
    state.step_count += 1
    kernels.adam_inplace(data, np.asarray(grad, dtype=float), state.first_moment,
                         state.second_moment, state.step_count, state.lr,
                         state.beta1, state.beta2, state.eps)


def adam_step(state: AdamState, params: MlpParams, grads: np.ndarray):
    """Functional Adam step; returns ``(new_params, new_state)``."""
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.data.shape:
        raise ValueError("gradient layout does not match parameters")
    new_state = state.copy()
    new_params = params.copy()
    adam_update_(new_params.data, grads, new_state)
    return new_params, new_state
