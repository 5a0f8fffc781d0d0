"""Dense layers, MADE masks and the Adam optimizer on top of ``autodiff``."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor, linear

ACTIVATIONS = ("tanh", "relu", "identity")


class DenseLayer:
    """Affine layer with optional fixed binary connectivity mask.

    ``weight`` has shape (out, in) and ``mask`` (if any) the same shape.
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray, activation: str = "tanh",
                 mask: np.ndarray | None = None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(bias, requires_grad=True)
        self.activation = activation
        self.mask = None if mask is None else np.asarray(mask, dtype=np.float64)

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator, activation="tanh",
             mask=None, zero=False) -> "DenseLayer":
        if zero:
            w = np.zeros((n_out, n_in))
        else:
            limit = np.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-limit, limit, size=(n_out, n_in))
        return cls(w, np.zeros(n_out), activation, mask)

    def __call__(self, x: Tensor) -> Tensor:
        y = linear(x, self.weight, self.bias, self.mask)
        if self.activation == "tanh":
            return y.tanh()
        if self.activation == "relu":
            return y.relu()
        return y

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class MLP:
    def __init__(self, layers: Sequence[DenseLayer]):
        self.layers = list(layers)

    @classmethod
    def init(cls, n_in: int, hidden: Sequence[int], n_out: int, rng: np.random.Generator,
             activation="tanh", zero_last=True, masks: Sequence[np.ndarray] | None = None) -> "MLP":
        sizes = [n_in, *hidden, n_out]
        layers = []
        for i in range(len(sizes) - 1):
            last = i == len(sizes) - 2
            layers.append(DenseLayer.init(
                sizes[i], sizes[i + 1], rng,
                activation="identity" if last else activation,
                mask=None if masks is None else masks[i],
                zero=last and zero_last))
        return cls(layers)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


@dataclass(frozen=True)
class MadeMaskSet:
    """Degrees and masks of a MADE network.

    ``masks[i]`` has shape (out, in) for layer i; the final mask is shared
    by the mean and log-std output heads.
    """

    input_degrees: np.ndarray
    hidden_degrees: list[np.ndarray]
    masks: list[np.ndarray] = field(repr=False)

    @property
    def output_mask(self) -> np.ndarray:
        return self.masks[-1]

    @property
    def direct_mask(self) -> np.ndarray:
        """(D, D) input-to-output connectivity: output d sees input j iff degree(j) < degree(d)."""
        deg = self.input_degrees
        return (deg[:, None] > deg[None, :]).astype(np.float64)


def build_made_masks(dim: int, hidden: Sequence[int], order: Sequence[int] | None = None) -> MadeMaskSet:
    """Autoregressive masks: output d only sees inputs with degree < order(d).

    ``order`` holds the 1-based degree of each input; natural order if None.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if any(h < 1 for h in hidden):
        raise ValueError("hidden sizes must be >= 1")
    in_deg = np.arange(1, dim + 1) if order is None else np.asarray(order, dtype=int)
    if sorted(in_deg.tolist()) != list(range(1, dim + 1)):
        raise ValueError("order must be a permutation of 1..D")
    cycle = max(dim - 1, 1)
    hid_deg = [np.arange(h) % cycle + 1 for h in hidden]
    masks = []
    prev = in_deg
    for deg in hid_deg:
        masks.append((deg[:, None] >= prev[None, :]).astype(np.float64))
        prev = deg
    masks.append((in_deg[:, None] > prev[None, :]).astype(np.float64))
    return MadeMaskSet(in_deg, hid_deg, masks)


@dataclass
class AdamState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> tuple[list[np.ndarray], AdamState]:
    if not state.m:
        state = AdamState(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])
    t = state.step + 1
    new_params, ms, vs = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        ms.append(m)
        vs.append(v)
    return new_params, AdamState(t, ms, vs)


class Adam:
    """In-place Adam over a list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self) -> None:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        values, self.state = adam_step([p.data for p in self.params], grads, self.state,
                                       self.lr, self.beta1, self.beta2, self.eps)
        for p, val in zip(self.params, values):
            p.data = val
            p.grad = None
