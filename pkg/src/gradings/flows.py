"""RealNVP and MAF density estimators.

Layers map data towards the base space in ``forward`` (the density
direction) and return the log-determinant of that map, so that

    log p(x) = log N(z; 0, I) + sum_k logdet_k.

``inverse`` maps base samples back to data space.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol

import numpy as np

from .autodiff import NumericError, Tensor, as_tensor, concat
from .nn import MLP, Adam, DenseLayer, build_made_masks

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


@dataclass
class FlowConfig:
    kind: str = "maf"  # "maf" | "realnvp"
    n_flows: int = 10
    hidden: tuple[int, ...] = (32, 32)
    epochs: int = 300
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    scale_bound: float = 2.0
    init: str = "identity"  # "identity" | "gaussian" (MAF only: first layer = Gaussian fit)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("maf", "realnvp"):
            raise ValueError(f"unknown flow kind {self.kind!r}")
        if self.init not in ("identity", "gaussian"):
            raise ValueError(f"unknown init {self.init!r}")
        self.hidden = tuple(int(h) for h in self.hidden)


def _std_normal_logpdf(z: Tensor) -> Tensor:
    d = z.shape[1]
    return z.square().sum(axis=1) * -0.5 - 0.5 * d * LOG_2PI


class Layer(Protocol):
    dim: int

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]: ...
    def inverse(self, y: np.ndarray) -> np.ndarray: ...
    def parameters(self) -> list[Tensor]: ...


class BoundedScale:
    """``bound * tanh(raw)`` with a learnable per-dimension bound."""

    def __init__(self, n: int, init: float):
        self.bound = Tensor(np.full(n, float(init)), requires_grad=True)

    def __call__(self, raw: Tensor) -> Tensor:
        return raw.tanh() * self.bound


class CouplingLayer:
    """Affine coupling: dims ``split:`` are scaled and shifted by nets of dims ``:split``."""

    def __init__(self, dim: int, split: int, scale_net: MLP, shift_net: MLP, scale: BoundedScale):
        if not 1 <= split < dim:
            raise ValueError(f"coupling split must satisfy 1 <= d < D, got d={split}, D={dim}")
        self.dim, self.split = dim, split
        self.scale_net, self.shift_net, self.scale = scale_net, shift_net, scale

    @classmethod
    def init(cls, dim, hidden, rng, scale_bound=2.0, split=None) -> "CouplingLayer":
        d = dim // 2 if split is None else split
        return cls(dim, d,
                   MLP.init(d, hidden, dim - d, rng),
                   MLP.init(d, hidden, dim - d, rng),
                   BoundedScale(dim - d, scale_bound))

    def conditioner(self, x_cond: Tensor) -> tuple[Tensor, Tensor]:
        """(log-scale, shift) for the transformed block."""
        return self.scale(self.scale_net(x_cond)), self.shift_net(x_cond)

    def forward(self, x):
        x = as_tensor(x)
        d = self.split
        x1, x2 = x[:, :d], x[:, d:]
        s, t = self.conditioner(x1)
        y2 = x2 * s.exp() + t
        return concat([x1, y2], axis=1), s.sum(axis=1)

    def inverse(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        d = self.split
        y1 = Tensor(y[:, :d])
        s, t = self.conditioner(y1)
        x2 = (y[:, d:] - t.data) * np.exp(-s.data)
        if not np.all(np.isfinite(x2)):
            raise NumericError("non-finite value in coupling inverse")
        return np.concatenate([y[:, :d], x2], axis=1)

    def parameters(self):
        return self.scale_net.parameters() + self.shift_net.parameters() + [self.scale.bound]


class MadeConditioner:
    """MADE network emitting (mu, alpha) for every dimension in one pass."""

    def __init__(self, dim: int, net: MLP, scale: BoundedScale, direct: DenseLayer | None = None):
        self.dim, self.net, self.scale, self.direct = dim, net, scale, direct

    @classmethod
    def init(cls, dim, hidden, rng, scale_bound=2.0, direct=True) -> "MadeConditioner":
        made = build_made_masks(dim, hidden)
        out_mask = np.vstack([made.output_mask, made.output_mask])
        net = MLP.init(dim, hidden, 2 * dim, rng, masks=[*made.masks[:-1], out_mask])
        skip = None
        if direct:
            skip = DenseLayer.init(dim, 2 * dim, rng, activation="identity",
                                   mask=np.vstack([made.direct_mask] * 2), zero=True)
        return cls(dim, net, BoundedScale(dim, scale_bound), skip)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        out = self.net(x)
        if self.direct is not None:
            out = out + self.direct(x)
        return out[:, :self.dim], self.scale(out[:, self.dim:])

    def parameters(self):
        extra = [] if self.direct is None else self.direct.parameters()
        return self.net.parameters() + extra + [self.scale.bound]


class CouplingConditioner:
    """Coupling nets seen as an autoregressive conditioner.

    Dimensions ``< split`` get mu = alpha = 0; the rest take the coupling's
    shift and log-scale, which depend on ``x[:split]`` only.
    """

    def __init__(self, coupling: CouplingLayer):
        self.coupling = coupling
        self.dim = coupling.dim

    def __call__(self, x: Tensor):
        d = self.coupling.split
        s, t = self.coupling.conditioner(x[:, :d])
        zeros = Tensor(np.zeros((x.shape[0], d)))
        return concat([zeros, t], axis=1), concat([zeros, s], axis=1)

    def parameters(self):
        return self.coupling.parameters()


class MafLayer:
    """Masked autoregressive affine layer.

    forward:  u_d = (x_d - mu_d(x_<d)) * exp(-alpha_d(x_<d)),  logdet = -sum alpha
    inverse:  x_d = u_d * exp(alpha_d(x_<d)) + mu_d(x_<d), one pass per dimension
    """

    def __init__(self, dim: int, conditioner: Callable):
        self.dim = dim
        self.conditioner = conditioner
        self.n_passes = 0

    @classmethod
    def init(cls, dim, hidden, rng, scale_bound=2.0) -> "MafLayer":
        return cls(dim, MadeConditioner.init(dim, hidden, rng, scale_bound))

    def forward(self, x):
        x = as_tensor(x)
        mu, alpha = self.conditioner(x)
        self.n_passes += 1
        return (x - mu) * (-alpha).exp(), -alpha.sum(axis=1)

    def inverse(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        x = np.zeros_like(u)
        for d in range(self.dim):
            mu, alpha = self.conditioner(Tensor(x))
            self.n_passes += 1
            x[:, d] = u[:, d] * np.exp(alpha.data[:, d]) + mu.data[:, d]
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite value in MAF inverse")
        return x

    def parameters(self):
        return self.conditioner.parameters()


@dataclass
class FlowModel:
    """Stack of bijections with coordinate permutations between them.

    ``permutations[k]`` is applied to the output of ``layers[k]`` for every
    layer but the last.
    """

    dim: int
    layers: list
    permutations: list[np.ndarray]
    config: FlowConfig = field(default_factory=FlowConfig)

    @classmethod
    def build(cls, dim: int, config: FlowConfig, rng: np.random.Generator | None = None) -> "FlowModel":
        rng = np.random.default_rng(config.seed) if rng is None else rng
        layers = []
        for _ in range(config.n_flows):
            if config.kind == "realnvp":
                layers.append(CouplingLayer.init(dim, config.hidden, rng, config.scale_bound))
            else:
                layers.append(MafLayer.init(dim, config.hidden, rng, config.scale_bound))
        perms = [np.arange(dim)[::-1].copy() for _ in range(max(config.n_flows - 1, 0))]
        return cls(dim, layers, perms, config)

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x) -> tuple[Tensor, list[Tensor]]:
        """Push data to the base space; returns (z, per-layer logdets)."""
        h = as_tensor(x)
        logdets = []
        for k, layer in enumerate(self.layers):
            h, ld = layer.forward(h)
            logdets.append(ld)
            if k < len(self.permutations):
                h = h[:, self.permutations[k]]
        return h, logdets

    def log_prob_tensor(self, x) -> Tensor:
        z, logdets = self.forward(x)
        out = _std_normal_logpdf(z)
        for ld in logdets:
            out = out + ld
        return out

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {x.shape[1]}")
        out = np.concatenate([self.log_prob_tensor(Tensor(x[i:i + 4096])).data
                              for i in range(0, len(x), 4096)]) if len(x) else np.empty(0)
        return out[0] if single else out

    def score(self, x: np.ndarray) -> np.ndarray:
        """Anomaly score: negative log-likelihood."""
        return -self.log_prob(x)

    def inverse(self, z: np.ndarray) -> np.ndarray:
        h = np.atleast_2d(np.asarray(z, dtype=np.float64))
        for k in range(len(self.layers) - 1, -1, -1):
            if k < len(self.permutations):
                h = h[:, np.argsort(self.permutations[k])]
            h = self.layers[k].inverse(h)
        return h

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.inverse(rng.standard_normal((n, self.dim)))

    def nll(self, x) -> Tensor:
        return -self.log_prob_tensor(x).mean()

    # -- serialization -----------------------------------------------------

    def state(self) -> tuple[dict, dict[str, np.ndarray]]:
        meta = {"dim": self.dim, "config": asdict(self.config)}
        arrays = {f"perm.{k}": p for k, p in enumerate(self.permutations)}
        for i, p in enumerate(self.parameters()):
            arrays[f"param.{i:04d}"] = p.data
        return meta, arrays

    @classmethod
    def from_state(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "FlowModel":
        cfg = FlowConfig(**meta["config"])
        model = cls.build(int(meta["dim"]), cfg)
        params = model.parameters()
        keys = sorted(k for k in arrays if k.startswith("param."))
        if len(keys) != len(params):
            raise ValueError("parameter count mismatch in serialized flow")
        for p, k in zip(params, keys):
            if p.data.shape != arrays[k].shape:
                raise ValueError(f"shape mismatch for {k}")
            p.data = np.array(arrays[k], dtype=np.float64)
        model.permutations = [np.asarray(arrays[f"perm.{k}"], dtype=int)
                              for k in range(len(model.permutations))]
        return model


def gaussian_warm_start(layer: MafLayer, data: np.ndarray, ridge: float = 1e-12) -> None:
    """Set ``layer`` to the exact whitening map of the Gaussian MLE of ``data``.

    With covariance ``L L^T`` and ``U = L^-1`` the Gaussian factorizes as
    x_d | x_<d ~ N(m_d - sum_j U_dj / U_dd (x_j - m_j), L_dd^2), which the
    MADE direct connections (mean) and log-scale biases express exactly.
    The hidden path stays zero so the rest of the network starts inert.
    """
    cond = layer.conditioner
    if not isinstance(cond, MadeConditioner) or cond.direct is None:
        raise ValueError("Gaussian warm start needs a MADE conditioner with direct connections")
    x = np.asarray(data, dtype=np.float64)
    d = x.shape[1]
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False, bias=True)) + ridge * np.eye(d)
    chol = np.linalg.cholesky(cov)
    u = np.linalg.inv(chol)
    coef = -u / np.diag(u)[:, None]
    np.fill_diagonal(coef, 0.0)
    alpha = np.log(np.diag(chol))
    w = np.zeros((2 * d, d))
    w[:d] = coef
    b = np.zeros(2 * d)
    b[:d] = mean - coef @ mean
    bound = np.maximum(cond.scale.bound.data, 1.5 * np.abs(alpha))
    b[d:] = np.arctanh(alpha / bound)
    cond.direct.weight.data = w
    cond.direct.bias.data = b
    cond.scale.bound.data = bound


def train_flow(data: np.ndarray, config: FlowConfig,
               model: FlowModel | None = None) -> tuple[FlowModel, list[float]]:
    """Mini-batch Adam on the mean negative log-likelihood.

    Returns the trained model and the per-epoch mean training loss.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("training data must be a non-empty (n, D) matrix")
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = FlowModel.build(x.shape[1], config, rng)
        if config.init == "gaussian" and config.kind == "maf" and model.layers:
            gaussian_warm_start(model.layers[0], x)
    params = model.parameters()
    if config.init == "gaussian" and config.kind == "maf":
        # the whitening layer stays fixed; Adam-sized steps would wreck its precision
        frozen = model.layers[0].parameters()
        for p in frozen:
            p.requires_grad = False
            p.grad = None
        params = [p for p in params if all(p is not q for q in frozen)]
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.eps)
    trace: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), config.batch_size):
            batch = x[order[start:start + config.batch_size]]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss = model.nll(Tensor(batch))
                    loss.backward()
            except NumericError as exc:
                raise TrainingError(f"training diverged: {exc}", epoch) from exc
            total += float(loss.data) * len(batch)
            opt.step()
        epoch_loss = total / len(x)
        if not math.isfinite(epoch_loss):
            raise TrainingError("training loss is not finite", epoch)
        trace.append(epoch_loss)
        log.debug("epoch %d loss %.5f", epoch, epoch_loss)
    return model, trace
