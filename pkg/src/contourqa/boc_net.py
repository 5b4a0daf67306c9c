"""Ordinal quality network: conditional (K-1)-unit head, CORN loss, training, MC inference.

The head's unit k models P(y >= k | y >= k-1, x); unit 1 is marginal. The
loss trains unit 1 on every sample and unit k > 1 only on the conditional
subset {y >= k - 1}, normalising by the total number of selected terms. An
empty conditional subset contributes zero rather than erroring.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError
from .nn import (
    Adam,
    Conv3x3,
    Dense,
    Dropout,
    Flatten,
    MaxPool2,
    ModelParameters,
    Network,
    ReLU,
    derive_rng,
)

DEFAULT_MC_PASSES = 20
LAYER_GROUPS = ("features", "trunk", "head")

CHECKPOINT_MAGIC = b"CQANET01"


@dataclass(frozen=True)
class OrdinalScheme:
    """Extended binary coding for K ordered classes with ranks 0..K-1."""

    k: int = 3

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("need at least two classes")

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(range(self.k))

    def encode(self, y: int) -> tuple[int, ...]:
        """y -> (1{y >= 1}, ..., 1{y >= K-1}); the bits are non-increasing."""
        if y not in self.ranks:
            raise ValueError(f"label {y} outside ranks {self.ranks}")
        return tuple(int(y >= r) for r in range(1, self.k))

    def decode(self, bits) -> int:
        return int(sum(bits))


@dataclass(frozen=True)
class NetworkConfig:
    """Backbone and head shape.

    small_cnn expects input (2, image_size, image_size): a pseudo-CT channel
    and the auto-mask channel. mlp_features expects a flat feature vector of
    the three agreement metrics plus area, perimeter, and centroid-offset
    descriptors.
    """

    backbone: str = "mlp_features"
    k: int = 3
    dropout_rate: float = 0.1
    in_features: int = 6
    in_channels: int = 2
    image_size: int = 64
    conv_channels: tuple[int, int] = (8, 16)
    dense_width: int = 64
    hidden: tuple[int, int] = (32, 32)

    def __post_init__(self):
        if self.backbone not in ("mlp_features", "small_cnn"):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.k < 2:
            raise ValueError("need at least two classes")
        if self.backbone == "small_cnn" and self.image_size % 4 != 0:
            raise ValueError("image_size must be divisible by 4 (two 2x2 pools)")

    def input_shape(self) -> tuple:
        if self.backbone == "small_cnn":
            return (self.in_channels, self.image_size, self.image_size)
        return (self.in_features,)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["hidden"] = list(self.hidden)
        return d

    @staticmethod
    def from_dict(d: dict) -> "NetworkConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d.get("conv_channels", (8, 16)))
        d["hidden"] = tuple(d.get("hidden", (32, 32)))
        return NetworkConfig(**d)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    lr_milestones: tuple[int, ...] = ()  # epochs at which the rate is multiplied by 0.2
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if list(self.lr_milestones) != sorted(set(self.lr_milestones)):
            raise ValueError("lr_milestones must be strictly increasing")

    def lr_at(self, epoch: int, base: float | None = None) -> float:
        """Learning rate in force during 1-based epoch ``epoch``."""
        base = self.learning_rate if base is None else base
        drops = sum(1 for m in self.lr_milestones if m <= epoch)
        return base * (0.2**drops)


def build_network(config: NetworkConfig, seed: int) -> Network:
    """Fresh network with He-initialised weights drawn from ``seed``."""
    rng = derive_rng(seed)
    p = config.dropout_rate
    if config.backbone == "small_cnn":
        c1, c2 = config.conv_channels
        side = config.image_size // 4
        layers = [
            Conv3x3("conv1", "features", config.in_channels, c1, rng),
            ReLU(),
            Dropout(p),
            MaxPool2(),
            Conv3x3("conv2", "features", c1, c2, rng),
            ReLU(),
            Dropout(p),
            MaxPool2(),
            Flatten(),
            Dense("dense1", "trunk", c2 * side * side, config.dense_width, rng),
            ReLU(),
            Dropout(p),
            Dense("head", "head", config.dense_width, config.k - 1, rng),
        ]
    else:
        h1, h2 = config.hidden
        layers = [
            Dense("dense1", "features", config.in_features, h1, rng),
            ReLU(),
            Dropout(p),
            Dense("dense2", "trunk", h1, h2, rng),
            ReLU(),
            Dropout(p),
            Dense("head", "head", h2, config.k - 1, rng),
        ]
    return Network(layers)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def forward(net: Network, x: np.ndarray, mode: str = "deterministic", rng=None) -> np.ndarray:
    """Head probabilities for a batch (n, K-1); a single sample may omit the batch axis."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim in (1, 3)
    if single:
        x = x[None, ...]
    probs = _sigmoid(net.forward(x, mode, rng))
    return probs[0] if single else probs


def corn_loss(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    weight_decay: float = 0.0,
    mode: str = "train_stochastic",
    rng=None,
) -> tuple[float, list[np.ndarray]]:
    """Conditional ordinal loss and its gradients w.r.t. every parameter tensor.

    Returns the scalar loss (data term plus 0.5 * weight_decay * ||W||^2 over
    weights, biases excluded) and gradients aligned with net.param_entries().
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    if x.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    k_minus_1 = net.layers[-1].b.shape[0]
    logits = net.forward(x, mode, rng)
    ranks = np.arange(1, k_minus_1 + 1)
    select = y[:, None] >= (ranks - 1)[None, :]  # unit k trains on {y >= k-1}
    target = (y[:, None] >= ranks[None, :]).astype(float)
    denom = int(select.sum())
    bce = _softplus(logits) - target * logits
    loss = float((bce * select).sum() / denom)
    dlogits = select * (_sigmoid(logits) - target) / denom
    net.backward(dlogits)
    grads = [g.copy() for g in net.grad_entries()]
    if weight_decay:
        for (name, _, arr), g in zip(net.param_entries(), grads):
            if name.endswith(".W"):
                loss += 0.5 * weight_decay * float((arr * arr).sum())
                g += weight_decay * arr
    return loss, grads


def _predict_deterministic(net: Network, x: np.ndarray, chunk: int = 256) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    preds = []
    for start in range(0, x.shape[0], chunk):
        probs = _sigmoid(net.forward(x[start : start + chunk], "deterministic"))
        preds.append((probs > 0.5).sum(axis=1))
    return np.concatenate(preds)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_accuracy: float | None = None


def _run_training(
    net: Network,
    dataset: tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
    group_rates: dict[str, float] | None,
    validation: tuple[np.ndarray, np.ndarray] | None,
) -> tuple[ModelParameters, list[EpochStats]]:
    x, y = np.asarray(dataset[0], dtype=np.float64), np.asarray(dataset[1], dtype=int)
    if x.shape[0] == 0:
        raise ValueError("training dataset is empty")
    if np.unique(y).size == 1:
        warnings.warn("training labels contain a single class; conditional units see no signal")
    entries = net.param_entries()
    if group_rates is not None:
        net_groups = set(g for _, g, _ in entries)
        if set(group_rates) != net_groups:
            raise ConfigurationError(
                f"lr groups {sorted(group_rates)} do not match network groups {sorted(net_groups)}"
            )
    params = [arr for _, _, arr in entries]
    bases = [
        config.learning_rate if group_rates is None else group_rates[g] for _, g, _ in entries
    ]
    adam = Adam([p.shape for p in params])
    shuffle_rng = derive_rng(config.seed, 1)
    dropout_rng = derive_rng(config.seed, 2)
    trace: list[EpochStats] = []
    best: ModelParameters | None = None
    best_acc = -1.0
    for epoch in range(1, config.epochs + 1):
        lrs = [config.lr_at(epoch, base) for base in bases]
        perm = shuffle_rng.permutation(x.shape[0])
        losses = []
        for start in range(0, x.shape[0], config.batch_size):
            idx = perm[start : start + config.batch_size]
            loss, grads = corn_loss(
                net, x[idx], y[idx], config.weight_decay, "train_stochastic", dropout_rng
            )
            adam.step(params, grads, lrs)
            losses.append(loss)
        stats = EpochStats(epoch=epoch, lr=config.lr_at(epoch), train_loss=float(np.mean(losses)))
        if validation is not None:
            xv, yv = validation
            stats.val_accuracy = float((_predict_deterministic(net, xv) == yv).mean())
            if stats.val_accuracy > best_acc:
                best_acc = stats.val_accuracy
                best = net.snapshot()
        trace.append(stats)
    final = best if best is not None else net.snapshot()
    net.load(final)
    return final, trace


def train(
    config: TrainConfig,
    netcfg: NetworkConfig,
    dataset: tuple[np.ndarray, np.ndarray],
    validation: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[ModelParameters, list[EpochStats]]:
    """Train from a seeded fresh initialisation; reproducible given (config, data)."""
    net = build_network(netcfg, seed=int(derive_rng(config.seed, 0).integers(2**63)))
    return _run_training(net, dataset, config, None, validation)


def fine_tune(
    pretrained: ModelParameters,
    lr_groups: list[tuple[str, float]],
    config: TrainConfig,
    netcfg: NetworkConfig,
    dataset: tuple[np.ndarray, np.ndarray],
    validation: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[ModelParameters, list[EpochStats]]:
    """Continue training from a checkpoint with one base rate per layer group."""
    net = build_network(netcfg, seed=0)
    net.load(pretrained)
    return _run_training(net, dataset, config, dict(lr_groups), validation)


def mc_forward_batch(
    net: Network, x: np.ndarray, t: int = DEFAULT_MC_PASSES, seed: int | tuple = 0
) -> np.ndarray:
    """T stochastic passes over a batch; returns probabilities (n, T, K-1).

    Pass t draws its dropout masks from the stream (seed..., t), so results
    are reproducible and passes may be computed independently.
    """
    if t < 1:
        raise ValueError("need at least one pass")
    x = np.asarray(x, dtype=np.float64)
    keys = seed if isinstance(seed, tuple) else (seed,)
    out = []
    for pass_idx in range(t):
        rng = derive_rng(*keys, pass_idx)
        out.append(_sigmoid(net.forward(x, "eval_stochastic", rng)))
    return np.stack(out, axis=1)


def mc_forward(net: Network, x: np.ndarray, t: int = DEFAULT_MC_PASSES, seed: int | tuple = 0) -> np.ndarray:
    """MC passes for one input; returns (T, K-1) probability pairs."""
    return mc_forward_batch(net, np.asarray(x)[None, ...], t, seed)[0]


def config_hash(netcfg: NetworkConfig) -> str:
    return hashlib.sha256(json.dumps(netcfg.to_dict(), sort_keys=True).encode()).hexdigest()


def save_checkpoint(path, netcfg: NetworkConfig, params: ModelParameters):
    """Versioned binary checkpoint: JSON header + little-endian float32 tensors."""
    header = {
        "format_version": 1,
        "config": netcfg.to_dict(),
        "config_hash": config_hash(netcfg),
        "tensors": [
            {"name": n, "group": g, "shape": list(v.shape)}
            for n, g, v in zip(params.names, params.groups, params.values)
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in params.values:
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[NetworkConfig, ModelParameters]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        netcfg = NetworkConfig.from_dict(header["config"])
        if header.get("config_hash") != config_hash(netcfg):
            raise ValueError("checkpoint header hash mismatch")
        names, groups, values = [], [], []
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
            names.append(spec["name"])
            groups.append(spec["group"])
            values.append(arr)
    return netcfg, ModelParameters(tuple(names), tuple(groups), tuple(values))


def new_model(netcfg: NetworkConfig, params: ModelParameters | None = None, seed: int = 0) -> Network:
    """Network from a config, optionally loading existing parameters."""
    net = build_network(netcfg, seed)
    if params is not None:
        net.load(params)
    return net
