"""Trainable 1D-convolution regression head over slide-level features.

The head treats the aggregated F-vector as a one-channel sequence: a
kernel-5 same-padded convolution to 256 channels, two 1x1 convolutions to
512 channels (ReLU after each of the three), a linear 1x1 convolution to G
output channels, and global average pooling over the sequence axis. All
math runs in float64. Training is plain minibatch Adam with a seeded
validation split, early stopping on validation MSE, and best-epoch weight
snapshots; identical seeds give bit-identical trajectories.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import (
    BadMagic,
    DatasetTooSmall,
    FeatureTooShort,
    LengthMismatch,
    PanelMismatch,
    ShapeMismatch,
    UnsupportedVersion,
)
from .features import AlignedDataset, PatchFeatureSet, aggregate

KERNEL = 5
DEFAULT_CHANNELS = (256, 512, 512)

H2RM_MAGIC = b"H2RM"
H2RM_VERSION = 1


@dataclass
class RegressorModel:
    w1: np.ndarray  # (C1, 5)
    b1: np.ndarray  # (C1,)
    w2: np.ndarray  # (C2, C1)
    b2: np.ndarray
    w3: np.ndarray  # (C3, C2)
    b3: np.ndarray
    w4: np.ndarray  # (G, C3)
    b4: np.ndarray
    n_features: int  # expected F of incoming slide features

    @property
    def n_genes(self) -> int:
        return self.w4.shape[0]

    @property
    def channels(self) -> tuple[int, int, int]:
        return (self.w1.shape[0], self.w2.shape[0], self.w3.shape[0])

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2,
                self.w3, self.b3, self.w4, self.b4]

    def copy(self) -> "RegressorModel":
        return RegressorModel(*[p.copy() for p in self.params()],
                              n_features=self.n_features)


def init_model(n_features: int, n_genes: int, seed,
               channels: tuple[int, int, int] = DEFAULT_CHANNELS) -> RegressorModel:
    """He-style uniform fan-in initialization, biases at zero."""
    if n_features < KERNEL:
        raise FeatureTooShort(f"need F >= {KERNEL}, got {n_features}")
    c1, c2, c3 = channels
    rng = np.random.Generator(np.random.PCG64(seed))

    def he(shape, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return RegressorModel(
        w1=he((c1, KERNEL), KERNEL),
        b1=np.zeros(c1),
        w2=he((c2, c1), c1),
        b2=np.zeros(c2),
        w3=he((c3, c2), c2),
        b3=np.zeros(c3),
        w4=he((n_genes, c3), c3),
        b4=np.zeros(n_genes),
        n_features=n_features,
    )


def _pad(Z: np.ndarray) -> np.ndarray:
    half = KERNEL // 2
    zpad = np.zeros((Z.shape[0], Z.shape[1] + 2 * half), dtype=np.float64)
    zpad[:, half:half + Z.shape[1]] = Z
    return zpad


def _activate(pre: np.ndarray, bias: np.ndarray, relu: bool) -> np.ndarray:
    if relu:
        return _kernels.bias_relu(pre, bias)
    return pre + bias


@dataclass
class ForwardCache:
    zpad: np.ndarray
    h1: np.ndarray    # (B*F, C1) post-activation
    h2: np.ndarray    # (B*F, C2)
    h3: np.ndarray    # (B*F, C3)
    h3_mean: np.ndarray  # (B, C3)
    pred: np.ndarray  # (B, G)


def _forward(model: RegressorModel, Z: np.ndarray, relu: bool) -> ForwardCache:
    B, F = Z.shape
    if F < KERNEL:
        raise FeatureTooShort(f"need F >= {KERNEL}, got {F}")
    zpad = _pad(np.ascontiguousarray(Z, dtype=np.float64))
    a1 = _kernels.conv5_forward(zpad, model.w1, model.b1)  # (B, F, C1)
    h1 = np.maximum(a1, 0.0) if relu else a1
    h1 = h1.reshape(B * F, -1)
    h2 = _activate(h1 @ model.w2.T, model.b2, relu)
    h3 = _activate(h2 @ model.w3.T, model.b3, relu)
    # the output layer is linear and pooling is a mean, so pooling first is
    # exact and avoids materializing the (B, F, G) tensor
    h3_mean = h3.reshape(B, F, -1).mean(axis=1)
    pred = h3_mean @ model.w4.T + model.b4
    return ForwardCache(zpad=zpad, h1=h1, h2=h2, h3=h3, h3_mean=h3_mean, pred=pred)


def forward_batch(model: RegressorModel, Z: np.ndarray,
                  activation: str = "relu") -> np.ndarray:
    """Predict a (B, G) expression matrix from (B, F) slide features.

    ``activation='identity'`` swaps the ReLUs for identity, making the
    whole head affine; used by linearity tests.
    """
    return _forward(model, np.atleast_2d(Z), activation == "relu").pred


def forward(model: RegressorModel, z: np.ndarray) -> np.ndarray:
    """Single-vector convenience wrapper around :func:`forward_batch`."""
    return forward_batch(model, np.atleast_2d(z))[0]


def loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over the gene axis."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise LengthMismatch(f"shapes {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


@dataclass
class Gradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    w4: np.ndarray
    b4: np.ndarray

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2,
                self.w3, self.b3, self.w4, self.b4]


def backward(model: RegressorModel, Z: np.ndarray, target: np.ndarray,
             activation: str = "relu") -> tuple[float, Gradients]:
    """Loss and exact gradients of the batch-mean MSE for all parameters."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    relu = activation == "relu"
    B, F = Z.shape
    cache = _forward(model, Z, relu)
    if cache.pred.shape != target.shape:
        raise LengthMismatch(f"shapes {cache.pred.shape} vs {target.shape}")
    G = target.shape[1]

    batch_loss = float(np.mean((cache.pred - target) ** 2))
    dpred = 2.0 * (cache.pred - target) / (B * G)

    db4 = dpred.sum(axis=0)
    dw4 = dpred.T @ cache.h3_mean
    dh3_mean = dpred @ model.w4                      # (B, C3)
    dh3 = np.repeat(dh3_mean / F, F, axis=0)         # (B*F, C3), row-major by sample

    dpre3 = _kernels.relu_backward(dh3, cache.h3) if relu else dh3
    dw3 = dpre3.T @ cache.h2
    db3 = dpre3.sum(axis=0)
    dh2 = dpre3 @ model.w3

    dpre2 = _kernels.relu_backward(dh2, cache.h2) if relu else dh2
    dw2 = dpre2.T @ cache.h1
    db2 = dpre2.sum(axis=0)
    dh1 = dpre2 @ model.w2

    da1 = _kernels.relu_backward(dh1, cache.h1) if relu else dh1
    da1 = np.ascontiguousarray(da1.reshape(B, F, -1))
    dw1, db1 = _kernels.conv5_backward(cache.zpad, da1)

    grads = Gradients(w1=dw1, b1=db1, w2=dw2, b2=db2,
                      w3=dw3, b3=db3, w4=dw4, b4=db4)
    return batch_loss, grads


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_model(cls, model: RegressorModel) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in model.params()],
                   v=[np.zeros_like(p) for p in model.params()])


def adam_step(model: RegressorModel, grads: Gradients, state: AdamState,
              learning_rate: float) -> None:
    state.step += 1
    for p, g, m, v in zip(model.params(), grads.params(), state.m, state.v):
        _kernels.adam_update(p.ravel(), np.ascontiguousarray(g).ravel(),
                             m.ravel(), v.ravel(), state.step,
                             learning_rate, state.beta1, state.beta2,
                             state.epsilon)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 12
    patience: int = 4
    max_epochs: int = 150
    seed: int = 0
    validation_fraction: float = 0.1
    channels: tuple[int, int, int] = DEFAULT_CHANNELS

    def __post_init__(self):
        if (self.learning_rate <= 0 or self.batch_size <= 0
                or self.patience <= 0 or self.max_epochs <= 0):
            raise ValueError("learning_rate, batch_size, patience, max_epochs must be positive")
        if not 0 < self.validation_fraction <= 0.5:
            raise ValueError("validation_fraction must lie in (0, 0.5]")


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    seconds: float


@dataclass
class TrainResult:
    model: RegressorModel
    history: list[EpochRecord]
    best_epoch: int
    best_val_mse: float


def _split(n: int, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_val = max(1, int(round(fraction * n)))
    return perm[n_val:], perm[:n_val]


def _minibatches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def train(dataset: AlignedDataset, config: TrainConfig) -> TrainResult:
    """Train the head on aggregated slide features.

    Validation MSE is monitored after each epoch; training stops once it
    has failed to improve for ``patience`` consecutive epochs (or at
    ``max_epochs``) and the best-epoch weights are returned.
    """
    Z = np.asarray(dataset.features, dtype=np.float64)
    Y = np.asarray(dataset.targets, dtype=np.float64)
    n = Z.shape[0]
    if n < 2 * config.batch_size:
        raise DatasetTooSmall(f"need >= {2 * config.batch_size} rows, got {n}")

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    init_seed, split_rng, shuffle_rng = (
        seeds[0],
        np.random.Generator(np.random.PCG64(seeds[1])),
        np.random.Generator(np.random.PCG64(seeds[2])),
    )
    train_idx, val_idx = _split(n, config.validation_fraction, split_rng)
    z_train, y_train = Z[train_idx], Y[train_idx]
    z_val, y_val = Z[val_idx], Y[val_idx]

    model = init_model(Z.shape[1], Y.shape[1], init_seed, config.channels)
    return _fit_loop(model, config, shuffle_rng,
                     train_batches=_ArrayBatcher(z_train, y_train),
                     validate=lambda mdl: loss(forward_batch(mdl, z_val), y_val))


class _ArrayBatcher:
    """Epoch iterator over row-aligned feature/target arrays."""

    def __init__(self, Z: np.ndarray, Y: np.ndarray):
        self.Z = Z
        self.Y = Y
        self.n = Z.shape[0]

    def epoch(self, rng, batch_size: int):
        for idx in _minibatches(rng.permutation(self.n), batch_size):
            yield self.Z[idx], self.Y[idx]


def _fit_loop(model, config, shuffle_rng, train_batches, validate) -> TrainResult:
    state = AdamState.for_model(model)
    history: list[EpochRecord] = []
    best_val = np.inf
    best_epoch = 0
    best_params = model.copy()
    bad_epochs = 0

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        sq_sum = 0.0
        n_seen = 0
        for zb, yb in train_batches.epoch(shuffle_rng, config.batch_size):
            batch_loss, grads = backward(model, zb, yb)
            adam_step(model, grads, state, config.learning_rate)
            sq_sum += batch_loss * zb.shape[0]
            n_seen += zb.shape[0]
        train_mse = sq_sum / n_seen
        val_mse = validate(model)
        history.append(EpochRecord(epoch, train_mse, val_mse,
                                   time.perf_counter() - started))
        if val_mse < best_val:
            best_val = val_mse
            best_epoch = epoch
            best_params = model.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break
    return TrainResult(model=best_params, history=history,
                       best_epoch=best_epoch, best_val_mse=best_val)


class _PatchBatcher:
    """Epoch iterator over patch rows, each carrying its patient's target."""

    def __init__(self, sets: list[PatchFeatureSet], targets: np.ndarray):
        self.X = np.concatenate([s.values.astype(np.float64) for s in sets])
        self.Y = np.concatenate([
            np.broadcast_to(targets[i], (s.n_patches, targets.shape[1]))
            for i, s in enumerate(sets)
        ])
        self.n = self.X.shape[0]

    def epoch(self, rng, batch_size: int):
        for idx in _minibatches(rng.permutation(self.n), batch_size):
            yield self.X[idx], self.Y[idx]


def predict_patchwise(model: RegressorModel, patches: PatchFeatureSet,
                      activation: str = "relu") -> np.ndarray:
    """Patient-level prediction: mean of per-patch predictions."""
    preds = forward_batch(model, patches.values.astype(np.float64), activation)
    return preds.mean(axis=0)


def train_patchwise(patch_sets: list[PatchFeatureSet], targets: np.ndarray,
                    config: TrainConfig) -> TrainResult:
    """Baseline trainer: every patch is an independent sample.

    The split is at patient level; validation MSE scores the patch-mean
    patient predictions, matching how the model is used at inference.
    """
    targets = np.asarray(targets, dtype=np.float64)
    n = len(patch_sets)
    if n < 2 * config.batch_size:
        raise DatasetTooSmall(f"need >= {2 * config.batch_size} patients, got {n}")
    if targets.shape[0] != n:
        raise LengthMismatch("targets rows must match patch sets")

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    init_seed, split_rng, shuffle_rng = (
        seeds[0],
        np.random.Generator(np.random.PCG64(seeds[1])),
        np.random.Generator(np.random.PCG64(seeds[2])),
    )
    train_idx, val_idx = _split(n, config.validation_fraction, split_rng)
    train_sets = [patch_sets[i] for i in train_idx]
    val_sets = [patch_sets[i] for i in val_idx]
    y_val = targets[val_idx]

    def validate(mdl):
        preds = np.stack([predict_patchwise(mdl, s) for s in val_sets])
        return loss(preds, y_val)

    model = init_model(patch_sets[0].n_features, targets.shape[1],
                       init_seed, config.channels)
    return _fit_loop(model, config, shuffle_rng,
                     train_batches=_PatchBatcher(train_sets, targets[train_idx]),
                     validate=validate)


def aggregate_sets(patch_sets: list[PatchFeatureSet]) -> np.ndarray:
    return np.stack([aggregate(s).z for s in patch_sets])


def write_history_csv(history: list[EpochRecord], path) -> None:
    lines = ["epoch,train_mse,val_mse,wall_clock_seconds"]
    for rec in history:
        lines.append(f"{rec.epoch},{rec.train_mse!r},{rec.val_mse!r},{rec.seconds:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- model file format ---

def save_model(model: RegressorModel, path, panel_hash: int) -> None:
    """Fixed binary layout: magic, version, F, G, panel hash, f64 params.

    Only the production channel widths are serializable; the widths are
    implied by the format version.
    """
    if model.channels != DEFAULT_CHANNELS:
        raise ShapeMismatch(
            f"only channels {DEFAULT_CHANNELS} are serializable, got {model.channels}"
        )
    blob = bytearray()
    blob += H2RM_MAGIC
    blob += struct.pack("<I", H2RM_VERSION)
    blob += struct.pack("<II", model.n_features, model.n_genes)
    blob += struct.pack("<Q", panel_hash)
    for p in model.params():
        blob += np.ascontiguousarray(p, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_model(path, panel_hash: int | None = None) -> RegressorModel:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise ShapeMismatch(f"{path}: truncated header")
    if data[:4] != H2RM_MAGIC:
        raise BadMagic(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 24:
        raise ShapeMismatch(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != H2RM_VERSION:
        raise UnsupportedVersion(f"{path}: version {version}")
    n_features, n_genes = struct.unpack_from("<II", data, 8)
    (stored_hash,) = struct.unpack_from("<Q", data, 16)
    if panel_hash is not None and stored_hash != panel_hash:
        raise PanelMismatch(
            f"{path}: stored panel hash {stored_hash:#018x} != expected {panel_hash:#018x}"
        )
    c1, c2, c3 = DEFAULT_CHANNELS
    shapes = [(c1, KERNEL), (c1,), (c2, c1), (c2,), (c3, c2), (c3,),
              (n_genes, c3), (n_genes,)]
    count = sum(int(np.prod(s)) for s in shapes)
    expected = 24 + 8 * count
    if len(data) != expected:
        raise ShapeMismatch(f"{path}: {len(data)} bytes, expected {expected}")
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=24)
    arrays = []
    pos = 0
    for s in shapes:
        size = int(np.prod(s))
        arrays.append(flat[pos:pos + size].reshape(s).copy())
        pos += size
    return RegressorModel(*arrays, n_features=n_features)
