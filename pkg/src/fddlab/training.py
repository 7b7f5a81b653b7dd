"""UL-only supervised training of the reconstruction network and DL-side inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSample, CsiSet
from .errors import ConfigError, DivergenceError
from .masking import Mask, mask_tensor
from .nn import AdamState, ModelParams, adam_step, backward, forward_sparse
from .numerics import complex_to_real, real_to_complex

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    batches_per_epoch: int = 300
    max_epochs: int = 40
    seed: int = 0
    patience: int = 10
    min_delta: float = 1e-5
    lr: float = 1e-3

    def __post_init__(self):
        for name in ("batch_size", "batches_per_epoch", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.lr < 0:
            raise ConfigError("lr must be nonnegative")


@dataclass
class TrainResult:
    model: ModelParams  # best-validation parameters
    final_model: ModelParams
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0

    def curve_rows(self):
        return [(e + 1, t, v) for e, (t, v) in enumerate(zip(self.train_loss, self.val_loss))]


def to_real_tensor(matrices: np.ndarray, dtype=np.float32) -> np.ndarray:
    return complex_to_real(np.asarray(matrices)).astype(dtype)


def _batch_loss(out: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = out - target
    b = target.shape[0]
    value = float(np.sum(diff.astype(np.float64) ** 2) / b)
    return value, (2.0 / b) * diff


def loss(model: ModelParams, batch, mask: Mask, mode: str = "infer", chunk: int = 256) -> float:
    """Mean over the batch of the squared Frobenius reconstruction error.

    ``batch`` is a :class:`CsiSet`, a sequence of :class:`ChannelSample`, or a
    complex (B, Na, Nc) array.
    """
    mats = _matrices(batch)
    if len(mats) == 0:
        raise ValueError("empty batch")
    target = to_real_tensor(mats, model.dtype)
    if mode == "train":
        out, _ = forward_sparse(model, mask_tensor(target, mask), mask, "train", update_stats=False)
        total = float(np.sum((out - target).astype(np.float64) ** 2))
    else:
        total = 0.0
        for s in range(0, len(target), chunk):
            t = target[s:s + chunk]
            out, _ = forward_sparse(model, mask_tensor(t, mask), mask, mode)
            total += float(np.sum((out - t).astype(np.float64) ** 2))
    value = total / len(target)
    if not np.isfinite(value):
        raise DivergenceError("non-finite loss")
    return value


def _matrices(batch) -> np.ndarray:
    if isinstance(batch, CsiSet):
        return batch.matrices
    if isinstance(batch, ChannelSample):
        return batch.matrix[None]
    if isinstance(batch, np.ndarray):
        return batch
    return np.stack([s.matrix for s in batch])


def _flat_params(model: ModelParams) -> dict:
    return {key: model.params[key[0]][key[1]] for key in model.trainable()}


def _write_back(model: ModelParams, flat: dict) -> None:
    for (i, name), value in flat.items():
        model.params[i][name] = value


def _index_stream(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    reps = -(-count // n)
    return np.concatenate([rng.permutation(n) for _ in range(reps)])[:count]


def train_step(model: ModelParams, target: np.ndarray, mask: Mask, state: AdamState) -> float:
    x = mask_tensor(target, mask)
    out, caches = forward_sparse(model, x, mask, "train")
    value, grad = _batch_loss(out, target)
    if not np.isfinite(value):
        raise DivergenceError("non-finite training loss")
    grads = backward(model, grad.astype(target.dtype), caches, mask)
    flat = _flat_params(model)
    adam_step(flat, grads, state)
    _write_back(model, flat)
    return value


def train(model: ModelParams, train_set: CsiSet, val_set: CsiSet, mask: Mask,
          config: TrainConfig | None = None, on_epoch=None) -> TrainResult:
    """Train on UL samples only; keep the parameters with the lowest validation loss.

    Validation data is used only to compute the validation loss. Training
    stops after ``max_epochs`` or when the validation loss has not improved
    by ``min_delta`` for ``patience`` epochs.
    """
    config = config or TrainConfig()
    for name, ds in (("train", train_set), ("validation", val_set)):
        if not isinstance(ds, CsiSet):
            raise TypeError(f"{name} data must be a CsiSet")
        if ds.band != "UL":
            raise ConfigError(f"{name} data is tagged {ds.band!r}; training accepts UL data only")
        if len(ds) == 0:
            raise ValueError(f"{name} set is empty")
    if train_set.matrices.shape[1:] != mask.shape:
        raise ConfigError("mask shape does not match the training data")

    model = model.copy()
    model.meta["mask"] = mask
    state = AdamState(lr=config.lr)
    target_all = to_real_tensor(train_set.matrices, model.dtype)
    n = len(target_all)
    result = TrainResult(model=model.copy(), final_model=model)
    best = np.inf
    since_best = 0
    for epoch in range(config.max_epochs):
        rng = np.random.default_rng([config.seed, epoch])
        order = _index_stream(n, config.batches_per_epoch * config.batch_size, rng)
        batch_losses = []
        for b in range(config.batches_per_epoch):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            try:
                batch_losses.append(train_step(model, target_all[idx], mask, state))
            except DivergenceError as exc:
                raise DivergenceError(str(exc), epoch=epoch + 1, batch=b + 1) from exc
        train_loss = float(np.mean(batch_losses))
        try:
            val_loss = loss(model, val_set, mask, "infer")
        except DivergenceError as exc:
            raise DivergenceError("non-finite validation loss", epoch=epoch + 1, batch=None) from exc
        result.train_loss.append(train_loss)
        result.val_loss.append(val_loss)
        log.info("epoch %d train %.5f val %.5f", epoch + 1, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(epoch + 1, train_loss, val_loss)
        if val_loss < best - config.min_delta:
            best = val_loss
            since_best = 0
            result.model = model.copy()
            result.best_epoch = epoch + 1
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    history = {"train_loss": list(result.train_loss), "val_loss": list(result.val_loss),
               "best_epoch": result.best_epoch, "epochs_run": len(result.train_loss)}
    result.model.meta.update(history)
    result.final_model.meta.update(history)
    return result


def reconstruct(model: ModelParams, matrices: np.ndarray, mask: Mask, chunk: int = 256) -> np.ndarray:
    """Mask the given complex matrices, run inference, return complex reconstructions."""
    _check_mask(model, mask)
    target = to_real_tensor(matrices, model.dtype)
    outs = []
    for s in range(0, len(target), chunk):
        out, _ = forward_sparse(model, mask_tensor(target[s:s + chunk], mask), mask, "infer")
        outs.append(out)
    return real_to_complex(np.concatenate(outs).astype(np.float64))


def recover_dl(model: ModelParams, dl_true: ChannelSample, mask: Mask) -> ChannelSample:
    """Simulate the terminal's masked feedback of ``dl_true`` and reconstruct it at the BS."""
    rec = reconstruct(model, dl_true.matrix[None], mask)[0]
    return ChannelSample(rec, dl_true.path_gain_db, dl_true.scenario_tag, dl_true.location_id)


def _check_mask(model: ModelParams, mask: Mask) -> None:
    stored = model.meta.get("mask")
    if stored is not None and stored != mask:
        raise ConfigError("mask differs from the one the model was trained with")
