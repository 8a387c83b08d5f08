"""Training loop for the five experiment configurations, plus weight
serialization and cross-validated learning-rate-decay selection.

Determinism: model init and batch order derive from the config seed
(torch.manual_seed + a dedicated numpy Generator). CPU kernels are
deterministic, so repeated runs with one config reproduce the same weights.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .loss import hybrid_loss_from_logits, one_hot
from .model import UNet2D
from .patches import PatchSample, augment

log = logging.getLogger("segharness")

CONFIG_NAMES = ("GoldStandard", "Baseline", "Init", "DA_FaBiAN_Init", "DA_FaBiAN_Baseline")


@dataclass(frozen=True)
class TrainConfig:
    name: str
    epochs: int = 4
    base_lr: float = 1e-3
    lr_decay: float = 0.85  # per-epoch multiplier (cross-validated elsewhere)
    batch_size: int = 32
    augment: bool = True
    init_weights: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.name not in CONFIG_NAMES:
            raise ValueError(f"unknown configuration {self.name!r} (have {CONFIG_NAMES})")
        needs_init = self.name.startswith("DA_")
        if needs_init and not self.init_weights:
            raise ValueError(f"{self.name} requires init_weights (transfer learning)")
        if not needs_init and self.init_weights:
            raise ValueError(f"{self.name} must not set init_weights")
        if self.epochs < 1 or self.base_lr <= 0 or not (0 < self.lr_decay <= 1):
            raise ValueError("epochs, base_lr and lr_decay must be positive (decay <= 1)")


def config_hash(config: TrainConfig) -> str:
    return hashlib.sha256(json.dumps(asdict(config), sort_keys=True).encode()).hexdigest()[:16]


def save_weights(path, model: UNet2D, config: TrainConfig, history: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {"state": model.state_dict(), "config": asdict(config), "config_hash": config_hash(config)},
        path,
    )
    path.with_suffix(".history.json").write_text(json.dumps(history, indent=2) + "\n")


def load_weights(path, model: UNet2D | None = None) -> UNet2D:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    model = model or UNet2D()
    try:
        model.load_state_dict(payload["state"])
    except RuntimeError as exc:
        raise ValueError(f"shape-incompatible init weights {path}: {exc}") from exc
    return model


def _batches(samples: list[PatchSample], config: TrainConfig, rng: np.random.Generator):
    """One epoch worth of (image, label) tensors. With augmentation on, every
    patch appears once clean and once augmented (fresh augmentation per epoch)."""
    items = list(range(len(samples)))
    copies = [(i, False) for i in items]
    if config.augment:
        copies += [(i, True) for i in items]
    order = rng.permutation(len(copies))
    for start in range(0, len(order), config.batch_size):
        chunk = [copies[k] for k in order[start : start + config.batch_size]]
        images, labels = [], []
        for i, do_aug in chunk:
            s = samples[i]
            if do_aug:
                s = augment(s, int(rng.integers(0, 2**31)))
            images.append(s.image)
            labels.append(s.labels)
        x = torch.from_numpy(np.stack(images)).unsqueeze(1)
        y = torch.from_numpy(np.stack(labels).astype(np.int64))
        yield x, y


def _epoch_loss(model, samples, config, batch_size=64) -> float:
    """Mean hybrid loss over clean samples (no gradient)."""
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start : start + batch_size]
            x = torch.from_numpy(np.stack([s.image for s in chunk])).unsqueeze(1)
            y = torch.from_numpy(np.stack([s.labels for s in chunk]).astype(np.int64))
            loss = hybrid_loss_from_logits(model(x), one_hot(y))
            total += loss.item() * len(chunk)
            count += len(chunk)
    return total / max(count, 1)


def train(
    config: TrainConfig,
    samples: list[PatchSample],
    val_samples: list[PatchSample] | None = None,
) -> tuple[UNet2D, dict]:
    """Train (or fine-tune, for DA_* configs) on the given patches.

    Returns the model and a history dict with per-epoch train/val loss."""
    if not samples:
        raise ValueError("no training samples")
    torch.manual_seed(config.seed)
    model = UNet2D()
    if config.init_weights:
        load_weights(config.init_weights, model)

    rng = np.random.default_rng(config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.base_lr)
    history = {"config": config.name, "train_loss": [], "val_loss": []}
    for epoch in range(config.epochs):
        lr = config.base_lr * config.lr_decay**epoch
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        running, seen = 0.0, 0
        for x, y in _batches(samples, config, rng):
            optimizer.zero_grad()
            loss = hybrid_loss_from_logits(model(x), one_hot(y))
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
            optimizer.step()
            running += loss.item() * x.shape[0]
            seen += x.shape[0]
        history["train_loss"].append(running / seen)
        if val_samples:
            history["val_loss"].append(_epoch_loss(model, val_samples, config))
        log.info(
            "%s epoch %d: train %.4f%s",
            config.name, epoch,
            history["train_loss"][-1],
            f" val {history['val_loss'][-1]:.4f}" if val_samples else "",
        )
    return model, history


def overfit_single_batch(samples: list[PatchSample], steps: int = 200, seed: int = 0,
                         lr: float = 3e-3, lr_step_decay: float = 0.985) -> list[float]:
    """Drive one batch to near-zero hybrid loss; returns the loss trace.
    Per-step decay settles the loss instead of oscillating near the floor."""
    torch.manual_seed(seed)
    model = UNet2D()
    x = torch.from_numpy(np.stack([s.image for s in samples])).unsqueeze(1)
    y = torch.from_numpy(np.stack([s.labels for s in samples]).astype(np.int64))
    target = one_hot(y)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    trace = []
    for step in range(steps):
        for group in optimizer.param_groups:
            group["lr"] = lr * lr_step_decay**step
        optimizer.zero_grad()
        loss = hybrid_loss_from_logits(model(x), target)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        optimizer.step()
        trace.append(loss.item())
    return trace


def cross_validate_lr_decay(
    grid,
    folds: int,
    samples: list[PatchSample],
    config: TrainConfig,
) -> float:
    """Pick the decay with the lowest mean validation loss over k folds;
    ties (including duplicate candidates) resolve to the smallest decay."""
    candidates = sorted(set(float(g) for g in grid))
    if not candidates:
        raise ValueError("empty decay grid")
    if len(candidates) == 1:
        return candidates[0]
    if folds < 2 or len(samples) < folds:
        raise ValueError("need at least 2 folds and one sample per fold")

    fold_of = np.arange(len(samples)) % folds
    best_decay, best_loss = None, np.inf
    for decay in candidates:
        losses = []
        for fold in range(folds):
            train_set = [s for s, f in zip(samples, fold_of) if f != fold]
            val_set = [s for s, f in zip(samples, fold_of) if f == fold]
            _, history = train(replace(config, lr_decay=decay), train_set, val_set)
            losses.append(history["val_loss"][-1])
        mean_loss = float(np.mean(losses))
        log.info("cv decay %.3f: mean val loss %.4f", decay, mean_loss)
        if mean_loss < best_loss:  # strict: earlier (smaller) candidate wins ties
            best_decay, best_loss = decay, mean_loss
    return best_decay
