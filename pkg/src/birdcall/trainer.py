"""Two-stage training loop with plateau halving, abort, and warm restarts.

The learning-rate policy is a pure state machine (schedule_step) driven only
by validation loss: an epoch that fails to beat the best loss bumps a
counter; every plateau_patience non-improving epochs the rate halves; at
abort_patience the cycle aborts. Up to `restarts` aborted cycles are
restarted from the best checkpoint with the initial rate scaled by
restart_lr_scale per restart and a fresh optimizer. A cycle that runs to the
epoch ceiling without aborting ends training.

Every epoch draws a fresh negative sample (keyed by seed and epoch number)
so the many background clips rotate through training without swamping the
positives. Loss is binary cross-entropy over per-class sigmoid scores,
weighted per class by inverse frequency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .augment import training_view, validation_view
from .dataset import NEGATIVE_CLASS, allocate_counts, sample_negatives
from .model import (BirdcallNet, _net_device, _net_dtype, _to_tensor,
                    load_checkpoint, save_checkpoint)

CONTINUE = "continue"
HALVE = "halve"
ABORT = "abort"

SCORE_FLOOR = 1e-7


@dataclass(frozen=True)
class TrainingSchedule:
    initial_lr: float = 1e-5
    plateau_patience: int = 10
    abort_patience: int = 32
    restarts: int = 3
    restart_lr_scale: float = 0.9
    min_delta: float = 0.0
    max_epochs_per_cycle: int = 300

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if self.abort_patience < self.plateau_patience:
            raise ValueError("abort_patience must be >= plateau_patience")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")
        if not 0 < self.restart_lr_scale <= 1:
            raise ValueError("restart_lr_scale must be in (0, 1]")
        if self.min_delta < 0:
            raise ValueError("min_delta must be >= 0")
        if self.max_epochs_per_cycle < 1:
            raise ValueError("max_epochs_per_cycle must be >= 1")

    @classmethod
    def from_config(cls, config):
        return cls(initial_lr=config.initial_lr,
                   plateau_patience=config.plateau_patience,
                   abort_patience=config.abort_patience,
                   restarts=config.restarts,
                   restart_lr_scale=config.restart_lr_scale,
                   min_delta=config.min_delta,
                   max_epochs_per_cycle=config.max_epochs_per_cycle)


@dataclass(frozen=True)
class SchedulerState:
    best_loss: float = math.inf
    since_improvement: int = 0
    halvings: int = 0
    restart_index: int = 0


def learning_rate(schedule: TrainingSchedule, state: SchedulerState) -> float:
    return (schedule.initial_lr
            * schedule.restart_lr_scale ** state.restart_index
            * 0.5 ** state.halvings)


def schedule_step(schedule: TrainingSchedule, state: SchedulerState,
                  val_loss: float) -> tuple:
    """One epoch transition: returns (new state, action).

    Non-finite loss aborts the cycle immediately.
    """
    if not math.isfinite(val_loss):
        return state, ABORT
    if val_loss < state.best_loss - schedule.min_delta:
        return replace(state, best_loss=float(val_loss), since_improvement=0), CONTINUE
    since = state.since_improvement + 1
    if since >= schedule.abort_patience:
        return replace(state, since_improvement=since), ABORT
    if since % schedule.plateau_patience == 0:
        return replace(state, since_improvement=since, halvings=state.halvings + 1), HALVE
    return replace(state, since_improvement=since), CONTINUE


def restart_state(state: SchedulerState) -> SchedulerState:
    """Fresh counters, undiscounted rate at the next restart scale; best carries over."""
    return SchedulerState(best_loss=state.best_loss, restart_index=state.restart_index + 1)


def encode_targets(labels, num_classes: int) -> np.ndarray:
    idx = np.asarray(labels, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    if idx.size and (idx.min() < 0 or idx.max() >= num_classes):
        raise ValueError(f"label out of range for {num_classes} classes")
    onehot = np.zeros((idx.size, num_classes), dtype=np.float64)
    onehot[np.arange(idx.size), idx] = 1.0
    return onehot


def weighted_bce(scores: torch.Tensor, targets: torch.Tensor,
                 class_weights: torch.Tensor) -> torch.Tensor:
    """Mean over batch x classes of w_c * BCE(score, target), scores clamped."""
    s = scores.clamp(SCORE_FLOOR, 1.0 - SCORE_FLOOR)
    perelement = -(targets * torch.log(s) + (1.0 - targets) * torch.log(1.0 - s))
    return (perelement * class_weights).mean()


def split_negative_count(count: int, n_train_pos: int, n_val_pos: int) -> tuple:
    """Partition an epoch's negatives proportionally to the positive split sizes."""
    if n_train_pos < 1 or n_val_pos < 1:
        raise ValueError("both positive subsets must be non-empty")
    total = n_train_pos + n_val_pos
    n_train, n_val = allocate_counts(count, (n_train_pos / total, n_val_pos / total))
    return n_train, n_val


def draw_epoch_negatives(pool, count: int, n_train_pos: int, n_val_pos: int,
                         seed: int, epoch: int) -> tuple:
    """Sample this epoch's negatives and split them into train and validation parts."""
    drawn = sample_negatives(pool, count, seed, epoch)
    n_train, _ = split_negative_count(count, n_train_pos, n_val_pos)
    return drawn[:n_train], drawn[n_train:]


def training_class_weights(train_records, n_train_negatives: int,
                           class_names) -> np.ndarray:
    """Inverse-frequency weights over the per-epoch training composition.

    The negative class count is the (constant) per-epoch allocation, so the
    weights are identical for every epoch.
    """
    num_classes = len(class_names)
    negative_index = class_names.index(NEGATIVE_CLASS)
    counts = np.zeros(num_classes, dtype=np.int64)
    for rec in train_records:
        counts[rec.label_index] += 1
    counts[negative_index] += n_train_negatives
    if (counts == 0).any():
        empty = [class_names[i] for i in np.flatnonzero(counts == 0)]
        raise ValueError(f"classes with no training samples: {empty}")
    total = int(counts.sum())
    return total / (num_classes * counts.astype(np.float64))


def _default_loader(record):
    from .spectrogram import load_png

    return load_png(record.image_path).pixels


def _batch_views(records, indices, view_fn, seed, epoch, stream, crop, pad_mode,
                 loader, config):
    views = []
    for i in indices:
        rng = np.random.default_rng([seed, epoch, stream, int(i)])
        image = loader(records[i])
        if view_fn is training_view:
            out = training_view(image, rng, size=crop, pad_mode=pad_mode,
                                scale_range=(config.scale_min, config.scale_max),
                                noise_range=(config.noise_low, config.noise_high))
        else:
            out = validation_view(image, rng, size=crop, pad_mode=pad_mode)
        views.append(out.pixels)
    return np.stack(views)


def _make_optimizer(net: BirdcallNet, lr: float, weight_decay: float):
    new_params = list(net.conversion.parameters()) + list(net.head.parameters())
    return torch.optim.Adam(
        [{"params": list(net.backbone.parameters()), "weight_decay": 0.0},
         {"params": new_params, "weight_decay": weight_decay}],
        lr=lr, betas=(0.9, 0.999), eps=1e-8)


def _set_lr(optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def _evaluate_epoch(net, records, weights_t, seed, epoch, loader, config):
    """Validation loss and top-1 accuracy over deterministic center-style views."""
    num_classes = net.num_classes
    dev = _net_device(net)
    labels = [r.label_index for r in records]
    targets = encode_targets(labels, num_classes)
    net.eval()
    loss_sum = 0.0
    correct = 0
    bs = config.batch_size
    with torch.no_grad():
        for start in range(0, len(records), bs):
            idx = range(start, min(start + bs, len(records)))
            batch = _batch_views(records, idx, validation_view, seed, epoch, 3,
                                 config.crop_size, config.pad_mode, loader, config)
            scores = net(_to_tensor(batch).to(dev))
            t = torch.from_numpy(targets[start:start + bs].astype(np.float32)).to(dev)
            loss = weighted_bce(scores, t, weights_t)
            loss_sum += loss.item() * len(batch)
            pred = scores.cpu().numpy().argmax(axis=1)
            correct += int((pred == np.asarray(labels[start:start + bs])).sum())
    return loss_sum / len(records), correct / len(records)


def train(net: BirdcallNet, train_records, val_records, negative_pool,
          class_names, config, seed: int, out_dir,
          negatives_per_epoch: int | None = None, loader=None,
          stage: str = "base") -> tuple:
    """Run the full schedule; returns (best network, report dict).

    train_records / val_records hold the positive clips of each split;
    negative_pool holds every background clip, resampled per epoch. The best
    checkpoint (lowest validation loss seen anywhere in the run) is kept at
    out_dir/best.ckpt and is both the restart source and the returned model.
    """
    if not train_records or not val_records:
        raise ValueError("train and validation subsets must be non-empty")
    if len(class_names) != net.num_classes:
        raise ValueError(f"{len(class_names)} class names for a "
                         f"{net.num_classes}-way head")
    if loader is None:
        loader = _default_loader
    if negatives_per_epoch is None:
        negatives_per_epoch = config.negatives_per_epoch_base
    if negatives_per_epoch > len(negative_pool):
        raise ValueError(f"negatives_per_epoch={negatives_per_epoch} exceeds "
                         f"pool of {len(negative_pool)}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path = out_dir / "best.ckpt"

    schedule = TrainingSchedule.from_config(config)
    state = SchedulerState()
    n_train_neg, _ = split_negative_count(negatives_per_epoch,
                                          len(train_records), len(val_records))
    weights = training_class_weights(train_records, n_train_neg, class_names)
    dev = torch.device(config.device)
    net = net.to(dev)
    weights_t = torch.from_numpy(weights.astype(np.float32)).to(dev)

    torch.manual_seed(seed)
    net.class_names = list(class_names)
    meta = {"spectrogram": config.spectrogram_meta(),
            "augment": config.augment_meta(),
            "config_hash": config.config_hash(),
            "stage": stage, "seed": seed,
            "class_weights": [float(w) for w in weights]}

    lr = learning_rate(schedule, state)
    optimizer = _make_optimizer(net, lr, config.weight_decay)

    epochs = []
    cycle_starts = []
    best_epoch = None
    epoch = 0
    training_done = False

    while not training_done:
        cycle_starts.append(epoch + 1)
        cycle_epochs = 0
        aborted = False
        while cycle_epochs < schedule.max_epochs_per_cycle:
            epoch += 1
            cycle_epochs += 1
            train_negs, val_negs = draw_epoch_negatives(
                negative_pool, negatives_per_epoch,
                len(train_records), len(val_records), seed, epoch)
            epoch_train = list(train_records) + list(train_negs)
            epoch_val = list(val_records) + list(val_negs)
            train_targets = encode_targets([r.label_index for r in epoch_train],
                                           net.num_classes)

            order = np.random.default_rng([seed, epoch, 1]).permutation(len(epoch_train))
            train_labels = np.asarray([r.label_index for r in epoch_train])
            net.train()
            loss_sum = 0.0
            correct = 0
            steps = 0
            for start in range(0, len(order), config.batch_size):
                idx = order[start:start + config.batch_size]
                batch = _batch_views(epoch_train, idx, training_view, seed, epoch, 2,
                                     config.crop_size, config.pad_mode, loader, config)
                targets = torch.from_numpy(train_targets[idx].astype(np.float32)).to(dev)
                optimizer.zero_grad(set_to_none=True)
                scores = net(_to_tensor(batch).to(dev))
                loss = weighted_bce(scores, targets, weights_t)
                loss.backward()
                optimizer.step()
                loss_sum += loss.item() * len(idx)
                pred = scores.detach().cpu().numpy().argmax(axis=1)
                correct += int((pred == train_labels[idx]).sum())
                steps += 1
            train_loss = loss_sum / len(order)
            train_acc = correct / len(order)

            val_loss, val_acc = _evaluate_epoch(net, epoch_val, weights_t, seed,
                                                epoch, loader, config)
            print(f"epoch={epoch} lr={lr:g} train_loss={train_loss:.6f} "
                  f"val_loss={val_loss:.6f} val_acc={val_acc:.4f}", flush=True)

            new_state, action = schedule_step(schedule, state, val_loss)
            improved = (action == CONTINUE
                        and new_state.since_improvement == 0
                        and new_state.best_loss < state.best_loss)
            state = new_state
            if improved:
                best_epoch = epoch
                save_checkpoint(net, {**meta, "epoch": epoch,
                                      "val_loss": float(val_loss),
                                      "learning_rate": lr}, best_path)

            epochs.append({"epoch": epoch, "lr": lr,
                           "train_loss": float(train_loss),
                           "train_acc": float(train_acc),
                           "val_loss": float(val_loss),
                           "val_acc": float(val_acc),
                           "negatives_drawn": len(train_negs) + len(val_negs),
                           "steps": steps,
                           "action": action})

            if action == HALVE:
                lr = learning_rate(schedule, state)
                _set_lr(optimizer, lr)
            elif action == ABORT:
                aborted = True
                break

        if not aborted:
            # ran out the epoch ceiling without aborting: training ends here
            training_done = True
        elif state.restart_index < schedule.restarts and best_epoch is not None:
            state = restart_state(state)
            net = load_checkpoint(best_path).to(dev)
            lr = learning_rate(schedule, state)
            optimizer = _make_optimizer(net, lr, config.weight_decay)
        else:
            training_done = True

    if best_epoch is not None:
        net = load_checkpoint(best_path).to(dev)
    report = {"stage": stage, "seed": seed,
              "class_names": list(class_names),
              "num_classes": net.num_classes,
              "epochs": epochs,
              "cycle_starts": cycle_starts,
              "restarts_used": state.restart_index,
              "best": None if best_epoch is None else {
                  "epoch": best_epoch,
                  "val_loss": state.best_loss,
                  "path": str(best_path)},
              "class_weights": [float(w) for w in weights],
              "config_hash": config.config_hash()}
    return net, report


def loss_value(net: BirdcallNet, batch, targets, class_weights) -> float:
    """Deterministic (dropout off) loss for a numpy batch; used by gradient checks."""
    dtype = _net_dtype(net)
    dev = _net_device(net)
    net.eval()
    with torch.no_grad():
        scores = net(_to_tensor(batch, dtype).to(dev))
        loss = weighted_bce(scores,
                            torch.as_tensor(np.asarray(targets), dtype=dtype, device=dev),
                            torch.as_tensor(np.asarray(class_weights), dtype=dtype,
                                            device=dev))
    return loss.item()


def loss_and_grads(net: BirdcallNet, batch, targets, class_weights) -> tuple:
    """Loss plus gradients for the conversion and head parameters (dropout off)."""
    dtype = _net_dtype(net)
    dev = _net_device(net)
    net.eval()
    net.zero_grad(set_to_none=True)
    scores = net(_to_tensor(batch, dtype).to(dev))
    loss = weighted_bce(scores,
                        torch.as_tensor(np.asarray(targets), dtype=dtype, device=dev),
                        torch.as_tensor(np.asarray(class_weights), dtype=dtype,
                                        device=dev))
    loss.backward()
    grads = {}
    for prefix, module in (("conversion", net.conversion), ("head", net.head)):
        for pname, param in module.named_parameters():
            grads[f"{prefix}.{pname}"] = param.grad.detach().cpu().numpy().copy()
    net.zero_grad(set_to_none=True)
    return loss.item(), grads
