"""The EMA-distillation training loop.

Per step: mix a batch pair (Cutmix or Mixup), form the target label from
the EMA teacher's mixed probability maps, run the student on the mixed
batch, soft cross-entropy, backward, AdamW with the cosine schedule, then
the EMA teacher update. Emits one machine-readable metrics line per step.

The reported train accuracy comes from an extra no-grad forward over the
unmixed images (train-mode statistics); that pass also refreshes the
student's BN running estimates.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from ..engine import Tensor, backward, no_grad
from ..errors import ConfigError
from .distill import distill_target, soft_cross_entropy
from .ema import ema_init, ema_update
from .mixing import cutmix, mixup
from .optim import AdamW, cosine_schedule


@dataclass
class TrainConfig:
    steps: int = 200
    batch_size: int = 16
    base_lr: float = 3e-3
    warmup_steps: int = 10
    weight_decay: float = 0.05
    betas: tuple = (0.9, 0.999)
    alpha: float = 0.5            # mixed-label vs teacher-label tradeoff
    ema_decay: float = 0.9998
    mix: str = "cutmix"           # "cutmix" | "mixup" | "none"
    mix_prob: float = 0.5
    seed: int = 0
    log_every: int = 1


@dataclass
class StepRecord:
    step: int
    loss: float
    lr: float
    train_acc: float


class TrainingDiverged(RuntimeError):
    def __init__(self, step, loss, batch_index):
        super().__init__(
            f"non-finite loss {loss!r} at step {step} (batch index {batch_index});"
            " dumping offending batch stats to stderr")
        self.step = step
        self.batch_index = batch_index


def _accuracy(model, images: np.ndarray, labels: np.ndarray) -> float:
    with no_grad():
        logits = model(Tensor(images))
    return float((np.argmax(logits.data, axis=1) == labels).mean())


def train_loop(model, dataset, config: TrainConfig, teacher_model=None,
               metrics_stream=None):
    """Run the loop; returns (records, student tree, EMA teacher state).

    ``teacher_model`` is a second structurally-identical model used to
    evaluate the EMA weights; required whenever ``alpha < 1``.
    """
    if config.mix not in ("cutmix", "mixup", "none"):
        raise ConfigError(f"unknown mix kind {config.mix!r}")
    if not 0.0 <= config.alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {config.alpha}")
    if config.steps < 1 or config.batch_size < 1:
        raise ConfigError("steps and batch_size must be positive")
    if config.alpha < 1.0 and teacher_model is None:
        raise ConfigError("distillation (alpha < 1) needs a teacher model")

    warmup = min(config.warmup_steps, config.steps - 1)
    rng = np.random.default_rng(config.seed)
    tree = model.param_tree()
    opt = AdamW(tree, lr=config.base_lr, betas=config.betas,
                weight_decay=config.weight_decay)
    ema = ema_init(tree, config.ema_decay)
    if teacher_model is not None:
        teacher_tree = teacher_model.param_tree()
        ema.tree.copy_into(teacher_tree)

    records = []
    model.train(True)
    for step in range(1, config.steps + 1):
        images, labels = dataset.sample(config.batch_size)
        onehot = dataset.one_hot(labels)

        perm = rng.permutation(config.batch_size)
        use_mix = config.mix != "none" and rng.random() < config.mix_prob
        if use_mix:
            xb, yb = images[perm], onehot[perm]
            mixer = cutmix if config.mix == "cutmix" else mixup
            mixed = mixer(images, onehot, xb, yb, rng)
            x_in, y_mix, mask, lam = mixed.image, mixed.label, mixed.mask, mixed.lam
        else:
            x_in, y_mix, mask, lam = images, onehot, None, 1.0

        if config.alpha < 1.0 and use_mix:
            ema.tree.copy_into(teacher_tree)
            target = distill_target(teacher_model, images, images[perm],
                                    mask, y_mix, config.alpha, lam=lam).y_target
        else:
            target = y_mix

        opt.zero_grad()
        logits = model(Tensor(x_in))
        loss = soft_cross_entropy(logits, target)
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            print(f"batch stats: min {x_in.min():.4g} max {x_in.max():.4g} "
                  f"labels {labels.tolist()}", file=sys.stderr)
            raise TrainingDiverged(step, loss_val, step * config.batch_size)
        backward(loss)
        lr = cosine_schedule(step - 1, config.steps, warmup, config.base_lr)
        opt.step(lr)
        ema_update(ema, tree)

        acc = _accuracy(model, images, labels)
        rec = StepRecord(step=step, loss=loss_val, lr=lr, train_acc=acc)
        records.append(rec)
        if metrics_stream is not None and step % config.log_every == 0:
            metrics_stream.write(f"{rec.step},{rec.loss:.6f},{rec.lr:.8f},"
                                 f"{rec.train_acc:.4f}\n")
            metrics_stream.flush()
    return records, tree, ema
