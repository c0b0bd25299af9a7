"""Alternating training of generators, discriminators, and the segmenter.

Each step updates, in order: both generators (adversarial + cycle +
identity), both discriminators (least-squares real/fake on a history
pool), then the segmenter on the frozen B->A generator's output. The
segmenter substep runs the generator under no_grad and its optimizer
holds only segmenter parameters, so every GAN parameter is bit-identical
across that substep.

The reported total follows L_tot = L_GAN + l_cycle*L_cyc + l_identity*L_id
+ l_seg*L_seg; the segmenter itself always trains on the unweighted
L_seg, so l_seg only affects the early-stopping signal.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .losses import l1_loss, lsgan_loss, seg_loss
from .models import ModelBundle, build_models


@dataclass
class TrainConfig:
    """Hyperparameters; defaults are the 3D training settings."""

    lambda_cycle: float = 10.0
    lambda_identity: float = 5.0
    lambda_seg: float = 3.0
    learning_rate: float = 2e-4
    lr_decay_per_epoch: float = 0.01
    epochs: int = 200
    batch_size: int = 1
    patch_size: int = 208
    early_stop_patience: int = 10
    dims: int = 3
    base_width: int = 32
    pool_size: int = 50
    adam_betas: tuple[float, float] = (0.5, 0.999)
    rng_seed: int = 0

    def validate(self) -> None:
        for name in ("lambda_cycle", "lambda_identity", "lambda_seg"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if self.patch_size % 8 != 0:
            raise ValueError(f"patch_size must be divisible by 8, got {self.patch_size}")
        if self.dims not in (2, 3):
            raise ValueError(f"dims must be 2 or 3, got {self.dims}")


def lr_schedule(epoch: int, base_lr: float = 2e-4, decay: float = 0.01) -> float:
    """Learning rate after `epoch` whole epochs: base * (1 - decay)^epoch."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return base_lr * (1.0 - decay) ** epoch


class EarlyStopper:
    """Stop when the loss has not decreased for `patience` consecutive epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.stale_epochs = 0

    def update(self, value: float) -> bool:
        if value < self.best:
            self.best = value
            self.stale_epochs = 0
        else:
            self.stale_epochs += 1
        return self.stale_epochs >= self.patience


class ImagePool:
    """History buffer of generated images used for discriminator updates."""

    def __init__(self, size: int, rng_seed: int = 0):
        self.size = size
        self.images: list[torch.Tensor] = []
        self.rng = np.random.Generator(np.random.PCG64(rng_seed))

    def query(self, image: torch.Tensor) -> torch.Tensor:
        image = image.detach()
        if self.size == 0:
            return image
        if len(self.images) < self.size:
            self.images.append(image)
            return image
        if self.rng.random() < 0.5:
            idx = int(self.rng.integers(0, self.size))
            stored = self.images[idx]
            self.images[idx] = image
            return stored
        return image


@dataclass
class Trainer:
    models: ModelBundle
    config: TrainConfig
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    opt_s: torch.optim.Optimizer
    pool_a: ImagePool
    pool_b: ImagePool
    epoch: int = 0
    history: list[dict] = field(default_factory=list)


def make_trainer(config: TrainConfig) -> Trainer:
    config.validate()
    models = build_models(config)
    lr = config.learning_rate
    betas = config.adam_betas
    opt_g = torch.optim.Adam(
        list(models.g_a2b.parameters()) + list(models.g_b2a.parameters()),
        lr=lr, betas=betas)
    opt_d = torch.optim.Adam(
        list(models.d_a.parameters()) + list(models.d_b.parameters()),
        lr=lr, betas=betas)
    opt_s = torch.optim.Adam(models.segmenter.parameters(), lr=lr, betas=betas)
    return Trainer(models=models, config=config, opt_g=opt_g, opt_d=opt_d,
                   opt_s=opt_s, pool_a=ImagePool(config.pool_size, config.rng_seed),
                   pool_b=ImagePool(config.pool_size, config.rng_seed + 1))


def set_epoch_lr(trainer: Trainer, epoch: int) -> float:
    lr = lr_schedule(epoch, trainer.config.learning_rate,
                     trainer.config.lr_decay_per_epoch)
    for opt in (trainer.opt_g, trainer.opt_d, trainer.opt_s):
        for group in opt.param_groups:
            group["lr"] = lr
    return lr


def _set_requires_grad(modules, flag: bool) -> None:
    for m in modules:
        for p in m.parameters():
            p.requires_grad_(flag)


def generator_substep(trainer: Trainer, real_a: torch.Tensor,
                      real_b: torch.Tensor) -> dict:
    m, cfg = trainer.models, trainer.config
    _set_requires_grad([m.d_a, m.d_b], False)
    trainer.opt_g.zero_grad()

    fake_b = m.g_a2b(real_a)
    fake_a = m.g_b2a(real_b)
    rec_a = m.g_b2a(fake_b)
    rec_b = m.g_a2b(fake_a)
    idt_a = m.g_b2a(real_a)
    idt_b = m.g_a2b(real_b)

    loss_gan_a2b = lsgan_loss(m.d_b(fake_b), target_real=True)
    loss_gan_b2a = lsgan_loss(m.d_a(fake_a), target_real=True)
    loss_cycle = l1_loss(rec_a, real_a) + l1_loss(rec_b, real_b)
    loss_identity = l1_loss(idt_a, real_a) + l1_loss(idt_b, real_b)
    loss_g = (loss_gan_a2b + loss_gan_b2a + cfg.lambda_cycle * loss_cycle
              + cfg.lambda_identity * loss_identity)
    loss_g.backward()
    trainer.opt_g.step()
    _set_requires_grad([m.d_a, m.d_b], True)
    return {
        "gan_a2b": loss_gan_a2b.item(), "gan_b2a": loss_gan_b2a.item(),
        "cycle": loss_cycle.item(), "identity": loss_identity.item(),
        "fake_a": fake_a.detach(), "fake_b": fake_b.detach(),
    }


def discriminator_substep(trainer: Trainer, real_a: torch.Tensor,
                          real_b: torch.Tensor, fake_a: torch.Tensor,
                          fake_b: torch.Tensor) -> dict:
    m = trainer.models
    trainer.opt_d.zero_grad()
    pooled_a = trainer.pool_a.query(fake_a)
    pooled_b = trainer.pool_b.query(fake_b)
    loss_d_a = 0.5 * (lsgan_loss(m.d_a(real_a), True)
                      + lsgan_loss(m.d_a(pooled_a), False))
    loss_d_b = 0.5 * (lsgan_loss(m.d_b(real_b), True)
                      + lsgan_loss(m.d_b(pooled_b), False))
    (loss_d_a + loss_d_b).backward()
    trainer.opt_d.step()
    return {"d_a": loss_d_a.item(), "d_b": loss_d_b.item()}


def segmenter_substep(trainer: Trainer, real_b: torch.Tensor,
                      label_b: torch.Tensor) -> dict:
    """Train S on the frozen B->A generator's output; GAN weights untouched."""
    m = trainer.models
    with torch.no_grad():
        adapted = m.g_b2a(real_b)
    trainer.opt_s.zero_grad()
    logits = m.segmenter(adapted)
    prob_fg = torch.softmax(logits, dim=1)[:, 1]
    if label_b.dim() == prob_fg.dim() + 1:
        label_b = label_b[:, 0]
    loss = seg_loss(prob_fg, label_b)
    loss.backward()
    trainer.opt_s.step()
    return {"seg": loss.item()}


def train_step(trainer: Trainer, real_a: torch.Tensor, real_b: torch.Tensor,
               label_b: torch.Tensor) -> dict:
    """One alternating update; returns every loss component plus L_tot."""
    if label_b is None:
        raise ValueError("domain-B batches must carry a label")
    cfg = trainer.config
    g = generator_substep(trainer, real_a, real_b)
    d = discriminator_substep(trainer, real_a, real_b, g.pop("fake_a"),
                              g.pop("fake_b"))
    s = segmenter_substep(trainer, real_b, label_b)
    losses = g | d | s
    losses["total"] = (losses["gan_a2b"] + losses["gan_b2a"]
                       + cfg.lambda_cycle * losses["cycle"]
                       + cfg.lambda_identity * losses["identity"]
                       + cfg.lambda_seg * losses["seg"])
    return losses


def train_loop(trainer: Trainer, sampler, out_dir, steps_per_epoch: int,
               epochs: int | None = None, log=print) -> list[dict]:
    """Epoch loop with per-epoch LR decay, CSV logging, checkpoints, early stop.

    ``sampler(step)`` must yield (real_a, real_b, label_b) batches.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    epochs = trainer.config.epochs if epochs is None else epochs
    stopper = EarlyStopper(trainer.config.early_stop_patience)
    csv_path = out / "losses.csv"
    fieldnames = ["epoch", "lr", "gan_a2b", "gan_b2a", "cycle", "identity",
                  "d_a", "d_b", "seg", "total"]
    best_total = math.inf

    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for epoch in range(epochs):
            trainer.epoch = epoch
            lr = set_epoch_lr(trainer, epoch)
            sums: dict[str, float] = {}
            for step in range(steps_per_epoch):
                real_a, real_b, label_b = sampler(epoch * steps_per_epoch + step)
                losses = train_step(trainer, real_a, real_b, label_b)
                for k, v in losses.items():
                    sums[k] = sums.get(k, 0.0) + v
            means = {k: v / steps_per_epoch for k, v in sums.items()}
            row = {"epoch": epoch, "lr": lr} | {k: means[k] for k in fieldnames[2:]}
            writer.writerow(row)
            fh.flush()
            trainer.history.append(row)
            log(f"epoch {epoch}: total={means['total']:.4f} seg={means['seg']:.4f} "
                f"lr={lr:.2e}")
            save_checkpoint(trainer, out / "checkpoint_last.pt")
            if means["total"] < best_total:
                best_total = means["total"]
                save_checkpoint(trainer, out / "checkpoint_best.pt")
            if stopper.update(means["total"]):
                log(f"early stop: no L_tot decrease for "
                    f"{trainer.config.early_stop_patience} consecutive epochs")
                break
    return trainer.history


def save_checkpoint(trainer: Trainer, path) -> None:
    payload = {
        "epoch": trainer.epoch,
        "config": trainer.config.__dict__,
        "models": {name: m.state_dict()
                   for name, m in trainer.models.all_modules().items()},
    }
    torch.save(payload, path)


def load_segmenter(path, config: TrainConfig | None = None):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    cfg = TrainConfig(**payload["config"]) if config is None else config
    models = build_models(cfg)
    models.segmenter.load_state_dict(payload["models"]["segmenter"])
    models.segmenter.eval()
    return models.segmenter, cfg
