"""Alternating teacher/student training over a shared RGB-to-depth generator.

Each epoch interleaves one supervised (teacher) step and one unpaired
(student) step per iteration, shuffling both datasets and cycling the
shorter one. The teacher step updates the shared generator and the depth
discriminator; the student step updates both generators at its own learning
rate and the RGB discriminator, never the depth discriminator.
Discriminators are fed from 50-slot replay pools of past generated images.

Config files are flat ``key=value`` text whose keys match TrainingConfig
field names exactly. Loss curves are emitted as CSV rows of
(epoch, step, loss_name, value).
"""

from __future__ import annotations

import csv
import hashlib
import math
import random
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import torch

from . import checkpoints
from .datasets import PairedSample, UnpairedSample
from .errors import ConfigError, TrainingDiverged, ValidationError
from .losses import LossWeights, cycle_loss, disc_loss, gen_adv_loss, pixel_loss
from .models import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    image_to_tensor,
    init_discriminator,
    init_generator,
)

MODES = ("full", "teacher_only", "teacher_generator_only")

ADAM_BETAS = (0.5, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainingConfig:
    """All hyperparameters of one training run."""

    lambda_pixel: float = 10.0
    lambda_cyc: float = 5.0
    alpha_teach: float = 2e-4
    alpha_student: float = 2e-6
    beta_decay: float = 0.5
    teacher_decay_epoch: int = 25
    student_decay_epoch: int = 50
    total_epochs: int = 100
    batch_size: int = 1
    seed: int = 0
    mode: str = "full"
    image_size: int = 128
    gen_base_maps: int = 64
    gen_res_blocks: int = 6
    disc_base_maps: int = 64
    disc_layers: int = 4
    pool_size: int = 50
    checkpoint_every: int = 5
    teacher_data: str = ""
    target_data: str = ""

    def validate(self):
        if self.alpha_teach <= 0 or self.alpha_student <= 0:
            raise ConfigError("learning rates must be > 0")
        if not 0 < self.beta_decay <= 1:
            raise ConfigError(f"beta_decay must be in (0, 1], got {self.beta_decay}")
        if self.total_epochs < 0:
            raise ConfigError("total_epochs must be >= 0")
        if (
            self.teacher_decay_epoch > self.total_epochs
            or self.student_decay_epoch > self.total_epochs
        ):
            raise ConfigError(
                "decay epochs must not exceed total_epochs "
                f"(got {self.teacher_decay_epoch}/{self.student_decay_epoch} "
                f"vs N={self.total_epochs})"
            )
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size != 1:
            raise ConfigError("only batch_size=1 is supported")
        if self.pool_size < 0:
            raise ConfigError("pool_size must be >= 0")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(lambda_pixel=self.lambda_pixel, lambda_cyc=self.lambda_cyc)

    def generator_config(self) -> GeneratorConfig:
        b = self.gen_base_maps
        return GeneratorConfig(maps=(b, 2 * b, 4 * b), res_blocks=self.gen_res_blocks)

    def discriminator_config(self) -> DiscriminatorConfig:
        b = self.disc_base_maps
        maps = tuple(b * min(2**i, 4) for i in range(self.disc_layers))
        return DiscriminatorConfig(maps=maps)

    def canonical_text(self) -> str:
        return "".join(
            f"{f.name}={getattr(self, f.name)}\n" for f in fields(self)
        )

    def content_hash(self) -> str:
        return hashlib.sha1(self.canonical_text().encode()).hexdigest()


def parse_config_file(path: Path | str) -> dict[str, str]:
    """Read flat key=value lines; '#' starts a comment."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def apply_config_values(config: TrainingConfig, values: dict[str, str]) -> TrainingConfig:
    """Override config fields from string values, coercing types per field."""
    by_name = {f.name: f for f in fields(TrainingConfig)}
    updates = {}
    for key, value in values.items():
        if key not in by_name:
            raise ConfigError(
                f"unknown config key {key!r}; valid keys: {', '.join(sorted(by_name))}"
            )
        ftype = by_name[key].type
        try:
            if ftype == "int":
                updates[key] = int(value)
            elif ftype == "float":
                updates[key] = float(value)
            else:
                updates[key] = value
        except ValueError as exc:
            raise ConfigError(f"config key {key}: cannot parse {value!r}") from exc
    return replace(config, **updates)


def lr_schedule(epoch: int, base: float, decay_start: int, decay_rate: float) -> float:
    """base * decay_rate^max(0, epoch - decay_start): flat until the trigger
    epoch, multiplicative per-epoch decay strictly after it."""
    if epoch < 0:
        raise ValidationError(f"epoch must be >= 0, got {epoch}")
    return base * decay_rate ** max(0, epoch - decay_start)


class ImagePool:
    """Replay buffer of past generated images for discriminator updates.

    Below capacity every query stores its input and returns it. At capacity,
    one uniform draw decides: with probability 1/2 the input is returned
    unchanged (and not stored), otherwise a uniformly chosen buffered image is
    swapped out for the input and returned. Draw order per query is exactly
    one rng.random(), then one rng.randrange(capacity) when swapping.
    """

    def __init__(self, capacity: int = 50, seed: int = 0, rng: random.Random | None = None):
        self.capacity = capacity
        self.images: list[torch.Tensor] = []
        self.rng = rng if rng is not None else random.Random(seed)

    def __len__(self) -> int:
        return len(self.images)

    def query(self, image: torch.Tensor) -> torch.Tensor:
        if self.capacity == 0:
            return image
        if len(self.images) < self.capacity:
            self.images.append(image.detach().clone())
            return image
        if self.rng.random() < 0.5:
            return image
        idx = self.rng.randrange(self.capacity)
        old = self.images[idx]
        self.images[idx] = image.detach().clone()
        return old

    def state(self) -> dict:
        return {
            "capacity": self.capacity,
            "images": [t.clone() for t in self.images],
            "rng_state": self.rng.getstate(),
        }

    @classmethod
    def from_state(cls, state: dict) -> "ImagePool":
        pool = cls(capacity=state["capacity"])
        pool.images = [t.clone() for t in state["images"]]
        pool.rng.setstate(state["rng_state"])
        return pool


@dataclass
class TrainState:
    """Everything the loop mutates: the four networks, their optimizer
    moments, the two replay pools, shuffle RNG, and the epoch counter.

    g_a2b is the shared generator: teacher and student steps mutate the same
    parameter set.
    """

    g_a2b: Generator
    g_b2a: Generator
    d_depth: Discriminator
    d_rgb: Discriminator
    opt_g_a2b: torch.optim.Adam
    opt_g_b2a: torch.optim.Adam
    opt_d_depth: torch.optim.Adam
    opt_d_rgb: torch.optim.Adam
    depth_pool: ImagePool
    rgb_pool: ImagePool
    shuffle_rng: random.Random
    epoch: int = 0


def _adam(module: torch.nn.Module, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(module.parameters(), lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS)


def init_state(config: TrainingConfig) -> TrainState:
    """Deterministically seeded fresh state (sub-seeds derived from config.seed)."""
    gcfg = config.generator_config()
    dcfg = config.discriminator_config()
    g_a2b = init_generator(config.seed, gcfg)
    g_b2a = init_generator(config.seed + 1, gcfg)
    d_depth = init_discriminator(config.seed + 2, dcfg)
    d_rgb = init_discriminator(config.seed + 3, dcfg)
    return TrainState(
        g_a2b=g_a2b,
        g_b2a=g_b2a,
        d_depth=d_depth,
        d_rgb=d_rgb,
        opt_g_a2b=_adam(g_a2b, config.alpha_teach),
        opt_g_b2a=_adam(g_b2a, config.alpha_student),
        opt_d_depth=_adam(d_depth, config.alpha_teach),
        opt_d_rgb=_adam(d_rgb, config.alpha_student),
        depth_pool=ImagePool(config.pool_size, seed=config.seed + 4),
        rgb_pool=ImagePool(config.pool_size, seed=config.seed + 5),
        shuffle_rng=random.Random(config.seed + 6),
        epoch=0,
    )


def _set_lr(opt: torch.optim.Optimizer, lr: float):
    for group in opt.param_groups:
        group["lr"] = lr


def _check_finite(record: dict, epoch: int):
    bad = {k: v for k, v in record.items() if not math.isfinite(v)}
    if bad:
        raise TrainingDiverged(
            f"non-finite loss at epoch {epoch}: {bad}", epoch=epoch, record=record
        )


def teacher_step(state: TrainState, sample: PairedSample, config: TrainingConfig) -> dict:
    """One supervised update: generator on adversarial + pixel loss, then the
    depth discriminator on (real depth, pooled fake depth).

    In teacher_generator_only mode the adversarial term is dropped and the
    depth discriminator is never touched. Returns {adv, pixel, disc}.
    """
    rgb = image_to_tensor(sample.rgb)
    depth = image_to_tensor(sample.depth)
    lr = lr_schedule(
        state.epoch, config.alpha_teach, config.teacher_decay_epoch, config.beta_decay
    )
    adversarial = config.mode != "teacher_generator_only"

    fake_depth = state.g_a2b(rgb)
    pix = pixel_loss(depth, fake_depth)
    if adversarial:
        adv = gen_adv_loss(state.d_depth(fake_depth))
    else:
        adv = torch.zeros(())
    total = adv + config.lambda_pixel * pix

    # Abort on divergence before any update so the snapshot predates it.
    record = {"adv": float(adv.detach()), "pixel": float(pix.detach())}
    _check_finite(record, state.epoch)

    _set_lr(state.opt_g_a2b, lr)
    state.opt_g_a2b.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g_a2b.step()

    if adversarial:
        pooled = state.depth_pool.query(fake_depth.detach())
        d_total = disc_loss(state.d_depth(depth), state.d_depth(pooled))
        record["disc"] = float(d_total.detach())
        _check_finite(record, state.epoch)
        _set_lr(state.opt_d_depth, lr)
        state.opt_d_depth.zero_grad(set_to_none=True)
        d_total.backward()
        state.opt_d_depth.step()
    else:
        record["disc"] = 0.0
    return record


def student_step(state: TrainState, sample: UnpairedSample, config: TrainingConfig) -> dict:
    """One unpaired update: both generators on the depth-branch adversarial
    term (scored by the teacher's depth discriminator), the rgb-branch
    adversarial term, and the cycle term; then the RGB discriminator on
    (real rgb, pooled reconstruction). The depth discriminator is not
    updated here. Returns {adv_depth, adv_rgb, cyc, disc_rgb}.
    """
    rgb = image_to_tensor(sample.rgb)
    lr = lr_schedule(
        state.epoch, config.alpha_student, config.student_decay_epoch, config.beta_decay
    )

    fake_depth = state.g_a2b(rgb)
    reconstructed = state.g_b2a(fake_depth)
    adv_depth = gen_adv_loss(state.d_depth(fake_depth))
    adv_rgb = gen_adv_loss(state.d_rgb(reconstructed))
    cyc = cycle_loss(rgb, reconstructed)
    total = adv_depth + adv_rgb + config.lambda_cyc * cyc

    record = {
        "adv_depth": float(adv_depth.detach()),
        "adv_rgb": float(adv_rgb.detach()),
        "cyc": float(cyc.detach()),
    }
    _check_finite(record, state.epoch)

    _set_lr(state.opt_g_a2b, lr)
    _set_lr(state.opt_g_b2a, lr)
    state.opt_g_a2b.zero_grad(set_to_none=True)
    state.opt_g_b2a.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g_a2b.step()
    state.opt_g_b2a.step()

    pooled = state.rgb_pool.query(reconstructed.detach())
    d_total = disc_loss(state.d_rgb(rgb), state.d_rgb(pooled))
    record["disc_rgb"] = float(d_total.detach())
    _check_finite(record, state.epoch)
    _set_lr(state.opt_d_rgb, lr)
    state.opt_d_rgb.zero_grad(set_to_none=True)
    d_total.backward()
    state.opt_d_rgb.step()
    return record


@dataclass
class TrainResult:
    state: TrainState
    records: list[tuple[int, int, dict]]  # (epoch, step, losses)
    epoch_means: list[dict]  # one dict per epoch, keyed by loss name
    checkpoint_dirs: list[Path] = field(default_factory=list)


def train(
    config: TrainingConfig,
    teacher_samples: Sequence[PairedSample],
    target_samples: Sequence[UnpairedSample] = (),
    state: TrainState | None = None,
    out_dir: Path | str | None = None,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Run epochs state.epoch+1 .. total_epochs of the alternating loop.

    Checkpoints are written under out_dir every config.checkpoint_every
    epochs and at the final epoch. A non-finite loss aborts with a diagnostic
    snapshot (when out_dir is set) instead of continuing.
    """
    config.validate()
    student_active = config.mode == "full"
    if not teacher_samples:
        raise ValidationError("teacher dataset is empty")
    if student_active and not target_samples:
        raise ValidationError("target dataset is empty but mode=full needs it")

    if state is None:
        state = init_state(config)
    out_dir = Path(out_dir) if out_dir is not None else None
    records: list[tuple[int, int, dict]] = []
    epoch_means: list[dict] = []
    checkpoint_dirs: list[Path] = []

    for epoch in range(state.epoch + 1, config.total_epochs + 1):
        state.epoch = epoch
        t_order = list(range(len(teacher_samples)))
        state.shuffle_rng.shuffle(t_order)
        if student_active:
            r_order = list(range(len(target_samples)))
            state.shuffle_rng.shuffle(r_order)
            steps = max(len(t_order), len(r_order))
        else:
            steps = len(t_order)

        sums: dict[str, float] = {}
        count = 0
        try:
            for step in range(steps):
                record = teacher_step(
                    state, teacher_samples[t_order[step % len(t_order)]], config
                )
                if student_active:
                    record.update(
                        student_step(
                            state, target_samples[r_order[step % len(r_order)]], config
                        )
                    )
                records.append((epoch, step, record))
                for k, v in record.items():
                    sums[k] = sums.get(k, 0.0) + v
                count += 1
        except TrainingDiverged as exc:
            if out_dir is not None:
                snap = checkpoints.save_checkpoint(
                    out_dir / f"diverged_epoch_{epoch:04d}", state, config, exc.record
                )
                if log:
                    log(f"diverged; snapshot at {snap}")
            raise

        means = {k: v / count for k, v in sums.items()}
        means["epoch"] = epoch
        epoch_means.append(means)
        if log:
            summary = ", ".join(f"{k}={v:.4f}" for k, v in means.items() if k != "epoch")
            log(f"epoch {epoch}/{config.total_epochs}: {summary}")

        if out_dir is not None and (
            epoch % config.checkpoint_every == 0 or epoch == config.total_epochs
        ):
            ckpt = checkpoints.save_checkpoint(
                out_dir / f"epoch_{epoch:04d}", state, config, means
            )
            checkpoint_dirs.append(ckpt)

    return TrainResult(
        state=state,
        records=records,
        epoch_means=epoch_means,
        checkpoint_dirs=checkpoint_dirs,
    )


def write_loss_csv(records: Sequence[tuple[int, int, dict]], path: Path | str):
    """Long-format loss curves: one row per (epoch, step, loss_name, value)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "step", "loss_name", "value"])
        for epoch, step, record in records:
            for name in sorted(record):
                writer.writerow([epoch, step, name, repr(record[name])])


def write_epoch_means_csv(epoch_means: Sequence[dict], path: Path | str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss_name", "value"])
        for means in epoch_means:
            for name in sorted(k for k in means if k != "epoch"):
                writer.writerow([means["epoch"], name, repr(means[name])])
