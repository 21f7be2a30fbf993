"""Checkpoint archives: one file per network component plus a JSON manifest.

A checkpoint directory holds ``g_a2b.pt`` / ``g_b2a.pt`` / ``d_depth.pt`` /
``d_rgb.pt`` (only the components the active mode trains), ``manifest.json``
with {epoch, config hash, seed, metric snapshot, architecture}, and
``training_state.pt`` carrying optimizer moments, replay pools, and RNG
states so a resumed run continues bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import TYPE_CHECKING

import torch

from .errors import CheckpointError
from .models import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    PassthroughGenerator,
)

if TYPE_CHECKING:  # import cycle: training imports this module
    from .training import TrainingConfig, TrainState

MANIFEST = "manifest.json"
STATE_FILE = "training_state.pt"

# Components each mode trains; untouched components are not archived.
_MODE_COMPONENTS = {
    "full": ("g_a2b", "g_b2a", "d_depth", "d_rgb"),
    "teacher_only": ("g_a2b", "d_depth"),
    "teacher_generator_only": ("g_a2b",),
}


def save_checkpoint(
    ckpt_dir: Path | str,
    state: "TrainState",
    config: "TrainingConfig",
    metrics: dict | None = None,
) -> Path:
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    components = _MODE_COMPONENTS[config.mode]

    nets = {
        "g_a2b": (state.g_a2b, "generator"),
        "g_b2a": (state.g_b2a, "generator"),
        "d_depth": (state.d_depth, "discriminator"),
        "d_rgb": (state.d_rgb, "discriminator"),
    }
    for name in components:
        net, kind = nets[name]
        torch.save(
            {
                "kind": kind,
                "config": asdict(net.config),
                "state_dict": net.state_dict(),
            },
            ckpt_dir / f"{name}.pt",
        )

    opts = {
        "g_a2b": state.opt_g_a2b,
        "g_b2a": state.opt_g_b2a,
        "d_depth": state.opt_d_depth,
        "d_rgb": state.opt_d_rgb,
    }
    torch.save(
        {
            "epoch": state.epoch,
            "optimizers": {n: opts[n].state_dict() for n in components},
            "depth_pool": state.depth_pool.state(),
            "rgb_pool": state.rgb_pool.state(),
            "shuffle_rng": state.shuffle_rng.getstate(),
        },
        ckpt_dir / STATE_FILE,
    )

    manifest = {
        "epoch": state.epoch,
        "config_hash": config.content_hash(),
        "seed": config.seed,
        "mode": config.mode,
        "image_size": config.image_size,
        "components": list(components),
        "architecture": {
            "generator": asdict(config.generator_config()),
            "discriminator": asdict(config.discriminator_config()),
        },
        "metrics": metrics or {},
    }
    (ckpt_dir / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return ckpt_dir


def save_passthrough_checkpoint(ckpt_dir: Path | str, image_size: int = 128) -> Path:
    """Debug checkpoint whose generators are identity maps; plumbing oracle."""
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "epoch": 0,
        "config_hash": "passthrough",
        "seed": 0,
        "mode": "passthrough",
        "image_size": image_size,
        "components": [],
        "architecture": {"generator": {"kind": "passthrough"}},
        "metrics": {},
    }
    (ckpt_dir / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return ckpt_dir


def read_manifest(ckpt_dir: Path | str) -> dict:
    path = Path(ckpt_dir) / MANIFEST
    if not path.is_file():
        raise CheckpointError(f"no checkpoint manifest at {path}")
    return json.loads(path.read_text())


def _load_into(net: torch.nn.Module, payload: dict, name: str):
    saved = payload["state_dict"]
    current = net.state_dict()
    diffs = []
    for key, tensor in current.items():
        if key not in saved:
            diffs.append(f"missing {key}")
        elif tuple(saved[key].shape) != tuple(tensor.shape):
            diffs.append(
                f"{key}: checkpoint {tuple(saved[key].shape)} vs model {tuple(tensor.shape)}"
            )
    diffs.extend(f"unexpected {k}" for k in saved if k not in current)
    if diffs:
        raise CheckpointError(
            f"{name}: architecture mismatch: " + "; ".join(diffs[:8])
        )
    net.load_state_dict(saved)


def _build_net(payload: dict) -> torch.nn.Module:
    if payload["kind"] == "generator":
        cfg = GeneratorConfig(**{**payload["config"], "maps": tuple(payload["config"]["maps"])})
        return Generator(cfg)
    cfg = DiscriminatorConfig(
        **{**payload["config"], "maps": tuple(payload["config"]["maps"])}
    )
    return Discriminator(cfg)


def load_component(ckpt_dir: Path | str, name: str) -> torch.nn.Module:
    """Rebuild one archived network (architecture from its own archive)."""
    path = Path(ckpt_dir) / f"{name}.pt"
    if not path.is_file():
        raise CheckpointError(f"checkpoint {ckpt_dir} has no component {name}")
    payload = torch.load(path, weights_only=False)
    net = _build_net(payload)
    _load_into(net, payload, name)
    net.eval()
    return net


def load_generator(ckpt_dir: Path | str, name: str = "g_a2b") -> torch.nn.Module:
    """The inference entry point: hallucination generator (or passthrough)."""
    manifest = read_manifest(ckpt_dir)
    if manifest.get("architecture", {}).get("generator", {}).get("kind") == "passthrough":
        return PassthroughGenerator()
    return load_component(ckpt_dir, name)


def has_component(ckpt_dir: Path | str, name: str) -> bool:
    return (Path(ckpt_dir) / f"{name}.pt").is_file()


def restore_state(ckpt_dir: Path | str, config: "TrainingConfig") -> "TrainState":
    """Rebuild a TrainState from a checkpoint for resumption or continuation.

    Components absent from the checkpoint (e.g. the student pair after a
    teacher_only run) are freshly initialized from config.seed, so a
    teacher-only checkpoint can be continued in full mode.
    """
    from .training import ImagePool, init_state

    ckpt_dir = Path(ckpt_dir)
    manifest = read_manifest(ckpt_dir)
    if manifest.get("mode") == "passthrough":
        raise CheckpointError("cannot resume training from a passthrough checkpoint")

    state = init_state(config)
    payload = torch.load(ckpt_dir / STATE_FILE, weights_only=False)
    state.epoch = payload["epoch"]
    state.shuffle_rng.setstate(payload["shuffle_rng"])

    nets = {
        "g_a2b": state.g_a2b,
        "g_b2a": state.g_b2a,
        "d_depth": state.d_depth,
        "d_rgb": state.d_rgb,
    }
    opts = {
        "g_a2b": state.opt_g_a2b,
        "g_b2a": state.opt_g_b2a,
        "d_depth": state.opt_d_depth,
        "d_rgb": state.opt_d_rgb,
    }
    for name in manifest["components"]:
        archived = torch.load(ckpt_dir / f"{name}.pt", weights_only=False)
        _load_into(nets[name], archived, name)
        if name in payload["optimizers"]:
            opts[name].load_state_dict(payload["optimizers"][name])

    if "d_depth" in manifest["components"]:
        state.depth_pool = ImagePool.from_state(payload["depth_pool"])
    if "d_rgb" in manifest["components"]:
        state.rgb_pool = ImagePool.from_state(payload["rgb_pool"])
    return state


def latest_checkpoint(run_dir: Path | str) -> Path:
    """Most recent epoch_NNNN checkpoint under a run directory."""
    run_dir = Path(run_dir)
    candidates = sorted(p for p in run_dir.glob("epoch_*") if (p / MANIFEST).is_file())
    if not candidates:
        raise CheckpointError(f"no checkpoints under {run_dir}")
    return candidates[-1]
