"""Command-line entry point.

Commands: train, hallucinate, eval-quality, eval-recognition, make-synthetic,
export-samples. Every command resolves a run directory (--out, else under
$DEPTH_HALLUC_OUT, else ./outputs), writes a run manifest there before doing
any work, and exits 0 on success, 1 on runtime failure, 2 on usage or
configuration errors.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import os
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import checkpoints, datasets, metrics, recognition, training
from .errors import ConfigError, DepthHallucError
from .models import generator_forward

OUT_ROOT_ENV = "DEPTH_HALLUC_OUT"


@dataclasses.dataclass
class RunManifest:
    """What ran, with which resolved config, where, and when."""

    command: str
    config: dict
    seed: int | None
    config_hash: str
    created_at: str
    out_dir: str

    def write(self, out_dir: Path):
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "run_manifest.json").write_text(
            json.dumps(dataclasses.asdict(self), indent=2) + "\n"
        )


def _out_root() -> Path:
    return Path(os.environ.get(OUT_ROOT_ENV, "outputs"))


def _resolve_out(out: str | None, default_name: str) -> Path:
    return Path(out) if out else _out_root() / default_name


def _write_manifest(command: str, out_dir: Path, config: dict, seed=None, config_hash=""):
    RunManifest(
        command=command,
        config=config,
        seed=seed,
        config_hash=config_hash,
        created_at=datetime.now(timezone.utc).isoformat(),
        out_dir=str(out_dir),
    ).write(out_dir)


def _cli_errors(func):
    """Map toolkit errors to exit codes: config/usage -> 2, runtime -> 1."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ConfigError as exc:
            raise click.UsageError(str(exc))
        except DepthHallucError as exc:
            raise click.ClickException(str(exc))

    return wrapper


def _parse_sets(pairs: tuple[str, ...]) -> dict[str, str]:
    values = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _resolve_config(config_path, sets, seed, mode, epochs) -> training.TrainingConfig:
    # Precedence per key: built-in default < config file < --set < named flag.
    config = training.TrainingConfig()
    if config_path:
        config = training.apply_config_values(
            config, training.parse_config_file(config_path)
        )
    config = training.apply_config_values(config, _parse_sets(sets))
    named: dict[str, str] = {}
    if seed is not None:
        named["seed"] = str(seed)
    if mode is not None:
        named["mode"] = mode
    if epochs is not None:
        named["total_epochs"] = str(epochs)
    config = training.apply_config_values(config, named)
    config.validate()
    return config


def _dataset_root(path_value: str, key: str) -> Path:
    if not path_value:
        raise ConfigError(f"config key {key} is required (no dataset root given)")
    root = Path(path_value)
    if not root.is_dir():
        raise ConfigError(f"{key}: dataset root does not exist: {root}")
    return root


@click.group()
def main():
    """Teacher-student depth hallucination toolkit."""


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE")
@click.option("--seed", type=int, default=None)
@click.option("--mode", type=click.Choice(training.MODES), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--resume", is_flag=True, help="Continue from the latest checkpoint in the run directory.")
@_cli_errors
def cmd_train(config_path, sets, seed, mode, epochs, out, resume):
    """Run the alternating teacher/student training loop."""
    config = _resolve_config(config_path, sets, seed, mode, epochs)
    teacher_root = _dataset_root(config.teacher_data, "teacher_data")
    teacher = datasets.load_paired_dataset(
        datasets.build_manifest(teacher_root, config.image_size, paired=True)
    )
    target = ()
    if config.mode == "full":
        target_root = _dataset_root(config.target_data, "target_data")
        target = datasets.load_rgb_dataset(
            datasets.build_manifest(target_root, config.image_size, paired=False)
        )

    out_dir = _resolve_out(out, f"train_{config.content_hash()[:8]}")
    _write_manifest(
        "train",
        out_dir,
        dataclasses.asdict(config),
        seed=config.seed,
        config_hash=config.content_hash(),
    )

    state = None
    if resume:
        latest = checkpoints.latest_checkpoint(out_dir)
        state = checkpoints.restore_state(latest, config)
        click.echo(f"resuming from {latest} (epoch {state.epoch})")

    result = training.train(
        config, teacher, target, state=state, out_dir=out_dir, log=click.echo
    )
    training.write_loss_csv(result.records, out_dir / "losses.csv")
    training.write_epoch_means_csv(result.epoch_means, out_dir / "epoch_means.csv")
    click.echo(f"run complete: {out_dir}")


@main.command("hallucinate")
@click.argument("rgb_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--size", type=int, default=None, help="Override the checkpoint's image size.")
@_cli_errors
def cmd_hallucinate(rgb_dir, checkpoint, out, size):
    """Write one 8-bit grayscale depth image per RGB input, same basenames."""
    manifest = checkpoints.read_manifest(checkpoint)
    image_size = size or manifest["image_size"]
    gen = checkpoints.load_generator(checkpoint)

    out_dir = _resolve_out(out, "hallucinated")
    _write_manifest(
        "hallucinate",
        out_dir,
        {"checkpoint": str(checkpoint), "rgb_dir": str(rgb_dir), "size": image_size},
        config_hash=manifest.get("config_hash", ""),
    )

    files = sorted(p for p in Path(rgb_dir).iterdir() if p.is_file())
    for path in files:
        rgb = datasets.preprocess(datasets.load_raw_image(path), image_size)
        depth = generator_forward(gen, rgb)
        gray = datasets.to_uint8(depth.mean(axis=2))
        Image.fromarray(gray, mode="L").save(out_dir / f"{path.stem}.png")
    click.echo(f"wrote {len(files)} depth images to {out_dir}")


@main.command("eval-quality")
@click.argument("data_root", type=click.Path(exists=True, file_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=None)
@_cli_errors
def cmd_eval_quality(data_root, checkpoint, out):
    """Score hallucinated depth against ground truth on a paired set."""
    manifest = checkpoints.read_manifest(checkpoint)
    gen = checkpoints.load_generator(checkpoint)
    samples = datasets.load_paired_dataset(
        datasets.build_manifest(data_root, manifest["image_size"], paired=True)
    )

    out_dir = _resolve_out(out, "eval_quality")
    _write_manifest(
        "eval-quality",
        out_dir,
        {"checkpoint": str(checkpoint), "data_root": str(data_root)},
        config_hash=manifest.get("config_hash", ""),
    )

    report, rows = metrics.evaluate_set_detailed(
        samples, lambda rgb: generator_forward(gen, rgb)
    )
    (out_dir / "quality_report.json").write_text(report.to_json())
    with open(out_dir / "per_image_metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=metrics.PER_IMAGE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    click.echo(report.to_json().strip())


@main.command("eval-recognition")
@click.argument("data_root", type=click.Path(exists=True, file_okay=False))
@click.option("--checkpoint", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--folds", type=int, default=2, show_default=True)
@click.option("--size", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--depth-source", type=click.Choice(["hallucinated", "ground_truth"]), default="hallucinated", show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@_cli_errors
def cmd_eval_recognition(data_root, checkpoint, folds, size, seed, depth_source, out):
    """Rank-1 identification with RGB + (hallucinated) depth fusion, k-fold."""
    generate = None
    if depth_source == "hallucinated":
        if checkpoint is None:
            raise ConfigError("--checkpoint is required for hallucinated depth")
        gen = checkpoints.load_generator(checkpoint)
        generate = lambda rgb: generator_forward(gen, rgb)  # noqa: E731

    samples = datasets.load_paired_dataset(
        datasets.build_manifest(data_root, size, paired=True)
    )
    out_dir = _resolve_out(out, "eval_recognition")
    _write_manifest(
        "eval-recognition",
        out_dir,
        {
            "data_root": str(data_root),
            "checkpoint": str(checkpoint) if checkpoint else None,
            "folds": folds,
            "depth_source": depth_source,
            "size": size,
        },
        seed=seed,
    )

    reports = []
    for i, (train_split, test_split) in enumerate(
        datasets.split_folds(samples, folds, seed)
    ):
        report = recognition.run_protocol(
            train_split,
            test_split,
            generate=generate,
            seed=seed,
            descriptor=f"fold {i + 1}/{folds}",
        )
        reports.append(report)
        click.echo(f"fold {i + 1}/{folds}: {report.rank1}")
    mean = recognition.mean_report(reports)

    payload = {
        "folds": [r.to_dict() for r in reports],
        "mean": mean.to_dict(),
    }
    (out_dir / "recognition_report.json").write_text(json.dumps(payload, indent=2) + "\n")
    (out_dir / "recognition_table.md").write_text(
        recognition.markdown_table([*reports, mean])
    )
    click.echo(f"mean: {mean.rank1}")


@main.command("make-synthetic")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--n", type=int, default=200, show_default=True)
@click.option("--identities", type=int, default=20, show_default=True)
@click.option("--size", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_cli_errors
def cmd_make_synthetic(out, n, identities, size, seed):
    """Render a synthetic paired RGB-D dataset of smooth blob faces."""
    out_dir = Path(out)
    manifest = datasets.make_synthetic_dataset(out_dir, n, size, identities, seed)
    _write_manifest(
        "make-synthetic",
        out_dir,
        {"n": n, "identities": identities, "size": size},
        seed=seed,
    )
    click.echo(f"wrote {manifest.sample_count} paired samples to {out_dir}")


@main.command("export-samples")
@click.argument("data_root", type=click.Path(exists=True, file_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--n", type=int, default=4, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@_cli_errors
def cmd_export_samples(data_root, checkpoint, n, out):
    """Grid image: rows of RGB | ground-truth depth | hallucinated | cycle
    reconstruction for the first n samples."""
    manifest = checkpoints.read_manifest(checkpoint)
    gen = checkpoints.load_generator(checkpoint)
    if manifest.get("mode") == "passthrough":
        gen_back = checkpoints.load_generator(checkpoint)
    elif checkpoints.has_component(checkpoint, "g_b2a"):
        gen_back = checkpoints.load_component(checkpoint, "g_b2a")
    else:
        gen_back = None

    samples = datasets.load_paired_dataset(
        datasets.build_manifest(data_root, manifest["image_size"], paired=True)
    )[:n]
    out_dir = _resolve_out(out, "samples")
    _write_manifest(
        "export-samples",
        out_dir,
        {"checkpoint": str(checkpoint), "data_root": str(data_root), "n": n},
        config_hash=manifest.get("config_hash", ""),
    )

    rows = []
    for sample in samples:
        fake_depth = generator_forward(gen, sample.rgb)
        if gen_back is not None:
            reconstruction = generator_forward(gen_back, fake_depth)
        else:
            # No inverse generator in this checkpoint: leave the cell blank.
            reconstruction = np.zeros_like(sample.rgb)
        rows.append([sample.rgb, sample.depth, fake_depth, reconstruction])

    grid = _compose_grid(rows)
    Image.fromarray(grid, mode="RGB").save(out_dir / "sample_grid.png")
    click.echo(f"wrote {len(rows)}x4 grid to {out_dir / 'sample_grid.png'}")


def _compose_grid(rows: list[list[np.ndarray]], pad: int = 2) -> np.ndarray:
    cell_h, cell_w = rows[0][0].shape[:2]
    height = len(rows) * cell_h + (len(rows) + 1) * pad
    width = 4 * cell_w + 5 * pad
    grid = np.full((height, width, 3), 32, dtype=np.uint8)
    for r, row in enumerate(rows):
        for c, cell in enumerate(row):
            y = pad + r * (cell_h + pad)
            x = pad + c * (cell_w + pad)
            grid[y : y + cell_h, x : x + cell_w] = datasets.to_uint8(cell)
    return grid


if __name__ == "__main__":
    main()
