"""Dataset ingestion and synthesis.

On-disk layout: ``<root>/rgb/<name>.png`` plus, for paired sets,
``<root>/depth/<name>.png`` with matching filenames. Depth is stored as
single-channel 8-bit grayscale (16-bit accepted on read) and replicated to
3 channels in model space. The identity label is the filename prefix up to
the first underscore. An optional ``manifest.txt`` lists relative rgb paths,
one per line; without it the rgb/ directory is scanned.

Model space is a float32 H x W x 3 array with values in [-1, 1] (the
generator's tanh output range).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import ImageLoadError, ManifestError, ValidationError

# Model-space image: H x W x 3 float32 in [-1, 1].
ImageTensor = np.ndarray

MANIFEST_NAME = "manifest.txt"
RGB_DIR = "rgb"
DEPTH_DIR = "depth"


@dataclass(frozen=True)
class PairedSample:
    """Co-registered RGB and depth images sharing one identity label."""

    rgb: ImageTensor
    depth: ImageTensor
    identity: str
    name: str


@dataclass(frozen=True)
class UnpairedSample:
    """A lone RGB image (no depth arm exists)."""

    rgb: ImageTensor
    identity: str
    name: str


@dataclass(frozen=True)
class DatasetManifest:
    """Listing of one dataset: root directory plus relative rgb paths.

    Entries are lexicographically sorted so loading order is reproducible.
    """

    root: Path
    entries: tuple[str, ...]
    paired: bool
    image_size: int
    split: str = "all"

    @property
    def sample_count(self) -> int:
        return len(self.entries)


def identity_of(name: str) -> str:
    """Identity label: filename stem up to the first underscore."""
    stem = Path(name).stem
    return stem.split("_", 1)[0]


# ---------------------------------------------------------------------------
# preprocessing


def preprocess(raw: np.ndarray, target_size: int) -> ImageTensor:
    """Map a raw 8/16-bit pixel grid to model space.

    Values are rescaled linearly, v -> 2 * (v / v_max) - 1, resized to
    target_size x target_size with bilinear interpolation, and single-channel
    inputs are replicated across 3 channels. Float input is assumed to be
    already normalized to [-1, 1] and is only clipped.
    """
    raw = np.asarray(raw)
    if raw.size == 0 or raw.ndim not in (2, 3):
        raise ValidationError(f"zero-area or malformed image with shape {raw.shape}")
    if target_size < 8:
        raise ValidationError(f"target_size must be >= 8, got {target_size}")

    if raw.dtype == np.uint8:
        arr = raw.astype(np.float32) * (2.0 / 255.0) - 1.0
    elif raw.dtype == np.uint16:
        arr = raw.astype(np.float32) * (2.0 / 65535.0) - 1.0
    elif raw.dtype == np.int32:
        # PIL decodes some 16-bit grayscale PNGs to mode "I" (int32).
        arr = raw.astype(np.float32) * (2.0 / 65535.0) - 1.0
    elif np.issubdtype(raw.dtype, np.floating):
        arr = np.clip(raw.astype(np.float32), -1.0, 1.0)
    else:
        raise ValidationError(f"unsupported pixel dtype {raw.dtype}")

    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    if arr.shape[2] != 3:
        raise ValidationError(f"expected 1 or 3 channels, got {arr.shape[2]}")

    if arr.shape[0] != target_size or arr.shape[1] != target_size:
        arr = np.stack(
            [_resize_bilinear(arr[:, :, c], target_size) for c in range(3)], axis=2
        )
    return np.clip(arr, -1.0, 1.0).astype(np.float32)


def _resize_bilinear(channel: np.ndarray, size: int) -> np.ndarray:
    img = Image.fromarray(channel.astype(np.float32), mode="F")
    return np.asarray(img.resize((size, size), Image.BILINEAR), dtype=np.float32)


def load_raw_image(path: Path) -> np.ndarray:
    """Decode a PNG/JPEG into a uint8/uint16 array, or fail naming the path."""
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in ("P", "RGBA", "CMYK"):
                img = img.convert("RGB")
            elif img.mode == "LA":
                img = img.convert("L")
            return np.asarray(img)
    except FileNotFoundError as exc:
        raise ImageLoadError(f"cannot read image {path}: file not found") from exc
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageLoadError(f"cannot read image {path}: {exc}") from exc


def to_uint8(image: ImageTensor) -> np.ndarray:
    """Map model-space [-1, 1] values back to 8-bit pixels."""
    arr = np.clip((np.asarray(image, dtype=np.float32) + 1.0) * 0.5, 0.0, 1.0)
    return np.round(arr * 255.0).astype(np.uint8)


# ---------------------------------------------------------------------------
# manifests and loaders


def build_manifest(
    root: Path | str,
    image_size: int,
    paired: bool,
    split: str = "all",
) -> DatasetManifest:
    """Scan ``root`` (or read its manifest.txt) into a DatasetManifest.

    Raises ManifestError for a missing rgb/ directory, duplicate entries, a
    listed file that does not exist, or (for paired sets) an rgb file whose
    depth counterpart is missing.
    """
    root = Path(root)
    rgb_dir = root / RGB_DIR
    manifest_file = root / MANIFEST_NAME
    if manifest_file.exists():
        lines = [
            ln.strip()
            for ln in manifest_file.read_text().splitlines()
            if ln.strip() and not ln.strip().startswith("#")
        ]
        entries = sorted(lines)
    else:
        if not rgb_dir.is_dir():
            raise ManifestError(f"missing rgb directory: {rgb_dir}")
        entries = sorted(
            f"{RGB_DIR}/{p.name}" for p in rgb_dir.iterdir() if p.is_file()
        )

    seen: set[str] = set()
    for rel in entries:
        if rel in seen:
            raise ManifestError(f"duplicate manifest entry {rel}")
        seen.add(rel)
        if not (root / rel).is_file():
            raise ManifestError(f"listed file does not exist: {root / rel}")
        if paired and not (root / _depth_rel(rel)).is_file():
            raise ManifestError(f"orphan {rel}: no matching {_depth_rel(rel)}")

    return DatasetManifest(
        root=root,
        entries=tuple(entries),
        paired=paired,
        image_size=image_size,
        split=split,
    )


def _depth_rel(rgb_rel: str) -> str:
    return f"{DEPTH_DIR}/{Path(rgb_rel).name}"


def load_paired_dataset(manifest: DatasetManifest) -> tuple[PairedSample, ...]:
    """Load every (rgb, depth) pair listed by the manifest, preprocessed."""
    samples = []
    for rel in manifest.entries:
        depth_rel = _depth_rel(rel)
        if not (manifest.root / depth_rel).is_file():
            raise ManifestError(f"orphan {rel}: no matching {depth_rel}")
        rgb = preprocess(load_raw_image(manifest.root / rel), manifest.image_size)
        depth = preprocess(
            load_raw_image(manifest.root / depth_rel), manifest.image_size
        )
        name = Path(rel).stem
        samples.append(
            PairedSample(rgb=rgb, depth=depth, identity=identity_of(rel), name=name)
        )
    return tuple(samples)


def load_rgb_dataset(manifest: DatasetManifest) -> tuple[UnpairedSample, ...]:
    """Load the rgb arm only (target datasets have no depth)."""
    samples = []
    for rel in manifest.entries:
        rgb = preprocess(load_raw_image(manifest.root / rel), manifest.image_size)
        samples.append(
            UnpairedSample(rgb=rgb, identity=identity_of(rel), name=Path(rel).stem)
        )
    return tuple(samples)


def split_folds(
    samples: Sequence, k: int, seed: int
) -> tuple[tuple[tuple, tuple], ...]:
    """Partition samples into k (train, test) folds, splitting by image
    within each identity so every fold sees every identity.

    Test folds are disjoint and their union is the whole set; the assignment
    is deterministic for a given seed.
    """
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    if k > len(samples):
        raise ValidationError(f"k={k} exceeds sample count {len(samples)}")

    by_identity: dict[str, list[int]] = {}
    for i, s in enumerate(samples):
        by_identity.setdefault(s.identity, []).append(i)

    rng = random.Random(seed)
    fold_of = [0] * len(samples)
    cursor = 0
    for identity in sorted(by_identity):
        idxs = list(by_identity[identity])
        rng.shuffle(idxs)
        for j, idx in enumerate(idxs):
            fold_of[idx] = (cursor + j) % k
        cursor = (cursor + len(idxs)) % k

    folds = []
    for f in range(k):
        test = tuple(s for i, s in enumerate(samples) if fold_of[i] == f)
        train = tuple(s for i, s in enumerate(samples) if fold_of[i] != f)
        folds.append((train, test))
    return tuple(folds)


# ---------------------------------------------------------------------------
# synthetic paired data
#
# Each identity is a fixed constellation of 1-3 smooth gaussian blobs plus an
# albedo color; each image re-renders that constellation under a random pose
# and lighting. The depth channel is the analytic height field and the RGB is
# a lambertian shading of the same field, so the RGB -> depth mapping the
# models must learn is exact by construction.

# Height-field relief in unit-square coordinates; controls shading contrast.
RELIEF = 0.5
AMBIENT = 0.25


@dataclass(frozen=True)
class Blob:
    cx: float
    cy: float
    sx: float
    sy: float
    amp: float
    theta: float


@dataclass(frozen=True)
class IdentityShape:
    blobs: tuple[Blob, ...]
    albedo: tuple[float, float, float]


@dataclass(frozen=True)
class Pose:
    dx: float
    dy: float
    rot: float
    scale: float
    light: tuple[float, float, float]


def sample_identity(rng: np.random.Generator) -> IdentityShape:
    n_blobs = int(rng.integers(1, 4))
    blobs = tuple(
        Blob(
            cx=float(rng.uniform(0.3, 0.7)),
            cy=float(rng.uniform(0.3, 0.7)),
            sx=float(rng.uniform(0.08, 0.22)),
            sy=float(rng.uniform(0.08, 0.22)),
            amp=float(rng.uniform(0.5, 1.0)),
            theta=float(rng.uniform(0.0, math.pi)),
        )
        for _ in range(n_blobs)
    )
    albedo = tuple(float(v) for v in rng.uniform(0.35, 1.0, size=3))
    return IdentityShape(blobs=blobs, albedo=albedo)


def sample_pose(rng: np.random.Generator) -> Pose:
    tilt = float(rng.uniform(0.0, 0.6))
    azim = float(rng.uniform(0.0, 2.0 * math.pi))
    light = (
        math.sin(tilt) * math.cos(azim),
        math.sin(tilt) * math.sin(azim),
        math.cos(tilt),
    )
    return Pose(
        dx=float(rng.uniform(-0.08, 0.08)),
        dy=float(rng.uniform(-0.08, 0.08)),
        rot=float(rng.uniform(-0.3, 0.3)),
        scale=float(rng.uniform(0.9, 1.1)),
        light=light,
    )


def frontal_pose() -> Pose:
    """Identity pose with the light at the viewer; used by analytic oracles."""
    return Pose(dx=0.0, dy=0.0, rot=0.0, scale=1.0, light=(0.0, 0.0, 1.0))


def render_sample(
    shape: IdentityShape, pose: Pose, size: int
) -> tuple[np.ndarray, np.ndarray]:
    """Render (rgb, height) float arrays in [0, 1] for one identity + pose.

    The height field is a normalized sum of oriented gaussian blobs; the rgb
    image is the albedo times a lambertian shading of that field with normals
    computed from the closed-form height gradient.
    """
    coords = (np.arange(size, dtype=np.float64) + 0.5) / size
    xg, yg = np.meshgrid(coords, coords)

    height = np.zeros((size, size), dtype=np.float64)
    grad_x = np.zeros_like(height)
    grad_y = np.zeros_like(height)
    total_amp = 0.0
    cos_p, sin_p = math.cos(pose.rot), math.sin(pose.rot)
    for blob in shape.blobs:
        # Pose moves the blob center (scale + rotate about image center, then
        # shift) and adds the pose rotation to the blob orientation.
        bx = 0.5 + pose.scale * (
            cos_p * (blob.cx - 0.5) - sin_p * (blob.cy - 0.5)
        ) + pose.dx
        by = 0.5 + pose.scale * (
            sin_p * (blob.cx - 0.5) + cos_p * (blob.cy - 0.5)
        ) + pose.dy
        theta = blob.theta + pose.rot
        sx = blob.sx * pose.scale
        sy = blob.sy * pose.scale

        cos_t, sin_t = math.cos(theta), math.sin(theta)
        dx = xg - bx
        dy = yg - by
        u = (cos_t * dx + sin_t * dy) / sx
        v = (-sin_t * dx + cos_t * dy) / sy
        g = blob.amp * np.exp(-0.5 * (u * u + v * v))
        height += g
        # d/dx of -0.5*(u^2+v^2) with u, v linear in (dx, dy).
        du_dx, du_dy = cos_t / sx, sin_t / sx
        dv_dx, dv_dy = -sin_t / sy, cos_t / sy
        grad_x += g * (-(u * du_dx + v * dv_dx))
        grad_y += g * (-(u * du_dy + v * dv_dy))
        total_amp += blob.amp

    norm = max(1.0, total_amp)
    height /= norm
    grad_x /= norm
    grad_y /= norm

    light = np.asarray(pose.light, dtype=np.float64)
    light = light / np.linalg.norm(light)
    nz = 1.0 / np.sqrt(1.0 + RELIEF**2 * (grad_x**2 + grad_y**2))
    nx = -RELIEF * grad_x * nz
    ny = -RELIEF * grad_y * nz
    shade = AMBIENT + (1.0 - AMBIENT) * np.clip(
        nx * light[0] + ny * light[1] + nz * light[2], 0.0, None
    )
    albedo = np.asarray(shape.albedo, dtype=np.float64)
    rgb = np.clip(shade[:, :, None] * albedo[None, None, :], 0.0, 1.0)
    return rgb, np.clip(height, 0.0, 1.0)


def shading_from_height(height: np.ndarray, light=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Lambertian shading recomputed from a height field by finite
    differences; the independent oracle for render_sample's closed form."""
    size = height.shape[0]
    gy, gx = np.gradient(height.astype(np.float64), 1.0 / size)
    light = np.asarray(light, dtype=np.float64)
    light = light / np.linalg.norm(light)
    nz = 1.0 / np.sqrt(1.0 + RELIEF**2 * (gx**2 + gy**2))
    nx = -RELIEF * gx * nz
    ny = -RELIEF * gy * nz
    return AMBIENT + (1.0 - AMBIENT) * np.clip(
        nx * light[0] + ny * light[1] + nz * light[2], 0.0, None
    )


def make_synthetic_dataset(
    out_dir: Path | str,
    n: int,
    size: int,
    identities: int,
    seed: int,
) -> DatasetManifest:
    """Write an n-sample paired dataset of rendered blob faces to out_dir.

    Samples are assigned to identities round-robin; the same seed yields a
    byte-identical dataset.
    """
    if identities < 1 or n < identities:
        raise ValidationError(
            f"need n >= identities >= 1, got n={n}, identities={identities}"
        )
    out_dir = Path(out_dir)
    (out_dir / RGB_DIR).mkdir(parents=True, exist_ok=True)
    (out_dir / DEPTH_DIR).mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    shapes = [sample_identity(rng) for _ in range(identities)]

    entries = []
    for i in range(n):
        ident = i % identities
        pose = sample_pose(rng)
        rgb, height = render_sample(shapes[ident], pose, size)
        name = f"{ident:03d}_{i // identities:03d}.png"
        Image.fromarray(
            np.round(rgb * 255.0).astype(np.uint8), mode="RGB"
        ).save(out_dir / RGB_DIR / name)
        Image.fromarray(
            np.round(height * 255.0).astype(np.uint8), mode="L"
        ).save(out_dir / DEPTH_DIR / name)
        entries.append(f"{RGB_DIR}/{name}")

    (out_dir / MANIFEST_NAME).write_text("".join(f"{e}\n" for e in sorted(entries)))
    return build_manifest(out_dir, image_size=size, paired=True)
