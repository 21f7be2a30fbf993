"""Depth-quality metrics: the pixel-wise battery, ratio-threshold accuracy,
and a Fréchet distance between gaussian fits of feature embeddings.

The pixel metrics operate on depth mapped to (0, 1]: model-space values are
mapped v -> clamp((v + 1) / 2, 1e-3, 1) first, because the ratio metrics need
strictly positive inputs. The ``*_norm`` / ``rmse`` / ``threshold_accuracy``
functions themselves expect already-mapped (positive) arrays.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .datasets import ImageTensor, PairedSample
from .errors import NumericalError, ValidationError

POSITIVE_EPS = 1e-3
DELTA_BASE = 1.25


def to_positive_depth(x: np.ndarray) -> np.ndarray:
    """Map model-space [-1, 1] depth to (0, 1] for the ratio metrics."""
    return np.clip((np.asarray(x, dtype=np.float64) + 1.0) * 0.5, POSITIVE_EPS, 1.0)


def _pair(gt, pred) -> tuple[np.ndarray, np.ndarray]:
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ValidationError(f"shape mismatch {gt.shape} vs {pred.shape}")
    return gt, pred


def abs_diff(gt, pred) -> float:
    """Mean absolute difference over pixels (the non-relative reading)."""
    gt, pred = _pair(gt, pred)
    return float(np.abs(gt - pred).mean())


def abs_rel_diff(gt, pred) -> float:
    """Relative variant: mean of |gt - pred| / gt. Needs positive gt."""
    gt, pred = _pair(gt, pred)
    if np.any(gt <= 0):
        raise ValidationError("abs_rel_diff needs strictly positive ground truth")
    return float((np.abs(gt - pred) / gt).mean())


def l1_norm(gt, pred) -> float:
    """L1 norm of the difference normalized by the L1 norm of the ground
    truth: sum|gt - pred| / sum|gt|."""
    gt, pred = _pair(gt, pred)
    denom = np.abs(gt).sum()
    if denom == 0:
        raise ValidationError("l1_norm needs a nonzero ground truth")
    return float(np.abs(gt - pred).sum() / denom)


def l2_norm(gt, pred) -> float:
    """Euclidean norm of the difference over all elements."""
    gt, pred = _pair(gt, pred)
    return float(np.sqrt(((gt - pred) ** 2).sum()))


def rmse(gt, pred) -> float:
    """Root mean squared error over all elements."""
    gt, pred = _pair(gt, pred)
    return float(np.sqrt(((gt - pred) ** 2).mean()))


def threshold_accuracy(gt, pred, exponent: int) -> float:
    """Percentage of pixels with max(gt/pred, pred/gt) < 1.25^exponent."""
    if exponent not in (1, 2, 3):
        raise ValidationError(f"exponent must be 1, 2 or 3, got {exponent}")
    gt, pred = _pair(gt, pred)
    if np.any(gt <= 0) or np.any(pred <= 0):
        raise ValidationError("threshold_accuracy needs positive-mapped inputs")
    ratio = np.maximum(gt / pred, pred / gt)
    return float((ratio < DELTA_BASE**exponent).mean() * 100.0)


# ---------------------------------------------------------------------------
# Fréchet distance


def frechet_distance(real_features: np.ndarray, fake_features: np.ndarray) -> float:
    """||mu_r - mu_f||^2 + Tr(S_r + S_f - 2 (S_r S_f)^(1/2)) over gaussian
    fits of the two feature sets.

    The matrix square root is taken by eigendecomposition of the symmetrized
    product S_r^(1/2) S_f S_r^(1/2); eigenvalues below -1e-10 (relative to the
    spectrum scale) indicate a failed square root and raise NumericalError.
    """
    real = np.asarray(real_features, dtype=np.float64)
    fake = np.asarray(fake_features, dtype=np.float64)
    if real.ndim != 2 or fake.ndim != 2:
        raise ValidationError("feature sets must be 2-D (n_samples, dim)")
    if real.shape[1] != fake.shape[1]:
        raise ValidationError(
            f"feature dimension mismatch: {real.shape[1]} vs {fake.shape[1]}"
        )
    if real.shape[0] < 2 or fake.shape[0] < 2:
        raise ValidationError("need at least 2 feature vectors per set")

    mu_r, mu_f = real.mean(axis=0), fake.mean(axis=0)
    sigma_r = np.cov(real, rowvar=False)
    sigma_f = np.cov(fake, rowvar=False)
    sigma_r = np.atleast_2d(sigma_r)
    sigma_f = np.atleast_2d(sigma_f)

    sqrt_r = _psd_sqrt(sigma_r)
    inner = sqrt_r @ sigma_f @ sqrt_r
    inner = (inner + inner.T) * 0.5
    eigvals = np.linalg.eigvalsh(inner)
    scale = max(1.0, float(np.abs(eigvals).max()))
    if eigvals.min() < -1e-10 * scale:
        cond = float(np.abs(eigvals).max() / max(np.abs(eigvals).min(), 1e-300))
        raise NumericalError(
            "matrix square root failed: eigenvalue "
            f"{eigvals.min():.3e} below tolerance (condition ~{cond:.3e})"
        )
    tr_sqrt = np.sqrt(np.clip(eigvals, 0.0, None)).sum()

    diff = mu_r - mu_f
    value = float(diff @ diff + np.trace(sigma_r) + np.trace(sigma_f) - 2.0 * tr_sqrt)
    if value < 0.0:
        # The distance is nonnegative by definition; rank-deficient
        # covariances leave eigendecomposition noise of order eps * trace.
        magnitude = float(diff @ diff + np.trace(sigma_r) + np.trace(sigma_f))
        if value < -1e-6 * max(1.0, magnitude):
            raise NumericalError(
                f"Fréchet distance {value:.3e} is negative beyond tolerance"
            )
        value = 0.0
    return value


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    sym = (matrix + matrix.T) * 0.5
    eigvals, eigvecs = np.linalg.eigh(sym)
    scale = max(1.0, float(np.abs(eigvals).max()))
    if eigvals.min() < -1e-10 * scale:
        raise NumericalError(
            f"covariance not PSD: eigenvalue {eigvals.min():.3e} below tolerance"
        )
    root = np.sqrt(np.clip(eigvals, 0.0, None))
    return (eigvecs * root) @ eigvecs.T


class RandomProjectionExtractor:
    """Seeded fixed random projection of a flattened image to a d-vector.

    Stands in for a large pretrained embedding network so the Fréchet math
    can be verified on its own. The projection matrix binds to the first
    input's shape; later inputs must match it.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.name = f"random-projection-{dim}"
        self._matrix: np.ndarray | None = None
        self._shape: tuple | None = None

    def __call__(self, image: ImageTensor) -> np.ndarray:
        arr = np.asarray(image, dtype=np.float64)
        if self._matrix is None:
            rng = np.random.default_rng(self.seed)
            self._shape = arr.shape
            self._matrix = rng.standard_normal((self.dim, arr.size)) / np.sqrt(arr.size)
        if arr.shape != self._shape:
            raise ValidationError(
                f"extractor bound to shape {self._shape}, got {arr.shape}"
            )
        return self._matrix @ arr.ravel()


def extract_features(images: Sequence[ImageTensor], extractor) -> np.ndarray:
    return np.stack([np.asarray(extractor(img), dtype=np.float64) for img in images])


# ---------------------------------------------------------------------------
# set-level evaluation


@dataclass(frozen=True)
class QualityReport:
    """The metric battery averaged over an evaluation set."""

    abs_diff: float
    l1_norm: float
    l2_norm: float
    rmse: float
    delta_1: float
    delta_2: float
    delta_3: float
    fid: float | None
    sample_count: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


# Per-image CSV headers follow the report's column naming.
PER_IMAGE_COLUMNS = (
    "image",
    "abs_diff",
    "l1_norm",
    "l2_norm",
    "rmse",
    "delta_1.25",
    "delta_1.25^2",
    "delta_1.25^3",
)


def per_image_metrics(sample: PairedSample, pred_depth: ImageTensor) -> dict:
    gt = to_positive_depth(sample.depth)
    pred = to_positive_depth(pred_depth)
    return {
        "image": sample.name,
        "abs_diff": abs_diff(gt, pred),
        "l1_norm": l1_norm(gt, pred),
        "l2_norm": l2_norm(gt, pred),
        "rmse": rmse(gt, pred),
        "delta_1.25": threshold_accuracy(gt, pred, 1),
        "delta_1.25^2": threshold_accuracy(gt, pred, 2),
        "delta_1.25^3": threshold_accuracy(gt, pred, 3),
    }


def evaluate_set_detailed(
    samples: Sequence[PairedSample],
    generate: Callable[[ImageTensor], ImageTensor],
    extractor=None,
) -> tuple[QualityReport, list[dict]]:
    """Hallucinate depth for every sample and score it against ground truth.

    Per-image metrics are averaged over the set; the Fréchet distance is
    computed once over embeddings of the real vs generated depth images (and
    is None for sets smaller than 2).
    """
    if not samples:
        raise ValidationError("evaluation set is empty")
    extractor = extractor or RandomProjectionExtractor()

    rows = []
    preds = []
    for sample in samples:
        pred = generate(sample.rgb)
        preds.append(pred)
        rows.append(per_image_metrics(sample, pred))

    fid = None
    if len(samples) >= 2:
        real_feats = extract_features([s.depth for s in samples], extractor)
        fake_feats = extract_features(preds, extractor)
        fid = frechet_distance(real_feats, fake_feats)

    report = QualityReport(
        abs_diff=float(np.mean([r["abs_diff"] for r in rows])),
        l1_norm=float(np.mean([r["l1_norm"] for r in rows])),
        l2_norm=float(np.mean([r["l2_norm"] for r in rows])),
        rmse=float(np.mean([r["rmse"] for r in rows])),
        delta_1=float(np.mean([r["delta_1.25"] for r in rows])),
        delta_2=float(np.mean([r["delta_1.25^2"] for r in rows])),
        delta_3=float(np.mean([r["delta_1.25^3"] for r in rows])),
        fid=fid,
        sample_count=len(samples),
    )
    return report, rows


def evaluate_set(
    samples: Sequence[PairedSample],
    generate: Callable[[ImageTensor], ImageTensor],
    extractor=None,
) -> QualityReport:
    report, _ = evaluate_set_detailed(samples, generate, extractor)
    return report


def constant_mean_depth_baseline(samples: Sequence[PairedSample]) -> ImageTensor:
    """Pixel-wise mean depth over a set; the no-model reference predictor."""
    if not samples:
        raise ValidationError("cannot average an empty set")
    return np.mean([s.depth for s in samples], axis=0).astype(np.float32)
