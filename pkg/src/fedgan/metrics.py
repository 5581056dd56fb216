"""Evaluation suite: feature-space Frechet distance, classifier accuracy,
per-round metric records and their CSV serialization.

The Frechet distance here runs over features of a small trained conv
classifier, not Inception embeddings, so absolute values are only
comparable within this codebase; orderings and trends are the meaningful
output. The symmetric-product form sqrt(S_r^1/2 S_f S_r^1/2) keeps the
distance symmetric in its arguments to floating-point accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import make_rng
from .tensor import NumericError, ShapeError, Tensor

__all__ = [
    "matrix_sqrt_psd",
    "fid_from_moments",
    "fid",
    "RoundRecord",
    "format_round_record",
    "METRICS_CSV_HEADER",
    "MetricsCsvWriter",
    "classifier_accuracy",
]

COV_REGULARIZER = 1e-6


def matrix_sqrt_psd(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Requires symmetry within 1e-8 and eigenvalues >= -1e-8; small
    negative eigenvalues clamp to zero. The reconstruction S @ S is
    verified against m to a 1e-8 relative Frobenius tolerance.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"matrix_sqrt_psd expects a square matrix, got {m.shape}")
    asym = np.max(np.abs(m - m.T)) if m.size else 0.0
    if asym > 1e-8:
        raise ValueError(f"matrix not symmetric: max asymmetry {asym:.3g}")
    sym = (m + m.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals.size and eigvals.min() < -1e-8:
        raise ValueError(f"matrix not PSD: smallest eigenvalue {eigvals.min():.3g}")
    eigvals = np.clip(eigvals, 0.0, None)
    root = (eigvecs * np.sqrt(eigvals)) @ eigvecs.T
    root = (root + root.T) / 2.0
    err = np.linalg.norm(root @ root - sym) / (1.0 + np.linalg.norm(sym))
    if err > 1e-8:
        raise NumericError(f"matrix sqrt reconstruction error {err:.3g}")
    return root


def fid_from_moments(
    mu_r: np.ndarray, cov_r: np.ndarray, mu_f: np.ndarray, cov_f: np.ndarray
) -> float:
    """Frechet distance between two Gaussians given their moments."""
    mu_r = np.asarray(mu_r, dtype=np.float64).reshape(-1)
    mu_f = np.asarray(mu_f, dtype=np.float64).reshape(-1)
    if mu_r.shape != mu_f.shape:
        raise ShapeError(f"mean dimension mismatch: {mu_r.shape} vs {mu_f.shape}")
    root_r = matrix_sqrt_psd(cov_r)
    inner = root_r @ np.asarray(cov_f, dtype=np.float64) @ root_r
    cross = matrix_sqrt_psd(inner)
    diff = mu_r - mu_f
    value = float(diff @ diff + np.trace(cov_r) + np.trace(cov_f) - 2.0 * np.trace(cross))
    if value < -1e-6:
        raise NumericError(f"Frechet distance came out negative: {value:.3g}")
    return max(value, 0.0)


def fid(real_feats: np.ndarray, fake_feats: np.ndarray) -> float:
    """Frechet distance between feature samples [n,d] and [m,d].

    Sample covariances (ddof=1) are regularized with +1e-6 I so
    rank-deficient batches stay well-posed; the regularizer cancels in
    every matched-covariance comparison.
    """
    real_feats = np.asarray(real_feats, dtype=np.float64)
    fake_feats = np.asarray(fake_feats, dtype=np.float64)
    if real_feats.ndim != 2 or fake_feats.ndim != 2:
        raise ShapeError("feature arrays must be 2-D [n, d]")
    if real_feats.shape[1] != fake_feats.shape[1]:
        raise ShapeError(
            f"feature dimension mismatch: {real_feats.shape[1]} vs {fake_feats.shape[1]}"
        )
    if real_feats.shape[0] < 2 or fake_feats.shape[0] < 2:
        raise ValueError("need at least 2 samples per side for a covariance")
    d = real_feats.shape[1]
    reg = COV_REGULARIZER * np.eye(d)
    mu_r = real_feats.mean(axis=0)
    mu_f = fake_feats.mean(axis=0)
    cov_r = np.cov(real_feats, rowvar=False).reshape(d, d) + reg
    cov_f = np.cov(fake_feats, rowvar=False).reshape(d, d) + reg
    return fid_from_moments(mu_r, cov_r, mu_f, cov_f)


@dataclass(frozen=True)
class RoundRecord:
    """One cadence tick of the metric suite."""

    round: int
    fid_proxy: float
    gen_loss: float
    classifier_acc: float | None
    epsilon: float

    def __post_init__(self):
        if self.round < 0:
            raise ValueError("round must be non-negative")
        if self.fid_proxy < 0:
            raise ValueError("fid_proxy must be non-negative")
        if self.classifier_acc is not None and not 0.0 <= self.classifier_acc <= 1.0:
            raise ValueError("classifier_acc must be in [0, 1]")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


METRICS_CSV_HEADER = "round,fid_proxy,gen_loss,classifier_acc,epsilon"


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6g}"


def format_round_record(rec: RoundRecord) -> str:
    return ",".join(
        [
            str(rec.round),
            _fmt(rec.fid_proxy),
            _fmt(rec.gen_loss),
            _fmt(rec.classifier_acc),
            _fmt(rec.epsilon),
        ]
    )


class MetricsCsvWriter:
    """Streaming CSV sink; rows hit the disk as they are produced so a
    crashed run leaves a usable partial log."""

    def __init__(self, path):
        self._f = open(path, "w", newline="\n")
        self._f.write(METRICS_CSV_HEADER + "\n")
        self._f.flush()

    def write(self, rec: RoundRecord) -> None:
        self._f.write(format_round_record(rec) + "\n")
        self._f.flush()

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def classifier_accuracy(
    models,
    extractor,
    n_samples: int,
    seed: int,
    transform=None,
) -> float | None:
    """Fraction of generated samples classified as their intended label.

    Returns None (absent, not zero) for an unconditional generator or an
    empty sample request. `transform` post-processes the generated batch
    before classification, mirroring whatever the evaluation pipeline
    does to samples.
    """
    from .gan import generate

    if not models.conditional or n_samples == 0:
        return None
    rng = make_rng(seed)
    labels = rng.integers(0, models.num_classes, size=n_samples)
    latents = Tensor(rng.standard_normal((n_samples, models.z_dim)))
    images = generate(models, latents, labels)
    if transform is not None:
        images = transform(images)
    predicted = extractor.predict(images)
    return float(np.mean(predicted == labels))


def epsilon_non_decreasing(records: list[RoundRecord]) -> bool:
    eps = [r.epsilon for r in records]
    return all(b >= a for a, b in zip(eps, eps[1:]))
