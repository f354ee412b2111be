"""Segmentation and distribution metrics.

Dice overlap, anterior-posterior (AP) aortic diameter with its MAE report,
the AAA diameter rule, and the Fréchet distance between Gaussian fits of two
feature sets. Image features are handcrafted and deterministic; any other
extractor can feed :func:`accumulate_stats` directly.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

AAA_THRESHOLD_MM = 30.0
CLINICAL_MAE_LIMIT_MM = 8.0

_PSD_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SegMask:
    """Binary mask stored as an image: ``pixels[row, col]`` with rows along depth."""

    pixels: np.ndarray
    spacing: float

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {px.shape}")
        if px.dtype != bool:
            if not np.isin(px, (0, 1)).all():
                raise ValueError("mask values must be 0 or 1")
        px = px.astype(np.uint8)
        px.setflags(write=False)
        if not self.spacing > 0:
            raise ValueError("mask spacing must be positive")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def shape(self):
        return self.pixels.shape

    @property
    def area(self) -> int:
        return int(self.pixels.sum())


def dice(a: SegMask, b: SegMask) -> float:
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"mask shapes differ: {pa.shape} vs {pb.shape}")
    total = int(np.count_nonzero(pa)) + int(np.count_nonzero(pb))
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(pa & pb)) / total


def _pixels(m) -> np.ndarray:
    px = m.pixels if isinstance(m, SegMask) else np.asarray(m)
    return px.astype(bool, copy=False)


def max_vertical_run(pixels: np.ndarray) -> int:
    """Longest run of consecutive set pixels down any column."""
    px = np.asarray(pixels, dtype=bool)
    h, w = px.shape
    padded = np.zeros((w, h + 2), dtype=np.int8)
    padded[:, 1:-1] = px.T
    step = np.diff(padded.ravel())
    starts = np.flatnonzero(step == 1)
    ends = np.flatnonzero(step == -1)
    if starts.size == 0:
        return 0
    return int((ends - starts).max())


def ap_diameter(mask: SegMask) -> float:
    run = max_vertical_run(mask.pixels)
    if run == 0:
        raise ValueError("cannot measure the diameter of an empty mask")
    return run * mask.spacing


def classify_aaa(diameter: float) -> bool:
    """True when the AP diameter (mm) exceeds 30 mm."""
    if diameter < 0 or math.isnan(diameter):
        raise ValueError(f"diameter must be non-negative, got {diameter}")
    return diameter > AAA_THRESHOLD_MM


def clinically_acceptable(mae_mm: float) -> bool:
    return mae_mm < CLINICAL_MAE_LIMIT_MM


@dataclass
class DiameterReport:
    pred_diameters: list[float]
    gt_diameters: list[float]
    mae: float
    sd: float
    dsc_mean: float
    dsc_sd: float
    dsc: list[float] = field(default_factory=list)
    names: list[str] = field(default_factory=list)

    @property
    def errors(self) -> list[float]:
        return [abs(p - g) for p, g in zip(self.pred_diameters, self.gt_diameters)]

    @property
    def acceptable(self) -> bool:
        return clinically_acceptable(self.mae)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n"] = len(self.pred_diameters)
        d["clinically_acceptable"] = self.acceptable
        d["aaa_pred"] = [classify_aaa(x) for x in self.pred_diameters]
        d["aaa_gt"] = [classify_aaa(x) for x in self.gt_diameters]
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    def to_table(self, label: str = "run") -> str:
        return format_table({label: self})


def format_table(reports: dict[str, DiameterReport]) -> str:
    """Plain-text DSC / MAE table, one column per run.

    DSC is shown in percent, MAE in mm, both as ``mean±sd``.
    """
    header = [""] + list(reports)
    rows = [
        ["DSC"] + [f"{100 * r.dsc_mean:.1f}±{100 * r.dsc_sd:.1f}" for r in reports.values()],
        ["MAE"] + [f"{r.mae:.1f}±{r.sd:.1f}" for r in reports.values()],
    ]
    widths = [max(len(row[i]) for row in [header] + rows) for i in range(len(header))]

    def fmt(row):
        return " | ".join(cell.ljust(wd) for cell, wd in zip(row, widths)).rstrip()

    rule = "-+-".join("-" * wd for wd in widths)
    return "\n".join([fmt(header), rule] + [fmt(r) for r in rows])


def diameter_mae(preds: Sequence[SegMask], gts: Sequence[SegMask], names: Sequence[str] | None = None) -> DiameterReport:
    if len(preds) != len(gts):
        raise ValueError(f"got {len(preds)} predictions for {len(gts)} ground-truth masks")
    if not gts:
        raise ValueError("need at least one mask pair")
    pred_d, gt_d, dsc = [], [], []
    for i, (p, g) in enumerate(zip(preds, gts)):
        if p.shape != g.shape or p.spacing != g.spacing:
            raise ValueError(f"pair {i}: shape/spacing mismatch")
        if g.area == 0:
            raise ValueError(f"pair {i}: ground-truth mask is empty")
        gt_d.append(ap_diameter(g))
        # an empty prediction measures as zero diameter
        pred_d.append(ap_diameter(p) if p.area else 0.0)
        dsc.append(dice(p, g))
    err = np.abs(np.subtract(pred_d, gt_d))
    return DiameterReport(
        pred_diameters=pred_d,
        gt_diameters=gt_d,
        mae=float(err.mean()),
        sd=float(err.std()),
        dsc_mean=float(np.mean(dsc)),
        dsc_sd=float(np.std(dsc)),
        dsc=dsc,
        names=list(names) if names is not None else [],
    )


# -- Fréchet distance ---------------------------------------------------------

def _scale(m: np.ndarray) -> float:
    return max(1.0, float(np.abs(m).max(initial=0.0)))


def matrix_sqrt_psd(m: np.ndarray) -> np.ndarray:
    """Symmetric square root of a symmetric PSD matrix via ``eigh``.

    Eigenvalues down to ``-1e-8`` (relative to the matrix scale, floored at 1)
    are treated as zero; anything more negative is rejected.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    tol = _PSD_TOL * _scale(m)
    if np.abs(m - m.T).max(initial=0.0) > tol:
        raise ValueError("matrix is not symmetric")
    w, v = np.linalg.eigh((m + m.T) / 2)
    if w.size and w.min() < -tol:
        raise ValueError(f"matrix is not positive semidefinite (eigenvalue {w.min():.3e})")
    s = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return (s + s.T) / 2


@dataclass(frozen=True, eq=False)
class FeatureStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        k = mu.shape[0]
        if mu.ndim != 1 or sigma.shape != (k, k):
            raise ValueError(f"mu has length {k} but sigma has shape {sigma.shape}")
        if self.n < 2:
            raise ValueError("feature statistics need at least two samples")
        sigma = (sigma + sigma.T) / 2
        w = np.linalg.eigvalsh(sigma)
        if w.min() < -_PSD_TOL * _scale(sigma):
            raise ValueError("covariance is not positive semidefinite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    if a.dim != b.dim:
        raise ValueError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    diff = a.mu - b.mu
    # averaging both orders makes the result exactly symmetric; the square root
    # otherwise amplifies round-off of near-zero eigenvalues differently per order
    cross = 0.5 * (_trace_sqrt_product(a.sigma, b.sigma) + _trace_sqrt_product(b.sigma, a.sigma))
    trace = np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * cross
    return float(diff @ diff + max(trace, 0.0))


def _trace_sqrt_product(sa: np.ndarray, sb: np.ndarray) -> float:
    """Tr((Sa Sb)^1/2) via the symmetric PSD form Tr((Sa^1/2 Sb Sa^1/2)^1/2)."""
    root = matrix_sqrt_psd(sa)
    inner = root @ sb @ root
    return float(np.trace(matrix_sqrt_psd((inner + inner.T) / 2)))


def accumulate_stats(features) -> FeatureStats:
    x = np.asarray(list(features), dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be equal-length vectors")
    if x.shape[0] < 2:
        raise ValueError("need at least two feature vectors")
    mu = x.mean(axis=0)
    centered = x - mu
    sigma = centered.T @ centered / (x.shape[0] - 1)
    return FeatureStats(mu, (sigma + sigma.T) / 2, x.shape[0])


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix averaging input cells over equal output bins."""
    edges = np.linspace(0.0, n_in, n_out + 1)
    lo, hi = edges[:-1, None], edges[1:, None]
    cells = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, cells + 1) - np.maximum(lo, cells), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def image_features(image, kind: str = "pixels_16x16") -> np.ndarray:
    """Deterministic feature vector of a B-mode image.

    ``pixels_16x16``: area-averaged 16x16 thumbnail, flattened (256 values).
    ``hist_moments``: mean, sd, skewness and kurtosis of the in-mask pixels
    followed by their 32-bin histogram over [0, 1] as fractions (36 values).
    """
    pixels = np.asarray(getattr(image, "pixels", image), dtype=np.float64)
    mask = getattr(image, "mask", None)
    if kind == "pixels_16x16":
        rows = _area_weights(pixels.shape[0], 16)
        cols = _area_weights(pixels.shape[1], 16)
        return (rows @ pixels @ cols.T).ravel()
    if kind == "hist_moments":
        values = pixels[np.asarray(mask, dtype=bool)] if mask is not None else pixels.ravel()
        if values.size == 0:
            return np.zeros(36)
        mean = values.mean()
        sd = values.std()
        if sd > 0:
            z = (values - mean) / sd
            skew, kurt = float((z**3).mean()), float((z**4).mean())
        else:
            skew = kurt = 0.0
        hist, _ = np.histogram(np.clip(values, 0.0, 1.0), bins=32, range=(0.0, 1.0))
        return np.concatenate([[mean, sd, skew, kurt], hist / values.size])
    raise ValueError(f"unknown feature kind {kind!r}")
