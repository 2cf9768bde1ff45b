"""Closed-form linear style transforms and the checks that certify them."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .stats import (
    AFFINITY_MAX_PIXELS,
    FeatureMap,
    affinity,
    center,
    channel_mean,
    channel_mean_std,
    covariance,
)
from .tensor import Tensor, check_finite, frob_norm_sq, spd_power


@dataclass(frozen=True)
class ClosedFormConfig:
    """``eps`` floors eigenvalues relative to the mean eigenvalue of each covariance."""

    eps: float = 1e-5
    orthogonal_u: Tensor | None = None

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        u = self.orthogonal_u
        if u is not None:
            u = np.asarray(u, dtype=np.float64)
            dev = np.sqrt(frob_norm_sq(u.T @ u - np.eye(u.shape[0])))
            if u.ndim != 2 or u.shape[0] != u.shape[1] or dev > 1e-10:
                raise ValueError("orthogonal_u must be a square orthogonal matrix")
            object.__setattr__(self, "orthogonal_u", u)


def _floor(cov: Tensor, eps: float) -> float:
    mean_eig = float(np.trace(cov)) / cov.shape[0]
    return eps * mean_eig if mean_eig > 0 else eps


def closed_form_T(cov_c: Tensor, cov_s: Tensor, cfg: ClosedFormConfig = ClosedFormConfig()) -> Tensor:
    """Whitening-coloring transform ``cov_s^{1/2} U cov_c^{-1/2}``.

    With a full-rank ``cov_c`` the result satisfies ``T cov_c T^T = cov_s``.
    """
    cov_c = np.asarray(cov_c, dtype=np.float64)
    cov_s = np.asarray(cov_s, dtype=np.float64)
    if cov_c.shape != cov_s.shape:
        raise ValueError(f"covariance shapes differ: {cov_c.shape} vs {cov_s.shape}")
    whiten = spd_power(cov_c, -0.5, _floor(cov_c, cfg.eps))
    color = spd_power(cov_s, 0.5, _floor(cov_s, cfg.eps))
    if cfg.orthogonal_u is not None:
        if cfg.orthogonal_u.shape != cov_c.shape:
            raise ValueError("orthogonal_u has the wrong dimension")
        color = color @ cfg.orthogonal_u
    return check_finite(color @ whiten, "transform")


def apply_transform(f_c: FeatureMap, t: Tensor, style_mean: Tensor) -> FeatureMap:
    """``T (f_c - mean(f_c)) + style_mean`` applied to every pixel."""
    t = np.asarray(t, dtype=np.float64)
    style_mean = np.asarray(style_mean, dtype=np.float64)
    if t.shape != (f_c.channels, f_c.channels) or style_mean.shape != (f_c.channels,):
        raise ValueError("transform / mean dimensions do not match the feature map")
    centered, _ = center(f_c)
    return f_c.with_data(t @ centered.data + style_mean[:, None])


def transfer(f_c: FeatureMap, f_s: FeatureMap, cfg: ClosedFormConfig = ClosedFormConfig()) -> FeatureMap:
    """Whole-image closed-form transfer of ``f_s``'s mean and covariance onto ``f_c``."""
    t = closed_form_T(covariance(f_c), covariance(f_s), cfg)
    return apply_transform(f_c, t, channel_mean(f_s))


def adain_transform(f_c: FeatureMap, f_s: FeatureMap, eps: float = 1e-5) -> FeatureMap:
    if f_c.channels != f_s.channels:
        raise ValueError("content and style channel counts differ")
    return adain_from_stats(f_c, *channel_mean_std(f_s), eps=eps)


def adain_from_stats(f_c: FeatureMap, mean_s: Tensor, std_s: Tensor, eps: float = 1e-5) -> FeatureMap:
    """Per-channel mean/std matching against precomputed style statistics."""
    mean_c, std_c = channel_mean_std(f_c)
    scale = std_s / np.maximum(std_c, eps)
    return f_c.with_data(scale[:, None] * (f_c.data - mean_c[:, None]) + mean_s[:, None])


def verify_covariance_match(f_d: FeatureMap, cov_target: Tensor) -> float:
    diff = covariance(f_d) - cov_target
    return float(np.sqrt(frob_norm_sq(diff)) / max(np.sqrt(frob_norm_sq(cov_target)), 1e-12))


def verify_affinity_preserved(f_c: FeatureMap, f_d: FeatureMap, eps: float = 1e-8) -> float:
    if f_c.n != f_d.n:
        raise ValueError("affinity comparison needs equal pixel counts")
    a_c = affinity(f_c, eps)
    a_d = affinity(f_d, eps)
    return float(np.sqrt(frob_norm_sq(a_d - a_c)) / max(np.sqrt(frob_norm_sq(a_c)), 1e-12))


def linear_style_loss(t: Tensor, cov_c: Tensor, cov_s: Tensor) -> float:
    """Covariance mismatch ``||T cov_c T^T - cov_s||_F^2`` of a linear map on centered features."""
    return frob_norm_sq(t @ cov_c @ t.T - cov_s)


def blend(f_c: FeatureMap, f_d: FeatureMap, alpha: float) -> FeatureMap:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if f_c.data.shape != f_d.data.shape:
        raise ValueError("blend needs feature maps of equal shape")
    return f_c.with_data(alpha * f_d.data + (1.0 - alpha) * f_c.data)


@dataclass(frozen=True)
class RegionMask:
    """Per-pixel region labels in ``[0, region_count)``."""

    labels: np.ndarray
    region_count: int = field(default=-1)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError("mask labels must be H x W")
        if labels.size and labels.min() < 0:
            raise ValueError("mask labels must be non-negative")
        labels = labels.astype(np.int64)
        count = self.region_count
        if count < 0:
            count = int(labels.max()) + 1 if labels.size else 0
        if labels.size and labels.max() >= count:
            raise ValueError("mask label exceeds region_count")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "region_count", count)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @classmethod
    def from_values(cls, values: np.ndarray) -> "RegionMask":
        """Map each distinct value (e.g. a gray level) to a label, in sorted order."""
        uniq, inverse = np.unique(np.asarray(values), return_inverse=True)
        return cls(inverse.reshape(np.shape(values)), len(uniq))

    def resized(self, height: int, width: int) -> "RegionMask":
        """Nearest-neighbor resample (top-left sample of each block when shrinking)."""
        if (height, width) == self.labels.shape:
            return self
        rows = (np.arange(height) * self.height) // height
        cols = (np.arange(width) * self.width) // width
        return RegionMask(self.labels[np.ix_(rows, cols)], self.region_count)


RegionStats = Mapping[int, tuple[Tensor, Tensor]]


def region_stats(f: FeatureMap, mask: RegionMask) -> dict[int, tuple[Tensor, Tensor]]:
    """(covariance, mean) of ``f`` restricted to each non-empty region."""
    flat = mask.resized(f.height, f.width).labels.reshape(-1)
    out = {}
    for r in range(mask.region_count):
        idx = np.flatnonzero(flat == r)
        if idx.size:
            sub = FeatureMap.flat(f.data[:, idx])
            out[r] = (covariance(sub), channel_mean(sub))
    return out


def _diagonal_transform(cov_c: Tensor, cov_s: Tensor, eps: float) -> Tensor:
    std_c = np.sqrt(np.maximum(np.diag(cov_c), 0.0))
    std_s = np.sqrt(np.maximum(np.diag(cov_s), 0.0))
    return np.diag(std_s / np.maximum(std_c, eps))


def masked_transfer(
    f_c: FeatureMap,
    mask_c: RegionMask,
    style_stats: RegionStats,
    cfg: ClosedFormConfig = ClosedFormConfig(),
) -> FeatureMap:
    """Transfer each content region with a transform built from that region alone.

    Regions holding fewer pixels than channels get a per-channel (diagonal)
    transform, since their covariance is rank deficient.
    """
    labels = mask_c.resized(f_c.height, f_c.width).labels.reshape(-1)
    out = np.empty_like(f_c.data)
    for r in range(mask_c.region_count):
        idx = np.flatnonzero(labels == r)
        if idx.size == 0:
            continue
        if r not in style_stats:
            raise KeyError(f"no style statistics for region {r}")
        cov_s, mean_s = style_stats[r]
        region = FeatureMap.flat(f_c.data[:, idx])
        cov_r = covariance(region)
        if idx.size < f_c.channels:
            t = _diagonal_transform(cov_r, cov_s, cfg.eps)
        else:
            t = closed_form_T(cov_r, cov_s, cfg)
        out[:, idx] = apply_transform(region, t, mean_s).data
    return f_c.with_data(out)
