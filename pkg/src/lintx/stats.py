"""Statistics on feature maps: centering, covariance, Gram, channel moments, affinity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, check_finite, spd_power

AFFINITY_MAX_PIXELS = 4096


@dataclass(frozen=True)
class FeatureMap:
    """Channels-by-pixels feature matrix with its spatial extent.

    ``data`` has shape ``(C, H*W)``; column ``i*W + j`` is pixel ``(i, j)``.
    """

    data: Tensor
    height: int
    width: int

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"feature data must be C x N, got shape {data.shape}")
        if data.shape[1] != self.height * self.width:
            raise ValueError(
                f"N={data.shape[1]} does not match {self.height}x{self.width}"
            )
        check_finite(data, "feature map")
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_chw(cls, x: Tensor) -> "FeatureMap":
        c, h, w = x.shape
        return cls(np.asarray(x, dtype=np.float64).reshape(c, h * w), h, w)

    @classmethod
    def flat(cls, data: Tensor) -> "FeatureMap":
        """Wrap a C x N matrix as a 1 x N spatial strip."""
        data = np.asarray(data, dtype=np.float64)
        return cls(data, 1, data.shape[1])

    def to_chw(self) -> Tensor:
        return self.data.reshape(self.channels, self.height, self.width)

    def with_data(self, data: Tensor) -> "FeatureMap":
        return FeatureMap(data, self.height, self.width)


def channel_mean(f: FeatureMap) -> Tensor:
    return f.data.mean(axis=1)


def center(f: FeatureMap) -> tuple[FeatureMap, Tensor]:
    mean = channel_mean(f)
    return f.with_data(f.data - mean[:, None]), mean


def gram(f: FeatureMap) -> Tensor:
    """Uncentered second moment ``F F^T / N``."""
    x = f.data
    return (x @ x.T) / x.shape[1]


def covariance(f: FeatureMap) -> Tensor:
    """Centered covariance ``Fbar Fbar^T / N`` (population normalization)."""
    centered, _ = center(f)
    return gram(centered)


def channel_mean_std(f: FeatureMap, eps: float = 0.0) -> tuple[Tensor, Tensor]:
    mean = channel_mean(f)
    var = np.mean((f.data - mean[:, None]) ** 2, axis=1)
    return mean, np.sqrt(var + eps)


def affinity(f: FeatureMap, eps: float = 1e-8, max_pixels: int = AFFINITY_MAX_PIXELS) -> Tensor:
    """Normalized pixel affinity ``Fbar^T cov(F)^-1 Fbar`` (N x N).

    The inverse uses an eigenvalue floor of ``eps``.
    """
    if f.n > max_pixels:
        raise ValueError(f"affinity limited to {max_pixels} pixels, got {f.n}")
    centered, _ = center(f)
    inv = spd_power(covariance(f), -1.0, eps)
    x = centered.data
    a = x.T @ inv @ x
    return 0.5 * (a + a.T)
