"""Image-level stylization: encode, transform at the bottleneck, blend, decode.

Everything that depends only on the style image is computed once by
:meth:`Stylizer.prepare`, so a video reuses it across frames.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    PRESETS,
    EncoderSpec,
    StyleFactor,
    TransformModuleSpec,
    Weights,
    check_weights,
    decode,
    decoder_param_shapes,
    encode,
    encoder_param_shapes,
    style_factor,
    stylize_features,
)
from .stats import AFFINITY_MAX_PIXELS, FeatureMap, channel_mean, channel_mean_std, covariance
from .transfer import (
    ClosedFormConfig,
    RegionMask,
    adain_from_stats,
    apply_transform,
    blend,
    closed_form_T,
    masked_transfer,
    region_stats,
    verify_affinity_preserved,
    verify_covariance_match,
)
from .weights import WeightStore

KINDS = ("closed_form", "adain", "learned")


@dataclass(frozen=True)
class Networks:
    spec: EncoderSpec
    encoder: Weights
    decoder: Weights
    transform: Weights | None = None
    tspec: TransformModuleSpec | None = None

    @classmethod
    def from_store(cls, store: WeightStore, depth: str | None = None) -> "Networks":
        stored = store.metadata.get("depth")
        if depth and stored and depth != stored:
            raise ValueError(f"weights were trained for the {stored} preset, not {depth}")
        name = depth or stored
        if name not in PRESETS:
            raise ValueError(f"weights do not name a known depth preset (got {name!r})")
        spec = PRESETS[name]
        enc_shapes, dec_shapes = encoder_param_shapes(spec), decoder_param_shapes(spec)
        check_weights(store.tensors, enc_shapes)
        check_weights(store.tensors, dec_shapes)
        enc = {k: store[k] for k in enc_shapes}
        dec = {k: store[k] for k in dec_shapes}
        tm = store.subset("tm.")
        if not tm:
            return cls(spec, enc, dec)
        tspec = TransformModuleSpec(spec.channels, int(store.metadata.get("transform_dim", 0)))
        check_weights(tm, tspec.param_shapes())
        return cls(spec, enc, dec, tm, tspec)

    def to_store(self) -> WeightStore:
        tensors = {**self.encoder, **self.decoder, **(self.transform or {})}
        meta = {"depth": self.spec.name}
        if self.tspec is not None:
            meta["transform_dim"] = str(self.tspec.dim)
        return WeightStore(tensors, meta)


@dataclass(frozen=True)
class PreparedStyle:
    features: FeatureMap
    cov: np.ndarray
    mean: np.ndarray
    std: np.ndarray | None = None
    factor: StyleFactor | None = None
    regions: dict | None = None


class Stylizer:
    def __init__(self, nets: Networks, kind: str = "closed_form", alpha: float = 1.0,
                 cfg: ClosedFormConfig = ClosedFormConfig()):
        if kind not in KINDS:
            raise ValueError(f"unknown transform kind {kind!r}")
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        if kind == "learned" and nets.transform is None:
            raise ValueError("the learned transform needs weights that include a trained transform module")
        self.nets, self.kind, self.alpha, self.cfg = nets, kind, alpha, cfg

    def prepare(self, style_img: np.ndarray, mask: RegionMask | None = None) -> PreparedStyle:
        if mask is not None and (mask.height, mask.width) != style_img.shape[1:]:
            raise ValueError("style mask dimensions do not match the style image")
        f_s, _ = encode(style_img, self.nets.spec, self.nets.encoder)
        return self.prepare_features(f_s, mask)

    def prepare_features(self, f_s: FeatureMap, mask: RegionMask | None = None) -> PreparedStyle:
        n = self.nets
        std = factor = regions = None
        if mask is not None:
            if self.kind != "closed_form":
                raise ValueError("masked transfer is only defined for the closed_form kind")
            regions = region_stats(f_s, mask)
        if self.kind == "adain":
            _, std = channel_mean_std(f_s)
        elif self.kind == "learned":
            factor = style_factor(f_s, n.tspec, n.transform)
        return PreparedStyle(f_s, covariance(f_s), channel_mean(f_s), std, factor, regions)

    def transform(self, f_c: FeatureMap, style: PreparedStyle, mask: RegionMask | None = None) -> FeatureMap:
        if (mask is None) != (style.regions is None):
            raise ValueError("content and style masks must be given together")
        if mask is not None:
            return masked_transfer(f_c, mask, style.regions, self.cfg)
        if self.kind == "closed_form":
            return apply_transform(f_c, closed_form_T(covariance(f_c), style.cov, self.cfg), style.mean)
        if self.kind == "adain":
            return adain_from_stats(f_c, style.mean, style.std)
        return stylize_features(f_c, style.factor, self.nets.tspec, self.nets.transform)

    def run(self, content_img: np.ndarray, style: PreparedStyle, mask: RegionMask | None = None):
        """Returns (image, content features, transformed features before blending)."""
        if mask is not None and (mask.height, mask.width) != content_img.shape[1:]:
            raise ValueError("mask dimensions do not match the content image")
        n = self.nets
        f_c, _ = encode(content_img, n.spec, n.encoder)
        f_d = self.transform(f_c, style, mask)
        return decode(blend(f_c, f_d, self.alpha), n.spec, n.decoder), f_c, f_d

    def report(self, f_c: FeatureMap, f_d: FeatureMap, style: PreparedStyle,
               mask: RegionMask | None = None) -> dict[str, float]:
        """Covariance residual against the style target (worst region when masked),
        plus the affinity residual when the feature map is small enough."""
        if mask is None:
            cov_res = verify_covariance_match(f_d, style.cov)
        else:
            labels = mask.resized(f_d.height, f_d.width).labels.reshape(-1)
            cov_res = 0.0
            for r, (cov_s, _) in style.regions.items():
                idx = np.flatnonzero(labels == r)
                if idx.size >= f_d.channels:
                    cov_res = max(cov_res, verify_covariance_match(FeatureMap.flat(f_d.data[:, idx]), cov_s))
        out = {"covariance_residual": cov_res}
        if f_c.n <= AFFINITY_MAX_PIXELS:
            out["affinity_residual"] = verify_affinity_preserved(f_c, f_d)
        return out


def shared_masks(content_values: np.ndarray, style_values: np.ndarray) -> tuple[RegionMask, RegionMask]:
    """Label both masks from one gray-level table so equal levels mean equal regions."""
    levels = np.union1d(np.unique(content_values), np.unique(style_values))
    return (RegionMask(np.searchsorted(levels, content_values), len(levels)),
            RegionMask(np.searchsorted(levels, style_values), len(levels)))
