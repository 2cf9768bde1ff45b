"""Seeded invariant checks behind ``lintx verify``.

Each check returns ``(name, residual, threshold)``; it passes when
``residual <= threshold``.
"""
from __future__ import annotations

import numpy as np

from .autodiff import fd_pairs, grad_check, relative_errors
from .data import procedural_set
from .gradcases import CASES
from .stats import FeatureMap, channel_mean_std, covariance
from .tensor import random_orthogonal, random_spd, sym_eig
from .transfer import (
    ClosedFormConfig,
    RegionMask,
    adain_transform,
    apply_transform,
    closed_form_T,
    masked_transfer,
    region_stats,
    transfer,
    verify_affinity_preserved,
    verify_covariance_match,
)
from .model import SHALLOW, TransformModuleSpec, init_decoder, init_encoder, init_transform
from .train import LossConfig, LossGraph
from .weights import WeightStore, decode_store, encode_store

GRAD_TOL = 1e-5
FD_STEP = 1e-5


def features_with_cov(cov: np.ndarray, n: int, rng: np.random.Generator) -> FeatureMap:
    """Gaussian features (C x n) drawn with population covariance near ``cov``."""
    z = rng.standard_normal((cov.shape[0], n))
    return FeatureMap.flat(np.linalg.cholesky(cov) @ z + rng.uniform(-1, 1, (cov.shape[0], 1)))


def covariance_residual(c: int, rng, orthogonal: bool = False, sabotage: bool = False) -> float:
    """Transfer content features onto a random SPD target; relative covariance mismatch."""
    f_c = features_with_cov(random_spd(c, rng), 4 * c + 16, rng)
    cov_s = random_spd(c, rng)
    u = random_orthogonal(c, rng) if orthogonal else None
    t = np.eye(c) if sabotage else closed_form_T(covariance(f_c), cov_s, ClosedFormConfig(orthogonal_u=u))
    return verify_covariance_match(apply_transform(f_c, t, rng.standard_normal(c)), cov_s)


def affinity_residual(rng, c: int = 8, n: int = 256, relu: bool = False) -> float:
    """Affinity change under a random invertible map plus shift (or its relu)."""
    f_c = features_with_cov(random_spd(c, rng), n, rng)
    a = random_orthogonal(c, rng) @ np.diag(rng.uniform(0.5, 2.0, c)) @ random_orthogonal(c, rng)
    moved = a @ f_c.data + rng.standard_normal((c, 1))
    if relu:
        moved = np.maximum(moved, 0.0)
    return verify_affinity_preserved(f_c, f_c.with_data(moved))


def two_region_case(rng, c: int = 8, side: int = 16, sabotage: bool = False):
    """Content and style split into left/right regions with distinct statistics.

    Returns the worst per-region relative covariance residual.
    """
    labels = np.zeros((side, side), dtype=int)
    labels[:, side // 2:] = 1
    mask = RegionMask(labels, 2)

    def two_part():
        out = np.empty((c, side, side))
        for r in range(2):
            region = features_with_cov(random_spd(c, rng), side * side // 2, rng).data
            out[:, labels == r] = region
        return FeatureMap.from_chw(out)

    f_c, f_s = two_part(), two_part()
    stats = region_stats(f_s, mask)
    if sabotage:
        stats = {r: (np.eye(c), m) for r, (_, m) in stats.items()}
    f_d = masked_transfer(f_c, mask, stats)
    flat = labels.reshape(-1)
    worst = 0.0
    for r in range(2):
        idx = np.flatnonzero(flat == r)
        got = FeatureMap.flat(f_d.data[:, idx])
        worst = max(worst, verify_covariance_match(got, region_stats(f_s, mask)[r][0]))
    return worst


def composite_point(seed: int, h: float = FD_STEP):
    """Seeded stylize-then-loss graph at desk architecture and 8x8 images.

    Returns ``None`` when some relu input lies within ``10 * h`` of the kink,
    so callers can reject the point and draw another.
    """
    tspec = TransformModuleSpec(SHALLOW.tap_channels[-1])
    enc = init_encoder(SHALLOW, seed)
    lg = LossGraph(SHALLOW, enc, init_decoder(SHALLOW, seed + 1), tspec,
                   init_transform(tspec, seed + 2, fc_scale=0.05), LossConfig(), side=8, batch_size=2)
    inputs = lg.bind(procedural_set("content", 2, 8, 1000 + seed), procedural_set("style", 2, 8, 2000 + seed), enc)
    lg.g.forward(inputs, lg.total)
    if lg.g.relu_margin() < 10 * h:
        return None
    return lg, inputs


def composite_grad_report(points: int = 16, samples: int = 32, h: float = FD_STEP) -> dict:
    """Finite-difference check of the full stylize-then-loss graph over seeded points.

    Besides the worst relative error, reports how far each failing coordinate's
    absolute error sits from the double-precision roundoff scale eps*|loss|/h.
    """
    eps = np.finfo(np.float64).eps
    seed, rejected, coords = 0, 0, 0
    worst, fails, fail_grad, roundoff_ratio = 0.0, 0, 0.0, 0.0
    accepted = 0
    while accepted < points:
        point = composite_point(seed, h)
        seed += 1
        if point is None:
            rejected += 1
            continue
        accepted += 1
        lg, inputs = point
        scale = eps * abs(float(lg.total.value)) / h
        for p in lg.params:
            a, n = fd_pairs(lg.g, lg.total, p, inputs, h, samples, seed)
            rel = relative_errors(a, n)
            coords += rel.size
            worst = max(worst, float(rel.max()))
            bad = rel >= GRAD_TOL
            if bad.any():
                fails += int(bad.sum())
                fail_grad = max(fail_grad, float(np.abs(a[bad]).max()))
                roundoff_ratio = max(roundoff_ratio, float(np.abs(a - n)[bad].max() / scale))
    return dict(worst=worst, points=accepted, rejected=rejected, coords=coords, fails=fails,
                fail_max_grad=fail_grad, fail_roundoff_ratio=roundoff_ratio)


def run_checks(seed: int = 0, sabotage: str | None = None, grad: bool = False):
    rng = np.random.default_rng(seed)
    broken = sabotage == "identityT"
    out = []
    for c in (4, 16, 64):
        worst = max(covariance_residual(c, rng, sabotage=broken) for _ in range(10))
        out.append((f"covariance_match_C{c}", worst, 1e-6))
    worst = max(covariance_residual(16, rng, orthogonal=True, sabotage=broken) for _ in range(10))
    out.append(("covariance_match_orthogonal_U", worst, 1e-6))

    out.append(("affinity_preserved", max(affinity_residual(rng) for _ in range(10)), 1e-6))
    # negative control: relu is not linear, so the affinity must move; report the inverse margin
    moved = min(affinity_residual(rng, relu=True) for _ in range(10))
    out.append(("affinity_relu_control_inverse", 1e-3 / max(moved, 1e-300), 1.0))

    f_c = features_with_cov(random_spd(8, rng), 256, rng)
    f_s = features_with_cov(random_spd(8, rng), 300, rng)
    f_d = transfer(f_c, f_s)
    out.append(("closed_form_affinity", verify_affinity_preserved(f_c, f_d), 1e-6))
    mean_s, std_s = channel_mean_std(f_s)
    mean_d, std_d = channel_mean_std(adain_transform(f_c, f_s))
    out.append(("adain_moments", float(max(np.abs(mean_d - mean_s).max(), np.abs(std_d - std_s).max())), 1e-10))

    one = RegionMask(np.zeros((f_c.height, f_c.width), dtype=int), 1)
    f_s256 = FeatureMap.flat(f_s.data[:, :256])
    f_m = masked_transfer(f_c, one, region_stats(f_s256, one))
    plain = transfer(f_c, f_s256)
    out.append(("masked_single_region_identity", float(np.abs(f_m.data - plain.data).max()), 0.0))
    out.append(("masked_two_region_covariance", two_region_case(rng, sabotage=broken), 1e-5))

    a = random_spd(12, rng)
    rec = sym_eig(a).reconstruct()
    out.append(("sym_eig_reconstruction", float(np.abs(rec - a).max() / np.abs(a).max()), 1e-12))

    store = WeightStore({"w": rng.standard_normal((3, 4))}, {"depth": "shallow"})
    blob = encode_store(store)
    out.append(("weight_roundtrip", 0.0 if encode_store(decode_store(blob)) == blob else 1.0, 0.0))

    if grad:
        for name, case in CASES.items():
            worst = 0.0
            for s in range(3):
                g, loss, params = case(np.random.default_rng(seed + s))
                for p in params:
                    worst = max(worst, grad_check(g, loss, p, {}, seed=s))
            out.append((f"grad_{name}", worst, GRAD_TOL))
    return out
