"""Style loss of learned vs closed-form transfer on held-out pairs.

Each transformed feature map is decoded and re-encoded; the style loss is read
at the bottleneck tap, in Gram and in centered-covariance form.

    python scripts/compare_transforms.py runs/desk/desk.lstw
"""
import argparse
from pathlib import Path

import numpy as np

from lintx.data import procedural_set
from lintx.model import decode, encode, stylize_features
from lintx.pipeline import Networks
from lintx.train import LossConfig, style_loss
from lintx.transfer import adain_transform, transfer
from lintx.weights import load_weights


def compare(nets: Networks, pairs: int = 4, side: int = 32, seed: int = 100) -> dict:
    contents = procedural_set("content", pairs, side, seed + 1)
    styles = procedural_set("style", pairs, side, seed + 2)
    results = {}
    for form in ("gram", "centered_covariance"):
        cfg = LossConfig(style_taps=(-1,), style_form=form)
        losses = {"learned": [], "closed_form": [], "adain": [], "content_only": []}
        for c_img, s_img in zip(contents, styles):
            f_c, _ = encode(c_img, nets.spec, nets.encoder)
            f_s, s_taps = encode(s_img, nets.spec, nets.encoder)
            outs = {"learned": stylize_features(f_c, f_s, nets.tspec, nets.transform),
                    "closed_form": transfer(f_c, f_s), "adain": adain_transform(f_c, f_s), "content_only": f_c}
            for name, f in outs.items():
                _, taps = encode(decode(f, nets.spec, nets.decoder), nets.spec, nets.encoder)
                losses[name].append(style_loss(taps, s_taps, cfg))
        results[form] = {k: float(np.mean(v)) for k, v in losses.items()}
    return results


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("weights", type=Path)
    ap.add_argument("--pairs", type=int, default=4)
    args = ap.parse_args()
    nets = Networks.from_store(load_weights(args.weights))
    if nets.transform is None:
        raise SystemExit("weights file has no transform module; run desk_training.py first")
    for form, row in compare(nets, args.pairs).items():
        ratio = row["learned"] / row["closed_form"]
        print(f"{form:20s} " + " ".join(f"{k}={v:.3e}" for k, v in row.items()) + f" learned/closed={ratio:.2f}")
