"""Desk-scale training run: decoder pretraining, then the transform module.

Writes ``<out>/desk.lstw`` plus both loss histories as CSV.

    python scripts/desk_training.py --out runs/desk
"""
import argparse
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from lintx.data import procedural_set
from lintx.model import PRESETS, TransformModuleSpec, init_encoder
from lintx.pipeline import Networks
from lintx.train import LossConfig, TrainConfig, pretrain_decoder, reconstruction_mse, train_transform
from lintx.weights import save_weights


@dataclass
class DeskConfig:
    depth: str = "shallow"
    side: int = 32
    content: int = 64
    styles: int = 8
    recon_styles: int = 64
    decoder_steps: int = 4000
    decoder_lr: float = 1e-3
    transform_steps: int = 500
    transform_lr: float = 1e-4
    lam: float = 1.0
    seed: int = 0


def run(cfg: DeskConfig, out: Path) -> Networks:
    out.mkdir(parents=True, exist_ok=True)
    spec = PRESETS[cfg.depth]
    enc = init_encoder(spec, cfg.seed)
    content = procedural_set("content", cfg.content, cfg.side, cfg.seed + 1)
    styles = procedural_set("style", cfg.styles, cfg.side, cfg.seed + 2)
    recon = np.concatenate([content, procedural_set("style", cfg.recon_styles, cfg.side, cfg.seed + 2)])

    t0 = time.perf_counter()
    dec, mse = pretrain_decoder(recon, spec, enc, cfg.decoder_steps, seed=cfg.seed, lr=cfg.decoder_lr)
    (out / "decoder.csv").write_text("step,mse\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(mse)))
    print(f"decoder: {time.perf_counter() - t0:.1f}s, reconstruction mse {reconstruction_mse(recon, spec, enc, dec):.4e}")

    t0 = time.perf_counter()
    tspec = TransformModuleSpec(spec.channels)
    train = TrainConfig(steps=cfg.transform_steps, lr=cfg.transform_lr, seed=cfg.seed)
    tm, history = train_transform(content, styles, spec, enc, dec, tspec, LossConfig(lam=cfg.lam), train)
    history.write(out / "transform.csv", "step,content_loss,style_loss,total")
    total = history.column(2)
    print(f"transform: {time.perf_counter() - t0:.1f}s, total loss {total[0]:.4e} -> "
          f"{total[-20:].mean():.4e} (mean of last 20)")

    nets = Networks(spec, enc, dec, tm, tspec)
    save_weights(nets.to_store(), out / "desk.lstw")
    (out / "config.txt").write_text("".join(f"{k} = {v}\n" for k, v in asdict(cfg).items()))
    return nets


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    for name, value in asdict(DeskConfig()).items():
        ap.add_argument("--" + name.replace("_", "-"), type=type(value), default=value)
    args = vars(ap.parse_args())
    out = args.pop("out")
    run(DeskConfig(**args), out)
