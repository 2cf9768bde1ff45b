"""Losses, decoder pretraining and transform-module training."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Adam, Graph
from .model import (
    EncoderSpec,
    TransformModuleSpec,
    Weights,
    decode_batch,
    decoder_graph,
    encode_batch,
    encoder_graph,
    init_decoder,
    init_transform,
    transform_graph,
)
from .stats import FeatureMap, covariance, gram

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossConfig:
    """Which encoder taps feed the losses, and how they are weighted.

    Tap indices may be negative (``-1`` is the bottleneck).
    """

    content_tap: int = -1
    style_taps: tuple[int, ...] = (0, 1, 2)
    style_weights: tuple[float, ...] | None = None
    lam: float = 1.0
    style_form: str = "gram"

    def __post_init__(self):
        if self.style_form not in ("gram", "centered_covariance"):
            raise ValueError(f"unknown style form {self.style_form!r}")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        weights = self.style_weights or tuple(1.0 for _ in self.style_taps)
        if len(weights) != len(self.style_taps) or any(w < 0 for w in weights):
            raise ValueError("need one non-negative weight per style tap")
        object.__setattr__(self, "style_weights", tuple(float(w) for w in weights))

    def validate(self, spec: EncoderSpec) -> None:
        n = len(spec.stages)
        for t in (self.content_tap, *self.style_taps):
            if not -n <= t < n:
                raise ValueError(f"tap {t} does not exist in the {spec.name} encoder")


def _stat(f: FeatureMap, form: str) -> np.ndarray:
    return gram(f) if form == "gram" else covariance(f)


def style_loss(f_d_taps: Sequence[FeatureMap], f_s_taps: Sequence[FeatureMap], cfg: LossConfig) -> float:
    """sum_i w_i / C_i^2 * ||S(f_d_i) - S(f_s_i)||_F^2 over the configured taps."""
    if len(f_d_taps) != len(f_s_taps):
        raise ValueError("tap lists differ in length")
    total = 0.0
    for tap, w in zip(cfg.style_taps, cfg.style_weights):
        d, s = f_d_taps[tap], f_s_taps[tap]
        if d.channels != s.channels:
            raise ValueError(f"tap {tap}: channel counts differ")
        diff = _stat(d, cfg.style_form) - _stat(s, cfg.style_form)
        total += w * float(np.sum(diff * diff)) / d.channels**2
    return total


def content_loss(f_d: FeatureMap, f_c: FeatureMap) -> float:
    """Mean squared feature difference."""
    if f_d.data.shape != f_c.data.shape:
        raise ValueError("content loss needs equally shaped features")
    diff = f_d.data - f_c.data
    return float(np.sum(diff * diff)) / diff.size


# ---------------------------------------------------------------- decoder

@dataclass
class History:
    rows: list[tuple] = field(default_factory=list)

    def append(self, *row):
        self.rows.append(tuple(float(v) for v in row))

    def column(self, k: int) -> np.ndarray:
        return np.array([r[k] for r in self.rows])

    def write(self, path, header: str) -> None:
        lines = [header] + [f"{i}," + ",".join(repr(v) for v in r) for i, r in enumerate(self.rows)]
        Path(path).write_text("\n".join(lines) + "\n")


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        order = rng.permutation(n)
        for i in range(0, n - batch_size + 1, batch_size):
            yield order[i:i + batch_size]
        if n < batch_size:
            yield order


def pretrain_decoder(
    images: np.ndarray,
    spec: EncoderSpec,
    encoder_weights: Weights,
    steps: int,
    seed: int = 0,
    lr: float = 1e-3,
    batch_size: int = 8,
    decoder_weights: Weights | None = None,
) -> tuple[Weights, np.ndarray]:
    """Fit the decoder to invert the frozen encoder by pixel MSE; returns (weights, loss per step)."""
    rng = np.random.default_rng(seed)
    dec = {k: v.copy() for k, v in (decoder_weights or init_decoder(spec, seed + 1)).items()}
    g = Graph()
    f = g.input("features")
    x = g.input("images")
    out = decoder_graph(g, f, spec, dec, trainable=True)
    loss_node = g.frobenius_sq_diff(out, x)
    opt = Adam(lr=lr)
    params = g.trainable()
    feats = encode_batch(images, spec, encoder_weights)[-1]
    history = []
    initial = None
    batches = _batches(len(images), batch_size, rng)
    for step in range(steps):
        idx = next(batches)
        sse = float(g.forward({"features": feats[idx], "images": images[idx]}, loss_node))
        loss = sse / images[idx].size
        if not np.isfinite(loss):
            raise TrainingError(f"decoder loss became non-finite at step {step}")
        initial = loss if initial is None else initial
        if initial > 0 and loss > 10 * initial:
            raise TrainingError(f"decoder training diverged at step {step}: {loss:.4g} > 10x {initial:.4g}")
        history.append(loss)
        grads = g.backward(loss_node)
        opt.step(params, {k: v / images[idx].size for k, v in grads.items()})
    return {k: g.params[k].value.copy() for k in dec}, np.array(history)


def reconstruction_mse(images, spec, encoder_weights, decoder_weights) -> float:
    out = decode_batch(encode_batch(images, spec, encoder_weights)[-1], spec, decoder_weights)
    return float(np.mean((out - images) ** 2))


# ---------------------------------------------------------------- transform module

@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    batch_size: int = 8
    lr: float = 1e-4
    seed: int = 0


class LossGraph:
    """Transform -> frozen decoder -> frozen encoder -> content + lambda * style.

    Built for a fixed batch size and image side so that both losses come out
    normalized: content as a mean over elements, style as a mean over the batch.
    """

    def __init__(self, spec, enc_w, dec_w, tspec, tm_w, cfg: LossConfig, side: int, batch_size: int):
        cfg.validate(spec)
        spec.check_image(side, side)
        self.spec, self.cfg = spec, cfg
        n_taps = len(spec.stages)
        self.content_tap = cfg.content_tap % n_taps
        self.style_taps = [t % n_taps for t in cfg.style_taps]
        hw = side // spec.downsample
        g = self.g = Graph()
        f_c = g.input("f_c")
        f_s = g.input("f_s")
        moved = transform_graph(g, f_c, f_s, tspec, tm_w, (hw, hw), trainable=True)
        image = decoder_graph(g, moved, spec, dec_w, trainable=False)
        taps = encoder_graph(g, image, spec, enc_w, trainable=False)
        stat = g.gram if cfg.style_form == "gram" else g.covariance
        terms, weights = [], []
        for tap, w in zip(self.style_taps, cfg.style_weights):
            ch = spec.tap_channels[tap]
            s = stat(g.reshape(taps[tap], (ch, -1)))
            terms.append(g.frobenius_sq_diff(s, g.input(f"style_stat_{tap}")))
            weights.append(w / (ch**2 * batch_size))
        self.style = g.weighted_sum(terms, weights)
        ch = spec.tap_channels[self.content_tap]
        side_c = side // 2 ** self.content_tap
        content_size = batch_size * ch * side_c * side_c
        sse = g.frobenius_sq_diff(taps[self.content_tap], g.input("content_target"))
        self.content = g.scale(sse, 1.0 / content_size)
        self.total = g.weighted_sum([self.content, self.style], [1.0, cfg.lam])
        self.params = g.trainable()

    def bind(self, content_imgs, style_imgs, enc_w) -> dict[str, np.ndarray]:
        c_taps = encode_batch(content_imgs, self.spec, enc_w)
        s_taps = encode_batch(style_imgs, self.spec, enc_w)
        stat = _batch_gram if self.cfg.style_form == "gram" else _batch_cov
        inputs = {"f_c": c_taps[-1], "f_s": s_taps[-1], "content_target": c_taps[self.content_tap]}
        for tap in self.style_taps:
            inputs[f"style_stat_{tap}"] = stat(s_taps[tap])
        return inputs

    def evaluate(self, inputs) -> tuple[float, float, float]:
        """(content, style, total) at the current parameters."""
        self.g.forward(inputs, self.total)
        return float(self.content.value), float(self.style.value), float(self.total.value)

    def gradients(self) -> dict[str, np.ndarray]:
        """Gradients of the total from the most recent :meth:`evaluate`."""
        return self.g.backward(self.total)

    def weights(self) -> Weights:
        return {k: v.copy() for k, v in self.params.items()}

    def frozen(self) -> Weights:
        """The graph's own copies of the encoder and decoder weights."""
        return {k: p.value for k, p in self.g.params.items() if not p.trainable}


def train_transform(
    content_images: np.ndarray,
    style_images: np.ndarray,
    spec: EncoderSpec,
    enc_w: Weights,
    dec_w: Weights,
    tspec: TransformModuleSpec,
    cfg: LossConfig = LossConfig(),
    train: TrainConfig = TrainConfig(),
    tm_w: Weights | None = None,
) -> tuple[Weights, History]:
    """Adam on the transform module and compress/uncompress only.

    Each step pairs ``batch_size`` content images with ``batch_size`` style
    images, both drawn by a seeded shuffle. History rows are
    ``(content, style, total)``.
    """
    if len(content_images) < 1 or len(style_images) < 1:
        raise ValueError("need at least one content and one style image")
    side = content_images.shape[-1]
    batch = min(train.batch_size, len(content_images), len(style_images))
    rng = np.random.default_rng(train.seed)
    tm_w = tm_w or init_transform(tspec, train.seed + 2)
    frozen_before = _fingerprint(enc_w, dec_w)
    lg = LossGraph(spec, enc_w, dec_w, tspec, tm_w, cfg, side, batch)
    opt = Adam(lr=train.lr)
    c_batches = _batches(len(content_images), batch, rng)
    s_batches = _batches(len(style_images), batch, rng)
    history = History()
    for step in range(train.steps):
        inputs = lg.bind(content_images[next(c_batches)], style_images[next(s_batches)], enc_w)
        c, s, total = lg.evaluate(inputs)
        if not np.isfinite(total):
            raise TrainingError(f"loss became non-finite at step {step}")
        history.append(c, s, total)
        opt.step(lg.params, lg.gradients())
        if step % 50 == 0:
            log.info("step %d content %.5g style %.5g total %.5g", step, c, s, total)
    if _fingerprint(lg.frozen()) != frozen_before:
        raise TrainingError("frozen encoder/decoder weights changed during training")
    return lg.weights(), history


def _fingerprint(*stores: Weights) -> bytes:
    merged = {k: v for w in stores for k, v in w.items()}
    return b"".join(k.encode() + merged[k].tobytes() for k in sorted(merged))


def _batch_gram(x: np.ndarray) -> np.ndarray:
    b, c = x.shape[:2]
    f = x.reshape(b, c, -1)
    return np.matmul(f, f.transpose(0, 2, 1)) / f.shape[-1]


def _batch_cov(x: np.ndarray) -> np.ndarray:
    b, c = x.shape[:2]
    f = x.reshape(b, c, -1)
    f = f - f.mean(axis=-1, keepdims=True)
    return np.matmul(f, f.transpose(0, 2, 1)) / f.shape[-1]
