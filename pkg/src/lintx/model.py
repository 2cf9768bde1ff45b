"""Encoder, decoder and the learnable two-branch transformation module.

Every network exists in two forms that must agree: plain numpy inference
functions (``encode``, ``decode``, ``learned_T``, ``stylize_features``) and
graph builders (``encoder_graph`` etc.) used for training.

Parameter names:

* ``enc.{stage}.{k}.w|b``: encoder convs
* ``dec.{k}.w|b``: decoder convs
* ``tm.{content|style}.{k}.w|b``: branch convs, ``tm.{content|style}.fc.w|b``
* ``tm.compress.w|b``, ``tm.uncompress.w|b``: 1x1 convs
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, Node, conv2d_forward, maxpool2_forward, relu_forward, upsample2_forward
from .stats import FeatureMap, channel_mean, covariance

Weights = dict[str, np.ndarray]


@dataclass(frozen=True)
class EncoderSpec:
    """VGG-style stack: conv3x3+relu units grouped in stages, 2x2 max pool between stages.

    The first conv of each stage is a tap; the last tap is the bottleneck.
    """

    name: str
    stages: tuple[tuple[int, ...], ...]
    in_channels: int = 3

    def __post_init__(self):
        if not self.stages or any(not s for s in self.stages):
            raise ValueError("every encoder stage needs at least one conv")

    @property
    def downsample(self) -> int:
        return 2 ** (len(self.stages) - 1)

    @property
    def tap_channels(self) -> tuple[int, ...]:
        return tuple(s[0] for s in self.stages)

    @property
    def channels(self) -> int:
        return self.tap_channels[-1]

    def conv_layers(self):
        """(name, in_ch, out_ch) for every encoder conv feeding a tap."""
        layers = []
        prev = self.in_channels
        for si, stage in enumerate(self.stages):
            convs = stage if si < len(self.stages) - 1 else stage[:1]
            for k, ch in enumerate(convs):
                layers.append((f"enc.{si}.{k}", prev, ch))
                prev = ch
        return layers

    def decoder_layers(self):
        """(name, in_ch, out_ch, relu, upsample_after): every encoder conv mirrored."""
        convs = self.conv_layers()
        stage_of = [int(name.split(".")[1]) for name, _, _ in convs]
        layers = []
        for k, (idx, (_, ci, co)) in enumerate(zip(range(len(convs) - 1, -1, -1), reversed(convs))):
            first_of_stage = idx == 0 or stage_of[idx - 1] != stage_of[idx]
            up = first_of_stage and stage_of[idx] > 0
            layers.append((f"dec.{k}", co, ci, idx > 0, up))
        return layers

    def check_image(self, h: int, w: int) -> None:
        if h % self.downsample or w % self.downsample:
            raise ValueError(
                f"{self.name} encoder needs sides divisible by {self.downsample}, got {h}x{w}"
            )


SHALLOW = EncoderSpec("shallow", ((16,), (32,), (64,)))
DEEP = EncoderSpec("deep", ((16,), (32,), (64,), (128,)))
PRESETS = {"shallow": SHALLOW, "deep": DEEP}


@dataclass(frozen=True)
class TransformModuleSpec:
    """Two-branch transform module over C-channel features, working in d dims."""

    channels: int
    dim: int = field(default=0)

    def __post_init__(self):
        d = self.dim or min(self.channels, max(8, self.channels // 4))
        if not 0 < d <= self.channels:
            raise ValueError(f"compressed dim must lie in (0, {self.channels}], got {d}")
        object.__setattr__(self, "dim", d)

    @property
    def branch_channels(self) -> tuple[int, int, int]:
        c, d = self.channels, self.dim
        return (max(c // 2, d), max(c // 4, d), d)

    def branch_layers(self, branch: str):
        layers, prev = [], self.channels
        for k, ch in enumerate(self.branch_channels):
            layers.append((f"tm.{branch}.{k}", prev, ch))
            prev = ch
        return layers

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        d2 = self.dim * self.dim
        for branch in ("content", "style"):
            for name, ci, co in self.branch_layers(branch):
                shapes[f"{name}.w"] = (co, ci, 3, 3)
                shapes[f"{name}.b"] = (co,)
            shapes[f"tm.{branch}.fc.w"] = (d2, d2)
            shapes[f"tm.{branch}.fc.b"] = (d2,)
        shapes["tm.compress.w"] = (self.dim, self.channels, 1, 1)
        shapes["tm.compress.b"] = (self.dim,)
        shapes["tm.uncompress.w"] = (self.channels, self.dim, 1, 1)
        shapes["tm.uncompress.b"] = (self.channels,)
        return shapes


def encoder_param_shapes(spec: EncoderSpec) -> dict[str, tuple]:
    shapes = {}
    for name, ci, co in spec.conv_layers():
        shapes[f"{name}.w"] = (co, ci, 3, 3)
        shapes[f"{name}.b"] = (co,)
    return shapes


def decoder_param_shapes(spec: EncoderSpec) -> dict[str, tuple]:
    shapes = {}
    for name, ci, co, _, _ in spec.decoder_layers():
        shapes[f"{name}.w"] = (co, ci, 3, 3)
        shapes[f"{name}.b"] = (co,)
    return shapes


# ---------------------------------------------------------------- init

def _orthogonal_rows(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q.T if rows <= cols else q


def init_encoder(spec: EncoderSpec, seed: int = 0) -> Weights:
    """Orthogonal filters with relu gain sqrt(2); zero biases."""
    rng = np.random.default_rng(seed)
    w = {}
    for name, ci, co in spec.conv_layers():
        w[f"{name}.w"] = np.sqrt(2.0) * _orthogonal_rows(co, ci * 9, rng).reshape(co, ci, 3, 3)
        w[f"{name}.b"] = np.zeros(co)
    return w


def _he(rng, co, ci, k):
    return rng.standard_normal((co, ci, k, k)) * np.sqrt(2.0 / (ci * k * k))


def init_decoder(spec: EncoderSpec, seed: int = 1) -> Weights:
    rng = np.random.default_rng(seed)
    w = {}
    for name, ci, co, _, _ in spec.decoder_layers():
        w[f"{name}.w"] = _he(rng, co, ci, 3)
        w[f"{name}.b"] = np.zeros(co)
    return w


def init_transform(tspec: TransformModuleSpec, seed: int = 2, fc_scale: float = 1e-3) -> Weights:
    """Branch convs He-initialized; fc starts at the identity (tiny weights, bias = vec(I));
    compress gets orthonormal rows and uncompress its transpose."""
    rng = np.random.default_rng(seed)
    d, c = tspec.dim, tspec.channels
    w = {}
    for branch in ("content", "style"):
        for name, ci, co in tspec.branch_layers(branch):
            w[f"{name}.w"] = _he(rng, co, ci, 3)
            w[f"{name}.b"] = np.zeros(co)
        w[f"tm.{branch}.fc.w"] = fc_scale * rng.standard_normal((d * d, d * d)) / d
        w[f"tm.{branch}.fc.b"] = np.eye(d).reshape(-1)
    p = _orthogonal_rows(d, c, rng)
    w["tm.compress.w"] = p.reshape(d, c, 1, 1)
    w["tm.compress.b"] = np.zeros(d)
    w["tm.uncompress.w"] = p.T.copy().reshape(c, d, 1, 1)
    w["tm.uncompress.b"] = np.zeros(c)
    return w


def check_weights(weights: Weights, shapes: dict[str, tuple]) -> None:
    for name, shape in shapes.items():
        if name not in weights:
            raise KeyError(f"missing weight {name!r}")
        if tuple(weights[name].shape) != tuple(shape):
            raise ValueError(f"weight {name!r} has shape {weights[name].shape}, expected {shape}")


# ---------------------------------------------------------------- inference

def encode_batch(x: np.ndarray, spec: EncoderSpec, weights: Weights) -> list[np.ndarray]:
    """Tap activations, shallow to deep, for a (B, 3, H, W) batch."""
    spec.check_image(x.shape[2], x.shape[3])
    taps = []
    h = np.asarray(x, dtype=np.float64)
    for si, stage in enumerate(spec.stages):
        if si:
            h, _ = maxpool2_forward(h)
        convs = stage if si < len(spec.stages) - 1 else stage[:1]
        for k in range(len(convs)):
            name = f"enc.{si}.{k}"
            h = relu_forward(conv2d_forward(h, weights[f"{name}.w"], weights[f"{name}.b"]))
            if k == 0:
                taps.append(h)
    return taps


def encode(img: np.ndarray, spec: EncoderSpec, weights: Weights) -> tuple[FeatureMap, list[FeatureMap]]:
    """Encode one (3, H, W) image; returns (bottleneck, taps)."""
    if img.ndim != 3 or img.shape[0] != spec.in_channels:
        raise ValueError(f"expected a ({spec.in_channels}, H, W) image, got {img.shape}")
    taps = [FeatureMap.from_chw(t[0]) for t in encode_batch(img[None], spec, weights)]
    return taps[-1], taps


def decode_batch(f: np.ndarray, spec: EncoderSpec, weights: Weights) -> np.ndarray:
    h = np.asarray(f, dtype=np.float64)
    for name, _, _, relu, up in spec.decoder_layers():
        h = conv2d_forward(h, weights[f"{name}.w"], weights[f"{name}.b"])
        if relu:
            h = relu_forward(h)
        if up:
            h = upsample2_forward(h)
    return h


def decode(f: FeatureMap, spec: EncoderSpec, weights: Weights) -> np.ndarray:
    if f.channels != spec.channels:
        raise ValueError(f"decoder expects {spec.channels} channels, got {f.channels}")
    return decode_batch(f.to_chw()[None], spec, weights)[0]


def _conv1x1(f: FeatureMap, w: np.ndarray, b: np.ndarray) -> FeatureMap:
    return f.with_data(w[:, :, 0, 0] @ f.data + b[:, None])


def compress(f: FeatureMap, weights: Weights) -> FeatureMap:
    return _conv1x1(f, weights["tm.compress.w"], weights["tm.compress.b"])


def uncompress(f: FeatureMap, weights: Weights) -> FeatureMap:
    return _conv1x1(f, weights["tm.uncompress.w"], weights["tm.uncompress.b"])


def branch_matrix(f: FeatureMap, branch: str, tspec: TransformModuleSpec, weights: Weights) -> np.ndarray:
    """CNN -> covariance of the encoded feature -> fc -> d x d factor."""
    if f.channels != tspec.channels:
        raise ValueError(f"transform module expects {tspec.channels} channels, got {f.channels}")
    h = f.to_chw()[None]
    for name, _, _ in tspec.branch_layers(branch):
        h = relu_forward(conv2d_forward(h, weights[f"{name}.w"], weights[f"{name}.b"]))
    cov = covariance(FeatureMap.from_chw(h[0]))
    d = tspec.dim
    out = weights[f"tm.{branch}.fc.w"] @ cov.reshape(-1) + weights[f"tm.{branch}.fc.b"]
    return out.reshape(d, d)


@dataclass(frozen=True)
class StyleFactor:
    """Everything the transform needs from the style image; reusable across content inputs."""

    matrix: np.ndarray
    mean: np.ndarray


def style_factor(f_s: FeatureMap, tspec: TransformModuleSpec, weights: Weights) -> StyleFactor:
    return StyleFactor(
        matrix=branch_matrix(f_s, "style", tspec, weights),
        mean=channel_mean(compress(f_s, weights)),
    )


def learned_T(f_c: FeatureMap, f_s: FeatureMap, tspec: TransformModuleSpec, weights: Weights):
    """Returns (T, compressed content mean, compressed style mean) with ``T = M_s @ M_c``."""
    style = style_factor(f_s, tspec, weights)
    m_c = branch_matrix(f_c, "content", tspec, weights)
    return style.matrix @ m_c, channel_mean(compress(f_c, weights)), style.mean


def stylize_features(
    f_c: FeatureMap,
    style: FeatureMap | StyleFactor,
    tspec: TransformModuleSpec,
    weights: Weights,
) -> FeatureMap:
    """compress -> center -> T -> add style mean -> uncompress."""
    if isinstance(style, FeatureMap):
        style = style_factor(style, tspec, weights)
    t = style.matrix @ branch_matrix(f_c, "content", tspec, weights)
    z = compress(f_c, weights)
    zc = z.data - channel_mean(z)[:, None]
    return uncompress(z.with_data(t @ zc + style.mean[:, None]), weights)


# ---------------------------------------------------------------- graphs

def _params(g: Graph, weights: Weights, names, trainable: bool) -> dict[str, Node]:
    out = {}
    for n in names:
        out[n] = g.params[n] if n in g.params else g.parameter(n, weights[n], trainable)
    return out


def encoder_graph(g: Graph, x: Node, spec: EncoderSpec, weights: Weights, trainable=False) -> list[Node]:
    p = _params(g, weights, encoder_param_shapes(spec), trainable)
    taps = []
    h = x
    for si, stage in enumerate(spec.stages):
        if si:
            h = g.maxpool2(h)
        convs = stage if si < len(spec.stages) - 1 else stage[:1]
        for k in range(len(convs)):
            name = f"enc.{si}.{k}"
            h = g.relu(g.conv2d(h, p[f"{name}.w"], p[f"{name}.b"]))
            if k == 0:
                taps.append(h)
    return taps


def decoder_graph(g: Graph, f: Node, spec: EncoderSpec, weights: Weights, trainable=False) -> Node:
    p = _params(g, weights, decoder_param_shapes(spec), trainable)
    h = f
    for name, _, _, relu, up in spec.decoder_layers():
        h = g.conv2d(h, p[f"{name}.w"], p[f"{name}.b"])
        if relu:
            h = g.relu(h)
        if up:
            h = g.upsample2_nearest(h)
    return h


def _branch_graph(g, f, branch, tspec, p):
    h = f
    for name, _, _ in tspec.branch_layers(branch):
        h = g.relu(g.conv2d(h, p[f"{name}.w"], p[f"{name}.b"]))
    cov = g.covariance(g.reshape(h, (tspec.dim, -1)))
    d = tspec.dim
    flat = g.linear(g.reshape(cov, (d * d,)), p[f"tm.{branch}.fc.w"], p[f"tm.{branch}.fc.b"])
    return g.reshape(flat, (d, d))


def transform_graph(
    g: Graph,
    f_c: Node,
    f_s: Node,
    tspec: TransformModuleSpec,
    weights: Weights,
    content_hw: tuple[int, int],
    trainable: bool = True,
) -> Node:
    """Graph form of :func:`stylize_features` on (B, C, H, W) feature batches.

    ``content_hw`` is the spatial extent of ``f_c``; the style input may differ.
    """
    p = _params(g, weights, tspec.param_shapes(), trainable)
    d = tspec.dim
    m_c = _branch_graph(g, f_c, "content", tspec, p)
    m_s = _branch_graph(g, f_s, "style", tspec, p)
    t = g.matmul(m_s, m_c)
    z_c = g.reshape(g.conv2d(f_c, p["tm.compress.w"], p["tm.compress.b"]), (d, -1))
    z_s = g.reshape(g.conv2d(f_s, p["tm.compress.w"], p["tm.compress.b"]), (d, -1))
    moved = g.add(g.matmul(t, g.subtract_channel_mean(z_c)), g.channel_mean(z_s))
    moved = g.reshape(moved, (d,) + tuple(content_hw))
    return g.conv2d(moved, p["tm.uncompress.w"], p["tm.uncompress.b"])
