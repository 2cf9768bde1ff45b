import numpy as np
import pytest

from lintx.autodiff import Graph
from lintx.model import (
    DEEP,
    SHALLOW,
    EncoderSpec,
    StyleFactor,
    TransformModuleSpec,
    decode,
    decoder_param_shapes,
    encode,
    encoder_param_shapes,
    init_decoder,
    init_encoder,
    init_transform,
    learned_T,
    style_factor,
    stylize_features,
    transform_graph,
)
from lintx.stats import FeatureMap

TINY = EncoderSpec("tiny", ((4,), (6,)))


def naive_conv(x, w, b):
    ci, h, wd = x.shape
    co, _, k, _ = w.shape
    p = k // 2
    out = np.zeros((co, h, wd))
    for o in range(co):
        for i in range(h):
            for j in range(wd):
                s = b[o]
                for c in range(ci):
                    for di in range(k):
                        for dj in range(k):
                            ii, jj = i + di - p, j + dj - p
                            if 0 <= ii < h and 0 <= jj < wd:
                                s += w[o, c, di, dj] * x[c, ii, jj]
                out[o, i, j] = s
    return out


def naive_pool(x):
    c, h, w = x.shape
    return np.array([[[max(x[k, 2 * i, 2 * j], x[k, 2 * i, 2 * j + 1], x[k, 2 * i + 1, 2 * j], x[k, 2 * i + 1, 2 * j + 1])
                       for j in range(w // 2)] for i in range(h // 2)] for k in range(c)])


def naive_up(x):
    c, h, w = x.shape
    return np.array([[[x[k, i // 2, j // 2] for j in range(2 * w)] for i in range(2 * h)] for k in range(c)])


def relu(x):
    return np.maximum(x, 0)


def seeded(shapes, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    return {k: rng.standard_normal(v) * scale for k, v in shapes.items()}


def identity_kernel(c, k=3):
    w = np.zeros((c, c, k, k))
    for i in range(c):
        w[i, i, k // 2, k // 2] = 1.0
    return w


def test_presets():
    assert SHALLOW.channels == 64 and SHALLOW.downsample == 4
    assert DEEP.channels == 128 and DEEP.downsample == 8
    assert SHALLOW.tap_channels == (16, 32, 64)
    t = TransformModuleSpec(64)
    assert t.dim == 16 and t.branch_channels == (32, 16, 16)
    assert TransformModuleSpec(512).dim == 128
    assert TransformModuleSpec(16).dim == 8
    with pytest.raises(ValueError):
        TransformModuleSpec(8, dim=9)


def test_encode_zero_image_is_zero():
    w = init_encoder(SHALLOW, 0)
    bottleneck, taps = encode(np.zeros((3, 8, 8)), SHALLOW, w)
    assert not bottleneck.data.any() and all(not t.data.any() for t in taps)
    assert [t.channels for t in taps] == [16, 32, 64]
    assert bottleneck is taps[-1]


def test_identity_encoder():
    spec = EncoderSpec("id", ((3,),))
    img = np.random.default_rng(0).uniform(0, 1, (3, 5, 6))
    out, _ = encode(img, spec, {"enc.0.0.w": identity_kernel(3), "enc.0.0.b": np.zeros(3)})
    assert np.array_equal(out.to_chw(), img)


def test_encode_matches_straight_line_oracle():
    w = seeded(encoder_param_shapes(TINY), 1)
    img = np.random.default_rng(2).uniform(0, 1, (3, 6, 4))
    bottleneck, taps = encode(img, TINY, w)
    h1 = relu(naive_conv(img, w["enc.0.0.w"], w["enc.0.0.b"]))
    h2 = relu(naive_conv(naive_pool(h1), w["enc.1.0.w"], w["enc.1.0.b"]))
    np.testing.assert_allclose(taps[0].to_chw(), h1, atol=1e-10)
    np.testing.assert_allclose(bottleneck.to_chw(), h2, atol=1e-10)


def test_encode_rejects_bad_sizes():
    w = init_encoder(SHALLOW)
    with pytest.raises(ValueError):
        encode(np.zeros((3, 10, 8)), SHALLOW, w)
    with pytest.raises(ValueError):
        encode(np.zeros((1, 8, 8)), SHALLOW, w)
    with pytest.raises(KeyError):
        encode(np.zeros((3, 8, 8)), SHALLOW, {})


def test_decode_zero_and_identity():
    w = {k: np.zeros(v) for k, v in decoder_param_shapes(SHALLOW).items()}
    w.update({k: v for k, v in init_decoder(SHALLOW).items() if k.endswith(".w")})
    out = decode(FeatureMap(np.zeros((64, 4)), 2, 2), SHALLOW, w)
    assert out.shape == (3, 8, 8) and not out.any()
    spec = EncoderSpec("id", ((3,),))
    f = FeatureMap.from_chw(np.random.default_rng(3).standard_normal((3, 4, 4)))
    out = decode(f, spec, {"dec.0.w": identity_kernel(3), "dec.0.b": np.zeros(3)})
    assert np.array_equal(out, f.to_chw())


def test_decode_matches_straight_line_oracle():
    w = seeded(decoder_param_shapes(TINY), 4)
    f = np.random.default_rng(5).standard_normal((6, 3, 2))
    got = decode(FeatureMap.from_chw(f), TINY, w)
    h = naive_up(relu(naive_conv(f, w["dec.0.w"], w["dec.0.b"])))
    want = naive_conv(h, w["dec.1.w"], w["dec.1.b"])
    np.testing.assert_allclose(got, want, atol=1e-10)


SMALL_T = TransformModuleSpec(8, dim=4)


def small_features(seed, c=8, h=4, w=4):
    return FeatureMap.from_chw(np.random.default_rng(seed).standard_normal((c, h, w)) + 0.5)


def test_learned_T_identity_construction():
    w = init_transform(SMALL_T, 0)
    for b in ("content", "style"):
        w[f"tm.{b}.fc.w"][:] = 0.0
    t, _, _ = learned_T(small_features(1), small_features(2), SMALL_T, w)
    assert np.array_equal(t, np.eye(4))


def test_learned_T_is_not_symmetric_in_its_inputs():
    w = seeded(SMALL_T.param_shapes(), 3)
    a, b = small_features(4), small_features(5)
    t_ab, _, _ = learned_T(a, b, SMALL_T, w)
    t_ba, _, _ = learned_T(b, a, SMALL_T, w)
    assert not np.allclose(t_ab, t_ba)


def _oracle_branch(f, branch, w):
    h = f.to_chw()
    for k in range(3):
        h = relu(naive_conv(h, w[f"tm.{branch}.{k}.w"], w[f"tm.{branch}.{k}.b"]))
    x = h.reshape(h.shape[0], -1)
    x = x - x.mean(axis=1, keepdims=True)
    cov = x @ x.T / x.shape[1]
    d = cov.shape[0]
    return (w[f"tm.{branch}.fc.w"] @ cov.reshape(-1) + w[f"tm.{branch}.fc.b"]).reshape(d, d)


def _oracle_compress(f, w, name):
    return w[f"tm.{name}.w"][:, :, 0, 0] @ f + w[f"tm.{name}.b"][:, None]


def test_learned_T_and_stylize_match_oracle():
    w = seeded(SMALL_T.param_shapes(), 6)
    f_c, f_s = small_features(7), small_features(8, h=2, w=6)
    t, m_c, m_s = learned_T(f_c, f_s, SMALL_T, w)
    t_o = _oracle_branch(f_s, "style", w) @ _oracle_branch(f_c, "content", w)
    z_c = _oracle_compress(f_c.data, w, "compress")
    z_s = _oracle_compress(f_s.data, w, "compress")
    np.testing.assert_allclose(t, t_o, atol=1e-10)
    np.testing.assert_allclose(m_c, z_c.mean(axis=1), atol=1e-12)
    np.testing.assert_allclose(m_s, z_s.mean(axis=1), atol=1e-12)
    out = stylize_features(f_c, f_s, SMALL_T, w)
    moved = t_o @ (z_c - z_c.mean(axis=1, keepdims=True)) + z_s.mean(axis=1, keepdims=True)
    np.testing.assert_allclose(out.data, _oracle_compress(moved, w, "uncompress"), atol=1e-9)


def test_stylize_near_identity_pipeline():
    w = init_transform(SMALL_T, 9)
    for b in ("content", "style"):
        w[f"tm.{b}.fc.w"][:] = 0.0
    f = small_features(10)
    p = w["tm.compress.w"][:, :, 0, 0]
    out = stylize_features(f, f, SMALL_T, w)
    # with d < C the pipeline is the orthogonal projection onto the compressed subspace
    np.testing.assert_allclose(out.data, p.T @ p @ f.data, atol=1e-12)
    full = TransformModuleSpec(8, dim=8)
    w = init_transform(full, 9)
    for b in ("content", "style"):
        w[f"tm.{b}.fc.w"][:] = 0.0
    np.testing.assert_allclose(stylize_features(f, f, full, w).data, f.data, atol=1e-12)


def test_stylize_constant_content_is_constant():
    w = seeded(SMALL_T.param_shapes(), 11)
    f_c = FeatureMap.from_chw(np.ones((8, 4, 4)) * np.arange(8)[:, None, None])
    out = stylize_features(f_c, small_features(12), SMALL_T, w)
    assert np.allclose(out.data, out.data[:, :1], atol=1e-12)


def test_style_branch_cache_is_transparent():
    w = seeded(SMALL_T.param_shapes(), 13)
    f_s = small_features(14)
    cached = style_factor(f_s, SMALL_T, w)
    assert isinstance(cached, StyleFactor)
    for k in range(10):
        f_c = small_features(100 + k)
        a = stylize_features(f_c, cached, SMALL_T, w)
        b = stylize_features(f_c, f_s, SMALL_T, w)
        assert a.data.tobytes() == b.data.tobytes()


def test_transform_accepts_any_sizes():
    w = seeded(SMALL_T.param_shapes(), 15)
    t1, _, _ = learned_T(small_features(16, h=2, w=2), small_features(17, h=6, w=4), SMALL_T, w)
    t2, _, _ = learned_T(small_features(18, h=8, w=8), small_features(19, h=1, w=3), SMALL_T, w)
    assert t1.shape == t2.shape == (4, 4)
    with pytest.raises(ValueError):
        learned_T(small_features(1, c=6), small_features(2), SMALL_T, w)


def test_graph_agrees_with_inference():
    w = seeded(SMALL_T.param_shapes(), 20)
    fc = [small_features(21 + k) for k in range(2)]
    fs = [small_features(31 + k, h=2, w=2) for k in range(2)]
    g = Graph()
    out = transform_graph(g, g.input("c"), g.input("s"), SMALL_T, w, (4, 4))
    got = g.forward({"c": np.stack([f.to_chw() for f in fc]), "s": np.stack([f.to_chw() for f in fs])}, out)
    for k in range(2):
        want = stylize_features(fc[k], fs[k], SMALL_T, w).to_chw()
        np.testing.assert_allclose(got[k], want, atol=1e-10)


def test_every_transform_parameter_gets_gradient():
    w = init_transform(SMALL_T, 22)
    g = Graph()
    out = transform_graph(g, g.input("c"), g.input("s"), SMALL_T, w, (4, 4))
    target = g.input("t")
    loss = g.frobenius_sq_diff(out, target)
    rng = np.random.default_rng(23)
    g.forward({"c": rng.uniform(0, 1, (2, 8, 4, 4)), "s": rng.uniform(0, 1, (2, 8, 4, 4)),
               "t": rng.standard_normal((2, 8, 4, 4))}, loss)
    grads = g.backward(loss)
    assert set(grads) == set(SMALL_T.param_shapes())
    dead = [k for k, v in grads.items() if not np.any(v)]
    assert dead == []
