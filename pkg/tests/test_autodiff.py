import numpy as np
import pytest

from lintx.autodiff import Adam, Graph, GraphError, ShapeError, grad_check
from lintx.gradcases import CASES


def naive_conv(x, w, b):
    bsz, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    p = k // 2
    out = np.zeros((bsz, co, h, wd))
    for n in range(bsz):
        for o in range(co):
            for i in range(h):
                for j in range(wd):
                    s = b[o]
                    for c in range(ci):
                        for di in range(k):
                            for dj in range(k):
                                ii, jj = i + di - p, j + dj - p
                                if 0 <= ii < h and 0 <= jj < wd:
                                    s += w[o, c, di, dj] * x[n, c, ii, jj]
                    out[n, o, i, j] = s
    return out


def test_relu_forward():
    g = Graph()
    x = g.input("x")
    out = g.relu(x)
    assert np.array_equal(g.forward({"x": np.array([-1.0, 2.0])}, out), [0.0, 2.0])


def test_identity_conv():
    g = Graph()
    x = g.input("x")
    w = g.parameter("w", np.eye(3).reshape(3, 3, 1, 1))
    b = g.parameter("b", np.zeros(3))
    img = np.random.default_rng(0).standard_normal((2, 3, 4, 5))
    assert np.array_equal(g.forward({"x": img}, g.conv2d(x, w, b)), img)


def test_three_layer_net_matches_straight_line_oracle():
    rng = np.random.default_rng(1)
    w1, b1 = rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
    w2, b2 = rng.standard_normal((5, 4, 3, 3)), rng.standard_normal(5)
    w3, b3 = rng.standard_normal((2, 20)), rng.standard_normal(2)
    img = rng.standard_normal((2, 3, 4, 4))

    g = Graph()
    x = g.input("x")
    h = g.relu(g.conv2d(x, g.parameter("w1", w1), g.parameter("b1", b1)))
    h = g.maxpool2(g.relu(g.conv2d(h, g.parameter("w2", w2), g.parameter("b2", b2))))
    out = g.linear(g.reshape(h, (-1,)), g.parameter("w3", w3), g.parameter("b3", b3))
    got = g.forward({"x": img}, out)

    h = np.maximum(naive_conv(img, w1, b1), 0)
    h = np.maximum(naive_conv(h, w2, b2), 0)
    pooled = np.zeros((2, 5, 2, 2))
    for n in range(2):
        for c in range(5):
            for i in range(2):
                for j in range(2):
                    pooled[n, c, i, j] = max(h[n, c, 2 * i + a, 2 * j + bb] for a in (0, 1) for bb in (0, 1))
    want = np.array([[sum(w3[o, k] * pooled[n].reshape(-1)[k] for k in range(20)) + b3[o]
                      for o in range(2)] for n in range(2)])
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_square_gradient():
    g = Graph()
    x = g.parameter("x", np.array([3.0]))
    zero = g.parameter("z", np.zeros(1), trainable=False)
    loss = g.frobenius_sq_diff(x, zero)
    g.forward({}, loss)
    assert g.backward(loss)["x"][0] == 6.0


def test_covariance_gradient_vanishes_for_constant_map():
    g = Graph()
    f = g.parameter("f", np.full((1, 3, 5), 2.0))
    target = g.parameter("t", np.random.default_rng(2).standard_normal((1, 3, 3)), trainable=False)
    loss = g.frobenius_sq_diff(g.covariance(f), target)
    g.forward({}, loss)
    assert np.array_equal(g.backward(loss)["f"], np.zeros((1, 3, 5)))


@pytest.mark.parametrize("name", sorted(CASES))
def test_grad_check_every_op(name):
    for seed in range(3):
        g, loss, params = CASES[name](np.random.default_rng(seed))
        for p in params:
            assert grad_check(g, loss, p, {}) < 1e-6, (name, p, seed)


def test_maxpool_ties_route_to_first_maximum():
    g = Graph()
    x = g.parameter("x", np.array([[[[1.0, 1.0], [1.0, 1.0]]]]))
    zero = g.parameter("z", np.zeros((1, 1, 1, 1)), trainable=False)
    loss = g.frobenius_sq_diff(g.maxpool2(x), zero)
    g.forward({}, loss)
    grad = g.backward(loss)["x"]
    assert np.array_equal(grad, [[[[2.0, 0.0], [0.0, 0.0]]]])
    x.value[...] = [[[[0.0, 3.0], [3.0, 1.0]]]]
    g.forward({}, loss)
    assert np.array_equal(g.backward(loss)["x"], [[[[0.0, 6.0], [0.0, 0.0]]]])


def test_backward_is_deterministic():
    g, loss, params = CASES["conv2d_3x3"](np.random.default_rng(5))
    g.forward({}, loss)
    first = {k: v.tobytes() for k, v in g.backward(loss).items()}
    g.forward({}, loss)
    second = {k: v.tobytes() for k, v in g.backward(loss).items()}
    assert first == second


def test_every_reachable_parameter_gets_matching_grad():
    g, loss, params = CASES["linear"](np.random.default_rng(6))
    g.forward({}, loss)
    grads = g.backward(loss)
    assert set(grads) == {"x", "w", "b"}
    for k, v in grads.items():
        assert v.shape == g.params[k].value.shape


def test_shape_errors_and_unbound_inputs():
    g = Graph()
    x = g.input("x")
    w = g.parameter("w", np.zeros((2, 3, 3, 3)))
    b = g.parameter("b", np.zeros(2))
    out = g.conv2d(x, w, b)
    with pytest.raises(ShapeError):
        g.forward({"x": np.zeros((1, 4, 5, 5))}, out)
    with pytest.raises(GraphError):
        g.forward({}, out)
    with pytest.raises(ShapeError):
        g.forward({"x": np.zeros((1, 3, 5, 5))}, g.maxpool2(out))
    with pytest.raises(GraphError):
        g.input("x")


def test_backward_before_forward():
    g, loss, _ = CASES["relu"](np.random.default_rng(0))
    with pytest.raises(GraphError):
        g.backward(loss)


def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    Adam().step(p, {"w": np.zeros(2)})
    assert np.array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_by_hand():
    g = np.array([0.5, -2.0, 1e-3])
    p = {"w": np.zeros(3)}
    opt = Adam(lr=1e-3)
    opt.step(p, {"w": g})
    m_hat = (0.1 * g) / (1 - 0.9)
    v_hat = (0.001 * g * g) / (1 - 0.999)
    np.testing.assert_allclose(p["w"], -1e-3 * m_hat / (np.sqrt(v_hat) + 1e-8), rtol=1e-12)
    assert np.array_equal(np.sign(p["w"]), -np.sign(g))
    assert opt.step_count == 1


def test_adam_converges_on_quadratic_bowl():
    target = np.array([1.0, -2.0, 0.5])
    p = {"w": np.zeros(3)}
    opt = Adam(lr=0.1)
    for _ in range(100):
        opt.step(p, {"w": 2 * (p["w"] - target)})
    assert np.linalg.norm(p["w"] - target) < 0.1 * np.linalg.norm(target)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        Adam().step({"w": np.zeros(2)}, {"w": np.zeros(3)})


def test_grad_check_perturbs_non_contiguous_parameters():
    # a Fortran-ordered value must still be perturbed in place, not through a copy
    rng = np.random.default_rng(5)
    g = Graph()
    w = g.parameter("w", np.asfortranarray(rng.standard_normal((3, 4))))
    x = g.input("x")
    loss = g.frobenius_sq_diff(g.linear(x, w, g.parameter("b", np.zeros(3), trainable=False)),
                               g.parameter("t", rng.standard_normal((2, 3)), trainable=False))
    assert w.value.flags.c_contiguous
    assert grad_check(g, loss, "w", {"x": rng.standard_normal((2, 4))}) < 1e-7
