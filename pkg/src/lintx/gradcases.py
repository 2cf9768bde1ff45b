"""One small graph per autodiff op, used for finite-difference checks."""
import numpy as np

from .autodiff import Graph


def _away_from_zero(rng, shape, h=1e-5):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < 10 * h, 0.5, x)


def _loss(g, out, rng, shape):
    target = g.parameter("target", rng.standard_normal(shape), trainable=False)
    return g.frobenius_sq_diff(out, target)


def conv3(rng):
    g = Graph()
    x = g.parameter("x", rng.standard_normal((2, 3, 5, 4)))
    w = g.parameter("w", rng.standard_normal((4, 3, 3, 3)))
    b = g.parameter("b", rng.standard_normal(4))
    return g, _loss(g, g.conv2d(x, w, b), rng, (2, 4, 5, 4)), ["x", "w", "b"]


def conv1(rng):
    g = Graph()
    x = g.parameter("x", rng.standard_normal((2, 4, 3, 3)))
    w = g.parameter("w", rng.standard_normal((2, 4, 1, 1)))
    b = g.parameter("b", rng.standard_normal(2))
    return g, _loss(g, g.conv2d(x, w, b), rng, (2, 2, 3, 3)), ["x", "w", "b"]


def relu(rng):
    g = Graph()
    x = g.parameter("x", _away_from_zero(rng, (3, 7)))
    return g, _loss(g, g.relu(x), rng, (3, 7)), ["x"]


def maxpool2(rng):
    g = Graph()
    # distinct values so the argmax is stable under +-h
    vals = rng.permutation(2 * 3 * 4 * 6).reshape(2, 3, 4, 6) * 0.1 + rng.uniform(0, 0.01, (2, 3, 4, 6))
    x = g.parameter("x", vals)
    return g, _loss(g, g.maxpool2(x), rng, (2, 3, 2, 3)), ["x"]


def upsample2(rng):
    g = Graph()
    x = g.parameter("x", rng.standard_normal((2, 2, 3, 2)))
    return g, _loss(g, g.upsample2_nearest(x), rng, (2, 2, 6, 4)), ["x"]


def linear(rng):
    g = Graph()
    x = g.parameter("x", rng.standard_normal((3, 5)))
    w = g.parameter("w", rng.standard_normal((4, 5)))
    b = g.parameter("b", rng.standard_normal(4))
    return g, _loss(g, g.linear(x, w, b), rng, (3, 4)), ["x", "w", "b"]


def matmul(rng):
    g = Graph()
    a = g.parameter("a", rng.standard_normal((2, 3, 4)))
    b = g.parameter("b", rng.standard_normal((2, 4, 5)))
    return g, _loss(g, g.matmul(a, b), rng, (2, 3, 5)), ["a", "b"]


def add_broadcast(rng):
    g = Graph()
    a = g.parameter("a", rng.standard_normal((2, 3, 4)))
    b = g.parameter("b", rng.standard_normal((2, 3, 1)))
    return g, _loss(g, g.add(a, b), rng, (2, 3, 4)), ["a", "b"]


def scale_reshape(rng):
    g = Graph()
    x = g.parameter("x", rng.standard_normal((2, 3, 2, 2)))
    out = g.reshape(g.scale(x, -1.7), (3, -1))
    return g, _loss(g, out, rng, (2, 3, 4)), ["x"]


def subtract_channel_mean(rng):
    g = Graph()
    x = g.parameter("x", rng.standard_normal((2, 3, 6)))
    return g, _loss(g, g.subtract_channel_mean(x), rng, (2, 3, 6)), ["x"]


def channel_mean(rng):
    g = Graph()
    x = g.parameter("x", rng.standard_normal((2, 3, 6)))
    return g, _loss(g, g.channel_mean(x), rng, (2, 3, 1)), ["x"]


def covariance(rng):
    g = Graph()
    x = g.parameter("x", rng.standard_normal((2, 3, 7)) + 1.0)
    return g, _loss(g, g.covariance(x), rng, (2, 3, 3)), ["x"]


def gram(rng):
    g = Graph()
    x = g.parameter("x", rng.standard_normal((2, 3, 7)))
    return g, _loss(g, g.gram(x), rng, (2, 3, 3)), ["x"]


def frobenius_weighted_sum(rng):
    g = Graph()
    a = g.parameter("a", rng.standard_normal((3, 4)))
    b = g.parameter("b", rng.standard_normal((3, 4)))
    c = g.parameter("c", rng.standard_normal((2, 2)))
    t = g.parameter("t", rng.standard_normal((2, 2)), trainable=False)
    loss = g.weighted_sum([g.frobenius_sq_diff(a, b), g.frobenius_sq_diff(c, t)], [0.7, 2.5])
    return g, loss, ["a", "b", "c"]


CASES = {
    "conv2d_3x3": conv3,
    "conv2d_1x1": conv1,
    "relu": relu,
    "maxpool2": maxpool2,
    "upsample2_nearest": upsample2,
    "linear": linear,
    "matmul": matmul,
    "add": add_broadcast,
    "scale+reshape": scale_reshape,
    "subtract_channel_mean": subtract_channel_mean,
    "channel_mean": channel_mean,
    "covariance": covariance,
    "gram": gram,
    "frobenius_sq_diff+weighted_sum": frobenius_weighted_sum,
}
