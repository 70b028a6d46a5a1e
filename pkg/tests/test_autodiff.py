import numpy as np
import pytest

from latentaxes import autodiff as ad
from latentaxes.autodiff import NonFiniteError, Tensor


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += h
        down[idx] -= h
        g[idx] = (f(up) - f(down)) / (2 * h)
    return g


def check(build, x, tol=1e-7):
    v = ad.variable(x)
    build(v).sum().backward()
    expected = fd_grad(lambda a: float(build(Tensor(a)).value.sum()), x)
    np.testing.assert_allclose(v.grad, expected, rtol=tol, atol=tol)


rng = np.random.default_rng(0)
X = rng.uniform(0.5, 1.5, size=(3, 4))
W = rng.standard_normal((4, 2))


@pytest.mark.parametrize("name,build", [
    ("add", lambda t: t + 2.0 * t),
    ("sub_broadcast", lambda t: t - t.sum(axis=0)),
    ("mul", lambda t: t * t * 3.0),
    ("div", lambda t: 1.0 / (t + t * t)),
    ("neg", lambda t: -t),
    ("pow", lambda t: t ** 1.7),
    ("matmul", lambda t: t @ W),
    ("mean_axis", lambda t: (t * t).mean(axis=1)),
    ("reshape", lambda t: t.reshape(4, 3) @ t),
    ("transpose", lambda t: t.transpose(1, 0) @ t),
    ("index", lambda t: t[1:, ::2] * t[:2, 1::2]),
    ("tanh", ad.tanh),
    ("log", ad.log),
    ("sqrt", ad.sqrt),
    ("abs", lambda t: ad.abs(t - 1.0)),
    ("log_cosh", lambda t: ad.log_cosh(3.0 * t - 2.0)),
    ("relu", lambda t: ad.relu(t - 1.0)),
    ("pos_pow", lambda t: ad.pos_pow(t - 0.7, 0.3)),
])
def test_op_gradients(name, build):
    check(build, X.copy())


def test_conv2d_gradient_and_values():
    x = rng.standard_normal((2, 2, 9, 8))
    k = rng.standard_normal((3, 2, 3, 3))
    for stride in (1, 2):
        out = ad.conv2d(Tensor(x), k, stride).value
        # direct loop reference
        ho, wo = (9 - 3) // stride + 1, (8 - 3) // stride + 1
        ref = np.zeros((2, 3, ho, wo))
        for n in range(2):
            for o in range(3):
                for i in range(ho):
                    for j in range(wo):
                        ref[n, o, i, j] = np.sum(x[n, :, i * stride:i * stride + 3, j * stride:j * stride + 3] * k[o])
        np.testing.assert_allclose(out, ref, atol=1e-12)
        check(lambda t: ad.tanh(ad.conv2d(t, k, stride)), x)


def test_shared_subexpression_accumulates():
    v = ad.variable(np.array([2.0]))
    y = v * v
    (y + y * v).sum().backward()
    # d/dv (v^2 + v^3) = 2v + 3v^2
    np.testing.assert_allclose(v.grad, [4.0 + 12.0])


def test_deep_graph_does_not_recurse():
    v = ad.variable(np.array([1.0]))
    t = v
    for _ in range(5000):
        t = t * 1.0
    t.sum().backward()
    assert v.grad[0] == 1.0


def test_log_cosh_large_and_zero():
    big = ad.log_cosh(Tensor(np.array([0.0, 800.0, -800.0]))).value
    assert big[0] == 0.0
    np.testing.assert_allclose(big[1:], 800.0 - np.log(2.0))


def test_non_finite_names_op():
    v = ad.variable(np.array([0.0, 1.0]))
    with pytest.raises(NonFiniteError, match="log"):
        ad.log(v)
    with pytest.raises(NonFiniteError, match="div"):
        v / Tensor(np.array([0.0, 0.0]))


def test_pos_pow_zero_gradient_below_zero():
    v = ad.variable(np.array([-0.5, 0.0, 0.25]))
    ad.pos_pow(v, 0.5).sum().backward()
    assert v.grad[0] == 0.0 and v.grad[1] == 0.0
    assert v.grad[2] == pytest.approx(0.5 * 0.25 ** -0.5)
