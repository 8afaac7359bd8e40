import numpy as np
import pytest

from wpmd import autodiff as ad
from wpmd.autodiff import Tensor, finite_diff_check

SEEDS = range(20)


def naive_conv(x, w, b):
    h, wd, cin = x.shape
    k, cout = w.shape[0], w.shape[3]
    p = k // 2
    out = np.zeros((h, wd, cout))
    for i in range(h):
        for j in range(wd):
            for o in range(cout):
                acc = b[o]
                for a in range(k):
                    for c in range(k):
                        ii, jj = i + a - p, j + c - p
                        if 0 <= ii < h and 0 <= jj < wd:
                            acc += np.dot(x[ii, jj], w[a, c, :, o])
                out[i, j, o] = acc
    return out


def naive_tconv(x, w, b):
    h, wd, _ = x.shape
    k, cout = w.shape[0], w.shape[3]
    p = (k - 2) // 2
    full = np.zeros((2 * h + 2 * p, 2 * wd + 2 * p, cout))
    for i in range(h):
        for j in range(wd):
            for a in range(k):
                for c in range(k):
                    full[2 * i + a, 2 * j + c] += x[i, j] @ w[a, c]
    return full[p:p + 2 * h, p:p + 2 * wd] + b


def test_matmul_identity():
    a = np.random.default_rng(0).random((3, 5))
    assert np.array_equal(ad.matmul(Tensor(np.eye(3)), Tensor(a)).data, a)


def test_softmax_uniform_and_rows():
    np.testing.assert_allclose(ad.softmax(Tensor(np.zeros(3))).data, [1 / 3] * 3, atol=1e-16)
    s = ad.softmax(Tensor(np.random.default_rng(1).normal(size=(6, 9)) * 10)).data
    assert np.max(np.abs(s.sum(axis=-1) - 1)) < 1e-12


def test_layer_norm_statistics():
    x = Tensor(np.random.default_rng(2).normal(3, 5, size=(4, 4, 7)))
    y = ad.layer_norm(x, Tensor(np.ones(7)), Tensor(np.zeros(7))).data
    assert np.max(np.abs(y.mean(axis=-1))) < 1e-10
    np.testing.assert_allclose(y.var(axis=-1), 1, atol=1e-5)


def test_conv_delta_stamps_kernel():
    x = np.zeros((5, 5, 1))
    x[2, 2, 0] = 1.0
    w = np.random.default_rng(3).random((3, 3, 1, 1))
    out = ad.conv2d(Tensor(x), Tensor(w)).data[:, :, 0]
    # correlation stamps the kernel flipped about the centre
    np.testing.assert_allclose(out[1:4, 1:4], w[::-1, ::-1, 0, 0], atol=1e-12)
    assert np.all(out[0] == 0) and np.all(out[:, 4] == 0)
    np.testing.assert_allclose(out[:, :, None], naive_conv(x, w, np.zeros(1)), atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_conv_and_tconv_match_naive(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(5, 6, 3))
    w = rng.normal(size=(3, 3, 3, 4))
    b = rng.normal(size=4)
    np.testing.assert_allclose(ad.conv2d(Tensor(x), Tensor(w), Tensor(b)).data, naive_conv(x, w, b), atol=1e-12)
    for k in (2, 4):
        wt = rng.normal(size=(k, k, 3, 2))
        bt = rng.normal(size=2)
        out = ad.transposed_conv2d(Tensor(x), Tensor(wt), Tensor(bt)).data
        assert out.shape == (10, 12, 2)
        np.testing.assert_allclose(out, naive_tconv(x, wt, bt), atol=1e-12)


def test_backward_simple_closed_forms():
    x = Tensor(np.random.default_rng(4).random((3, 4)), requires_grad=True)
    ad.sum_all(x).backward()
    assert np.array_equal(x.grad, np.ones((3, 4)))
    x.zero_grad()
    ad.sum_all(ad.hadamard(x, x)).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data)
    ad.sum_all(ad.hadamard(x, x)).backward()
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.relu(x).backward()


def test_shape_errors_name_primitive():
    with pytest.raises(ad.ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ad.ShapeError, match="hadamard"):
        ad.hadamard(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ad.ShapeError, match="conv2d"):
        ad.conv2d(Tensor(np.ones((4, 4, 2))), Tensor(np.ones((3, 3, 3, 1))))
    with pytest.raises(ad.ShapeError, match="add"):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))


def test_finite_diff_linear_exact():
    rng = np.random.default_rng(5)
    # weights away from zero and a small-magnitude f keep summation roundoff below the bound
    w = rng.choice([-1.0, 1.0], size=(4, 3)) * rng.uniform(0.5, 2.0, size=(4, 3))
    x = Tensor(0.01 * rng.normal(size=(4, 3)))
    assert finite_diff_check(lambda t: ad.sum_all(ad.hadamard(t, Tensor(w))), x) < 1e-10


def test_finite_diff_sigmoid():
    x = Tensor(np.random.default_rng(7).normal(size=(5, 4)))
    assert finite_diff_check(lambda t: ad.sum_all(ad.sigmoid(t)), x) < 1e-6


def test_finite_diff_detects_wrong_gradient():
    def broken(t):
        out = ad.sigmoid(t)
        good = out._backward
        out._backward = lambda g: tuple(2 * v for v in good(g))
        return ad.sum_all(out)

    assert finite_diff_check(broken, Tensor(np.random.default_rng(8).normal(size=(3, 3)))) > 0.1
    assert finite_diff_check(broken, Tensor(np.random.default_rng(8).normal(size=(3, 3))), order=4) > 0.1


def test_five_point_stencil_exact_on_quartic():
    # the five-point error term involves the fifth derivative, which vanishes here
    x = Tensor(np.random.default_rng(9).uniform(0.5, 1.5, size=(3, 3)))

    def quartic(t):
        sq = ad.hadamard(t, t)
        return ad.sum_all(ad.hadamard(sq, sq))

    assert finite_diff_check(quartic, x, eps=1e-2, order=4) < 1e-10
    # the three-point stencil at the same step is visibly biased: relative error eps^2 / x^2
    assert finite_diff_check(quartic, x, eps=1e-2) > 1e-5
    with pytest.raises(ValueError, match="order"):
        finite_diff_check(quartic, x, order=3)


# Every primitive is checked through a random linear read-out so that no gradient is
# identically zero by symmetry (e.g. sum of a softmax).

def _cases(rng):
    a = rng.normal(size=(4, 5))
    b = rng.normal(size=(5, 3))
    img = rng.normal(size=(4, 3, 3))
    w3 = rng.normal(size=(3, 3, 3, 4)) / 3
    wt = rng.normal(size=(2, 2, 3, 4)) / 2
    bias = rng.normal(size=4)
    lnw, lnb = rng.normal(size=(5,)), rng.normal(size=(5,))
    other = rng.normal(size=(4, 5))
    return {
        "matmul": [(lambda t: ad.matmul(t, Tensor(b)), a), (lambda t: ad.matmul(Tensor(a), t), b)],
        "conv2d": [(lambda t: ad.conv2d(t, Tensor(w3), Tensor(bias)), img),
                   (lambda t: ad.conv2d(Tensor(img), t, Tensor(bias)), w3),
                   (lambda t: ad.conv2d(Tensor(img), Tensor(w3), t), bias)],
        "transposed_conv2d": [(lambda t: ad.transposed_conv2d(t, Tensor(wt), Tensor(bias)), img),
                              (lambda t: ad.transposed_conv2d(Tensor(img), t, Tensor(bias)), wt),
                              (lambda t: ad.transposed_conv2d(Tensor(img), Tensor(wt), t), bias)],
        "add": [(lambda t: ad.add(t, Tensor(other)), a), (lambda t: ad.add(Tensor(img), t), rng.normal(size=3))],
        "hadamard": [(lambda t: ad.hadamard(t, Tensor(other)), a), (lambda t: ad.hadamard(t, t), a)],
        "relu": [(ad.relu, np.where(np.abs(a) < 1e-3, 0.5, a))],
        "sigmoid": [(ad.sigmoid, a)],
        "softmax": [(ad.softmax, a * 2)],
        "layer_norm": [(lambda t: ad.layer_norm(t, Tensor(lnw), Tensor(lnb)), a),
                       (lambda t: ad.layer_norm(Tensor(a), t, Tensor(lnb)), lnw),
                       (lambda t: ad.layer_norm(Tensor(a), Tensor(lnw), t), lnb)],
        "mean": [(lambda t: ad.scale(ad.mean(ad.hadamard(t, t)), 1.0), a)],
        "reshape": [(lambda t: ad.reshape(t, (2, 10)), a)],
        "concat": [(lambda t: ad.concat([t, Tensor(other), t], axis=1), a),
                   (lambda t: ad.concat([Tensor(other), t], axis=0), a)],
    }


@pytest.mark.parametrize("op", ad.PRIMITIVES)
def test_primitive_gradients(op):
    worst = 0.0
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        for fn, x0 in _cases(rng)[op]:
            read = np.random.default_rng(1000 + seed)
            weights = {}

            def f(t, fn=fn):
                out = fn(t)
                if out.data.ndim == 0:
                    return out
                if "w" not in weights:
                    weights["w"] = Tensor(read.normal(size=out.shape))
                return ad.sum_all(ad.hadamard(out, weights["w"]))

            worst = max(worst, finite_diff_check(f, Tensor(np.array(x0, dtype=float))))
    assert worst < 1e-6, f"{op}: {worst:.3e}"


@pytest.mark.parametrize("name,fn,x0", [
    ("log", ad.log, np.linspace(0.5, 2, 6)),
    ("div", lambda t: ad.div(t, Tensor(np.linspace(1, 2, 6))), np.linspace(-1, 1, 6)),
    ("div_denominator", lambda t: ad.div(Tensor(np.linspace(-1, 1, 6)), t), np.linspace(1, 2, 6)),
    ("clamp", lambda t: ad.clamp(t, 0.1, 0.9), np.linspace(0.2, 0.8, 6)),
    ("transpose", lambda t: ad.transpose(ad.reshape(t, (2, 3))), np.arange(6.0)),
    ("take", lambda t: ad.take(t, slice(1, 5, 2)), np.arange(6.0)),
])
def test_auxiliary_gradients(name, fn, x0):
    w = Tensor(np.random.default_rng(9).normal(size=np.shape(fn(Tensor(x0)).data)))
    assert finite_diff_check(lambda t: ad.sum_all(ad.hadamard(fn(t), w)), Tensor(x0.astype(float))) < 1e-6


def test_determinism():
    def run():
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(6, 6, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 3, 3, 2)), requires_grad=True)
        y = ad.mean(ad.sigmoid(ad.conv2d(x, w)))
        y.backward()
        return y.data.copy(), x.grad.copy(), w.grad.copy()

    for a, b in zip(run(), run()):
        assert np.array_equal(a, b)


def test_snapshot_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    params = {"a": rng.normal(size=(2, 3)), "b.bias": rng.normal(size=(4,)), "scalar": np.array(1.5)}
    ad.save_snapshot(params, tmp_path / "p.bin")
    raw = (tmp_path / "p.bin").read_bytes()
    assert raw[:8] == ad.SNAPSHOT_MAGIC
    loaded = ad.load_snapshot(tmp_path / "p.bin")
    assert list(loaded) == list(params)
    for k in params:
        assert np.array_equal(loaded[k], params[k])
    assert ad.snapshot_bytes(loaded) == raw


def test_snapshot_layout():
    raw = ad.snapshot_bytes({"w": np.array([[1.0, 2.0]])})
    import struct

    assert struct.unpack_from("<II", raw, 8) == (1, 1)
    assert struct.unpack_from("<I", raw, 16) == (1,)
    assert raw[20:21] == b"w"
    assert struct.unpack_from("<IQQ", raw, 21) == (2, 1, 2)
    assert struct.unpack_from("<2d", raw, 41) == (1.0, 2.0)
    with pytest.raises(ValueError, match="magic"):
        ad.parse_snapshot(b"nope" + raw[4:])
