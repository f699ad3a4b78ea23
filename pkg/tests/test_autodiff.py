import numpy as np
import pytest
from hypothesis import given, strategies as st

from naaqa.autodiff import (Adam, CheckpointError, ShapeError, Tensor, grad_check, load_checkpoint,
                            no_grad, ops, save_checkpoint)
from naaqa.autodiff.gradcheck import gradient_suite


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def test_gradient_suite_single_seed():
    reports = gradient_suite(seeds=(0,))
    assert len(reports) >= 20
    assert all(r.passed for r in reports), [(r.name, r.worst) for r in reports if not r.passed]


def test_grad_check_catches_a_wrong_backward():
    def bad_square(x):
        from naaqa.autodiff.tensor import accumulate, make_result
        out = make_result(x.data ** 2, (x,), None)
        out._backward = lambda: accumulate(x, out.grad * x.data)  # missing factor 2
        return out
    rep = grad_check(bad_square, [np.random.default_rng(0).standard_normal(5)])
    assert not rep.passed


def direct_conv(x, w, stride):
    """Loop reference for 'same'-padded cross-correlation."""
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    sh, sw = stride
    Ho, Wo = -(-H // sh), -(-W // sw)
    ph = max((Ho - 1) * sh + kh - H, 0)
    pw = max((Wo - 1) * sw + kw - W, 0)
    xp = np.pad(x, ((0, 0), (0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)))
    out = np.zeros((B, O, Ho, Wo))
    for i in range(Ho):
        for j in range(Wo):
            patch = xp[:, :, i * sh:i * sh + kh, j * sw:j * sw + kw]
            out[:, :, i, j] = np.einsum("bchw,ochw->bo", patch, w)
    return out


@given(st.integers(1, 3), st.integers(1, 3), st.sampled_from([(1, 1), (3, 3), (1, 3), (3, 1)]),
       st.sampled_from([(1, 1), (2, 2), (1, 2), (2, 1)]), st.integers(3, 9), st.integers(0, 999))
def test_conv2d_matches_loop_reference(cin, cout, k, stride, size, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, cin, size, size + 1))
    w = rng.standard_normal((cout, cin) + k)
    got = ops.conv2d(T(x), T(w), stride=stride).data
    np.testing.assert_allclose(got, direct_conv(x, w, stride), atol=1e-10)


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeError):
        ops.conv2d(T(np.zeros((1, 2, 4, 4))), T(np.zeros((3, 3, 3, 3))))


@given(st.integers(2, 9), st.integers(2, 9), st.booleans(), st.integers(0, 999))
def test_maxpool_values(h, w, ceil, seed):
    x = np.random.default_rng(seed).standard_normal((1, 2, h, w))
    out = ops.maxpool2d(T(x), (2, 2), ceil_mode=ceil).data
    Ho = -(-h // 2) if ceil else h // 2
    Wo = -(-w // 2) if ceil else w // 2
    assert out.shape == (1, 2, Ho, Wo)
    for i in range(Ho):
        for j in range(Wo):
            assert out[0, 1, i, j] == x[0, 1, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()


def test_batchnorm_train_stats_and_running_update():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 3, 4, 5)) * 3 + 2
    rm, rv = np.zeros(3), np.ones(3)
    y = ops.batchnorm2d(T(x), None, None, rm, rv, training=True).data
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0, atol=1e-10)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1, atol=1e-3)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1))
    y_eval = ops.batchnorm2d(T(x), None, None, rm, rv, training=False).data
    np.testing.assert_allclose(y_eval, (x - rm[None, :, None, None]) /
                               np.sqrt(rv[None, :, None, None] + 1e-5))


def test_dropout_eval_identity_and_train_scale():
    x = T(np.ones((1000,)))
    np.testing.assert_array_equal(ops.dropout(x, 0.25, False).data, x.data)
    y = ops.dropout(x, 0.25, True, np.random.default_rng(0)).data
    assert set(np.unique(y)) <= {0.0, 1 / 0.75}
    assert abs((y == 0).mean() - 0.25) < 0.05


def test_film_is_affine_per_channel():
    x = np.random.default_rng(0).standard_normal((2, 3, 2, 2))
    g, b = np.array([[1, 2, 3], [0, 1, -1.0]]), np.array([[0, 1, 0], [5, 0, 0.0]])
    y = ops.film(T(x), T(g), T(b)).data
    np.testing.assert_allclose(y, x * g[:, :, None, None] + b[:, :, None, None])


def test_gru_masking_freezes_state_past_length():
    rng = np.random.default_rng(0)
    E, G = 3, 4
    args = [T(rng.standard_normal(s) * 0.5) for s in ((3 * G, E), (3 * G, G), (3 * G,), (3 * G,))]
    x = rng.standard_normal((2, 5, E))
    x2 = x.copy()
    x2[1, 2:] = 99.0
    h1 = ops.gru_seq(T(x), *args, lengths=np.array([5, 2])).data
    h2 = ops.gru_seq(T(x2), *args, lengths=np.array([5, 2])).data
    np.testing.assert_array_equal(h1[1], h2[1])
    assert h1.shape == (2, G)


def test_cross_entropy_value_and_softmax():
    logits = np.array([[2.0, 0.0, -1.0], [0.0, 0.0, 0.0]])
    p = ops.softmax(logits)
    np.testing.assert_allclose(p.sum(axis=1), 1)
    loss = ops.softmax_cross_entropy(T(logits), np.array([0, 2])).data
    assert float(loss) == pytest.approx(-(np.log(p[0, 0]) + np.log(p[1, 2])) / 2)


def test_backward_accumulates_shared_leaves():
    x = T([1.0, 2.0], grad=True)
    y = ops.add(x, x)
    y.backward(np.ones(2))
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])


def test_no_grad_builds_no_graph():
    x = T([1.0], grad=True)
    with no_grad():
        y = ops.relu(x)
    assert y._backward is None


def test_adam_converges_on_quadratic():
    w = T([5.0, -3.0], grad=True)
    opt = Adam([w], lr=0.1, weight_decay=0.0)
    for _ in range(500):
        opt.zero_grad()
        w.grad = 2 * w.data
        opt.step()
    np.testing.assert_allclose(w.data, 0, atol=1e-2)


def test_adam_first_step_is_lr_sized():
    w = T([1.0, 1.0], grad=True)
    opt = Adam([w], lr=1e-3, weight_decay=0.0)
    w.grad = np.array([10.0, -0.01])
    opt.step()
    np.testing.assert_allclose(w.data, [1 - 1e-3, 1 + 1e-3], rtol=1e-6)


def test_checkpoint_roundtrip(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.ones(4, np.float32)}
    path = save_checkpoint(tmp_path / "ck", arrays, {"note": "x"}, {"a": True, "b": False})
    manifest, back = load_checkpoint(path)
    assert manifest["n_values"] == 10 and manifest["note"] == "x"
    assert [e["trainable"] for e in manifest["tensors"]] == [True, False]
    for k in arrays:
        np.testing.assert_array_equal(back[k], arrays[k])
    (tmp_path / "ck.bin").write_bytes(b"\0" * 8)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
