"""Differentiable operators for the NAAQA model family.

Layout is NCHW (batch, channels, frequency, time). Every op returns a new Tensor
and, when any input requires grad, registers a closure computing input grads.
"""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, accumulate, as_tensor, make_result


def _pair(v) -> tuple:
    return (v, v) if np.isscalar(v) else tuple(v)


def _same_padding(size: int, k: int, s: int) -> tuple:
    out = -(-size // s)
    total = max((out - 1) * s + k - size, 0)
    return total // 2, total - total // 2


def conv_output_size(size: int, k: int, s: int, padding: str) -> int:
    if padding == "same":
        return -(-size // s)
    return (size - k) // s + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=(1, 1),
           padding: str = "same") -> Tensor:
    """2-D cross-correlation. 'same' pads symmetrically, extra on bottom/right."""
    sh, sw = _pair(stride)
    B, C, H, W = x.shape
    O, Cw, kh, kw = weight.shape
    if C != Cw:
        raise ShapeError(f"conv2d: input has {C} channels, weight expects {Cw}")
    if padding == "same":
        (pt, pb), (pl, pr) = _same_padding(H, kh, sh), _same_padding(W, kw, sw)
    elif padding == "valid":
        pt = pb = pl = pr = 0
    else:
        raise ShapeError(f"conv2d: unknown padding {padding!r}")
    Ho, Wo = conv_output_size(H, kh, sh, padding), conv_output_size(W, kw, sw, padding)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {H}x{W}")
    wm = weight.data.reshape(O, C * kh * kw)
    pointwise = kh == kw == 1 and sh == sw == 1
    if pointwise:
        cols = x.data.transpose(1, 0, 2, 3).reshape(C, B * H * W)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if pt + pb + pl + pr else x.data
        cols = np.empty((C, kh, kw, B, Ho, Wo), dtype=x.data.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, i, j] = xp[:, :, i:i + sh * (Ho - 1) + 1:sh,
                                   j:j + sw * (Wo - 1) + 1:sw].transpose(1, 0, 2, 3)
        cols = cols.reshape(C * kh * kw, B * Ho * Wo)
    out = (wm @ cols).reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data.reshape(1, O, 1, 1)
    out = np.ascontiguousarray(out)
    parents = (x, weight) + ((bias,) if bias is not None else ())

    def backward(g):
        gm = g.transpose(1, 0, 2, 3).reshape(O, B * Ho * Wo)
        if weight.requires_grad:
            accumulate(weight, (gm @ cols.T).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = wm.T @ gm
            if pointwise:
                accumulate(x, dcols.reshape(C, B, H, W).transpose(1, 0, 2, 3))
                return
            dcols = dcols.reshape(C, kh, kw, B, Ho, Wo)
            dxp = np.zeros((B, C, H + pt + pb, W + pl + pr), dtype=x.data.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + sh * (Ho - 1) + 1:sh,
                        j:j + sw * (Wo - 1) + 1:sw] += dcols[:, i, j].transpose(1, 0, 2, 3)
            accumulate(x, dxp[:, :, pt:pt + H, pl:pl + W])

    return make_result(out, parents, backward)


def maxpool2d(x: Tensor, kernel=(2, 2), stride=None, ceil_mode: bool = False) -> Tensor:
    """Window max. ``ceil_mode`` keeps partial edge windows (output = ceil(in / stride)).

    Ties route the gradient to the first maximal element in row-major window order.
    """
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    if (sh, sw) != (kh, kw):
        raise ShapeError("maxpool2d supports stride == kernel only")
    B, C, H, W = x.shape
    if ceil_mode:
        Ho, Wo = -(-H // kh), -(-W // kw)
    else:
        Ho, Wo = H // kh, W // kw
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"maxpool2d: window {kh}x{kw} larger than input {H}x{W}")
    ph, pw = Ho * kh - H, Wo * kw - W
    if ph > 0 or pw > 0:
        xd = np.pad(x.data, ((0, 0), (0, 0), (0, max(ph, 0)), (0, max(pw, 0))),
                    constant_values=-np.inf)
    else:
        xd = x.data
    offsets = [(i, j) for i in range(kh) for j in range(kw)]
    views = [xd[:, :, i:Ho * kh:kh, j:Wo * kw:kw] for i, j in offsets]
    out = views[0].copy()
    arg = np.zeros(out.shape, dtype=np.int8)
    for k, v in enumerate(views[1:], start=1):
        better = v > out
        np.copyto(out, v, where=better)
        arg[better] = k

    def backward(g):
        full = np.zeros((B, C, max(H, Ho * kh), max(W, Wo * kw)), dtype=x.data.dtype)
        for k, (i, j) in enumerate(offsets):
            full[:, :, i:Ho * kh:kh, j:Wo * kw:kw] = g * (arg == k)
        accumulate(x, full[:, :, :H, :W])

    return make_result(out, (x,), backward)


def batchnorm2d(x: Tensor, gamma: Tensor | None, beta: Tensor | None,
                running_mean: np.ndarray, running_var: np.ndarray, training: bool,
                momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization; running stats are updated in place when training.

    ``gamma``/``beta`` are None for the affine-free variant.
    """
    C = x.shape[1]
    if training:
        axes = (0, 2, 3)
        n = x.data.size // C
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * n / max(n - 1, 1)
    else:
        mean, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype)
    xhat = (x.data - mean.reshape(1, C, 1, 1).astype(x.data.dtype)) * inv.reshape(1, C, 1, 1)
    out = xhat
    if gamma is not None:
        out = xhat * gamma.data.reshape(1, C, 1, 1) + beta.data.reshape(1, C, 1, 1)
    parents = (x,) + ((gamma, beta) if gamma is not None else ())

    def backward(g):
        if gamma is not None:
            if gamma.requires_grad:
                accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
            if beta.requires_grad:
                accumulate(beta, g.sum(axis=(0, 2, 3)))
            gxhat = g * gamma.data.reshape(1, C, 1, 1)
        else:
            gxhat = g
        if not x.requires_grad:
            return
        if training:
            m = gxhat.mean(axis=(0, 2, 3), keepdims=True)
            mx = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            accumulate(x, (gxhat - m - xhat * mx) * inv.reshape(1, C, 1, 1))
        else:
            accumulate(x, gxhat * inv.reshape(1, C, 1, 1))

    return make_result(out, parents, backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(x.data * mask, (x,), lambda g: accumulate(x, g * mask))


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode or when p == 0."""
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    rng = rng if rng is not None else np.random.default_rng()
    scale = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return make_result(x.data * scale, (x,), lambda g: accumulate(x, g * scale))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x W^T + b with W of shape (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight in-features {weight.shape[1]}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) + ((bias,) if bias is not None else ())

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if weight.requires_grad:
            accumulate(weight, g2.T @ x.data.reshape(-1, x.shape[-1]))
        if bias is not None and bias.requires_grad:
            accumulate(bias, g2.sum(axis=0))
        if x.requires_grad:
            accumulate(x, g @ weight.data)

    return make_result(out, parents, backward)


def embedding_lookup(token_ids, table: Tensor) -> Tensor:
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"token id out of range for a vocabulary of {table.shape[0]}")
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        accumulate(table, gt)

    return make_result(out, (table,), backward)


def concat_channels(a: Tensor, b) -> Tensor:
    b = as_tensor(b, dtype=a.dtype)
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data.astype(a.dtype, copy=False)], axis=1)

    def backward(g):
        accumulate(a, g[:, :ca])
        accumulate(b, g[:, ca:])

    return make_result(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        accumulate(a, g)
        accumulate(b, g)

    return make_result(a.data + b.data, (a, b), backward)


def global_maxpool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C) max over all spatial positions."""
    B, C, H, W = x.shape
    flat = x.data.reshape(B, C, H * W)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, arg[..., None], g[..., None], axis=-1)
        accumulate(x, gx.reshape(x.shape))

    return make_result(out, (x,), backward)


def film(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """out[b,c,h,w] = gamma[b,c] * x[b,c,h,w] + beta[b,c] (gamma/beta may be per-channel only)."""
    C = x.shape[1]
    if gamma.shape[-1] != C or beta.shape[-1] != C:
        raise ShapeError(f"film: {C} channels but gamma {gamma.shape}, beta {beta.shape}")
    gshape = (-1, C, 1, 1)
    g4, b4 = gamma.data.reshape(gshape), beta.data.reshape(gshape)
    out = g4 * x.data + b4

    def backward(g):
        accumulate(x, g * g4)
        dg = (g * x.data).sum(axis=(2, 3))
        db = g.sum(axis=(2, 3))
        if gamma.data.ndim == 1:
            dg, db = dg.sum(axis=0), db.sum(axis=0)
        accumulate(gamma, dg)
        accumulate(beta, db)

    return make_result(out, (x, gamma, beta), backward)


def reshape(x: Tensor, shape) -> Tensor:
    return make_result(x.data.reshape(shape), (x,), lambda g: accumulate(x, g.reshape(x.shape)))


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """x[..., start:stop]"""
    def backward(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        accumulate(x, full)

    return make_result(x.data[..., start:stop], (x,), backward)


def mean(x: Tensor, axis: int) -> Tensor:
    n = x.shape[axis]

    def backward(g):
        accumulate(x, np.broadcast_to(np.expand_dims(g, axis) / n, x.shape))

    return make_result(x.data.mean(axis=axis), (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return make_result(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                       lambda g: accumulate(x, g.transpose(inv)))


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def gru_seq(x: Tensor, w_ih: Tensor, w_hh: Tensor, b_ih: Tensor, b_hh: Tensor,
            lengths=None) -> Tensor:
    """Unidirectional GRU over (B, T, E); returns the hidden state after each sequence's last step.

    Packed gate order is (reset, update, candidate):
        r = sig(Wir x + bir + Whr h + bhr)
        z = sig(Wiz x + biz + Whz h + bhz)
        n = tanh(Win x + bin + r * (Whn h + bhn))
        h' = (1 - z) * n + z * h
    Steps at or beyond ``lengths[b]`` leave the state unchanged.
    """
    B, T, E = x.shape
    G = w_hh.shape[1]
    if T < 1:
        raise ShapeError("gru_seq needs at least one time step")
    if w_ih.shape != (3 * G, E):
        raise ShapeError(f"gru_seq: w_ih shape {w_ih.shape} != {(3 * G, E)}")
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
    dt = x.data.dtype
    gi = x.data @ w_ih.data.T + b_ih.data  # (B, T, 3G)
    h = np.zeros((B, G), dtype=dt)
    cache = []
    for t in range(T):
        m = (t < lengths).astype(dt)[:, None]
        gh = h @ w_hh.data.T + b_hh.data
        r = _sigmoid(gi[:, t, :G] + gh[:, :G])
        z = _sigmoid(gi[:, t, G:2 * G] + gh[:, G:2 * G])
        hn = gh[:, 2 * G:]
        n = np.tanh(gi[:, t, 2 * G:] + r * hn)
        h_new = (1 - z) * n + z * h
        cache.append((h, r, z, n, hn, m))
        h = m * h_new + (1 - m) * h

    def backward(g):
        dW_ih = np.zeros_like(w_ih.data)
        dW_hh = np.zeros_like(w_hh.data)
        db_ih = np.zeros_like(b_ih.data)
        db_hh = np.zeros_like(b_hh.data)
        dx = np.zeros_like(x.data)
        dh = g
        for t in reversed(range(T)):
            h_prev, r, z, n, hn, m = cache[t]
            dh_new = dh * m
            dn = dh_new * (1 - z)
            dz = dh_new * (h_prev - n)
            da_n = dn * (1 - n * n)
            da_r = da_n * hn * r * (1 - r)
            da_z = dz * z * (1 - z)
            dgi = np.concatenate([da_r, da_z, da_n], axis=1)
            dgh = np.concatenate([da_r, da_z, da_n * r], axis=1)
            dW_ih += dgi.T @ x.data[:, t]
            db_ih += dgi.sum(axis=0)
            dx[:, t] = dgi @ w_ih.data
            dW_hh += dgh.T @ h_prev
            db_hh += dgh.sum(axis=0)
            dh = dh_new * z + dgh @ w_hh.data + dh * (1 - m)
        accumulate(x, dx)
        accumulate(w_ih, dW_ih)
        accumulate(w_hh, dW_hh)
        accumulate(b_ih, db_ih)
        accumulate(b_hh, db_hh)

    return make_result(h, (x, w_ih, w_hh, b_ih, b_hh), backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean cross-entropy of integer targets under softmax(logits)."""
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    B = logits.shape[0]
    if t.shape[0] != B:
        raise ShapeError(f"{B} logits rows but {t.shape[0]} targets")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = np.mean(logsum - z[np.arange(B), t])

    def backward(g):
        p = softmax(logits.data)
        p[np.arange(B), t] -= 1.0
        accumulate(logits, p * (g / B))

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), backward)
