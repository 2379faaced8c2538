"""Fused neural-network kernels on top of the autodiff engine.

Each function builds a single graph node with a hand-written backward pass;
all of them are covered by the finite-difference battery in the tests and by
the ``gradcheck`` CLI subcommand.
"""

from __future__ import annotations

import numpy as np

from .tensor import AutodiffError, Tensor

NEG_INF_LOGIT = -1e9


def _scatter_add(shape, lin_idx, weights):
    """Dense scatter-add via bincount (much faster than np.add.at)."""
    flat = np.bincount(lin_idx.ravel(), weights=weights.ravel(),
                       minlength=int(np.prod(shape)))
    return flat.reshape(shape).astype(weights.dtype, copy=False)


def _mask_bias(mask, dtype, axis, ndim):
    """Additive -1e9 bias for masked slots, shaped for broadcasting."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=axis if mask.ndim == ndim else -1).all():
        raise AutodiffError("masked_softmax: slice with no unmasked positions")
    return np.where(mask, dtype.type(0), dtype.type(NEG_INF_LOGIT))


def _softmax_inplace(z, axis):
    z -= z.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    return z


def masked_softmax(logits, mask, axis=-1):
    """Softmax that assigns exactly zero probability to masked positions.

    `mask` is a boolean numpy array broadcastable to `logits`; masked logits
    receive a -1e9 additive bias before normalisation, which underflows to
    an exact zero.  Raises if any slice has no attendable positions.
    """
    bias = _mask_bias(mask, logits.dtype, axis, logits.ndim)
    y = _softmax_inplace(logits.data + bias, axis)

    def backward(g):
        if logits.requires_grad:
            inner = (g * y).sum(axis=axis, keepdims=True)
            logits._acc(y * (g - inner))

    return Tensor._result(y, (logits,), backward, "masked_softmax")


def attention_mix(q, k, v, mask, scale):
    """Fused scaled-dot-product attention: softmax(q k^T * scale) v.

    q: (..., Lt, dh); k, v: (..., Lr, dh) with identical leading dims; `mask`
    is boolean over reference positions, broadcastable to the score matrix.
    One graph node covering the score matmul, masked softmax and value mix.
    """
    dt = q.dtype
    bias = _mask_bias(mask, dt, -1, q.ndim)
    a = q.data @ np.swapaxes(k.data, -1, -2)
    a *= dt.type(scale)
    a += bias
    a = _softmax_inplace(a, -1)
    out = a @ v.data

    def backward(g):
        if v.requires_grad:
            v._acc(np.swapaxes(a, -1, -2) @ g)
        if q.requires_grad or k.requires_grad:
            da = g @ np.swapaxes(v.data, -1, -2)
            inner = (da * a).sum(axis=-1, keepdims=True)
            da -= inner
            da *= a
            da *= dt.type(scale)
            if q.requires_grad:
                q._acc(da @ k.data)
            if k.requires_grad:
                k._acc(np.swapaxes(da, -1, -2) @ q.data)

    return Tensor._result(out, (q, k, v), backward, "attention_mix")


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise the last axis to zero mean / unit variance, then affine."""
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    y = gamma.data * xhat + beta.data

    def backward(g):
        if beta.requires_grad:
            beta._acc(g.reshape(-1, d).sum(axis=0))
        if gamma.requires_grad:
            gamma._acc((g * xhat).reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            term = dxhat - dxhat.mean(axis=-1, keepdims=True) \
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._acc(term * inv)

    return Tensor._result(y, (x, gamma, beta), backward, "layer_norm")


def dropout(x, rate, rng, training):
    """Inverted dropout; identity (and node-free) when not training."""
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate)
    m = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    y = x.data * m

    def backward(g):
        if x.requires_grad:
            x._acc(g * m)

    return Tensor._result(y, (x,), backward, "dropout")


def linear(x, w, b=None):
    """Affine projection of the last axis: y = x @ w (+ b)."""
    i, o = w.data.shape
    if x.data.shape[-1] != i:
        raise AutodiffError(f"linear: input width {x.data.shape[-1]} != {i}")
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, i)
    y = x2 @ w.data
    if b is not None:
        y += b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(-1, o)
        if x.requires_grad:
            x._acc((g2 @ w.data.T).reshape(*lead, i))
        if w.requires_grad:
            w._acc(x2.T @ g2)
        if b is not None and b.requires_grad:
            b._acc(g2.sum(axis=0))

    return Tensor._result(y.reshape(*lead, o), parents, backward, "linear")


def _pad_last(x, axes_pad):
    pads = [(0, 0)] * x.ndim
    for ax, p in axes_pad:
        pads[ax] = (p, p)
    return np.pad(x, pads)


def conv1d(x, w, b=None):
    """1-D convolution over time, stride 1, zero 'same' padding.

    x: (B, C, T); w: (O, C, k) with odd k.
    """
    bsz, c, t = x.data.shape
    o, c2, k = w.data.shape
    if c != c2 or k % 2 != 1:
        raise AutodiffError(f"conv1d: bad shapes x={x.shape} w={w.shape}")
    p = k // 2
    xp = _pad_last(x.data, [(2, p)])
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # (B,C,T,k)
    cols2 = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(bsz * t, c * k)
    wmat = w.data.reshape(o, c * k)
    y = cols2 @ wmat.T
    if b is not None:
        y += b.data
    y = y.reshape(bsz, t, o).transpose(0, 2, 1)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(bsz * t, o)
        if w.requires_grad:
            w._acc((g2.T @ cols2).reshape(o, c, k))
        if b is not None and b.requires_grad:
            b._acc(g2.sum(axis=0))
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(bsz, t, c, k)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, :, j:j + t] += gcols[:, :, :, j].transpose(0, 2, 1)
            x._acc(gxp[:, :, p:p + t] if p else gxp)

    return Tensor._result(np.ascontiguousarray(y), parents, backward, "conv1d")


def conv2d(x, w, b=None):
    """2-D convolution, stride 1, zero 'same' padding.

    x: (B, C, H, W); w: (O, C, kh, kw) with odd kernel sizes.
    """
    bsz, c, h, wd = x.data.shape
    o, c2, kh, kw = w.data.shape
    if c != c2 or kh % 2 != 1 or kw % 2 != 1:
        raise AutodiffError(f"conv2d: bad shapes x={x.shape} w={w.shape}")
    if kh == 1 and kw == 1:
        return _conv2d_1x1(x, w, b)
    ph, pw = kh // 2, kw // 2
    xp = _pad_last(x.data, [(2, ph), (3, pw)])
    cols = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols2 = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(bsz * h * wd, c * kh * kw)
    wmat = w.data.reshape(o, -1)
    y = cols2 @ wmat.T
    if b is not None:
        y += b.data
    y = y.reshape(bsz, h, wd, o).transpose(0, 3, 1, 2)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bsz * h * wd, o)
        if w.requires_grad:
            w._acc((g2.T @ cols2).reshape(o, c, kh, kw))
        if b is not None and b.requires_grad:
            b._acc(g2.sum(axis=0))
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(bsz, h, wd, c, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + h, j:j + wd] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            x._acc(gxp[:, :, ph:ph + h, pw:pw + wd] if (ph or pw) else gxp)

    return Tensor._result(np.ascontiguousarray(y), parents, backward, "conv2d")


def _conv2d_1x1(x, w, b):
    """Pointwise convolution as a single matmul over flattened positions."""
    bsz, c, h, wd = x.data.shape
    o = w.data.shape[0]
    x2 = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    wmat = w.data.reshape(o, c)
    y = x2 @ wmat.T
    if b is not None:
        y += b.data
    y = np.ascontiguousarray(y.reshape(bsz, h, wd, o).transpose(0, 3, 1, 2))
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        if w.requires_grad:
            w._acc((g2.T @ x2).reshape(o, c, 1, 1))
        if b is not None and b.requires_grad:
            b._acc(g2.sum(axis=0))
        if x.requires_grad:
            gx = (g2 @ wmat).reshape(bsz, h, wd, c).transpose(0, 3, 1, 2)
            x._acc_shared(gx)

    return Tensor._result(y, parents, backward, "conv2d")


try:
    from . import _lstm_fast
except ImportError:                    # numba not installed
    _lstm_fast = None


def _lstm_forward_numpy(xz, wh, b, gates, cells, tanhc, hs):
    bsz, t, h4 = xz.shape
    hdim = h4 // 4
    h3 = 3 * hdim
    h = np.zeros((bsz, hdim), dtype=xz.dtype)
    c = np.zeros((bsz, hdim), dtype=xz.dtype)
    for step in range(t):
        z = xz[:, step, :] + h @ wh + b
        sig = 1.0 / (1.0 + np.exp(-z[:, :h3]))
        gt = np.tanh(z[:, h3:])
        ig, fg, og = sig[:, :hdim], sig[:, hdim:2 * hdim], sig[:, 2 * hdim:]
        c = fg * c + ig * gt
        tc = np.tanh(c)
        h = og * tc
        gates[step, :, :h3] = sig
        gates[step, :, h3:] = gt
        cells[step] = c
        tanhc[step] = tc
        hs[:, step, :] = h


def _lstm_backward_numpy(g, gates, cells, tanhc, wht, dzs):
    t, bsz, h4 = gates.shape
    hdim = h4 // 4
    h3 = 3 * hdim
    dh = np.zeros((bsz, hdim), dtype=g.dtype)
    dc = np.zeros((bsz, hdim), dtype=g.dtype)
    zero = np.zeros((bsz, hdim), dtype=g.dtype)
    for step in range(t - 1, -1, -1):
        sig = gates[step, :, :h3]
        ig, fg, og = sig[:, :hdim], sig[:, hdim:2 * hdim], sig[:, 2 * hdim:]
        gt = gates[step, :, h3:]
        tc = tanhc[step]
        c_prev = cells[step - 1] if step > 0 else zero
        dh = dh + g[:, step, :]
        do = dh * tc
        dc = dc + dh * og * (1.0 - tc * tc)
        dz = dzs[:, step, :]
        dz[:, :hdim] = dc * gt * ig * (1.0 - ig)
        dz[:, hdim:2 * hdim] = dc * c_prev * fg * (1.0 - fg)
        dz[:, 2 * hdim:h3] = do * og * (1.0 - og)
        dz[:, h3:] = dc * ig * (1.0 - gt * gt)
        dh = dz @ wht
        dc = dc * fg


def lstm_sequence(x, wx, wh, b):
    """Single LSTM layer unrolled over time; returns the hidden sequence.

    x: (B, T, I); wx: (I, 4H); wh: (H, 4H); b: (4H,).  Gate layout is
    [input, forget, output | cell]; initial hidden and cell state are zero.
    The input GEMM and all weight gradients are single BLAS calls; only the
    sequential recurrence is stepped (compiled when numba is available).
    """
    bsz, t, i = x.data.shape
    hdim = wh.data.shape[0]
    if wx.data.shape != (i, 4 * hdim) or b.data.shape != (4 * hdim,):
        raise AutodiffError("lstm_sequence: weight shapes disagree")
    dt = x.dtype
    xz = (x.data.reshape(bsz * t, i) @ wx.data).reshape(bsz, t, 4 * hdim)
    gates = np.empty((t, bsz, 4 * hdim), dtype=dt)
    cells = np.empty((t, bsz, hdim), dtype=dt)
    tanhc = np.empty((t, bsz, hdim), dtype=dt)
    hs = np.empty((bsz, t, hdim), dtype=dt)
    fwd = _lstm_fast.forward if _lstm_fast is not None else _lstm_forward_numpy
    fwd(xz, wh.data, b.data, gates, cells, tanhc, hs)

    def backward(g):
        g = np.ascontiguousarray(g)
        dzs = np.empty((bsz, t, 4 * hdim), dtype=dt)
        wht = np.ascontiguousarray(wh.data[:, :].T)
        bwd = _lstm_fast.backward if _lstm_fast is not None else _lstm_backward_numpy
        bwd(g, gates, cells, tanhc, wht, dzs)
        flat = dzs.reshape(bsz * t, 4 * hdim)
        if wx.requires_grad:
            wx._acc(x.data.reshape(bsz * t, i).T @ flat)
        if wh.requires_grad:
            # h feeding step t is hs[:, t-1]; shift right with a zero column
            hshift = np.zeros((bsz, t, hdim), dtype=dt)
            hshift[:, 1:, :] = hs[:, :-1, :]
            wh._acc(hshift.reshape(bsz * t, hdim).T @ flat)
        if b.requires_grad:
            b._acc(flat.sum(axis=0))
        if x.requires_grad:
            x._acc((flat @ wx.data.T).reshape(bsz, t, i))

    return Tensor._result(hs, (x, wx, wh, b), backward, "lstm")


def _running_max_with_source(x, axis_len, offset):
    """Cumulative max along axis 1 plus the index that produced each value."""
    acc = np.maximum.accumulate(x, axis=1)
    pos = np.arange(offset, offset + axis_len, dtype=np.int16).reshape(1, -1, 1)
    src = np.where(x == acc, pos, np.int16(-1))
    np.maximum.accumulate(src, axis=1, out=src)
    return acc, src


def masked_cummax(x, mask, reverse=False):
    """Running elementwise max over time, skipping masked frames.

    x: (B, T, D); mask: (B, T) boolean.  Output at masked positions is zero.
    Forward direction gives, at t, the max over unmasked frames 1..t; reverse
    gives the max over t..T.  Gradient routes to the source frame of each max
    (most recent on exact ties).
    """
    bsz, t, d = x.data.shape
    m3 = np.asarray(mask, dtype=bool)[:, :, None]
    neg = np.finfo(x.dtype).min
    xm = np.where(m3, x.data, neg)
    if reverse:
        xm = xm[:, ::-1, :]
    acc, src = _running_max_with_source(xm, t, 0)
    if reverse:
        acc = acc[:, ::-1, :]
        src = (t - 1) - src[:, ::-1, :]
    out = np.where(m3, acc, 0.0).astype(x.dtype, copy=False)

    def backward(g):
        if x.requires_grad:
            gm = np.where(m3, g, 0.0)
            bidx = np.arange(bsz, dtype=np.intp).reshape(-1, 1, 1)
            didx = np.arange(d, dtype=np.intp).reshape(1, 1, -1)
            lin = (bidx * t + src.astype(np.intp)) * d + didx
            x._acc(_scatter_add((bsz, t, d), lin, gm))

    return Tensor._result(out, (x,), backward, "masked_cummax")


def span_max(x, starts, ends):
    """Per-span elementwise max over clips: out[b,k] = max(x[b, s_k..e_k]).

    x: (B, N, D); starts/ends: (K,) zero-based inclusive indices.
    """
    bsz, n, d = x.data.shape
    starts = np.asarray(starts, dtype=np.intp)
    ends = np.asarray(ends, dtype=np.intp)
    if (starts < 0).any() or (ends >= n).any() or (starts > ends).any():
        raise AutodiffError("span_max: span indices out of range")
    acc = np.empty((bsz, n, n, d), dtype=x.dtype)
    src = np.empty((bsz, n, n, d), dtype=np.int16)
    for s in range(n):
        a, sr = _running_max_with_source(x.data[:, s:, :], n - s, s)
        acc[:, s, s:, :] = a
        src[:, s, s:, :] = sr
    out = acc[:, starts, ends, :]

    def backward(g):
        if x.requires_grad:
            sel = src[:, starts, ends, :].astype(np.intp)  # (B, K, D)
            bidx = np.arange(bsz, dtype=np.intp).reshape(-1, 1, 1)
            didx = np.arange(d, dtype=np.intp).reshape(1, 1, -1)
            lin = (bidx * n + sel) * d + didx
            x._acc(_scatter_add((bsz, n, d), lin, g))

    return Tensor._result(np.ascontiguousarray(out), (x,), backward, "span_max")


def indexed_max(x, idx):
    """Grouped max over gathered rows: out[b,c] = max_j x[b, idx[b,c,j], :].

    x: (B, T, D); idx: (B, C, J) integer frame indices (rows may repeat an
    in-group index to pad short groups).  Used to pool frames into clips with
    a per-sample group width.
    """
    bsz, t, d = x.data.shape
    idx = np.asarray(idx, dtype=np.intp)
    if idx.min() < 0 or idx.max() >= t:
        raise AutodiffError("indexed_max: index out of range")
    bidx = np.arange(bsz, dtype=np.intp).reshape(-1, 1, 1)
    gathered = x.data[bidx, idx, :]          # (B, C, J, D)
    am = gathered.argmax(axis=2)             # (B, C, D)
    out = np.take_along_axis(gathered, am[:, :, None, :], axis=2)[:, :, 0, :]
    c = idx.shape[1]
    src = np.take_along_axis(np.broadcast_to(idx[:, :, :, None], gathered.shape),
                             am[:, :, None, :], axis=2)[:, :, 0, :]  # (B, C, D)

    def backward(g):
        if x.requires_grad:
            b2 = np.arange(bsz, dtype=np.intp).reshape(-1, 1, 1)
            d2 = np.arange(d, dtype=np.intp).reshape(1, 1, -1)
            lin = (b2 * t + src) * d + d2
            x._acc(_scatter_add((bsz, t, d), lin, g))

    return Tensor._result(np.ascontiguousarray(out), (x,), backward, "indexed_max")


def gather_columns(x, idx):
    """out[b, k] = x[b, idx[k]] for a shared 1-D index list; x: (B, N, D)."""
    bsz, n, d = x.data.shape
    idx = np.asarray(idx, dtype=np.intp)
    out = x.data[:, idx, :]

    def backward(g):
        if x.requires_grad:
            bidx = np.arange(bsz, dtype=np.intp).reshape(-1, 1, 1)
            didx = np.arange(d, dtype=np.intp).reshape(1, 1, -1)
            lin = (bidx * n + idx.reshape(1, -1, 1)) * d + didx
            x._acc(_scatter_add((bsz, n, d), lin, g))

    return Tensor._result(np.ascontiguousarray(out), (x,), backward, "gather_columns")


def scatter_columns(x, idx, size):
    """Inverse of gather for unique indices: place K columns into `size` slots."""
    bsz, k, d = x.data.shape
    idx = np.asarray(idx, dtype=np.intp)
    out = np.zeros((bsz, size, d), dtype=x.dtype)
    out[:, idx, :] = x.data

    def backward(g):
        if x.requires_grad:
            x._acc(np.ascontiguousarray(g[:, idx, :]))

    return Tensor._result(out, (x,), backward, "scatter_columns")


def bce_mean(p, targets, mask, eps=1e-7):
    """Per-sample masked-mean binary cross-entropy, averaged over the batch.

    p: (B, K) probabilities; targets/mask: numpy arrays of the same shape.
    Probabilities are clamped to [eps, 1-eps]; clamped entries get zero grad.
    """
    y = np.asarray(targets, dtype=p.dtype)
    m = np.asarray(mask, dtype=p.dtype)
    counts = m.sum(axis=1)
    if (counts == 0).any():
        raise AutodiffError("bce_mean: sample with no valid entries")
    pc = np.clip(p.data, eps, 1.0 - eps)
    per = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    per_sample = (per * m).sum(axis=1) / counts
    val = np.asarray(per_sample.mean(), dtype=p.dtype)
    bsz = p.data.shape[0]

    def backward(g):
        if p.requires_grad:
            inside = ((p.data >= eps) & (p.data <= 1.0 - eps)).astype(p.dtype)
            dper = (1.0 - y) / (1.0 - pc) - y / pc
            gp = g * dper * inside * m / counts[:, None] / bsz
            p._acc(gp.astype(p.dtype, copy=False))

    return Tensor._result(val, (p,), backward, "bce_mean")
