"""Differentiable operations.

Convolutions run as im2col plus one GEMM; their input gradients and the
transposed convolutions share a col2im scatter that loops over kernel offsets
(at most k**d strided adds), so no per-element Python work happens anywhere.
All gradients are exact up to float64 rounding.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import DomainError, ShapeError
from .tensor import Tensor, as_tensor, make_node


def _as_dims(value, d, name):
    if np.isscalar(value):
        value = (int(value),) * d
    value = tuple(int(v) for v in value)
    if len(value) != d:
        raise ShapeError(f"{name} needs {d} entries, got {value}")
    return value


# ---------------------------------------------------------------------------
# elementwise / linear


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = a.data + b.data

    def backward(g):
        return g, g

    return make_node(out, (a, b), backward)


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    out = x.data * c

    def backward(g):
        return (g * c,)

    return make_node(out, (x,), backward)


def add_channel_bias(x, b):
    """x: [N, C, ...spatial], b: [C]. Broadcast add over batch and space."""
    x, b = as_tensor(x), as_tensor(b)
    if x.data.ndim < 2 or b.data.shape != (x.data.shape[1],):
        raise ShapeError(f"bias {b.data.shape} does not fit input {x.data.shape}")
    shape = (1, -1) + (1,) * (x.data.ndim - 2)
    out = x.data + b.data.reshape(shape)

    def backward(g):
        axes = (0,) + tuple(range(2, g.ndim))
        return g, g.sum(axis=axes)

    return make_node(out, (x, b), backward)


def relu(x):
    x = as_tensor(x)
    # subgradient at 0 is 0
    mask = x.data > 0.0
    out = np.where(mask, x.data, 0.0)

    def backward(g):
        return (g * mask,)

    return make_node(out, (x,), backward)


def sigmoid(x):
    x = as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        return (g * out * (1.0 - out),)

    return make_node(out, (x,), backward)


def reshape(x, shape):
    x = as_tensor(x)
    orig = x.data.shape
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(orig),)

    return make_node(out, (x,), backward)


def affine(x, w, b):
    """x: [N, Din], w: [Din, Dout], b: [Dout]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"affine cannot multiply {x.data.shape} by {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"affine bias {b.data.shape} does not fit {w.data.shape}")
    out = x.data @ w.data + b.data

    def backward(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return make_node(out, (x, w, b), backward)


def mean_pool(x):
    """Average over every axis past the channel one: [N, C, ...] -> [N, C]."""
    x = as_tensor(x)
    if x.data.ndim < 3:
        raise ShapeError(f"mean_pool expects [N, C, ...spatial], got {x.data.shape}")
    axes = tuple(range(2, x.data.ndim))
    count = 1
    for a in axes:
        count *= x.data.shape[a]
    out = x.data.mean(axis=axes)
    shape = x.data.shape

    def backward(g):
        gx = np.broadcast_to(g.reshape(g.shape + (1,) * len(axes)), shape)
        return (gx / count,)

    return make_node(out, (x,), backward)


def l2_normalize(x, eps=1e-12):
    """Scale each row of [N, D] to unit length; rows under eps divide by eps."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"l2_normalize expects [N, D], got {x.data.shape}")
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    denom = np.maximum(norms, eps)
    out = x.data / denom
    small = norms < eps

    def backward(g):
        # on the unit branch: (g - y (y.g)) / n ; below eps the map is linear
        gy = (g - out * (out * g).sum(axis=1, keepdims=True)) / denom
        glin = g / denom
        return (np.where(small, glin, gy),)

    return make_node(out, (x,), backward)


# ---------------------------------------------------------------------------
# convolution machinery


def _pad_channels_last(x, pads):
    """[N, C, *S] -> zero-padded channels-last [N, *Sp, C] in one copy."""
    n, c = x.shape[:2]
    s = x.shape[2:]
    d = len(s)
    out = np.zeros((n,) + tuple(s[i] + 2 * pads[i] for i in range(d)) + (c,))
    interior = (slice(None),) + tuple(slice(pads[i], pads[i] + s[i]) for i in range(d)) + (
        slice(None),
    )
    perm = (0,) + tuple(range(2, 2 + d)) + (1,)
    out[interior] = x.transpose(perm)
    return out


def _im2col(xt, kdims, strides):
    """xt: channels-last padded [N, *Sp, C]. Returns ([N*prod(out), prod(k)*C], out_dims).

    Column blocks are laid out (*k, C), matching _kernel_matrix.
    """
    n = xt.shape[0]
    c = xt.shape[-1]
    sp = xt.shape[1:-1]
    d = len(kdims)
    out_dims = tuple((sp[i] - kdims[i]) // strides[i] + 1 for i in range(d))
    if any(o <= 0 for o in out_dims):
        raise ShapeError(f"kernel {kdims} does not fit padded input {sp} at stride {strides}")
    st = xt.strides
    view_shape = (n,) + out_dims + kdims + (c,)
    view_strides = (
        (st[0],)
        + tuple(st[1 + i] * strides[i] for i in range(d))
        + tuple(st[1 + i] for i in range(d))
        + (st[-1],)
    )
    windows = as_strided(xt, view_shape, view_strides)
    rows = n * int(np.prod(out_dims))
    cols = int(np.prod(kdims)) * c
    col = np.ascontiguousarray(windows).reshape(rows, cols)
    return col, out_dims


def _kernel_matrix(k):
    """[F, C, *k] -> [prod(k)*C, F] matching _im2col's column layout."""
    d = k.ndim - 2
    perm = tuple(range(2, 2 + d)) + (1, 0)
    return np.ascontiguousarray(k.transpose(perm)).reshape(-1, k.shape[0])


def _from_channels_last(out, d):
    """[N, *S, F] -> contiguous [N, F, *S]."""
    perm = (0, 1 + d) + tuple(range(1, 1 + d))
    return np.ascontiguousarray(out.transpose(perm))


def _conv_forward(x, k, strides, pads, bias=None):
    n = x.shape[0]
    xt = _pad_channels_last(x, pads)
    col, out_dims = _im2col(xt, k.shape[2:], strides)
    prod = col @ _kernel_matrix(k)
    if bias is not None:
        prod += bias
    out = _from_channels_last(prod.reshape((n,) + out_dims + (k.shape[0],)), len(out_dims))
    return out, out_dims, col


def _grad_kernel_from_col(col, gout, kshape):
    f = kshape[0]
    d = len(kshape) - 2
    gm = gout.transpose((0,) + tuple(range(2, 2 + d)) + (1,)).reshape(-1, f)
    flat = col.T @ gm  # [prod(k)*C, F]
    kt = flat.reshape(kshape[2:] + (kshape[1], f))
    perm = (1 + d, d) + tuple(range(d))
    return np.ascontiguousarray(kt.transpose(perm))


def _conv_grad_kernel(x, gout, kshape, strides, pads):
    xt = _pad_channels_last(x, pads)
    col, _ = _im2col(xt, kshape[2:], strides)
    return _grad_kernel_from_col(col, gout, kshape)


def _dilate(y, strides):
    """Insert stride-1 zeros between elements along each spatial axis."""
    if all(s == 1 for s in strides):
        return y
    n, c = y.shape[:2]
    s = y.shape[2:]
    d = len(s)
    out = np.zeros((n, c) + tuple((s[i] - 1) * strides[i] + 1 for i in range(d)))
    sl = (slice(None), slice(None)) + tuple(slice(None, None, strides[i]) for i in range(d))
    out[sl] = y
    return out


def _flip_swap(k):
    """[A, B, *k] -> [B, A, *reversed k extents], spatially reversed."""
    d = k.ndim - 2
    rev = (slice(None), slice(None)) + (slice(None, None, -1),) * d
    return np.ascontiguousarray(k[rev].swapaxes(0, 1))


def _full_adjoint(gout, k_flipped, strides):
    """Correlate the stride-dilated gout with an already-flipped kernel.

    Output covers padded-input coordinates [0, (So-1)*stride + k) per axis.
    """
    d = len(strides)
    kdims = k_flipped.shape[2:]
    dil = _dilate(gout, strides)
    full_pads = tuple(kd - 1 for kd in kdims)
    out, _, _ = _conv_forward(dil, k_flipped, (1,) * d, full_pads)
    return out


def _conv_grad_input(gout, k, xshape, strides, pads):
    """Adjoint of _conv_forward with respect to x."""
    d = len(strides)
    full = _full_adjoint(gout, _flip_swap(k), strides)
    padded = tuple(xshape[2 + i] + 2 * pads[i] for i in range(d))
    t_full = full.shape[2:]
    if t_full != padded:
        # strided conv floored away trailing rows; they received zero gradient
        grown = np.zeros(xshape[:2] + padded)
        grown[(Ellipsis,) + tuple(slice(0, t) for t in t_full)] = full
        full = grown
    sl = (slice(None), slice(None)) + tuple(slice(pads[i], padded[i] - pads[i]) for i in range(d))
    return np.ascontiguousarray(full[sl])


def _conv_transpose_forward(y, w, strides, pads, bias=None):
    """w: [Cin, F, *k]. Output extent per dim: (S-1)*stride - 2*pad + k."""
    d = len(strides)
    kdims = w.shape[2:]
    in_dims = y.shape[2:]
    out_dims = tuple((in_dims[i] - 1) * strides[i] + kdims[i] - 2 * pads[i] for i in range(d))
    if any(o <= 0 for o in out_dims):
        raise ShapeError(
            f"transposed conv output collapsed: input {in_dims}, kernel {kdims}, "
            f"stride {strides}, padding {pads}"
        )
    # adjoint of the conv whose kernel array is w read as [C_in, F_out, *k]
    full = _full_adjoint(y, _flip_swap(w), strides)
    sl = (slice(None), slice(None)) + tuple(
        slice(pads[i], full.shape[2 + i] - pads[i]) for i in range(d)
    )
    out = np.ascontiguousarray(full[sl])
    if bias is not None:
        out += bias.reshape((1, -1) + (1,) * d)
    return out, out_dims


def _conv_transpose_grad_input(gout, w, strides, pads):
    # adjoint of the adjoint: a plain strided conv with the same kernel array
    out, _, _ = _conv_forward(gout, w, strides, pads)
    return out


def _conv_transpose_grad_kernel(y, gout, wshape, strides, pads):
    # same GEMM pattern as _conv_grad_kernel with (x, gout) := (gout, y),
    # which lands in [C, F, *k] layout directly
    return _conv_grad_kernel(gout, y, wshape, strides, pads)


def _check_conv_args(x, k, d, kind):
    if x.data.ndim != d + 2:
        raise ShapeError(f"{kind} expects a rank-{d + 2} input, got {x.data.shape}")
    if k.data.ndim != d + 2:
        raise ShapeError(f"{kind} expects a rank-{d + 2} kernel, got {k.data.shape}")


def _check_bias(bias, f, name):
    if bias is None:
        return None
    bias = as_tensor(bias)
    if bias.data.shape != (f,):
        raise ShapeError(f"{name}: bias must be [{f}], got {bias.data.shape}")
    return bias


def _bias_grad(g, d):
    return g.sum(axis=(0,) + tuple(range(2, 2 + d)))


def _conv_nd(x, kernel, stride, padding, d, name, bias=None):
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_conv_args(x, kernel, d, name)
    if x.data.shape[1] != kernel.data.shape[1]:
        raise ShapeError(
            f"{name}: input has {x.data.shape[1]} channels, kernel takes {kernel.data.shape[1]}"
        )
    strides = _as_dims(stride, d, "stride")
    pads = _as_dims(padding, d, "padding")
    if any(s < 1 for s in strides) or any(p < 0 for p in pads):
        raise DomainError(f"{name}: stride must be >= 1 and padding >= 0")
    bias = _check_bias(bias, kernel.data.shape[0], name)
    out, _, col = _conv_forward(
        x.data, kernel.data, strides, pads, bias.data if bias is not None else None
    )
    xd, kd = x.data, kernel.data
    need_x, need_k = x.requires_grad, kernel.requires_grad
    saved = [col if need_k else None]

    def backward(g):
        gx = _conv_grad_input(g, kd, xd.shape, strides, pads) if need_x else None
        gk = None
        if need_k:
            gk = _grad_kernel_from_col(saved[0], g, kd.shape)
            saved[0] = None
        if bias is None:
            return gx, gk
        return gx, gk, _bias_grad(g, d)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_node(out, parents, backward)


def _conv_transpose_nd(x, kernel, stride, padding, d, name, bias=None):
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_conv_args(x, kernel, d, name)
    if x.data.shape[1] != kernel.data.shape[0]:
        raise ShapeError(
            f"{name}: input has {x.data.shape[1]} channels, kernel takes {kernel.data.shape[0]}"
        )
    strides = _as_dims(stride, d, "stride")
    pads = _as_dims(padding, d, "padding")
    if any(s < 1 for s in strides) or any(p < 0 for p in pads):
        raise DomainError(f"{name}: stride must be >= 1 and padding >= 0")
    bias = _check_bias(bias, kernel.data.shape[1], name)
    out, _ = _conv_transpose_forward(
        x.data, kernel.data, strides, pads, bias.data if bias is not None else None
    )
    xd, kd = x.data, kernel.data
    need_x, need_k = x.requires_grad, kernel.requires_grad

    def backward(g):
        gx = _conv_transpose_grad_input(g, kd, strides, pads) if need_x else None
        gk = _conv_transpose_grad_kernel(xd, g, kd.shape, strides, pads) if need_k else None
        if bias is None:
            return gx, gk
        return gx, gk, _bias_grad(g, d)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_node(out, parents, backward)


def conv2d(x, kernel, stride=1, padding=0, bias=None):
    """x: [N, C, H, W], kernel: [F, C, kh, kw]. Cross-correlation."""
    return _conv_nd(x, kernel, stride, padding, 2, "conv2d", bias)


def conv3d(x, kernel, stride=1, padding=0, bias=None):
    """x: [N, C, T, H, W], kernel: [F, C, kt, kh, kw]."""
    return _conv_nd(x, kernel, stride, padding, 3, "conv3d", bias)


def conv_transpose2d(x, kernel, stride=1, padding=0, bias=None):
    """x: [N, C, H, W], kernel: [C, F, kh, kw]. Exact adjoint of conv2d."""
    return _conv_transpose_nd(x, kernel, stride, padding, 2, "conv_transpose2d", bias)


def conv_transpose3d(x, kernel, stride=1, padding=0, bias=None):
    """x: [N, C, T, H, W], kernel: [C, F, kt, kh, kw]."""
    return _conv_transpose_nd(x, kernel, stride, padding, 3, "conv_transpose3d", bias)


# ---------------------------------------------------------------------------
# region crops


def _bilinear_axis(coords, extent):
    low = np.floor(coords - 0.5)
    frac = coords - 0.5 - low
    i0 = np.clip(low.astype(np.int64), 0, extent - 1)
    i1 = np.clip(low.astype(np.int64) + 1, 0, extent - 1)
    return i0, i1, frac


def roi_crop_batch(fmap, boxes, index, out_extent, scale=1.0):
    """Bilinear box resampling over a batch of feature maps.

    fmap: [N, C, T, Hf, Wf] Tensor; boxes: [M, T, 4] float (x0, y0, x1, y1) in
    input coordinates; index: [M] int rows into fmap. One sample per output
    bin, taken at the bin center; samples outside the map clamp to the border.
    Returns [M, C, T, out_extent, out_extent].
    """
    fmap = as_tensor(fmap)
    if fmap.data.ndim != 5:
        raise ShapeError(f"roi_crop_batch expects [N, C, T, H, W], got {fmap.data.shape}")
    boxes = np.asarray(boxes, dtype=np.float64)
    index = np.asarray(index, dtype=np.int64)
    m = boxes.shape[0]
    n, c, t, hf, wf = fmap.data.shape
    if boxes.shape != (m, t, 4):
        raise ShapeError(f"boxes must be [M, {t}, 4], got {boxes.shape}")
    if index.shape != (m,) or (m and (index.min() < 0 or index.max() >= n)):
        raise ShapeError("index must hold valid rows into fmap")
    out_extent = int(out_extent)
    if out_extent < 1:
        raise DomainError("out_extent must be >= 1")
    fb = boxes * float(scale)
    if np.any(fb[..., 2] <= fb[..., 0]) or np.any(fb[..., 3] <= fb[..., 1]):
        raise DomainError("every box needs positive width and height")

    bins = (np.arange(out_extent) + 0.5) / out_extent
    # centers: [M, T, out]
    cx = fb[..., 0:1] + bins * (fb[..., 2:3] - fb[..., 0:1])
    cy = fb[..., 1:2] + bins * (fb[..., 3:4] - fb[..., 1:2])
    x0, x1, wx = _bilinear_axis(cx, wf)
    y0, y1, wy = _bilinear_axis(cy, hf)

    seq = index[:, None, None, None]
    tt = np.arange(t)[None, :, None, None]
    ya = y0[:, :, :, None]
    yb = y1[:, :, :, None]
    xa = x0[:, :, None, :]
    xb = x1[:, :, None, :]
    fy = wy[:, :, :, None]
    fx = wx[:, :, None, :]

    src = np.moveaxis(fmap.data, 1, -1)  # [N, T, Hf, Wf, C]
    v00 = src[seq, tt, ya, xa]
    v01 = src[seq, tt, ya, xb]
    v10 = src[seq, tt, yb, xa]
    v11 = src[seq, tt, yb, xb]
    w00 = ((1 - fy) * (1 - fx))[..., None]
    w01 = ((1 - fy) * fx)[..., None]
    w10 = (fy * (1 - fx))[..., None]
    w11 = (fy * fx)[..., None]
    gathered = v00 * w00 + v01 * w01 + v10 * w10 + v11 * w11
    out = np.ascontiguousarray(np.moveaxis(gathered, -1, 1))

    def backward(g):
        gm = np.moveaxis(g, 1, -1)  # [M, T, out, out, C]
        plane = np.arange(c)
        base = (seq * t + tt) * hf
        idx_parts = []
        val_parts = []
        for yi, xi, wgt in ((ya, xa, w00), (ya, xb, w01), (yb, xa, w10), (yb, xb, w11)):
            cell = ((base + yi) * wf + xi)[..., None] * c + plane
            idx_parts.append(cell.reshape(-1))
            val_parts.append((gm * wgt).reshape(-1))
        flat = np.bincount(
            np.concatenate(idx_parts),
            weights=np.concatenate(val_parts),
            minlength=n * t * hf * wf * c,
        )
        gsrc = flat.reshape(n, t, hf, wf, c)
        return (np.ascontiguousarray(np.moveaxis(gsrc, -1, 1)),)

    return make_node(out, (fmap,), backward)


def roi_crop(fmap, box, out_extent, scale=1.0):
    """Single-map variant: fmap [C, Hf, Wf], box [4] -> [C, out, out]."""
    fmap = as_tensor(fmap)
    if fmap.data.ndim != 3:
        raise ShapeError(f"roi_crop expects [C, H, W], got {fmap.data.shape}")
    c, hf, wf = fmap.data.shape
    wide = reshape(fmap, (1, c, 1, hf, wf))
    box = np.asarray(box, dtype=np.float64).reshape(1, 1, 4)
    out = roi_crop_batch(wide, box, np.zeros(1, dtype=np.int64), out_extent, scale)
    return reshape(out, (c, int(out_extent), int(out_extent)))


def cosine_similarity(u, v):
    """u, v: [D]. Returns a scalar Tensor in [-1, 1]."""
    u, v = as_tensor(u), as_tensor(v)
    if u.data.ndim != 1 or v.data.ndim != 1 or u.data.shape != v.data.shape:
        raise ShapeError(f"cosine_similarity expects matching vectors, got {u.data.shape} and {v.data.shape}")
    nu = float(np.sqrt(u.data @ u.data))
    nv = float(np.sqrt(v.data @ v.data))
    if nu == 0.0 or nv == 0.0:
        raise DomainError("cosine_similarity is undefined for zero-norm vectors")
    dot = float(u.data @ v.data)
    out = np.array(dot / (nu * nv))

    def backward(g):
        gu = g * (v.data / (nu * nv) - (dot / (nu**3 * nv)) * u.data)
        gv = g * (u.data / (nu * nv) - (dot / (nu * nv**3)) * v.data)
        return gu, gv

    return make_node(out, (u, v), backward)


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred, target):
    """Mean of squared differences over every element."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse_loss shape mismatch: {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    out = np.array((diff * diff).mean())
    count = diff.size

    def backward(g):
        gp = (2.0 / count) * g * diff
        return gp, -gp

    return make_node(out, (pred, target), backward)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood; labels are int class ids, not one-hot."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects [N, K] logits, got {logits.data.shape}")
    nrows, k = logits.data.shape
    if labels.shape != (nrows,):
        raise ShapeError(f"labels must be [N], got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DomainError(f"labels must lie in [0, {k})")
    labels = labels.astype(np.int64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(denom)
    out = np.array(-logp[np.arange(nrows), labels].mean())
    probs = ez / denom

    def backward(g):
        gl = probs.copy()
        gl[np.arange(nrows), labels] -= 1.0
        return ((g / nrows) * gl,)

    return make_node(out, (logits,), backward)


def info_nce(z, temperature, variant="symmetric"):
    """Noise-contrastive pair loss over interleaved views.

    z: [2N, D] with unit rows (checked to 1e-6); rows 2i and 2i+1 are the two
    views of item i. Each anchor scores its partner against the other 2N - 2
    rows plus the partner itself; the anchor's own row never enters the
    denominator. variant "paper" reads anchors off even rows only,
    "symmetric" off all rows.
    """
    z = as_tensor(z)
    if z.data.ndim != 2 or z.data.shape[0] % 2 != 0 or z.data.shape[0] == 0:
        raise ShapeError(f"info_nce expects [2N, D] with N >= 1, got {z.data.shape}")
    t = float(temperature)
    if t <= 0.0:
        raise DomainError(f"temperature must be positive, got {t}")
    if variant not in ("paper", "symmetric"):
        raise DomainError(f"unknown variant {variant!r}")
    rows = z.data.shape[0]
    norms = np.sqrt((z.data * z.data).sum(axis=1))
    if np.any(np.abs(norms - 1.0) > 1e-6):
        worst = float(np.abs(norms - 1.0).max())
        raise DomainError(f"info_nce needs unit rows; worst norm deviation {worst:.3e}")

    sim = (z.data @ z.data.T) / t
    partner = np.arange(rows) ^ 1
    if variant == "paper":
        anchors = np.arange(0, rows, 2)
    else:
        anchors = np.arange(rows)
    a = anchors.size

    s = sim[anchors].copy()
    s[np.arange(a), anchors] = -np.inf  # own row is excluded everywhere
    smax = s.max(axis=1, keepdims=True)
    es = np.exp(s - smax)
    denom = es.sum(axis=1)
    lse = smax[:, 0] + np.log(denom)
    pos = sim[anchors, partner[anchors]]
    val = float((lse - pos).mean())
    if val < -1e-9:
        raise DomainError(f"pair loss evaluated to {val}, below zero")
    out = np.array(max(val, 0.0))

    softmax = es / denom[:, None]

    def backward(g):
        coef = np.zeros((rows, rows))
        coef[anchors] = softmax
        coef[anchors, partner[anchors]] -= 1.0
        coef /= a * t
        gz = (coef + coef.T) @ z.data
        return (g * gz,)

    return make_node(out, (z,), backward)
