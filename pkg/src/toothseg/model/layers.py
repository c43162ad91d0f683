"""NumPy layers with explicit forward/backward passes.

Every layer caches what its backward pass needs during forward; a cache is
valid for exactly one backward call. Gradients accumulate into `grads`
(zeroed by the optimizer at the start of each step). All heavy lifting is
routed through BLAS matmuls.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..degrade import _interp_matrix


class Module:
    """Minimal parameter container with named children."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.children: dict[str, "Module"] = {}

    def add_param(self, name, value):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def add_buffer(self, name, value):
        self.buffers[name] = value
        return value

    def add_child(self, name, module):
        self.children[name] = module
        return module

    def named_parameters(self, prefix=""):
        for n, v in self.params.items():
            yield prefix + n, v
        for cn, child in self.children.items():
            yield from child.named_parameters(f"{prefix}{cn}.")

    def named_grads(self, prefix=""):
        for n, v in self.grads.items():
            yield prefix + n, v
        for cn, child in self.children.items():
            yield from child.named_grads(f"{prefix}{cn}.")

    def named_buffers(self, prefix=""):
        for n, v in self.buffers.items():
            yield prefix + n, v
        for cn, child in self.children.items():
            yield from child.named_buffers(f"{prefix}{cn}.")

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0
        for child in self.children.values():
            child.zero_grads()


def he_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv3x3(Module):
    """3x3 convolution, stride 1, zero padding 1 (shape preserving)."""

    def __init__(self, cin, cout, rng, dtype):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.add_param("w", he_uniform(rng, (cout, cin, 3, 3), cin * 9, dtype))
        self.add_param("b", np.zeros(cout, dtype=dtype))
        self._cols = None

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (n,c,h,w,3,3)
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
        self._cols = cols
        self._in_hw = (h, w)
        wmat = self.params["w"].reshape(self.cout, -1)
        out = cols.reshape(n * h * w, -1) @ wmat.T + self.params["b"]
        return np.ascontiguousarray(out.reshape(n, h, w, self.cout).transpose(0, 3, 1, 2))

    def backward(self, dy):
        n, k, h, w = dy.shape
        dy_mat = dy.transpose(0, 2, 3, 1).reshape(n * h * w, k)
        cols_mat = self._cols.reshape(n * h * w, -1)
        self.grads["w"] += (dy_mat.T @ cols_mat).reshape(self.params["w"].shape)
        self.grads["b"] += dy_mat.sum(axis=0)
        wmat = self.params["w"].reshape(self.cout, -1)
        dcols = (dy_mat @ wmat).reshape(n, h, w, self.cin, 3, 3)
        dxp = np.zeros((n, self.cin, h + 2, w + 2), dtype=dy.dtype)
        for ki in range(3):
            for kj in range(3):
                dxp[:, :, ki : ki + h, kj : kj + w] += dcols[:, :, :, :, ki, kj].transpose(
                    0, 3, 1, 2
                )
        self._cols = None
        return dxp[:, :, 1 : 1 + h, 1 : 1 + w]


class Conv1x1(Module):
    def __init__(self, cin, cout, rng, dtype):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.add_param("w", he_uniform(rng, (cout, cin), cin, dtype))
        self.add_param("b", np.zeros(cout, dtype=dtype))

    def forward(self, x, train=False):
        self._x = x
        out = np.tensordot(x, self.params["w"], axes=([1], [1]))  # (n,h,w,cout)
        out += self.params["b"]
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(self, dy):
        self.grads["w"] += np.tensordot(dy, self._x, axes=([0, 2, 3], [0, 2, 3]))
        self.grads["b"] += dy.sum(axis=(0, 2, 3))
        dx = np.tensordot(dy, self.params["w"], axes=([1], [0]))
        self._x = None
        return np.ascontiguousarray(dx.transpose(0, 3, 1, 2))


class Norm2d(Module):
    """Batch normalization with running statistics, or group normalization
    (for batch-size-1 inference) behind the same interface."""

    def __init__(self, channels, kind="batch", dtype=np.float32, momentum=0.1, eps=1e-5):
        super().__init__()
        if kind not in ("batch", "group"):
            raise ValueError(f"unknown norm kind {kind!r}")
        self.kind = kind
        self.c = channels
        self.momentum = momentum
        self.eps = eps
        self.groups = int(np.gcd(channels, 8))
        self.add_param("gamma", np.ones(channels, dtype=dtype))
        self.add_param("beta", np.zeros(channels, dtype=dtype))
        if kind == "batch":
            self.add_buffer("running_mean", np.zeros(channels, dtype=dtype))
            self.add_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x, train=False):
        if self.kind == "group":
            return self._forward_group(x)
        g = self.params["gamma"][None, :, None, None]
        b = self.params["beta"][None, :, None, None]
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm[...] = (1 - self.momentum) * rm + self.momentum * mean
            rv[...] = (1 - self.momentum) * rv + self.momentum * var
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        invstd = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * invstd[None, :, None, None]
        self._cache = (xhat, invstd, train)
        return g * xhat + b

    def backward(self, dy):
        if self.kind == "group":
            return self._backward_group(dy)
        xhat, invstd, train = self._cache
        self.grads["gamma"] += (dy * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] += dy.sum(axis=(0, 2, 3))
        dxhat = dy * self.params["gamma"][None, :, None, None]
        if not train:
            self._cache = None
            return dxhat * invstd[None, :, None, None]
        n, c, h, w = dy.shape
        m = n * h * w
        s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dx = (invstd[None, :, None, None] / m) * (m * dxhat - s1 - xhat * s2)
        self._cache = None
        return dx

    def _forward_group(self, x):
        n, c, h, w = x.shape
        gs = c // self.groups
        xg = x.reshape(n, self.groups, gs, h, w)
        mean = xg.mean(axis=(2, 3, 4), keepdims=True)
        var = xg.var(axis=(2, 3, 4), keepdims=True)
        invstd = 1.0 / np.sqrt(var + self.eps)
        xhat = ((xg - mean) * invstd).reshape(n, c, h, w)
        self._cache = (xhat, invstd)
        g = self.params["gamma"][None, :, None, None]
        b = self.params["beta"][None, :, None, None]
        return g * xhat + b

    def _backward_group(self, dy):
        xhat, invstd = self._cache
        n, c, h, w = dy.shape
        gs = c // self.groups
        self.grads["gamma"] += (dy * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] += dy.sum(axis=(0, 2, 3))
        dxhat = (dy * self.params["gamma"][None, :, None, None]).reshape(
            n, self.groups, gs, h, w
        )
        xhatg = xhat.reshape(n, self.groups, gs, h, w)
        m = gs * h * w
        s1 = dxhat.sum(axis=(2, 3, 4), keepdims=True)
        s2 = (dxhat * xhatg).sum(axis=(2, 3, 4), keepdims=True)
        dx = (invstd / m) * (m * dxhat - s1 - xhatg * s2)
        self._cache = None
        return dx.reshape(n, c, h, w)


class ReLU(Module):
    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        dx = dy * self._mask
        self._mask = None
        return dx


class Sigmoid(Module):
    def forward(self, x, train=False):
        out = 1.0 / (1.0 + np.exp(-x))
        self._out = out
        return out

    def backward(self, dy):
        dx = dy * self._out * (1.0 - self._out)
        self._out = None
        return dx


class MaxPool2(Module):
    """2x2 max pooling, stride 2. Ties break toward the first element,
    keeping backward deterministic."""

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        r = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        r = r.reshape(n, c, h // 2, w // 2, 4)
        self._idx = r.argmax(axis=-1)
        self._in_shape = x.shape
        return np.take_along_axis(r, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        n, c, h, w = self._in_shape
        d4 = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(d4, self._idx[..., None], dy[..., None], axis=-1)
        dx = d4.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        self._idx = None
        return np.ascontiguousarray(dx.reshape(n, c, h, w))


class BilinearUp2(Module):
    """2x corner-aligned bilinear upsampling (fixed linear operator)."""

    def __init__(self, dtype):
        super().__init__()
        self.dtype = dtype
        self._mats: dict[tuple[int, int], np.ndarray] = {}

    def _mat(self, src):
        key = (src, 2 * src)
        if key not in self._mats:
            self._mats[key] = _interp_matrix(src, 2 * src).astype(self.dtype)
        return self._mats[key]

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        uh, uw = self._mat(h), self._mat(w)
        self._hw = (h, w)
        return np.matmul(np.matmul(uh, x), uw.T)

    def backward(self, dy):
        h, w = self._hw
        uh, uw = self._mat(h), self._mat(w)
        return np.matmul(np.matmul(uh.T, dy), uw)


def avg_pool(x, factor):
    if factor == 1:
        return x
    n, c, h, w = x.shape
    return x.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))


def avg_pool_adjoint(dy, factor):
    """Adjoint of `avg_pool`: spread each pooled gradient uniformly."""
    if factor == 1:
        return dy
    n, c, gh, gw = dy.shape
    d = np.broadcast_to(
        dy[:, :, :, None, :, None] / (factor * factor),
        (n, c, gh, factor, gw, factor),
    )
    return np.ascontiguousarray(d).reshape(n, c, gh * factor, gw * factor)


def nearest_broadcast(x, factor):
    """Replicate each cell over a factor x factor block."""
    if factor == 1:
        return x
    n, c, gh, gw = x.shape
    d = np.broadcast_to(x[:, :, :, None, :, None], (n, c, gh, factor, gw, factor))
    return np.ascontiguousarray(d).reshape(n, c, gh * factor, gw * factor)


def nearest_broadcast_adjoint(dy, factor):
    if factor == 1:
        return dy
    n, c, h, w = dy.shape
    return dy.reshape(n, c, h // factor, factor, w // factor, factor).sum(axis=(3, 5))


def softmax_lastaxis(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(a, da):
    return a * (da - (da * a).sum(axis=-1, keepdims=True))


class Linear(Module):
    def __init__(self, fin, fout, rng, dtype):
        super().__init__()
        self.add_param("w", he_uniform(rng, (fout, fin), fin, dtype))
        self.add_param("b", np.zeros(fout, dtype=dtype))

    def forward(self, x, train=False):
        self._x = x
        return x @ self.params["w"].T + self.params["b"]

    def backward(self, dy):
        self.grads["w"] += dy.T @ self._x
        self.grads["b"] += dy.sum(axis=0)
        dx = dy @ self.params["w"]
        self._x = None
        return dx


class SqueezeExcite(Module):
    """Channel gating: global average pool, bottleneck MLP, sigmoid scale."""

    def __init__(self, channels, reduction, rng, dtype):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.add_child("fc1", Linear(channels, hidden, rng, dtype))
        self.add_child("fc2", Linear(hidden, channels, rng, dtype))

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        s = x.mean(axis=(2, 3))
        z1 = self.children["fc1"].forward(s)
        a1 = np.maximum(z1, 0.0)
        z2 = self.children["fc2"].forward(a1)
        gate = 1.0 / (1.0 + np.exp(-z2))
        self._cache = (x, z1, a1, gate)
        return x * gate[:, :, None, None]

    def backward(self, dy):
        x, z1, a1, gate = self._cache
        n, c, h, w = x.shape
        dgate = (dy * x).sum(axis=(2, 3))
        dx = dy * gate[:, :, None, None]
        dz2 = dgate * gate * (1.0 - gate)
        da1 = self.children["fc2"].backward(dz2)
        dz1 = da1 * (z1 > 0)
        ds = self.children["fc1"].backward(dz1)
        dx += (ds / (h * w))[:, :, None, None]
        self._cache = None
        return dx


class ChannelCrossFusion(Module):
    """Skip fusion by cross attention over channel tokens.

    Both feature maps are patch-averaged so every channel becomes one token
    vector of fixed length. Two attention directions are computed (encoder
    tokens querying decoder tokens and vice versa), each mixed down to the
    decoder channel count, summed, and broadcast back onto the decoder grid.
    """

    def __init__(self, c_enc, c_dec, token_len, patch, rng, dtype):
        super().__init__()
        self.c_enc, self.c_dec = c_enc, c_dec
        self.patch = patch
        self.scale = 1.0 / np.sqrt(token_len)
        d = token_len
        eye = np.eye(d, dtype=dtype)
        for name in ("wq_e", "wk_e", "wv_e", "wq_d", "wk_d", "wv_d"):
            self.add_param(name, eye + 0.01 * rng.standard_normal((d, d)).astype(dtype))
        self.add_param("mix_e", (0.02 * rng.standard_normal((c_dec, c_enc))).astype(dtype))
        self.add_param("mix_d", (0.02 * rng.standard_normal((c_dec, c_dec))).astype(dtype))

    def _tokens(self, x):
        n, c, h, w = x.shape
        if h % self.patch or w % self.patch:
            raise ValueError(
                f"patch {self.patch} does not divide feature map {h}x{w}"
            )
        t = avg_pool(x, self.patch)
        self._grid = t.shape[2:]
        return t.reshape(n, c, -1)

    def forward(self, enc, dec, train=False):
        p = self.params
        n, cd, hd, wd = dec.shape
        if enc.shape[2] < hd or enc.shape[2] % hd or enc.shape[3] % wd:
            raise ValueError(
                f"encoder grid {enc.shape[2:]} not a multiple of decoder grid {dec.shape[2:]}"
            )
        factor = enc.shape[2] // hd
        enc_p = avg_pool(enc, factor)
        te = self._tokens(enc_p)
        td = self._tokens(dec)
        q1 = te @ p["wq_e"]
        k1 = td @ p["wk_e"]
        v1 = td @ p["wv_e"]
        a1 = softmax_lastaxis(q1 @ k1.transpose(0, 2, 1) * self.scale)
        h1 = a1 @ v1
        e_hat = np.einsum("oc,ncd->nod", p["mix_e"], h1)
        q2 = td @ p["wq_d"]
        k2 = te @ p["wk_d"]
        v2 = te @ p["wv_d"]
        a2 = softmax_lastaxis(q2 @ k2.transpose(0, 2, 1) * self.scale)
        h2 = a2 @ v2
        d_hat = np.einsum("oc,ncd->nod", p["mix_d"], h2)
        o_tok = (e_hat + d_hat).reshape(n, cd, *self._grid)
        self._cache = (enc.shape, dec.shape, factor, te, td, q1, k1, v1, a1, h1, q2, k2, v2, a2, h2)
        self.last_attention = (a1, a2)
        return nearest_broadcast(o_tok, self.patch)

    def backward(self, dy):
        p = self.params
        (enc_shape, dec_shape, factor, te, td, q1, k1, v1, a1, h1, q2, k2, v2, a2, h2) = self._cache
        n, cd, hd, wd = dec_shape
        do_tok = nearest_broadcast_adjoint(dy, self.patch).reshape(n, cd, -1)

        # direction 1 (encoder queries)
        self.grads["mix_e"] += np.einsum("nod,ncd->oc", do_tok, h1)
        dh1 = np.einsum("oc,nod->ncd", p["mix_e"], do_tok)
        da1 = dh1 @ v1.transpose(0, 2, 1)
        dv1 = a1.transpose(0, 2, 1) @ dh1
        dlog1 = softmax_backward(a1, da1) * self.scale
        dq1 = dlog1 @ k1
        dk1 = dlog1.transpose(0, 2, 1) @ q1
        dte = dq1 @ p["wq_e"].T
        dtd = dk1 @ p["wk_e"].T + dv1 @ p["wv_e"].T
        self.grads["wq_e"] += np.einsum("ncd,nce->de", te, dq1)
        self.grads["wk_e"] += np.einsum("ncd,nce->de", td, dk1)
        self.grads["wv_e"] += np.einsum("ncd,nce->de", td, dv1)

        # direction 2 (decoder queries)
        self.grads["mix_d"] += np.einsum("nod,ncd->oc", do_tok, h2)
        dh2 = np.einsum("oc,nod->ncd", p["mix_d"], do_tok)
        da2 = dh2 @ v2.transpose(0, 2, 1)
        dv2 = a2.transpose(0, 2, 1) @ dh2
        dlog2 = softmax_backward(a2, da2) * self.scale
        dq2 = dlog2 @ k2
        dk2 = dlog2.transpose(0, 2, 1) @ q2
        dtd += dq2 @ p["wq_d"].T
        dte += dk2 @ p["wk_d"].T + dv2 @ p["wv_d"].T
        self.grads["wq_d"] += np.einsum("ncd,nce->de", td, dq2)
        self.grads["wk_d"] += np.einsum("ncd,nce->de", te, dk2)
        self.grads["wv_d"] += np.einsum("ncd,nce->de", te, dv2)

        gh, gw = self._grid
        ddec = avg_pool_adjoint(dtd.reshape(n, cd, gh, gw), self.patch)
        denc_p = avg_pool_adjoint(dte.reshape(n, self.c_enc, gh, gw), self.patch)
        denc = avg_pool_adjoint(denc_p, factor)
        self._cache = None
        return denc, ddec


class PlainSkip(Module):
    """Degenerate skip used when cross fusion is disabled: align the encoder
    map to the decoder grid and project channels with a 1x1 convolution."""

    def __init__(self, c_enc, c_dec, rng, dtype):
        super().__init__()
        self.add_child("proj", Conv1x1(c_enc, c_dec, rng, dtype))

    def forward(self, enc, dec, train=False):
        factor = enc.shape[2] // dec.shape[2]
        self._factor = factor
        self._dec_shape = dec.shape
        return self.children["proj"].forward(avg_pool(enc, factor), train)

    def backward(self, dy):
        denc_p = self.children["proj"].backward(dy)
        # The decoder map is not consumed by a plain skip.
        return avg_pool_adjoint(denc_p, self._factor), np.zeros(self._dec_shape, dtype=dy.dtype)


class ConvBlock(Module):
    """conv3x3 -> norm -> ReLU, twice."""

    def __init__(self, cin, cout, rng, dtype, norm="batch"):
        super().__init__()
        self.add_child("conv1", Conv3x3(cin, cout, rng, dtype))
        self.add_child("norm1", Norm2d(cout, norm, dtype))
        self.add_child("relu1", ReLU())
        self.add_child("conv2", Conv3x3(cout, cout, rng, dtype))
        self.add_child("norm2", Norm2d(cout, norm, dtype))
        self.add_child("relu2", ReLU())
        self._order = ["conv1", "norm1", "relu1", "conv2", "norm2", "relu2"]

    def forward(self, x, train=False):
        for name in self._order:
            x = self.children[name].forward(x, train)
        return x

    def backward(self, dy):
        for name in reversed(self._order):
            dy = self.children[name].backward(dy)
        return dy
