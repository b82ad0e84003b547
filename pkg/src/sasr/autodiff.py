"""Minimal reverse-mode automatic differentiation on numpy arrays.

Everything is double precision and deterministic: ops are plain
functions that compute values eagerly and, when a :class:`Tape` is
active and a differentiable input is involved, append a backward rule
to the tape. ``Tape.backward`` walks the recorded ops in reverse,
accumulating gradients into every ``requires_grad`` leaf. A tape serves
exactly one forward/backward pass.

Complex spectra are carried as real arrays with a leading length-2
re/im axis, so every op stays real-valued and the finite-difference
oracle applies uniformly.
"""

from __future__ import annotations

import threading

import numpy as np

from . import wavelet
from .errors import DataError, NumericalError, SasrError

_STATE = threading.local()


def _stack():
    if not hasattr(_STATE, "tapes"):
        _STATE.tapes = []
    return _STATE.tapes


_NAN_GUARD = False


def set_nan_guard(enabled: bool) -> bool:
    """Toggle per-op non-finite detection; returns the previous setting.

    The training loop turns this on so a diverging run fails loudly at
    the op that produced the first NaN/Inf instead of corrupting state.
    """
    global _NAN_GUARD
    previous = _NAN_GUARD
    _NAN_GUARD = bool(enabled)
    return previous


class DTensor:
    """A float64 array plus gradient bookkeeping."""

    __slots__ = ("values", "requires_grad", "grad", "_rec")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._rec = False

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"DTensor(shape={self.values.shape}{flag})"


class Tape:
    """Ordered record of executed ops for one forward/backward pass."""

    def __init__(self):
        self._nodes = []
        self._consumed = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _stack().pop()
        return False

    def backward(self, loss: DTensor):
        """Accumulate d(loss)/d(leaf) into every requires_grad leaf."""
        if self._consumed:
            raise SasrError("tape already consumed; build a new tape per pass")
        if loss.values.size != 1:
            raise SasrError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True
        grads = {id(loss): np.ones_like(loss.values)}
        for out, parents, rule in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, rule(g)):
                if pg is None:
                    continue
                if parent.requires_grad:
                    parent.grad = pg if parent.grad is None else parent.grad + pg
                elif parent._rec:
                    key = id(parent)
                    grads[key] = pg if key not in grads else grads[key] + pg
        self._nodes.clear()


def _as_dt(x) -> DTensor:
    return x if isinstance(x, DTensor) else DTensor(x)


def _finish(name: str, out: DTensor, parents: tuple, rule):
    if _NAN_GUARD and not np.all(np.isfinite(out.values)):
        raise NumericalError(f"non-finite values produced by op '{name}'")
    tapes = _stack()
    if tapes and any(p.requires_grad or p._rec for p in parents):
        tape = tapes[-1]
        if tape._consumed:
            raise SasrError("tape already consumed; build a new tape per pass")
        out._rec = True
        tape._nodes.append((out, parents, rule))
    return out


def zero_grads(params):
    for p in params.values() if isinstance(params, dict) else params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# elementwise and shape ops


def add(a, b) -> DTensor:
    a, b = _as_dt(a), _as_dt(b)
    if a.shape != b.shape:
        raise DataError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = DTensor(a.values + b.values)
    return _finish("add", out, (a, b), lambda g: (g, g))


def sub(a, b) -> DTensor:
    a, b = _as_dt(a), _as_dt(b)
    if a.shape != b.shape:
        raise DataError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    out = DTensor(a.values - b.values)
    return _finish("sub", out, (a, b), lambda g: (g, -g))


def mul(a, b) -> DTensor:
    a, b = _as_dt(a), _as_dt(b)
    if a.shape != b.shape:
        raise DataError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    av, bv = a.values, b.values
    out = DTensor(av * bv)
    return _finish("mul", out, (a, b), lambda g: (g * bv, g * av))


def scale(x, k) -> DTensor:
    """Multiply by a constant scalar or broadcastable constant array."""
    x = _as_dt(x)
    kv = np.asarray(k, dtype=np.float64)
    out = DTensor(x.values * kv)
    if out.shape != x.shape:
        raise DataError(f"scale constant {kv.shape} does not preserve {x.shape}")
    return _finish("scale", out, (x,), lambda g: (g * kv,))


def relu(x) -> DTensor:
    x = _as_dt(x)
    mask = x.values > 0
    out = DTensor(np.where(mask, x.values, 0.0))
    return _finish("relu", out, (x,), lambda g: (g * mask,))


def matmul(a, b) -> DTensor:
    a, b = _as_dt(a), _as_dt(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DataError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values
    out = DTensor(av @ bv)
    return _finish("matmul", out, (a, b), lambda g: (g @ bv.T, av.T @ g))


def linear(x, w, b) -> DTensor:
    """Affine map of row vectors: x (P, in) -> x @ w.T + b with w (out, in)."""
    x, w, b = _as_dt(x), _as_dt(w), _as_dt(b)
    if x.values.ndim != 2 or w.values.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DataError(f"linear shapes incompatible: {x.shape} with w {w.shape}")
    if b.shape != (w.shape[0],):
        raise DataError(f"bias shape {b.shape} != ({w.shape[0]},)")
    xv, wv = x.values, w.values
    out = DTensor(xv @ wv.T + b.values)
    return _finish(
        "linear", out, (x, w, b), lambda g: (g @ wv, g.T @ xv, g.sum(axis=0))
    )


def concat(parts, axis: int = -1) -> DTensor:
    parts = [_as_dt(p) for p in parts]
    out = DTensor(np.concatenate([p.values for p in parts], axis=axis))
    sizes = [p.values.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, splits, axis=axis))

    return _finish("concat", out, tuple(parts), rule)


def reshape(x, shape) -> DTensor:
    x = _as_dt(x)
    old = x.shape
    out = DTensor(x.values.reshape(shape))
    return _finish("reshape", out, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes) -> DTensor:
    x = _as_dt(x)
    inv = tuple(np.argsort(axes))
    out = DTensor(np.transpose(x.values, axes))
    return _finish("transpose", out, (x,), lambda g: (np.transpose(g, inv),))


def take_plane(x, index: int, axis: int) -> DTensor:
    """Select one hyperplane, dropping the axis."""
    x = _as_dt(x)
    out = DTensor(np.take(x.values, index, axis=axis))
    shape = x.shape

    def rule(g):
        gx = np.zeros(shape, dtype=np.float64)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        gx[tuple(sl)] = g
        return (gx,)

    return _finish("take_plane", out, (x,), rule)


def repeat_plane(x, n: int, axis: int) -> DTensor:
    """Insert a new axis of length n by replication."""
    x = _as_dt(x)
    out = DTensor(np.repeat(np.expand_dims(x.values, axis), n, axis=axis))
    return _finish("repeat_plane", out, (x,), lambda g: (g.sum(axis=axis),))


# ---------------------------------------------------------------------------
# network ops


def conv3d(x, w, b) -> DTensor:
    """3-D convolution, stride 1, zero padding that preserves the size.

    x: (C_in, H, W, Z); w: (C_out, C_in, k, k, k) with k in {1, 3};
    b: (C_out,).
    """
    x, w, b = _as_dt(x), _as_dt(w), _as_dt(b)
    xv, wv, bv = x.values, w.values, b.values
    if xv.ndim != 4:
        raise DataError(f"conv3d input must be (C, H, W, Z), got {xv.shape}")
    if wv.ndim != 5 or wv.shape[2] != wv.shape[3] or wv.shape[3] != wv.shape[4]:
        raise DataError(f"conv3d weight must be (Co, Ci, k, k, k), got {wv.shape}")
    k = wv.shape[2]
    if k not in (1, 3):
        raise DataError(f"conv3d supports kernel sizes 1 and 3, got {k}")
    if wv.shape[1] != xv.shape[0]:
        raise DataError(f"conv3d channels: input {xv.shape[0]}, weight {wv.shape[1]}")
    if bv.shape != (wv.shape[0],):
        raise DataError(f"conv3d bias shape {bv.shape} != ({wv.shape[0]},)")

    cin, h, wdt, z = xv.shape
    cout = wv.shape[0]

    if k == 1:
        y = np.tensordot(wv[:, :, 0, 0, 0], xv, axes=(1, 0)) + bv[:, None, None, None]

        def rule(g):
            gw = np.tensordot(g, xv, axes=([1, 2, 3], [1, 2, 3]))
            gx = np.tensordot(wv[:, :, 0, 0, 0], g, axes=(0, 0))
            return (gx, gw.reshape(wv.shape), g.sum(axis=(1, 2, 3)))

        return _finish("conv3d", DTensor(y), (x, w, b), rule)

    xp = np.zeros((cin, h + 2, wdt + 2, z + 2), dtype=np.float64)
    xp[:, 1:-1, 1:-1, 1:-1] = xv
    y = np.empty((cout, h, wdt, z), dtype=np.float64)
    y[:] = bv[:, None, None, None]
    for a in range(3):
        for bb in range(3):
            for c in range(3):
                y += np.tensordot(
                    wv[:, :, a, bb, c],
                    xp[:, a : a + h, bb : bb + wdt, c : c + z],
                    axes=(1, 0),
                )

    def rule(g):
        gw = np.empty_like(wv)
        gxp = np.zeros_like(xp)
        for a in range(3):
            for bb in range(3):
                for c in range(3):
                    patch = xp[:, a : a + h, bb : bb + wdt, c : c + z]
                    gw[:, :, a, bb, c] = np.tensordot(
                        g, patch, axes=([1, 2, 3], [1, 2, 3])
                    )
                    gxp[:, a : a + h, bb : bb + wdt, c : c + z] += np.tensordot(
                        wv[:, :, a, bb, c], g, axes=(0, 0)
                    )
        return (gxp[:, 1:-1, 1:-1, 1:-1], gw, g.sum(axis=(1, 2, 3)))

    return _finish("conv3d", DTensor(y), (x, w, b), rule)


def bilinear_sample(fmap, coords: np.ndarray) -> DTensor:
    """Sample a (C, H, W) feature map at continuous [-1, 1]^2 coordinates.

    Coordinate (r, c) maps to the continuous pixel index
    ((r + 1) * H / 2 - 0.5, (c + 1) * W / 2 - 0.5), clamped to the valid
    interpolation range. Fractions within 1e-9 of an integer snap to it,
    so exact pixel centers return exactly that pixel's features.
    """
    fmap = _as_dt(fmap)
    fv = fmap.values
    if fv.ndim != 3:
        raise DataError(f"bilinear_sample expects (C, H, W), got {fv.shape}")
    pts = np.asarray(coords, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DataError(f"coords must be (P, 2), got {pts.shape}")
    _, h, w = fv.shape

    def split(axis_vals, n):
        cont = np.clip((axis_vals + 1.0) * n / 2.0 - 0.5, 0.0, n - 1.0)
        lo = np.floor(cont).astype(np.int64)
        lo = np.minimum(lo, n - 1)
        frac = cont - lo
        frac = np.where(frac < 1e-9, 0.0, frac)
        frac = np.where(frac > 1.0 - 1e-9, 1.0, frac)
        hi = np.minimum(lo + 1, n - 1)
        return lo, hi, frac

    i0, i1, fi = split(pts[:, 0], h)
    j0, j1, fj = split(pts[:, 1], w)
    w00 = (1.0 - fi) * (1.0 - fj)
    w01 = (1.0 - fi) * fj
    w10 = fi * (1.0 - fj)
    w11 = fi * fj
    vals = (
        fv[:, i0, j0] * w00
        + fv[:, i0, j1] * w01
        + fv[:, i1, j0] * w10
        + fv[:, i1, j1] * w11
    )  # (C, P)
    out = DTensor(vals.T)

    def rule(g):
        gf = np.zeros_like(fv)
        gt = g.T  # (C, P)
        np.add.at(gf, (slice(None), i0, j0), gt * w00)
        np.add.at(gf, (slice(None), i0, j1), gt * w01)
        np.add.at(gf, (slice(None), i1, j0), gt * w10)
        np.add.at(gf, (slice(None), i1, j1), gt * w11)
        return (gf,)

    return _finish("bilinear_sample", out, (fmap,), rule)


# ---------------------------------------------------------------------------
# spectral ops: complex data as a leading re/im axis of length 2


def fft2c(x) -> DTensor:
    """Centered 2-D DFT of real planes (..., H, W) -> (2, ..., H, W)."""
    x = _as_dt(x)
    xv = x.values
    if xv.ndim < 2:
        raise DataError(f"fft2c needs at least 2-D input, got {xv.shape}")
    spec = np.fft.fftshift(np.fft.fft2(xv, axes=(-2, -1)), axes=(-2, -1))
    out = DTensor(np.stack([spec.real, spec.imag]))
    n = xv.shape[-2] * xv.shape[-1]

    def rule(g):
        gc = g[0] + 1j * g[1]
        gx = np.fft.ifft2(np.fft.ifftshift(gc, axes=(-2, -1)), axes=(-2, -1)).real
        return (n * gx,)

    return _finish("fft2c", out, (x,), rule)


def ifft2c(c) -> DTensor:
    """Real part of the inverse centered 2-D DFT: (2, ..., H, W) -> (..., H, W)."""
    c = _as_dt(c)
    cv = c.values
    if cv.ndim < 3 or cv.shape[0] != 2:
        raise DataError(f"ifft2c needs (2, ..., H, W), got {cv.shape}")
    z = np.fft.ifft2(
        np.fft.ifftshift(cv[0] + 1j * cv[1], axes=(-2, -1)), axes=(-2, -1)
    ).real
    out = DTensor(z)

    def rule(g):
        wq = np.fft.fftshift(np.fft.ifft2(g, axes=(-2, -1)), axes=(-2, -1))
        return (np.stack([wq.real, -wq.imag]),)

    return _finish("ifft2c", out, (c,), rule)


def _nyquist_partner(n_big: int, n_small: int):
    if n_small % 2 == 1 or n_small >= n_big:
        return None
    return n_big // 2 + n_small // 2


def center_crop(x, target: tuple) -> DTensor:
    """Crop the centered window of the last two axes to ``target``.

    When the target size is even, the unpaired +Nyquist row/column is
    folded into the window's first row/column, matching the degradation
    operator's Hermitian-consistent spectrum crop.
    """
    x = _as_dt(x)
    xv = x.values
    h2, w2 = xv.shape[-2], xv.shape[-1]
    h1, w1 = int(target[0]), int(target[1])
    if h1 > h2 or w1 > w2:
        raise DataError(f"cannot crop {h2}x{w2} to {h1}x{w1}")
    r = slice(h2 // 2 - h1 // 2, h2 // 2 - h1 // 2 + h1)
    cidx = slice(w2 // 2 - w1 // 2, w2 // 2 - w1 // 2 + w1)
    rp, cp = _nyquist_partner(h2, h1), _nyquist_partner(w2, w1)
    rows = xv[..., r, :].copy()
    if rp is not None:
        rows[..., 0, :] += xv[..., rp, :]
    outv = rows[..., :, cidx].copy()
    if cp is not None:
        outv[..., :, 0] += rows[..., :, cp]
    out = DTensor(outv)
    shape = xv.shape

    def rule(g):
        wide = np.zeros(g.shape[:-1] + (w2,), dtype=np.float64)
        wide[..., :, cidx] = g
        if cp is not None:
            wide[..., :, cp] += g[..., :, 0]
        gx = np.zeros(shape, dtype=np.float64)
        gx[..., r, :] = wide
        if rp is not None:
            gx[..., rp, :] += wide[..., 0, :]
        return (gx,)

    return _finish("center_crop", out, (x,), rule)


def center_embed(x, target: tuple) -> DTensor:
    """Place the last two axes in the centered window of a larger grid.

    Even input sizes split the Nyquist row/column half-and-half onto
    the -n/2 and +n/2 positions of the larger grid, the transpose-
    consistent counterpart of the folding crop.
    """
    x = _as_dt(x)
    xv = x.values
    h1, w1 = xv.shape[-2], xv.shape[-1]
    h2, w2 = int(target[0]), int(target[1])
    if h1 > h2 or w1 > w2:
        raise DataError(f"cannot embed {h1}x{w1} into {h2}x{w2}")
    r = slice(h2 // 2 - h1 // 2, h2 // 2 - h1 // 2 + h1)
    cidx = slice(w2 // 2 - w1 // 2, w2 // 2 - w1 // 2 + w1)
    rp, cp = _nyquist_partner(h2, h1), _nyquist_partner(w2, w1)
    wide = np.zeros(xv.shape[:-1] + (w2,), dtype=np.float64)
    wide[..., :, cidx] = xv
    if cp is not None:
        half = 0.5 * xv[..., :, 0]
        wide[..., :, cidx.start] = half
        wide[..., :, cp] = half
    big = np.zeros(xv.shape[:-2] + (h2, w2), dtype=np.float64)
    big[..., r, :] = wide
    if rp is not None:
        half = 0.5 * wide[..., 0, :]
        big[..., r.start, :] = half
        big[..., rp, :] = half
    out = DTensor(big)

    def rule(g):
        gw = g[..., r, :].copy()
        if rp is not None:
            gw[..., 0, :] = 0.5 * (g[..., r.start, :] + g[..., rp, :])
        gx = gw[..., :, cidx].copy()
        if cp is not None:
            gx[..., :, 0] = 0.5 * (gw[..., :, cidx.start] + gw[..., :, cp])
        return (gx,)

    return _finish("center_embed", out, (x,), rule)


# ---------------------------------------------------------------------------
# losses


def l1_loss(x) -> DTensor:
    """Sum of absolute values, as a 0-d tensor."""
    x = _as_dt(x)
    xv = x.values
    out = DTensor(np.abs(xv).sum())
    return _finish("l1_loss", out, (x,), lambda g: (g * np.sign(xv),))


def wavelet_details(x, levels: int = wavelet.LEVELS_DEFAULT) -> DTensor:
    """Flattened DWT detail coefficients of (..., H, W) planes.

    Linear; the backward rule is the orthonormal synthesis of the
    gradient with a zeroed approximation band (the exact adjoint).
    """
    x = _as_dt(x)
    xv = x.values
    shape = xv.shape[-2:]
    out = DTensor(wavelet.detail_vector(xv, levels))

    def rule(g):
        return (wavelet.detail_adjoint(g, shape, levels),)

    return _finish("wavelet_details", out, (x,), rule)
