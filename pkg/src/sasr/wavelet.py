"""Orthonormal 2-D Daubechies wavelet transform with periodic extension.

The 8-tap scaling filter has 4 vanishing moments. Its values are frozen
here from an offline spectral factorization of the product filter; the
test suite validates them against the defining conditions (sum sqrt(2),
unit energy, orthogonal even shifts, vanishing moments) instead of
comparing against any tabulated reference.

Analysis correlates with the filters at even offsets under circular
indexing; synthesis is the transpose, which for an orthonormal bank is
the exact inverse. Both energy (Parseval) and perfect reconstruction
hold to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

# Daubechies scaling filter, 4 vanishing moments, 8 taps.
LO = np.array(
    [
        -0.01059740178506903210488321,
        0.03288301166688519973540751,
        0.03084138183556076362721936,
        -0.18703481171909308407957067,
        -0.02798376941685985421141375,
        0.63088076792985890788171633,
        0.71484657055291564708992195,
        0.23037781330889650086329118,
    ]
)
HI = ((-1.0) ** np.arange(8)) * LO[::-1]

LEVELS_DEFAULT = 3


@dataclass(frozen=True)
class DWTPyramid:
    """Multi-level 2-D DWT: one approximation block plus detail bands.

    ``details[i]`` holds the (lh, hl, hh) bands of level i + 1; band
    arrays at level k have shape (H / 2^k, W / 2^k). ``approx`` is the
    approximation at the coarsest level. Total coefficient count equals
    the input pixel count.
    """

    approx: np.ndarray
    details: tuple

    @property
    def levels(self):
        return len(self.details)


def _analysis_1d(x: np.ndarray, axis: int):
    """One circular analysis step along ``axis``; returns (lo, hi)."""
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    if n % 2 != 0:
        raise DataError(f"axis length must be even for the DWT, got {n}")
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(LO.size)[None, :]) % n
    windows = x[..., idx]  # (..., n/2, taps)
    lo = windows @ LO
    hi = windows @ HI
    return np.moveaxis(lo, -1, axis), np.moveaxis(hi, -1, axis)


def _synthesis_1d(lo: np.ndarray, hi: np.ndarray, axis: int):
    """Transpose of :func:`_analysis_1d` (its inverse, by orthonormality)."""
    lo = np.moveaxis(lo, axis, -1)
    hi = np.moveaxis(hi, axis, -1)
    n = 2 * lo.shape[-1]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(LO.size)[None, :]) % n
    out = np.zeros(lo.shape[:-1] + (n,), dtype=np.float64)
    contrib = lo[..., None] * LO + hi[..., None] * HI  # (..., n/2, taps)
    flat_idx = idx.ravel()
    np.add.at(out, (..., flat_idx), contrib.reshape(contrib.shape[:-2] + (-1,)))
    return np.moveaxis(out, -1, axis)


def dwt2(image: np.ndarray, levels: int = LEVELS_DEFAULT) -> DWTPyramid:
    """Separable multi-level 2-D DWT of one image (in-plane axes last).

    Requires both in-plane sizes divisible by 2**levels.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim < 2:
        raise DataError(f"dwt2 needs at least 2-D input, got shape {img.shape}")
    h, w = img.shape[-2], img.shape[-1]
    if levels < 1:
        raise DataError(f"levels must be >= 1, got {levels}")
    if h % (1 << levels) or w % (1 << levels):
        raise DataError(
            f"image size {h}x{w} not divisible by 2^{levels}; cannot run {levels} levels"
        )
    details = []
    approx = img
    for _ in range(levels):
        lo_w, hi_w = _analysis_1d(approx, -1)
        ll, lh = _analysis_1d(lo_w, -2)
        hl, hh = _analysis_1d(hi_w, -2)
        details.append((lh, hl, hh))
        approx = ll
    return DWTPyramid(approx, tuple(details))


def idwt2(pyr: DWTPyramid) -> np.ndarray:
    """Inverse of :func:`dwt2`."""
    approx = pyr.approx
    for lh, hl, hh in reversed(pyr.details):
        lo_w = _synthesis_1d(approx, lh, -2)
        hi_w = _synthesis_1d(hl, hh, -2)
        approx = _synthesis_1d(lo_w, hi_w, -1)
    return approx


def detail_vector(image: np.ndarray, levels: int = LEVELS_DEFAULT) -> np.ndarray:
    """Detail coefficients flattened in (level, band) order.

    Leading axes before the in-plane pair are preserved, so a stack
    (..., H, W) yields (..., n_details).
    """
    pyr = dwt2(image, levels)
    lead = pyr.approx.shape[:-2]
    parts = []
    for lh, hl, hh in pyr.details:
        for band in (lh, hl, hh):
            parts.append(band.reshape(lead + (-1,)))
    return np.concatenate(parts, axis=-1)


def detail_adjoint(grad: np.ndarray, shape: tuple, levels: int = LEVELS_DEFAULT):
    """Adjoint of :func:`detail_vector`: synthesize with zero approximation."""
    h, w = shape
    lead = grad.shape[:-1]
    details = []
    pos = 0
    for k in range(1, levels + 1):
        bh, bw = h >> k, w >> k
        bands = []
        for _ in range(3):
            bands.append(grad[..., pos : pos + bh * bw].reshape(lead + (bh, bw)))
            pos += bh * bw
        details.append(tuple(bands))
    if pos != grad.shape[-1]:
        raise DataError(f"detail gradient length {grad.shape[-1]}, expected {pos}")
    approx = np.zeros(lead + (h >> levels, w >> levels), dtype=np.float64)
    return idwt2(DWTPyramid(approx, tuple(details)))


def band_weights(shape: tuple, levels: int = LEVELS_DEFAULT) -> np.ndarray:
    """Per-coefficient weights turning an L1 sum into per-band means."""
    h, w = shape
    parts = []
    for k in range(1, levels + 1):
        size = (h >> k) * (w >> k)
        parts.append(np.full(3 * size, 1.0 / size))
    return np.concatenate(parts)


def freq_loss(pred: np.ndarray, ref: np.ndarray, levels: int = LEVELS_DEFAULT) -> float:
    """Mean-normalized L1 distance between detail bands.

    Each image contributes sum over levels and bands of mean absolute
    coefficient difference; stacks (leading axes before the in-plane
    pair) are averaged over channels.
    """
    p = np.asarray(pred, dtype=np.float64)
    r = np.asarray(ref, dtype=np.float64)
    if p.shape != r.shape:
        raise DataError(f"shape mismatch in freq_loss: {p.shape} vs {r.shape}")
    flat_p = p.reshape(-1, p.shape[-2], p.shape[-1])
    flat_r = r.reshape(-1, r.shape[-2], r.shape[-1])
    weights = band_weights(p.shape[-2:], levels)
    diff = detail_vector(flat_p, levels) - detail_vector(flat_r, levels)
    return float(np.mean(np.abs(diff) @ weights))
