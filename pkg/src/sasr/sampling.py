"""Spatial degradation and angular subsampling operators.

The spatial operator D truncates the centered 2-D spectrum of each
in-plane slice: forward DFT, crop the central H1 x W1 block, scale by
(H1*W1)/(H2*W2), inverse DFT, real part. With that scaling the DC term
(the image mean) is preserved exactly. Z is its zero-filling transpose
up to the grid-size factor: <D x, y> * (H2*W2)/(H1*W1) = <x, Z y>.

All conventions are pinned to the centered layout with DC at index
floor(n/2) and crop windows [c - floor(k/2), c - floor(k/2) + k).

For an even crop size the window holds the -k/2 frequency but not its
+k/2 partner, so a plain window crop is not Hermitian-consistent and
Z o D would fail to be a projection. As in classic DFT interpolation,
the crop folds the +k/2 row/column into the -k/2 entry and the embed
splits it back half-and-half; with that completion D o Z is the exact
identity on LR images and the adjoint relation holds with no Nyquist
leakage. Odd sizes are unaffected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GradientTable, Volume4D
from .errors import ConfigurationError, DataError

SCALE_MIN = 2.0
SCALE_MAX = 4.0
MIN_LR_SIZE = 8


@dataclass(frozen=True)
class QSubset:
    """Indices of the sampled directions within a reference table."""

    indices: np.ndarray
    n_total: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if idx.size == 0:
            raise DataError("empty direction subset")
        if np.unique(idx).size != idx.size:
            raise DataError("direction subset has repeated indices")
        if idx.min() < 0 or idx.max() >= self.n_total:
            raise DataError(
                f"subset indices out of range [0, {self.n_total}): {idx.tolist()}"
            )
        object.__setattr__(self, "indices", np.sort(idx))

    def __len__(self):
        return self.indices.size


def check_scale(s: float) -> float:
    s = float(s)
    if not (SCALE_MIN <= s <= SCALE_MAX):
        raise ConfigurationError(
            f"scale factor must lie in [{SCALE_MIN}, {SCALE_MAX}], got {s}"
        )
    return s


def lr_size(n: int, s: float) -> int:
    """LR grid size round(n / s), with halves rounding up."""
    return int(np.floor(n / s + 0.5))


def _crop_slices(n_big: int, n_small: int):
    c = n_big // 2
    r0 = c - n_small // 2
    return slice(r0, r0 + n_small)


def _nyquist_partner(n_big: int, n_small: int):
    """Index of the +n_small/2 frequency, or None when no fold is needed."""
    if n_small % 2 == 1 or n_small >= n_big:
        return None
    return n_big // 2 + n_small // 2


def _crop_fold(spec: np.ndarray, h1: int, w1: int) -> np.ndarray:
    """Central block crop with the unpaired Nyquist partner folded in."""
    h2, w2 = spec.shape[-2], spec.shape[-1]
    rp, cp = _nyquist_partner(h2, h1), _nyquist_partner(w2, w1)
    rows = spec[..., _crop_slices(h2, h1), :].copy()
    if rp is not None:
        rows[..., 0, :] += spec[..., rp, :]
    block = rows[..., :, _crop_slices(w2, w1)].copy()
    if cp is not None:
        block[..., :, 0] += rows[..., :, cp]
    return block


def _embed_split(block: np.ndarray, h2: int, w2: int) -> np.ndarray:
    """Central block embed, splitting Nyquist content onto both partners."""
    h1, w1 = block.shape[-2], block.shape[-1]
    rp, cp = _nyquist_partner(h2, h1), _nyquist_partner(w2, w1)
    wide = np.zeros(block.shape[:-1] + (w2,), dtype=np.complex128)
    wide[..., :, _crop_slices(w2, w1)] = block
    if cp is not None:
        half = 0.5 * block[..., :, 0]
        wide[..., :, _crop_slices(w2, w1).start] = half
        wide[..., :, cp] = half
    big = np.zeros(block.shape[:-2] + (h2, w2), dtype=np.complex128)
    big[..., _crop_slices(h2, h1), :] = wide
    if rp is not None:
        half = 0.5 * wide[..., 0, :]
        big[..., _crop_slices(h2, h1).start, :] = half
        big[..., rp, :] = half
    return big


def _fft2c(img: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft2(img, axes=(-2, -1)), axes=(-2, -1))


def _ifft2c(spec: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(np.fft.ifftshift(spec, axes=(-2, -1)), axes=(-2, -1)).real


def downsample_plane(img: np.ndarray, h1: int, w1: int) -> np.ndarray:
    """Spectrum-crop one or more 2-D planes (in-plane axes last)."""
    block = _crop_fold(_fft2c(img), h1, w1)
    h2, w2 = img.shape[-2], img.shape[-1]
    block *= float(h1 * w1) / float(h2 * w2)
    return _ifft2c(block)


def zero_fill_plane(img: np.ndarray, h2: int, w2: int) -> np.ndarray:
    """Zero-fill 2-D planes (in-plane axes last) onto an (h2, w2) grid."""
    h1, w1 = img.shape[-2], img.shape[-1]
    if h1 > h2 or w1 > w2:
        raise DataError(f"zero-fill target ({h2}, {w2}) smaller than input ({h1}, {w1})")
    spec = _fft2c(img) * (float(h2 * w2) / float(h1 * w1))
    return _ifft2c(_embed_split(spec, h2, w2))


def downsample_x(
    i_hr: Volume4D,
    s: float,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Volume4D:
    """Degrade every (slice, direction) plane of a volume by scale s.

    Optional complex Gaussian noise of standard deviation ``noise_sigma``
    is added to the cropped spectrum before the inverse transform.
    """
    s = check_scale(s)
    h2, w2 = i_hr.data.shape[0], i_hr.data.shape[1]
    h1, w1 = lr_size(h2, s), lr_size(w2, s)
    if h1 < MIN_LR_SIZE or w1 < MIN_LR_SIZE:
        raise ConfigurationError(
            f"LR grid {h1}x{w1} below minimum {MIN_LR_SIZE}; "
            f"reduce the scale or enlarge the input"
        )
    planes = np.moveaxis(i_hr.data, (0, 1), (-2, -1))  # (Z, N, H, W)
    block = _crop_fold(_fft2c(planes), h1, w1)
    block *= float(h1 * w1) / float(h2 * w2)
    if noise_sigma > 0.0:
        if rng is None:
            raise ConfigurationError("noise_sigma > 0 requires an rng")
        noise = rng.normal(0.0, noise_sigma, block.shape) + 1j * rng.normal(
            0.0, noise_sigma, block.shape
        )
        block += noise
    out = np.moveaxis(_ifft2c(block), (-2, -1), (0, 1))
    sp = i_hr.spacing
    return Volume4D(out, (sp[0] * h2 / h1, sp[1] * w2 / w1, sp[2]))


def zero_fill(i_lr: Volume4D, target: tuple) -> Volume4D:
    """Zero-fill a LR volume onto the (h2, w2) in-plane grid."""
    h2, w2 = int(target[0]), int(target[1])
    h1, w1 = i_lr.data.shape[0], i_lr.data.shape[1]
    planes = np.moveaxis(i_lr.data, (0, 1), (-2, -1))
    out = np.moveaxis(zero_fill_plane(planes, h2, w2), (-2, -1), (0, 1))
    sp = i_lr.spacing
    return Volume4D(out, (sp[0] * h1 / h2, sp[1] * w1 / w2, sp[2]))


def select_subset(table: GradientTable, k: int, seed: int = 0) -> QSubset:
    """Greedy antipodal farthest-point selection of k directions.

    Starts from the DWI direction closest to +z and repeatedly adds the
    direction maximizing the minimum antipodal angle acos(|d . e|) to
    the already selected set; ties break toward the lower table index.
    The selection is fully deterministic; ``seed`` is accepted for
    interface stability and recorded by callers but not used.
    """
    del seed
    dwi = table.dwi_indices
    if not 1 <= k <= dwi.size:
        raise DataError(f"cannot select {k} of {dwi.size} DWI directions")
    dirs = table.dirs[dwi]
    start = int(np.argmax(dirs[:, 2]))  # argmax returns the first (lowest) index
    chosen = [start]
    remaining = [i for i in range(dirs.shape[0]) if i != start]
    # min antipodal angle from each remaining candidate to the chosen set
    ang = np.arccos(np.clip(np.abs(dirs @ dirs[start]), 0.0, 1.0))
    while len(chosen) < k:
        best, best_val = None, -1.0
        for i in remaining:
            if ang[i] > best_val:  # strict: ties keep the lower index
                best, best_val = i, ang[i]
        chosen.append(best)
        remaining.remove(best)
        new_ang = np.arccos(np.clip(np.abs(dirs @ dirs[best]), 0.0, 1.0))
        ang = np.minimum(ang, new_ang)
    return QSubset(dwi[np.array(chosen)], len(table))


def data_fidelity(pred_hr: Volume4D, i_lr: Volume4D, q: QSubset, s: float) -> Volume4D:
    """Replace the central spectrum block of sampled directions.

    For every (slice, direction) plane whose direction index is in ``q``,
    the central H1 x W1 block of the prediction's centered spectrum is
    removed and the measured LR spectrum, scaled by (H2*W2)/(H1*W1), is
    inserted in its place; both steps use the Nyquist fold/split pair so
    the result is idempotent and re-degrades to ``i_lr`` exactly.
    Planes of directions outside ``q`` pass through bitwise unchanged.
    """
    s = check_scale(s)
    h2, w2, z2, n2 = pred_hr.data.shape
    h1, w1, z1, n1 = i_lr.data.shape
    if z1 != z2:
        raise DataError(f"slice count mismatch: prediction {z2}, measurement {z1}")
    if n1 != len(q):
        raise DataError(f"{n1} measured channels for {len(q)} subset indices")
    if q.n_total != n2:
        raise DataError(f"subset refers to {q.n_total} directions, prediction has {n2}")
    if lr_size(h2, s) != h1 or lr_size(w2, s) != w1:
        raise DataError(
            f"grids inconsistent with scale {s}: {h2}x{w2} -> expected "
            f"{lr_size(h2, s)}x{lr_size(w2, s)}, got {h1}x{w1}"
        )

    out = pred_hr.data.copy()
    scale = float(h2 * w2) / float(h1 * w1)
    for j, n in enumerate(q.indices):
        pred_planes = np.moveaxis(out[:, :, :, n], (0, 1), (-2, -1))  # (Z, H, W)
        meas_planes = np.moveaxis(i_lr.data[:, :, :, j], (0, 1), (-2, -1))
        spec = _fft2c(pred_planes)
        low = _embed_split(_crop_fold(spec, h1, w1), h2, w2)
        meas = _embed_split(_fft2c(meas_planes) * scale, h2, w2)
        out[:, :, :, n] = np.moveaxis(_ifft2c(spec - low + meas), (-2, -1), (0, 1))
    return Volume4D(out, pred_hr.spacing)
