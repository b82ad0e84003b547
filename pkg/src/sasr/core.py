"""Core data containers and coordinate conventions.

Volumes are stored as (H, W, Z, N) float64 arrays: two in-plane axes, a
slice axis, and a direction/channel axis. Continuous in-plane coordinates
live in [-1, 1]^2 with pixel centers at -1 + (2*i + 1)/n for a length-n
axis, so the grid is symmetric and never touches the domain boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class Volume4D:
    """A 4-D image volume with isotropic-per-axis voxel spacing in mm.

    Parameters
    ----------
    data : ndarray, shape (H, W, Z, N)
        Image values, finite, float64.
    spacing : tuple of 3 floats
        Voxel spacing (dh, dw, dz), all positive.
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4:
            raise DataError(f"volume must be 4-D (H, W, Z, N), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DataError(f"volume axes must be non-empty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("volume contains non-finite values")
        sp = tuple(float(s) for s in self.spacing)
        if len(sp) != 3 or any(s <= 0 for s in sp):
            raise DataError(f"spacing must be 3 positive floats, got {self.spacing}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", sp)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class GradientTable:
    """Diffusion gradient table: b-values and unit direction vectors.

    Directions of b=0 entries are ignored (conventionally zero); all
    b>0 directions must be unit norm within 1e-9.
    """

    bvals: np.ndarray
    dirs: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bvals, dtype=np.float64).reshape(-1)
        d = np.asarray(self.dirs, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] != 3 or d.shape[0] != b.shape[0]:
            raise DataError(
                f"gradient table mismatch: {b.shape[0]} bvals vs dirs shape {d.shape}"
            )
        if np.any(b < 0) or not np.all(np.isfinite(b)):
            raise DataError("b-values must be finite and non-negative")
        if not np.all(np.isfinite(d)):
            raise DataError("gradient directions must be finite")
        dwi = b > 0
        if np.any(dwi):
            norms = np.linalg.norm(d[dwi], axis=1)
            off = np.max(np.abs(norms - 1.0))
            if off > 1e-9:
                raise DataError(f"non-unit DWI direction (|norm - 1| = {off:.3e})")
        object.__setattr__(self, "bvals", b)
        object.__setattr__(self, "dirs", d)

    def __len__(self):
        return self.bvals.shape[0]

    @property
    def b0_mask(self):
        return self.bvals == 0

    @property
    def dwi_indices(self):
        return np.nonzero(self.bvals > 0)[0]


@dataclass(frozen=True)
class CoordGrid:
    """Continuous in-plane coordinates for a target (h2, w2) pixel lattice.

    ``coords`` has shape (h2*w2, 2), row-major over (i, j); each row is
    the (row, col) coordinate of a pixel center in [-1, 1]^2.
    """

    coords: np.ndarray
    h2: int
    w2: int

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.shape != (self.h2 * self.w2, 2):
            raise DataError(f"coord grid shape {c.shape} != ({self.h2 * self.w2}, 2)")
        object.__setattr__(self, "coords", c)


@dataclass(frozen=True)
class SliceTriple:
    """Three neighboring slices (H, W, 3, N) plus the middle slice index."""

    vol: Volume4D
    middle: int


def make_coord_grid(h2: int, w2: int) -> CoordGrid:
    """Pixel-center coordinate grid for an (h2, w2) lattice.

    Pixel (i, j) maps to (-1 + (2*i + 1)/h2, -1 + (2*j + 1)/w2); the grid
    is symmetric about 0 and excludes the domain boundary.
    """
    if h2 < 1 or w2 < 1:
        raise DataError(f"grid dims must be >= 1, got ({h2}, {w2})")
    rows = -1.0 + (2.0 * np.arange(h2) + 1.0) / h2
    cols = -1.0 + (2.0 * np.arange(w2) + 1.0) / w2
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    coords = np.stack([rr.ravel(), cc.ravel()], axis=1)
    return CoordGrid(coords, h2, w2)


def cart_to_sph(dirs: np.ndarray):
    """Unit vectors -> (theta, phi) with theta in [0, pi], phi in [0, 2*pi).

    theta is the polar angle from +z (cos(theta) = z), phi the azimuth
    from +x toward +y.
    """
    d = np.asarray(dirs, dtype=np.float64)
    single = d.ndim == 1
    d = np.atleast_2d(d)
    z = np.clip(d[:, 2], -1.0, 1.0)
    theta = np.arccos(z)
    phi = np.arctan2(d[:, 1], d[:, 0])
    phi = np.where(phi < 0, phi + 2.0 * np.pi, phi)
    # atan2(+0, x>0) is exactly 0; a rounded 2*pi would alias it, clamp back
    phi = np.where(phi >= 2.0 * np.pi, 0.0, phi)
    if single:
        return theta[0], phi[0]
    return theta, phi


def sph_to_cart(theta, phi) -> np.ndarray:
    """Inverse of :func:`cart_to_sph` for unit vectors."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def normalize_b0(vol: Volume4D, table: GradientTable):
    """Divide DWI channels by the voxelwise mean b=0 image.

    Returns (dwi_volume, dwi_table) with the b=0 channels removed from
    both. Voxels whose mean b0 is at or below 1e-8 times the global mean
    b0 are zeroed instead of divided.
    """
    if len(table) != vol.data.shape[3]:
        raise DataError(
            f"table has {len(table)} entries for {vol.data.shape[3]} channels"
        )
    b0 = table.b0_mask
    if not np.any(b0):
        raise DataError("cannot normalize: gradient table has no b=0 entry")
    mean_b0 = vol.data[..., b0].mean(axis=3)
    eps = 1e-8 * float(mean_b0.mean())
    ok = mean_b0 > eps
    dwi = vol.data[..., ~b0]
    out = np.zeros_like(dwi)
    np.divide(dwi, mean_b0[..., None], out=out, where=ok[..., None])
    new_table = GradientTable(table.bvals[~b0], table.dirs[~b0])
    return Volume4D(out, vol.spacing), new_table


def extract_slice_triples(vol: Volume4D) -> list:
    """All interior 3-neighboring-slice windows of a volume.

    A volume with Z slices yields Z - 2 triples, one per interior middle
    slice index 1 .. Z-2.
    """
    z = vol.data.shape[2]
    if z < 3:
        raise DataError(f"need at least 3 slices for triples, got Z = {z}")
    triples = []
    for mid in range(1, z - 1):
        window = vol.data[:, :, mid - 1 : mid + 2, :]
        triples.append(SliceTriple(Volume4D(window, vol.spacing), mid))
    return triples
