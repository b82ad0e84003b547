"""Synthetic diffusion phantoms with known tensor ground truth.

Geometry lives in voxel index coordinates with the world axes mapped as
x = in-plane column (W), y = in-plane row (H), z = through-plane; the
gradient directions use the same frame. Regions are painted in order,
later regions overwrite earlier ones where they overlap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GradientTable, Volume4D
from .errors import ConfigurationError, DataError

#: eigenvalues in mm^2/s: prolate white-matter-like and isotropic
ANISO_EIGVALS = (1.7e-3, 0.2e-3, 0.2e-3)
ISO_EIGVALS = (0.7e-3, 0.7e-3, 0.7e-3)


@dataclass(frozen=True)
class Region:
    """A painted region with a single diffusion tensor model.

    kind/geometry pairs (all voxel index units, boxes half open):
      sphere : (ch, cw, cz, radius)
      box    : (h0, h1, w0, w1, z0, z1)
      annulus: (ch, cw, r_inner, r_outer) through all slices
    orientation fixes the principal eigenvector: "x", "y", "z", or
    "tangential" (annulus only: in-plane, perpendicular to the radius).
    """

    kind: str
    geometry: tuple
    eigvals: tuple = ANISO_EIGVALS
    orientation: str = "x"
    s0: float = 1.0

    def __post_init__(self):
        sizes = {"sphere": 4, "box": 6, "annulus": 4}
        if self.kind not in sizes:
            raise ConfigurationError(f"unknown region kind '{self.kind}'")
        if len(self.geometry) != sizes[self.kind]:
            raise ConfigurationError(
                f"{self.kind} needs {sizes[self.kind]} geometry values"
            )
        if self.orientation not in ("x", "y", "z", "tangential"):
            raise ConfigurationError(f"unknown orientation '{self.orientation}'")
        if self.orientation == "tangential" and self.kind != "annulus":
            raise ConfigurationError("tangential orientation is annulus-only")
        if len(self.eigvals) != 3 or any(v < 0 for v in self.eigvals):
            raise ConfigurationError("eigvals must be 3 non-negative values")
        if self.s0 <= 0:
            raise ConfigurationError("s0 must be positive")

    def mask(self, shape) -> np.ndarray:
        hh, ww, zz = np.meshgrid(*(np.arange(n) for n in shape), indexing="ij")
        g = self.geometry
        if self.kind == "sphere":
            return (hh - g[0]) ** 2 + (ww - g[1]) ** 2 + (zz - g[2]) ** 2 <= g[3] ** 2
        if self.kind == "box":
            return (
                (g[0] <= hh) & (hh < g[1])
                & (g[2] <= ww) & (ww < g[3])
                & (g[4] <= zz) & (zz < g[5])
            )
        rsq = (hh - g[0]) ** 2 + (ww - g[1]) ** 2
        return (g[2] ** 2 <= rsq) & (rsq <= g[3] ** 2)

    def tensors(self, shape, mask) -> np.ndarray:
        """(n_masked, 3, 3) diffusion tensors at the masked voxels."""
        lam = np.asarray(self.eigvals, dtype=np.float64)
        n = int(mask.sum())
        if self.orientation != "tangential":
            # principal axis gets eigvals[0]; remaining axes in x, y, z order
            order = {"x": (0, 1, 2), "y": (1, 0, 2), "z": (1, 2, 0)}[self.orientation]
            d = np.diag(lam[list(order)])
            return np.broadcast_to(d, (n, 3, 3)).copy()
        hh, ww = np.meshgrid(*(np.arange(s) for s in shape[:2]), indexing="ij")
        hs = np.broadcast_to(hh[:, :, None], mask.shape)[mask].astype(np.float64)
        ws = np.broadcast_to(ww[:, :, None], mask.shape)[mask].astype(np.float64)
        dy = hs - self.geometry[0]
        dx = ws - self.geometry[1]
        phi = np.arctan2(dy, dx)
        tang = np.stack([-np.sin(phi), np.cos(phi), np.zeros(n)], axis=1)
        radial = np.stack([np.cos(phi), np.sin(phi), np.zeros(n)], axis=1)
        axial = np.broadcast_to([0.0, 0.0, 1.0], (n, 3))
        return (
            lam[0] * tang[:, :, None] * tang[:, None, :]
            + lam[1] * radial[:, :, None] * radial[:, None, :]
            + lam[2] * axial[:, :, None] * axial[:, None, :]
        )


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple
    regions: tuple
    spacing: tuple = (1.0, 1.0, 1.0)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if len(self.shape) != 3 or any(n < 1 for n in self.shape):
            raise ConfigurationError(f"bad phantom shape {self.shape}")
        if not self.regions:
            raise ConfigurationError("phantom needs at least one region")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")


def default_phantom(size: int = 32, depth: int = 9, noise_sigma: float = 0.0, seed: int = 0) -> PhantomSpec:
    """Ball + two orthogonally oriented slabs + tangential annulus.

    The slabs are spatially disjoint (their fiber orientations cross at
    90 degrees, the slabs themselves do not overlap), so every voxel has
    a single well-defined tensor and the truth maps are unambiguous.
    """
    if size < 16:
        raise ConfigurationError(f"size must be >= 16, got {size}")
    if depth < 3:
        raise ConfigurationError(f"depth must be >= 3, got {depth}")
    s = float(size)
    regions = (
        Region("sphere", (0.30 * s, 0.30 * s, (depth - 1) / 2.0, 0.17 * s),
               eigvals=ISO_EIGVALS),
        Region("box", (0.58 * s, 0.74 * s, 0.0, s, 0.0, float(depth)),
               orientation="x"),
        Region("box", (0.78 * s, 0.94 * s, 0.0, s, 0.0, float(depth)),
               orientation="y"),
        Region("annulus", (0.30 * s, 0.70 * s, 0.10 * s, 0.185 * s),
               orientation="tangential"),
    )
    return PhantomSpec((size, size, depth), regions, noise_sigma=noise_sigma, seed=seed)


def generate(spec: PhantomSpec, table: GradientTable):
    """Render signals for a gradient table.

    Returns (volume, truth) where truth holds per-voxel ground truth:
    "tensor" (H, W, Z, 6) in (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz) order,
    "fa", "md", "s0" maps and the foreground "mask". Background voxels
    have zero signal and zero tensor. Noise, if requested, is Rician
    with per-channel sigma relative to s0 = 1.
    """
    h, w, z = spec.shape
    m = len(table)
    signals = np.zeros((h, w, z, m), dtype=np.float64)
    tensor6 = np.zeros((h, w, z, 6), dtype=np.float64)
    fa = np.zeros((h, w, z), dtype=np.float64)
    md = np.zeros((h, w, z), dtype=np.float64)
    s0_map = np.zeros((h, w, z), dtype=np.float64)
    fg = np.zeros((h, w, z), dtype=bool)

    for region in spec.regions:
        mask = region.mask(spec.shape)
        if not mask.any():
            raise DataError(f"region {region.kind} covers no voxels in {spec.shape}")
        d = region.tensors(spec.shape, mask)  # (n, 3, 3)
        # exponent: b * g^T D g per (voxel, table row)
        quad = np.einsum("mi,nij,mj->nm", table.dirs, d, table.dirs)
        sig = region.s0 * np.exp(-table.bvals[None, :] * quad)
        signals[mask] = sig
        tensor6[mask] = np.stack(
            [d[:, 0, 0], d[:, 1, 1], d[:, 2, 2], d[:, 0, 1], d[:, 0, 2], d[:, 1, 2]],
            axis=1,
        )
        lam = np.linalg.eigvalsh(d)
        fa[mask] = _fa_from_eigvals(lam)
        md[mask] = lam.mean(axis=1)
        s0_map[mask] = region.s0
        fg |= mask

    if spec.noise_sigma > 0:
        rng = np.random.Generator(np.random.Philox(spec.seed))
        n1 = rng.normal(0.0, spec.noise_sigma, signals.shape)
        n2 = rng.normal(0.0, spec.noise_sigma, signals.shape)
        signals = np.hypot(signals + n1, n2)

    vol = Volume4D(signals, spec.spacing)
    truth = {
        "tensor": tensor6, "fa": fa, "md": md, "s0": s0_map, "mask": fg,
    }
    return vol, truth


def _fa_from_eigvals(lam: np.ndarray) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    mean = lam.mean(axis=-1, keepdims=True)
    num = ((lam - mean) ** 2).sum(axis=-1)
    den = (lam**2).sum(axis=-1)
    out = np.zeros(lam.shape[:-1])
    np.divide(num, den, out=out, where=den > 0)
    return np.sqrt(1.5 * out)


def repulsion_dirs(n: int, seed: int = 0, iters: int = 400) -> np.ndarray:
    """Approximately uniform antipodally symmetric directions.

    Projected gradient descent on the electrostatic energy of n point
    pairs (each direction and its antipode). Deterministic for a given
    (n, seed, iters).
    """
    if n < 1:
        raise ConfigurationError(f"need n >= 1 directions, got {n}")
    rng = np.random.default_rng(np.random.PCG64(seed))
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    if n == 1:
        return d
    step = 0.1 / n
    for it in range(iters):
        diff = d[:, None, :] - d[None, :, :]
        ssum = d[:, None, :] + d[None, :, :]
        dist1 = np.linalg.norm(diff, axis=2)
        dist2 = np.linalg.norm(ssum, axis=2)
        np.fill_diagonal(dist1, np.inf)
        np.fill_diagonal(dist2, np.inf)  # self-antipode force is radial anyway
        f = (diff / dist1[:, :, None] ** 3).sum(axis=1)
        f += (ssum / dist2[:, :, None] ** 3).sum(axis=1)
        f -= (f * d).sum(axis=1, keepdims=True) * d  # tangential part
        d = d + step / (1.0 + it / 100.0) * f
        d /= np.linalg.norm(d, axis=1, keepdims=True)
    # canonical hemisphere: positive z (then y, then x) leading sign
    flip = (d[:, 2] < 0) | ((d[:, 2] == 0) & (d[:, 1] < 0))
    flip |= (d[:, 2] == 0) & (d[:, 1] == 0) & (d[:, 0] < 0)
    d[flip] *= -1.0
    return d


def default_table(n_dirs: int = 90, bval: float = 1000.0, seed: int = 0) -> GradientTable:
    """One b=0 row followed by n_dirs repulsion directions at `bval`."""
    if bval <= 0:
        raise ConfigurationError(f"bval must be positive, got {bval}")
    dirs = np.vstack([[0.0, 0.0, 0.0], repulsion_dirs(n_dirs, seed=seed)])
    bvals = np.concatenate([[0.0], np.full(n_dirs, float(bval))])
    return GradientTable(bvals, dirs)
