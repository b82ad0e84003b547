"""Log-linear diffusion tensor fitting and scalar maps.

Tensor components are carried in (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz) order
throughout, matching the design matrix columns.
"""

from __future__ import annotations

import numpy as np

from .core import GradientTable, Volume4D
from .errors import DataError, NumericalError

#: relative signal floor applied before the log transform
SIGNAL_FLOOR = 1e-10


def design_matrix(table: GradientTable) -> np.ndarray:
    """(M, 6) rows b * (gx^2, gy^2, gz^2, 2 gx gy, 2 gx gz, 2 gy gz)
    over the DWI rows of the table."""
    idx = table.dwi_indices
    if idx.size < 6:
        raise DataError(f"tensor fit needs >= 6 DWI rows, got {idx.size}")
    g = table.dirs[idx]
    b = table.bvals[idx]
    cols = [
        g[:, 0] ** 2, g[:, 1] ** 2, g[:, 2] ** 2,
        2.0 * g[:, 0] * g[:, 1], 2.0 * g[:, 0] * g[:, 2], 2.0 * g[:, 1] * g[:, 2],
    ]
    return b[:, None] * np.stack(cols, axis=1)


def fit_tensor(signals: np.ndarray, s0: np.ndarray, table: GradientTable) -> np.ndarray:
    """Least-squares tensors from DWI signals.

    signals : (..., M) values in table DWI row order; s0 : (...) or
    scalar non-diffusion-weighted reference. Voxels with s0 <= 0 come
    back all-zero. Returns (..., 6).
    """
    signals = np.asarray(signals, dtype=np.float64)
    g_mat = design_matrix(table)
    m = g_mat.shape[0]
    if signals.shape[-1] != m:
        raise DataError(f"{signals.shape[-1]} signal channels for {m} DWI rows")
    s0 = np.broadcast_to(np.asarray(s0, dtype=np.float64), signals.shape[:-1])

    lead = signals.shape[:-1]
    flat = signals.reshape(-1, m)
    s0f = s0.reshape(-1)
    ok = s0f > 0
    out = np.zeros((flat.shape[0], 6), dtype=np.float64)
    if ok.any():
        floor = SIGNAL_FLOOR * s0f[ok, None]
        ratio = np.maximum(flat[ok], floor) / s0f[ok, None]
        y = -np.log(ratio)
        sol, _, rank, sv = np.linalg.lstsq(g_mat, y.T, rcond=None)
        if rank < 6:
            raise NumericalError(
                f"rank-deficient tensor design matrix (rank {rank}, "
                f"singular values {sv.min():.3e}..{sv.max():.3e})"
            )
        out[ok] = sol.T
    return out.reshape(lead + (6,))


def fit_volume(vol: Volume4D, table: GradientTable) -> np.ndarray:
    """Tensor map (H, W, Z, 6) from a raw volume containing b=0 rows;
    s0 is the voxelwise mean over the b=0 channels."""
    b0 = table.b0_mask
    if not b0.any():
        raise DataError("tensor fit from a volume needs at least one b=0 row")
    s0 = vol.data[..., b0].mean(axis=-1)
    return fit_tensor(vol.data[..., table.dwi_indices], s0, table)


def tensor_matrix(tensor6: np.ndarray) -> np.ndarray:
    """(..., 6) component vectors to (..., 3, 3) symmetric matrices."""
    t = np.asarray(tensor6, dtype=np.float64)
    if t.shape[-1] != 6:
        raise DataError(f"expected 6 tensor components, got {t.shape[-1]}")
    out = np.empty(t.shape[:-1] + (3, 3), dtype=np.float64)
    out[..., 0, 0] = t[..., 0]
    out[..., 1, 1] = t[..., 1]
    out[..., 2, 2] = t[..., 2]
    out[..., 0, 1] = out[..., 1, 0] = t[..., 3]
    out[..., 0, 2] = out[..., 2, 0] = t[..., 4]
    out[..., 1, 2] = out[..., 2, 1] = t[..., 5]
    return out


def eigenvalues(tensor6: np.ndarray) -> np.ndarray:
    """(..., 3) eigenvalues in descending order."""
    return np.linalg.eigvalsh(tensor_matrix(tensor6))[..., ::-1]


def scalar_maps(tensor6: np.ndarray):
    """FA and MD maps plus a QC mask of voxels with negative eigenvalues.

    Negative eigenvalues are clamped to zero for FA; MD keeps the raw
    trace. Returns (fa, md, qc_negative).
    """
    lam = eigenvalues(tensor6)
    qc = lam[..., -1] < 0
    lam_c = np.clip(lam, 0.0, None)
    mean = lam_c.mean(axis=-1, keepdims=True)
    num = ((lam_c - mean) ** 2).sum(axis=-1)
    den = (lam_c**2).sum(axis=-1)
    ratio = np.zeros_like(num)
    np.divide(num, den, out=ratio, where=den > 0)
    fa = np.sqrt(1.5 * ratio)
    md = np.asarray(tensor6, dtype=np.float64)[..., :3].mean(axis=-1)
    return fa, md, qc
