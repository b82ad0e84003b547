"""Real symmetric spherical harmonic basis for antipodal signals.

Only even degrees are used, so every basis function satisfies
B(d) = B(-d). With the maximum degree L the basis has
(L + 1)(L + 2)/2 functions; degree 6 gives 28. Column j of the basis
matrix corresponds to the (l, m) pair with j = l(l + 1)/2 + m, m running
-l..l within each even l.

The complex-to-real convention: for m = 0 the (unit-normalized) zonal
harmonic itself; for m > 0 sqrt(2) times the real part; for m < 0
sqrt(2) times the imaginary part of Y_l^|m|. The Condon-Shortley phase
is kept inside the associated Legendre recurrence. Normalization is
chosen so the basis is orthonormal over the unit sphere.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DataError, NumericalError

DEFAULT_ORDER = 6

# conditioning guard for the regularized normal matrix
_COND_LIMIT = 1e12


def n_coeffs(order: int = DEFAULT_ORDER) -> int:
    """Number of even-degree basis functions up to degree ``order``."""
    if order < 0 or order % 2 != 0:
        raise DataError(f"SH order must be even and >= 0, got {order}")
    return (order + 1) * (order + 2) // 2


def index_pairs(order: int = DEFAULT_ORDER):
    """(l, m) pairs in column order: j = l(l + 1)/2 + m."""
    pairs = []
    for l in range(0, order + 1, 2):
        for m in range(-l, l + 1):
            pairs.append((l, m))
    return pairs


def degree_vector(order: int = DEFAULT_ORDER) -> np.ndarray:
    """Degree l of each basis column, used for Laplace-Beltrami weights."""
    return np.array([l for l, _ in index_pairs(order)], dtype=np.float64)


def _norm_legendre(x: np.ndarray, s: np.ndarray, order: int):
    """Fully normalized associated Legendre values N_l^m(x).

    N includes the sqrt((2l+1)/(4pi) (l-m)!/(l+m)!) factor and the
    Condon-Shortley phase. Upward recurrence in l with normalized
    coefficients keeps every intermediate O(1), so degree 6 (and well
    beyond) is computed without factorial overflow. Returns a dict
    keyed by (l, m) for m >= 0, l..order.
    """
    out = {}
    pmm = np.full_like(x, 1.0 / math.sqrt(4.0 * math.pi))
    for m in range(0, order + 1):
        if m > 0:
            pmm = (-math.sqrt((2.0 * m + 1.0) / (2.0 * m))) * s * pmm
        out[(m, m)] = pmm
        if m + 1 <= order:
            pm1 = math.sqrt(2.0 * m + 3.0) * x * pmm
            out[(m + 1, m)] = pm1
            pm0 = pmm
            for l in range(m + 2, order + 1):
                a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
                b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
                p = a * (x * pm1 - b * pm0)
                out[(l, m)] = p
                pm0, pm1 = pm1, p
    return out


def eval_basis(dirs: np.ndarray, order: int = DEFAULT_ORDER) -> np.ndarray:
    """Evaluate the real even-degree SH basis at unit directions.

    Parameters
    ----------
    dirs : ndarray, shape (M, 3)
        Unit direction vectors.
    order : int
        Even maximum degree.

    Returns
    -------
    B : ndarray, shape (M, n_coeffs(order))

    Notes
    -----
    The azimuthal factors cos(m*phi), sin(m*phi) are built by the angle
    addition recurrence from cos(phi) = x/s, sin(phi) = y/s (s the
    in-plane radius). Together with the parity of the Legendre
    recurrence this makes B(d) and B(-d) bit-identical, not just close.
    """
    r = n_coeffs(order)
    d = np.asarray(dirs, dtype=np.float64)
    if d.ndim != 2 or d.shape[1] != 3:
        raise DataError(f"dirs must have shape (M, 3), got {d.shape}")
    norms = np.linalg.norm(d, axis=1)
    if d.shape[0] and np.max(np.abs(norms - 1.0)) > 1e-9:
        raise DataError("eval_basis expects unit direction vectors")

    x = d[:, 2]
    s = np.hypot(d[:, 0], d[:, 1])
    safe = s > 0
    cphi = np.where(safe, np.divide(d[:, 0], s, where=safe, out=np.ones_like(s)), 1.0)
    sphi = np.where(safe, np.divide(d[:, 1], s, where=safe, out=np.zeros_like(s)), 0.0)

    legs = _norm_legendre(x, s, order)
    # cos(m phi), sin(m phi) for m = 0..order by angle addition
    cm = [np.ones_like(x)]
    sm = [np.zeros_like(x)]
    for _ in range(order):
        c_prev, s_prev = cm[-1], sm[-1]
        cm.append(cphi * c_prev - sphi * s_prev)
        sm.append(sphi * c_prev + cphi * s_prev)

    sqrt2 = math.sqrt(2.0)
    b = np.empty((d.shape[0], r), dtype=np.float64)
    col = 0
    for l in range(0, order + 1, 2):
        for m in range(-l, l + 1):
            if m == 0:
                b[:, col] = legs[(l, 0)]
            elif m > 0:
                b[:, col] = sqrt2 * legs[(l, m)] * cm[m]
            else:
                b[:, col] = sqrt2 * legs[(l, -m)] * sm[-m]
            col += 1
    return b


def fit_sh(
    signals: np.ndarray, basis: np.ndarray, lb_lambda: float = 0.0
) -> np.ndarray:
    """Least-squares SH coefficients with Laplace-Beltrami regularization.

    Solves argmin_c ||B c - s||^2 + lb_lambda * ||diag(l(l+1)) c||^2 per
    signal vector via the normal equations. ``signals`` may carry any
    leading shape with the direction axis last.
    """
    b = np.asarray(basis, dtype=np.float64)
    s = np.asarray(signals, dtype=np.float64)
    if b.ndim != 2:
        raise DataError(f"basis must be 2-D, got shape {b.shape}")
    m, r = b.shape
    if s.shape[-1] != m:
        raise DataError(f"signals last axis {s.shape[-1]} != basis rows {m}")
    if lb_lambda < 0:
        raise DataError(f"lb_lambda must be >= 0, got {lb_lambda}")

    order = _order_from_columns(r)
    lvec = degree_vector(order)
    lb = (lvec * (lvec + 1.0)) ** 2
    a = b.T @ b + lb_lambda * np.diag(lb)
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(a)
        raise NumericalError(
            f"SH normal matrix is not positive definite (cond ~ {cond:.3e}); "
            f"{m} directions for {r} coefficients need lb_lambda > 0"
        ) from None
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise NumericalError(f"SH normal matrix ill-conditioned (cond ~ {cond:.3e})")

    flat = s.reshape(-1, m)
    coeffs = np.linalg.solve(a, b.T @ flat.T).T
    return coeffs.reshape(s.shape[:-1] + (r,))


def synth_sh(coeffs: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Evaluate SH expansions at the directions the basis was built for."""
    b = np.asarray(basis, dtype=np.float64)
    c = np.asarray(coeffs, dtype=np.float64)
    if c.shape[-1] != b.shape[1]:
        raise DataError(f"coeff axis {c.shape[-1]} != basis columns {b.shape[1]}")
    return c @ b.T


def _order_from_columns(r: int) -> int:
    order = 0
    while n_coeffs(order) < r:
        order += 2
    if n_coeffs(order) != r:
        raise DataError(f"{r} columns do not match any even SH order")
    return order
