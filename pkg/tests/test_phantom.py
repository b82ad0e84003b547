"""Phantom forward-model tests. The two signal anchors are closed
forms: exp(-b g^T D g) along a principal axis, and the FA of the
anisotropic eigenvalue triple."""

import numpy as np
import pytest

from sasr.core import GradientTable
from sasr.errors import ConfigurationError, DataError
from sasr.phantom import (
    ANISO_EIGVALS,
    ISO_EIGVALS,
    PhantomSpec,
    Region,
    _fa_from_eigvals,
    default_phantom,
    default_table,
    generate,
    repulsion_dirs,
)

# exp(-1000 * 1.7e-3) for a gradient along the principal axis
EXPECTED_PARALLEL_SIGNAL = 0.18268352405273466
# FA of eigenvalues (1.7, 0.2, 0.2) (scale invariant)
EXPECTED_ANISO_FA = 0.8703882797784892


def _axis_table():
    dirs = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return GradientTable(np.array([0.0, 1000.0, 1000.0, 1000.0]), dirs)


def test_parallel_signal_closed_form():
    assert abs(np.exp(-1.7) - EXPECTED_PARALLEL_SIGNAL) < 1e-16
    region = Region("box", (0, 4, 0, 4, 0, 1), ANISO_EIGVALS, "x")
    spec = PhantomSpec((4, 4, 1), (region,))
    vol, truth = generate(spec, _axis_table())
    # b0 channel = s0; gradient along the fiber decays by exp(-b lam1)
    np.testing.assert_allclose(vol.data[..., 0], 1.0, atol=1e-15)
    np.testing.assert_allclose(vol.data[..., 1], EXPECTED_PARALLEL_SIGNAL, atol=1e-15)
    # perpendicular gradients decay by exp(-b lam2)
    np.testing.assert_allclose(vol.data[..., 2], np.exp(-0.2), atol=1e-15)
    np.testing.assert_allclose(vol.data[..., 3], np.exp(-0.2), atol=1e-15)


def test_fa_closed_form():
    lam = np.array([ANISO_EIGVALS])
    assert abs(_fa_from_eigvals(lam)[0] - EXPECTED_ANISO_FA) < 1e-15
    assert _fa_from_eigvals(np.array([ISO_EIGVALS]))[0] == 0.0


def test_orientation_permutes_principal_axis():
    table = _axis_table()
    for orientation, channel in [("x", 1), ("y", 2), ("z", 3)]:
        region = Region("box", (0, 2, 0, 2, 0, 1), ANISO_EIGVALS, orientation)
        vol, _ = generate(PhantomSpec((2, 2, 1), (region,)), table)
        np.testing.assert_allclose(
            vol.data[..., channel], EXPECTED_PARALLEL_SIGNAL, atol=1e-15
        )


def test_tangential_annulus_is_azimuthal():
    region = Region("annulus", (8.0, 8.0, 3.0, 6.0), ANISO_EIGVALS, "tangential")
    spec = PhantomSpec((16, 16, 1), (region,))
    _, truth = generate(spec, _axis_table())
    # at a voxel due +x of the center (world x = column), the tangent
    # runs along rows, so Dyy(world) carries the large eigenvalue
    row, col = 8, 12
    assert truth["mask"][row, col, 0]
    t6 = truth["tensor"][row, col, 0]  # (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz)
    assert abs(t6[0] - 0.2e-3) < 1e-12
    assert abs(t6[1] - 1.7e-3) < 1e-12
    assert abs(t6[3]) < 1e-12


def test_region_shapes_and_half_open_boxes():
    box = Region("box", (2, 5, 1, 3, 0, 2), ISO_EIGVALS, "x")
    mask = box.mask((8, 8, 3))
    assert mask.sum() == 3 * 2 * 2
    assert mask[2, 1, 0] and mask[4, 2, 1]
    assert not mask[5, 1, 0] and not mask[2, 3, 0] and not mask[2, 1, 2]
    sphere = Region("sphere", (4.0, 4.0, 1.0, 2.0), ISO_EIGVALS, "x")
    smask = sphere.mask((9, 9, 3))
    assert smask[4, 4, 1] and not smask[0, 0, 0]
    ann = Region("annulus", (4.0, 4.0, 1.5, 3.0), ISO_EIGVALS, "tangential")
    amask = ann.mask((9, 9, 3))
    assert not amask[4, 4, 0]  # hole in the middle
    assert amask[4, 6, 0]


def test_later_regions_overwrite():
    big = Region("box", (0, 4, 0, 4, 0, 1), ISO_EIGVALS, "x")
    small = Region("box", (1, 3, 1, 3, 0, 1), ANISO_EIGVALS, "x")
    vol, truth = generate(PhantomSpec((4, 4, 1), (big, small)), _axis_table())
    assert abs(truth["fa"][2, 2, 0] - EXPECTED_ANISO_FA) < 1e-12
    assert truth["fa"][0, 0, 0] == 0.0


def test_empty_region_rejected():
    # center between voxel positions, radius too small to reach any
    region = Region("sphere", (2.5, 2.5, 1.5, 0.2), ISO_EIGVALS, "x")
    with pytest.raises(DataError):
        generate(PhantomSpec((8, 8, 3), (region,)), _axis_table())


def test_default_phantom_structure():
    spec = default_phantom(32)
    assert spec.shape == (32, 32, 9)
    masks = [r.mask(spec.shape) for r in spec.regions]
    assert len(masks) == 4
    # regions are pairwise disjoint
    for i in range(len(masks)):
        for j in range(i + 1, len(masks)):
            assert not (masks[i] & masks[j]).any()
    # every slice has foreground
    fg = np.zeros(spec.shape, dtype=bool)
    for m in masks:
        fg |= m
    assert fg.any(axis=(0, 1)).all()
    with pytest.raises(ConfigurationError):
        default_phantom(8)


def test_rician_noise_seeded():
    spec = default_phantom(16, depth=3)
    table = default_table(6)
    clean, _ = generate(spec, table)
    noisy_spec = PhantomSpec(spec.shape, spec.regions, noise_sigma=0.05, seed=11)
    n1, _ = generate(noisy_spec, table)
    n2, _ = generate(noisy_spec, table)
    np.testing.assert_array_equal(n1.data, n2.data)
    other = PhantomSpec(spec.shape, spec.regions, noise_sigma=0.05, seed=12)
    n3, _ = generate(other, table)
    assert not np.array_equal(n1.data, n3.data)
    # Rician floor: noisy magnitudes are nonnegative even in background
    assert (n1.data >= 0).all()
    assert not np.array_equal(clean.data, n1.data)


def test_truth_md_is_mean_eigenvalue():
    region = Region("box", (0, 2, 0, 2, 0, 1), ANISO_EIGVALS, "y")
    _, truth = generate(PhantomSpec((2, 2, 1), (region,)), _axis_table())
    want = (1.7e-3 + 0.2e-3 + 0.2e-3) / 3.0
    np.testing.assert_allclose(truth["md"][truth["mask"]], want, atol=1e-18)


def test_repulsion_dirs_spread_and_canonical():
    for n, min_deg in [(15, 30.0), (30, 20.0)]:
        d = repulsion_dirs(n)
        np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)
        dots = np.clip(np.abs(d @ d.T), 0.0, 1.0)
        np.fill_diagonal(dots, 0.0)
        assert np.degrees(np.arccos(dots.max())) > min_deg
        # canonical hemisphere: z > 0, ties broken by y then x
        for v in d:
            assert v[2] > 0 or (v[2] == 0 and (v[1] > 0 or (v[1] == 0 and v[0] > 0)))
    np.testing.assert_array_equal(repulsion_dirs(15, seed=3), repulsion_dirs(15, seed=3))
    assert not np.array_equal(repulsion_dirs(15, seed=3), repulsion_dirs(15, seed=4))


def test_default_table_layout():
    table = default_table(15)
    assert len(table) == 16
    assert table.bvals[0] == 0.0
    np.testing.assert_array_equal(table.dirs[0], 0.0)
    assert (table.bvals[1:] == 1000.0).all()
    np.testing.assert_allclose(np.linalg.norm(table.dirs[1:], axis=1), 1.0, atol=1e-12)
