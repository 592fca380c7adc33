import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import linear_field, perturbed_hex_mesh
from hybridviz.mesh import (
    HEX_CORNERS,
    add_field,
    explicit_mesh,
    lattice_hex_connectivity,
    uniform_mesh,
    uniform_points,
    validate_mesh,
)
from hybridviz.resample import (
    HexLocator,
    ResampleError,
    invert_trilinear,
    resample_to_grid,
    trilinear_weights,
)


def _trilinear_field(p):
    x, y, z = p.T
    return 1.0 + 2 * x - y + 0.5 * z + 3 * x * y - x * z + 2 * y * z - 4 * x * y * z


def test_weights_partition_of_unity():
    xi = np.random.default_rng(0).uniform(0, 1, (50, 3))
    w = trilinear_weights(xi)
    assert w.shape == (50, 8)
    assert np.allclose(w.sum(axis=1), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.05, 0.95), min_size=3, max_size=3), st.integers(0, 2**31))
def test_newton_inverts_map(xi, seed):
    rng = np.random.default_rng(seed)
    corners = HEX_CORNERS.astype(float) + rng.uniform(-0.15, 0.15, (8, 3))
    p = trilinear_weights(np.array([xi])) @ corners
    got, ok = invert_trilinear(corners[None], p)
    assert ok[0]
    assert np.allclose(got[0], xi, atol=1e-9)


@pytest.mark.parametrize("cells", [30, 50])
def test_output_cell_count(cells):
    m = validate_mesh(uniform_mesh((5, 5, 5), (0, 0, 0), (0.25,) * 3))
    out, _ = resample_to_grid((cells + 1,) * 3, "auto", m)
    assert validate_mesh(out).cell_count == cells ** 3


def test_linear_field_on_perturbed_hex_mesh():
    rng = np.random.default_rng(5)
    m = perturbed_hex_mesh(rng, n=6, jitter=0.25)
    add_field(m, "f", "vertex", linear_field(validate_mesh(m).points()))
    out, stats = resample_to_grid((13, 13, 13), "auto", validate_mesh(m))
    out = validate_mesh(out)
    assert stats["out_of_domain"] == 0
    err = np.abs(out.fields["f"].values - linear_field(out.points()))
    assert err.max() <= 1e-9


def test_trilinear_field_exact_on_uniform_lattice_as_hex():
    dims = (5, 4, 6)
    pts = uniform_points(dims, (0.1, -0.2, 0.3), (0.3, 0.4, 0.2))
    m = explicit_mesh(pts, lattice_hex_connectivity(dims))
    add_field(m, "f", "vertex", _trilinear_field(pts))
    out, _ = resample_to_grid((9, 9, 9), "auto", validate_mesh(m))
    out = validate_mesh(out)
    # trilinear interpolation reproduces the per-cell trilinear function exactly
    assert np.max(np.abs(out.fields["f"].values - _trilinear_field(out.points()))) <= 1e-9


def test_uniform_source_matches_hex_source():
    dims = (5, 5, 5)
    pts = uniform_points(dims, (0, 0, 0), (0.25,) * 3)
    vals = np.random.default_rng(2).standard_normal(125)
    u = add_field(uniform_mesh(dims, (0, 0, 0), (0.25,) * 3), "f", "vertex", vals)
    h = add_field(explicit_mesh(pts, lattice_hex_connectivity(dims)), "f", "vertex", vals)
    a, _ = resample_to_grid((7, 7, 7), "auto", validate_mesh(u))
    b, _ = resample_to_grid((7, 7, 7), "auto", validate_mesh(h))
    assert np.allclose(a["fields/f/values"].value, b["fields/f/values"].value, atol=1e-12)


def test_out_of_domain_zero_fill_and_mask():
    m = add_field(uniform_mesh((3, 3, 3), (0, 0, 0), (0.5,) * 3), "f", "vertex", np.ones(27))
    out, stats = resample_to_grid((5, 5, 5), (0, 0, 0, 2, 2, 2), validate_mesh(m))
    vals = out["fields/f/values"].value
    mask = out["valid/vertex"].value.astype(bool)
    assert stats["out_of_domain"] == int((~mask).sum()) > 0
    assert np.all(vals[~mask] == 0.0)
    assert np.all(vals[mask] == 1.0)
    # samples with every coordinate <= 1 are inside
    p = validate_mesh(out).points()
    assert np.array_equal(mask, np.all(p <= 1.0, axis=1))


def test_cell_field_sampled_at_cell_centers():
    m = uniform_mesh((3, 3, 3), (0, 0, 0), (1.0,) * 3)
    add_field(m, "c", "cell", np.arange(8.0))
    out, _ = resample_to_grid((5, 5, 5), "auto", validate_mesh(m))
    g = validate_mesh(out).grid("c")
    # output cells of width 0.5; source cell index = x + 2y + 4z of the center
    assert g[0, 0, 0] == 0.0
    assert g[3, 3, 3] == 7.0
    assert g[0, 0, 3] == 1.0


def test_bad_arguments():
    m = validate_mesh(uniform_mesh((3, 3, 3)))
    with pytest.raises(ResampleError):
        resample_to_grid((1, 5, 5), "auto", m)
    with pytest.raises(ResampleError):
        resample_to_grid((5, 5, 5), (0, 0, 0, 0, 1, 1), m)


def test_locator_finds_every_cell_center():
    rng = np.random.default_rng(9)
    m = validate_mesh(perturbed_hex_mesh(rng, n=4, jitter=0.2))
    pts, cells = m.points(), m.cells()
    centers = pts[cells].mean(axis=1)
    loc = HexLocator(pts, cells).locate(centers)
    assert np.array_equal(loc.cell, np.arange(len(cells)))
