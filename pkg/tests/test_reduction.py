import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from helpers import linear_field, perturbed_hex_mesh
from hybridviz.mesh import (
    add_field,
    explicit_mesh,
    lattice_hex_connectivity,
    uniform_mesh,
    uniform_points,
    uniform_to_hex,
    validate_mesh,
)
from hybridviz.node import serialize_node
from hybridviz.reduction import (
    MissingFieldError,
    PipelineSpec,
    Resample,
    SelectFields,
    Slice,
    SliceBoundsError,
    StageMismatchError,
    run_pipeline,
    select_fields,
    slice_axis_aligned,
    slice_plane_hex,
)

CUBE = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                 [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], float)
CUBE_EDGES = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4),
              (0, 4), (1, 5), (2, 6), (3, 7)]


def unit_cube(shift=(0, 0, 0), scale=1.0):
    return explicit_mesh(CUBE * scale + np.asarray(shift, float), np.arange(8), "hex")


def tri_area(mesh):
    p = mesh.points()
    t = mesh.cells()
    if len(t) == 0:
        return 0.0
    cr = np.cross(p[t[:, 1]] - p[t[:, 0]], p[t[:, 2]] - p[t[:, 0]])
    return 0.5 * np.linalg.norm(cr, axis=1).sum()


def section_area_oracle(origin, normal):
    """Area of a unit cube's section, from edge intersections and a 2D hull."""
    n = np.asarray(normal, float) / np.linalg.norm(normal)
    d = (CUBE - origin) @ n
    pts = []
    for a, b in CUBE_EDGES:
        if (d[a] < 0) != (d[b] < 0):
            t = d[a] / (d[a] - d[b])
            pts.append(CUBE[a] + t * (CUBE[b] - CUBE[a]))
    if len(pts) < 3:
        return 0.0
    helper = np.eye(3)[np.argmin(np.abs(n))]
    u = np.cross(n, helper)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    pts = np.array(pts)
    return ConvexHull(np.column_stack([pts @ u, pts @ v])).volume


def three_field_grid(n):
    dims = (n + 1,) * 3
    m = uniform_mesh(dims, (0, 0, 0), (1.0 / n,) * 3)
    p = uniform_points(dims, (0, 0, 0), (1.0 / n,) * 3)
    add_field(m, "energy", "vertex", p[:, 0] + p[:, 1] + p[:, 2])
    add_field(m, "density", "vertex", p[:, 2])
    add_field(m, "pressure", "cell", np.arange(n ** 3, dtype=float))
    return validate_mesh(m)


# select_fields ---------------------------------------------------------------

def test_select_all_is_identity():
    m = three_field_grid(4)
    assert select_fields(list(m.fields), m) == m.node


def test_select_keeps_input_order():
    m = three_field_grid(2)
    out = select_fields(["pressure", "energy"], m)
    assert out["fields"].names() == ["energy", "pressure"]


def test_select_one_of_three_shrinks_field_bytes():
    m = validate_mesh(uniform_mesh((9, 9, 9)))
    for name in "abc":
        add_field(m.node, name, "vertex", np.zeros(729))
    m = validate_mesh(m.node)
    full = len(serialize_node(m.node["fields"]))
    kept = len(serialize_node(select_fields(["b"], m)["fields"]))
    # per-field overhead is a few dozen bytes against 729*8 bytes of values
    assert abs(full / kept - 3.0) < 0.01


def test_select_shares_geometry():
    m = three_field_grid(3)
    out = select_fields(["energy"], m)
    assert out["coordsets"] is m.node["coordsets"]
    assert serialize_node(out["coordsets"]) == serialize_node(m.node["coordsets"])


def test_select_missing():
    with pytest.raises(MissingFieldError):
        select_fields(["missing"], three_field_grid(2))


# axis-aligned slice ------------------------------------------------------------

def test_slice_220_cube_shape():
    # no fields: only the geometry matters here
    m = validate_mesh(uniform_mesh((221, 221, 221), (0, 0, 0), (1 / 220,) * 3))
    out = validate_mesh(slice_axis_aligned("z", 0.5, m))
    assert out.dims == (221, 221, 1)
    assert out.cell_count == 220 ** 2


def test_select_then_slice_paper_shape():
    n = 32
    m = three_field_grid(n)
    spec = PipelineSpec([SelectFields(("energy",)), Slice(axis="z", coordinate=0.5)])
    res = run_pipeline(spec, m)
    assert res.mesh.cell_count == n * n
    assert list(res.mesh.fields) == ["energy"]


@pytest.mark.parametrize("c", [0.0, 0.13, 0.5, 0.77, 1.0])
def test_slice_of_z_field_is_constant(c):
    out = validate_mesh(slice_axis_aligned("z", c, three_field_grid(8)))
    assert np.allclose(out.fields["density"].values, c, atol=1e-12, rtol=0)


def test_slice_on_vertex_layer_copies_layer():
    m = three_field_grid(4)
    g = m.grid("energy")
    out = validate_mesh(slice_axis_aligned("y", 0.5, m))
    assert np.array_equal(out.grid("energy")[:, 0, :], g[:, 2, :])


def test_slice_cell_field_takes_containing_layer():
    m = three_field_grid(4)
    out = validate_mesh(slice_axis_aligned("z", 0.6, m))
    assert np.array_equal(out.fields["pressure"].values, m.grid("pressure")[2].ravel())


def test_slice_out_of_bounds():
    m = three_field_grid(4)
    with pytest.raises(SliceBoundsError):
        slice_axis_aligned("x", 1.5, m)
    res = run_pipeline(PipelineSpec([Slice(axis="x", coordinate=1.5)]), m)
    assert res.mesh.cell_count == 0
    assert set(res.mesh.fields) == set(m.fields)


def test_exclusive_upper_face():
    m = three_field_grid(4)
    with pytest.raises(SliceBoundsError):
        slice_axis_aligned("z", 1.0, m, exclusive_upper=True)
    assert validate_mesh(slice_axis_aligned("z", 1.0, m)).cell_count == 16


def test_slicing_a_slice_is_rejected():
    spec = PipelineSpec([Slice(axis="z", coordinate=0.5), Slice(axis="x", coordinate=0.5)])
    with pytest.raises(StageMismatchError):
        run_pipeline(spec, three_field_grid(4))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 9), st.floats(0, 1), st.sampled_from("xyz"),
       st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_axis_slice_exact_on_linear_fields(n, frac, axis, coef):
    dims = (n + 1, n + 2, n + 3)
    h = (0.3, 0.7, 1.1)
    m = uniform_mesh(dims, (-1.0, 0.5, 2.0), h)
    p = uniform_points(dims, (-1.0, 0.5, 2.0), h)
    add_field(m, "f", "vertex", linear_field(p, coef[:3], coef[3]))
    m = validate_mesh(m)
    lo, hi = m.bounds()
    a = "xyz".index(axis)
    c = lo[a] + frac * (hi[a] - lo[a])
    out = validate_mesh(slice_axis_aligned(axis, c, m))
    expect = linear_field(out.points(), coef[:3], coef[3])
    assert np.max(np.abs(out.fields["f"].values - expect)) <= 1e-9


# plane slice ---------------------------------------------------------------------

def test_unit_cube_mid_plane():
    out, stats = slice_plane_hex((0, 0, 0.5), (0, 0, 1), validate_mesh(unit_cube()))
    out = validate_mesh(out)
    assert out.cell_count == 2
    assert abs(tri_area(out) - 1.0) <= 1e-12
    assert stats["degenerate_cells"] == 0


def test_plane_outside():
    out, _ = slice_plane_hex((0, 0, 5), (0, 0, 1), validate_mesh(unit_cube()))
    assert validate_mesh(out).cell_count == 0


def test_cut_point_values_interpolated():
    m = unit_cube()
    add_field(m, "f", "vertex", CUBE[:, 2])
    out, _ = slice_plane_hex((0, 0, 0.25), (0, 0, 1), validate_mesh(m))
    vals = validate_mesh(out).fields["f"].values
    assert vals.size > 0
    assert np.max(np.abs(vals - 0.25)) <= 1e-12


def test_plane_through_corner_has_no_duplicates():
    # plane x+y+z = 1 passes through three corners of the unit cube
    out, _ = slice_plane_hex((1, 0, 0), (1, 1, 1), validate_mesh(unit_cube()))
    out = validate_mesh(out)
    assert len(np.unique(out.points(), axis=0)) == out.vertex_count
    assert abs(tri_area(out) - np.sqrt(3) / 2) <= 1e-12


def test_degenerate_cells_skipped():
    conn = np.arange(8)
    conn[7] = conn[6]
    m = validate_mesh(explicit_mesh(CUBE, conn, "hex"))
    _, stats = slice_plane_hex((0, 0, 0.5), (0, 0, 1), m)
    assert stats["degenerate_cells"] == 1


def test_plane_slice_of_lattice_sums_to_section():
    rng = np.random.default_rng(3)
    dims = (6, 6, 6)
    m = explicit_mesh(uniform_points(dims, (0, 0, 0), (0.2,) * 3), lattice_hex_connectivity(dims))
    m = validate_mesh(m)
    for _ in range(5):
        o = rng.uniform(0.2, 0.8, 3)
        nrm = rng.standard_normal(3)
        out, _ = slice_plane_hex(o, nrm, m)
        assert abs(tri_area(validate_mesh(out)) - section_area_oracle(o, nrm)) <= 1e-12


def test_general_plane_on_uniform_grid():
    m = three_field_grid(4)
    spec = PipelineSpec([Slice(origin=(0.5, 0.5, 0.5), normal=(0, 0, 1))])
    res = run_pipeline(spec, m)
    assert res.mesh.kind == "tri"
    assert abs(tri_area(res.mesh) - 1.0) <= 1e-12


def test_plane_slice_linear_field_on_perturbed_mesh():
    rng = np.random.default_rng(11)
    m = perturbed_hex_mesh(rng, n=5)
    pts = validate_mesh(m).points()
    add_field(m, "f", "vertex", linear_field(pts))
    m = validate_mesh(m)
    out, _ = slice_plane_hex((0.4, 0.5, 0.6), (0.3, -1.0, 0.2), m)
    out = validate_mesh(out)
    assert out.cell_count > 0
    assert np.max(np.abs(out.fields["f"].values - linear_field(out.points()))) <= 1e-9


# pipeline ----------------------------------------------------------------------

@pytest.mark.parametrize("n", [4, 12])
def test_resample_cell_count_independent_of_input(n):
    res = run_pipeline(PipelineSpec([Resample((31, 31, 31))]), three_field_grid(n))
    assert res.mesh.cell_count == 27000
    assert res.provenance["input_cells"] == n ** 3
    assert res.provenance["output_cells"] == 27000


def test_resample_then_slice():
    spec = PipelineSpec([Resample((11, 11, 11)), Slice(axis="z", coordinate=0.5)])
    assert run_pipeline(spec, three_field_grid(4)).mesh.cell_count == 100


def test_slice_then_resample_rejected():
    spec = PipelineSpec([Slice(axis="z", coordinate=0.5), Resample((5, 5, 5))])
    with pytest.raises(StageMismatchError):
        run_pipeline(spec, three_field_grid(4))


def test_empty_input_passes_through():
    m = validate_mesh(explicit_mesh(np.zeros((0, 3)), np.zeros(0, np.int64), "hex"))
    for stage in (Slice(origin=(0, 0, 0), normal=(0, 0, 1)), Resample((5, 5, 5))):
        res = run_pipeline(PipelineSpec([stage]), m)
        assert res.mesh.cell_count == 0


def test_identity_pipeline():
    spec = PipelineSpec([SelectFields(("energy", "density", "pressure"))])
    assert spec.is_identity()
    m = three_field_grid(3)
    assert run_pipeline(spec, m).channel == m.node


def test_uniform_to_hex_slices_agree():
    m = three_field_grid(4)
    a = validate_mesh(slice_axis_aligned("z", 0.3, m))
    h = validate_mesh(uniform_to_hex(m))
    b, _ = slice_plane_hex((0, 0, 0.3), (0, 0, 1), h)
    b = validate_mesh(b)
    assert abs(tri_area(b) - 1.0) <= 1e-12
    assert np.allclose(np.sort(np.unique(b.fields["energy"].values)),
                       np.sort(np.unique(np.round(a.fields["energy"].values, 12))), atol=1e-12)
