import numpy as np
import pytest

from hybridviz.mesh import (
    HEX_CORNERS,
    MeshValidationError,
    add_field,
    empty_mesh,
    explicit_mesh,
    lattice_hex_connectivity,
    uniform_mesh,
    uniform_to_hex,
    validate_mesh,
)
from hybridviz.node import DataNode


def _code(tree):
    with pytest.raises(MeshValidationError) as info:
        validate_mesh(tree)
    return info.value.code


def test_uniform_vertex_field_valid():
    m = add_field(uniform_mesh((3, 3, 3)), "f", "vertex", np.arange(27.0))
    ch = validate_mesh(m)
    assert ch.vertex_count == 27
    assert ch.cell_count == 8


def test_uniform_cell_field_wrong_length():
    # (3-1)**3 cells, so 9 values is one too many
    expected = (3 - 1) * (3 - 1) * (3 - 1)
    m = add_field(uniform_mesh((3, 3, 3)), "f", "cell", np.zeros(expected + 1))
    assert _code(m) == "field-length"
    add_field(m, "f", "cell", np.zeros(expected))
    validate_mesh(m)


def test_connectivity_index_range():
    pts = np.array(HEX_CORNERS, float)
    conn = np.arange(8)
    validate_mesh(explicit_mesh(pts, conn))
    conn[3] = len(pts)
    assert _code(explicit_mesh(pts, conn)) == "index-range"
    conn[3] = -1
    assert _code(explicit_mesh(pts, conn)) == "index-range"


def test_missing_parts():
    m = uniform_mesh((2, 2, 2))
    m.remove("coordsets")
    assert _code(m) == "missing-coordset"
    m = uniform_mesh((2, 2, 2))
    m.remove("topologies")
    assert _code(m) == "missing-topology"
    m = uniform_mesh((2, 2, 2))
    m["topologies/mesh/type"] = "polyhedral"
    assert _code(m) == "unknown-topology"
    assert _code(DataNode.leaf(1)) == "schema"


def test_non_scalar_field():
    m = uniform_mesh((2, 2, 2))
    m["fields/v/association"] = "vertex"
    m["fields/v/topology"] = "mesh"
    m["fields/v/values/x"] = np.zeros(8)
    assert _code(m) == "non-scalar"


def test_bad_dims():
    assert _code(uniform_mesh((2, 0, 2))) == "dims"
    assert _code(uniform_mesh((2, 2))) in ("dims", "schema")


def test_single_layer_grid_is_valid():
    m = add_field(uniform_mesh((5, 4, 1)), "f", "cell", np.zeros(12))
    ch = validate_mesh(m)
    assert ch.flat_axis == 2
    assert ch.cell_count == 12
    assert ch.grid("f").shape == (1, 3, 4)


def test_connectivity_length_multiple():
    assert _code(explicit_mesh(np.zeros((8, 3)), np.arange(7))) in ("field-length", "schema")


def test_empty_mesh_is_valid():
    ch = validate_mesh(empty_mesh())
    assert ch.is_empty
    assert ch.vertex_count == 0


def test_lattice_connectivity_matches_points():
    dims = (3, 4, 5)
    hexm = uniform_to_hex(validate_mesh(uniform_mesh(dims, (1, 2, 3), (0.5, 0.25, 2.0))))
    ch = validate_mesh(hexm)
    assert ch.cell_count == 2 * 3 * 4
    pts = ch.points()
    cells = ch.cells()
    # first corner of each cell is its min corner, the 7th (VTK order) its max
    span = pts[cells[:, 6]] - pts[cells[:, 0]]
    assert np.allclose(span, [0.5, 0.25, 2.0])
    assert np.array_equal(lattice_hex_connectivity(dims).reshape(-1, 8), cells)


def test_views_not_copies():
    values = np.arange(8.0)
    m = add_field(uniform_mesh((2, 2, 2)), "f", "vertex", values, external=True)
    ch = validate_mesh(m)
    assert np.shares_memory(ch.fields["f"].values, values)


def test_uniform_bounds():
    ch = validate_mesh(uniform_mesh((3, 5, 2), (1.0, -1.0, 0.0), (0.5, 0.5, 2.0)))
    lo, hi = ch.bounds()
    assert np.allclose(lo, [1.0, -1.0, 0.0])
    assert np.allclose(hi, [2.0, 1.0, 2.0])
