"""Mesh schema on top of :class:`~hybridviz.node.DataNode`.

A mesh channel tree looks like::

    coordsets/coords/type            "uniform" | "explicit"
    coordsets/coords/dims            int64[3]   vertex counts   (uniform)
    coordsets/coords/origin          float64[3]                 (uniform)
    coordsets/coords/spacing         float64[3]                 (uniform)
    coordsets/coords/values/{x,y,z}  float64[N]                 (explicit)
    topologies/mesh/type             "uniform" | "hex" | "tri"
    topologies/mesh/coordset         "coords"
    topologies/mesh/elements/connectivity   int64[8*cells | 3*cells]
    fields/<name>/association        "vertex" | "cell"
    fields/<name>/topology           "mesh"
    fields/<name>/values             float64[...]

Arrays over a uniform grid are flattened with x varying fastest. A uniform
grid may have one axis with a single vertex layer, which makes it a 2D grid
of cells (the output of an axis-aligned slice).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .node import DataNode, Kind, set_path

COORDSET = "coords"
TOPOLOGY = "mesh"

# hexahedron corner order: bottom face counter-clockwise, then top face
HEX_CORNERS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
     [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]
)
HEX_EDGES = np.array(
    [[0, 1], [1, 2], [2, 3], [3, 0],
     [4, 5], [5, 6], [6, 7], [7, 4],
     [0, 4], [1, 5], [2, 6], [3, 7]]
)
NODES_PER_CELL = {"hex": 8, "tri": 3}


class MeshValidationError(ValueError):
    """A tree violates the mesh schema. ``code`` names the violated rule."""

    CODES = (
        "missing-coordset",
        "missing-topology",
        "unknown-topology",
        "field-length",
        "index-range",
        "non-scalar",
        "dims",
        "schema",
    )

    def __init__(self, code, message):
        assert code in self.CODES, code
        super().__init__(f"[{code}] {message}")
        self.code = code


@dataclass
class Field:
    association: str
    values: np.ndarray


@dataclass
class MeshChannel:
    """Validated, typed view of a mesh tree. Arrays are views, not copies."""

    node: DataNode
    kind: str
    dims: tuple | None = None
    origin: np.ndarray | None = None
    spacing: np.ndarray | None = None
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    z: np.ndarray | None = None
    connectivity: np.ndarray | None = None
    fields: dict = field(default_factory=dict)
    vertex_count: int = 0
    cell_count: int = 0

    @property
    def is_uniform(self):
        return self.kind == "uniform"

    @property
    def is_empty(self):
        return self.cell_count == 0

    @property
    def cell_dims(self):
        """Cells per axis of a uniform grid (0 for a single-layer axis)."""
        return tuple(d - 1 for d in self.dims)

    @property
    def flat_axis(self):
        """Index of the single-layer axis of a 2D uniform grid, else None."""
        if not self.is_uniform:
            return None
        for a, d in enumerate(self.dims):
            if d == 1:
                return a
        return None

    def points(self):
        """Vertex coordinates, shape (vertex_count, 3)."""
        if self.is_uniform:
            return uniform_points(self.dims, self.origin, self.spacing)
        return np.column_stack([self.x, self.y, self.z])

    def bounds(self):
        """``(lo, hi)`` corners of the axis-aligned bounding box."""
        if self.is_uniform:
            lo = np.array(self.origin, dtype=float)
            return lo, lo + self.spacing * (np.array(self.dims) - 1)
        if self.vertex_count == 0:
            return np.zeros(3), np.zeros(3)
        p = self.points()
        return p.min(axis=0), p.max(axis=0)

    def cells(self):
        """Connectivity reshaped to (cell_count, nodes_per_cell)."""
        if self.is_uniform:
            raise ValueError("uniform meshes have implicit connectivity")
        return self.connectivity.reshape(-1, NODES_PER_CELL[self.kind])

    def grid(self, name):
        """Field values of a uniform mesh shaped (nz, ny, nx) for vertices or cells."""
        f = self.fields[name]
        if f.association == "vertex":
            shape = self.dims[::-1]
        else:
            shape = tuple(max(d - 1, 1) for d in self.dims[::-1])
        return f.values.reshape(shape)


def _str_leaf(node, path):
    n = node.get(path)
    if n is None or n.kind is not Kind.STRING:
        return None
    return n.value


def _array_leaf(node, path, kind, code="schema"):
    n = node.get(path)
    if n is None:
        raise MeshValidationError(code, f"missing {path}")
    if n.kind is not kind:
        raise MeshValidationError(code, f"{path} must be {kind.name.lower()}")
    return n.value


def _single_child(node, path, code):
    group = node.get(path)
    if group is None or not group.is_object or len(group) == 0:
        raise MeshValidationError(code, f"no entry under {path}/")
    name = group.names()[0]
    return name, group.child(name)


def validate_mesh(channel):
    """Check ``channel`` against the mesh schema and return a typed view.

    Raises
    ------
    MeshValidationError
        With ``code`` one of ``missing-coordset``, ``field-length``,
        ``index-range``, ``non-scalar``, ``unknown-topology``, ``dims``,
        ``missing-topology`` or ``schema``.
    """
    if not isinstance(channel, DataNode) or not channel.is_object:
        raise MeshValidationError("schema", "mesh channel must be an object node")
    _, cset = _single_child(channel, "coordsets", "missing-coordset")
    ctype = _str_leaf(cset, "type")
    mesh = MeshChannel(node=channel, kind="")
    if ctype == "uniform":
        dims = _array_leaf(cset, "dims", Kind.INT64_ARRAY)
        origin = _array_leaf(cset, "origin", Kind.FLOAT64_ARRAY)
        spacing = _array_leaf(cset, "spacing", Kind.FLOAT64_ARRAY)
        if dims.size != 3 or origin.size != 3 or spacing.size != 3:
            raise MeshValidationError("schema", "dims/origin/spacing need 3 components")
        if np.any(dims < 1) or np.sum(dims == 1) > 1:
            raise MeshValidationError(
                "dims", f"uniform dims {tuple(dims)} need >= 2 vertices on at least two axes and >= 1 on all"
            )
        if not np.all(spacing > 0) or not np.all(np.isfinite(origin)):
            raise MeshValidationError("schema", "spacing must be positive and origin finite")
        mesh.dims = tuple(int(d) for d in dims)
        mesh.origin = origin
        mesh.spacing = spacing
        mesh.vertex_count = int(np.prod(dims))
        mesh.cell_count = int(np.prod([d - 1 for d in mesh.dims if d > 1]))
    elif ctype == "explicit":
        xs = [_array_leaf(cset, f"values/{a}", Kind.FLOAT64_ARRAY) for a in "xyz"]
        if not xs[0].size == xs[1].size == xs[2].size:
            raise MeshValidationError("schema", "explicit x/y/z lengths differ")
        mesh.x, mesh.y, mesh.z = xs
        mesh.vertex_count = int(xs[0].size)
    else:
        raise MeshValidationError("schema", f"coordset type {ctype!r} unsupported")

    _, topo = _single_child(channel, "topologies", "missing-topology")
    ttype = _str_leaf(topo, "type")
    if ttype == "uniform":
        if ctype != "uniform":
            raise MeshValidationError("schema", "uniform topology needs a uniform coordset")
    elif ttype in NODES_PER_CELL:
        if ctype != "explicit":
            raise MeshValidationError("schema", f"{ttype} topology needs an explicit coordset")
        conn = _array_leaf(topo, "elements/connectivity", Kind.INT64_ARRAY)
        per = NODES_PER_CELL[ttype]
        if conn.size % per:
            raise MeshValidationError("schema", f"connectivity length {conn.size} not a multiple of {per}")
        if conn.size and (conn.min() < 0 or conn.max() >= mesh.vertex_count):
            bad = conn[(conn < 0) | (conn >= mesh.vertex_count)][0]
            raise MeshValidationError(
                "index-range", f"connectivity index {bad} outside [0, {mesh.vertex_count})"
            )
        mesh.connectivity = conn
        mesh.cell_count = conn.size // per
    else:
        raise MeshValidationError("unknown-topology", f"topology type {ttype!r}")
    mesh.kind = ttype

    fields = channel.get("fields")
    if fields is not None:
        if not fields.is_object:
            raise MeshValidationError("schema", "fields must be an object")
        for name, f in fields.children.items():
            assoc = _str_leaf(f, "association")
            if assoc not in ("vertex", "cell"):
                raise MeshValidationError("schema", f"field {name!r} association {assoc!r}")
            vals = f.get("values")
            if vals is None:
                raise MeshValidationError("schema", f"field {name!r} has no values")
            if vals.is_object:
                raise MeshValidationError("non-scalar", f"field {name!r} has {len(vals)} components")
            if vals.kind is not Kind.FLOAT64_ARRAY:
                raise MeshValidationError("schema", f"field {name!r} values must be float64_array")
            expected = mesh.vertex_count if assoc == "vertex" else mesh.cell_count
            if vals.value.size != expected:
                raise MeshValidationError(
                    "field-length",
                    f"field {name!r}: {vals.value.size} {assoc} values, expected {expected}",
                )
            mesh.fields[name] = Field(assoc, vals.value)
    return mesh


# builders ------------------------------------------------------------------

def uniform_points(dims, origin, spacing):
    axes = [origin[a] + spacing[a] * np.arange(dims[a]) for a in range(3)]
    zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])


def lattice_hex_connectivity(dims):
    """Hexahedral connectivity of a structured (nx, ny, nz)-vertex lattice."""
    nx, ny, nz = dims
    k, j, i = np.meshgrid(
        np.arange(nz - 1), np.arange(ny - 1), np.arange(nx - 1), indexing="ij"
    )
    base = (i + nx * (j + ny * k)).ravel()
    offsets = HEX_CORNERS[:, 0] + nx * (HEX_CORNERS[:, 1] + ny * HEX_CORNERS[:, 2])
    return (base[:, None] + offsets[None, :]).ravel().astype(np.int64)


def _base(coordset_type):
    root = DataNode()
    root[f"coordsets/{COORDSET}/type"] = coordset_type
    return root


def uniform_mesh(dims, origin=(0.0, 0.0, 0.0), spacing=(1.0, 1.0, 1.0)):
    root = _base("uniform")
    root[f"coordsets/{COORDSET}/dims"] = np.asarray(dims, dtype=np.int64)
    root[f"coordsets/{COORDSET}/origin"] = np.asarray(origin, dtype=np.float64)
    root[f"coordsets/{COORDSET}/spacing"] = np.asarray(spacing, dtype=np.float64)
    root[f"topologies/{TOPOLOGY}/type"] = "uniform"
    root[f"topologies/{TOPOLOGY}/coordset"] = COORDSET
    return root


def explicit_mesh(points, connectivity, shape="hex", external=False):
    """Explicit coordset plus a hex or tri topology.

    With ``external=True`` the coordinate columns and connectivity are stored
    without a further copy (the columns are made contiguous first).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    root = _base("explicit")
    for a, name in enumerate("xyz"):
        set_path(root, f"coordsets/{COORDSET}/values/{name}",
                 np.ascontiguousarray(pts[:, a]), external=external)
    root[f"topologies/{TOPOLOGY}/type"] = shape
    root[f"topologies/{TOPOLOGY}/coordset"] = COORDSET
    set_path(root, f"topologies/{TOPOLOGY}/elements/connectivity",
             np.asarray(connectivity, dtype=np.int64).reshape(-1), external=external)
    return root


def empty_mesh(shape="tri"):
    return explicit_mesh(np.zeros((0, 3)), np.zeros(0, dtype=np.int64), shape)


def add_field(root, name, association, values, external=False):
    if association not in ("vertex", "cell"):
        raise ValueError(f"association must be vertex or cell, got {association!r}")
    root[f"fields/{name}/association"] = association
    root[f"fields/{name}/topology"] = TOPOLOGY
    set_path(root, f"fields/{name}/values",
             np.asarray(values, dtype=np.float64).reshape(-1), external=external)
    return root


def uniform_to_hex(mesh):
    """Explicit-hex copy of a 3D uniform mesh, fields carried over."""
    if not mesh.is_uniform or mesh.flat_axis is not None:
        raise ValueError("uniform_to_hex needs a 3D uniform mesh")
    out = explicit_mesh(mesh.points(), lattice_hex_connectivity(mesh.dims), "hex")
    for name, f in mesh.fields.items():
        add_field(out, name, f.association, f.values)
    return out
