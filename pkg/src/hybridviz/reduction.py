"""In-line data reduction: field selection, slicing and resampling.

A :class:`PipelineSpec` is an ordered list of stages. :func:`run_pipeline`
applies them to a validated mesh channel and returns the reduced tree with
provenance counters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import (
    HEX_EDGES,
    add_field,
    empty_mesh,
    explicit_mesh,
    uniform_mesh,
    uniform_to_hex,
    validate_mesh,
)
from .node import DataNode
from .resample import ResampleError, resample_to_grid

AXES = {"x": 0, "y": 1, "z": 2}


class PipelineError(Exception):
    """A reduction stage could not run."""


class StageMismatchError(PipelineError):
    """Stage type not applicable to the mesh type."""


class MissingFieldError(PipelineError, KeyError):
    pass


class SliceBoundsError(PipelineError):
    pass


@dataclass(frozen=True)
class SelectFields:
    keep: tuple


@dataclass(frozen=True)
class Slice:
    """Axis-aligned (``axis`` + ``coordinate``) or general plane (``origin`` + ``normal``)."""

    axis: str | None = None
    coordinate: float | None = None
    origin: tuple | None = None
    normal: tuple | None = None

    def __post_init__(self):
        if self.axis is not None:
            if self.axis not in AXES or self.coordinate is None:
                raise ValueError("axis-aligned slice needs axis in x/y/z and a coordinate")
        else:
            if self.origin is None or self.normal is None:
                raise ValueError("plane slice needs origin and normal")
            if not np.linalg.norm(np.asarray(self.normal, float)) > 0:
                raise ValueError("plane normal must be non-zero")

    @property
    def axis_aligned(self):
        return self.axis is not None

    def plane(self):
        if self.axis_aligned:
            n = np.zeros(3)
            n[AXES[self.axis]] = 1.0
            return n * self.coordinate, n
        return np.asarray(self.origin, float), np.asarray(self.normal, float)


@dataclass(frozen=True)
class Resample:
    dims: tuple
    bounds: object = "auto"

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 2 for d in self.dims):
            raise ValueError(f"resample dims {self.dims} must be 3 values >= 2")


@dataclass
class PipelineSpec:
    stages: list = field(default_factory=list)
    name: str = "pipeline"

    def is_identity(self):
        return all(isinstance(s, SelectFields) for s in self.stages)


@dataclass
class ReducedOutput:
    channel: DataNode
    mesh: object
    provenance: dict


# stages ----------------------------------------------------------------------

def select_fields(keep, mesh):
    """Restrict ``mesh`` to the fields named in ``keep``; geometry nodes are shared."""
    missing = [k for k in keep if k not in mesh.fields]
    if missing:
        raise MissingFieldError(f"fields not present in mesh: {missing}")
    keep = set(keep)
    src = mesh.node
    out = DataNode()
    for name, child in src.children.items():
        if name != "fields":
            out.add_child(name, child)
            continue
        fields = out.add_child("fields", DataNode())
        for fname, fnode in child.children.items():
            if fname in keep:
                fields.add_child(fname, fnode)
    return out


def _carry_empty(mesh, shape="tri"):
    out = empty_mesh(shape)
    for name, f in mesh.fields.items():
        add_field(out, name, f.association, np.zeros(0))
    return out


def slice_axis_aligned(axis, coordinate, mesh, exclusive_upper=False):
    """Cut a 3D uniform grid with the plane ``axis = coordinate``.

    The result is a uniform grid one vertex layer thick along ``axis``: vertex
    fields are interpolated linearly between the two bounding layers, cell
    fields take the value of the cell layer containing the plane.

    With ``exclusive_upper`` a plane lying exactly on the grid's upper face
    is treated as out of bounds, so that partitions sharing a face do not
    both claim it.
    """
    a = AXES[axis] if isinstance(axis, str) else int(axis)
    if not mesh.is_uniform or mesh.flat_axis is not None:
        raise StageMismatchError("axis-aligned slice needs a 3D uniform grid")
    h = float(mesh.spacing[a])
    lo = float(mesh.origin[a])
    n = mesh.dims[a]
    hi = lo + h * (n - 1)
    c = float(coordinate)
    if not lo <= c <= hi or (exclusive_upper and c == hi):
        raise SliceBoundsError(f"coordinate {c} outside [{lo}, {hi}] on axis {'xyz'[a]}")
    s = (c - lo) / h
    k = min(int(np.floor(s)), n - 2)
    w = s - k
    np_axis = 2 - a

    dims = list(mesh.dims)
    dims[a] = 1
    origin = np.array(mesh.origin, dtype=float)
    origin[a] = c
    out = uniform_mesh(dims, origin, mesh.spacing)
    for name, f in mesh.fields.items():
        g = mesh.grid(name)
        if f.association == "vertex":
            v0 = np.take(g, k, axis=np_axis)
            if w == 0.0:
                vals = v0
            else:
                v1 = np.take(g, k + 1, axis=np_axis)
                vals = (1.0 - w) * v0 + w * v1
        else:
            vals = np.take(g, k, axis=np_axis)
        add_field(out, name, f.association, np.ascontiguousarray(vals))
    return out


def _plane_basis(n):
    helper = np.eye(3)[np.argmin(np.abs(n))]
    u = np.cross(n, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(n, u)


def slice_plane_hex(origin, normal, mesh):
    """Cut an explicit-hex mesh with a plane; returns ``(triangle soup, stats)``.

    Per cell, corners are classified by the sign of their signed distance
    (negative vs non-negative). Each of the 12 edges joining the two classes
    contributes one point at ``t = d_a / (d_a - d_b)``; the points are
    ordered by angle around their centroid in the plane and fanned into
    triangles. Degenerate cells (repeated corner ids) are skipped and counted.
    """
    if mesh.kind != "hex":
        raise StageMismatchError(f"plane slice needs a hex mesh, got {mesh.kind}")
    n = np.asarray(normal, dtype=float)
    norm = np.linalg.norm(n)
    if not norm > 0:
        raise ValueError("plane normal must be non-zero")
    n = n / norm
    o = np.asarray(origin, dtype=float)
    stats = {"degenerate_cells": 0}
    if mesh.cell_count == 0:
        return _carry_empty(mesh), stats

    cells = mesh.cells()
    srt = np.sort(cells, axis=1)
    degenerate = np.any(srt[:, 1:] == srt[:, :-1], axis=1)
    stats["degenerate_cells"] = int(degenerate.sum())

    pts = mesh.points()
    d = (pts - o) @ n
    dc = d[cells]
    neg = dc < 0
    cut = np.flatnonzero(neg.any(axis=1) & ~neg.all(axis=1) & ~degenerate)
    if cut.size == 0:
        return _carry_empty(mesh), stats

    cc = cells[cut]                                  # (C, 8)
    ea, eb = cc[:, HEX_EDGES[:, 0]], cc[:, HEX_EDGES[:, 1]]   # (C, 12)
    da, db = d[ea], d[eb]
    crosses = (da < 0) != (db < 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(crosses, da / (da - db), 0.0)
    P = pts[ea] + t[..., None] * (pts[eb] - pts[ea])  # (C, 12, 3)

    # order crossing points by angle about the centroid in the plane
    u, v = _plane_basis(n)
    cnt = crosses.sum(axis=1)
    centroid = (P * crosses[..., None]).sum(axis=1) / cnt[:, None]
    rel = P - centroid[:, None, :]
    ang = np.arctan2(rel @ v, rel @ u)
    ang = np.where(crosses, ang, np.inf)
    order = np.argsort(ang, axis=1, kind="stable")
    valid = np.take_along_axis(crosses, order, axis=1)
    Ps = np.take_along_axis(P, order[..., None], axis=1)
    # drop exact repeats (plane through a corner)
    same = np.all(Ps[:, 1:] == Ps[:, :-1], axis=2) & valid[:, 1:]
    valid[:, 1:] &= ~same
    order2 = np.argsort(~valid, axis=1, kind="stable")
    valid = np.take_along_axis(valid, order2, axis=1)
    order = np.take_along_axis(order, order2, axis=1)
    Ps = np.take_along_axis(Ps, order2[..., None], axis=1)
    k = valid.sum(axis=1)

    ids = np.cumsum(valid.ravel()).reshape(valid.shape) - 1
    verts = Ps[valid]
    j = np.arange(10)
    tri_ok = (j[None, :] + 2) < k[:, None]              # (C, 10)
    tris = np.stack(
        [np.broadcast_to(ids[:, :1], (len(cut), 10)), ids[:, 1:11], ids[:, 2:12]], axis=2
    )
    conn = tris[tri_ok]
    tri_cell = np.broadcast_to(cut[:, None], (len(cut), 10))[tri_ok]

    out = explicit_mesh(verts, conn.ravel(), "tri")
    ta = np.take_along_axis(t, order, axis=1)[valid]
    ia = np.take_along_axis(ea, order, axis=1)[valid]
    ib = np.take_along_axis(eb, order, axis=1)[valid]
    for name, f in mesh.fields.items():
        if f.association == "vertex":
            vals = f.values[ia] + ta * (f.values[ib] - f.values[ia])
        else:
            vals = f.values[tri_cell]
        add_field(out, name, f.association, vals)
    return out, stats


# pipeline --------------------------------------------------------------------

def _apply(stage, mesh, stats, exclusive_upper):
    if isinstance(stage, SelectFields):
        return select_fields(stage.keep, mesh)
    if isinstance(stage, Slice):
        if mesh.kind == "tri" or (mesh.is_uniform and mesh.flat_axis is not None):
            raise StageMismatchError(f"cannot slice a {'2D grid' if mesh.is_uniform else 'triangle soup'}")
        if mesh.is_uniform and stage.axis_aligned:
            try:
                return slice_axis_aligned(stage.axis, stage.coordinate, mesh, exclusive_upper)
            except SliceBoundsError:
                return _carry_empty(mesh)
        if mesh.is_uniform:
            mesh = validate_mesh(uniform_to_hex(mesh))
        origin, normal = stage.plane()
        out, s = slice_plane_hex(origin, normal, mesh)
        stats["degenerate_cells"] += s["degenerate_cells"]
        return out
    if isinstance(stage, Resample):
        if mesh.kind == "tri" or (mesh.is_uniform and mesh.flat_axis is not None):
            raise StageMismatchError("resample needs a 3D uniform or hex mesh")
        if mesh.is_empty and isinstance(stage.bounds, str):
            return _carry_empty(mesh)
        try:
            out, s = resample_to_grid(stage.dims, stage.bounds, mesh)
        except ResampleError as e:
            raise PipelineError(str(e)) from e
        stats["out_of_domain"] += s["out_of_domain"]
        stats["newton_fallbacks"] += s["newton_fallbacks"]
        return out
    raise PipelineError(f"unknown stage {stage!r}")


def run_pipeline(spec, mesh, exclusive_upper=False):
    """Apply ``spec``'s stages in order to a validated mesh.

    ``exclusive_upper`` is forwarded to axis-aligned slices (see
    :func:`slice_axis_aligned`); a slice plane outside a partition yields an
    empty, still valid, output instead of an error.
    """
    stats = {"degenerate_cells": 0, "out_of_domain": 0, "newton_fallbacks": 0}
    input_cells = mesh.cell_count
    for stage in spec.stages:
        node = _apply(stage, mesh, stats, exclusive_upper)
        mesh = validate_mesh(node)
    provenance = {"input_cells": input_cells, "output_cells": mesh.cell_count, **stats}
    return ReducedOutput(channel=mesh.node, mesh=mesh, provenance=provenance)
