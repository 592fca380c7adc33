"""Resampling of hexahedral or uniform meshes onto a uniform grid.

Vertex fields are interpolated trilinearly inside the containing source cell;
the parametric coordinates of a sample in a general hexahedron come from
Newton iteration on the inverse trilinear map. Cell fields are sampled at the
output cell centers and take the containing source cell's value.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import HEX_CORNERS, add_field, uniform_mesh, uniform_points

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 20
INSIDE_TOL = 1e-9
CHUNK = 16384


class ResampleError(ValueError):
    pass


@dataclass
class Located:
    """Result of point location: containing cell, parametric coords, flags."""

    cell: np.ndarray       # (P,) int, -1 when outside the mesh
    xi: np.ndarray         # (P, 3)
    fallback: np.ndarray   # (P,) bool, Newton failed; use nearest corner


def trilinear_weights(xi):
    """Shape function values of the 8 hex corners at parametric ``xi`` (P, 3)."""
    xi = np.asarray(xi, dtype=float)
    w = np.ones((xi.shape[0], 8))
    for c, bits in enumerate(HEX_CORNERS):
        for a in range(3):
            w[:, c] *= xi[:, a] if bits[a] else 1.0 - xi[:, a]
    return w


def _weight_gradients(xi):
    # dN_c/dxi_a, shape (P, 8, 3)
    g = np.ones((xi.shape[0], 8, 3))
    for c, bits in enumerate(HEX_CORNERS):
        for a in range(3):
            for b in range(3):
                if a == b:
                    g[:, c, a] *= 1.0 if bits[b] else -1.0
                else:
                    g[:, c, a] *= xi[:, b] if bits[b] else 1.0 - xi[:, b]
    return g


def invert_trilinear(corners, p, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    """Parametric coordinates of points ``p`` (P, 3) in hexes ``corners`` (P, 8, 3).

    Returns ``(xi, converged)``.
    """
    n = p.shape[0]
    xi = np.full((n, 3), 0.5)
    converged = np.zeros(n, dtype=bool)
    active = np.arange(n)
    for _ in range(max_iter):
        if active.size == 0:
            break
        c = corners[active]
        active_xi = xi[active]
        resid = p[active] - np.einsum("pc,pca->pa", trilinear_weights(active_xi), c)
        jac = np.einsum("pcb,pca->pab", _weight_gradients(active_xi), c)
        det = np.linalg.det(jac)
        ok = np.abs(det) > 1e-300
        jac[~ok] = np.eye(3)
        delta = np.linalg.solve(jac, resid[..., None])[..., 0]
        delta[~ok] = np.nan
        xi[active] = active_xi + delta
        step = np.max(np.abs(delta), axis=1)
        done = step < tol
        converged[active[done]] = True
        bad = ~np.isfinite(step) | (np.max(np.abs(xi[active]), axis=1) > 1e6)
        active = active[~done & ~bad]
    return xi, converged


class HexLocator:
    """Uniform spatial hash over hexahedron bounding boxes."""

    def __init__(self, points, cells):
        self.points = points
        self.cells = cells
        corners = points[cells]                      # (C, 8, 3)
        self.corners = corners
        self.lo = corners.min(axis=1)
        self.hi = corners.max(axis=1)
        ncell = cells.shape[0]
        self.g_lo = self.lo.min(axis=0) if ncell else np.zeros(3)
        g_hi = self.hi.max(axis=0) if ncell else np.ones(3)
        extent = np.where(g_hi - self.g_lo > 0, g_hi - self.g_lo, 1.0)
        self.scale = float(extent.max())
        nb = max(1, min(256, int(round(ncell ** (1 / 3)))))
        self.nbins = np.array([nb, nb, nb])
        self.bin_size = extent / self.nbins
        self._build()

    def _bin_of(self, p):
        b = np.floor((p - self.g_lo) / self.bin_size).astype(np.int64)
        return np.clip(b, 0, self.nbins - 1)

    def _flat(self, b):
        return b[..., 0] + self.nbins[0] * (b[..., 1] + self.nbins[1] * b[..., 2])

    def _build(self):
        blo = self._bin_of(self.lo)
        bhi = self._bin_of(self.hi)
        span = bhi - blo + 1
        counts = span.prod(axis=1)
        total = int(counts.sum())
        cell_rep = np.repeat(np.arange(len(counts)), counts)
        starts = np.cumsum(counts) - counts
        local = np.arange(total) - np.repeat(starts, counts)
        sx = span[cell_rep, 0]
        sy = span[cell_rep, 1]
        off = np.column_stack([local % sx, (local // sx) % sy, local // (sx * sy)])
        flat = self._flat(blo[cell_rep] + off)
        order = np.argsort(flat, kind="stable")
        self.bin_cells = cell_rep[order]
        nflat = int(self.nbins.prod())
        self.bin_start = np.searchsorted(flat[order], np.arange(nflat + 1))

    def locate(self, p):
        out = Located(
            cell=np.full(len(p), -1, dtype=np.int64),
            xi=np.zeros((len(p), 3)),
            fallback=np.zeros(len(p), dtype=bool),
        )
        for s in range(0, len(p), CHUNK):
            self._locate_chunk(p[s:s + CHUNK], out, s)
        return out

    def _locate_chunk(self, p, out, offset):
        if self.cells.shape[0] == 0:
            return
        tol = INSIDE_TOL * self.scale
        flat = self._flat(self._bin_of(p))
        counts = self.bin_start[flat + 1] - self.bin_start[flat]
        pt = np.repeat(np.arange(len(p)), counts)
        starts = np.repeat(self.bin_start[flat], counts)
        local = np.arange(len(pt)) - np.repeat(np.cumsum(counts) - counts, counts)
        cand = self.bin_cells[starts + local]
        inbox = np.all((p[pt] >= self.lo[cand] - tol) & (p[pt] <= self.hi[cand] + tol), axis=1)
        pt, cand = pt[inbox], cand[inbox]
        if pt.size == 0:
            return
        xi, conv = invert_trilinear(self.corners[cand], p[pt])
        inside = conv & np.all((xi >= -INSIDE_TOL) & (xi <= 1 + INSIDE_TOL), axis=1)
        # first inside candidate per point wins (candidates are in cell order)
        hit = np.flatnonzero(inside)
        first_pt, first_idx = np.unique(pt[hit], return_index=True)
        sel = hit[first_idx]
        out.cell[offset + first_pt] = cand[sel]
        out.xi[offset + first_pt] = np.clip(xi[sel], 0.0, 1.0)
        # bbox candidates whose Newton solve failed, for points still unplaced
        miss = np.flatnonzero(~conv)
        if miss.size:
            placed = np.zeros(len(p), dtype=bool)
            placed[first_pt] = True
            miss = miss[~placed[pt[miss]]]
            fpt, fidx = np.unique(pt[miss], return_index=True)
            fsel = miss[fidx]
            out.cell[offset + fpt] = cand[fsel]
            out.fallback[offset + fpt] = True


def _nearest_corner_weights(corners, p):
    d = np.linalg.norm(corners - p[:, None, :], axis=2)
    w = np.zeros((p.shape[0], 8))
    w[np.arange(p.shape[0]), np.argmin(d, axis=1)] = 1.0
    return w


def _locate_uniform(mesh, p):
    dims = np.array(mesh.dims)
    s = (p - mesh.origin) / mesh.spacing
    inside = np.all((s >= -INSIDE_TOL) & (s <= dims - 1 + INSIDE_TOL), axis=1)
    i = np.clip(np.floor(s).astype(np.int64), 0, dims - 2)
    xi = np.clip(s - i, 0.0, 1.0)
    nx, ny = dims[0] - 1, dims[1] - 1
    cell = np.where(inside, i[:, 0] + nx * (i[:, 1] + ny * i[:, 2]), -1)
    return Located(cell=cell, xi=xi, fallback=np.zeros(len(p), dtype=bool)), i


def _uniform_corner_ids(dims, ijk):
    nx, ny = dims[0], dims[1]
    c = ijk[:, None, :] + HEX_CORNERS[None, :, :]
    return c[..., 0] + nx * (c[..., 1] + ny * c[..., 2])


def resample_to_grid(dims, bounds, mesh):
    """Resample ``mesh`` onto a uniform grid with ``dims`` vertices per axis.

    Parameters
    ----------
    dims : 3 ints >= 2
    bounds : ``"auto"`` or ``(xmin, ymin, zmin, xmax, ymax, zmax)``
    mesh : MeshChannel, uniform 3D or explicit hex

    Returns
    -------
    (DataNode, dict)
        The uniform mesh and counters ``out_of_domain`` and
        ``newton_fallbacks``. Samples outside the source mesh are 0.0; when
        any exist, per-sample validity masks are stored under ``valid/``.
    """
    dims = np.asarray(dims, dtype=np.int64).reshape(-1)
    if dims.size != 3 or np.any(dims < 2):
        raise ResampleError(f"resample dims {tuple(dims)} must be 3 values >= 2")
    if isinstance(bounds, str):
        if bounds != "auto":
            raise ResampleError(f"bounds must be 'auto' or 6 numbers, got {bounds!r}")
        lo, hi = mesh.bounds()
    else:
        b = np.asarray(bounds, dtype=float).reshape(-1)
        if b.size != 6:
            raise ResampleError("bounds need 6 numbers")
        lo, hi = b[:3], b[3:]
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    if not np.all(hi > lo):
        raise ResampleError(f"degenerate bounds {lo} .. {hi}")
    if mesh.is_uniform and mesh.flat_axis is not None:
        raise ResampleError("cannot resample a 2D grid")
    spacing = (hi - lo) / (dims - 1)

    out = uniform_mesh(dims, lo, spacing)
    stats = {"out_of_domain": 0, "newton_fallbacks": 0}
    cdims = dims - 1
    samples = {
        "vertex": lambda: uniform_points(dims, lo, spacing),
        "cell": lambda: uniform_points(cdims, lo + 0.5 * spacing, spacing),
    }
    locator = None
    masks = {}
    for assoc in ("vertex", "cell"):
        names = [n for n, f in mesh.fields.items() if f.association == assoc]
        if not names and assoc == "cell":
            continue
        p = samples[assoc]()
        if mesh.is_uniform:
            loc, ijk = _locate_uniform(mesh, p)
            corner_ids = _uniform_corner_ids(mesh.dims, ijk) if assoc == "vertex" else None
        else:
            if locator is None:
                locator = HexLocator(mesh.points(), mesh.cells())
            loc = locator.locate(p)
            corner_ids = mesh.cells()[np.maximum(loc.cell, 0)] if assoc == "vertex" else None
        found = loc.cell >= 0
        stats["out_of_domain"] += int((~found).sum())
        if assoc == "vertex":
            weights = trilinear_weights(loc.xi)
            fb = loc.fallback & found
            if fb.any():
                corners = mesh.points()[corner_ids[fb]]
                weights[fb] = _nearest_corner_weights(corners, p[fb])
                stats["newton_fallbacks"] += int(fb.sum())
        masks[assoc] = found
        for name in names:
            src = mesh.fields[name].values
            vals = np.zeros(len(p))
            if assoc == "vertex":
                vals[found] = np.einsum("pc,pc->p", weights[found], src[corner_ids[found]])
            else:
                vals[found] = src[loc.cell[found]]
            add_field(out, name, assoc, vals)
    # fields keep the source order
    if "fields" in out:
        fields = out["fields"]
        for name in mesh.fields:
            node = fields.child(name)
            fields.remove(name)
            fields.add_child(name, node)
    if stats["out_of_domain"]:
        for assoc, found in masks.items():
            out[f"valid/{assoc}"] = found.astype(np.uint8)
    return out, stats
