"""Receiver-side rendering of reduced data to RGB images.

Two recipes: ``slice_image`` draws a 2D uniform grid or a triangle soup with
an orthographic camera, ``volume_render`` ray-marches a uniform 3D grid with
front-to-back emission-absorption compositing. Output images are binary PPM.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .mesh import add_field, explicit_mesh, uniform_mesh, validate_mesh

log = logging.getLogger(__name__)

# blue -> white -> red
DEFAULT_COLORMAP = (
    (0.0, (0.0, 0.0, 1.0)),
    (0.5, (1.0, 1.0, 1.0)),
    (1.0, (1.0, 0.0, 0.0)),
)
RECIPES = ("slice_image", "volume_render")
OPAQUE = 0.999


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class RenderConfig:
    recipe: str = "slice_image"
    width: int = 256
    height: int = 256
    field: str = "energy"
    colormap: tuple = DEFAULT_COLORMAP
    axis: str = "z"
    samples: int | None = None
    kappa: float = 4.0
    value_range: tuple | None = None

    def __post_init__(self):
        if self.recipe not in RECIPES:
            raise ValueError(f"unknown recipe {self.recipe!r}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image width and height must be >= 1")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.axis not in ("x", "y", "z"):
            raise ValueError(f"view axis must be x, y or z, got {self.axis!r}")


@dataclass
class ImageBuffer:
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8, row 0 at the top

    @classmethod
    def blank(cls, width, height):
        return cls(width, height, np.zeros((height, width, 3), dtype=np.uint8))

    def tobytes(self):
        return np.ascontiguousarray(self.pixels, dtype=np.uint8).tobytes()


def apply_colormap(vhat, colormap=DEFAULT_COLORMAP):
    """RGB in [0, 1] for normalized values ``vhat``; piecewise linear per channel."""
    pos = np.array([p for p, _ in colormap])
    rgb = np.array([c for _, c in colormap])
    v = np.clip(vhat, 0.0, 1.0)
    return np.stack([np.interp(v, pos, rgb[:, ch]) for ch in range(3)], axis=-1)


def to_uint8(rgb):
    return np.clip(np.floor(np.asarray(rgb) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def normalizer(values, value_range=None):
    """Map values to [0, 1] over ``value_range`` or their min/max.

    A constant field maps to 0.5.
    """
    if value_range is not None:
        lo, hi = map(float, value_range)
    elif values.size:
        lo, hi = float(values.min()), float(values.max())
    else:
        lo, hi = 0.0, 1.0
    if hi > lo:
        return lambda v: np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    return lambda v: np.full(np.shape(v), 0.5)


def _transverse(a):
    """Image (horizontal, vertical) axes for a view along axis ``a``."""
    return {0: (1, 2), 1: (0, 2), 2: (0, 1)}[a]


def _pixel_centers(lo_u, hi_u, lo_v, hi_v, width, height):
    u = lo_u + (np.arange(width) + 0.5) / width * (hi_u - lo_u)
    v = hi_v - (np.arange(height) + 0.5) / height * (hi_v - lo_v)
    return u, v


def _field_or_raise(mesh, name):
    if name not in mesh.fields:
        raise RenderError(f"field {name!r} not in mesh (has {list(mesh.fields)})")
    return mesh.fields[name]


def render_slice(cfg, mesh):
    """Render a 2D uniform grid or triangle soup; uncovered pixels stay black."""
    f = _field_or_raise(mesh, cfg.field)
    img = ImageBuffer.blank(cfg.width, cfg.height)
    if mesh.is_empty:
        return img
    norm = normalizer(f.values, cfg.value_range)
    if mesh.is_uniform:
        a = mesh.flat_axis
        if a is None:
            raise RenderError("slice_image needs a 2D grid or a triangle soup")
        iu, iv = _transverse(a)
        lo, hi = mesh.bounds()
        u, v = _pixel_centers(lo[iu], hi[iu], lo[iv], hi[iv], cfg.width, cfg.height)
        uu, vv = np.meshgrid(u, v)
        # 2D field array indexed [v, u]
        g = f.values.reshape(mesh.dims[::-1] if f.association == "vertex"
                             else tuple(max(d - 1, 1) for d in mesh.dims[::-1]))
        g = np.squeeze(g, axis=2 - a)
        su = (uu - lo[iu]) / mesh.spacing[iu]
        sv = (vv - lo[iv]) / mesh.spacing[iv]
        if f.association == "vertex":
            vals = map_coordinates(g, [sv.ravel(), su.ravel()], order=1, mode="nearest")
        else:
            ci = np.clip(np.floor(su).astype(int), 0, g.shape[1] - 1)
            cj = np.clip(np.floor(sv).astype(int), 0, g.shape[0] - 1)
            vals = g[cj, ci].ravel()
        img.pixels[:] = to_uint8(apply_colormap(norm(vals), cfg.colormap)).reshape(
            cfg.height, cfg.width, 3
        )
        return img
    if mesh.kind != "tri":
        raise RenderError(f"slice_image cannot draw a {mesh.kind} mesh")
    return _raster_triangles(cfg, mesh, f, norm, img)


def _raster_triangles(cfg, mesh, f, norm, img):
    pts = mesh.points()
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    flat = int(np.argmin(hi - lo))
    iu, iv = _transverse(flat)
    span_u = hi[iu] - lo[iu] or 1.0
    span_v = hi[iv] - lo[iv] or 1.0
    # continuous pixel coordinates: x to the right, y downwards
    px = (pts[:, iu] - lo[iu]) / span_u * cfg.width - 0.5
    py = (hi[iv] - pts[:, iv]) / span_v * cfg.height - 0.5
    tris = mesh.cells()
    colors = np.zeros((cfg.height, cfg.width, 3))
    covered = np.zeros((cfg.height, cfg.width), dtype=bool)
    eps = 1e-9
    for t, (a, b, c) in enumerate(tris):
        xs = px[[a, b, c]]
        ys = py[[a, b, c]]
        x0, x1 = max(int(np.ceil(xs.min() - eps)), 0), min(int(np.floor(xs.max() + eps)), cfg.width - 1)
        y0, y1 = max(int(np.ceil(ys.min() - eps)), 0), min(int(np.floor(ys.max() + eps)), cfg.height - 1)
        if x0 > x1 or y0 > y1:
            continue
        det = (ys[1] - ys[2]) * (xs[0] - xs[2]) + (xs[2] - xs[1]) * (ys[0] - ys[2])
        if det == 0:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        l0 = ((ys[1] - ys[2]) * (gx - xs[2]) + (xs[2] - xs[1]) * (gy - ys[2])) / det
        l1 = ((ys[2] - ys[0]) * (gx - xs[2]) + (xs[0] - xs[2]) * (gy - ys[2])) / det
        l2 = 1.0 - l0 - l1
        inside = (l0 >= -eps) & (l1 >= -eps) & (l2 >= -eps)
        if not inside.any():
            continue
        if f.association == "vertex":
            vv = f.values
            val = l0 * vv[a] + l1 * vv[b] + l2 * vv[c]
        else:
            val = np.full(gx.shape, f.values[t])
        rgb = apply_colormap(norm(val), cfg.colormap)
        sub = colors[y0:y1 + 1, x0:x1 + 1]
        sub[inside] = rgb[inside]
        covered[y0:y1 + 1, x0:x1 + 1] |= inside
    img.pixels[covered] = to_uint8(colors[covered])
    return img


def volume_normalizer(values, value_range=None):
    """Opacity normalization: zero stays transparent, the range spans 0 and the extremes."""
    if value_range is not None:
        return normalizer(values, value_range)
    lo = min(float(values.min()), 0.0) if values.size else 0.0
    hi = max(float(values.max()), 0.0) if values.size else 0.0
    if hi > lo:
        return lambda v: np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    return lambda v: np.zeros(np.shape(v))


def render_volume(cfg, mesh, return_alpha=False):
    """Orthographic emission-absorption ray march along ``cfg.axis``.

    Rays start on the low face of the grid and travel toward increasing
    coordinate. Per sample, ``alpha = 1 - exp(-kappa * vhat * ds)`` with the
    step length ``ds`` in world units; accumulation stops once opacity
    exceeds 0.999.
    """
    if not mesh.is_uniform or mesh.flat_axis is not None:
        raise RenderError("volume_render needs a uniform 3D grid")
    f = _field_or_raise(mesh, cfg.field)
    a = "xyz".index(cfg.axis)
    iu, iv = _transverse(a)
    lo, hi = mesh.bounds()
    ncells = mesh.dims[a] - 1
    nsamples = cfg.samples or 2 * ncells
    ds = (hi[a] - lo[a]) / nsamples
    u, v = _pixel_centers(lo[iu], hi[iu], lo[iv], hi[iv], cfg.width, cfg.height)
    uu, vv = np.meshgrid(u, v)
    grid = mesh.grid(cfg.field)                      # (nz, ny, nx)
    norm = volume_normalizer(f.values, cfg.value_range)

    color = np.zeros((cfg.height, cfg.width, 3))
    alpha = np.zeros((cfg.height, cfg.width))
    coords = np.zeros((3, cfg.height * cfg.width))
    for k in range(nsamples):
        pos = lo[a] + (k + 0.5) * ds
        world = {a: pos, iu: uu.ravel(), iv: vv.ravel()}
        for ax in range(3):
            s = (world[ax] - lo[ax]) / mesh.spacing[ax]
            if f.association == "cell":
                s = np.clip(np.floor(s), 0, mesh.dims[ax] - 2)
            coords[2 - ax] = s
        order = 1 if f.association == "vertex" else 0
        vals = map_coordinates(grid, coords, order=order, mode="nearest")
        vhat = norm(vals).reshape(cfg.height, cfg.width)
        active = alpha <= OPAQUE
        if not active.any():
            break
        a_k = np.where(active, 1.0 - np.exp(-cfg.kappa * vhat * ds), 0.0)
        weight = (1.0 - alpha) * a_k
        color += weight[..., None] * apply_colormap(vhat, cfg.colormap)
        alpha += weight
    img = ImageBuffer(cfg.width, cfg.height, to_uint8(color))
    return (img, alpha) if return_alpha else img


def render(cfg, mesh):
    if cfg.recipe == "volume_render":
        return render_volume(cfg, mesh)
    return render_slice(cfg, mesh)


def write_image(img, path):
    """Write ``img`` as binary PPM (P6)."""
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.tobytes())
    return path


def read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    magic, w, h, maxval, rest = data.split(maxsplit=4)
    if magic != b"P6" or maxval != b"255":
        raise ValueError(f"{path} is not an 8-bit P6 PPM")
    w, h = int(w), int(h)
    return ImageBuffer(w, h, np.frombuffer(rest[: 3 * w * h], dtype=np.uint8).reshape(h, w, 3).copy())


# assembling multi-rank steps --------------------------------------------------

def _uniform2d_to_tri(mesh):
    a = mesh.flat_axis
    pts = mesh.points()
    nd = [d for i, d in enumerate(mesh.dims) if i != a]
    n0, n1 = nd
    j, i = np.meshgrid(np.arange(n1 - 1), np.arange(n0 - 1), indexing="ij")
    v00 = (i + n0 * j).ravel()
    v10, v01, v11 = v00 + 1, v00 + n0, v00 + n0 + 1
    conn = np.stack([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)], axis=1)
    out = explicit_mesh(pts, conn.ravel(), "tri")
    for name, f in mesh.fields.items():
        vals = f.values if f.association == "vertex" else np.repeat(f.values, 2)
        add_field(out, name, f.association, vals)
    return validate_mesh(out)


def merge_parts(parts):
    """Combine per-rank reduced meshes of one step into one renderable mesh.

    Identical uniform grids (a resample onto shared bounds) are merged sample
    by sample using their ``valid/`` masks; other 2D pieces are concatenated
    as triangle soups.
    """
    meshes = [validate_mesh(p) if not hasattr(p, "fields") else p for p in parts]
    nonempty = [m for m in meshes if not m.is_empty]
    if not nonempty:
        return meshes[0]
    if len(nonempty) == 1:
        return nonempty[0]
    first = nonempty[0]
    same_grid = all(
        m.is_uniform and m.dims == first.dims
        and np.array_equal(m.origin, first.origin) and np.array_equal(m.spacing, first.spacing)
        for m in nonempty
    )
    if same_grid:
        out = uniform_mesh(first.dims, first.origin, first.spacing)
        for name, f in first.fields.items():
            vals = np.zeros_like(f.values)
            filled = np.zeros(vals.size, dtype=bool)
            for m in nonempty:
                mask = m.node.get(f"valid/{f.association}")
                ok = np.ones(vals.size, bool) if mask is None else mask.value.astype(bool)
                take = ok & ~filled
                vals[take] = m.fields[name].values[take]
                filled |= take
            add_field(out, name, f.association, vals)
        return validate_mesh(out)
    if any(m.is_uniform and m.flat_axis is None for m in nonempty):
        biggest = max(nonempty, key=lambda m: m.cell_count)
        log.warning("parts are 3D grids with different geometry; rendering the largest only")
        return biggest
    tris = [m if m.kind == "tri" else _uniform2d_to_tri(m) for m in nonempty]
    offset = 0
    pts, conn = [], []
    for m in tris:
        pts.append(m.points())
        conn.append(m.connectivity + offset)
        offset += m.vertex_count
    out = explicit_mesh(np.concatenate(pts), np.concatenate(conn), "tri")
    for name, f in tris[0].fields.items():
        add_field(out, name, f.association, np.concatenate([m.fields[name].values for m in tris]))
    return validate_mesh(out)
