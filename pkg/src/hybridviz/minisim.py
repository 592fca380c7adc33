"""Synthetic Sedov-like blast fields on a slab-partitioned unit cube.

Not a hydro solver: the fields are an analytic Gaussian shell of radius
``t**0.4`` centred on the corner ``(0, 0, 0)``, which keeps every downstream
interpolation checkable against a closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import add_field, empty_mesh, explicit_mesh, lattice_hex_connectivity, uniform_mesh

GAMMA = 1.4
# keeps energy, and thus density - 1 and pressure, strictly positive in float64
ENERGY_FLOOR = 1e-12


@dataclass(frozen=True)
class SimConfig:
    n: int = 32
    topology: str = "uniform"
    steps: int = 10
    dt: float | None = None
    partitions: int = 1
    width: float = 0.05

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("sim.n must be >= 2")
        if self.steps < 1:
            raise ValueError("sim.steps must be >= 1")
        if self.partitions < 1:
            raise ValueError("sim.partitions must be >= 1")
        if self.topology not in ("uniform", "explicit-hex"):
            raise ValueError(f"unknown sim.topology {self.topology!r}")
        if not self.width > 0:
            raise ValueError("sim.width must be positive")

    @property
    def step_dt(self):
        return self.dt if self.dt is not None else 1.0 / self.steps

    def time_of(self, step):
        return (step + 1) * self.step_dt


def shock_radius(t):
    return float(t) ** 0.4


def energy(r, t, width):
    e = np.exp(-(((r - shock_radius(t)) / width) ** 2))
    return np.maximum(e, ENERGY_FLOOR)


def partition_bounds(cfg, rank):
    """Half-open range of z cell layers owned by ``rank``; sizes differ by at most 1."""
    if not 0 <= rank < cfg.partitions:
        raise ValueError(f"rank {rank} outside [0, {cfg.partitions})")
    base, extra = divmod(cfg.n, cfg.partitions)
    start = rank * base + min(rank, extra)
    return start, start + base + (1 if rank < extra else 0)


def _lattice_points(ij, k, h):
    zz, yy, xx = np.meshgrid(k * h, ij * h, ij * h, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])


def generate_step(cfg, rank, t):
    """Mesh channel for ``rank``'s slab at time ``t``.

    Fields: ``energy`` and ``density`` on vertices, ``pressure`` on cells.
    Arrays are handed over as external (no further copy, read-only).
    """
    k0, k1 = partition_bounds(cfg, rank)
    if k0 == k1:
        out = empty_mesh("hex")
        for name, assoc in (("energy", "vertex"), ("density", "vertex"), ("pressure", "cell")):
            add_field(out, name, assoc, np.zeros(0))
        return out
    h = 1.0 / cfg.n
    dims = (cfg.n + 1, cfg.n + 1, k1 - k0 + 1)
    origin = (0.0, 0.0, k0 * h)
    spacing = (h, h, h)
    # coordinates from global lattice indices, so shared faces match bit-for-bit
    pts = _lattice_points(np.arange(cfg.n + 1), np.arange(k0, k1 + 1), h)
    centers = _lattice_points(np.arange(cfg.n) + 0.5, np.arange(k0, k1) + 0.5, h)

    e = energy(np.linalg.norm(pts, axis=1), t, cfg.width)
    rho = 1.0 + 0.5 * e
    ec = energy(np.linalg.norm(centers, axis=1), t, cfg.width)
    p = (GAMMA - 1.0) * (1.0 + 0.5 * ec) * ec

    if cfg.topology == "uniform":
        out = uniform_mesh(dims, origin, spacing)
    else:
        out = explicit_mesh(pts, lattice_hex_connectivity(dims), "hex", external=True)
    add_field(out, "energy", "vertex", e, external=True)
    add_field(out, "density", "vertex", rho, external=True)
    add_field(out, "pressure", "cell", p, external=True)
    return out
