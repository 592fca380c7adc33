"""Generators shared by the unit and acceptance tests."""
import numpy as np

from hybridviz.mesh import add_field, explicit_mesh, lattice_hex_connectivity, uniform_points
from hybridviz.node import DataNode


def random_tree(rng, depth=0, max_depth=6, max_children=4, max_array=64):
    """A random DataNode tree covering every kind tag."""
    node = DataNode()
    for i in range(int(rng.integers(0, max_children + 1))):
        name = f"c{i}_{int(rng.integers(0, 1000))}"
        kind = int(rng.integers(0, 7))
        if kind == 0 and depth < max_depth:
            node.add_child(name, random_tree(rng, depth + 1, max_depth, max_children, max_array))
            continue
        n = int(rng.integers(0, max_array + 1))
        if kind == 1:
            value = int(rng.integers(-2**62, 2**62))
        elif kind == 2:
            value = float(rng.standard_normal() * 10.0 ** rng.integers(-300, 300))
        elif kind == 3:
            value = "".join(chr(int(c)) for c in rng.integers(32, 0x3000, size=int(rng.integers(0, 12))))
        elif kind == 4:
            value = rng.integers(-2**62, 2**62, size=n, dtype=np.int64)
        elif kind == 5:
            # raw bit patterns, including NaN payloads and signed zeros
            value = rng.integers(0, 2**63, size=n, dtype=np.int64).view(np.float64)
        else:
            value = rng.integers(0, 256, size=n, dtype=np.uint8)
        node.add_child(name, DataNode.leaf(value))
    return node


def perturbed_hex_mesh(rng, n=6, jitter=0.2, lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)):
    """Explicit hex lattice with interior vertices jittered by up to ``jitter`` cells.

    Boundary vertices stay on the box faces so the domain is exactly the box.
    """
    dims = (n + 1,) * 3
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    h = (hi - lo) / n
    pts = uniform_points(dims, lo, h)
    idx = uniform_points(dims, (0, 0, 0), (1, 1, 1))
    interior = np.all((idx > 0) & (idx < n), axis=1)
    pts[interior] += rng.uniform(-jitter, jitter, size=(interior.sum(), 3)) * h
    return explicit_mesh(pts, lattice_hex_connectivity(dims), "hex")


def linear_field(p, coef=(2.0, 3.0, -1.0), c0=0.0):
    return np.asarray(p) @ np.asarray(coef) + c0


def with_vertex_field(root, points, name="f", **kw):
    add_field(root, name, "vertex", linear_field(points, **kw))
    return root
