"""
Reducing a blast mesh before it leaves the node
===============================================

One time step of the synthetic blast on a 96^3 grid carries three fields.
Selecting one field and slicing it through the middle shrinks the payload
by roughly two orders of magnitude; resampling onto 30^3 cells keeps a
coarse 3D volume instead.
"""
import numpy as np

from hybridviz import PipelineSpec, Resample, SelectFields, Slice, run_pipeline, validate_mesh
from hybridviz.minisim import SimConfig, generate_step
from hybridviz.node import serialized_size

n = 96
mesh = validate_mesh(generate_step(SimConfig(n=n), rank=0, t=0.5))
full = serialized_size(mesh.node)
print(f"input: {mesh.cell_count} cells, fields {list(mesh.fields)}, {full / 1e6:.1f} MB")

# %%
# Slice: keep the energy and cut at z = 0.5. Output is a 2D uniform grid.
slice_spec = PipelineSpec([SelectFields(("energy",)), Slice(axis="z", coordinate=0.5)])
s = run_pipeline(slice_spec, mesh)
print(f"slice: {s.mesh.cell_count} cells (= {n}^2), {serialized_size(s.channel) / 1e3:.0f} kB,"
      f" ratio {full / serialized_size(s.channel):.0f}x")

# %%
# Resample onto 31^3 vertices, i.e. 30^3 cells, whatever the input size.
res_spec = PipelineSpec([SelectFields(("energy",)), Resample((31, 31, 31))])
r = run_pipeline(res_spec, mesh)
print(f"resample: {r.mesh.cell_count} cells, {serialized_size(r.channel) / 1e3:.0f} kB")
print("provenance:", r.provenance)

# %%
# A general plane works on any hex mesh and yields a triangle soup.
plane = PipelineSpec([SelectFields(("energy",)), Slice(origin=(0.5, 0.5, 0.5), normal=(1, 1, 1))])
p = run_pipeline(plane, mesh)
pts, tris = p.mesh.points(), p.mesh.cells()
area = 0.5 * np.linalg.norm(np.cross(pts[tris[:, 1]] - pts[tris[:, 0]],
                                      pts[tris[:, 2]] - pts[tris[:, 0]]), axis=1).sum()
# the x+y+z = 1.5 section of the unit cube is a regular hexagon of side sqrt(2)/2
print(f"oblique plane: {p.mesh.cell_count} triangles, area {area:.12f}"
      f" (hexagon {3 * np.sqrt(3) / 4:.12f})")
