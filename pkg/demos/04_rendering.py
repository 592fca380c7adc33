"""
Slice images and volume renders
===============================

The receiver turns reduced meshes into PPM images. A slice is drawn with
an orthographic camera; a resampled volume is ray-marched front to back
with emission-absorption compositing, so regions with zero energy stay
transparent and the blast shell shows up as a ring.
"""
import os
import tempfile

import numpy as np

from hybridviz import PipelineSpec, Resample, SelectFields, Slice, run_pipeline, validate_mesh
from hybridviz.minisim import SimConfig, generate_step
from hybridviz.viz import RenderConfig, render, write_image

out = tempfile.mkdtemp(prefix="hybridviz-render-")
mesh = validate_mesh(generate_step(SimConfig(n=64), 0, t=0.5))

# %%
# Slice at z = 0.25 through the shell.
sl = run_pipeline(PipelineSpec([SelectFields(("energy",)), Slice(axis="z", coordinate=0.25)]), mesh)
img = render(RenderConfig("slice_image", 256, 256), sl.mesh)
print(write_image(img, os.path.join(out, "slice.ppm")))

# %%
# Volume render of a 50^3-cell resample, viewed along z.
vol = run_pipeline(PipelineSpec([SelectFields(("energy",)), Resample((51, 51, 51))]), mesh)
img = render(RenderConfig("volume_render", 256, 256, kappa=6.0), vol.mesh)
print(write_image(img, os.path.join(out, "volume.ppm")))
lit = np.any(img.pixels != 0, axis=2).mean()
print(f"{100 * lit:.0f}% of pixels see some of the shell")
