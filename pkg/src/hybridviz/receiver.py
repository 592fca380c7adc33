"""Visualization-side replay: receive steps, finish the analysis, write images."""
from __future__ import annotations

import os
import time

from .mesh import validate_mesh
from .reduction import run_pipeline
from .transport import replay_loop
from .viz import merge_parts, render, write_image


class Replayer:
    """Sink for :func:`~hybridviz.transport.replay_loop`.

    Parts that arrive unreduced (transit runs) go through ``pipeline`` here,
    on the visualization side, before rendering.
    """

    def __init__(self, render_cfg, pipeline=None, out_dir=None):
        self.render_cfg = render_cfg
        self.pipeline = pipeline
        self.out_dir = out_dir
        self.render_ms = {}
        self.images = []
        self.rank_parts = {}

    def __call__(self, step, parts):
        t0 = time.perf_counter()
        rank_count = len(parts)
        self.rank_parts[step] = rank_count
        names = parts[0]["catalyst/channels"].names() if "catalyst/channels" in parts[0] else []
        for name in names:
            meshes = []
            for rank, part in enumerate(parts):
                data = part[f"catalyst/channels/{name}/data"]
                mesh = validate_mesh(data)
                if not part["catalyst/state/reduced"].value and self.pipeline is not None:
                    mesh = run_pipeline(self.pipeline, mesh, rank < rank_count - 1).mesh
                meshes.append(mesh)
            img = render(self.render_cfg, merge_parts(meshes))
            if self.out_dir is not None:
                chan = "" if len(names) == 1 else f"_{name}"
                path = os.path.join(self.out_dir, f"step{step}{chan}_{self.render_cfg.recipe}.ppm")
                self.images.append(write_image(img, path))
        self.render_ms[step] = 1000.0 * (time.perf_counter() - t0)


def run_receiver(reader, render_cfg, pipeline=None, out_dir=None, timeout=None):
    sink = Replayer(render_cfg, pipeline, out_dir)
    summary = replay_loop(reader, sink, timeout=timeout)
    return summary, sink
