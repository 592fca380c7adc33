"""Three-call coupling API with interchangeable backends.

The simulation always calls :func:`initialize`, :func:`execute` and
:func:`finalize` with the same arguments; only :class:`GatewayConfig`
decides whether data is analysed in place (``inline``), shipped whole
(``transit``) or reduced first and then shipped (``hybrid``).
"""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

from .mesh import validate_mesh
from .node import DataNode, serialize_node
from .reduction import PipelineSpec, run_pipeline
from .timing import ModeledClock, TimingRecord
from .transport import open_writer
from .viz import RECIPES, RenderConfig, render, write_image

log = logging.getLogger(__name__)

BACKENDS = ("inline", "transit", "hybrid")


class GatewayConfigError(ValueError):
    pass


class GatewayStateError(RuntimeError):
    pass


class RequestError(ValueError):
    pass


@dataclass
class GatewayConfig:
    backend: str
    reduction_pipeline: PipelineSpec | None = None
    viz_pipeline_id: str | None = None
    endpoint: str | None = None
    bandwidth_limit: float | None = None
    clock_mode: str = "wall"
    clock: ModeledClock | None = None
    render: RenderConfig | None = None
    image_dir: str | None = None

    def check(self):
        if self.backend not in BACKENDS:
            raise GatewayConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.backend in ("inline", "hybrid"):
            if self.reduction_pipeline is None or not self.reduction_pipeline.stages:
                raise GatewayConfigError(f"backend={self.backend} needs a reduction pipeline")
        if self.backend == "inline" and self.viz_pipeline_id is None:
            raise GatewayConfigError("backend=inline needs viz_pipeline_id")
        if self.viz_pipeline_id is not None and self.viz_pipeline_id not in RECIPES:
            raise GatewayConfigError(f"unknown viz pipeline {self.viz_pipeline_id!r}")
        if (self.backend == "inline") == (self.endpoint is not None):
            raise GatewayConfigError("endpoint is required for transit/hybrid and unused for inline")
        if self.bandwidth_limit is not None and not self.bandwidth_limit > 0:
            raise GatewayConfigError("bandwidth_limit must be positive")
        if self.clock_mode not in ("wall", "modeled"):
            raise GatewayConfigError(f"clock_mode must be wall or modeled, got {self.clock_mode!r}")
        if self.clock_mode == "modeled" and self.clock is None:
            raise GatewayConfigError("clock_mode=modeled needs modeled clock constants")


@dataclass
class ExecuteRequest:
    timestep: int
    time: float
    channels: dict
    rank: int = 0
    rank_count: int = 1

    @classmethod
    def from_node(cls, node):
        """Build a request from a ``catalyst/state`` + ``catalyst/channels`` tree."""
        channels = {
            name: ch["data"] for name, ch in node["catalyst/channels"].children.items()
        }
        part = node.get("catalyst/partition")
        return cls(
            timestep=node["catalyst/state/timestep"].value,
            time=node["catalyst/state/time"].value,
            channels=channels,
            rank=part["rank"].value if part is not None else 0,
            rank_count=part["rank_count"].value if part is not None else 1,
        )


@dataclass
class GatewaySummary:
    steps: int = 0
    records: list = field(default_factory=list)

    @property
    def reduce_ms(self):
        return sum(r.reduce_ms for r in self.records)

    @property
    def transfer_ms(self):
        return sum(r.transfer_ms for r in self.records)

    @property
    def bytes_sent(self):
        return sum(r.bytes_sent for r in self.records)


def build_payload(req, channels, reduced, provenance=None):
    root = DataNode()
    root["catalyst/state/timestep"] = int(req.timestep)
    root["catalyst/state/time"] = float(req.time)
    root["catalyst/state/reduced"] = int(reduced)
    for name, data in channels.items():
        root[f"catalyst/channels/{name}/type"] = "mesh"
        root[f"catalyst/channels/{name}"].add_child("data", data)
        if provenance and name in provenance:
            for k, v in provenance[name].items():
                root[f"catalyst/channels/{name}/provenance/{k}"] = int(v)
    return root


class Gateway:
    """Handle returned by :func:`initialize`; one per simulation partition."""

    def __init__(self, config, throttle=None, rank=0, rank_count=1):
        config.check()
        if config.backend == "transit" and config.reduction_pipeline is not None:
            log.warning("backend=transit ignores the reduction pipeline")
        self.config = config
        self.rank = rank
        self.rank_count = rank_count
        self.summary = GatewaySummary()
        self.finalized = False
        self.last_payload = None
        self.last_reduced = {}
        self.images = []
        self._last_step = None
        self._writer = None
        if config.backend != "inline":
            limit = throttle if throttle is not None else config.bandwidth_limit
            if config.clock_mode == "modeled":
                limit = throttle  # modeled transfer time is computed, not paced
            self._writer = open_writer(config.endpoint, limit, rank, rank_count)

    def _check_request(self, req):
        if self.finalized:
            raise GatewayStateError("gateway already finalized")
        if req.timestep < 0:
            raise RequestError("timestep must be non-negative")
        if not 0 <= req.rank < req.rank_count:
            raise RequestError(f"rank {req.rank} outside rank_count {req.rank_count}")
        if self._last_step is not None and req.timestep <= self._last_step:
            raise RequestError(f"timestep {req.timestep} not after {self._last_step}")

    def _reduce(self, meshes, req):
        out, prov = {}, {}
        exclusive_upper = req.rank < req.rank_count - 1
        for name, mesh in meshes.items():
            r = run_pipeline(self.config.reduction_pipeline, mesh, exclusive_upper)
            out[name] = r
            prov[name] = r.provenance
        return out, prov

    def execute(self, req):
        self._check_request(req)
        cfg = self.config
        meshes = {name: validate_mesh(ch) for name, ch in req.channels.items()}
        rec = TimingRecord(step=req.timestep, rank=req.rank)

        if cfg.backend in ("inline", "hybrid"):
            t0 = time.perf_counter()
            reduced, prov = self._reduce(meshes, req)
            rec.reduce_ms = 1000.0 * (time.perf_counter() - t0)
            self.last_reduced = reduced
            send = {name: r.channel for name, r in reduced.items()}
        else:
            prov = None
            send = {name: m.node for name, m in meshes.items()}

        if cfg.backend == "inline":
            t0 = time.perf_counter()
            self._render_local(req, reduced)
            rec.render_ms = 1000.0 * (time.perf_counter() - t0)
        else:
            payload = build_payload(req, send, cfg.backend == "hybrid", prov)
            t0 = time.perf_counter()
            stats = self._writer.put_payload(
                req.timestep, req.rank, req.rank_count, serialize_node(payload)
            )
            rec.transfer_ms = 1000.0 * (time.perf_counter() - t0)
            rec.bytes_sent = stats.bytes
            self.last_payload = payload

        if cfg.clock_mode == "modeled":
            if cfg.backend != "transit" and cfg.clock.reduce_ms is not None:
                rec.reduce_ms = cfg.clock.reduce_ms
            if cfg.backend != "inline":
                rec.transfer_ms = cfg.clock.transfer_ms(rec.bytes_sent)
        self._last_step = req.timestep
        self.summary.steps += 1
        self.summary.records.append(rec)
        return rec

    def _render_local(self, req, reduced):
        cfg = self.config
        rcfg = cfg.render or RenderConfig(recipe=cfg.viz_pipeline_id)
        for name, r in reduced.items():
            img = render(rcfg, r.mesh)
            if cfg.image_dir is None:
                continue
            tag = "" if req.rank_count == 1 else f"_rank{req.rank}"
            chan = "" if len(reduced) == 1 else f"_{name}"
            path = os.path.join(cfg.image_dir, f"step{req.timestep}{tag}{chan}_{rcfg.recipe}.ppm")
            self.images.append(write_image(img, path))

    def finalize(self):
        if self.finalized:
            raise GatewayStateError("gateway already finalized")
        self.finalized = True
        if self._writer is not None:
            self._writer.close(end_of_stream=True)
        return self.summary


def initialize(config, throttle=None, rank=0, rank_count=1):
    return Gateway(config, throttle, rank, rank_count)


def execute(handle, req):
    return handle.execute(req)


def finalize(handle):
    return handle.finalize()
