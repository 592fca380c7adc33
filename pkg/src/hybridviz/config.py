"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, keys are grouped by prefix::

    sim.n = 64
    sim.partitions = 2
    gateway.bandwidth = 50e6          # bytes/s, or "unlimited"
    pipeline.name = slice
    pipeline.stage.0.kind = select_fields
    pipeline.stage.0.fields = energy
    pipeline.stage.1.kind = slice
    pipeline.stage.1.axis = z
    pipeline.stage.1.coordinate = 0.5
    render.field = energy
    clock.mode = modeled
    clock.sim_ms = 15860
"""
from __future__ import annotations

import hashlib
import re

from .minisim import SimConfig
from .reduction import PipelineSpec, Resample, SelectFields, Slice
from .timing import ModeledClock
from .viz import RenderConfig

SECTIONS = ("sim", "gateway", "pipeline", "render", "clock")


class ConfigError(ValueError):
    pass


def parse_config(text):
    """Parse config text into an ordered ``{key: raw string}`` dict."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key.split(".", 1)[0] not in SECTIONS or "." not in key:
            raise ConfigError(f"line {lineno}: unknown section in key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg):
    return "".join(f"{k} = {v}\n" for k, v in cfg.items())


def _num(cfg, key, default, conv=float):
    raw = cfg.get(key)
    if raw is None:
        return default
    try:
        return conv(float(raw)) if conv is int else conv(raw)
    except ValueError:
        raise ConfigError(f"{key} = {raw!r} is not a number") from None


def _floats(raw, n, key):
    try:
        vals = tuple(float(v) for v in raw.split(","))
    except ValueError:
        raise ConfigError(f"{key} = {raw!r}: expected {n} comma-separated numbers") from None
    if len(vals) != n:
        raise ConfigError(f"{key} = {raw!r}: expected {n} values")
    return vals


def sim_config(cfg):
    try:
        return SimConfig(
            n=_num(cfg, "sim.n", 32, int),
            topology=cfg.get("sim.topology", "uniform"),
            steps=_num(cfg, "sim.steps", 10, int),
            dt=_num(cfg, "sim.dt", None),
            partitions=_num(cfg, "sim.partitions", 1, int),
            width=_num(cfg, "sim.width", 0.05),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


def pipeline_spec(cfg):
    """Reduction pipeline from ``pipeline.stage.<i>.*`` keys, or None if absent."""
    idx = sorted({int(m[1]) for k in cfg if (m := re.fullmatch(r"pipeline\.stage\.(\d+)\..+", k))})
    if not idx:
        return None
    stages = []
    for i in idx:
        p = f"pipeline.stage.{i}."
        kind = cfg.get(p + "kind")
        try:
            if kind == "select_fields":
                names = tuple(s.strip() for s in cfg.get(p + "fields", "").split(",") if s.strip())
                stages.append(SelectFields(names))
            elif kind == "slice":
                if p + "axis" in cfg:
                    stages.append(Slice(axis=cfg[p + "axis"],
                                        coordinate=_num(cfg, p + "coordinate", 0.5)))
                else:
                    stages.append(Slice(origin=_floats(cfg.get(p + "origin", ""), 3, p + "origin"),
                                        normal=_floats(cfg.get(p + "normal", ""), 3, p + "normal")))
            elif kind == "resample":
                dims = tuple(int(d) for d in _floats(cfg.get(p + "dims", ""), 3, p + "dims"))
                raw = cfg.get(p + "bounds", "auto")
                bounds = "auto" if raw == "auto" else _floats(raw, 6, p + "bounds")
                stages.append(Resample(dims, bounds))
            else:
                raise ConfigError(f"{p}kind = {kind!r}: expected select_fields, slice or resample")
        except ValueError as e:
            raise ConfigError(f"{p}*: {e}") from e
    return PipelineSpec(stages, name=cfg.get("pipeline.name", "pipeline"))


def render_config(cfg):
    rng = cfg.get("render.range")
    try:
        return RenderConfig(
            recipe=cfg.get("gateway.viz_pipeline", "slice_image"),
            width=_num(cfg, "render.width", 256, int),
            height=_num(cfg, "render.height", 256, int),
            field=cfg.get("render.field", "energy"),
            axis=cfg.get("render.axis", "z"),
            samples=_num(cfg, "render.samples", None, int),
            kappa=_num(cfg, "render.kappa", 4.0),
            value_range=_floats(rng, 2, "render.range") if rng else None,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


def clock_config(cfg):
    """``(mode, ModeledClock or None)``."""
    mode = cfg.get("clock.mode", "wall")
    if mode not in ("wall", "modeled"):
        raise ConfigError(f"clock.mode = {mode!r}: expected wall or modeled")
    if mode == "wall":
        return mode, None
    raw = cfg.get("clock.reduce_ms", "measured")
    reduce_ms = None if raw == "measured" else _num(cfg, "clock.reduce_ms", None)
    try:
        return mode, ModeledClock(
            sim_ms=_num(cfg, "clock.sim_ms", 0.0),
            reduce_ms=reduce_ms,
            bandwidth=_num(cfg, "clock.bandwidth", 1e9),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


def bandwidth(cfg):
    raw = cfg.get("gateway.bandwidth", "unlimited")
    if raw == "unlimited":
        return None
    value = _num(cfg, "gateway.bandwidth", None)
    if not value > 0:
        raise ConfigError("gateway.bandwidth must be positive or 'unlimited'")
    return value


def fingerprint(cfg):
    """Hash of the settings two comparable runs must share (sim and pipeline)."""
    keys = sorted(k for k in cfg if k.startswith(("sim.", "pipeline.")))
    blob = "\n".join(f"{k}={cfg[k]}" for k in keys)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
