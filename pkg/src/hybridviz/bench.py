"""End-to-end experiments and the timing report.

:func:`run_experiment` drives minisim -> gateway -> transport -> replay ->
rendering for one mode and writes ``timings.csv``, ``report.json`` and the
images. :func:`compare_runs` and :func:`emit_table` turn reports into the
gain figure and a per-stage table.
"""
from __future__ import annotations

import json
import logging
import os
import subprocess
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor

from . import config as rc
from .gateway import ExecuteRequest, GatewayConfig, initialize
from .minisim import generate_step
from .receiver import run_receiver
from .timing import RunReport, aggregate, write_csv
from .transport import Reader, Throttle

log = logging.getLogger(__name__)

MODES = ("inline", "transit", "hybrid")
RECEIVER_TIMEOUT = 600.0


class ExperimentError(RuntimeError):
    pass


class ReportMismatchError(ValueError):
    pass


# receivers -----------------------------------------------------------------------

class _InProcessReceiver:
    def __init__(self, cfg, out_dir, endpoint):
        self.reader = Reader(endpoint)
        self.endpoint = self.reader.endpoint
        self.error = None
        self.render_ms = {}
        self.summary = None
        render_cfg = rc.render_config(cfg)
        pipeline = rc.pipeline_spec(cfg)

        def run():
            try:
                self.summary, sink = run_receiver(self.reader, render_cfg, pipeline, out_dir,
                                                  timeout=RECEIVER_TIMEOUT)
                self.render_ms = sink.render_ms
            except Exception as e:  # surfaced by wait()
                self.error = e
            finally:
                self.reader.close()

        self.thread = threading.Thread(target=run, daemon=True)
        self.thread.start()

    def wait(self):
        self.thread.join(RECEIVER_TIMEOUT)
        if self.error is not None:
            raise ExperimentError(f"receiver failed: {self.error}") from self.error
        return self.render_ms

    def abort(self):
        self.reader.close()


class _SubprocessReceiver:
    def __init__(self, cfg_path, mode, out_dir, endpoint):
        cmd = [sys.executable, "-m", "hybridviz", "receive", "--config", cfg_path,
               "--mode", mode, "--out", out_dir, "--endpoint", endpoint]
        self.out_dir = out_dir
        self.log_path = os.path.join(out_dir, "receiver.log")
        with open(self.log_path, "w") as log_fh:
            self.proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=log_fh, text=True)
        line = self.proc.stdout.readline()
        if not line.startswith("LISTENING "):
            self.proc.kill()
            raise ExperimentError(f"receiver did not start: {line!r} {self._log()}")
        self.endpoint = line.split(None, 1)[1].strip()

    def _log(self):
        with open(self.log_path) as fh:
            return fh.read().strip()

    def wait(self):
        try:
            self.proc.communicate(timeout=RECEIVER_TIMEOUT)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            raise ExperimentError("receiver did not finish") from None
        if self.proc.returncode != 0:
            raise ExperimentError(f"receiver exited with {self.proc.returncode}: {self._log()}")
        with open(os.path.join(self.out_dir, "receiver.json")) as fh:
            return {int(k): v for k, v in json.load(fh)["render_ms"].items()}

    def abort(self):
        self.proc.kill()


def receive_main(cfg_path, mode, out_dir, endpoint):
    """Body of the ``receive`` subcommand: listen, replay, render, report."""
    cfg = rc.load_config(cfg_path)
    reader = Reader(endpoint)
    print(f"LISTENING {reader.endpoint}", flush=True)
    try:
        summary, sink = run_receiver(reader, rc.render_config(cfg), rc.pipeline_spec(cfg),
                                     out_dir, timeout=RECEIVER_TIMEOUT)
    finally:
        reader.close()
    with open(os.path.join(out_dir, "receiver.json"), "w") as fh:
        json.dump({"steps": summary.steps, "ranks": summary.ranks,
                   "render_ms": sink.render_ms, "payload_bytes": summary.payload_bytes}, fh)
    return summary


# experiment ------------------------------------------------------------------------

def gateway_config(cfg, mode, endpoint, out_dir):
    clock_mode, clock = rc.clock_config(cfg)
    return GatewayConfig(
        backend=mode,
        reduction_pipeline=rc.pipeline_spec(cfg) if mode != "transit" else None,
        viz_pipeline_id=cfg.get("gateway.viz_pipeline", "slice_image"),
        endpoint=endpoint if mode != "inline" else None,
        bandwidth_limit=rc.bandwidth(cfg),
        clock_mode=clock_mode,
        clock=clock,
        render=rc.render_config(cfg),
        image_dir=out_dir,
    )


def run_experiment(config, mode=None, out_dir=".", receiver=None):
    """Run one experiment and return its :class:`RunReport`.

    ``config`` is a path or an already parsed dict. ``mode`` overrides
    ``gateway.backend``; ``receiver`` (``subprocess`` or ``inprocess``)
    overrides ``gateway.receiver``.
    """
    cfg_path = config if isinstance(config, (str, os.PathLike)) else None
    cfg = rc.load_config(config) if cfg_path else dict(config)
    mode = mode or cfg.get("gateway.backend", "hybrid")
    if mode not in MODES:
        raise ExperimentError(f"mode must be one of {MODES}, got {mode!r}")
    os.makedirs(out_dir, exist_ok=True)
    if cfg_path is None:
        cfg_path = os.path.join(out_dir, "run.cfg")
        with open(cfg_path, "w", encoding="utf-8") as fh:
            fh.write(rc.dump_config(cfg))
    sim = rc.sim_config(cfg)
    clock_mode, clock = rc.clock_config(cfg)
    endpoint = cfg.get("gateway.endpoint", "127.0.0.1:0")
    receiver = receiver or cfg.get("gateway.receiver", "subprocess")

    recv = None
    if mode != "inline":
        if endpoint.startswith("file://"):
            os.makedirs(endpoint[len("file://"):], exist_ok=True)
        if receiver == "subprocess":
            recv = _SubprocessReceiver(cfg_path, mode, out_dir, endpoint)
        elif receiver == "inprocess":
            recv = _InProcessReceiver(cfg, out_dir, endpoint)
        else:
            raise ExperimentError(f"gateway.receiver must be subprocess or inprocess, got {receiver!r}")
        endpoint = recv.endpoint

    gcfg = gateway_config(cfg, mode, endpoint, out_dir)
    limit = rc.bandwidth(cfg)
    throttle = Throttle(limit) if (limit is not None and clock_mode == "wall" and mode != "inline") else None
    P = sim.partitions
    records = []
    try:
        gateways = [initialize(gcfg, throttle, rank, P) for rank in range(P)]

        def one_rank(step, rank):
            t0 = time.perf_counter()
            t = sim.time_of(step)
            channel = generate_step(sim, rank, t)
            sim_ms = 1000.0 * (time.perf_counter() - t0)
            req = ExecuteRequest(step, t, {"mesh": channel}, rank, P)
            try:
                rec = gateways[rank].execute(req)
            except Exception as e:
                raise ExperimentError(f"step {step}, rank {rank}: {type(e).__name__}: {e}") from e
            rec.sim_ms = clock.sim_ms if clock_mode == "modeled" else sim_ms
            return rec

        with ThreadPoolExecutor(max_workers=P) as pool:
            for step in range(sim.steps):
                # lockstep: every rank finishes the step before the next starts
                records.extend(pool.map(lambda r: one_rank(step, r), range(P)))
        for g in gateways:
            g.finalize()
        render_ms = recv.wait() if recv is not None else {}
    except BaseException:
        if recv is not None:
            recv.abort()
        raise
    for r in records:
        if r.step in render_ms:
            r.render_ms = render_ms[r.step]

    report = aggregate(records, mode, cfg.get("pipeline.name", "pipeline"), rc.fingerprint(cfg))
    report.extra = {"clock": clock_mode, "n": sim.n, "partitions": P}
    write_csv(records, os.path.join(out_dir, "timings.csv"))
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    return report


# reporting -------------------------------------------------------------------------

def load_report(path):
    if os.path.isdir(path):
        path = os.path.join(path, "report.json")
    with open(path) as fh:
        return RunReport.from_dict(json.load(fh))


def compare_runs(report_a, report_b):
    """Percentage of ``report_a``'s total saved by ``report_b``."""
    if report_a.fingerprint != report_b.fingerprint:
        raise ReportMismatchError(
            f"reports come from different sim/pipeline configs "
            f"({report_a.fingerprint} vs {report_b.fingerprint})"
        )
    if not report_a.total_ms > 0:
        raise ReportMismatchError("reference report has a zero total")
    return 100.0 * (1.0 - report_b.total_ms / report_a.total_ms)


def fmt_ms(v):
    """Integers at or above 100 ms, three significant digits below."""
    if v == 0:
        return "0"
    if abs(v) >= 100:
        return f"{round(v):d}"
    return f"{v:.3g}"


def fmt_gain(g):
    return f"{g:.2f}%"


_MODE_ORDER = {m: i for i, m in enumerate(MODES)}
ROWS = (
    ("Simulation Time (ms)", "sim_ms"),
    ("Reduction Time (ms)", "reduce_ms"),
    ("Data Transfer Time (ms)", "transfer_ms"),
    ("Total Time (ms)", "total_ms"),
)


def emit_table(reports):
    """Per-stage table with one column per (pipeline, mode) and a gain row."""
    if len(reports) < 2 or len({r.mode for r in reports}) < 2:
        raise ReportMismatchError("a table needs at least two reports in different modes")
    groups = {}
    for r in reports:
        groups.setdefault(r.pipeline, []).append(r)
    columns = []
    for name, reps in groups.items():
        columns.extend(sorted(reps, key=lambda r: _MODE_ORDER.get(r.mode, 99)))
    head1 = [""] + [c.pipeline for c in columns]
    head2 = [""] + [c.mode for c in columns]
    body = [[label] + [fmt_ms(getattr(c, attr)) for c in columns] for label, attr in ROWS]
    gain = ["Total Gain"]
    for name, reps in groups.items():
        by_mode = {r.mode: r for r in reps}
        cells = [""] * len(reps)
        if "transit" in by_mode and "hybrid" in by_mode:
            ordered = sorted(reps, key=lambda r: _MODE_ORDER.get(r.mode, 99))
            at = [r.mode for r in ordered].index("transit")
            cells[at] = fmt_gain(compare_runs(by_mode["transit"], by_mode["hybrid"]))
        gain.extend(cells)
    rows = [head1, head2] + body + [gain]
    widths = [max(len(row[i]) for row in rows) for i in range(len(head1))]
    sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    lines = [sep]
    for i, row in enumerate(rows):
        lines.append("| " + " | ".join(cell.ljust(w) for cell, w in zip(row, widths)) + " |")
        if i in (1, len(rows) - 2):
            lines.append(sep)
    lines.append(sep)
    return "\n".join(lines)


def format_report(report):
    return (
        f"mode={report.mode} pipeline={report.pipeline} steps={report.steps} ranks={report.ranks}\n"
        f"  sim {fmt_ms(report.sim_ms)} ms | reduce {fmt_ms(report.reduce_ms)} ms | "
        f"transfer {fmt_ms(report.transfer_ms)} ms | total {fmt_ms(report.total_ms)} ms | "
        f"render {fmt_ms(report.render_ms)} ms (receiver, not in total) | "
        f"{report.bytes_per_step:.0f} B/step"
    )
