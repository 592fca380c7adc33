"""Per-step timing records, the modeled clock and run-level aggregation."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields

CSV_COLUMNS = ["step", "rank", "sim_ms", "reduce_ms", "transfer_ms", "render_ms", "bytes_sent"]


@dataclass
class TimingRecord:
    step: int
    rank: int
    sim_ms: float = 0.0
    reduce_ms: float = 0.0
    transfer_ms: float = 0.0
    render_ms: float = 0.0
    bytes_sent: int = 0

    @property
    def cluster_ms(self):
        """Simulation-cluster time of this step on this rank (render excluded)."""
        return self.sim_ms + self.reduce_ms + self.transfer_ms


@dataclass(frozen=True)
class ModeledClock:
    """Deterministic stand-in for wall-clock timings.

    ``reduce_ms=None`` keeps the measured reduction time; transfer time is
    always derived from the bytes actually sent.
    """

    sim_ms: float = 0.0
    reduce_ms: float | None = None
    bandwidth: float = 1e9  # bytes/second

    def __post_init__(self):
        if self.sim_ms < 0 or (self.reduce_ms is not None and self.reduce_ms < 0):
            raise ValueError("modeled durations must be >= 0")
        if not self.bandwidth > 0:
            raise ValueError("modeled bandwidth must be positive")

    def transfer_ms(self, nbytes):
        return 1000.0 * nbytes / self.bandwidth


@dataclass
class RunReport:
    mode: str
    pipeline: str = ""
    steps: int = 0
    ranks: int = 0
    sim_ms: float = 0.0
    reduce_ms: float = 0.0
    transfer_ms: float = 0.0
    render_ms: float = 0.0
    bytes_per_step: float = 0.0
    fingerprint: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def total_ms(self):
        return self.sim_ms + self.reduce_ms + self.transfer_ms

    def to_dict(self):
        d = asdict(self)
        d["total_ms"] = self.total_ms
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def aggregate(records, mode, pipeline="", fingerprint=""):
    """Mean over steps of the per-step critical path.

    Each step's cluster time is the rank with the largest
    ``sim + reduce + transfer``; that rank's components are the ones averaged,
    so the component means add up to the reported total.
    """
    by_step = {}
    for r in records:
        by_step.setdefault(r.step, []).append(r)
    rep = RunReport(mode=mode, pipeline=pipeline, fingerprint=fingerprint)
    if not by_step:
        return rep
    rep.steps = len(by_step)
    rep.ranks = max(len(v) for v in by_step.values())
    for recs in by_step.values():
        crit = max(recs, key=lambda r: r.cluster_ms)
        rep.sim_ms += crit.sim_ms
        rep.reduce_ms += crit.reduce_ms
        rep.transfer_ms += crit.transfer_ms
        rep.render_ms += max(r.render_ms for r in recs)
        rep.bytes_per_step += sum(r.bytes_sent for r in recs)
    for name in ("sim_ms", "reduce_ms", "transfer_ms", "render_ms", "bytes_per_step"):
        setattr(rep, name, getattr(rep, name) / rep.steps)
    return rep


def write_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in sorted(records, key=lambda r: (r.step, r.rank)):
            w.writerow([r.step, r.rank, repr(r.sim_ms), repr(r.reduce_ms),
                        repr(r.transfer_ms), repr(r.render_ms), r.bytes_sent])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        TimingRecord(int(r["step"]), int(r["rank"]), float(r["sim_ms"]), float(r["reduce_ms"]),
                     float(r["transfer_ms"]), float(r["render_ms"]), int(r["bytes_sent"]))
        for r in rows
    ]
