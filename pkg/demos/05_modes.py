"""
Inline, in transit and hybrid runs side by side
===============================================

The same simulation and the same analysis run three ways. ``inline``
renders next to the simulation, ``transit`` ships the whole mesh to a
separate receiver process, ``hybrid`` reduces first and ships the result.
With a narrow link the hybrid run wins because the bytes on the wire drop
by a factor of n.

Two clocks are available. The wall clock measures this machine. The
modeled clock replaces simulation and reduction times with constants and
derives transfer time from the bytes sent, which makes the totals exactly
reproducible.
"""
import os
import tempfile

from hybridviz.bench import emit_table, format_report, run_experiment
from hybridviz.config import load_config

here = os.path.dirname(os.path.abspath(__file__))
out = tempfile.mkdtemp(prefix="hybridviz-modes-")

# %%
# Wall clock, 64^3 cells in 2 slabs, link capped at 20 MB/s.
cfg = load_config(os.path.join(here, "configs", "slice.cfg"))
reports = []
for mode in ("inline", "transit", "hybrid"):
    rep = run_experiment(cfg, mode, os.path.join(out, mode))
    print(format_report(rep))
    reports.append(rep)
print(emit_table(reports))

# %%
# Modeled clock: constants per step, bandwidth chosen per run so that the
# transfer of this run's payload takes a given number of milliseconds.
base = load_config(os.path.join(here, "configs", "modeled.cfg"))
modeled = []
for mode, sim_ms, reduce_ms, transfer_ms in (("transit", 15860, 0, 3415), ("hybrid", 15835, 319, 6.56)):
    probe = run_experiment(base, mode, os.path.join(out, f"probe-{mode}"))
    run = dict(base, **{"clock.sim_ms": str(sim_ms), "clock.reduce_ms": str(reduce_ms),
                        "clock.bandwidth": repr(1000 * probe.bytes_per_step / transfer_ms)})
    modeled.append(run_experiment(run, mode, os.path.join(out, f"modeled-{mode}")))
print(emit_table(modeled))
