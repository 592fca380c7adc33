"""
Frames over a throttled socket
==============================

A writer on the simulation side sends one framed, serialized tree per step
and rank; the reader groups frames by step and hands all rank parts of a
step to a sink. A shared token bucket caps the aggregate bandwidth.
"""
import threading
import time

import numpy as np

from hybridviz import DataNode
from hybridviz.transport import Reader, Throttle, open_writer, replay_loop

RANKS, STEPS = 3, 4
rate = 8e6  # bytes/s for all writers together
throttle = Throttle(rate)


def part(step, rank):
    node = DataNode()
    node["values"] = np.full(50_000, 10.0 * step + rank)
    return node


def simulate(endpoint, rank):
    w = open_writer(endpoint, throttle, rank, RANKS)
    for step in range(STEPS):
        w.put_step(step, rank, RANKS, part(step, rank))
    w.close()


# %%
# The sink sees every rank of a step at once, in rank order.
def sink(step, parts):
    print(f"step {step}: ranks carry {[float(p['values'].value[0]) for p in parts]}")


with Reader() as reader:
    t0 = time.perf_counter()
    threads = [threading.Thread(target=simulate, args=(reader.endpoint, r)) for r in range(RANKS)]
    for t in threads:
        t.start()
    summary = replay_loop(reader, sink, timeout=30)
    for t in threads:
        t.join()
    elapsed = time.perf_counter() - t0

total = sum(summary.payload_bytes.values())
# the bucket has no burst allowance, so this can never beat bytes / rate
print(f"{total / 1e6:.1f} MB in {elapsed:.2f} s; lower bound {total / rate:.2f} s")
