"""
Typed trees and their wire bytes
================================

Everything that crosses the gateway is a :class:`hybridviz.DataNode` tree:
objects hold named children in insertion order, leaves hold an int64, a
float64, a string or a flat array. The same tree always serializes to the
same little-endian bytes.
"""
import numpy as np

from hybridviz import DataNode, deserialize_node, serialize_node
from hybridviz.node import set_external

# %%
# Paths create intermediate objects on the way down.
root = DataNode()
root["catalyst/state/timestep"] = 7
root["catalyst/state/time"] = 0.35
print(root["catalyst/state/timestep"].value, root.get("catalyst/nothing"))

# %%
# A float leaf is one tag byte and the IEEE-754 bits, least significant first.
print(serialize_node(DataNode.leaf(3.0)).hex(" "))

# %%
# Arrays from the simulation can be attached without a copy. The node holds
# a read-only view, so downstream code cannot write into simulation memory.
pressure = np.linspace(0.0, 1.0, 5)
set_external(root, "fields/pressure", pressure)
print(np.shares_memory(root["fields/pressure"].value, pressure),
      root["fields/pressure"].value.flags.writeable)

# %%
# Round trip. Decoded arrays are owned copies.
buf = serialize_node(root)
back = deserialize_node(buf)
print(len(buf), "bytes, equal:", back == root)
for path, node in back.walk():
    print(f"  {path:28s} {node.kind.name}")
