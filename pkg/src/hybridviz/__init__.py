"""Hybrid in situ / in transit analysis at desk scale.

Simulation partitions hand mesh channels to a :class:`~hybridviz.gateway.Gateway`;
depending on its backend the data is rendered in place, shipped whole, or
reduced first and then shipped to a replay process that renders it.
"""
from .gateway import ExecuteRequest, GatewayConfig, execute, finalize, initialize
from .mesh import MeshChannel, MeshValidationError, add_field, explicit_mesh, uniform_mesh, validate_mesh
from .node import DataNode, deserialize_node, get_path, serialize_node, set_path
from .reduction import PipelineSpec, Resample, SelectFields, Slice, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "DataNode", "get_path", "set_path", "serialize_node", "deserialize_node",
    "MeshChannel", "MeshValidationError", "validate_mesh", "uniform_mesh", "explicit_mesh", "add_field",
    "PipelineSpec", "SelectFields", "Slice", "Resample", "run_pipeline",
    "GatewayConfig", "ExecuteRequest", "initialize", "execute", "finalize",
]
