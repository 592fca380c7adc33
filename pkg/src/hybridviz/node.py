"""Hierarchical typed data tree and its binary wire form.

A :class:`DataNode` is either an *object* (an ordered name -> node map) or a
leaf holding one of six payload kinds. Trees are addressed with
slash-separated paths, ``"catalyst/state/timestep"``.

Wire grammar, little-endian::

    node := kind:u8 body
    0x00 object        count:u32, count x (nameLen:u16, name:utf8, node)
    0x01 int64         8 bytes
    0x02 float64       8 bytes
    0x03 string        len:u64, utf8
    0x04 int64_array   count:u64, count x 8 bytes
    0x05 float64_array count:u64, count x 8 bytes
    0x06 uint8_array   count:u64, count bytes
"""
from __future__ import annotations

import struct
from enum import IntEnum

import numpy as np

__all__ = [
    "Kind",
    "DataNode",
    "NodeError",
    "StructuralError",
    "DecodeError",
    "TruncatedInputError",
    "DeclaredLengthError",
    "UnknownKindError",
    "set_path",
    "set_external",
    "get_path",
    "serialize_node",
    "deserialize_node",
]

MAX_DEPTH = 512


class Kind(IntEnum):
    OBJECT = 0x00
    INT64 = 0x01
    FLOAT64 = 0x02
    STRING = 0x03
    INT64_ARRAY = 0x04
    FLOAT64_ARRAY = 0x05
    UINT8_ARRAY = 0x06


_ARRAY_DTYPES = {
    Kind.INT64_ARRAY: np.dtype(np.int64),
    Kind.FLOAT64_ARRAY: np.dtype(np.float64),
    Kind.UINT8_ARRAY: np.dtype(np.uint8),
}
_WIRE_DTYPES = {
    Kind.INT64_ARRAY: np.dtype("<i8"),
    Kind.FLOAT64_ARRAY: np.dtype("<f8"),
    Kind.UINT8_ARRAY: np.dtype("u1"),
}


class NodeError(Exception):
    """Base class for data tree errors."""


class StructuralError(NodeError):
    """Invalid tree manipulation (bad child name, path through a leaf...)."""


class DecodeError(NodeError):
    """Byte sequence is not a valid serialized tree."""


class TruncatedInputError(DecodeError):
    """Input ended before a fixed-width field was complete."""


class DeclaredLengthError(TruncatedInputError):
    """A declared string/array length exceeds the remaining input."""


class UnknownKindError(DecodeError):
    """Kind tag outside the known set."""


def _check_name(name):
    if not isinstance(name, str) or not name or "/" in name:
        raise StructuralError(f"invalid child name {name!r}")


def _split(path):
    if path == "":
        return []
    parts = path.split("/")
    for p in parts:
        _check_name(p)
    return parts


def _array_kind(dtype):
    if dtype == np.uint8:
        return Kind.UINT8_ARRAY
    if np.issubdtype(dtype, np.integer) or dtype == np.bool_:
        return Kind.INT64_ARRAY
    if np.issubdtype(dtype, np.floating):
        return Kind.FLOAT64_ARRAY
    raise TypeError(f"unsupported array dtype {dtype}")


class DataNode:
    """One node of a typed tree.

    Object nodes keep their children in insertion order; that order is part
    of the node's identity (it is serialized and compared).
    """

    __slots__ = ("kind", "_children", "_value", "external")

    def __init__(self, kind=Kind.OBJECT, value=None, external=False):
        self.kind = Kind(kind)
        self.external = bool(external)
        if self.kind is Kind.OBJECT:
            if value is not None:
                raise StructuralError("object nodes carry no value")
            self._children = {}
            self._value = None
        else:
            self._children = None
            self._value = value

    # construction -------------------------------------------------------
    @classmethod
    def leaf(cls, value, external=False):
        """Build a leaf, inferring its kind from ``value``.

        Non-external arrays are copied. External arrays are wrapped in a
        read-only view so no consumer can write through to producer memory.
        """
        if isinstance(value, DataNode):
            return value
        if isinstance(value, (bool, np.bool_)):
            return cls(Kind.INT64, int(value))
        if isinstance(value, (int, np.integer)):
            v = int(value)
            if not -(2**63) <= v < 2**63:
                raise OverflowError(f"{v} does not fit in int64")
            return cls(Kind.INT64, v)
        if isinstance(value, (float, np.floating)):
            return cls(Kind.FLOAT64, float(value))
        if isinstance(value, str):
            return cls(Kind.STRING, value)
        if isinstance(value, (bytes, bytearray, memoryview)):
            value = np.frombuffer(value, dtype=np.uint8)
        arr = np.asarray(value)
        if arr.dtype == object:
            raise TypeError(f"cannot store {type(value).__name__} in a node")
        kind = _array_kind(arr.dtype)
        dtype = _ARRAY_DTYPES[kind]
        if external:
            view = np.ascontiguousarray(arr, dtype=dtype).reshape(-1).view()
            view.flags.writeable = False
            return cls(kind, view, external=True)
        return cls(kind, np.array(arr, dtype=dtype, copy=True).reshape(-1))

    # access ---------------------------------------------------------------
    @property
    def is_object(self):
        return self.kind is Kind.OBJECT

    @property
    def value(self):
        if self.kind is Kind.OBJECT:
            raise StructuralError("object node has no value")
        return self._value

    @property
    def children(self):
        if self.kind is not Kind.OBJECT:
            return {}
        return dict(self._children)

    def names(self):
        return list(self._children) if self.kind is Kind.OBJECT else []

    def child(self, name):
        if self.kind is not Kind.OBJECT:
            return None
        return self._children.get(name)

    def add_child(self, name, node):
        _check_name(name)
        if self.kind is not Kind.OBJECT:
            raise StructuralError("cannot add a child to a leaf")
        self._children[name] = node
        return node

    def remove(self, name):
        if self.kind is Kind.OBJECT:
            self._children.pop(name, None)

    def get(self, path, default=None):
        node = get_path(self, path)
        return default if node is None else node

    def __getitem__(self, path):
        node = get_path(self, path)
        if node is None:
            raise KeyError(path)
        return node

    def __setitem__(self, path, value):
        set_path(self, path, value)

    def __contains__(self, path):
        return get_path(self, path) is not None

    def __len__(self):
        return len(self._children) if self.kind is Kind.OBJECT else 0

    def __bool__(self):
        return True

    def walk(self, prefix=""):
        """Yield ``(path, node)`` for every leaf, depth first."""
        if self.kind is Kind.OBJECT:
            for name, c in self._children.items():
                yield from c.walk(f"{prefix}/{name}" if prefix else name)
        else:
            yield prefix, self

    def copy(self):
        """Deep copy; external arrays become owned copies."""
        if self.kind is Kind.OBJECT:
            out = DataNode()
            for name, c in self._children.items():
                out._children[name] = c.copy()
            return out
        if self.kind in _ARRAY_DTYPES:
            return DataNode(self.kind, np.array(self._value, copy=True))
        return DataNode(self.kind, self._value)

    # comparison -----------------------------------------------------------
    def __eq__(self, other):
        if not isinstance(other, DataNode) or self.kind is not other.kind:
            return False
        if self.kind is Kind.OBJECT:
            if list(self._children) != list(other._children):
                return False
            return all(a == other._children[n] for n, a in self._children.items())
        if self.kind is Kind.FLOAT64:
            return struct.pack("<d", self._value) == struct.pack("<d", other._value)
        if self.kind in _ARRAY_DTYPES:
            a, b = self._value, other._value
            return a.shape == b.shape and a.tobytes() == b.tobytes()
        return self._value == other._value

    __hash__ = None

    def __repr__(self):
        if self.kind is Kind.OBJECT:
            return f"DataNode(object, children={list(self._children)})"
        if self.kind in _ARRAY_DTYPES:
            ext = ", external" if self.external else ""
            return f"DataNode({self.kind.name.lower()}[{self._value.size}]{ext})"
        return f"DataNode({self.kind.name.lower()}, {self._value!r})"


def get_path(root, path):
    """Return the node at ``path`` or ``None``. The empty path is ``root``."""
    node = root
    if path == "":
        return root
    for part in path.split("/"):
        if node is None or node.kind is not Kind.OBJECT:
            return None
        node = node._children.get(part)
    return node


def set_path(root, path, value, external=False):
    """Store ``value`` at ``path``, creating intermediate objects.

    Raises :class:`StructuralError` if the path runs through an existing leaf.
    Returns the stored node.
    """
    parts = _split(path)
    if not parts:
        raise StructuralError("cannot replace the root through set_path")
    if root.kind is not Kind.OBJECT:
        raise StructuralError("root is a leaf")
    node = root
    for i, part in enumerate(parts[:-1]):
        nxt = node._children.get(part)
        if nxt is None:
            nxt = node._children[part] = DataNode()
        elif nxt.kind is not Kind.OBJECT:
            raise StructuralError(
                f"path {path!r} traverses leaf {'/'.join(parts[: i + 1])!r}"
            )
        node = nxt
    leaf = DataNode.leaf(value, external=external)
    node._children[parts[-1]] = leaf
    return leaf


def set_external(root, path, array):
    """Store ``array`` without copying; it is flagged external and read-only."""
    return set_path(root, path, array, external=True)


# serialization -----------------------------------------------------------

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")


def _emit(node, out):
    kind = node.kind
    out.append(_U8.pack(kind))
    if kind is Kind.OBJECT:
        out.append(_U32.pack(len(node._children)))
        for name, c in node._children.items():
            raw = name.encode("utf-8")
            out.append(_U16.pack(len(raw)))
            out.append(raw)
            _emit(c, out)
    elif kind is Kind.INT64:
        out.append(_I64.pack(node._value))
    elif kind is Kind.FLOAT64:
        out.append(_F64.pack(node._value))
    elif kind is Kind.STRING:
        raw = node._value.encode("utf-8")
        out.append(_U64.pack(len(raw)))
        out.append(raw)
    else:
        arr = np.ascontiguousarray(node._value, dtype=_WIRE_DTYPES[kind])
        out.append(_U64.pack(arr.size))
        out.append(arr.view(np.uint8).reshape(-1).data)


def serialize_node(root):
    """Encode a tree to bytes. Deterministic; arrays are copied into the output."""
    out = []
    _emit(root, out)
    return b"".join(out)


def serialized_size(root):
    """Byte length of :func:`serialize_node` output, without encoding."""
    if root.kind is Kind.OBJECT:
        return 5 + sum(
            2 + len(n.encode("utf-8")) + serialized_size(c)
            for n, c in root._children.items()
        )
    if root.kind in (Kind.INT64, Kind.FLOAT64):
        return 9
    if root.kind is Kind.STRING:
        return 9 + len(root._value.encode("utf-8"))
    return 9 + root._value.size * _WIRE_DTYPES[root.kind].itemsize


class _Cursor:
    __slots__ = ("buf", "pos")

    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        end = self.pos + n
        if end > len(self.buf):
            raise TruncatedInputError(
                f"input truncated reading {what} at offset {self.pos}"
            )
        chunk = self.buf[self.pos:end]
        self.pos = end
        return chunk

    def take_declared(self, n, what):
        if n > len(self.buf) - self.pos:
            raise DeclaredLengthError(
                f"{what} declares {n} bytes at offset {self.pos} but only "
                f"{len(self.buf) - self.pos} remain"
            )
        return self.take(n, what)


def _parse(cur, depth):
    if depth > MAX_DEPTH:
        raise DecodeError("tree nesting too deep")
    start = cur.pos
    (tag,) = _U8.unpack(cur.take(1, "kind tag"))
    try:
        kind = Kind(tag)
    except ValueError:
        raise UnknownKindError(f"unknown kind tag 0x{tag:02X} at offset {start}") from None
    if kind is Kind.OBJECT:
        (count,) = _U32.unpack(cur.take(4, "child count"))
        node = DataNode()
        for _ in range(count):
            (nlen,) = _U16.unpack(cur.take(2, "name length"))
            raw = cur.take_declared(nlen, "child name")
            try:
                name = bytes(raw).decode("utf-8")
            except UnicodeDecodeError:
                raise DecodeError(f"child name at offset {cur.pos - nlen} is not UTF-8") from None
            if not name or "/" in name or name in node._children:
                raise DecodeError(f"invalid or duplicate child name {name!r}")
            node._children[name] = _parse(cur, depth + 1)
        return node
    if kind is Kind.INT64:
        return DataNode(kind, _I64.unpack(cur.take(8, "int64"))[0])
    if kind is Kind.FLOAT64:
        return DataNode(kind, _F64.unpack(cur.take(8, "float64"))[0])
    (count,) = _U64.unpack(cur.take(8, "length"))
    if kind is Kind.STRING:
        raw = cur.take_declared(count, "string")
        try:
            return DataNode(kind, bytes(raw).decode("utf-8"))
        except UnicodeDecodeError:
            raise DecodeError("string payload is not UTF-8") from None
    wire = _WIRE_DTYPES[kind]
    raw = cur.take_declared(count * wire.itemsize, kind.name.lower())
    arr = np.frombuffer(raw, dtype=wire).astype(_ARRAY_DTYPES[kind])
    return DataNode(kind, arr)


def deserialize_node(data):
    """Decode bytes produced by :func:`serialize_node`.

    Raises a :class:`DecodeError` subclass on malformed input; never returns a
    partial tree.
    """
    cur = _Cursor(memoryview(data).cast("B"))
    node = _parse(cur, 0)
    if cur.pos != len(cur.buf):
        raise DecodeError(f"{len(cur.buf) - cur.pos} trailing bytes after root node")
    return node
