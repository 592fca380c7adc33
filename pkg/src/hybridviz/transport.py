"""Framed, pace-limited step transport and the receiver replay loop.

Frame layout (little-endian)::

    magic[4]="HXIT" | version u8 | kind u8 | step u64 | rank u32
    | rank_count u32 | payload_len u64 | payload[payload_len]

Two endpoint flavours carry identical frame bytes: a stream socket
(``host:port``) and a staging directory (``file://<dir>``) holding one file
per frame.
"""
from __future__ import annotations

import logging
import os
import queue
import re
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

from .node import deserialize_node, serialize_node

log = logging.getLogger(__name__)

MAGIC = b"HXIT"
VERSION = 1
DATA, END_OF_STREAM, HANDSHAKE = 0, 1, 2
HEADER = struct.Struct("<4sBBQIIQ")
HEADER_SIZE = HEADER.size  # 30
CHUNK = 64 * 1024
DEFAULT_TIMEOUT = 10.0


class TransportError(Exception):
    pass


class ConnectError(TransportError):
    pass


class HandshakeError(TransportError):
    pass


class SendError(TransportError):
    pass


class ProtocolError(TransportError):
    """Malformed frame. ``offset`` is the byte offset of the bad field."""

    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class TruncatedStreamError(TransportError):
    pass


class StepOrderError(TransportError):
    pass


class DuplicateFrameError(StepOrderError):
    pass


class RankCountError(TransportError):
    pass


class IncompleteStepError(TransportError):
    pass


def encode_header(kind, step, rank, rank_count, payload_len):
    return HEADER.pack(MAGIC, VERSION, kind, step, rank, rank_count, payload_len)


def decode_header(buf, offset=0):
    """Parse a 30-byte header; ``offset`` is only used for error reporting."""
    if len(buf) < HEADER_SIZE:
        raise TruncatedStreamError(f"frame header truncated at offset {offset}")
    magic, version, kind, step, rank, rank_count, plen = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}", offset)
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}", offset + 4)
    if kind not in (DATA, END_OF_STREAM, HANDSHAKE):
        raise ProtocolError(f"unknown frame kind {kind}", offset + 5)
    if rank_count < 1 or rank >= rank_count:
        raise ProtocolError(f"rank {rank} outside rank_count {rank_count}", offset + 14)
    return kind, step, rank, rank_count, plen


def encode_frame(kind, step, rank, rank_count, payload=b""):
    return encode_header(kind, step, rank, rank_count, len(payload)) + bytes(payload)


@dataclass
class StepData:
    step: int
    rank: int
    rank_count: int
    node: object
    nbytes: int = 0


@dataclass
class EndOfStream:
    rank: int
    rank_count: int


def decode_frame(data):
    """Decode one complete frame from bytes into StepData / EndOfStream / header tuple."""
    kind, step, rank, rank_count, plen = decode_header(data)
    if len(data) - HEADER_SIZE < plen:
        raise TruncatedStreamError(
            f"payload declares {plen} bytes, {len(data) - HEADER_SIZE} present"
        )
    if kind == END_OF_STREAM:
        return EndOfStream(rank, rank_count)
    if kind == HANDSHAKE:
        return ("handshake", rank, rank_count)
    payload = memoryview(data)[HEADER_SIZE:HEADER_SIZE + plen]
    return StepData(step, rank, rank_count, deserialize_node(payload), plen)


# throttling ------------------------------------------------------------------

@dataclass(frozen=True)
class ThrottleConfig:
    """Writer-side bandwidth cap in bytes/second; ``None`` means unlimited."""

    rate: float | None = None

    def __post_init__(self):
        if self.rate is not None and not self.rate > 0:
            raise ValueError("throttle rate must be positive")


class Throttle:
    """Token bucket with no burst allowance, paced in 64 KiB chunks.

    Each chunk reserves the next ``n / rate`` seconds of link time and is
    released when its reservation ends, so a transfer of ``b`` bytes never
    finishes before ``b / rate`` seconds. Sharing one instance between writers
    models a shared interconnect.
    """

    def __init__(self, rate):
        if not rate > 0:
            raise ValueError("throttle rate must be positive")
        self.rate = float(rate)
        self._free_at = 0.0
        self._lock = threading.Lock()

    def acquire(self, nbytes):
        with self._lock:
            now = time.monotonic()
            start = max(now, self._free_at)
            self._free_at = start + nbytes / self.rate
            release = self._free_at
        delay = release - time.monotonic()
        while delay > 0:
            time.sleep(delay)
            delay = release - time.monotonic()


def _as_throttle(throttle):
    if throttle is None or isinstance(throttle, Throttle):
        return throttle
    if isinstance(throttle, ThrottleConfig):
        return Throttle(throttle.rate) if throttle.rate is not None else None
    return Throttle(float(throttle))


# writer ----------------------------------------------------------------------

@dataclass
class SendStats:
    bytes: int
    duration: float
    payload_bytes: int = 0


def parse_endpoint(endpoint):
    """``("file", dir)`` or ``("tcp", (host, port))``."""
    if endpoint.startswith("file://"):
        return "file", endpoint[len("file://"):]
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint {endpoint!r} is neither host:port nor file://<dir>")
    return "tcp", (host or "127.0.0.1", int(port))


def _recv_exact(sock, n):
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:])
        if k == 0:
            return bytes(buf[:got])
        got += k
    return buf


class Writer:
    """Simulation-side frame writer for one connection (usually one rank)."""

    def __init__(self, endpoint, throttle=None, rank=0, rank_count=1, timeout=DEFAULT_TIMEOUT):
        self.endpoint = endpoint
        self.throttle = _as_throttle(throttle)
        self.rank = rank
        self.rank_count = rank_count
        self._last_step = {}
        self._sock = None
        self._dir = None
        self.closed = False
        mode, where = parse_endpoint(endpoint)
        if mode == "file":
            if not os.path.isdir(where) or not os.access(where, os.W_OK):
                raise ConnectError(f"staging directory {where!r} is not writable")
            self._dir = where
            return
        try:
            self._sock = socket.create_connection(where, timeout=timeout)
        except OSError as e:
            raise ConnectError(f"cannot connect to {endpoint}: {e}") from e
        try:
            self._sock.sendall(encode_frame(HANDSHAKE, 0, rank, rank_count))
            ack = _recv_exact(self._sock, HEADER_SIZE)
            kind = decode_header(ack)[0]
        except (OSError, TransportError) as e:
            self._sock.close()
            raise HandshakeError(f"handshake with {endpoint} failed: {e}") from e
        if kind != HANDSHAKE:
            self._sock.close()
            raise HandshakeError(f"expected handshake ack, got frame kind {kind}")
        self._sock.settimeout(None)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _write(self, header, payload):
        total = len(header) + len(payload)
        if self._dir is not None:
            return self._write_file(header, payload)
        view = memoryview(payload).cast("B")
        try:
            if self.throttle is None:
                self._sock.sendall(header)
                if len(view):
                    self._sock.sendall(view)
                return total
            first = CHUNK - len(header)
            self.throttle.acquire(len(header) + min(first, len(view)))
            self._sock.sendall(header + bytes(view[:first]))
            for s in range(first, len(view), CHUNK):
                chunk = view[s:s + CHUNK]
                self.throttle.acquire(len(chunk))
                self._sock.sendall(chunk)
        except OSError as e:
            raise SendError(f"send to {self.endpoint} failed: {e}") from e
        return total

    def _write_file(self, header, payload):
        kind, step, rank = header[5], *struct.unpack_from("<QI", header, 6)
        name = f"step{step}_rank{rank}.hxit" if kind == DATA else f"eos_rank{rank}.hxit"
        path = os.path.join(self._dir, name)
        tmp = path + ".part"
        data = header + bytes(payload)
        if self.throttle is not None:
            for s in range(0, len(data), CHUNK):
                self.throttle.acquire(len(data[s:s + CHUNK]))
        try:
            with open(tmp, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        except OSError as e:
            raise SendError(f"cannot write {path}: {e}") from e
        return len(data)

    def put_payload(self, step, rank, rank_count, payload):
        """Send an already serialized node as a data frame."""
        if self.closed:
            raise SendError("writer is closed")
        last = self._last_step.get(rank)
        if last is not None and step <= last:
            raise StepOrderError(f"rank {rank}: step {step} not after step {last}")
        t0 = time.perf_counter()
        n = self._write(encode_header(DATA, step, rank, rank_count, len(payload)), payload)
        dt = time.perf_counter() - t0
        self._last_step[rank] = step
        return SendStats(bytes=n, duration=dt, payload_bytes=len(payload))

    def put_step(self, step, rank, rank_count, node):
        return self.put_payload(step, rank, rank_count, serialize_node(node))

    def close(self, end_of_stream=True):
        if self.closed:
            return
        try:
            if end_of_stream:
                self._write(encode_header(END_OF_STREAM, 0, self.rank, self.rank_count, 0), b"")
        finally:
            self.closed = True
            if self._sock is not None:
                try:
                    self._sock.shutdown(socket.SHUT_WR)
                    # wait for the reader to close its side, so the frame is delivered
                    self._sock.settimeout(DEFAULT_TIMEOUT)
                    self._sock.recv(1)
                except OSError:
                    pass
                self._sock.close()


def open_writer(endpoint, throttle=None, rank=0, rank_count=1, timeout=DEFAULT_TIMEOUT):
    return Writer(endpoint, throttle, rank, rank_count, timeout)


# reader ----------------------------------------------------------------------

class _Ordering:
    def __init__(self):
        self.last = {}
        self.lock = threading.Lock()

    def check(self, step, rank):
        with self.lock:
            last = self.last.get(rank)
            if last is not None:
                if step == last:
                    raise DuplicateFrameError(f"duplicate frame for step {step}, rank {rank}")
                if step < last:
                    raise StepOrderError(f"rank {rank}: step {step} after step {last}")
            self.last[rank] = step


class Reader:
    """Visualization-side receiver accepting any number of writer connections."""

    def __init__(self, endpoint="127.0.0.1:0", poll_interval=0.005):
        self.handshakes = []
        self._queue = queue.Queue()
        self._order = _Ordering()
        self._closed = threading.Event()
        self._threads = []
        mode, where = parse_endpoint(endpoint)
        self.mode = mode
        self.poll_interval = poll_interval
        if mode == "file":
            os.makedirs(where, exist_ok=True)
            self._dir = where
            self._consumed = set()
            self.endpoint = endpoint
            return
        self._server = socket.create_server(where, backlog=64)
        host, port = self._server.getsockname()[:2]
        self.endpoint = f"{host}:{port}"
        t = threading.Thread(target=self._accept, daemon=True)
        t.start()
        self._threads.append(t)

    @property
    def address(self):
        return self.endpoint

    def _accept(self):
        while not self._closed.is_set():
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            t = threading.Thread(target=self._serve, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve(self, conn):
        offset = 0
        try:
            with conn:
                while True:
                    head = _recv_exact(conn, HEADER_SIZE)
                    if len(head) == 0:
                        raise TruncatedStreamError(
                            f"connection closed before end-of-stream at offset {offset}"
                        )
                    if len(head) < HEADER_SIZE:
                        raise TruncatedStreamError(f"frame header truncated at offset {offset}")
                    kind, step, rank, rank_count, plen = decode_header(head, offset)
                    payload = _recv_exact(conn, plen) if plen else b""
                    if len(payload) < plen:
                        raise TruncatedStreamError(
                            f"payload truncated at offset {offset + HEADER_SIZE + len(payload)}"
                            f" ({len(payload)} of {plen} bytes)"
                        )
                    offset += HEADER_SIZE + plen
                    if kind == HANDSHAKE:
                        self.handshakes.append({"version": VERSION, "rank": rank, "rank_count": rank_count})
                        conn.sendall(encode_frame(HANDSHAKE, 0, rank, rank_count))
                    elif kind == END_OF_STREAM:
                        self._queue.put(EndOfStream(rank, rank_count))
                        return
                    else:
                        self._order.check(step, rank)
                        node = deserialize_node(payload)
                        self._queue.put(StepData(step, rank, rank_count, node, plen))
        except Exception as e:  # handed to the consumer thread
            if not self._closed.is_set():
                self._queue.put(e)

    def _poll_files(self):
        names = set(os.listdir(self._dir)) - self._consumed
        data = []
        eos = []
        for n in names:
            m = re.fullmatch(r"step(\d+)_rank(\d+)\.hxit", n)
            if m:
                data.append((int(m[1]), int(m[2]), n))
            elif re.fullmatch(r"eos_rank(\d+)\.hxit", n):
                eos.append(n)
        if data:
            step, rank, n = min(data)
        elif eos:
            n = sorted(eos)[0]
        else:
            return None
        self._consumed.add(n)
        with open(os.path.join(self._dir, n), "rb") as f:
            item = decode_frame(f.read())
        if isinstance(item, StepData):
            self._order.check(item.step, item.rank)
        return item

    def get_step(self, timeout=None):
        """Next data frame or end-of-stream marker, blocking until one arrives."""
        if self.mode == "file":
            deadline = None if timeout is None else time.monotonic() + timeout
            while True:
                item = self._poll_files()
                if item is not None:
                    return item
                if deadline is not None and time.monotonic() > deadline:
                    raise TimeoutError("no frame within timeout")
                time.sleep(self.poll_interval)
        try:
            item = self._queue.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError("no frame within timeout") from None
        if isinstance(item, Exception):
            raise item
        return item

    def close(self):
        self._closed.set()
        if self.mode != "file":
            self._server.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# replay ----------------------------------------------------------------------

@dataclass
class ReplaySummary:
    steps: int = 0
    ranks: int = 0
    payload_bytes: dict = field(default_factory=dict)


def replay_loop(reader, sink, timeout=None):
    """Group frames by step and call ``sink(step, parts)`` once per complete step.

    ``parts`` holds one node per rank in rank order. Steps are delivered in
    increasing order; the loop ends once every rank has sent end-of-stream.
    """
    rank_count = None
    pending = {}
    nbytes = {}
    eos = set()
    done_through = -1
    summary = ReplaySummary()

    def flush():
        nonlocal done_through
        while pending:
            step = min(pending)
            if len(pending[step]) < rank_count:
                return
            parts = pending.pop(step)
            sink(step, [parts[r] for r in range(rank_count)])
            summary.steps += 1
            summary.payload_bytes[step] = nbytes.pop(step)
            done_through = step

    while rank_count is None or len(eos) < rank_count:
        item = reader.get_step(timeout=timeout)
        if rank_count is None:
            rank_count = item.rank_count
            summary.ranks = rank_count
        elif item.rank_count != rank_count:
            raise RankCountError(
                f"rank {item.rank} reports rank_count {item.rank_count}, expected {rank_count}"
            )
        if isinstance(item, EndOfStream):
            eos.add(item.rank)
            continue
        parts = pending.setdefault(item.step, {})
        if item.rank in parts or item.step <= done_through:
            raise DuplicateFrameError(f"duplicate frame for step {item.step}, rank {item.rank}")
        parts[item.rank] = item.node
        nbytes[item.step] = nbytes.get(item.step, 0) + item.nbytes
        flush()
    if pending:
        step = min(pending)
        raise IncompleteStepError(
            f"stream ended with step {step} missing ranks "
            f"{sorted(set(range(rank_count)) - set(pending[step]))}"
        )
    return summary
