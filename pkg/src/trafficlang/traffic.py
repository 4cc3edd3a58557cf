"""Packet and sample types, the text trace format, direction assignment and
minute slicing.

A trace file carries one packet per line in the column order
``t_ms size_bytes src_ip dst_ip sport dport`` (whitespace or comma separated,
optional header line starting with a letter). Samples keep their packets as
columnar numpy arrays because a single minute of video traffic easily holds
tens of thousands of packets.
"""
from __future__ import annotations

import functools
import ipaddress
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import AmbiguousDirection, MalformedRow, UnorderedTrace

SAMPLE_MS = 60_000.0

# Output-unit order of every multilabel model; frozen so checkpoints interchange.
CLASSES: tuple[str, ...] = ("Amazon", "CNNNews", "FoxNews", "DailyMotion", "Netflix", "YouTube")
CLASS_INDEX = {name: i for i, name in enumerate(CLASSES)}

DEFAULT_SUBNET = "192.168.0.0/24"

LabelSet = frozenset

_SPLIT = re.compile(r"[,\s]+")


class Direction(Enum):
    UPSTREAM = "up"
    DOWNSTREAM = "down"


@dataclass(frozen=True)
class PacketRecord:
    timestamp_ms: float
    size_bytes: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int

    def __post_init__(self):
        if self.size_bytes < 1:
            raise ValueError(f"size_bytes must be >= 1, got {self.size_bytes}")
        if self.timestamp_ms < 0:
            raise ValueError(f"timestamp_ms must be >= 0, got {self.timestamp_ms}")


def make_labels(names: Iterable[str]) -> frozenset:
    names = frozenset(names)
    unknown = names - set(CLASSES)
    if unknown:
        raise ValueError(f"unknown class labels: {sorted(unknown)}")
    return names


def format_labels(labels: Iterable[str]) -> str:
    """Labels joined with ``;`` in canonical class order."""
    labels = set(labels)
    return ";".join(c for c in CLASSES if c in labels)


def parse_labels(text: str) -> frozenset:
    text = text.strip()
    if not text:
        return frozenset()
    return make_labels(part.strip() for part in text.split(";") if part.strip())


@dataclass(eq=False)
class TraceSample:
    """One labeled minute of tunnel traffic, packets stored column-wise."""

    sample_id: str
    timestamps_ms: np.ndarray
    sizes: np.ndarray
    src_ip: np.ndarray
    dst_ip: np.ndarray
    src_port: np.ndarray
    dst_port: np.ndarray
    labels: frozenset = field(default_factory=frozenset)
    client_count: int = 0

    def __post_init__(self):
        self.timestamps_ms = np.asarray(self.timestamps_ms, dtype=np.float64)
        self.sizes = np.asarray(self.sizes, dtype=np.int64)
        self.src_ip = np.asarray(self.src_ip, dtype=np.uint32)
        self.dst_ip = np.asarray(self.dst_ip, dtype=np.uint32)
        self.src_port = np.asarray(self.src_port, dtype=np.int32)
        self.dst_port = np.asarray(self.dst_port, dtype=np.int32)
        n = len(self.timestamps_ms)
        for name in ("sizes", "src_ip", "dst_ip", "src_port", "dst_port"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has length {len(getattr(self, name))}, expected {n}")
        if n:
            t = self.timestamps_ms
            if t[0] < 0 or t[-1] >= SAMPLE_MS:
                raise ValueError("sample timestamps must lie in [0, 60000) ms")
            if np.any(np.diff(t) < 0):
                raise UnorderedTrace(f"sample {self.sample_id} is not sorted by time")
        if not 0 <= self.client_count <= 4:
            raise ValueError(f"client_count must be in 0..4, got {self.client_count}")
        self.labels = make_labels(self.labels)

    def __len__(self) -> int:
        return len(self.timestamps_ms)

    @property
    def packets(self) -> list[PacketRecord]:
        return arrays_to_records(
            self.timestamps_ms, self.sizes, self.src_ip, self.dst_ip, self.src_port, self.dst_port
        )

    @classmethod
    def from_records(cls, sample_id, records: Sequence[PacketRecord], labels=frozenset(), client_count=0):
        cols = records_to_arrays(records)
        return cls(sample_id, *cols, labels=frozenset(labels), client_count=client_count)

    @classmethod
    def empty(cls, sample_id, labels=frozenset(), client_count=0):
        return cls.from_records(sample_id, [], labels, client_count)


# traces repeat a handful of addresses; validating every row dominated parsing
@functools.lru_cache(maxsize=4096)
def ip_to_int(ip: str) -> int:
    return int(ipaddress.IPv4Address(ip))


def int_to_ip(value: int) -> str:
    return _int_to_ip(int(value))


@functools.lru_cache(maxsize=4096)
def _int_to_ip(value: int) -> str:
    return str(ipaddress.IPv4Address(value))


def records_to_arrays(records: Sequence[PacketRecord]):
    n = len(records)
    t = np.empty(n, dtype=np.float64)
    size = np.empty(n, dtype=np.int64)
    src = np.empty(n, dtype=np.uint32)
    dst = np.empty(n, dtype=np.uint32)
    sport = np.empty(n, dtype=np.int32)
    dport = np.empty(n, dtype=np.int32)
    for i, r in enumerate(records):
        t[i] = r.timestamp_ms
        size[i] = r.size_bytes
        src[i] = ip_to_int(r.src_ip)
        dst[i] = ip_to_int(r.dst_ip)
        sport[i] = r.src_port
        dport[i] = r.dst_port
    return t, size, src, dst, sport, dport


def arrays_to_records(t, size, src, dst, sport, dport) -> list[PacketRecord]:
    return [
        PacketRecord(float(t[i]), int(size[i]), int_to_ip(src[i]), int_to_ip(dst[i]), int(sport[i]), int(dport[i]))
        for i in range(len(t))
    ]


@functools.lru_cache(maxsize=4096)
def _canonical_ip(text: str) -> str:
    return str(ipaddress.IPv4Address(text))


def _parse_row(fields: list[str], lineno: int) -> PacketRecord:
    if len(fields) != 6:
        raise MalformedRow(f"line {lineno}: expected 6 fields, got {len(fields)}")
    try:
        t = float(fields[0])
        size = int(fields[1])
        src = _canonical_ip(fields[2])
        dst = _canonical_ip(fields[3])
        sport = int(fields[4])
        dport = int(fields[5])
    except ValueError as exc:
        raise MalformedRow(f"line {lineno}: {exc}") from None
    if not np.isfinite(t) or t < 0:
        raise MalformedRow(f"line {lineno}: bad timestamp {fields[0]!r}")
    if size < 1:
        raise MalformedRow(f"line {lineno}: size must be positive")
    if not (0 <= sport <= 65535 and 0 <= dport <= 65535):
        raise MalformedRow(f"line {lineno}: port out of range")
    return PacketRecord(t, size, src, dst, sport, dport)


def parse_trace(text: str | Iterable[str]) -> list[PacketRecord]:
    """Parse a text trace into records, in file order.

    Raises MalformedRow for bad rows and UnorderedTrace when a timestamp
    goes backwards.
    """
    lines = text.splitlines() if isinstance(text, str) else text
    records: list[PacketRecord] = []
    last_t = -np.inf
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        if lineno == 1 and line[0].isalpha():
            continue
        rec = _parse_row([f for f in _SPLIT.split(line) if f], lineno)
        if rec.timestamp_ms < last_t:
            raise UnorderedTrace(f"line {lineno}: timestamp {rec.timestamp_ms} < previous {last_t}")
        last_t = rec.timestamp_ms
        records.append(rec)
    return records


def serialize_trace(records: Iterable[PacketRecord], header: bool = True) -> str:
    out = ["t_ms size_bytes src_ip dst_ip sport dport"] if header else []
    for r in records:
        out.append(f"{r.timestamp_ms!r} {r.size_bytes} {r.src_ip} {r.dst_ip} {r.src_port} {r.dst_port}")
    return "\n".join(out) + "\n"


def serialize_sample(sample: TraceSample, header: bool = True) -> str:
    out = ["t_ms size_bytes src_ip dst_ip sport dport"] if header else []
    src = [int_to_ip(v) for v in sample.src_ip]
    dst = [int_to_ip(v) for v in sample.dst_ip]
    for i in range(len(sample)):
        out.append(
            f"{float(sample.timestamps_ms[i])!r} {int(sample.sizes[i])} {src[i]} {dst[i]} "
            f"{int(sample.src_port[i])} {int(sample.dst_port[i])}"
        )
    return "\n".join(out) + "\n"


def _subnet(client_subnet) -> ipaddress.IPv4Network:
    if isinstance(client_subnet, ipaddress.IPv4Network):
        return client_subnet
    return ipaddress.IPv4Network(client_subnet, strict=False)


def assign_direction(record: PacketRecord, client_subnet=DEFAULT_SUBNET) -> Direction:
    net = _subnet(client_subnet)
    src_in = ipaddress.IPv4Address(record.src_ip) in net
    dst_in = ipaddress.IPv4Address(record.dst_ip) in net
    if src_in == dst_in:
        raise AmbiguousDirection(f"{record.src_ip} -> {record.dst_ip}: cannot decide direction for {net}")
    return Direction.UPSTREAM if src_in else Direction.DOWNSTREAM


def upstream_mask(sample: TraceSample, client_subnet=DEFAULT_SUBNET) -> np.ndarray:
    """Vectorized direction assignment: True for upstream packets."""
    net = _subnet(client_subnet)
    base, mask = np.uint32(int(net.network_address)), np.uint32(int(net.netmask))
    src_in = (sample.src_ip & mask) == base
    dst_in = (sample.dst_ip & mask) == base
    bad = src_in == dst_in
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise AmbiguousDirection(
            f"sample {sample.sample_id} packet {i}: {int_to_ip(sample.src_ip[i])} -> "
            f"{int_to_ip(sample.dst_ip[i])} cannot be assigned a direction for {net}"
        )
    return src_in


def slice_minutes(
    trace: Sequence[PacketRecord],
    labels_fn: Callable[[float, float], Iterable[str]] = lambda start, end: (),
    duration_ms: float | None = None,
    prefix: str = "m",
) -> list[TraceSample]:
    """Cut a sorted trace into back-to-back one-minute samples.

    Minute ``k`` covers ``[k*60000, (k+1)*60000)``; timestamps are rebased to
    the sample start. The trace duration defaults to the last timestamp and a
    trailing partial minute is dropped.
    """
    if not len(trace):
        return []
    t, size, src, dst, sport, dport = records_to_arrays(trace)
    if np.any(np.diff(t) < 0):
        raise UnorderedTrace("trace is not sorted by time")
    if duration_ms is None:
        duration_ms = float(t[-1])
    n = int(duration_ms // SAMPLE_MS)
    bounds = np.searchsorted(t, np.arange(n + 1) * SAMPLE_MS, side="left")
    samples = []
    for k in range(n):
        lo, hi = bounds[k], bounds[k + 1]
        start = k * SAMPLE_MS
        labels = make_labels(labels_fn(start, start + SAMPLE_MS))
        samples.append(
            TraceSample(
                f"{prefix}{k:05d}",
                t[lo:hi] - start,
                size[lo:hi],
                src[lo:hi],
                dst[lo:hi],
                sport[lo:hi],
                dport[lo:hi],
                labels=labels,
                client_count=min(len(labels), 4),
            )
        )
    return samples


def read_label_file(text: str) -> dict[str, frozenset]:
    """Parse the label sidecar: ``sample_id,label1;label2;...`` per line."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        sample_id, _, labels = line.partition(",")
        if not sample_id:
            raise MalformedRow(f"label line {lineno}: missing sample id")
        out[sample_id.strip()] = parse_labels(labels)
    return out


def write_label_file(labels: dict[str, Iterable[str]]) -> str:
    return "".join(f"{sid},{format_labels(lab)}\n" for sid, lab in labels.items())
