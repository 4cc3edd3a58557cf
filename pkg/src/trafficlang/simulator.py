"""Deterministic synthetic tunnel traffic.

Every provider is an alternating on/off source with exponential segment
lengths; packets inside "on" segments follow a nominal gap (set by the byte
rate and mean packet size) perturbed by uniform jitter. A sample mixes up to
four such sources behind distinct client addresses, optionally with one
short web-page burst per minute.
"""
from __future__ import annotations

import configparser
import itertools
import math
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import TooManyClients
from .traffic import (
    CLASS_INDEX,
    CLASSES,
    SAMPLE_MS,
    PacketRecord,
    TraceSample,
    arrays_to_records,
    format_labels,
    int_to_ip,
    ip_to_int,
    make_labels,
    parse_labels,
)

MAX_CLIENTS = 4
CLIENT_BASE_IP = "192.168.0.11"


@dataclass(frozen=True)
class ClassProfile:
    name: str
    mean_down_rate: float
    mean_up_rate: float
    burst_on_ms: float
    burst_off_ms: float
    pkt_size_down: tuple[tuple[int, float], ...]
    pkt_size_up: tuple[tuple[int, float], ...]
    jitter_fraction: float = 0.0
    server_ip: str = "10.255.0.1"
    server_port: int = 443

    def __post_init__(self):
        if self.mean_down_rate < 0 or self.mean_up_rate < 0:
            raise ValueError(f"{self.name}: rates must be non-negative")
        if self.burst_on_ms <= 0 or self.burst_off_ms <= 0:
            raise ValueError(f"{self.name}: on/off means must be positive")
        if not 0 <= self.jitter_fraction < 1:
            raise ValueError(f"{self.name}: jitter_fraction must be in [0, 1)")
        for dist in (self.pkt_size_down, self.pkt_size_up):
            if not dist or abs(sum(p for _, p in dist) - 1.0) > 1e-9:
                raise ValueError(f"{self.name}: size probabilities must sum to 1")
            if any(s < 1 or p < 0 for s, p in dist):
                raise ValueError(f"{self.name}: sizes must be >= 1, probabilities >= 0")

    @property
    def is_video(self) -> bool:
        return self.name in CLASS_INDEX


@dataclass(frozen=True)
class NoiseProfile:
    burst_ms: float
    mean_down_rate: float
    mean_up_rate: float
    pkt_size_down: tuple[tuple[int, float], ...]
    pkt_size_up: tuple[tuple[int, float], ...]
    jitter_fraction: float
    server_ip: str
    server_port: int
    client_ip: str


@dataclass
class DatasetSpec:
    counts: dict[frozenset, int]
    web_noise: bool = True
    master_seed: int = 0

    def __post_init__(self):
        self.counts = {make_labels(k): int(v) for k, v in self.counts.items()}
        if any(v < 0 for v in self.counts.values()):
            raise ValueError("sample counts must be non-negative")
        if not any(v > 0 and len(k) > 0 for k, v in self.counts.items()):
            raise ValueError("dataset spec needs at least one nonempty label combination")
        if any(len(k) > MAX_CLIENTS for k in self.counts):
            raise TooManyClients("label combinations are limited to 4 providers")

    def ordered_counts(self) -> list[tuple[frozenset, int]]:
        return sorted(self.counts.items(), key=lambda kv: _combo_key(kv[0]))


@dataclass(frozen=True)
class ManifestRow:
    sample_id: str
    seed: int
    client_count: int
    labels: frozenset

    def to_line(self) -> str:
        return f"{self.sample_id},{self.seed},{self.client_count},{format_labels(self.labels)}\n"


@dataclass
class Profiles:
    classes: dict[str, ClassProfile]
    noise: NoiseProfile
    version: int = 1

    def __getitem__(self, name) -> ClassProfile:
        return self.classes[name]


def _combo_key(labels: Iterable[str]):
    idx = sorted(CLASS_INDEX[c] for c in labels)
    return (len(idx), idx)


def _parse_dist(text: str) -> tuple[tuple[int, float], ...]:
    pairs = []
    for token in text.split():
        size, _, prob = token.partition(":")
        pairs.append((int(size), float(prob)))
    return tuple(pairs)


def load_profiles(path=None) -> Profiles:
    """Read a provider profile file; the packaged defaults when *path* is None."""
    parser = configparser.ConfigParser()
    if path is None:
        parser.read_string(resources.files("trafficlang.data").joinpath("profiles.ini").read_text())
    else:
        with open(path) as fh:
            parser.read_file(fh)
    classes = {}
    for name in CLASSES:
        if name not in parser:
            continue
        s = parser[name]
        classes[name] = ClassProfile(
            name=name,
            mean_down_rate=s.getfloat("mean_down_rate"),
            mean_up_rate=s.getfloat("mean_up_rate"),
            burst_on_ms=s.getfloat("burst_on_ms"),
            burst_off_ms=s.getfloat("burst_off_ms"),
            pkt_size_down=_parse_dist(s["pkt_size_down"]),
            pkt_size_up=_parse_dist(s["pkt_size_up"]),
            jitter_fraction=s.getfloat("jitter_fraction", 0.0),
            server_ip=s.get("server_ip", "10.255.0.1"),
            server_port=s.getint("server_port", 443),
        )
    n = parser["web_noise"]
    noise = NoiseProfile(
        burst_ms=n.getfloat("burst_ms"),
        mean_down_rate=n.getfloat("mean_down_rate"),
        mean_up_rate=n.getfloat("mean_up_rate"),
        pkt_size_down=_parse_dist(n["pkt_size_down"]),
        pkt_size_up=_parse_dist(n["pkt_size_up"]),
        jitter_fraction=n.getfloat("jitter_fraction", 0.0),
        server_ip=n["server_ip"],
        server_port=n.getint("server_port", 443),
        client_ip=n["client_ip"],
    )
    version = parser.getint("meta", "version", fallback=1)
    return Profiles(classes, noise, version)


def _on_segments(profile: ClassProfile, duration_ms: float, rng: np.random.Generator) -> np.ndarray:
    """(start, end) rows of the "on" segments of a stationary on/off process."""
    duty = profile.burst_on_ms / (profile.burst_on_ms + profile.burst_off_ms)
    on = bool(rng.random() < duty)
    t = 0.0
    segments = []
    while t < duration_ms:
        length = rng.exponential(profile.burst_on_ms if on else profile.burst_off_ms)
        if on:
            segments.append((t, min(t + length, duration_ms)))
        t += length
        on = not on
    return np.array(segments, dtype=np.float64).reshape(-1, 2)


def _packets_in_segments(segments, rate, dist, jitter, rng):
    """Packet times and sizes for a constant-rate source active on *segments*."""
    if rate <= 0 or len(segments) == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    sizes = np.array([s for s, _ in dist], dtype=np.int64)
    probs = np.array([p for _, p in dist], dtype=np.float64)
    probs = probs / probs.sum()
    gap = float(sizes @ probs) / rate * 1000.0
    lengths = segments[:, 1] - segments[:, 0]
    total_on = float(lengths.sum())
    # Packets live on a compressed clock that only runs while the source is on.
    n_est = int(math.ceil(total_on / gap * 1.05)) + 16
    gaps = gap * (1.0 + jitter * rng.uniform(-1.0, 1.0, n_est))
    tau = rng.uniform(0.0, gap) + np.concatenate(([0.0], np.cumsum(gaps[:-1])))
    tau = tau[tau < total_on]
    on_start = np.concatenate(([0.0], np.cumsum(lengths)[:-1]))
    seg = np.searchsorted(on_start, tau, side="right") - 1
    times = tau - on_start[seg] + segments[seg, 0]
    chosen = sizes[rng.choice(len(sizes), size=len(times), p=probs)]
    return times, chosen


def flow_columns(profile: ClassProfile, duration_ms: float, seed: int,
                 client_ip: str = CLIENT_BASE_IP, client_port: int = 50000):
    """Columns (t, size, src, dst, sport, dport) of one provider flow, time-sorted."""
    if duration_ms <= 0:
        raise ValueError("duration_ms must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    segments = _on_segments(profile, duration_ms, rng)
    t_down, s_down = _packets_in_segments(segments, profile.mean_down_rate, profile.pkt_size_down,
                                          profile.jitter_fraction, rng)
    t_up, s_up = _packets_in_segments(segments, profile.mean_up_rate, profile.pkt_size_up,
                                      profile.jitter_fraction, rng)
    return _merge_directions(t_down, s_down, t_up, s_up, ip_to_int(client_ip), client_port,
                             ip_to_int(profile.server_ip), profile.server_port)


def _merge_directions(t_down, s_down, t_up, s_up, client, cport, server, sport):
    n_down, n_up = len(t_down), len(t_up)
    t = np.concatenate((t_down, t_up))
    size = np.concatenate((s_down, s_up)).astype(np.int64)
    src = np.concatenate((np.full(n_down, server, np.uint32), np.full(n_up, client, np.uint32)))
    dst = np.concatenate((np.full(n_down, client, np.uint32), np.full(n_up, server, np.uint32)))
    sp = np.concatenate((np.full(n_down, sport, np.int32), np.full(n_up, cport, np.int32)))
    dp = np.concatenate((np.full(n_down, cport, np.int32), np.full(n_up, sport, np.int32)))
    order = np.argsort(t, kind="stable")
    return t[order], size[order], src[order], dst[order], sp[order], dp[order]


def generate_flow(profile: ClassProfile, duration_ms: float, seed: int, **kwargs) -> list[PacketRecord]:
    return arrays_to_records(*flow_columns(profile, duration_ms, seed, **kwargs))


def _noise_columns(noise: NoiseProfile, rng: np.random.Generator):
    start = rng.uniform(0.0, SAMPLE_MS - noise.burst_ms)
    segments = np.array([[start, start + noise.burst_ms]])
    t_down, s_down = _packets_in_segments(segments, noise.mean_down_rate, noise.pkt_size_down,
                                          noise.jitter_fraction, rng)
    t_up, s_up = _packets_in_segments(segments, noise.mean_up_rate, noise.pkt_size_up,
                                      noise.jitter_fraction, rng)
    cport = int(rng.integers(49152, 65536))
    return _merge_directions(t_down, s_down, t_up, s_up, ip_to_int(noise.client_ip), cport,
                             ip_to_int(noise.server_ip), noise.server_port)


def compose_sample(profiles: Sequence[ClassProfile], web_noise: bool, seed: int,
                   sample_id: str = "sample", noise: NoiseProfile | None = None) -> TraceSample:
    """Mix up to four provider flows (one client each) into a one-minute sample."""
    if len(profiles) > MAX_CLIENTS:
        raise TooManyClients(f"{len(profiles)} clients requested, at most {MAX_CLIENTS} share the tunnel")
    root = np.random.SeedSequence(int(seed))
    flow_seeds = root.spawn(len(profiles) + 1)
    columns = []
    base = ip_to_int(CLIENT_BASE_IP)
    ports = np.random.default_rng(flow_seeds[-1]).integers(49152, 65536, size=len(profiles))
    for i, (profile, fseed) in enumerate(zip(profiles, flow_seeds)):
        s = int(fseed.generate_state(1, np.uint64)[0])
        columns.append(flow_columns(profile, SAMPLE_MS, s, client_ip=int_to_ip(base + i), client_port=int(ports[i])))
    if web_noise:
        if noise is None:
            noise = load_profiles().noise
        columns.append(_noise_columns(noise, np.random.default_rng(flow_seeds[-1].spawn(1)[0])))
    if columns:
        cols = [np.concatenate(parts) for parts in zip(*columns)]
        order = np.argsort(cols[0], kind="stable")
        cols = [c[order] for c in cols]
    else:
        cols = [np.empty(0)] * 6
    labels = frozenset(p.name for p in profiles if p.is_video)
    return TraceSample(sample_id, *cols, labels=labels, client_count=len(profiles))


def sample_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, np.uint64)[0])


def iter_dataset(spec: DatasetSpec, profiles: Profiles | None = None) -> Iterator[tuple[TraceSample, ManifestRow]]:
    """Lazily generate the samples of *spec* with their manifest rows."""
    profiles = profiles or load_profiles()
    index = 0
    for labels, count in spec.ordered_counts():
        members = [profiles[c] for c in CLASSES if c in labels]
        for _ in range(count):
            sid = f"s{index:06d}"
            seed = sample_seed(spec.master_seed, index)
            sample = compose_sample(members, spec.web_noise, seed, sample_id=sid, noise=profiles.noise)
            yield sample, ManifestRow(sid, seed, sample.client_count, sample.labels)
            index += 1


def generate_dataset(spec: DatasetSpec, profiles: Profiles | None = None) -> tuple[list[TraceSample], list[ManifestRow]]:
    samples, manifest = [], []
    for sample, row in iter_dataset(spec, profiles):
        samples.append(sample)
        manifest.append(row)
    return samples, manifest


def client_mix_spec(per_client_count: dict[int, int], web_noise: bool = True, master_seed: int = 0) -> DatasetSpec:
    """Spread each client-count total evenly over all label combinations of that size."""
    counts: dict[frozenset, int] = {}
    for k, total in sorted(per_client_count.items()):
        combos = [frozenset(c) for c in itertools.combinations(CLASSES, k)]
        base, extra = divmod(int(total), len(combos))
        for i, combo in enumerate(combos):
            counts[combo] = base + (1 if i < extra else 0)
    return DatasetSpec(counts, web_noise=web_noise, master_seed=master_seed)


def scaled_client_mix(total: int, shares: Sequence[int] = (8703, 9128, 1402, 28)) -> dict[int, int]:
    """Largest-remainder apportionment of *total* samples over 1..4 clients."""
    weights = np.asarray(shares, dtype=np.float64)
    exact = weights / weights.sum() * total
    counts = np.floor(exact).astype(int)
    for i in np.argsort(-(exact - counts), kind="stable")[: total - counts.sum()]:
        counts[i] += 1
    return {k + 1: int(c) for k, c in enumerate(counts)}


def read_manifest(text: str) -> list[ManifestRow]:
    rows = []
    for line in text.splitlines():
        if line.strip():
            sid, seed, cc, labels = line.strip().split(",", 3)
            rows.append(ManifestRow(sid, int(seed), int(cc), parse_labels(labels)))
    return rows
