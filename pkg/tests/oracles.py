"""Straightforward pure-Python reference implementations used as test oracles.

They follow the feature definitions directly (loops, the statistics module,
explicit pattern enumeration) and share no code with the package.
"""
import itertools
import math
import statistics
from collections import Counter


def entropy_bits(values):
    if not values:
        return 0.0
    n = len(values)
    h = 0.0
    for c in Counter(values).values():
        p = c / n
        h -= p * math.log2(p)
    return abs(h)


def permutation_entropy_bruteforce(values, order):
    if len(values) < order:
        return 0.0
    windows = [values[i:i + order] for i in range(len(values) - order + 1)]
    # each window's pattern lists its positions from smallest to largest value; ties keep index order
    seen = Counter(tuple(sorted(range(order), key=lambda i: (w[i], i))) for w in windows)
    counts = {perm: seen.get(perm, 0) for perm in itertools.permutations(range(order))}
    total = len(windows)
    h = 0.0
    for c in counts.values():
        if c:
            h -= c / total * math.log2(c / total)
    return abs(h)


def stat_block_reference(values):
    values = [float(v) for v in values]
    if not values:
        return [0.0] * 12
    mu = statistics.fmean(values)
    var = statistics.pvariance(values, mu)
    sigma = math.sqrt(var)
    out = [max(values), min(values), mu, statistics.median(values), var,
           float(sum(1 for v in values if abs(v - mu) > 2 * sigma)),
           float(sum(1 for v in values if abs(v - mu) > sigma)),
           entropy_bits(values)]
    out += [permutation_entropy_bruteforce(values, n) for n in (2, 3, 4, 5)]
    return out


def baseline_reference(records, subnet_contains):
    """20 x 60 list of lists from PacketRecords; *subnet_contains(ip) -> bool*."""
    rows = []
    for j in range(20):
        start, end = 3000.0 * j, 3000.0 * (j + 1)
        pkts = [r for r in records if start <= r.timestamp_ms < end]
        up = [r for r in pkts if subnet_contains(r.src_ip)]
        down = [r for r in pkts if subnet_contains(r.dst_ip)]
        vec = []
        for group in (up, down):
            vec += [float(sum(1 for r in group if start + 1000 * k <= r.timestamp_ms < start + 1000 * (k + 1)))
                    for k in range(3)]
        for group in (up, down):
            vec += [float(sum(r.size_bytes for r in group
                              if start + 1000 * k <= r.timestamp_ms < start + 1000 * (k + 1)))
                    for k in range(3)]
        for group in (up, down):
            vec += stat_block_reference([r.size_bytes for r in group])
        for group in (up, down):
            times = [r.timestamp_ms for r in group]
            vec += stat_block_reference([b - a for a, b in zip(times, times[1:])])
        rows.append(vec)
    return rows


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))
