import ipaddress
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import baseline_reference, entropy_bits, permutation_entropy_bruteforce, stat_block_reference
from trafficlang.baseline import (
    N_FEATURES,
    N_INTERVALS,
    extract_baseline,
    format_baseline_line,
    permutation_entropy,
    read_baseline,
    shannon_entropy,
    stat_block,
)
from trafficlang.simulator import compose_sample, load_profiles
from trafficlang.traffic import PacketRecord, TraceSample

NET = ipaddress.ip_network("192.168.0.0/24")


def in_net(ip):
    return ipaddress.ip_address(ip) in NET


class TestShannon:
    @pytest.mark.parametrize("values,expected", [([7, 7, 7], 0.0), ([1, 2], 1.0), ([1, 1, 2, 3], 1.5), ([], 0.0)])
    def test_examples(self, values, expected):
        assert shannon_entropy(values) == pytest.approx(expected, abs=1e-12)

    @given(st.lists(st.integers(0, 6), max_size=40))
    def test_oracle(self, values):
        assert abs(shannon_entropy(values) - entropy_bits(values)) <= 1e-9


class TestPermutationEntropy:
    @pytest.mark.parametrize("n", [2, 3, 4, 5])
    def test_increasing(self, n):
        assert permutation_entropy(list(range(12)), n) == 0.0

    def test_up_down(self):
        assert permutation_entropy([1, 3, 2], 2) == pytest.approx(1.0)

    def test_short_series(self):
        assert permutation_entropy([1.0, 2.0], 3) == 0.0

    def test_ties_rank_earlier_lower(self):
        # [5, 5] ranks like an increasing pair, so a constant series has a single pattern
        assert permutation_entropy([5, 5, 5, 5], 2) == 0.0
        assert permutation_entropy([5, 5, 4], 2) == pytest.approx(1.0)

    def test_seeded_series_order3(self):
        values = np.random.default_rng(50).normal(size=50).tolist()
        assert abs(permutation_entropy(values, 3) - permutation_entropy_bruteforce(values, 3)) <= 1e-9

    @given(st.lists(st.integers(0, 4), max_size=25), st.sampled_from([2, 3, 4, 5]))
    def test_bound_and_oracle(self, values, n):
        h = permutation_entropy(values, n)
        assert 0.0 <= h <= math.log2(math.factorial(n)) + 1e-12
        assert abs(h - permutation_entropy_bruteforce(values, n)) <= 1e-9

    def test_order_validated(self):
        with pytest.raises(ValueError):
            permutation_entropy([1, 2, 3], 1)


class TestStatBlock:
    def test_constant(self):
        assert stat_block([5, 5, 5, 5]).tolist() == [5, 5, 5, 5, 0, 0, 0, 0, 0, 0, 0, 0]

    def test_empty(self):
        assert stat_block([]).tolist() == [0.0] * 12

    def test_with_outlier(self):
        got = stat_block([1, 2, 3, 4, 100])
        np.testing.assert_allclose(got, stat_block_reference([1, 2, 3, 4, 100]), rtol=0, atol=1e-9)
        # sigma = sqrt(1522) ~ 39.01, so 100 (deviation 78) is a mild but not an extreme outlier
        assert got[5] == 0 and got[6] == 1

    @given(st.lists(st.floats(-1e4, 1e4, allow_nan=False), max_size=30))
    def test_oracle_and_outlier_order(self, values):
        got = stat_block(values)
        np.testing.assert_allclose(got, stat_block_reference(values), rtol=1e-9, atol=1e-9)
        assert got[6] >= got[5]


def _records(sample):
    return sample.packets


class TestExtractBaseline:
    def test_idle(self):
        assert np.array_equal(extract_baseline(TraceSample.empty("x")), np.zeros((20, 60)))

    def test_only_first_interval(self):
        recs = [PacketRecord(t, 500, "8.8.8.8", "192.168.0.4", 443, 5000) for t in (10.0, 1500.0, 2999.0)]
        out = extract_baseline(TraceSample.from_records("x", recs))
        assert np.any(out[0] != 0) and np.all(out[1:] == 0)
        assert out[0, 3:6].tolist() == [1, 1, 1]

    @pytest.mark.parametrize("seed", range(3))
    def test_reference_on_synthetic(self, seed):
        profiles = load_profiles()
        sample = compose_sample([profiles["Netflix"], profiles["CNNNews"]], web_noise=True, seed=seed)
        ref = np.array(baseline_reference(_records(sample), in_net))
        got = extract_baseline(sample)
        assert got.shape == (N_INTERVALS, N_FEATURES)
        np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-9)

    @given(st.lists(st.tuples(st.floats(0, 59999.9), st.integers(40, 1514), st.booleans()), max_size=60))
    def test_shape_and_counts(self, rows):
        recs = [PacketRecord(t, s, "192.168.0.2", "1.2.3.4", 1, 2) if u else PacketRecord(t, s, "1.2.3.4", "192.168.0.2", 2, 1)
                for t, s, u in sorted(rows)]
        out = extract_baseline(TraceSample.from_records("x", recs))
        assert out.shape == (20, 60) and np.all(np.isfinite(out))
        assert out[:, 0:6].sum() == len(rows)


class TestBaselineFile:
    def test_roundtrip(self, rng):
        feats = rng.normal(size=(20, 60))
        [(sid, back)] = read_baseline(format_baseline_line("s9", feats))
        assert sid == "s9" and np.array_equal(back, feats)

    def test_wrong_width(self):
        with pytest.raises(ValueError):
            read_baseline("s1,1,2,3\n")
