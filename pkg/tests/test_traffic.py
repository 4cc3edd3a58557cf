import numpy as np
import pytest
from hypothesis import given, strategies as st

from trafficlang.errors import AmbiguousDirection, MalformedRow, UnorderedTrace
from trafficlang.traffic import (
    CLASSES,
    Direction,
    PacketRecord,
    TraceSample,
    assign_direction,
    format_labels,
    parse_labels,
    parse_trace,
    read_label_file,
    serialize_trace,
    slice_minutes,
    upstream_mask,
    write_label_file,
)

SERVER, CLIENT = "54.192.39.46", "192.168.0.95"


def down(t, size=1514):
    return PacketRecord(t, size, SERVER, CLIENT, 443, 59666)


def up(t, size=66):
    return PacketRecord(t, size, CLIENT, SERVER, 59666, 443)


class TestParseTrace:
    def test_table3_rows(self, table3_text):
        records = parse_trace(table3_text)
        assert len(records) == 5
        assert records[0] == PacketRecord(0.0, 1514, SERVER, CLIENT, 443, 59666)
        assert records[3] == PacketRecord(0.59, 66, CLIENT, SERVER, 59666, 443)

    def test_empty_input(self):
        assert parse_trace("") == []

    def test_comma_and_tab_delimiters(self):
        rows = "0.0,1514,54.192.39.46,192.168.0.95,443,59666\n1.5\t66\t192.168.0.95\t54.192.39.46\t59666\t443\n"
        assert [r.size_bytes for r in parse_trace(rows)] == [1514, 66]

    def test_unordered(self):
        with pytest.raises(UnorderedTrace):
            parse_trace("5.0 100 1.1.1.1 192.168.0.2 1 2\n4.0 100 1.1.1.1 192.168.0.2 1 2\n")

    @pytest.mark.parametrize("row", [
        "0.0 1514 54.192.39.46 192.168.0.95 443",
        "0.0 0 54.192.39.46 192.168.0.95 443 1",
        "0.0 10 54.192.39.999 192.168.0.95 443 1",
        "0.0 10 54.192.39.9 192.168.0.95 443 70000",
        "-1 10 54.192.39.9 192.168.0.95 443 1",
        "0.0 ten 54.192.39.9 192.168.0.95 443 1",
    ])
    def test_malformed(self, row):
        with pytest.raises(MalformedRow):
            parse_trace("0.0 1 1.1.1.1 2.2.2.2 1 1\n" + row)

    def test_equal_timestamps_allowed(self):
        assert len(parse_trace("1.0 10 1.1.1.1 2.2.2.2 1 1\n1.0 20 1.1.1.1 2.2.2.2 1 1\n")) == 2

    @given(st.lists(st.tuples(
        st.floats(0, 1e7, allow_nan=False), st.integers(1, 65535),
        st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1),
        st.integers(0, 65535), st.integers(0, 65535)), max_size=30))
    def test_serialize_roundtrip(self, rows):
        from trafficlang.traffic import int_to_ip
        rows.sort(key=lambda r: r[0])
        records = [PacketRecord(t, s, int_to_ip(a), int_to_ip(b), p, q) for t, s, a, b, p, q in rows]
        assert parse_trace(serialize_trace(records)) == records
        assert parse_trace(serialize_trace(records, header=False)) == records


class TestDirection:
    def test_upstream(self):
        assert assign_direction(up(0.59), "192.168.0.0/24") is Direction.UPSTREAM

    def test_downstream(self):
        assert assign_direction(down(0.0), "192.168.0.0/24") is Direction.DOWNSTREAM

    def test_both_inside(self):
        with pytest.raises(AmbiguousDirection):
            assign_direction(PacketRecord(0, 10, "192.168.0.1", "192.168.0.2", 1, 2), "192.168.0.0/24")

    def test_neither_inside(self):
        with pytest.raises(AmbiguousDirection):
            assign_direction(PacketRecord(0, 10, "10.0.0.1", "10.0.0.2", 1, 2), "192.168.0.0/24")

    def test_vectorized_mask_agrees(self, table3_text):
        records = parse_trace(table3_text)
        sample = TraceSample.from_records("x", records)
        expected = [assign_direction(r) is Direction.UPSTREAM for r in records]
        assert upstream_mask(sample).tolist() == expected


class TestSliceMinutes:
    def test_two_minutes(self):
        samples = slice_minutes([down(0.0), down(70000.0), down(120000.0)])
        assert len(samples) == 2

    def test_partial_minute_dropped(self):
        assert slice_minutes([down(0.0), down(59000.0)]) == []

    def test_boundary_packet_starts_second_sample(self):
        samples = slice_minutes([down(10.0), down(60000.0), down(120000.0)])
        assert len(samples[0]) == 1 and len(samples[1]) == 1
        assert samples[1].timestamps_ms[0] == 0.0

    def test_labels_and_rebase(self):
        samples = slice_minutes([down(61000.0), down(125000.0)],
                                labels_fn=lambda s, e: ["YouTube"] if s >= 60000 else [],
                                duration_ms=180000)
        assert [len(s) for s in samples] == [0, 1, 1]
        assert samples[1].labels == frozenset({"YouTube"}) and samples[1].client_count == 1
        assert samples[1].timestamps_ms[0] == pytest.approx(1000.0)

    @given(st.lists(st.floats(0, 400000, allow_nan=False), min_size=1, max_size=60))
    def test_count_and_range(self, times):
        times.sort()
        samples = slice_minutes([down(t) for t in times])
        assert len(samples) == int(times[-1] // 60000)
        for s in samples:
            assert np.all((s.timestamps_ms >= 0) & (s.timestamps_ms < 60000))
        assert sum(len(s) for s in samples) == sum(t < len(samples) * 60000 for t in times)


class TestTypes:
    def test_sample_rejects_late_packet(self):
        with pytest.raises(ValueError):
            TraceSample.from_records("x", [down(60000.0)])

    def test_sample_rejects_unsorted(self):
        with pytest.raises(ValueError):
            TraceSample.from_records("x", [down(5.0), down(4.0)])

    def test_record_size_positive(self):
        with pytest.raises(ValueError):
            PacketRecord(0.0, 0, SERVER, CLIENT, 1, 2)

    def test_packets_roundtrip(self, table3_text):
        records = parse_trace(table3_text)
        assert TraceSample.from_records("x", records).packets == records

    def test_label_canonical_order(self):
        assert format_labels({"YouTube", "Amazon"}) == "Amazon;YouTube"
        assert parse_labels("YouTube;Amazon") == frozenset({"Amazon", "YouTube"})
        with pytest.raises(ValueError):
            parse_labels("Hulu")

    def test_label_file_roundtrip(self):
        labels = {"s1": frozenset({"Netflix"}), "s2": frozenset(CLASSES[:4]), "s3": frozenset()}
        assert read_label_file(write_label_file(labels)) == labels
