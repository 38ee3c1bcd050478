import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from bilstm_ids import layers as L
from bilstm_ids.data import (FlowRecord, PacketRecord, PcapError, Protocol, extract_flows,
                             load_flow_csv, parse_pcap, save_flow_csv, window_indices, write_pcap)
from bilstm_ids.data.pcap import ethernet_frame, ipv4_packet, tcp_segment, udp_datagram
from bilstm_ids.data.records import ClassLabel
from bilstm_ids.kvtext import dump_kv, parse_kv
from bilstm_ids.metrics import metrics_from_counts
from bilstm_ids.numerics import he_uniform, make_rng, matmul, softmax, truncated_normal
from bilstm_ids.training import split_indices
from oracles import matmul_loops

seeds = st.integers(0, 2 ** 32 - 1)
FAST = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@FAST
@given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), seeds)
def test_matmul_matches_loops(n, k, m, seed):
    rng = make_rng(seed)
    a, b = rng.normal(size=(n, k)), rng.normal(size=(k, m))
    assert np.max(np.abs(matmul(a, b) - np.array(matmul_loops(a.tolist(), b.tolist())))) < 1e-12


@FAST
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20), st.floats(-1000, 1000))
def test_softmax_normalized_and_shift_invariant(logits, c):
    x = np.array(logits)
    p = softmax(x)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.max(np.abs(softmax(x + c) - p)) < 1e-12


@FAST
@given(seeds, st.floats(1e-3, 5.0), st.integers(1, 500))
def test_initializer_bounds(seed, std, fan_in):
    t = truncated_normal((50,), 0.0, std, make_rng(seed))
    assert np.all(np.abs(t) <= 2 * std)
    np.testing.assert_array_equal(t, truncated_normal((50,), 0.0, std, make_rng(seed)))
    u = he_uniform((50,), fan_in, make_rng(seed))
    assert np.all(np.abs(u) <= np.sqrt(6.0 / fan_in))


@FAST
@given(seeds, st.integers(1, 5), st.integers(1, 6), st.floats(0.1, 20.0))
def test_gate_ranges(seed, d, h, scale):
    rng = make_rng(seed)
    p = L.LstmParams(**{k: rng.normal(scale=scale, size=s)
                        for k, s in L.lstm_param_shapes(d, h).items()})
    _, c = L.lstm_cell_forward(p, rng.normal(size=(3, d)),
                               L.LstmState(rng.normal(size=(3, h)), rng.normal(size=(3, h))))
    # strict bounds hold before float rounding saturates; allow the closed interval
    for g in (c.i, c.f, c.o):
        assert np.all((g >= 0) & (g <= 1))
    assert np.all(np.abs(c.g) <= 1)


@FAST
@given(seeds, st.sampled_from([1, 2, 5, 10]), st.integers(1, 4), st.integers(1, 5))
def test_bilstm_time_reversal(seed, T, d, h):
    rng = make_rng(seed)
    mk = lambda: L.LstmParams(**{k: rng.normal(scale=0.7, size=s)
                                 for k, s in L.lstm_param_shapes(d, h).items()})
    pf, pb = mk(), mk()
    x = rng.normal(size=(T, d))
    y, _ = L.bilstm_forward(L.BiLstmParams(pf, pb), x)
    yr, _ = L.bilstm_forward(L.BiLstmParams(pb, pf), x[::-1])
    assert np.max(np.abs(yr - np.concatenate([y[::-1, h:], y[::-1, :h]], axis=1))) < 1e-12


@FAST
@given(st.integers(5, 400), seeds, st.booleans())
def test_split_is_partition(n, seed, with_labels):
    labels = make_rng(seed).integers(0, 3, size=n) if with_labels else None
    parts = split_indices(n, seed=seed, labels=labels)
    joined = np.concatenate(parts)
    assert len(joined) == n and len(set(joined.tolist())) == n
    assert [len(p) for p in parts][:2] == [int(n * 0.6 + 1e-9), int(n * 0.2 + 1e-9)]


@FAST
@given(*[st.integers(0, 10 ** 6)] * 4)
def test_f1_is_harmonic_mean(tp, tn, fp, fn):
    m = metrics_from_counts(tp, tn, fp, fn)
    if m.precision + m.recall > 0:
        assert m.f1 == 2 * (m.precision * m.recall) / (m.precision + m.recall)
    assert 0.0 <= m.f1 <= 1.0


packet = st.builds(
    lambda t, src, dst, port, proto, size: PacketRecord(
        int(t), int((t % 1) * 1e6), f"10.0.0.{src}", f"10.0.0.{dst}",
        None if proto == "arp" else 1234, None if proto == "arp" else port,
        Protocol.ARP if proto == "arp" else Protocol.TCP, size),
    st.floats(0, 100), st.integers(1, 4), st.integers(1, 4), st.sampled_from([22, 80]),
    st.sampled_from(["tcp", "arp"]), st.integers(42, 1500))


@FAST
@given(st.lists(packet, max_size=60), st.sampled_from([0.5, 1.0, 7.0]))
def test_flow_extraction_conserves_packets(packets, window):
    flows = extract_flows(packets, window)
    assert sum(f.packet_count for f in flows) == len(packets)
    assert sum(f.byte_count for f in flows) == sum(p.length for p in packets)


@FAST
@given(st.integers(1, 30), st.integers(1, 4))
def test_sequence_count_per_key(m, keys):
    flows = [FlowRecord(float(t), f"10.0.0.{k}", "10.0.0.9", 80, 1, 60, 0.0, 1, 0.0, 0,
                        ClassLabel.Normal) for k in range(keys) for t in range(m)]
    idx, _ = window_indices(flows)
    assert len(idx) == keys * (m - 9 if m >= 10 else 1)


flow_rec = st.builds(
    FlowRecord,
    st.integers(0, 10 ** 7).map(lambda v: v / 1e3),
    st.sampled_from(["10.0.0.1", "192.168.1.7", "255.255.255.255"]),
    st.sampled_from(["10.0.0.2", "8.8.8.8"]), st.integers(0, 65535), st.integers(1, 10 ** 6),
    st.integers(0, 10 ** 9), st.integers(0, 10 ** 6).map(lambda v: v / 1e6),
    st.integers(0, 500), st.integers(0, 10 ** 6).map(lambda v: v / 1e6), st.integers(0, 1000),
    st.sampled_from(list(ClassLabel)))


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(flow_rec, max_size=20))
def test_flow_csv_round_trip(tmp_path, flows):
    save_flow_csv(flows, tmp_path / "f.csv")
    assert load_flow_csv(tmp_path / "f.csv") == flows


@FAST
@given(st.lists(st.tuples(st.integers(0, 2 ** 31), st.integers(0, 999_999), st.integers(1, 65535),
                          st.booleans()), min_size=1, max_size=8), st.data())
def test_pcap_stops_at_first_fault(recs, data):
    frames = []
    for sec, usec, port, tcp in recs:
        l4 = tcp_segment(999, port) if tcp else udp_datagram(999, port)
        frames.append((sec, usec, ethernet_frame(0x0800, ipv4_packet("1.2.3.4", "5.6.7.8",
                                                                     6 if tcp else 17, l4))))
    blob = write_pcap(frames)
    full = parse_pcap(blob)
    assert full == parse_pcap(blob) and len(full) == len(recs)
    cut = data.draw(st.integers(24, len(blob) - 1))
    try:
        got = parse_pcap(blob[:cut])
    except PcapError as exc:
        got = exc.partial
        assert exc.offset is not None and exc.offset <= cut
    assert got == full[:len(got)]


@FAST
@given(st.dictionaries(st.from_regex(r"[a-z][a-z0-9_.]{0,12}", fullmatch=True),
                       st.from_regex(r"[A-Za-z0-9_.,:= -]{0,20}", fullmatch=True).map(str.strip)))
def test_kv_round_trip(pairs):
    assert parse_kv(dump_kv(pairs)) == pairs
