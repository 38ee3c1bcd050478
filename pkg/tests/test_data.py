import struct

import numpy as np
import pytest

from bilstm_ids.data import (CSV_HEADER, NUM_FEATURES, ClassLabel, FlowCsvError, FlowRecord,
                             NormStats, PacketRecord, PcapError, Protocol, SchemaError,
                             SynthProfile, build_sequences, encode_features, encode_matrix,
                             extract_flows, fit_stats, load_flow_csv, parse_pcap, prepare_splits,
                             save_flow_csv, synth_generate, window_indices, write_pcap)
from bilstm_ids.data.pcap import arp_packet, ethernet_frame, ipv4_packet, tcp_segment
from bilstm_ids.numerics import make_rng


def handmade_pcap(big_endian=False):
    """One Ethernet/IPv4/TCP SYN frame of 64 bytes, 10.0.0.1:40000 -> 10.0.0.2:80."""
    e = ">" if big_endian else "<"
    glob = struct.pack(e + "IHHiIII", 0xA1B2C3D4, 2, 4, 0, 65535, 65535, 1)
    eth = bytes.fromhex("020000000002" "020000000001" "0800")
    ip = bytes([0x45, 0, 0, 40, 0, 1, 0, 0, 64, 6, 0, 0, 10, 0, 0, 1, 10, 0, 0, 2])
    tcp = struct.pack("!HHIIBBHHH", 40000, 80, 0, 0, 0x50, 0x02, 8192, 0, 0)
    frame = eth + ip + tcp + bytes(10)
    assert len(frame) == 64
    rec = struct.pack(e + "IIII", 1_600_000_000, 250_000, 64, 64)
    return glob + rec + frame


# --- pcap ------------------------------------------------------------------

def test_single_packet_fixture():
    (p,) = parse_pcap(handmade_pcap())
    assert (p.src_ip, p.dst_ip, p.src_port, p.dst_port, p.protocol) == (
        "10.0.0.1", "10.0.0.2", 40000, 80, Protocol.TCP)
    assert p.length == 64 and p.is_syn
    assert p.timestamp == pytest.approx(1_600_000_000.25)


def test_byte_swapped_magic_parses_identically():
    assert parse_pcap(handmade_pcap(big_endian=True)) == parse_pcap(handmade_pcap())


def test_header_only_capture_is_empty():
    assert parse_pcap(handmade_pcap()[:24]) == []


def test_pcapng_rejected():
    with pytest.raises(PcapError, match="classic pcap only"):
        parse_pcap(b"\x0a\x0d\x0d\x0a" + bytes(40))


def test_truncation_reports_offset_and_partial():
    data = handmade_pcap()
    two = data + data[24:]
    with pytest.raises(PcapError) as info:
        parse_pcap(two[:-5])
    assert info.value.offset == 24 + 80
    assert len(info.value.partial) == 1
    with pytest.raises(PcapError):
        parse_pcap(data[:10])
    with pytest.raises(PcapError, match="bad magic"):
        parse_pcap(b"\x00" * 24)


def test_writer_agrees_with_handmade_bytes():
    frame = ethernet_frame(0x0800, ipv4_packet("10.0.0.1", "10.0.0.2", 6,
                                               tcp_segment(40000, 80, 0x02)))
    built = parse_pcap(write_pcap([(1_600_000_000, 250_000, frame)]))
    ref = parse_pcap(handmade_pcap())
    assert [(p.src_ip, p.dst_ip, p.src_port, p.dst_port, p.protocol, p.tcp_flags) for p in built] \
        == [(p.src_ip, p.dst_ip, p.src_port, p.dst_port, p.protocol, p.tcp_flags) for p in ref]


def test_arp_and_non_ip_frames():
    recs = [(10, 0, ethernet_frame(0x0806, arp_packet("192.168.1.5", "192.168.1.1"))),
            (10, 1, ethernet_frame(0x86DD, bytes(40)))]
    arp, other = parse_pcap(write_pcap(recs))
    assert arp.protocol is Protocol.ARP and arp.src_ip == "192.168.1.5"
    assert other.protocol is Protocol.OTHER and not other.parsed_l3


# --- flows -----------------------------------------------------------------

def pkt(t, src="10.0.0.1", dst="10.0.0.2", dport=80, flags=0x02, length=60):
    sec = int(t)
    return PacketRecord(sec, int(round((t - sec) * 1e6)), src, dst, 40000, dport,
                        Protocol.TCP, length, flags)


def test_three_packets_one_flow():
    (f,) = extract_flows([pkt(100.0), pkt(100.25), pkt(100.5)], 1.0)
    assert f.packet_count == 3 and f.byte_count == 180 and f.window_start == 100.0
    assert f.syn_ratio == 1.0


def test_two_tuples_two_flows():
    flows = extract_flows([pkt(100.0), pkt(100.1, dport=443)], 1.0)
    assert len(flows) == 2
    assert all(f.distinct_dst_ports == 2 for f in flows)


def test_mean_inter_arrival():
    (f,) = extract_flows([pkt(0.0), pkt(1.0), pkt(3.0)], 10.0)
    assert f.mean_inter_arrival == pytest.approx(1.5)


def test_packets_conserved_and_windows_split():
    rng = make_rng(0)
    packets = [pkt(float(t), dport=int(p)) for t, p in
               zip(np.sort(rng.uniform(0, 20, 300)), rng.choice([22, 80, 443], 300))]
    packets.append(PacketRecord(5, 0, "10.0.0.9", "10.0.0.1", None, None, Protocol.ARP, 42))
    flows = extract_flows(packets, 2.0)
    assert sum(f.packet_count for f in flows) == len(packets)
    assert all(f.window_start % 2.0 == 0 for f in flows)
    arp = [f for f in flows if f.src_ip == "10.0.0.9"]
    assert arp[0].dst_port == 0 and arp[0].arp_count == 1


def test_extract_rejects_zero_window():
    with pytest.raises(ValueError):
        extract_flows([], 0)


# --- flow CSV --------------------------------------------------------------

def sample_flows():
    return synth_generate(SynthProfile(), 4, make_rng(1, "synth"))


def test_csv_round_trip(tmp_path):
    flows = sample_flows()
    save_flow_csv(flows, tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == ",".join(CSV_HEADER)
    assert load_flow_csv(tmp_path / "f.csv") == flows


def test_csv_unknown_label(tmp_path):
    save_flow_csv(sample_flows()[:2], tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    lines[2] = lines[2].rsplit(",", 1)[0] + ",Botnet"
    (tmp_path / "f.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(FlowCsvError) as info:
        load_flow_csv(tmp_path / "f.csv")
    msg = str(info.value)
    assert "row 3" in msg and "Botnet" in msg
    assert all(name in msg for name in ("Normal", "Mirai", "DoS", "MitmArp", "Scan"))


def test_csv_missing_header_and_label_column(tmp_path):
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(FlowCsvError, match="missing header"):
        load_flow_csv(tmp_path / "empty.csv")
    (tmp_path / "nolabel.csv").write_text(",".join(CSV_HEADER[:-1]) + "\n")
    assert load_flow_csv(tmp_path / "nolabel.csv") == []
    with pytest.raises(FlowCsvError, match="'label'"):
        load_flow_csv(tmp_path / "nolabel.csv", require_labels=True)


# --- encoding --------------------------------------------------------------

def flow(src="10.0.0.1", dst="10.0.0.2", port=80, t=0.0, label=ClassLabel.Normal, n=5):
    return FlowRecord(t, src, dst, port, n, 60 * n, 0.1, 1, 0.2, 0, label)


def test_octet_and_port_scaling():
    stats = fit_stats([flow(), flow(n=9)])
    v = encode_features(flow("255.255.255.255", "0.0.0.0", 0), stats)
    np.testing.assert_array_equal(v[:4], 1.0)
    np.testing.assert_array_equal(v[4:9], 0.0)
    assert v.shape == (NUM_FEATURES,)


def test_zscores_on_training_flows():
    flows = sample_flows()
    stats = fit_stats(flows)
    z = encode_matrix(flows, stats)[:, 9:]
    assert np.max(np.abs(z.mean(axis=0))) < 1e-9
    std = z.std(axis=0)
    assert np.max(np.abs(std - 1.0)) < 1e-6


def test_constant_counter_stays_finite():
    flows = [flow(n=5) for _ in range(3)]
    X = encode_matrix(flows, fit_stats(flows))
    assert np.all(np.isfinite(X))


def test_stats_round_trip_and_schema_check():
    stats = fit_stats(sample_flows())
    assert NormStats.from_kv(stats.to_kv()) == stats
    kv = stats.to_kv()
    kv["schema_version"] = "2"
    with pytest.raises(SchemaError):
        NormStats.from_kv(kv)


# --- sequences -------------------------------------------------------------

def test_sliding_windows_on_long_key():
    flows = [flow(t=float(k)) for k in range(12)]
    idx, _ = window_indices(flows)
    assert idx.shape == (3, 10)
    assert [row[-1] for row in idx] == [9, 10, 11]


def test_single_flow_padding():
    idx, _ = window_indices([flow()])
    assert idx.tolist() == [[0] + [-1] * 9]
    idx, _ = window_indices([flow()], padding="front")
    assert idx.tolist() == [[-1] * 9 + [0]]
    seqs = build_sequences([flow()], fit_stats([flow()]))
    assert seqs.mask.sum() == 1
    np.testing.assert_array_equal(seqs.X[0, 1:], 0.0)


def test_label_is_last_step():
    flows = [flow(t=float(k), label=ClassLabel.Scan if k == 4 else ClassLabel.Normal)
             for k in range(5)]
    _, labels = window_indices(flows)
    assert labels.tolist() == [int(ClassLabel.Scan)]
    flows = [flow(t=float(k), label=ClassLabel.DoS if k == 10 else ClassLabel.Normal)
             for k in range(11)]
    _, labels = window_indices(flows)
    assert labels.tolist() == [0, int(ClassLabel.DoS)]


def test_prepare_splits_fits_on_train_only():
    flows = synth_generate(SynthProfile(), 20, make_rng(0, "synth"))
    tr, va, te, stats = prepare_splits(flows)
    assert (len(tr), len(va), len(te)) == (60, 20, 20)
    used = sorted({int(i) for i in tr.flow_index.ravel() if i >= 0})
    assert stats == fit_stats([flows[i] for i in used])


# --- synthetic generator ---------------------------------------------------

def test_synth_counts_and_determinism():
    a = synth_generate(SynthProfile(), 100, make_rng(3, "synth"))
    b = synth_generate(SynthProfile(), 100, make_rng(3, "synth"))
    assert a == b and len(a) == 500
    assert np.bincount([int(f.label) for f in a]).tolist() == [100] * 5
    assert len({f.key for f in a}) == 500
    with pytest.raises(ValueError):
        synth_generate(SynthProfile(), 0, make_rng(0))


def _best_stump(X, y):
    best = (0.0, None)
    for j in range(X.shape[1]):
        for thr in np.unique(X[:, j]):
            for sign in (1, -1):
                acc = float(np.mean((sign * (X[:, j] - thr) > 0) == y))
                if acc > best[0]:
                    best = (acc, (j, thr, sign))
    return best


def test_stump_separates_scan_from_normal():
    flows = synth_generate(SynthProfile(), 200, make_rng(9, "synth"))
    pick = [f for f in flows if f.label in (ClassLabel.Scan, ClassLabel.Normal)]
    X = np.array([[f.distinct_dst_ports, f.syn_ratio, f.arp_count, f.packet_count] for f in pick])
    y = np.array([f.label is ClassLabel.Scan for f in pick])
    half = len(pick) // 2
    _, (j, thr, sign) = _best_stump(X[:half], y[:half])
    held_out = float(np.mean((sign * (X[half:, j] - thr) > 0) == y[half:]))
    assert held_out >= 0.95


def test_profile_kv_round_trip(tmp_path):
    p = SynthProfile(normal_rate=5.0, scan_min_ports=30)
    assert SynthProfile.from_kv(p.to_kv()) == p
    with pytest.raises(ValueError):
        SynthProfile.from_kv({"bogus": "1"})
    with pytest.raises(ValueError):
        SynthProfile(normal_syn=1.5)
