"""
From packets to model input
===========================

Builds a tiny capture in memory (a port scan, a few web requests and an
ARP burst), parses it, aggregates one-second flow windows and encodes the
ten-step sequences the model consumes.
"""

from bilstm_ids.data import build_sequences, extract_flows, fit_stats, parse_pcap, write_pcap
from bilstm_ids.data.pcap import arp_packet, ethernet_frame, ipv4_packet, tcp_segment

t0 = 1_600_000_000
records = []
# scanner: one SYN to each of 30 ports within a second
for k, port in enumerate(range(20, 50)):
    seg = tcp_segment(51000, port, flags=0x02)
    records.append((t0, k * 30_000, ethernet_frame(0x0800, ipv4_packet("192.168.1.66", "192.168.1.10", 6, seg))))
# camera talking to a cloud endpoint over several seconds
for s in range(12):
    seg = tcp_segment(40000, 443, flags=0x18, payload=b"x" * 200)
    records.append((t0 + s, 500_000, ethernet_frame(0x0800, ipv4_packet("192.168.1.20", "52.1.2.3", 6, seg))))
# a host flooding ARP replies
for k in range(8):
    records.append((t0 + 2, k * 100_000, ethernet_frame(0x0806, arp_packet("192.168.1.99", "192.168.1.1", op=2))))

packets = parse_pcap(write_pcap(records))
print("packets parsed:", len(packets))

flows = extract_flows(packets, window_seconds=1.0)
print("flow windows:", len(flows))
for f in flows[:3]:
    print(f"  {f.src_ip} -> {f.dst_ip}:{f.dst_port}  packets={f.packet_count} "
          f"ports={f.distinct_dst_ports} syn={f.syn_ratio:.2f} arp={f.arp_count}")

# Each (source, destination, port) key becomes one or more ten-step
# sequences; keys with fewer windows are zero-padded at the back.
seqs = build_sequences(flows, fit_stats(flows))
print("sequences:", seqs.X.shape, " real steps per sample:", seqs.mask.sum(axis=1))
