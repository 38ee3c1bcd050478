"""Flow aggregation and the flow CSV format."""

from __future__ import annotations

import csv
import math
from collections import defaultdict

from .records import CLASS_NAMES, ClassLabel, FlowRecord, PacketRecord, Protocol

CSV_HEADER = ["window_start", "src_ip", "dst_ip", "dst_port", "packet_count", "byte_count",
              "mean_iat", "distinct_ports", "syn_ratio", "arp_count", "label"]


class FlowCsvError(ValueError):
    pass


def extract_flows(packets, window_seconds: float) -> list[FlowRecord]:
    """Aggregate IPv4/ARP packets into (src_ip, dst_ip, dst_port) flows per tumbling window.

    Windows are aligned to multiples of ``window_seconds`` since the epoch.
    Per flow: packet and byte counts, mean inter-arrival time (0 for a
    single packet) and the share of bare SYNs. Two host-context counters
    ride along: ``distinct_dst_ports`` counts the TCP/UDP destination
    ports that src_ip hit on dst_ip in the window, ``arp_count`` the ARP
    packets src_ip sent in the window. ARP flows use port 0. Output is
    ordered by window, then by first packet.
    """
    if not window_seconds > 0:
        raise ValueError(f"window must be positive, got {window_seconds}")
    pkts = sorted((p for p in packets if p.parsed_l3), key=lambda p: (p.ts_sec, p.ts_usec))

    flows: dict[tuple, list[PacketRecord]] = {}
    ports: dict[tuple, set] = defaultdict(set)
    arps: dict[tuple, int] = defaultdict(int)
    for p in pkts:
        w = math.floor(p.timestamp / window_seconds)
        port = p.dst_port if p.dst_port is not None else 0
        flows.setdefault((w, p.src_ip, p.dst_ip, port), []).append(p)
        if p.dst_port is not None:
            ports[(w, p.src_ip, p.dst_ip)].add(p.dst_port)
        if p.protocol is Protocol.ARP:
            arps[(w, p.src_ip)] += 1

    out = []
    # dict preserves first-packet order; the stable sort groups windows
    for (w, src, dst, port), group in sorted(flows.items(), key=lambda kv: kv[0][0]):
        ts = [p.timestamp for p in group]
        iat = (ts[-1] - ts[0]) / (len(ts) - 1) if len(ts) > 1 else 0.0
        out.append(FlowRecord(
            window_start=w * window_seconds, src_ip=src, dst_ip=dst, dst_port=port,
            packet_count=len(group), byte_count=sum(p.length for p in group),
            mean_inter_arrival=iat, distinct_dst_ports=len(ports.get((w, src, dst), ())),
            syn_ratio=sum(p.is_syn for p in group) / len(group),
            arp_count=arps.get((w, src), 0)))
    return out


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def save_flow_csv(flows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for f in flows:
            w.writerow([_fmt(f.window_start), f.src_ip, f.dst_ip, f.dst_port, f.packet_count,
                        f.byte_count, _fmt(f.mean_inter_arrival), f.distinct_dst_ports,
                        _fmt(f.syn_ratio), f.arp_count,
                        f.label.name if f.label is not None else ""])


def load_flow_csv(path, require_labels: bool = False) -> list[FlowRecord]:
    """Read a flow CSV. The ``label`` column may be absent (unlabeled data)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if not header:
            raise FlowCsvError(f"{path}: missing header")
        if header == CSV_HEADER:
            labeled = True
        elif header == CSV_HEADER[:-1]:
            labeled = False
            if require_labels:
                raise FlowCsvError(f"{path}: missing label column 'label'")
        else:
            raise FlowCsvError(f"{path}: unexpected header {header}; expected {CSV_HEADER}")
        out = []
        for rowno, row in enumerate(rows, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise FlowCsvError(f"{path}: row {rowno} has {len(row)} columns, "
                                   f"expected {len(header)}")
            label = None
            if labeled and row[10] != "":
                if row[10] not in CLASS_NAMES:
                    raise FlowCsvError(f"{path}: row {rowno}: unknown label {row[10]!r}; "
                                       f"valid labels: {', '.join(CLASS_NAMES)}")
                label = ClassLabel[row[10]]
            elif require_labels:
                raise FlowCsvError(f"{path}: row {rowno}: empty label")
            try:
                out.append(FlowRecord(
                    window_start=float(row[0]), src_ip=row[1], dst_ip=row[2],
                    dst_port=int(row[3]), packet_count=int(row[4]), byte_count=int(row[5]),
                    mean_inter_arrival=float(row[6]), distinct_dst_ports=int(row[7]),
                    syn_ratio=float(row[8]), arp_count=int(row[9]), label=label))
            except ValueError as exc:
                raise FlowCsvError(f"{path}: row {rowno}: {exc}") from None
    return out
