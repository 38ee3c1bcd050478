from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional


class ClassLabel(enum.IntEnum):
    Normal = 0
    Mirai = 1
    DoS = 2
    MitmArp = 3
    Scan = 4

    @property
    def is_anomaly(self) -> bool:
        return self is not ClassLabel.Normal

    @classmethod
    def parse(cls, name: str) -> "ClassLabel":
        try:
            return cls[name]
        except KeyError:
            raise ValueError(f"unknown label {name!r}; valid labels: "
                             f"{', '.join(c.name for c in cls)}") from None


CLASS_NAMES = [c.name for c in ClassLabel]


class Protocol(enum.Enum):
    TCP = "tcp"
    UDP = "udp"
    ICMP = "icmp"
    ARP = "arp"
    OTHER = "other"


TCP_SYN = 0x02
TCP_ACK = 0x10


@dataclass(frozen=True)
class PacketRecord:
    ts_sec: int
    ts_usec: int
    src_ip: str
    dst_ip: str
    src_port: Optional[int]
    dst_port: Optional[int]
    protocol: Protocol
    length: int
    tcp_flags: int = 0
    # False when the frame was not IPv4/ARP over Ethernet; addresses are then zeroed
    parsed_l3: bool = True

    def __post_init__(self):
        has_ports = self.protocol in (Protocol.TCP, Protocol.UDP)
        if has_ports != (self.src_port is not None and self.dst_port is not None):
            raise ValueError(f"ports must be present exactly for tcp/udp ({self.protocol.value})")
        if self.length <= 0:
            raise ValueError("packet length must be positive")

    @property
    def timestamp(self) -> float:
        return self.ts_sec + self.ts_usec * 1e-6

    @property
    def is_syn(self) -> bool:
        return (self.protocol is Protocol.TCP and bool(self.tcp_flags & TCP_SYN)
                and not self.tcp_flags & TCP_ACK)


@dataclass
class FlowRecord:
    window_start: float
    src_ip: str
    dst_ip: str
    dst_port: int
    packet_count: int
    byte_count: int
    mean_inter_arrival: float
    distinct_dst_ports: int
    syn_ratio: float
    arp_count: int
    label: Optional[ClassLabel] = None

    def __post_init__(self):
        if self.packet_count < 1:
            raise ValueError("packet_count must be at least 1")
        if not 0.0 <= self.syn_ratio <= 1.0:
            raise ValueError(f"syn_ratio {self.syn_ratio} outside [0, 1]")
        if not 0 <= self.dst_port <= 65535:
            raise ValueError(f"dst_port {self.dst_port} outside [0, 65535]")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.src_ip, self.dst_ip, self.dst_port)
