"""Synthetic labeled flow windows with a distinct statistical signature per class.

Signatures:

* Normal  - low packet rate, everyday service ports, ~10% bare SYNs.
* DoS     - heavy-tailed (Pareto) high packet counts from spoofed sources
            toward a single victim, mostly SYNs.
* Scan    - few packets per flow, many distinct destination ports, SYNs.
* Mirai   - medium-rate bursty telnet traffic from a few infected hosts
            to many destinations.
* MitmArp - normal-looking traffic from a host emitting many ARP replies.

Every class draws its source addresses from the same home subnet (DoS
excepted), so addresses alone do not give the class away.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ..kvtext import read_kv
from .records import ClassLabel, FlowRecord

SERVICE_PORTS = (53, 80, 123, 443, 554, 1883, 8080, 8883)
TELNET_PORTS = (23, 2323)


@dataclass(frozen=True)
class SynthProfile:
    start_time: float = 1_600_000_000.0
    window_seconds: float = 1.0
    duration_windows: int = 3600
    home_subnet: str = "192.168.1"
    normal_rate: float = 8.0            # mean packets per normal flow window
    normal_syn: float = 0.1
    dos_min_packets: int = 300
    dos_tail: float = 1.5               # Pareto shape; smaller is heavier
    dos_syn: float = 0.9
    scan_min_ports: int = 20
    scan_max_ports: int = 200
    scan_max_packets: int = 4
    scan_syn: float = 0.95
    mirai_rate: float = 40.0
    mirai_sources: int = 4
    mirai_syn: float = 0.6
    arp_rate_normal: float = 0.2
    arp_rate_mitm: float = 20.0

    def __post_init__(self):
        for name in ("normal_syn", "dos_syn", "scan_syn", "mirai_syn"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("window_seconds", "normal_rate", "dos_tail", "mirai_rate",
                     "arp_rate_normal", "arp_rate_mitm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("duration_windows", "dos_min_packets", "scan_min_ports",
                     "scan_max_packets", "mirai_sources"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.scan_max_ports < self.scan_min_ports:
            raise ValueError("scan_max_ports must be >= scan_min_ports")
        if self.mirai_sources > 200:
            raise ValueError("mirai_sources must be at most 200")

    def to_kv(self) -> dict[str, str]:
        return {f.name: (repr(v) if isinstance(v := getattr(self, f.name), float) else str(v))
                for f in dataclasses.fields(self)}

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "SynthProfile":
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name in kv:
                kwargs[f.name] = type(f.default)(kv[f.name])
        unknown = set(kv) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown profile keys: {sorted(unknown)}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "SynthProfile":
        return cls.from_kv(read_kv(path))


class _Gen:
    def __init__(self, profile: SynthProfile, rng: np.random.Generator):
        self.p = profile
        self.rng = rng
        self.used: set[tuple] = set()

    def home(self, lo=2, hi=254) -> str:
        return f"{self.p.home_subnet}.{self.rng.integers(lo, hi + 1)}"

    def public(self) -> str:
        a = int(self.rng.choice([23, 34, 52, 81, 104, 142, 172, 185, 203]))
        return f"{a}.{self.rng.integers(0, 256)}.{self.rng.integers(0, 256)}.{self.rng.integers(1, 255)}"

    def window(self) -> float:
        k = int(self.rng.integers(0, self.p.duration_windows))
        return round(self.p.start_time + k * self.p.window_seconds, 6)

    def unique(self, draw):
        # keys stay unique so each flow forms its own sequence
        for _ in range(1000):
            key = draw()
            if key not in self.used:
                self.used.add(key)
                return key
        raise RuntimeError("could not draw a fresh flow key; widen the address pools")

    def syn_ratio(self, packets: int, p: float) -> float:
        return round(int(self.rng.binomial(packets, p)) / packets, 6)

    def iat(self, packets: int, span: float) -> float:
        if packets == 1:
            return 0.0
        return round(float(self.rng.uniform(0.2, 0.95)) * span / (packets - 1), 6)

    def flow(self, label, key, packets, bytes_lo, bytes_hi, span, ports, syn, arp):
        size = self.rng.integers(bytes_lo, bytes_hi + 1, size=packets)
        return FlowRecord(window_start=self.window(), src_ip=key[0], dst_ip=key[1],
                          dst_port=key[2], packet_count=packets, byte_count=int(size.sum()),
                          mean_inter_arrival=self.iat(packets, span * self.p.window_seconds),
                          distinct_dst_ports=ports, syn_ratio=self.syn_ratio(packets, syn),
                          arp_count=arp, label=label)

    def normal(self):
        r, p = self.rng, self.p
        key = self.unique(lambda: (self.home(2, 199), self.public(), int(r.choice(SERVICE_PORTS))))
        n = 1 + int(r.poisson(p.normal_rate))
        return self.flow(ClassLabel.Normal, key, n, 60, 900, 1.0, int(r.integers(1, 4)),
                         p.normal_syn, int(r.poisson(p.arp_rate_normal)))

    def dos(self, victim):
        r, p = self.rng, self.p
        key = self.unique(lambda: (self.public(), victim, int(r.choice((80, 554)))))
        n = int(p.dos_min_packets * (1.0 + r.pareto(p.dos_tail)))
        return self.flow(ClassLabel.DoS, key, n, 54, 74, 1.0, 1, p.dos_syn,
                         int(r.poisson(p.arp_rate_normal)))

    def scan(self):
        r, p = self.rng, self.p
        key = self.unique(lambda: (self.home(), self.home(), int(r.integers(1, 1024))))
        n = int(r.integers(1, p.scan_max_packets + 1))
        ports = int(r.integers(p.scan_min_ports, p.scan_max_ports + 1))
        return self.flow(ClassLabel.Scan, key, n, 54, 60, 0.05, ports, p.scan_syn,
                         int(r.integers(0, 2)))

    def mirai(self, bots):
        r, p = self.rng, self.p
        key = self.unique(lambda: (str(r.choice(bots)), self.public(), int(r.choice(TELNET_PORTS))))
        n = 1 + int(r.poisson(p.mirai_rate))
        return self.flow(ClassLabel.Mirai, key, n, 60, 80, 0.1, int(r.integers(1, 3)),
                         p.mirai_syn, int(r.poisson(2 * p.arp_rate_normal)))

    def mitm(self, attacker):
        r, p = self.rng, self.p
        key = self.unique(lambda: (attacker, self.home(2, 199), int(r.choice(SERVICE_PORTS))))
        n = 1 + int(r.poisson(p.normal_rate))
        return self.flow(ClassLabel.MitmArp, key, n, 60, 900, 1.0, int(r.integers(1, 4)),
                         p.normal_syn, 5 + int(r.poisson(p.arp_rate_mitm)))


def synth_generate(profile: SynthProfile, n_per_class: int, rng: np.random.Generator) -> list[FlowRecord]:
    """``n_per_class`` flows of each of the five classes, ordered by window then class."""
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be at least 1, got {n_per_class}")
    g = _Gen(profile, rng)
    victim = g.home(200, 254)
    bots = [f"{profile.home_subnet}.{200 - i}" for i in range(profile.mirai_sources)]
    attackers = [g.home(2, 199) for _ in range(2)]
    flows = []
    for label in ClassLabel:
        for _ in range(n_per_class):
            if label is ClassLabel.Normal:
                flows.append(g.normal())
            elif label is ClassLabel.DoS:
                flows.append(g.dos(victim))
            elif label is ClassLabel.Scan:
                flows.append(g.scan())
            elif label is ClassLabel.Mirai:
                flows.append(g.mirai(bots))
            else:
                flows.append(g.mitm(attackers[int(rng.integers(0, len(attackers)))]))
    order = sorted(range(len(flows)), key=lambda i: (flows[i].window_start, i))
    return [flows[i] for i in order]
