"""Classic libpcap reader (and a small writer for building fixtures).

Layout: a 24-byte global header (magic, version, thiszone, sigfigs,
snaplen, linktype) followed by records of a 16-byte header (ts_sec,
ts_usec, incl_len, orig_len) plus ``incl_len`` bytes of frame data. The
magic's byte order decides the endianness of every header field.
"""

from __future__ import annotations

import ipaddress
import struct

from .records import PacketRecord, Protocol

MAGIC_USEC = 0xA1B2C3D4
MAGIC_USEC_SWAPPED = 0xD4C3B2A1
PCAPNG_MAGIC = b"\x0a\x0d\x0d\x0a"
LINKTYPE_ETHERNET = 1

ETH_IPV4 = 0x0800
ETH_ARP = 0x0806
ETH_VLAN = 0x8100

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16


class PcapError(ValueError):
    """Structural error; ``offset`` is the byte position, ``partial`` the records before it."""

    def __init__(self, message, offset=None, partial=()):
        if offset is not None:
            message = f"{message} (offset {offset})"
        super().__init__(message)
        self.offset = offset
        self.partial = list(partial)


def _ip(b: bytes) -> str:
    return str(ipaddress.IPv4Address(b))


def _other(ts_sec, ts_usec, length):
    return PacketRecord(ts_sec, ts_usec, "0.0.0.0", "0.0.0.0", None, None,
                        Protocol.OTHER, length, parsed_l3=False)


def _decode_frame(frame: bytes, ts_sec: int, ts_usec: int, length: int) -> PacketRecord:
    if len(frame) < 14:
        return _other(ts_sec, ts_usec, length)
    ethertype = struct.unpack_from("!H", frame, 12)[0]
    off = 14
    if ethertype == ETH_VLAN and len(frame) >= 18:
        ethertype = struct.unpack_from("!H", frame, 16)[0]
        off = 18

    if ethertype == ETH_ARP:
        # IPv4-over-Ethernet ARP: sender protocol address at +14, target at +24
        if len(frame) < off + 28:
            return _other(ts_sec, ts_usec, length)
        return PacketRecord(ts_sec, ts_usec, _ip(frame[off + 14:off + 18]),
                            _ip(frame[off + 24:off + 28]), None, None, Protocol.ARP, length)

    if ethertype != ETH_IPV4 or len(frame) < off + 20:
        return _other(ts_sec, ts_usec, length)
    vihl = frame[off]
    if vihl >> 4 != 4:
        return _other(ts_sec, ts_usec, length)
    ihl = (vihl & 0x0F) * 4
    proto = frame[off + 9]
    frag_offset = struct.unpack_from("!H", frame, off + 6)[0] & 0x1FFF
    src = _ip(frame[off + 12:off + 16])
    dst = _ip(frame[off + 16:off + 20])
    l4 = off + ihl

    if proto == 6 and frag_offset == 0 and len(frame) >= l4 + 14:
        sport, dport = struct.unpack_from("!HH", frame, l4)
        return PacketRecord(ts_sec, ts_usec, src, dst, sport, dport, Protocol.TCP, length,
                            tcp_flags=frame[l4 + 13])
    if proto == 17 and frag_offset == 0 and len(frame) >= l4 + 4:
        sport, dport = struct.unpack_from("!HH", frame, l4)
        return PacketRecord(ts_sec, ts_usec, src, dst, sport, dport, Protocol.UDP, length)
    kind = Protocol.ICMP if proto == 1 else Protocol.OTHER
    return PacketRecord(ts_sec, ts_usec, src, dst, None, None, kind, length)


def iter_pcap(data: bytes):
    """Yield ``PacketRecord`` objects; raises ``PcapError`` at the first structural fault."""
    data = bytes(data)
    if data[:4] == PCAPNG_MAGIC:
        raise PcapError("pcapng input is not supported; classic pcap only", 0)
    if len(data) < GLOBAL_HEADER_LEN:
        raise PcapError(f"truncated global header: {len(data)} of {GLOBAL_HEADER_LEN} bytes", 0)
    (magic,) = struct.unpack_from("<I", data, 0)
    if magic == MAGIC_USEC:
        endian = "<"
    elif magic == MAGIC_USEC_SWAPPED:
        endian = ">"
    else:
        raise PcapError(f"bad magic 0x{magic:08x}: not a classic microsecond pcap", 0)
    linktype = struct.unpack_from(endian + "I", data, 20)[0]

    pos = GLOBAL_HEADER_LEN
    while pos < len(data):
        if len(data) - pos < RECORD_HEADER_LEN:
            raise PcapError("truncated record header", pos)
        ts_sec, ts_usec, incl, orig = struct.unpack_from(endian + "IIII", data, pos)
        if incl > len(data) - pos - RECORD_HEADER_LEN:
            raise PcapError(f"captured length {incl} exceeds the remaining "
                            f"{len(data) - pos - RECORD_HEADER_LEN} bytes", pos)
        frame = data[pos + RECORD_HEADER_LEN:pos + RECORD_HEADER_LEN + incl]
        pos += RECORD_HEADER_LEN + incl
        length = orig or incl
        if length == 0:
            continue
        if linktype == LINKTYPE_ETHERNET:
            yield _decode_frame(frame, ts_sec, ts_usec, length)
        else:
            yield _other(ts_sec, ts_usec, length)


def parse_pcap(data: bytes) -> list[PacketRecord]:
    out: list[PacketRecord] = []
    try:
        for rec in iter_pcap(data):
            out.append(rec)
    except PcapError as exc:
        exc.partial = out
        raise
    return out


# ---------------------------------------------------------------------------
# Fixture building
# ---------------------------------------------------------------------------

def _csum(header: bytes) -> int:
    if len(header) % 2:
        header += b"\0"
    s = sum(struct.unpack(f"!{len(header) // 2}H", header))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def ethernet_frame(ethertype: int, payload: bytes, src_mac=b"\x02\0\0\0\0\x01",
                   dst_mac=b"\x02\0\0\0\0\x02") -> bytes:
    return dst_mac + src_mac + struct.pack("!H", ethertype) + payload


def ipv4_packet(src: str, dst: str, proto: int, payload: bytes, ttl: int = 64) -> bytes:
    hdr = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(payload), 0, 0, ttl, proto, 0,
                      ipaddress.IPv4Address(src).packed, ipaddress.IPv4Address(dst).packed)
    hdr = hdr[:10] + struct.pack("!H", _csum(hdr)) + hdr[12:]
    return hdr + payload


def tcp_segment(sport: int, dport: int, flags: int = 0x02, payload: bytes = b"") -> bytes:
    return struct.pack("!HHIIBBHHH", sport, dport, 0, 0, 5 << 4, flags, 65535, 0, 0) + payload


def udp_datagram(sport: int, dport: int, payload: bytes = b"") -> bytes:
    return struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload


def arp_packet(sender_ip: str, target_ip: str, op: int = 1,
               sender_mac=b"\x02\0\0\0\0\x01", target_mac=b"\0" * 6) -> bytes:
    return (struct.pack("!HHBBH", 1, ETH_IPV4, 6, 4, op) + sender_mac
            + ipaddress.IPv4Address(sender_ip).packed + target_mac
            + ipaddress.IPv4Address(target_ip).packed)


def write_pcap(records, linktype: int = LINKTYPE_ETHERNET, big_endian: bool = False,
               snaplen: int = 65535) -> bytes:
    """Serialize ``(ts_sec, ts_usec, frame)`` tuples; frames shorter than 60 bytes are zero-padded."""
    e = ">" if big_endian else "<"
    out = [struct.pack(e + "IHHiIII", MAGIC_USEC, 2, 4, 0, 0, snaplen, linktype)]
    for ts_sec, ts_usec, frame in records:
        if linktype == LINKTYPE_ETHERNET and len(frame) < 60:
            frame = frame + b"\0" * (60 - len(frame))
        out.append(struct.pack(e + "IIII", ts_sec, ts_usec, len(frame), len(frame)))
        out.append(frame)
    return b"".join(out)
