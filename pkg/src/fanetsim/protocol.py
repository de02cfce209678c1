"""Trajectory-aware source routing.

Routes are computed by the source from the precomputed connectivity
timeline, so there is no route request flooding.  Each data packet carries
its full route; the destination answers with an RREP along the reversed
route.  Recovery has two triggers: the source's retransmission deadline
expires (the first hop is then bypassed), or an RRER arrives naming the
node that an upstream relay could not reach.

Wire format of the header (big endian)::

    [hop:1][seq:1][ptype:1][reserved:1][addr:2] x (hop + 1)

Address[0] is the packet's source and Address[hop] its destination.  An RRER
lists ``[failed, detector, ..., source]`` and carries the original data
destination as a two-byte body.
"""

from __future__ import annotations

import enum
import heapq
import struct
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .connectivity import ConnectivityTimeline, earliest_reachable
from .metrics import Outcome
from .netsim import Frame, Network, RoutingAgent, SimEvent, make_frame

HEADER_FIXED = 4
ADDR_BYTES = 2
_FIXED = struct.Struct(">BBBB")
_BODY = struct.Struct(">H")


class MalformedHeader(ValueError):
    pass


class NotOnRoute(LookupError):
    pass


class PacketType(enum.IntEnum):
    DATA = 0
    RREP = 1
    RRER = 2


@dataclass(frozen=True)
class PacketHeader:
    hop: int
    seq: int
    ptype: PacketType
    addresses: tuple[int, ...]
    reserved: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "addresses", tuple(int(a) for a in self.addresses))
        if not 0 <= self.hop <= 255:
            raise ValueError(f"hop {self.hop} does not fit 8 bits")
        if self.hop != len(self.addresses) - 1:
            raise ValueError("hop must equal len(addresses) - 1")
        if not 0 <= self.seq <= 255 or not 0 <= self.reserved <= 255:
            raise ValueError("seq and reserved are 8-bit fields")
        if any(not 0 <= a <= 0xFFFF for a in self.addresses):
            raise ValueError("addresses are 16-bit")
        object.__setattr__(self, "ptype", PacketType(self.ptype))

    @property
    def source(self) -> int:
        return self.addresses[0]

    @property
    def destination(self) -> int:
        return self.addresses[-1]


def header_size(hop: int) -> int:
    return HEADER_FIXED + ADDR_BYTES * (hop + 1)


def encode_header(h: PacketHeader) -> bytes:
    n = len(h.addresses)
    return _FIXED.pack(h.hop, h.seq, int(h.ptype), h.reserved) + struct.pack(f">{n}H", *h.addresses)


def split_packet(buf: bytes) -> tuple[PacketHeader, bytes]:
    """Decode the header at the start of ``buf`` and return it with the remaining body."""
    if len(buf) < HEADER_FIXED:
        raise MalformedHeader(f"need {HEADER_FIXED} bytes, got {len(buf)}")
    hop, seq, ptype, reserved = _FIXED.unpack_from(buf)
    end = header_size(hop)
    if len(buf) < end:
        raise MalformedHeader(f"hop={hop} needs {end} bytes, got {len(buf)}")
    try:
        ptype = PacketType(ptype)
    except ValueError as exc:
        raise MalformedHeader(f"unknown packet type {ptype}") from exc
    addrs = struct.unpack_from(f">{hop + 1}H", buf, HEADER_FIXED)
    return PacketHeader(hop, seq, ptype, addrs, reserved), buf[end:]


def decode_header(buf: bytes) -> PacketHeader:
    return split_packet(buf)[0]


def shortest_path(
    adj: Sequence[Sequence[int]],
    src: int,
    dst: int,
    excluded: Iterable[int] = frozenset(),
) -> list[int] | None:
    """Minimum-hop path by Dijkstra on unit weights.

    The heap key is ``(hops, path)``, so among equally short paths the
    lexicographically smallest node sequence wins.
    """
    excluded = frozenset(excluded)
    if src in excluded or dst in excluded:
        return None
    heap: list[tuple[int, tuple[int, ...]]] = [(0, (src,))]
    settled: set[int] = set()
    while heap:
        d, path = heapq.heappop(heap)
        u = path[-1]
        if u in settled:
            continue
        settled.add(u)
        if u == dst:
            return list(path)
        for v in adj[u]:
            if v not in settled and v not in excluded:
                heapq.heappush(heap, (d + 1, path + (v,)))
    return None


@dataclass(frozen=True)
class SendNow:
    route: list[int]


@dataclass(frozen=True)
class SendLater:
    route: list[int]
    t_send: float


@dataclass(frozen=True)
class DropProactive:
    pass


RouteDecision = SendNow | SendLater | DropProactive


def establish_route(
    src: int,
    dst: int,
    t_now: float,
    expiry: float,
    timeline: ConnectivityTimeline,
    excluded: Iterable[int] = (),
) -> RouteDecision:
    if src == dst:
        raise ValueError("src and dst must differ")
    excluded = frozenset(excluded) - {src, dst}
    k = timeline.index_at(t_now)
    route = shortest_path(timeline.neighbor_lists(k), src, dst, excluded)
    if route is not None:
        return SendNow(route)
    t_send = earliest_reachable(timeline, src, dst, t_now, excluded, horizon=expiry)
    if t_send is None or t_send > expiry:
        return DropProactive()
    route = shortest_path(timeline.neighbor_lists(timeline.index_at(t_send)), src, dst, excluded)
    return SendLater(route, t_send)


@dataclass(frozen=True)
class CprTdParams:
    expiry: float = 30.0
    per_hop_budget: float = 0.020
    max_route_retries: int = 3
    dup_window: int = 128


@dataclass
class PendingEntry:
    packet_id: int
    dst: int
    seq: int
    expiry: float
    route: list[int] = field(default_factory=list)
    sent_at: float = -1.0
    retransmit_deadline: float = -1.0
    excluded_nodes: set[int] = field(default_factory=set)
    retries: int = 0
    timer: SimEvent | None = None


class CprTdAgent(RoutingAgent):
    def __init__(self, node: int, net: Network, oracle: ConnectivityTimeline, params: CprTdParams | None = None) -> None:
        super().__init__(node, net)
        self.oracle = oracle
        self.params = params or CprTdParams()
        self.pending: dict[tuple[int, int], PendingEntry] = {}
        self._seq: dict[int, int] = {}
        self._seen: dict[int, tuple[deque, set]] = {}
        self.not_on_route = 0

    # --- source side -------------------------------------------------------

    def originate(self, packet_id: int, dst: int) -> None:
        seq = self._seq.get(dst, 0)
        self._seq[dst] = (seq + 1) & 0xFF
        key = (dst, seq)
        stale = self.pending.pop(key, None)
        if stale is not None:
            # seq wrapped onto a packet still in recovery; it cannot be matched any more
            self._give_up(stale, Outcome.LOST)
        entry = PendingEntry(packet_id, dst, seq, self.net.now + self.params.expiry)
        self.pending[key] = entry
        self._route_and_send(entry)

    def _route_and_send(self, entry: PendingEntry) -> None:
        now = self.net.now
        if now > entry.expiry:
            self._give_up(entry, Outcome.EXPIRED)
            return
        decision = establish_route(self.node, entry.dst, now, entry.expiry, self.oracle, entry.excluded_nodes)
        if isinstance(decision, SendNow):
            self._transmit(entry, decision.route)
        elif isinstance(decision, SendLater):
            entry.route = decision.route
            entry.timer = self.net.timer_at(decision.t_send, self._send_later, (entry.dst, entry.seq), node=self.node, packet=entry.packet_id)
        else:
            self._give_up(entry, Outcome.PROACTIVE_DROP)

    def _send_later(self, key: tuple[int, int]) -> None:
        entry = self.pending.get(key)
        if entry is not None:
            entry.timer = None
            self._route_and_send(entry)

    def _transmit(self, entry: PendingEntry, route: list[int]) -> None:
        hop = len(route) - 1
        entry.route = route
        header = PacketHeader(hop, entry.seq, PacketType.DATA, tuple(route))
        frame = make_frame(
            self.node, route[1], "data", header_size(hop), self.net.mac,
            payload=self.net.ledger.packets[entry.packet_id].size, contents=encode_header(header), packet_id=entry.packet_id,
        )
        attempt = entry.retries
        frame.on_air = lambda: self._arm_deadline(entry, attempt)
        self.net.send(self.node, frame)

    def _arm_deadline(self, entry: PendingEntry, attempt: int) -> None:
        """Start the retransmission clock when the frame actually leaves the source."""
        key = (entry.dst, entry.seq)
        if self.pending.get(key) is not entry or entry.retries != attempt:
            return
        entry.sent_at = self.net.now
        entry.retransmit_deadline = entry.sent_at + (len(entry.route) - 1) * self.params.per_hop_budget
        entry.timer = self.net.timer_at(entry.retransmit_deadline, self._deadline, key, node=self.node, packet=entry.packet_id)

    def _deadline(self, key: tuple[int, int]) -> None:
        entry = self.pending.get(key)
        if entry is not None:
            entry.timer = None
            self.on_timeout(entry)

    def on_timeout(self, entry: PendingEntry) -> None:
        first = entry.route[1]
        if first == entry.dst:
            self._give_up(entry, Outcome.LOST)
            return
        entry.excluded_nodes.add(first)
        self._recover(entry)

    def on_rrer(self, header: PacketHeader, body: bytes) -> None:
        failed = header.addresses[0]
        (dst,) = _BODY.unpack_from(body)
        entry = self.pending.get((dst, header.seq))
        if entry is None:
            return
        if failed == dst:
            self._give_up(entry, Outcome.LOST)
            return
        if failed not in entry.route:
            entry.excluded_nodes.add(failed)
            return
        entry.excluded_nodes.add(failed)
        self._recover(entry)

    def _recover(self, entry: PendingEntry) -> None:
        if entry.timer is not None:
            entry.timer.cancel()
            entry.timer = None
        entry.retries += 1
        if entry.retries > self.params.max_route_retries:
            self._give_up(entry, Outcome.LOST)
            return
        self._route_and_send(entry)

    def _give_up(self, entry: PendingEntry, outcome: Outcome) -> None:
        if entry.timer is not None:
            entry.timer.cancel()
        self.pending.pop((entry.dst, entry.seq), None)
        self.net.ledger.resolve(entry.packet_id, outcome)

    # --- every node -----------------------------------------------------------

    def on_receive(self, frame: Frame, sender: int) -> None:
        header, body = split_packet(frame.contents)
        try:
            i = self._position(header)
        except NotOnRoute:
            self.not_on_route += 1
            return
        if i < header.hop:
            self.net.send(self.node, replace(frame, src=self.node, dst=header.addresses[i + 1]))
            return
        if header.ptype is PacketType.DATA:
            self._accept_data(header, frame)
        elif header.ptype is PacketType.RREP:
            entry = self.pending.pop((header.source, header.seq), None)
            if entry is not None and entry.timer is not None:
                entry.timer.cancel()
        else:
            self.on_rrer(header, body)

    def _position(self, header: PacketHeader) -> int:
        try:
            return header.addresses.index(self.node)
        except ValueError:
            raise NotOnRoute(f"node {self.node} not on route {header.addresses}") from None

    def _accept_data(self, header: PacketHeader, frame: Frame) -> None:
        ledger = self.net.ledger
        if self._remember(header.source, header.seq):
            ledger.deliver(frame.packet_id, self.net.now)
        else:
            ledger.mark_duplicate(frame.packet_id)
        back = tuple(reversed(header.addresses))
        rrep = PacketHeader(header.hop, header.seq, PacketType.RREP, back)
        self.net.send(self.node, make_frame(
            self.node, back[1], "rrep", header_size(header.hop), self.net.mac,
            contents=encode_header(rrep), packet_id=frame.packet_id, control=True,
        ))

    def _remember(self, src: int, seq: int) -> bool:
        """True if ``(src, seq)`` is new within the duplicate window."""
        order, seen = self._seen.setdefault(src, (deque(), set()))
        if seq in seen:
            return False
        order.append(seq)
        seen.add(seq)
        if len(order) > self.params.dup_window:
            seen.discard(order.popleft())
        return True

    def on_mac_failure(self, frame: Frame) -> None:
        header, _ = split_packet(frame.contents)
        if header.ptype is not PacketType.DATA or header.source == self.node:
            # the source relies on its own deadline; lost control frames are not reported
            return
        i = header.addresses.index(self.node)
        path_back = [frame.dst] + list(reversed(header.addresses[: i + 1]))
        rrer = PacketHeader(len(path_back) - 1, header.seq, PacketType.RRER, tuple(path_back))
        self.net.send(self.node, make_frame(
            self.node, path_back[2], "rrer", header_size(rrer.hop) + _BODY.size, self.net.mac,
            contents=encode_header(rrer) + _BODY.pack(header.destination), packet_id=frame.packet_id, control=True,
        ))
