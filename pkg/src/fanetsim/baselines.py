"""Minimal reactive (AODV-like) and proactive (DSDV-like) baselines.

Both are stripped down to the behaviour that drives overhead and delivery:
AODV floods route requests on demand and only the destination replies; DSDV
broadcasts its whole table every period and never buffers data.  Neither
uses Hello beacons; link breaks are learned from MAC failures (and, for
DSDV, from entries that stop being refreshed).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .metrics import Outcome
from .netsim import BROADCAST, Frame, Network, RoutingAgent, SimEvent, make_frame

RREQ_BYTES = 24
RREP_BYTES = 20
RERR_BYTES = 12
RERR_EXTRA_DST = 4


@dataclass(frozen=True)
class DataMsg:
    src: int
    dst: int


def _data_frame(agent: RoutingAgent, next_hop: int, msg: DataMsg, pid: int) -> Frame:
    net = agent.net
    return make_frame(
        agent.node, next_hop, "data", 0, net.mac,
        payload=net.ledger.packets[pid].size, contents=msg, packet_id=pid,
    )


# --- AODV-lite ----------------------------------------------------------------


@dataclass(frozen=True)
class AodvParams:
    rreq_timeout: float = 1.0
    rreq_retries: int = 2
    active_route_timeout: float = 3.0
    rebroadcast_jitter: float = 0.010
    expiry: float = 30.0


@dataclass(frozen=True)
class Rreq:
    orig: int
    orig_seq: int
    rreq_id: int
    dst: int
    hops: int


@dataclass(frozen=True)
class Rrep:
    orig: int
    dst: int
    dst_seq: int
    hops: int


@dataclass(frozen=True)
class Rerr:
    unreachable: tuple[int, ...]


@dataclass
class AodvRoute:
    next_hop: int
    hops: int
    seq: int
    expires: float
    valid: bool = True


class AodvAgent(RoutingAgent):
    def __init__(self, node: int, net: Network, params: AodvParams | None = None, seed: int = 0) -> None:
        super().__init__(node, net)
        self.params = params or AodvParams()
        self.rng = random.Random(f"aodv:{seed}:{node}")
        self.table: dict[int, AodvRoute] = {}
        self.seen: set[tuple[int, int]] = set()
        self.buffer: dict[int, list[int]] = {}
        self.discovery: dict[int, tuple[int, SimEvent]] = {}
        self.own_seq = 0
        self.rreq_id = 0

    def route_to(self, dst: int) -> AodvRoute | None:
        r = self.table.get(dst)
        if r is None or not r.valid or r.expires < self.net.now:
            return None
        return r

    def _install(self, dst: int, next_hop: int, hops: int, seq: int) -> None:
        cur = self.table.get(dst)
        now = self.net.now
        fresh = cur is None or not cur.valid or cur.expires < now or seq > cur.seq or (seq == cur.seq and hops < cur.hops)
        if fresh:
            self.table[dst] = AodvRoute(next_hop, hops, seq, now + self.params.active_route_timeout)
        elif cur.next_hop == next_hop:
            cur.expires = max(cur.expires, now + self.params.active_route_timeout)

    def _expired(self, pid: int) -> bool:
        return self.net.now > self.net.ledger.packets[pid].generated_at + self.params.expiry

    def originate(self, packet_id: int, dst: int) -> None:
        self._send_or_buffer(packet_id, DataMsg(self.node, dst))

    def _send_or_buffer(self, pid: int, msg: DataMsg) -> None:
        r = self.route_to(msg.dst)
        if r is not None:
            r.expires = self.net.now + self.params.active_route_timeout
            self.net.send(self.node, _data_frame(self, r.next_hop, msg, pid))
            return
        self.buffer.setdefault(msg.dst, []).append(pid)
        if msg.dst not in self.discovery:
            self._send_rreq(msg.dst, 0)

    def _send_rreq(self, dst: int, attempt: int) -> None:
        self.own_seq += 1
        self.rreq_id += 1
        self.seen.add((self.node, self.rreq_id))
        msg = Rreq(self.node, self.own_seq, self.rreq_id, dst, 0)
        self.net.send(self.node, make_frame(self.node, BROADCAST, "rreq", RREQ_BYTES, self.net.mac, contents=msg, control=True))
        wait = self.params.rreq_timeout * 2 ** attempt
        self.discovery[dst] = (attempt, self.net.timer(wait, self._rreq_timeout, dst, attempt, node=self.node))

    def _rreq_timeout(self, dst: int, attempt: int) -> None:
        state = self.discovery.get(dst)
        if state is None or state[0] != attempt:
            return
        if attempt < self.params.rreq_retries:
            self._send_rreq(dst, attempt + 1)
            return
        del self.discovery[dst]
        for pid in self.buffer.pop(dst, []):
            self.net.ledger.resolve(pid, Outcome.EXPIRED if self._expired(pid) else Outcome.LOST)

    def on_receive(self, frame: Frame, sender: int) -> None:
        msg = frame.contents
        self._install(sender, sender, 1, self.table[sender].seq if sender in self.table else 0)
        if frame.kind == "rreq":
            self._on_rreq(msg, sender)
        elif frame.kind == "rrep":
            self._on_rrep(msg, sender)
        elif frame.kind == "rerr":
            self._on_rerr(msg, sender)
        else:
            self._on_data(frame, sender)

    def _on_rreq(self, msg: Rreq, sender: int) -> None:
        key = (msg.orig, msg.rreq_id)
        if key in self.seen:
            return
        self.seen.add(key)
        self._install(msg.orig, sender, msg.hops + 1, msg.orig_seq)
        if msg.dst == self.node:
            self.own_seq += 1
            rrep = Rrep(msg.orig, self.node, self.own_seq, 0)
            self.net.send(self.node, make_frame(self.node, sender, "rrep", RREP_BYTES, self.net.mac, contents=rrep, control=True))
            return
        fwd = Rreq(msg.orig, msg.orig_seq, msg.rreq_id, msg.dst, msg.hops + 1)
        delay = self.rng.uniform(0.0, self.params.rebroadcast_jitter)
        self.net.timer(delay, self._rebroadcast, fwd, node=self.node)

    def _rebroadcast(self, msg: Rreq) -> None:
        self.net.send(self.node, make_frame(self.node, BROADCAST, "rreq", RREQ_BYTES, self.net.mac, contents=msg, control=True))

    def _on_rrep(self, msg: Rrep, sender: int) -> None:
        self._install(msg.dst, sender, msg.hops + 1, msg.dst_seq)
        if msg.orig == self.node:
            state = self.discovery.pop(msg.dst, None)
            if state is not None:
                state[1].cancel()
            for pid in self.buffer.pop(msg.dst, []):
                if self._expired(pid):
                    self.net.ledger.resolve(pid, Outcome.EXPIRED)
                else:
                    self._send_or_buffer(pid, DataMsg(self.node, msg.dst))
            return
        back = self.route_to(msg.orig)
        if back is None:
            return
        fwd = Rrep(msg.orig, msg.dst, msg.dst_seq, msg.hops + 1)
        self.net.send(self.node, make_frame(self.node, back.next_hop, "rrep", RREP_BYTES, self.net.mac, contents=fwd, control=True))

    def _on_rerr(self, msg: Rerr, sender: int) -> None:
        broken = [d for d in msg.unreachable if (r := self.table.get(d)) is not None and r.valid and r.next_hop == sender]
        self._invalidate(broken)

    def _invalidate(self, dsts: list[int]) -> None:
        if not dsts:
            return
        for d in dsts:
            self.table[d].valid = False
        size = RERR_BYTES + RERR_EXTRA_DST * (len(dsts) - 1)
        self.net.send(self.node, make_frame(self.node, BROADCAST, "rerr", size, self.net.mac, contents=Rerr(tuple(dsts)), control=True))

    def _on_data(self, frame: Frame, sender: int) -> None:
        msg: DataMsg = frame.contents
        if msg.dst == self.node:
            self.net.ledger.deliver(frame.packet_id, self.net.now)
            return
        r = self.route_to(msg.dst)
        if r is None:
            self.net.ledger.resolve(frame.packet_id, Outcome.LOST)
            return
        r.expires = self.net.now + self.params.active_route_timeout
        self.net.send(self.node, _data_frame(self, r.next_hop, msg, frame.packet_id))

    def on_mac_failure(self, frame: Frame) -> None:
        dead = frame.dst
        self._invalidate([d for d, r in self.table.items() if r.valid and r.next_hop == dead])
        if frame.kind != "data":
            return
        msg: DataMsg = frame.contents
        if msg.src == self.node and not self._expired(frame.packet_id):
            self._send_or_buffer(frame.packet_id, msg)
        else:
            self.net.ledger.resolve(frame.packet_id, Outcome.EXPIRED if self._expired(frame.packet_id) else Outcome.LOST)


# --- DSDV-lite ----------------------------------------------------------------


@dataclass(frozen=True)
class DsdvParams:
    period: float = 1.0
    jitter: float = 0.1
    lifetime_periods: int = 3
    entry_bytes: int = 12


@dataclass
class DsdvEntry:
    next_hop: int
    metric: float
    seq: int
    updated: float


@dataclass(frozen=True)
class TableDump:
    entries: tuple[tuple[int, float, int], ...]


class DsdvAgent(RoutingAgent):
    def __init__(self, node: int, net: Network, params: DsdvParams | None = None, seed: int = 0) -> None:
        super().__init__(node, net)
        self.params = params or DsdvParams()
        self.rng = random.Random(f"dsdv:{seed}:{node}")
        self.table: dict[int, DsdvEntry] = {node: DsdvEntry(node, 0, 0, 0.0)}
        self.ticks = 0

    def start(self) -> None:
        self.net.timer(self.rng.uniform(0.0, self.params.period), self._tick, node=self.node)

    def _tick(self) -> None:
        now = self.net.now
        p = self.params
        max_age = p.lifetime_periods * p.period
        for dst, e in self.table.items():
            if dst != self.node and math.isfinite(e.metric) and now - e.updated > max_age:
                self._break(e)
        own = self.table[self.node]
        own.seq += 2
        own.updated = now
        dump = TableDump(tuple((d, e.metric, e.seq) for d, e in sorted(self.table.items())))
        size = p.entry_bytes * len(dump.entries)
        self.net.send(self.node, make_frame(self.node, BROADCAST, "dsdv", size, self.net.mac, contents=dump, control=True))
        self.ticks += 1
        self.net.timer(p.period + self.rng.uniform(-p.jitter, p.jitter) * p.period, self._tick, node=self.node)

    @staticmethod
    def _break(e: DsdvEntry) -> None:
        if e.seq % 2 == 0:
            e.seq += 1
        e.metric = math.inf

    def on_receive(self, frame: Frame, sender: int) -> None:
        if frame.kind == "dsdv":
            self._merge(frame.contents, sender)
        else:
            self._on_data(frame)

    def _merge(self, dump: TableDump, sender: int) -> None:
        now = self.net.now
        for dst, metric, seq in dump.entries:
            if dst == self.node:
                continue
            m = metric + 1
            cur = self.table.get(dst)
            if cur is None or seq > cur.seq or (seq == cur.seq and m < cur.metric):
                self.table[dst] = DsdvEntry(sender, m, seq, now)
            elif cur.next_hop == sender and seq == cur.seq and m == cur.metric:
                cur.updated = now

    def route_to(self, dst: int) -> DsdvEntry | None:
        e = self.table.get(dst)
        if e is None or not math.isfinite(e.metric):
            return None
        return e

    def originate(self, packet_id: int, dst: int) -> None:
        self._forward(packet_id, DataMsg(self.node, dst))

    def _forward(self, pid: int, msg: DataMsg) -> None:
        e = self.route_to(msg.dst)
        if e is None:
            self.net.ledger.resolve(pid, Outcome.LOST)
            return
        self.net.send(self.node, _data_frame(self, e.next_hop, msg, pid))

    def _on_data(self, frame: Frame) -> None:
        msg: DataMsg = frame.contents
        if msg.dst == self.node:
            self.net.ledger.deliver(frame.packet_id, self.net.now)
        else:
            self._forward(frame.packet_id, msg)

    def on_mac_failure(self, frame: Frame) -> None:
        for dst, e in self.table.items():
            if dst != self.node and e.next_hop == frame.dst and math.isfinite(e.metric):
                self._break(e)
        if frame.kind == "data":
            self.net.ledger.resolve(frame.packet_id, Outcome.LOST)
