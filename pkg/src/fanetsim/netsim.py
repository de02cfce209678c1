"""Discrete-event engine plus a simplified CSMA/CA MAC over a disk/Friis PHY.

Physical adjacency comes from the connectivity samples (the sample at or
before the current instant); failed nodes neither send nor receive.  A frame
is lost at a receiver when any other reception overlaps it or the receiver is
itself transmitting (no capture).  Unicast frames are acknowledged instantly
when the addressee decodes them; otherwise the sender retries with binary
exponential backoff and finally reports a MAC failure to its routing agent.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

from .connectivity import ConnectivityTimeline
from .radio import RadioParams, airtime

BROADCAST = -1


class PastEvent(ValueError):
    pass


class EventKind(str, enum.Enum):
    APP_GENERATE = "app_generate"
    MAC_ATTEMPT = "mac_attempt"
    TX_END = "tx_end"
    RX_DELIVER = "rx_deliver"
    TIMER_EXPIRE = "timer_expire"


@dataclass
class SimEvent:
    t: float
    seq: int
    kind: EventKind
    action: Callable[..., Any] = field(repr=False)
    args: tuple = field(default=(), repr=False)
    node: int = -1
    packet: int = -1
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


class Engine:
    """Binary-heap event queue ordered by ``(t, seq)``."""

    def __init__(self, trace: bool = False) -> None:
        self.now = 0.0
        self._queue: list[tuple[float, int, SimEvent]] = []
        self._seq = itertools.count()
        self.processed = 0
        self.trace: list[tuple[float, int, str, int]] | None = [] if trace else None

    def schedule(
        self,
        t: float,
        kind: EventKind,
        action: Callable[..., Any],
        *args: Any,
        node: int = -1,
        packet: int = -1,
    ) -> SimEvent:
        if t < self.now:
            raise PastEvent(f"event at t={t} scheduled while clock is at {self.now}")
        ev = SimEvent(t, next(self._seq), kind, action, args, node, packet)
        heapq.heappush(self._queue, (t, ev.seq, ev))
        return ev

    def __len__(self) -> int:
        return len(self._queue)

    def pop(self) -> SimEvent:
        t, _, ev = heapq.heappop(self._queue)
        self.now = t
        return ev

    def run(self, until: float = float("inf")) -> None:
        q = self._queue
        while q and q[0][0] <= until:
            ev = self.pop()
            if ev.cancelled:
                continue
            self.processed += 1
            if self.trace is not None:
                self.trace.append((ev.t, ev.node, ev.kind.value, ev.packet))
            ev.action(*ev.args)
        self.now = max(self.now, until) if until != float("inf") else self.now


@dataclass(frozen=True)
class MacParams:
    difs: float = 50e-6
    slot: float = 20e-6
    cw_min: int = 31
    cw_max: int = 1023
    max_retries: int = 7
    cca_delay: float = 15e-6
    mac_overhead: int = 34       # bytes added to every frame
    ip_overhead: int = 28        # IP + UDP header, counted in routing bytes

    def __post_init__(self) -> None:
        if self.cw_min < 1 or self.cw_max < self.cw_min:
            raise ValueError("need 1 <= cw_min <= cw_max")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass
class Frame:
    src: int
    dst: int                 # next hop, or BROADCAST
    size: int                # bytes on air
    kind: str
    contents: Any = None
    packet_id: int = -1
    payload: int = 0
    control: bool = False
    # called once when the frame first goes on air
    on_air: Callable[[], None] | None = field(default=None, repr=False, compare=False)

    @property
    def header_bytes(self) -> int:
        return self.size - self.payload


def make_frame(
    src: int,
    dst: int,
    kind: str,
    routing_bytes: int,
    mac: MacParams,
    *,
    payload: int = 0,
    contents: Any = None,
    packet_id: int = -1,
    control: bool = False,
) -> Frame:
    """Frame whose size is payload + routing header + IP/UDP + MAC overhead."""
    size = payload + routing_bytes + mac.ip_overhead + mac.mac_overhead
    return Frame(src, dst, size, kind, contents, packet_id, payload, control)


@dataclass(eq=False)
class Transmission:
    frame: Frame
    start: float
    end: float
    receivers: list[int]
    receiver_set: frozenset[int]
    sample: int
    corrupted: set[int] = field(default_factory=set)


@dataclass
class _MacState:
    rng: random.Random
    queue: deque = field(default_factory=deque)
    cw: int = 31
    retries: int = 0
    pending: bool = False            # attempt or transmission in progress
    transmitting: Transmission | None = None


class RoutingAgent:
    """Base class for per-node routing logic attached to a :class:`Network`."""

    def __init__(self, node: int, net: "Network") -> None:
        self.node = node
        self.net = net

    def start(self) -> None:
        pass

    def originate(self, packet_id: int, dst: int) -> None:
        raise NotImplementedError

    def on_receive(self, frame: Frame, sender: int) -> None:
        pass

    def on_mac_failure(self, frame: Frame) -> None:
        pass


def rx_filter(receiver: int, tx: Transmission, concurrent: Iterable[Transmission], transmitting: bool = False) -> bool:
    """Delivered iff the receiver is in range and nothing else overlaps it."""
    if receiver not in tx.receiver_set or transmitting:
        return False
    for other in concurrent:
        if other is tx:
            continue
        if receiver in other.receiver_set and other.start < tx.end and tx.start < other.end:
            return False
    return True


class Network:
    """Shared channel, per-node MAC state and the attached routing agents."""

    def __init__(
        self,
        engine: Engine,
        timeline: ConnectivityTimeline,
        positions: np.ndarray,
        radio: RadioParams | None = None,
        mac: MacParams | None = None,
        failed: Iterable[int] = (),
        seed: int = 0,
        ledger: Any = None,
    ) -> None:
        self.engine = engine
        self.timeline = timeline
        self.positions = positions
        self.radio = radio or RadioParams()
        self.mac = mac or MacParams()
        self.failed = frozenset(failed)
        self.ledger = ledger
        self.n = timeline.n
        self._mac = [_MacState(random.Random(f"mac:{seed}:{i}"), cw=self.mac.cw_min) for i in range(self.n)]
        self._rx_active: list[list[Transmission]] = [[] for _ in range(self.n)]
        self.active: list[Transmission] = []
        self.agents: list[RoutingAgent] = []
        self.frames_sent: Counter = Counter()
        self.mac_failures = 0

    def attach(self, agents: list[RoutingAgent]) -> None:
        if len(agents) != self.n:
            raise ValueError("need one agent per node")
        self.agents = agents

    @property
    def now(self) -> float:
        return self.engine.now

    def alive(self, node: int) -> bool:
        return node not in self.failed

    def timer(self, delay: float, action: Callable[..., Any], *args: Any, node: int = -1, packet: int = -1) -> SimEvent:
        return self.engine.schedule(self.engine.now + delay, EventKind.TIMER_EXPIRE, action, *args, node=node, packet=packet)

    def timer_at(self, t: float, action: Callable[..., Any], *args: Any, node: int = -1, packet: int = -1) -> SimEvent:
        return self.engine.schedule(max(t, self.engine.now), EventKind.TIMER_EXPIRE, action, *args, node=node, packet=packet)

    # --- MAC --------------------------------------------------------------

    def send(self, node: int, frame: Frame) -> None:
        """Queue ``frame`` at ``node``'s MAC; silently ignored for failed nodes."""
        if node in self.failed:
            return
        self.frames_sent[frame.kind] += 1
        if frame.control and self.ledger is not None:
            self.ledger.record_control(frame.kind, frame.size - self.mac.mac_overhead)
        st = self._mac[node]
        st.queue.append(frame)
        if not st.pending:
            st.pending = True
            self.engine.schedule(self.now, EventKind.MAC_ATTEMPT, self._attempt, node, node=node, packet=frame.packet_id)

    def _neighbors(self, node: int) -> list[int]:
        k = self.timeline.index_at(self.now)
        return self.timeline.neighbor_lists(k)[node]

    def _sensed_busy_until(self, node: int) -> float:
        now = self.now
        cca = self.mac.cca_delay
        until = -1.0
        for tx in self.active:
            if tx.frame.src == node or (node in tx.receiver_set and tx.start + cca <= now):
                until = max(until, tx.end)
        return until

    def _backoff(self, node: int) -> float:
        st = self._mac[node]
        return st.rng.randint(0, st.cw) * self.mac.slot

    def _defer(self, node: int, busy_until: float) -> None:
        st = self._mac[node]
        t = busy_until + self.mac.difs + self._backoff(node)
        self.engine.schedule(t, EventKind.MAC_ATTEMPT, self._attempt, node, node=node, packet=st.queue[0].packet_id)

    def _attempt(self, node: int) -> None:
        st = self._mac[node]
        busy = self._sensed_busy_until(node)
        if busy > self.now:
            self._defer(node, busy)
            return
        self.engine.schedule(self.now + self.mac.difs, EventKind.MAC_ATTEMPT, self._tx_start, node, node=node, packet=st.queue[0].packet_id)

    def _tx_start(self, node: int) -> None:
        st = self._mac[node]
        busy = self._sensed_busy_until(node)
        if busy > self.now:
            self._defer(node, busy)
            return
        frame: Frame = st.queue[0]
        k = self.timeline.index_at(self.now)
        receivers = [r for r in self.timeline.neighbor_lists(k)[node] if r not in self.failed]
        start = self.now
        tx = Transmission(frame, start, start + airtime(frame.size, self.radio), receivers, frozenset(receivers), k)
        for ongoing in self._rx_active[node]:
            ongoing.corrupted.add(node)
        for r in receivers:
            arriving = self._rx_active[r]
            if arriving:
                tx.corrupted.add(r)
                for other in arriving:
                    other.corrupted.add(r)
            if self._mac[r].transmitting is not None:
                tx.corrupted.add(r)
            arriving.append(tx)
        st.transmitting = tx
        self.active.append(tx)
        if frame.on_air is not None:
            hook, frame.on_air = frame.on_air, None
            hook()
        self.engine.schedule(tx.end, EventKind.TX_END, self._tx_end, tx, node=node, packet=frame.packet_id)

    def _tx_end(self, tx: Transmission) -> None:
        frame = tx.frame
        node = frame.src
        st = self._mac[node]
        st.transmitting = None
        self.active.remove(tx)
        for r in tx.receivers:
            self._rx_active[r].remove(tx)
        ok = [r for r in tx.receivers if r not in tx.corrupted]
        if frame.dst != BROADCAST:
            ok = [r for r in ok if r == frame.dst]
        if ok:
            pos = self.positions[tx.sample]
            dist = np.linalg.norm(pos[ok] - pos[node], axis=1)
            delays = dist / self.radio.propagation_speed
            for r, d in zip(ok, delays.tolist()):
                self.engine.schedule(tx.end + d, EventKind.RX_DELIVER, self._deliver, r, frame, node, node=r, packet=frame.packet_id)
        if frame.dst == BROADCAST or ok:
            self._finish(node)
            return
        st.retries += 1
        if st.retries > self.mac.max_retries:
            self.mac_failures += 1
            self._finish(node)
            self.agents[node].on_mac_failure(frame)
            return
        st.cw = min(2 * st.cw + 1, self.mac.cw_max)
        self.engine.schedule(self.now + self._backoff(node), EventKind.MAC_ATTEMPT, self._attempt, node, node=node, packet=frame.packet_id)

    def _finish(self, node: int) -> None:
        st = self._mac[node]
        st.queue.popleft()
        st.retries = 0
        st.cw = self.mac.cw_min
        if st.queue:
            self.engine.schedule(self.now + self._backoff(node), EventKind.MAC_ATTEMPT, self._attempt, node, node=node, packet=st.queue[0].packet_id)
        else:
            st.pending = False

    def _deliver(self, receiver: int, frame: Frame, sender: int) -> None:
        self.agents[receiver].on_receive(frame, sender)

    def queue_length(self, node: int) -> int:
        return len(self._mac[node].queue)
