"""Per-run packet ledger and the four performance metrics.

PDR is delivered over generated data packets.  OE is delivered payload bytes
per control byte sent (every hop counts).  Latency runs from application
generation to first reception, and jitter is the sample standard deviation
of those latencies.
"""

from __future__ import annotations

import enum
import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

# reported as OE when a run sent no control bytes at all
ZERO_OVERHEAD = math.inf


class NoTraffic(ValueError):
    pass


class NoDeliveries(ValueError):
    pass


class InsufficientSamples(ValueError):
    pass


class Outcome(str, enum.Enum):
    DELIVERED = "delivered"
    PROACTIVE_DROP = "proactive_drop"
    EXPIRED = "expired"
    LOST = "lost"


@dataclass
class PacketRecord:
    id: int
    source: int
    destination: int
    generated_at: float
    phase: int
    size: int
    outcome: Outcome | None = None
    received_at: float | None = None
    duplicates: int = 0

    @property
    def latency(self) -> float:
        if self.received_at is None:
            raise NoDeliveries(f"packet {self.id} was not delivered")
        return self.received_at - self.generated_at


@dataclass
class PacketLedger:
    packets: list[PacketRecord] = field(default_factory=list)
    control_bytes: Counter = field(default_factory=Counter)
    control_frames: Counter = field(default_factory=Counter)

    def generate(self, source: int, destination: int, t: float, phase: int, size: int) -> int:
        pid = len(self.packets)
        self.packets.append(PacketRecord(pid, source, destination, t, phase, size))
        return pid

    def deliver(self, pid: int, t: float) -> bool:
        """Record a reception; returns False (and counts a duplicate) if already delivered."""
        rec = self.packets[pid]
        if rec.outcome is Outcome.DELIVERED:
            rec.duplicates += 1
            return False
        if t < rec.generated_at:
            raise ValueError("reception before generation")
        rec.outcome = Outcome.DELIVERED
        rec.received_at = t
        return True

    def mark_duplicate(self, pid: int) -> None:
        self.packets[pid].duplicates += 1

    def resolve(self, pid: int, outcome: Outcome) -> None:
        """Set a non-delivery outcome; the first one sticks and a delivery overrides it."""
        if outcome is Outcome.DELIVERED:
            raise ValueError("use deliver() for receptions")
        rec = self.packets[pid]
        if rec.outcome is None:
            rec.outcome = outcome

    def record_control(self, kind: str, nbytes: int) -> None:
        self.control_bytes[kind] += nbytes
        self.control_frames[kind] += 1

    def finalize(self) -> None:
        for rec in self.packets:
            if rec.outcome is None:
                rec.outcome = Outcome.LOST

    def outcome_counts(self) -> dict[str, int]:
        c = Counter(rec.outcome.value if rec.outcome else "pending" for rec in self.packets)
        return {o.value: c.get(o.value, 0) for o in Outcome} | ({"pending": c["pending"]} if c.get("pending") else {})

    @property
    def total_control_bytes(self) -> int:
        return sum(self.control_bytes.values())

    @property
    def duplicates(self) -> int:
        return sum(r.duplicates for r in self.packets)


def _select(ledger: PacketLedger, phase: int | None) -> list[PacketRecord]:
    if phase is None:
        return ledger.packets
    return [r for r in ledger.packets if r.phase == phase]


def _delivered(recs: Iterable[PacketRecord]) -> list[PacketRecord]:
    return [r for r in recs if r.outcome is Outcome.DELIVERED]


def pdr(ledger: PacketLedger, phase: int | None = None) -> float:
    recs = _select(ledger, phase)
    if not recs:
        raise NoTraffic("no data packets were generated")
    return len(_delivered(recs)) / len(recs)


def oe(ledger: PacketLedger) -> float:
    ctrl = ledger.total_control_bytes
    if ctrl == 0:
        return ZERO_OVERHEAD
    return sum(r.size for r in _delivered(ledger.packets)) / ctrl


def latencies(ledger: PacketLedger, phase: int | None = None) -> list[float]:
    return [r.latency for r in _delivered(_select(ledger, phase))]


def avg_latency(ledger: PacketLedger, phase: int | None = None) -> float:
    lat = latencies(ledger, phase)
    if not lat:
        raise NoDeliveries("no data packet was delivered")
    return math.fsum(lat) / len(lat)


def jitter(ledger: PacketLedger, phase: int | None = None) -> float:
    lat = latencies(ledger, phase)
    if len(lat) < 2:
        raise InsufficientSamples(f"jitter needs at least 2 deliveries, got {len(lat)}")
    return statistics.stdev(lat)


def _or_nan(fn, *args) -> float:
    try:
        return fn(*args)
    except (NoTraffic, NoDeliveries, InsufficientSamples):
        return math.nan


def summarize(ledger: PacketLedger) -> dict[str, float]:
    counts = ledger.outcome_counts()
    return {
        "generated": len(ledger.packets),
        **counts,
        "duplicates": ledger.duplicates,
        "control_bytes": ledger.total_control_bytes,
        "pdr": _or_nan(pdr, ledger),
        "oe": oe(ledger),
        "latency": _or_nan(avg_latency, ledger),
        "jitter": _or_nan(jitter, ledger),
    }


def phase_breakdown(ledger: PacketLedger, phases: Iterable[int] = (1, 2, 3, 4, 5)) -> list[dict[str, float]]:
    rows = []
    for p in phases:
        recs = _select(ledger, p)
        rows.append({
            "phase": p,
            "generated": len(recs),
            "delivered": len(_delivered(recs)),
            "pdr": _or_nan(pdr, ledger, p),
            "latency": _or_nan(avg_latency, ledger, p),
            "jitter": _or_nan(jitter, ledger, p),
        })
    return rows
