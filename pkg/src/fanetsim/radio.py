"""Friis free-space link budget and the radio parameter set."""

from __future__ import annotations

import math
from dataclasses import dataclass

SPEED_OF_LIGHT = 299792458.0


@dataclass(frozen=True)
class RadioParams:
    tx_power: float = 16.0206          # dBm
    detect_threshold: float = -96.0    # dBm
    frequency: float = 2.4e9           # Hz
    data_rate: float = 11e6            # bit/s
    propagation_speed: float = SPEED_OF_LIGHT

    def __post_init__(self) -> None:
        for name in ("frequency", "data_rate", "propagation_speed"):
            if not getattr(self, name) > 0:
                raise ValueError(f"radio.{name} must be positive")

    @property
    def wavelength(self) -> float:
        return self.propagation_speed / self.frequency


def received_power_dbm(radio: RadioParams, distance: float) -> float:
    """Friis received power, unit antenna gains and no system loss."""
    if distance <= 0:
        return math.inf
    return radio.tx_power + 20.0 * math.log10(radio.wavelength / (4.0 * math.pi * distance))


def comm_range(radio: RadioParams) -> float:
    """Distance at which the Friis received power equals the detection threshold."""
    margin_db = radio.tx_power - radio.detect_threshold
    return radio.wavelength / (4.0 * math.pi) * 10.0 ** (margin_db / 20.0)


def in_range(radio: RadioParams, distance: float) -> bool:
    return received_power_dbm(radio, distance) >= radio.detect_threshold


def airtime(size_bytes: int, radio: RadioParams) -> float:
    return size_bytes * 8.0 / radio.data_rate
