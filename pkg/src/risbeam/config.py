"""Configuration records for the system, the path-gain model and training.

All records are frozen dataclasses.  They serialize to flat ``key=value``
dictionaries (``to_dict`` / ``from_dict``) so they can be embedded verbatim
into dataset headers, checkpoints and CSV comment lines.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any, Mapping

from .errors import ConfigError

SPEED_OF_LIGHT = 299_792_458.0


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def _parse_value(raw: str, kind: Any) -> Any:
    raw = raw.strip()
    if kind is bool or kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    if kind is int or kind == "int":
        return int(raw)
    if kind is float or kind == "float":
        return float(raw)
    if kind == "tuple[float, float]":
        parts = [float(p) for p in raw.split(",")]
        if len(parts) != 2:
            raise ConfigError(f"expected two comma-separated floats, got {raw!r}")
        return tuple(parts)
    return raw


class _Record:
    """Mixin giving dataclasses a flat string round-trip."""

    def to_dict(self) -> dict[str, str]:
        return {f.name: _format_value(getattr(self, f.name))
                for f in dataclasses.fields(self)}

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]):
        kwargs = {}
        known = {f.name: f for f in dataclasses.fields(cls)}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown {cls.__name__} key {key!r}")
            kind = known[key].type
            kwargs[key] = _parse_value(value, kind) if isinstance(value, str) else value
        return cls(**kwargs)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


@dataclass(frozen=True)
class SystemConfig(_Record):
    """Array sizes, user count and link budget.

    ``Nr = NB * Ns`` BS antennas split into ``Ns`` subarrays, ``M = MB * Ms``
    RIS elements split into ``Ms`` subarrays, ``K`` users with ``Nt``
    antennas each.
    """

    Ns: int = 2
    NB: int = 8
    Ms: int = 2
    MB: int = 8
    Nt: int = 4
    K: int = 2
    P_dBm: float = 10.0
    N0: float = 1e-4
    carrier_freq_Hz: float = 1.6e12
    element_spacing_over_lambda: float = 0.5
    reflect_amplitude: float = 0.8

    def __post_init__(self):
        for name in ("Ns", "NB", "Ms", "MB", "Nt", "K"):
            _require(int(getattr(self, name)) >= 1, f"{name} must be >= 1")
        _require(self.K <= self.Ns, f"K <= Ns violated (K={self.K}, Ns={self.Ns})")
        _require(self.N0 > 0, "N0 must be > 0")
        _require(math.isfinite(self.P_dBm), "P_dBm must be finite")
        _require(self.carrier_freq_Hz > 0, "carrier_freq_Hz must be > 0")
        _require(self.element_spacing_over_lambda > 0,
                 "element_spacing_over_lambda must be > 0")
        _require(0 < self.reflect_amplitude <= 1, "reflect_amplitude must lie in (0, 1]")

    @property
    def Nr(self) -> int:
        return self.NB * self.Ns

    @property
    def M(self) -> int:
        return self.MB * self.Ms

    @property
    def power_watts(self) -> float:
        return 10.0 ** ((self.P_dBm - 30.0) / 10.0)

    @property
    def snr_scale(self) -> float:
        """``P / (Nt * NB * N0)``, the numerator of every user's SINR."""
        return self.power_watts / (self.Nt * self.NB * self.N0)


@dataclass(frozen=True)
class GainModel(_Record):
    """Distance-based THz path gains.

    LoS magnitude is ``c / (4 pi f d) * exp(-kappa d / 2)``; NLoS paths are
    additionally scaled by ``reflection_coeff``.  With ``normalize`` set, the
    gains of each link are rescaled so that ``sum |g_l|^2 = L + 1``, which
    fixes ``E ||H||_F^2`` to ``rows * cols``.
    """

    absorption_coeff: float = 0.2
    reflection_coeff: float = 0.3
    d0: float = 20.0
    user_region_diameter: float = 24.0
    los: bool = True
    normalize: bool = True

    def __post_init__(self):
        _require(self.absorption_coeff >= 0, "absorption_coeff must be >= 0")
        _require(0 < self.reflection_coeff <= 1, "reflection_coeff must lie in (0, 1]")
        _require(self.d0 > 0, "d0 must be > 0")
        _require(self.user_region_diameter > 0, "user_region_diameter must be > 0")

    @classmethod
    def thz_preset(cls) -> "GainModel":
        return cls(absorption_coeff=0.2, reflection_coeff=1e-6, d0=20.0,
                   user_region_diameter=24.0)

    def los_magnitude(self, distance: float, freq_hz: float) -> float:
        spread = SPEED_OF_LIGHT / (4.0 * math.pi * freq_hz * distance)
        return spread * math.exp(-self.absorption_coeff * distance / 2.0)


@dataclass(frozen=True)
class TrainConfig(_Record):
    lr: float = 1e-3
    betas: tuple[float, float] = (0.8, 0.999)
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 10
    lr_decay: float = 0.1
    lr_step: int = 5
    dropout: float = 0.3
    seed: int = 0

    def __post_init__(self):
        _require(self.lr > 0, "lr must be > 0")
        _require(all(0 <= b < 1 for b in self.betas), "betas must lie in [0, 1)")
        _require(self.batch_size >= 1, "batch_size must be >= 1")
        _require(self.epochs >= 1, "epochs must be >= 1")
        _require(self.lr_step >= 1, "lr_step must be >= 1")
        _require(self.lr_decay > 0, "lr_decay must be > 0")
        _require(0 <= self.dropout < 1, "dropout must lie in [0, 1)")

    def lr_at(self, epoch: int) -> float:
        """Step schedule ``lr * decay ** floor(epoch / step)``, epochs from 0."""
        return self.lr * self.lr_decay ** (epoch // self.lr_step)
