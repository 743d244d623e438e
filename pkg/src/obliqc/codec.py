"""Fixed-point codec between two-decimal lab measurements and signed integers.

Values such as ``12.34`` are multiplied by ``scale`` (100 by default) and
rounded half away from zero.  The configured ``width`` must leave a factor of
two of headroom above ``scale * max(|lo|, |hi|)`` so that one addition of two
encoded values cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Union

import numpy as np

from .errors import ConfigMismatch, OutOfRange, PrecisionLoss

DecimalLike = Union[Decimal, float, int, str]

SUPPORTED_WIDTHS = (16, 32)
_STRICT_TOL = Decimal("1e-9")


def to_decimal(x: DecimalLike) -> Decimal:
    if isinstance(x, Decimal):
        return x
    if isinstance(x, float):
        # shortest repr, so 12.34 stays 12.34 instead of its binary expansion
        return Decimal(repr(x))
    return Decimal(x)


def signed_max(width: int) -> int:
    return (1 << (width - 1)) - 1


def signed_min(width: int) -> int:
    return -(1 << (width - 1))


@dataclass(frozen=True)
class FixedPointConfig:
    scale: int = 100
    width: int = 16
    lo: Decimal = Decimal(0)
    hi: Decimal = Decimal(100)

    def __post_init__(self):
        object.__setattr__(self, "lo", to_decimal(self.lo))
        object.__setattr__(self, "hi", to_decimal(self.hi))
        if not isinstance(self.scale, int) or self.scale <= 0:
            raise ValueError(f"scale must be a positive integer, got {self.scale!r}")
        if self.width not in SUPPORTED_WIDTHS:
            raise ValueError(f"width must be one of {SUPPORTED_WIDTHS}, got {self.width}")
        if self.lo > self.hi:
            raise ValueError(f"lo ({self.lo}) > hi ({self.hi})")
        if 2 * self.max_abs_raw > signed_max(self.width):
            raise ValueError(
                f"scale*max(|lo|,|hi|) = {self.max_abs_raw} leaves no x2 headroom "
                f"in {self.width} bits"
            )

    @property
    def config_id(self) -> str:
        return f"s{self.scale}-w{self.width}-[{self.lo},{self.hi}]"

    @property
    def raw_lo(self) -> int:
        return int((self.lo * self.scale).to_integral_value(ROUND_HALF_UP))

    @property
    def raw_hi(self) -> int:
        return int((self.hi * self.scale).to_integral_value(ROUND_HALF_UP))

    @property
    def max_abs_raw(self) -> int:
        return max(abs(self.raw_lo), abs(self.raw_hi))

    @property
    def raw_span(self) -> int:
        return self.raw_hi - self.raw_lo

    def with_width(self, width: int) -> "FixedPointConfig":
        return FixedPointConfig(self.scale, width, self.lo, self.hi)

    def to_dict(self) -> dict:
        return {"scale": self.scale, "width": self.width, "lo": str(self.lo), "hi": str(self.hi)}

    @classmethod
    def from_dict(cls, d: dict) -> "FixedPointConfig":
        return cls(int(d["scale"]), int(d["width"]), Decimal(d["lo"]), Decimal(d["hi"]))


DEFAULT_CONFIG = FixedPointConfig()


@dataclass(frozen=True)
class EncodedValue:
    raw: int
    config_id: str


def encode(x: DecimalLike, cfg: FixedPointConfig = DEFAULT_CONFIG, strict: bool = False) -> EncodedValue:
    d = to_decimal(x)
    if d < cfg.lo or d > cfg.hi:
        raise OutOfRange(f"{d} outside [{cfg.lo}, {cfg.hi}]")
    scaled = d * cfg.scale
    raw = scaled.to_integral_value(ROUND_HALF_UP)
    if strict and abs(scaled - raw) > _STRICT_TOL:
        raise PrecisionLoss(f"{d} has more precision than scale {cfg.scale} preserves")
    return EncodedValue(int(raw), cfg.config_id)


def decode(v: EncodedValue, cfg: FixedPointConfig = DEFAULT_CONFIG) -> Decimal:
    if v.config_id != cfg.config_id:
        raise ConfigMismatch(f"value encoded under {v.config_id}, decoding with {cfg.config_id}")
    return decode_raw(v.raw, cfg)


def decode_raw(raw: int, cfg: FixedPointConfig = DEFAULT_CONFIG) -> Decimal:
    digits = str(cfg.scale)
    if digits.strip("0") == "1":
        # decimal scale: keep the fixed number of places, e.g. 400 -> 4.00
        return Decimal(int(raw)).scaleb(1 - len(digits))
    return Decimal(int(raw)) / Decimal(cfg.scale)


def encode_batch(xs: Iterable[DecimalLike], cfg: FixedPointConfig = DEFAULT_CONFIG,
                 strict: bool = False) -> list[EncodedValue]:
    out = []
    for i, x in enumerate(xs):
        try:
            out.append(encode(x, cfg, strict))
        except OutOfRange as exc:
            raise OutOfRange(f"index {i}: {exc}") from None
    return out


def encode_array(xs, cfg: FixedPointConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Vectorised ``encode`` for float arrays; returns int64 raw values.

    Float products are snapped to 1e-6 before rounding so that binary noise
    (``12.345 * 100 == 1234.4999...``) rounds the same way the decimal path does.
    """
    a = np.asarray(xs, dtype=np.float64)
    if a.size and (a.min() < float(cfg.lo) or a.max() > float(cfg.hi)):
        bad = int(np.flatnonzero((a < float(cfg.lo)) | (a > float(cfg.hi)))[0])
        raise OutOfRange(f"index {bad}: {a.flat[bad]} outside [{cfg.lo}, {cfg.hi}]")
    scaled = np.round(a * cfg.scale, 6)
    return (np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)).astype(np.int64)


def decode_array(raw, cfg: FixedPointConfig = DEFAULT_CONFIG) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / cfg.scale
