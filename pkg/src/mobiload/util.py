"""Time-grid arithmetic, date spans, and deterministic seed derivation.

All internal timestamps are UTC; an hour is addressed by its integer offset
from the Unix epoch ("hour epoch"), which keeps grid math exact.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone

from .errors import ConfigError

SECONDS_PER_HOUR = 3600
HOURS_PER_DAY = 24


def to_hour_epoch(dt: datetime) -> int:
    """Hours since the Unix epoch for a tz-aware, top-of-hour instant."""
    if dt.tzinfo is None:
        raise ConfigError(f"naive timestamp not allowed: {dt!r}")
    if dt.minute or dt.second or dt.microsecond:
        raise ConfigError(f"timestamp not on the hour: {dt.isoformat()}")
    return int(dt.timestamp()) // SECONDS_PER_HOUR


def from_hour_epoch(hour: int) -> datetime:
    return datetime.fromtimestamp(int(hour) * SECONDS_PER_HOUR, tz=timezone.utc)


def date_to_day_epoch(d: date) -> int:
    return (d - date(1970, 1, 1)).days


def day_epoch_to_date(day: int) -> date:
    return date(1970, 1, 1) + timedelta(days=int(day))


def parse_utc_timestamp(text: str) -> datetime:
    """Parse ISO-8601, accepting a trailing 'Z'; result is UTC."""
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_utc_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def format_hour_epoch(hour: int) -> str:
    return format_utc_timestamp(from_hour_epoch(hour))


def format_float(x: float) -> str:
    """Shortest decimal text that parses back to the same float."""
    return repr(float(x))


@dataclass(frozen=True)
class DateSpan:
    """Inclusive date range; hours run from start 00:00 to end 23:00 UTC."""

    start: date
    end: date

    def __post_init__(self):
        if self.end < self.start:
            raise ConfigError(f"span end {self.end} before start {self.start}")

    @property
    def n_days(self) -> int:
        return (self.end - self.start).days + 1

    @property
    def first_hour(self) -> int:
        return date_to_day_epoch(self.start) * HOURS_PER_DAY

    @property
    def last_hour(self) -> int:
        return date_to_day_epoch(self.end) * HOURS_PER_DAY + HOURS_PER_DAY - 1

    def contains(self, other: "DateSpan") -> bool:
        return self.start <= other.start and other.end <= self.end

    def shift_days(self, days: int) -> "DateSpan":
        delta = timedelta(days=days)
        return DateSpan(self.start + delta, self.end + delta)

    def to_json(self) -> dict:
        return {"start": self.start.isoformat(), "end": self.end.isoformat()}

    @classmethod
    def from_json(cls, obj, label: str = "span") -> "DateSpan":
        if not isinstance(obj, dict) or set(obj) != {"start", "end"}:
            raise ConfigError(f"{label} must be an object with keys start,end")
        try:
            return cls(date.fromisoformat(obj["start"]), date.fromisoformat(obj["end"]))
        except ValueError as exc:
            raise ConfigError(f"{label}: {exc}") from exc


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary labels; independent of PYTHONHASHSEED."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def check_keys(obj: dict, allowed: set, required: set, label: str) -> None:
    """Reject unknown keys (catches typos) and report missing required ones."""
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{label}: unknown key(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{label}: missing required key(s) {sorted(missing)}")
