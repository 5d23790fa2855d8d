"""Hourly load ingestion, synthetic profiles and train/test splitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

HOURS_PER_DAY = 24
HOURS_PER_YEAR = 8760  # 365-day year


class LoadDataError(ValueError):
    """Raised for malformed or inconsistent load data; carries the offending row."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(message if row is None else f"row {row}: {message}")


@dataclass(frozen=True)
class LoadSeries:
    """Gapless hourly demand (kWh) starting at midnight.

    ``values`` is stored read-only; the length is a whole number of days.
    """

    start_timestamp: datetime
    values: np.ndarray = field(repr=False)
    period_hours: int = HOURS_PER_DAY

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise LoadDataError("load series must be a non-empty 1-D sequence")
        if vals.size % HOURS_PER_DAY:
            raise LoadDataError(f"length {vals.size} is not a multiple of 24")
        if not np.isfinite(vals).all():
            raise LoadDataError("load contains non-finite values", int(np.flatnonzero(~np.isfinite(vals))[0]))
        if (vals < 0).any():
            raise LoadDataError("negative load", int(np.flatnonzero(vals < 0)[0]))
        if (self.start_timestamp.minute, self.start_timestamp.second, self.start_timestamp.hour) != (0, 0, 0):
            raise LoadDataError("series must start at midnight so hours align with days")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.size

    @property
    def n_days(self) -> int:
        return self.values.size // HOURS_PER_DAY

    def hour_of_day(self) -> np.ndarray:
        """0-based hour of day for every sample."""
        return np.arange(self.values.size) % HOURS_PER_DAY

    def days(self) -> np.ndarray:
        """Values reshaped to (n_days, 24)."""
        return self.values.reshape(-1, HOURS_PER_DAY)

    def head(self, hours: int) -> "LoadSeries":
        if hours <= 0 or hours % HOURS_PER_DAY:
            raise LoadDataError("horizon must be a positive multiple of 24 hours")
        return LoadSeries(self.start_timestamp, self.values[:hours])

    def slice(self, start: int, stop: int) -> "LoadSeries":
        return LoadSeries(self.start_timestamp + timedelta(hours=start), self.values[start:stop])


@dataclass(frozen=True)
class SyntheticLoadSpec:
    base_kwh: float = 200.0
    daily_amplitude_kwh: float = 150.0
    seasonal_amplitude_kwh: float = 30.0
    noise_std_kwh: float = 20.0
    seed: int = 0
    n_days: int = 365
    start: datetime = datetime(2021, 1, 1)


def load_csv(path) -> LoadSeries:
    """Read a ``timestamp,load_kwh`` CSV with one row per consecutive hour."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"load file not found: {path}")
    stamps: list[datetime] = []
    values: list[float] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", "load_kwh"]:
            raise LoadDataError("header must be 'timestamp,load_kwh'", 0)
        for row_no, row in enumerate(reader, start=1):
            if len(row) != 2:
                raise LoadDataError(f"expected 2 fields, got {len(row)}", row_no)
            try:
                ts = datetime.fromisoformat(row[0].strip())
                val = float(row[1])
            except ValueError as exc:
                raise LoadDataError(str(exc), row_no) from None
            if not np.isfinite(val):
                raise LoadDataError("non-finite load", row_no)
            if val < 0:
                raise LoadDataError(f"negative load {val}", row_no)
            if stamps and ts - stamps[-1] != timedelta(hours=1):
                raise LoadDataError(f"timestamp {ts} does not follow {stamps[-1]} by one hour", row_no)
            if ts.minute or ts.second or ts.microsecond:
                raise LoadDataError("timestamps must fall on the hour", row_no)
            stamps.append(ts)
            values.append(val)
    if not values:
        raise LoadDataError("no data rows")
    return LoadSeries(stamps[0], np.array(values))


def write_csv(series: LoadSeries, path) -> None:
    """Inverse of :func:`load_csv`; values are written with ``repr`` for an exact round trip."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write("timestamp,load_kwh\n")
        t = series.start_timestamp
        for v in series.values:
            fh.write(f"{t.isoformat(timespec='seconds')},{float(v)!r}\n")
            t += timedelta(hours=1)


def generate_synthetic(spec: SyntheticLoadSpec) -> LoadSeries:
    """Diurnal sinusoid + annual sinusoid + Gaussian noise, clipped at zero.

    The diurnal term peaks mid-afternoon with a shoulder in the morning, so
    every quantile level sees data.
    """
    if spec.n_days < 1:
        raise ValueError("n_days must be at least 1")
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.n_days * HOURS_PER_DAY, dtype=float)
    hour = t % HOURS_PER_DAY
    diurnal = np.sin(2 * np.pi * (hour - 9.0) / HOURS_PER_DAY)
    # second harmonic gives a morning/evening shape instead of a pure sine
    diurnal = 0.8 * diurnal + 0.2 * np.sin(4 * np.pi * (hour - 6.0) / HOURS_PER_DAY)
    seasonal = np.cos(2 * np.pi * t / HOURS_PER_YEAR)
    values = (
        spec.base_kwh
        + spec.daily_amplitude_kwh * diurnal
        + spec.seasonal_amplitude_kwh * seasonal
        + rng.normal(0.0, spec.noise_std_kwh, t.size)
    )
    return LoadSeries(spec.start, np.clip(values, 0.0, None))


def split_train_test(series: LoadSeries, split_hour: int | None = None) -> tuple[LoadSeries, LoadSeries]:
    """First year trains, second year tests.

    With ``split_hour`` the cut is explicit and the test part is the remainder.
    """
    if split_hour is None:
        if len(series) < 2 * HOURS_PER_YEAR:
            raise LoadDataError(f"need at least {2 * HOURS_PER_YEAR} hours for a two-year split, got {len(series)}")
        return series.slice(0, HOURS_PER_YEAR), series.slice(HOURS_PER_YEAR, 2 * HOURS_PER_YEAR)
    if split_hour <= 0 or split_hour >= len(series) or split_hour % HOURS_PER_DAY:
        raise LoadDataError("split point must be a whole number of days inside the series")
    return series.slice(0, split_hour), series.slice(split_hour, len(series))
