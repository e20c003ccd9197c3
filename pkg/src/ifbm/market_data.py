"""Price-series ingestion and log-return computation.

CSV loading is strict on purpose: a missing, non-numeric, or non-positive
price is a hard error naming the offending row, never a silent skip, since
quietly cleaned rows would contaminate any calibration downstream.  Calendar
gaps are ignored; every consecutive pair of rows is one step of size dt.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .engine import ReturnsSample, SampleSource
from .errors import DataLoadError, DomainError


@dataclass(frozen=True)
class PriceSeries:
    """Positive price levels, optionally timestamped, for one instrument."""

    prices: np.ndarray
    timestamps: tuple | None = None
    label: str = ""

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        if prices.ndim != 1 or prices.size == 0:
            raise DomainError("prices must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
            raise DomainError("all prices must be finite and > 0")
        if self.timestamps is not None:
            ts = tuple(self.timestamps)
            if len(ts) != prices.size:
                raise DomainError("timestamps must align one-to-one with prices")
            for a, b in zip(ts[:-1], ts[1:]):
                if not a < b:
                    raise DomainError(f"timestamps must be strictly increasing ({a!r} !< {b!r})")
            object.__setattr__(self, "timestamps", ts)
        prices.setflags(write=False)
        object.__setattr__(self, "prices", prices)

    def __len__(self) -> int:
        return int(self.prices.size)


def _parse_timestamp(text: str, row_num: int, path: str):
    text = text.strip()
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise DataLoadError(
            f"{path}: row {row_num}: timestamp {text!r} is neither an ISO "
            "date/datetime nor a number"
        ) from None


def _column_index(spec, header: list | None, path: str, what: str) -> int:
    if isinstance(spec, int):
        return spec
    if header is None:
        raise DataLoadError(
            f"{path}: {what} column {spec!r} was requested by name but the "
            "file has no header row"
        )
    try:
        return header.index(spec)
    except ValueError:
        raise DataLoadError(f"{path}: {what} column {spec!r} not found in header {header}") from None


def load_csv(path, price_col="close", time_col=None, label=None) -> PriceSeries:
    """Load a price series from a CSV file.

    price_col and time_col may be header names or 0-based column indices.
    The header row is detected by whether the first row's price cell parses
    as a number; name-based column specs require a header.  Any row with a
    missing, non-numeric, or non-positive price aborts the load with the
    1-based file row number in the message.
    """
    path = str(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [row for row in csv.reader(fh)]
    except OSError as exc:
        raise DataLoadError(f"cannot read {path}: {exc}") from exc
    rows = [(i + 1, row) for i, row in enumerate(rows) if any(cell.strip() for cell in row)]
    if not rows:
        raise DataLoadError(f"{path}: file contains no data rows")

    header = None
    first_row = rows[0][1]
    if isinstance(price_col, int) and 0 <= price_col < len(first_row):
        try:
            float(first_row[price_col])
        except ValueError:
            header = [cell.strip() for cell in first_row]
    else:
        header = [cell.strip() for cell in first_row]
    data_rows = rows[1:] if header is not None else rows
    if not data_rows:
        raise DataLoadError(f"{path}: no data rows after the header")

    p_idx = _column_index(price_col, header, path, "price")
    t_idx = _column_index(time_col, header, path, "time") if time_col is not None else None

    prices, stamps = [], []
    for row_num, row in data_rows:
        if p_idx >= len(row) or not row[p_idx].strip():
            raise DataLoadError(f"{path}: row {row_num}: missing price field")
        cell = row[p_idx].strip()
        try:
            price = float(cell)
        except ValueError:
            raise DataLoadError(f"{path}: row {row_num}: non-numeric price {cell!r}") from None
        if not np.isfinite(price) or price <= 0:
            raise DataLoadError(f"{path}: row {row_num}: price must be > 0, got {cell}")
        prices.append(price)
        if t_idx is not None:
            if t_idx >= len(row) or not row[t_idx].strip():
                raise DataLoadError(f"{path}: row {row_num}: missing timestamp field")
            stamps.append(_parse_timestamp(row[t_idx], row_num, path))

    if t_idx is not None:
        for (num_a, _), (num_b, _), a, b in zip(data_rows[:-1], data_rows[1:], stamps[:-1], stamps[1:]):
            try:
                ordered = a < b
            except TypeError:
                raise DataLoadError(
                    f"{path}: rows {num_a}/{num_b}: timestamps {a!r} and {b!r} are not comparable"
                ) from None
            if not ordered:
                raise DataLoadError(
                    f"{path}: row {num_b}: timestamp {b!r} does not increase past {a!r}"
                )

    return PriceSeries(
        prices=np.asarray(prices),
        timestamps=tuple(stamps) if t_idx is not None else None,
        label=label if label is not None else Path(path).stem,
    )


def log_returns(series: PriceSeries) -> ReturnsSample:
    """Per-step log returns ln(P_t / P_{t-1}); length is len(series) - 1."""
    if len(series) < 2:
        raise DomainError(f"need at least 2 prices for returns, got {len(series)}")
    values = np.diff(np.log(series.prices))
    return ReturnsSample(values=values, source=SampleSource.EMPIRICAL)
