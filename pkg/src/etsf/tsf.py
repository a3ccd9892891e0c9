"""Reader/writer for the Monash-style ``.tsf`` time series archive format.

The format is line oriented: ``#`` starts a comment, ``@`` starts a header
attribute, a single ``@data`` line ends the header, and every following
non-empty line holds one series as ``name[:timestamp]:v1,v2,...,vn`` with
``?`` marking a missing value.  Parsing and serialization round-trip
exactly; floats are rendered with their shortest exact decimal form.

Also hosts the registry of benchmark dataset configurations (series count,
input window length, forecast horizon) shipped as package data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from importlib import resources
from pathlib import Path


class TsfFormatError(ValueError):
    """Raised on malformed ``.tsf`` input; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class Frequency(Enum):
    YEARLY = "yearly"
    QUARTERLY = "quarterly"
    MONTHLY = "monthly"
    WEEKLY = "weekly"
    DAILY = "daily"
    HOURLY = "hourly"
    SUB_HOURLY = "sub_hourly"


# File tokens seen in the wild map onto the coarse frequency enum; anything
# finer than hourly collapses to SUB_HOURLY.
_FREQUENCY_TOKENS = {
    "yearly": Frequency.YEARLY,
    "quarterly": Frequency.QUARTERLY,
    "monthly": Frequency.MONTHLY,
    "weekly": Frequency.WEEKLY,
    "daily": Frequency.DAILY,
    "hourly": Frequency.HOURLY,
    "half_hourly": Frequency.SUB_HOURLY,
    "10_minutes": Frequency.SUB_HOURLY,
    "minutely": Frequency.SUB_HOURLY,
    "4_seconds": Frequency.SUB_HOURLY,
    "sub_hourly": Frequency.SUB_HOURLY,
}

_FREQUENCY_CANONICAL = {f: f.value for f in Frequency}
_FREQUENCY_CANONICAL[Frequency.SUB_HOURLY] = "half_hourly"

# Default input window per frequency when neither the file nor the caller
# provides one (window = seasonality scaled by 1.25, as used by the archive).
_DEFAULT_DELTA = {
    Frequency.YEARLY: 2,
    Frequency.QUARTERLY: 5,
    Frequency.MONTHLY: 15,
    Frequency.WEEKLY: 65,
    Frequency.DAILY: 9,
    Frequency.HOURLY: 30,
    Frequency.SUB_HOURLY: 420,
}

_TIMESTAMP_FORMATS = ("%Y-%m-%d %H-%M-%S", "%Y-%m-%d")


@dataclass(frozen=True)
class DatasetMeta:
    """Per-dataset configuration: identity, sampling frequency and the
    input/output window sizes used for supervised forecasting."""

    id: str
    name: str
    frequency: Frequency
    series_count: int
    delta: int
    horizon: int

    def __post_init__(self):
        if self.series_count < 2:
            raise ValueError(f"dataset {self.id!r}: needs at least 2 series, got {self.series_count}")
        if self.delta < 1:
            raise ValueError(f"dataset {self.id!r}: delta must be positive, got {self.delta}")
        if self.horizon < 1:
            raise ValueError(f"dataset {self.id!r}: horizon must be positive, got {self.horizon}")

    @property
    def seasonality(self) -> int:
        # Inverts the archive heuristic that sets the input window to
        # 1.25 times the seasonal period.
        return max(1, round(self.delta / 1.25))


@dataclass(frozen=True)
class SeriesRecord:
    """One univariate series: values are floats with ``None`` marking gaps."""

    name: str
    values: tuple
    start_timestamp: datetime | None = None

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValueError(f"series {self.name!r}: values must be non-empty")


@dataclass(frozen=True)
class Dataset:
    meta: DatasetMeta
    series: tuple

    def __post_init__(self):
        if len(self.series) != self.meta.series_count:
            raise ValueError(
                f"dataset {self.meta.id!r}: declared {self.meta.series_count} series, "
                f"got {len(self.series)}"
            )
        stamped = sum(1 for s in self.series if s.start_timestamp is not None)
        if stamped not in (0, len(self.series)):
            raise ValueError(f"dataset {self.meta.id!r}: mixed presence of start timestamps")

    @property
    def has_timestamps(self) -> bool:
        return self.series[0].start_timestamp is not None


def _parse_bool(token: str, line: int) -> bool:
    if token.lower() in ("true", "1"):
        return True
    if token.lower() in ("false", "0"):
        return False
    raise TsfFormatError(f"expected boolean, got {token!r}", line)


def _parse_value(token: str, line: int) -> float | None:
    if token == "?":
        return None
    try:
        value = float(token)
    except ValueError:
        raise TsfFormatError(f"non-numeric value token {token!r}", line) from None
    if value != value or value in (float("inf"), float("-inf")):
        raise TsfFormatError(f"non-finite value token {token!r}", line)
    return value


def _parse_timestamp(token: str, line: int) -> datetime:
    for fmt in _TIMESTAMP_FORMATS:
        try:
            return datetime.strptime(token, fmt)
        except ValueError:
            continue
    raise TsfFormatError(f"unparseable timestamp {token!r}", line)


def parse_tsf(
    data: bytes | str,
    dataset_id: str | None = None,
    delta: int | None = None,
    horizon: int | None = None,
) -> Dataset:
    """Parse a ``.tsf`` byte stream (or text) into a :class:`Dataset`.

    ``delta`` and ``horizon`` override the file header; the horizon must be
    available from one of the two.  When no ``@lag`` attribute is present
    the input window defaults to the per-frequency archive heuristic.
    """
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TsfFormatError(f"not valid UTF-8: {exc}") from None
    else:
        text = data

    relation = None
    frequency = None
    file_horizon = None
    file_delta = None
    attributes: list[tuple[str, str]] = []
    in_data = False
    records: list[SeriesRecord] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not in_data and line.startswith("@"):
            parts = line.split()
            keyword = parts[0].lower()
            if keyword == "@data":
                in_data = True
            elif keyword == "@relation":
                if len(parts) != 2:
                    raise TsfFormatError(f"malformed header line {line!r}", lineno)
                relation = parts[1]
            elif keyword == "@attribute":
                if len(parts) != 3:
                    raise TsfFormatError(f"malformed header line {line!r}", lineno)
                name, typ = parts[1], parts[2]
                if (name, typ) not in (("series_name", "string"), ("start_timestamp", "date")):
                    raise TsfFormatError(f"unsupported attribute {name!r} of type {typ!r}", lineno)
                attributes.append((name, typ))
            elif keyword in ("@frequency", "@horizon", "@missing", "@equallength", "@lag"):
                if len(parts) != 2:
                    raise TsfFormatError(f"malformed header line {line!r}", lineno)
                token = parts[1]
                if keyword == "@frequency":
                    if token.lower() not in _FREQUENCY_TOKENS:
                        raise TsfFormatError(f"unknown frequency token {token!r}", lineno)
                    frequency = _FREQUENCY_TOKENS[token.lower()]
                elif keyword == "@horizon":
                    file_horizon = int(token)
                elif keyword == "@lag":
                    file_delta = int(token)
                else:
                    _parse_bool(token, lineno)  # validated, value is derivable
            else:
                raise TsfFormatError(f"unknown header keyword {parts[0]!r}", lineno)
            continue
        if not in_data:
            raise TsfFormatError(f"data line before @data sentinel: {line!r}", lineno)

        fields = line.split(":")
        if len(fields) != len(attributes) + 1:
            raise TsfFormatError(
                f"expected {len(attributes) + 1} colon-separated fields, got {len(fields)}",
                lineno,
            )
        name = None
        stamp = None
        for (attr, _), token in zip(attributes, fields):
            if attr == "series_name":
                name = token
            else:
                stamp = _parse_timestamp(token, lineno)
        if name is None:
            name = f"T{len(records) + 1}"
        tokens = fields[-1].split(",")
        values = tuple(_parse_value(tok, lineno) for tok in tokens)
        records.append(SeriesRecord(name=name, values=values, start_timestamp=stamp))

    if not in_data:
        raise TsfFormatError("@data sentinel absent")
    if not records:
        raise TsfFormatError("no series found")
    if frequency is None:
        raise TsfFormatError("missing @frequency header")

    resolved_horizon = horizon if horizon is not None else file_horizon
    if resolved_horizon is None:
        raise TsfFormatError("missing @horizon header and no horizon override given")
    resolved_delta = delta if delta is not None else file_delta
    if resolved_delta is None:
        resolved_delta = _DEFAULT_DELTA[frequency]

    name = relation if relation is not None else "unnamed"
    meta = DatasetMeta(
        id=dataset_id if dataset_id is not None else name,
        name=name,
        frequency=frequency,
        series_count=len(records),
        delta=resolved_delta,
        horizon=resolved_horizon,
    )
    return Dataset(meta=meta, series=tuple(records))


def _render_value(value: float | None) -> str:
    return "?" if value is None else repr(float(value))


def serialize_tsf(dataset: Dataset) -> bytes:
    """Serialize a :class:`Dataset` to ``.tsf`` bytes; exact inverse of
    :func:`parse_tsf` (value-exact decimal rendering)."""
    meta = dataset.meta
    has_missing = any(v is None for s in dataset.series for v in s.values)
    lengths = {len(s.values) for s in dataset.series}
    lines = [f"@relation {meta.name}"]
    lines.append("@attribute series_name string")
    if dataset.has_timestamps:
        lines.append("@attribute start_timestamp date")
    lines.append(f"@frequency {_FREQUENCY_CANONICAL[meta.frequency]}")
    lines.append(f"@lag {meta.delta}")
    lines.append(f"@horizon {meta.horizon}")
    lines.append(f"@missing {'true' if has_missing else 'false'}")
    lines.append(f"@equallength {'true' if len(lengths) == 1 else 'false'}")
    lines.append("@data")
    for record in dataset.series:
        fields = [record.name]
        if record.start_timestamp is not None:
            fields.append(record.start_timestamp.strftime("%Y-%m-%d %H-%M-%S"))
        fields.append(",".join(_render_value(v) for v in record.values))
        lines.append(":".join(fields))
    return ("\n".join(lines) + "\n").encode("utf-8")


def impute_missing(series: SeriesRecord) -> SeriesRecord:
    """Fill gaps by carrying the last observation forward; leading gaps take
    the first observed value.  Rejects series with no observations."""
    if all(v is None for v in series.values):
        raise ValueError(f"series {series.name!r}: all values missing, cannot impute")
    first_observed = next(v for v in series.values if v is not None)
    filled = []
    last = first_observed
    for v in series.values:
        if v is not None:
            last = v
        filled.append(last)
    return SeriesRecord(name=series.name, values=tuple(filled), start_timestamp=series.start_timestamp)


def load_tsf(
    path: str | Path,
    dataset_id: str | None = None,
    delta: int | None = None,
    horizon: int | None = None,
) -> Dataset:
    raw = Path(path).read_bytes()
    return parse_tsf(raw, dataset_id=dataset_id, delta=delta, horizon=horizon)


@dataclass(frozen=True)
class RegistryEntry:
    """Registry row: dataset configuration plus the archive file name the
    dataset is expected under."""

    meta: DatasetMeta
    file: str

    def load(self, root: str | Path) -> Dataset:
        return load_tsf(
            Path(root) / self.file,
            dataset_id=self.meta.id,
            delta=self.meta.delta,
            horizon=self.meta.horizon,
        )


def load_registry(path: str | Path | None = None) -> list[RegistryEntry]:
    """Load the dataset registry; defaults to the packaged benchmark table."""
    if path is None:
        raw = resources.files("etsf.data").joinpath("monash_registry.json").read_text("utf-8")
    else:
        raw = Path(path).read_text("utf-8")
    entries = []
    for row in json.loads(raw):
        meta = DatasetMeta(
            id=row["id"],
            name=row["name"],
            frequency=Frequency(row["frequency"]),
            series_count=row["series_count"],
            delta=row["delta"],
            horizon=row["horizon"],
        )
        entries.append(RegistryEntry(meta=meta, file=row["file"]))
    return entries
