"""Sampled waveform container with CSV round-trip."""

from __future__ import annotations

import csv
import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ChannelNotFoundError, RecordParseError

_HEADER = re.compile(r"^\s*([^\[\]]+?)\s*(?:\[([^\]]*)\])?\s*$")


@dataclass
class TimeSeriesRecord:
    t: np.ndarray
    channels: dict[str, np.ndarray]
    units: dict[str, str] = field(default_factory=dict)
    events: list[tuple[float, str]] = field(default_factory=list)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        for name, arr in self.channels.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape != self.t.shape:
                raise ValueError(f"channel {name!r} has {arr.size} samples, time base {self.t.size}")
            self.channels[name] = arr
        if self.t.size > 1 and np.any(np.diff(self.t) <= 0.0):
            raise ValueError("time base must increase monotonically")

    def __len__(self):
        return self.t.size

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channel(name)

    def channel(self, name: str) -> np.ndarray:
        if name == "t":
            return self.t
        try:
            return self.channels[name]
        except KeyError:
            raise ChannelNotFoundError(f"channel not found: {name!r}") from None

    @property
    def sample_rate(self) -> float:
        if self.t.size < 2:
            return float("nan")
        return float((self.t.size - 1) / (self.t[-1] - self.t[0]))

    @property
    def module_channels(self) -> list[str]:
        names = [n for n in self.channels if re.fullmatch(r"v_sm\d+", n)]
        return sorted(names, key=lambda n: int(n[4:]))

    def module_voltages(self) -> np.ndarray:
        """Array of shape (samples, N)."""
        return np.column_stack([self.channels[n] for n in self.module_channels])

    def index_at(self, t: float) -> int:
        """First sample at or after ``t``."""
        return int(np.searchsorted(self.t, t - 1e-12, side="left"))

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.t.tobytes())
        for name in sorted(self.channels):
            h.update(name.encode())
            h.update(self.channels[name].tobytes())
        return h.hexdigest()

    # ------------------------------------------------------------------ csv

    def to_csv(self, path):
        names = ["t", *self.channels]
        units = {"t": "s", **self.units}
        cols = [self.t, *self.channels.values()]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
            w.writerow([f"{n} [{units.get(n, '')}]" for n in names])
            for row in zip(*(c.tolist() for c in cols)):
                w.writerow([repr(x) for x in row])

    @classmethod
    def from_csv(cls, path) -> TimeSeriesRecord:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise RecordParseError("empty file", 1) from None
            names, units = [], {}
            for cell in header:
                m = _HEADER.match(cell)
                if not m:
                    raise RecordParseError(f"bad header cell {cell!r}", 1)
                names.append(m.group(1))
                units[m.group(1)] = m.group(2) or ""
            if not names or names[0] != "t" or len(set(names)) != len(names):
                raise RecordParseError("header must start with 't' and have unique names", 1)
            rows = []
            for row in reader:
                line = reader.line_num
                if not row:
                    continue
                if len(row) != len(names):
                    raise RecordParseError(f"expected {len(names)} fields, got {len(row)}", line)
                try:
                    rows.append([float(x) for x in row])
                except ValueError as exc:
                    raise RecordParseError(str(exc), line) from None
        data = np.array(rows, dtype=float).reshape(-1, len(names))
        units.pop("t", None)
        try:
            return cls(data[:, 0], {n: data[:, i] for i, n in enumerate(names) if i},
                       units)
        except ValueError as exc:
            raise RecordParseError(str(exc)) from None
