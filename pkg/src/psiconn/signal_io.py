"""Multichannel records, phase schedules, epoching and piecewise detrending.

Two on-disk record formats are supported:

* ``csv``: first row holds channel names, every following row is one sample
  frame. A sidecar JSON manifest (same stem, ``.json`` suffix) carries
  ``{"rate", "layout", "schedule"}``.
* ``bin``: magic ``b"PSIC1"``, little-endian ``u32`` channel count, ``u32``
  sampling rate, then ``f64`` samples in row-major (frame-major) order. The
  sidecar manifest is optional for this format.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .exceptions import LayoutError, RecordFormatError, ScheduleRangeError

PHASE_LABELS = ("IN", "IH", "EX", "EH")
REGIONS = ("F", "C", "P", "O", "T")

BIN_MAGIC = b"PSIC1"
_BIN_HEADER = struct.Struct("<5sII")

# Tolerance (in epochs) when flooring interval_duration / epoch_len.
_TILE_EPS = 1e-9


@dataclass(frozen=True)
class ChannelLayout:
    """Ordered channel names with a cortical region for every channel."""

    names: tuple
    regions: tuple

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        regions = tuple(str(r) for r in self.regions)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "regions", regions)
        if len(names) == 0:
            raise LayoutError("layout has no channels")
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise LayoutError(f"duplicate channel names: {dup}")
        if len(regions) != len(names):
            raise LayoutError(
                f"{len(names)} channels but {len(regions)} region assignments")
        bad = sorted({r for r in regions if r not in REGIONS})
        if bad:
            raise LayoutError(f"unknown regions {bad}; expected one of {REGIONS}")

    def __len__(self):
        return len(self.names)

    def region_of(self, index: int) -> str:
        return self.regions[index]

    def index(self, name: str) -> int:
        return self.names.index(name)

    @classmethod
    def default(cls) -> "ChannelLayout":
        """The shipped 61-electrode 10-10 layout grouped into F/C/P/O/T."""
        text = resources.files("psiconn").joinpath("data/layout61.json").read_text()
        return cls.from_dict(json.loads(text))

    @classmethod
    def generic(cls, n_channels: int) -> "ChannelLayout":
        """Layout for ``n_channels`` channels.

        Uses evenly spaced electrodes of the default layout so that region
        tallies stay meaningful; ``n_channels == 61`` returns the default.
        """
        full = cls.default()
        if n_channels == len(full):
            return full
        if not 1 <= n_channels <= len(full):
            names = [f"ch{i:03d}" for i in range(n_channels)]
            regions = [REGIONS[i % len(REGIONS)] for i in range(n_channels)]
            return cls(tuple(names), tuple(regions))
        picks = np.linspace(0, len(full) - 1, n_channels).round().astype(int)
        return full.subset([full.names[i] for i in picks])

    def subset(self, names: Sequence[str]) -> "ChannelLayout":
        try:
            idx = [self.names.index(n) for n in names]
        except ValueError as exc:
            raise LayoutError(str(exc)) from None
        return ChannelLayout(tuple(self.names[i] for i in idx),
                             tuple(self.regions[i] for i in idx))

    def to_dict(self) -> dict:
        return {"channels": [{"name": n, "region": r}
                             for n, r in zip(self.names, self.regions)]}

    @classmethod
    def from_dict(cls, doc) -> "ChannelLayout":
        if isinstance(doc, dict) and "channels" in doc:
            chans = doc["channels"]
            return cls(tuple(c["name"] for c in chans),
                       tuple(c["region"] for c in chans))
        if isinstance(doc, dict) and "names" in doc:
            return cls(tuple(doc["names"]), tuple(doc["regions"]))
        raise LayoutError("layout document needs 'channels' or 'names'/'regions'")

    def digest(self) -> str:
        """Stable short hash identifying names and region assignment."""
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class MultichannelRecord:
    """Samples ``[n_samples, n_channels]`` at ``rate`` Hz."""

    samples: np.ndarray
    rate: float
    layout: ChannelLayout

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64, copy=True)
        if x.ndim != 2:
            raise ValueError(f"samples must be 2-D, got shape {x.shape}")
        if x.shape[1] != len(self.layout):
            raise LayoutError(
                f"record has {x.shape[1]} channels, layout has {len(self.layout)}")
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        bad = ~np.isfinite(x)
        if bad.any():
            row = int(np.argwhere(bad)[0, 0])
            raise RecordFormatError(f"non-finite sample at row {row}")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "rate", float(self.rate))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.rate


class Phase(NamedTuple):
    label: str
    start_s: float
    duration_s: float


class PhaseSchedule(tuple):
    """Ordered, non-overlapping labelled intervals."""

    def __new__(cls, phases: Iterable = ()):
        items = []
        for p in phases:
            if isinstance(p, dict):
                p = Phase(p["label"], p["start_s"], p["duration_s"])
            p = Phase(str(p[0]), float(p[1]), float(p[2]))
            if p.label not in PHASE_LABELS:
                raise ValueError(f"unknown phase label {p.label!r}")
            if not p.duration_s > 0:
                raise ValueError(f"phase duration must be positive: {p}")
            if p.start_s < 0:
                raise ValueError(f"phase starts before the record: {p}")
            items.append(p)
        for a, b in zip(items, items[1:]):
            if b.start_s < a.start_s:
                raise ValueError("phase start times must be nondecreasing")
            if b.start_s < a.start_s + a.duration_s - 1e-9:
                raise ValueError(f"phases overlap: {a} and {b}")
        return super().__new__(cls, items)

    def to_json(self) -> list:
        return [p._asdict() for p in self]

    @classmethod
    def from_json(cls, doc) -> "PhaseSchedule":
        return cls(doc)

    @classmethod
    def load(cls, path) -> "PhaseSchedule":
        return cls(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class Epoch:
    samples: np.ndarray
    label: str
    source_offset: float
    rate: float = 1000.0

    def __post_init__(self):
        if self.label not in PHASE_LABELS:
            raise ValueError(f"unknown phase label {self.label!r}")
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("epoch samples must be [n_samples, n_channels]")
        object.__setattr__(self, "samples", x)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


# --------------------------------------------------------------------------
# file formats

def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def _infer_format(path: Path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
        if fmt not in ("csv", "bin"):
            raise ValueError(f"unknown record format {fmt!r}")
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "bin"


def load_record(path, format=None, layout=None) -> MultichannelRecord:
    """Read a record in ``csv`` or ``bin`` format.

    The layout is taken from ``layout`` if given, otherwise from the sidecar
    manifest, otherwise :meth:`ChannelLayout.generic` for the binary format.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    manifest = read_manifest(path)
    if fmt == "csv":
        names, samples = _read_csv(path)
        if "rate" not in manifest:
            raise RecordFormatError(f"{_sidecar_path(path)}: manifest lacks 'rate'")
        rate = manifest["rate"]
        if layout is None:
            layout = (ChannelLayout.from_dict(manifest["layout"])
                      if "layout" in manifest else None)
        if layout is not None and tuple(names) != layout.names:
            if len(names) != len(layout):
                raise RecordFormatError(
                    f"{path}: header has {len(names)} channels, "
                    f"layout has {len(layout)}")
            raise RecordFormatError(f"{path}: header names differ from layout")
        if layout is None:
            layout = _layout_for_names(names)
    else:
        rate, samples = _read_bin(path)
        if layout is None:
            layout = (ChannelLayout.from_dict(manifest["layout"])
                      if "layout" in manifest
                      else ChannelLayout.generic(samples.shape[1]))
        if len(layout) != samples.shape[1]:
            raise RecordFormatError(
                f"{path}: header declares {samples.shape[1]} channels, "
                f"layout has {len(layout)}")
    return MultichannelRecord(samples, rate, layout)


def _layout_for_names(names) -> ChannelLayout:
    full = ChannelLayout.default()
    if all(n in full.names for n in names):
        return full.subset(names)
    return ChannelLayout(tuple(names),
                         tuple(REGIONS[i % len(REGIONS)] for i in range(len(names))))


def read_manifest(path) -> dict:
    side = _sidecar_path(Path(path))
    if not side.exists():
        return {}
    try:
        return json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise RecordFormatError(f"{side}: {exc}") from None


def load_schedule(path) -> PhaseSchedule:
    """Schedule from a schedule JSON array or from a record's sidecar."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc = json.loads(path.read_text())
        if isinstance(doc, dict):
            doc = doc.get("schedule", [])
        return PhaseSchedule(doc)
    return PhaseSchedule(read_manifest(path).get("schedule", []))


def _read_csv(path: Path):
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            names = next(reader)
        except StopIteration:
            raise RecordFormatError(f"{path}: empty file") from None
        names = [n.strip() for n in names]
        if not names or any(n == "" for n in names):
            raise RecordFormatError(f"{path}: malformed header row")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(names):
                raise RecordFormatError(
                    f"{path}: row {lineno} has {len(row)} cells, "
                    f"expected {len(names)}")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise RecordFormatError(
                    f"{path}: unparseable value in row {lineno}") from None
            if not all(math.isfinite(v) for v in vals):
                raise RecordFormatError(f"{path}: non-finite value in row {lineno}")
            rows.append(vals)
    samples = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return names, samples


def _read_bin(path: Path):
    data = path.read_bytes()
    if len(data) < _BIN_HEADER.size:
        raise RecordFormatError(f"{path}: truncated header ({len(data)} bytes)")
    magic, n_ch, rate = _BIN_HEADER.unpack_from(data, 0)
    if magic != BIN_MAGIC:
        raise RecordFormatError(f"{path}: bad magic bytes {magic!r} at byte 0")
    if n_ch == 0 or rate == 0:
        raise RecordFormatError(
            f"{path}: zero channel count or rate in header at byte 5")
    body = len(data) - _BIN_HEADER.size
    frame = 8 * n_ch
    if body % frame:
        raise RecordFormatError(
            f"{path}: payload of {body} bytes is not a whole number of "
            f"{n_ch}-channel frames (byte {_BIN_HEADER.size + body - body % frame})")
    samples = np.frombuffer(data, dtype="<f8", offset=_BIN_HEADER.size)
    samples = samples.reshape(-1, n_ch)
    bad = ~np.isfinite(samples)
    if bad.any():
        r, c = (int(v) for v in np.argwhere(bad)[0])
        byte = _BIN_HEADER.size + 8 * (r * n_ch + c)
        raise RecordFormatError(f"{path}: non-finite value at byte {byte} (row {r})")
    return float(rate), samples.astype(np.float64)


def save_record(record: MultichannelRecord, path, format=None,
                schedule: PhaseSchedule | None = None, extra: dict | None = None):
    """Write ``record`` plus its sidecar manifest."""
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(record.layout.names)
            for row in record.samples:
                w.writerow([repr(float(v)) for v in row])
    else:
        if float(record.rate) != int(record.rate):
            raise ValueError("binary format stores an integer sampling rate")
        header = _BIN_HEADER.pack(BIN_MAGIC, record.n_channels, int(record.rate))
        path.write_bytes(header + np.ascontiguousarray(
            record.samples, dtype="<f8").tobytes())
    manifest = {"rate": record.rate, "layout": record.layout.to_dict()}
    if schedule is not None:
        manifest["schedule"] = PhaseSchedule(schedule).to_json()
    if extra:
        manifest.update(extra)
    _sidecar_path(path).write_text(json.dumps(manifest, indent=1) + "\n")
    return path


# --------------------------------------------------------------------------
# epoching and detrending

def epoch_stream(record: MultichannelRecord, schedule: PhaseSchedule,
                 epoch_len: float = 2.5) -> list:
    """Tile every schedule interval with consecutive, non-overlapping epochs.

    Epochs start at the interval start; a trailing remainder shorter than
    ``epoch_len`` is dropped, so no epoch straddles a phase transition.
    """
    if not epoch_len > 0:
        raise ValueError("epoch_len must be positive")
    schedule = PhaseSchedule(schedule)
    rate = record.rate
    n_ep = int(round(epoch_len * rate))
    epochs = []
    for phase in schedule:
        end = phase.start_s + phase.duration_s
        if end > record.duration + 1e-9:
            raise ScheduleRangeError(
                f"interval {phase.label}@{phase.start_s}s+{phase.duration_s}s "
                f"exceeds record duration {record.duration}s")
        count = int(math.floor(phase.duration_s / epoch_len + _TILE_EPS))
        for k in range(count):
            offset = phase.start_s + k * epoch_len
            i0 = int(round(offset * rate))
            chunk = record.samples[i0:i0 + n_ep]
            if chunk.shape[0] != n_ep:
                raise ScheduleRangeError(
                    f"epoch at {offset}s runs past the end of the record")
            epochs.append(Epoch(chunk.copy(), phase.label, offset, rate))
    return epochs


def epoch_counts(epochs) -> dict:
    """Per-class epoch tally in phase-label order (a Table-I style ledger)."""
    counts = {lab: 0 for lab in PHASE_LABELS}
    for ep in epochs:
        counts[ep.label] += 1
    counts["total"] = sum(counts[lab] for lab in PHASE_LABELS)
    return counts


def _piece_bounds(n: int, n_pieces: int):
    size = n // n_pieces
    bounds = [(k * size, (k + 1) * size) for k in range(n_pieces)]
    bounds[-1] = (bounds[-1][0], n)
    return bounds


def detrend(epoch, n_pieces: int = 1):
    """Remove a least-squares line from each of ``n_pieces`` contiguous pieces.

    Pieces have ``n // n_pieces`` samples; the remainder goes to the last one.
    Accepts an :class:`Epoch` (returns a new Epoch) or a 2-D array.
    """
    if n_pieces < 1:
        raise ValueError("n_pieces must be >= 1")
    x = epoch.samples if isinstance(epoch, Epoch) else np.asarray(epoch, float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    n = x.shape[0]
    if n // n_pieces < 2:
        raise ValueError(
            f"{n} samples in {n_pieces} pieces leaves segments shorter than 2")
    out = np.empty_like(x, dtype=np.float64)
    for a, b in _piece_bounds(n, n_pieces):
        seg = x[a:b]
        t = np.arange(b - a, dtype=np.float64)
        t -= t.mean()
        mean = seg.mean(axis=0)
        slope = (t @ (seg - mean)) / (t @ t)
        out[a:b] = seg - mean - np.outer(t, slope)
    if squeeze:
        out = out[:, 0]
    if isinstance(epoch, Epoch):
        return Epoch(out, epoch.label, epoch.source_offset, epoch.rate)
    return out


def stack_epochs(epochs) -> tuple:
    """``(X [n_epochs, n_samples, n_channels], labels)`` from a list of epochs."""
    if not epochs:
        raise ValueError("no epochs")
    X = np.stack([ep.samples for ep in epochs])
    return X, np.array([ep.label for ep in epochs])
