"""Pair <-> feature indexing, feature tables and cortical partition tallies."""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np

from .exceptions import LayoutError, RecordFormatError
from .signal_io import PHASE_LABELS, REGIONS


def pair_to_feature(i: int, j: int, n: int) -> int:
    """Row-major upper-triangle id of the pair ``(i, j)``, ``0 <= i < j < n``."""
    if not 0 <= i < j < n:
        raise ValueError(f"need 0 <= i < j < n, got i={i}, j={j}, n={n}")
    return i * n - i * (i + 1) // 2 + (j - i - 1)


def feature_to_pair(fid: int, n: int) -> tuple:
    """Inverse of :func:`pair_to_feature`."""
    m = n * (n - 1) // 2
    if not 0 <= fid < m:
        raise ValueError(f"feature id {fid} outside 0..{m - 1}")
    # largest i with start(i) <= fid, start(i) = i*n - i*(i+1)/2
    b = 2 * n - 1
    i = int((b - np.sqrt(b * b - 8 * fid)) // 2)
    while i > 0 and pair_start(i, n) > fid:
        i -= 1
    while pair_start(i + 1, n) <= fid:
        i += 1
    return i, int(fid - pair_start(i, n) + i + 1)


def pair_start(i, n):
    return i * n - i * (i + 1) // 2


class PairIndex:
    """Bijection between pairs ``i < j`` of ``n`` channels and ids ``0..n(n-1)/2-1``."""

    def __init__(self, n: int):
        if n < 2:
            raise ValueError("need at least two channels")
        self.n = int(n)
        iu = np.triu_indices(self.n, k=1)
        self.triu = iu
        self.pairs = np.column_stack(iu)

    def __len__(self):
        return len(self.pairs)

    def __eq__(self, other):
        return isinstance(other, PairIndex) and other.n == self.n

    def feature(self, i, j):
        return pair_to_feature(i, j, self.n)

    def pair(self, fid):
        return feature_to_pair(fid, self.n)

    def names(self, channel_names):
        return [f"{channel_names[i]}-{channel_names[j]}" for i, j in self.pairs]

    def vector(self, matrix):
        return np.asarray(matrix)[self.triu]

    def matrix(self, vector):
        """Antisymmetric matrix with ``M[i, j] = vector[id(i, j)]`` for ``i < j``."""
        M = np.zeros((self.n, self.n))
        M[self.triu] = vector
        return M - M.T


@dataclass(eq=False)
class FeatureTable:
    """Epoch-by-connection PSI values with phase labels."""

    X: np.ndarray
    labels: np.ndarray
    band: object
    pair_index: PairIndex
    channel_names: tuple = ()

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(str)
        if self.X.ndim != 2 or self.X.shape[1] != len(self.pair_index):
            raise ValueError(
                f"table shape {self.X.shape} does not match "
                f"{len(self.pair_index)} pairs")
        if len(self.labels) != self.X.shape[0]:
            raise ValueError("one label per row required")
        if np.isnan(self.X).any():
            raise ValueError("feature table contains NaN")
        bad = set(self.labels) - set(PHASE_LABELS)
        if bad:
            raise ValueError(f"unknown labels {sorted(bad)}")
        if not self.channel_names:
            self.channel_names = tuple(f"ch{i}" for i in range(self.pair_index.n))

    @property
    def n_features(self):
        return self.X.shape[1]

    def column_names(self):
        return self.pair_index.names(self.channel_names)

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.column_names() + ["label"])
            for row, lab in zip(self.X, self.labels):
                w.writerow([repr(float(v)) for v in row] + [lab])
        return path

    def manifest(self, layout=None) -> dict:
        doc = {"band": self.band.to_dict() if hasattr(self.band, "to_dict") else self.band,
               "n_rows": int(self.X.shape[0]), "n_features": int(self.n_features),
               "channel_names": list(self.channel_names)}
        if layout is not None:
            doc["layout_hash"] = layout.digest()
        return doc

    @classmethod
    def from_csv(cls, path, band=None):
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[-1] != "label":
                raise RecordFormatError(f"{path}: last column must be 'label'")
            rows, labels = [], []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise RecordFormatError(f"{path}: row {lineno} has {len(row)} cells")
                try:
                    rows.append([float(v) for v in row[:-1]])
                except ValueError:
                    raise RecordFormatError(f"{path}: bad value in row {lineno}") from None
                labels.append(row[-1])
        names = _channels_from_pairs(header[:-1])
        pidx = PairIndex(len(names))
        if band is None:
            side = path.with_suffix(".json")
            if side.exists():
                from .spectral import BandSpec
                band = BandSpec.from_dict(json.loads(side.read_text())["band"])
        X = np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)
        return cls(X, np.array(labels), band, pidx, tuple(names))


def _channels_from_pairs(pair_names):
    """Recover the channel order from row-major ``a-b`` column names."""
    # n(n-1)/2 = m  ->  n
    m = len(pair_names)
    n = int(round((1 + np.sqrt(1 + 8 * m)) / 2))
    if n * (n - 1) // 2 != m:
        raise RecordFormatError(f"{m} columns is not a triangular pair count")
    first = [p.split("-", 1) for p in pair_names[: n - 1]]
    names = [first[0][0]] + [b for _, b in first]
    return names


def build_table(matrices, labels, band=None, channel_names=()) -> FeatureTable:
    """Stack the upper triangles of per-epoch PSI matrices into a table."""
    matrices = list(matrices)
    if not matrices:
        raise ValueError("no connectivity matrices")
    bands = {getattr(m, "band", band) for m in matrices}
    if len(bands) > 1:
        raise ValueError(f"matrices span several bands: {sorted(b.name for b in bands)}")
    mband = bands.pop()
    if band is not None and mband is not None and mband != band:
        raise ValueError(f"matrices are for band {mband.name}, not {band.name}")
    band = band if band is not None else mband
    arrs = [np.asarray(getattr(m, "psi", m)) for m in matrices]
    n = arrs[0].shape[0]
    if any(a.shape != (n, n) for a in arrs):
        raise ValueError("matrices do not share a layout")
    pidx = PairIndex(n)
    X = np.array([a[pidx.triu] for a in arrs])
    if not channel_names:
        channel_names = getattr(matrices[0], "channel_names", ()) or ()
    return FeatureTable(X, np.asarray(labels), band, pidx, tuple(channel_names))


@dataclass(frozen=True)
class CorticalPartition:
    """Per-feature region tag and the tally per region cell."""

    tags: tuple          # per feature: ("intra", r) or ("inter", r_a, r_b)
    counts: dict         # "F", "F-C", ... -> count

    @property
    def intra(self) -> int:
        return sum(1 for t in self.tags if t[0] == "intra")

    @property
    def inter(self) -> int:
        return sum(1 for t in self.tags if t[0] == "inter")

    def cell_of(self, fid) -> str:
        return cell_name(self.tags[fid])

    def selected_counts(self, mask) -> dict:
        """Tally restricted to the features set in ``mask``."""
        got = Counter(cell_name(self.tags[f]) for f in np.flatnonzero(mask))
        return {cell: got.get(cell, 0) for cell in self.counts}


def cell_name(tag) -> str:
    return tag[1] if tag[0] == "intra" else f"{tag[1]}-{tag[2]}"


def partition(pair_index: PairIndex, layout) -> CorticalPartition:
    """Tag every pair as intracortical or intercortical.

    Inter cells are named with regions in F, C, P, O, T order, e.g. ``"F-C"``.
    """
    n = pair_index.n
    if len(layout) != n:
        raise LayoutError(f"layout has {len(layout)} channels, index has {n}")
    order = {r: k for k, r in enumerate(REGIONS)}
    tags = []
    for i, j in pair_index.pairs:
        ri, rj = layout.region_of(int(i)), layout.region_of(int(j))
        if ri not in order or rj not in order:
            raise LayoutError(f"unmapped channel in pair ({i}, {j})")
        if ri == rj:
            tags.append(("intra", ri))
        else:
            a, b = sorted((ri, rj), key=order.get)
            tags.append(("inter", a, b))
    counts = {(a if a == b else f"{a}-{b}"): 0
              for a, b in combinations_with_replacement(REGIONS, 2)}
    for t in tags:
        counts[cell_name(t)] += 1
    return CorticalPartition(tuple(tags), counts)
