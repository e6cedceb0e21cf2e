"""File-based pipeline stages.

Every stage reads its inputs from, and writes its outputs to, one working
directory, so running the stages one by one gives the same files as
:func:`run`. All outputs are CSV, JSON or JSON-lines, except the signal
records, which use the binary record format.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .committee import class_order, cross_validate
from .evolve import GaConfig, SelectionResult, evolve
from .exceptions import PsiconnError, StageError
from .featureset import FeatureTable, PairIndex, partition
from .graphs import build_graph, graph_metrics, write_bundle
from .signal_io import (ChannelLayout, MultichannelRecord,
                        PhaseSchedule, detrend, epoch_counts, epoch_stream,
                        load_record, load_schedule, read_manifest, save_record)
from .spectral import DEFAULT_BANDS, BandSpec, SpectralConfig, get_band, psi_all_bands
from .stats import friedman, posthoc
from .synthgen import PlantedPlan, planted_record

STAGES = ("synth", "epoch", "psi", "features", "select", "evaluate", "graph",
          "stats", "report")
TABLE2_HEADER = ["EEG band", "#FCs", "CV Accuracy (%)", "Kappa"]
TABLE4_ROWS = (("C", "Average clustering (C)"),
               ("L", "Average shortest path length (L)"),
               ("A", "Degree assortativity (A)"),
               ("sigma", "Small-world coefficient (\u03c3)"),
               ("omega", "Small-world coefficient (\u03c9)"))
TABLE4_FIRST = "Graph Measure"


def display_name(band):
    """``low_gamma`` -> ``Low Gamma``."""
    return band.name.replace("_", " ").title()


def format_p(p):
    """Scientific notation without exponent padding, e.g. ``4.89E-11``, ``1.03E-1``."""
    if p is None:
        return "nan"
    mant, exp = f"{p:.2E}".split("E")
    return f"{mant}E{int(exp)}"


@dataclass
class PipelineConfig:
    """Everything a run depends on; ``seed`` fixes all randomness.

    ``record``/``schedule`` point at input data; when ``record`` is None the
    ``synth`` stage generates a planted dataset from ``synth`` (PlantedPlan
    fields).
    """

    seed: int = 0
    record: str | None = None
    schedule: str | None = None
    synth: dict = field(default_factory=dict)
    epoch_len_s: float = 2.5
    detrend_pieces: int = 1
    spectral: dict = field(default_factory=dict)
    bands: list = field(default_factory=lambda: [b.name for b in DEFAULT_BANDS])
    ga: dict = field(default_factory=dict)
    ga_seed: int | None = None
    folds: int = 10
    trees: int = 10
    graph: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    workers: int = 1

    GRAPH_DEFAULTS = {"length": "inverse", "n_refs": 20, "n_blocks": 5,
                      "per_class": False, "band": None}
    STATS_DEFAULTS = {"blocking": "connection", "alpha": 0.05}

    def __post_init__(self):
        unknown = set(self.graph) - set(self.GRAPH_DEFAULTS)
        unknown |= set(self.stats) - set(self.STATS_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        self.graph = {**self.GRAPH_DEFAULTS, **self.graph}
        self.stats = {**self.STATS_DEFAULTS, **self.stats}
        if self.stats["blocking"] not in ("connection", "epoch"):
            raise ValueError("stats.blocking must be 'connection' or 'epoch'")
        for b in self.bands:
            get_band(b)

    @classmethod
    def from_dict(cls, doc):
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        """Config without ``workers``, which never changes results."""
        d = asdict(self)
        d.pop("workers")
        return d

    def band_specs(self):
        return [get_band(b) for b in self.bands]

    def spectral_config(self, rate):
        return SpectralConfig(rate=rate, **self.spectral)

    def ga_config(self):
        seed = self.seed if self.ga_seed is None else self.ga_seed
        return GaConfig(**{**self.ga, "cv_folds": self.folds,
                           "n_estimators": self.trees, "rng_seed": int(seed)})


# --------------------------------------------------------------------------
# file helpers

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n")
    return Path(path)


def read_json(path):
    return json.loads(Path(path).read_text())


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class _Stage:
    """Tracks the artifact being touched so failures can name it."""

    def __init__(self, name):
        self.name = name
        self.path = None

    def at(self, path):
        self.path = Path(path)
        return self.path


@contextmanager
def stage(name, workdir):
    st = _Stage(name)
    st.path = Path(workdir)
    try:
        yield st
    except StageError:
        raise
    except (PsiconnError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        raise StageError(name, st.path, exc) from exc


def _band_file(wd, prefix, band, ext):
    return Path(wd) / f"{prefix}_{band.name}.{ext}"


# --------------------------------------------------------------------------
# stages

def run_synth(wd, cfg: PipelineConfig):
    """Planted dataset as ``record.bin`` (+ sidecar) and ``truth.json``."""
    wd = Path(wd)
    with stage("synth", wd) as st:
        wd.mkdir(parents=True, exist_ok=True)
        plan = PlantedPlan.from_dict({"epoch_len_s": cfg.epoch_len_s, **cfg.synth})
        record, schedule, manifest = planted_record(plan, cfg.seed)
        save_record(record, st.at(wd / "record.bin"), schedule=schedule)
        write_json(st.at(wd / "truth.json"), manifest)
    return [wd / "record.bin", wd / "record.json", wd / "truth.json"]


def _input_record(wd, cfg):
    return Path(cfg.record) if cfg.record else Path(wd) / "record.bin"


def run_epoch(wd, cfg: PipelineConfig):
    """Tile the schedule into detrended epochs stored end to end in ``epochs.bin``."""
    wd = Path(wd)
    with stage("epoch", wd) as st:
        wd.mkdir(parents=True, exist_ok=True)
        rec_path = st.at(_input_record(wd, cfg))
        record = load_record(rec_path)
        sched_path = st.at(Path(cfg.schedule) if cfg.schedule else rec_path)
        schedule = load_schedule(sched_path)
        if not schedule:
            raise ValueError("no phase schedule found")
        st.at(rec_path)
        epochs = epoch_stream(record, schedule, cfg.epoch_len_s)
        if not epochs:
            raise ValueError("schedule yields no epochs")
        if cfg.detrend_pieces:
            epochs = [detrend(ep, cfg.detrend_pieces) for ep in epochs]
        L = cfg.epoch_len_s
        tiled = PhaseSchedule((ep.label, k * L, L) for k, ep in enumerate(epochs))
        out = MultichannelRecord(np.concatenate([ep.samples for ep in epochs]),
                                 record.rate, record.layout)
        save_record(out, st.at(wd / "epochs.bin"), schedule=tiled,
                    extra={"epoch_len_s": L, "detrend_pieces": cfg.detrend_pieces,
                           "source_offsets": [ep.source_offset for ep in epochs]})
        write_json(st.at(wd / "epoch_counts.json"), epoch_counts(epochs))
    return [wd / "epochs.bin", wd / "epochs.json", wd / "epoch_counts.json"]


def load_epochs(wd):
    path = Path(wd) / "epochs.bin"
    record = load_record(path)
    meta = read_manifest(path)
    return (epoch_stream(record, load_schedule(path), meta["epoch_len_s"]),
            record.layout)


def run_psi(wd, cfg: PipelineConfig):
    """Per-band JSON-lines: a header line, then one upper triangle per epoch."""
    wd = Path(wd)
    with stage("psi", wd) as st:
        st.at(wd / "epochs.bin")
        epochs, layout = load_epochs(wd)
        spec = cfg.spectral_config(epochs[0].rate)
        bands = cfg.band_specs()
        pidx = PairIndex(len(layout))
        handles = {}
        out = []
        try:
            for b in bands:
                p = st.at(_band_file(wd, "psi", b, "jsonl"))
                handles[b] = p.open("w")
                out.append(p)
                handles[b].write(json.dumps({"band": b.to_dict(),
                                             "channel_names": list(layout.names),
                                             "spectral": spec.to_dict()}) + "\n")
            for k, ep in enumerate(epochs):
                mats = psi_all_bands(ep, spec, bands)
                for b, m in zip(bands, mats):
                    handles[b].write(json.dumps(
                        {"epoch": k, "label": ep.label,
                         "psi": pidx.vector(m.psi).tolist()}) + "\n")
        finally:
            for h in handles.values():
                h.close()
    return out


def load_psi(path):
    """``(band, channel_names, labels, X [n_epochs, n_pairs])`` from a psi file."""
    with Path(path).open() as fh:
        head = json.loads(fh.readline())
        rows = [json.loads(line) for line in fh if line.strip()]
    X = np.array([r["psi"] for r in rows], dtype=np.float64)
    return (BandSpec.from_dict(head["band"]), tuple(head["channel_names"]),
            np.array([r["label"] for r in rows]), X)


def run_features(wd, cfg: PipelineConfig):
    """Feature table CSV and manifest per band, plus the cortical partition."""
    wd = Path(wd)
    out = []
    with stage("features", wd) as st:
        layout = None
        for b in cfg.band_specs():
            band, names, labels, X = load_psi(st.at(_band_file(wd, "psi", b, "jsonl")))
            layout = _layout(names, wd)
            pidx = PairIndex(len(names))
            table = FeatureTable(X, labels, band, pidx, names)
            table.to_csv(st.at(_band_file(wd, "features", b, "csv")))
            write_json(st.at(_band_file(wd, "features", b, "json")),
                       table.manifest(layout))
            out += [_band_file(wd, "features", b, "csv"),
                    _band_file(wd, "features", b, "json")]
        part = partition(PairIndex(len(layout)), layout)
        write_json(st.at(wd / "partition.json"),
                   {"n_features": len(part.tags), "intracortical": part.intra,
                    "intercortical": part.inter, "cells": part.counts})
        out.append(wd / "partition.json")
    return out


def _layout(names, wd):
    meta = read_manifest(Path(wd) / "epochs.bin")
    layout = ChannelLayout.from_dict(meta["layout"])
    if tuple(names) != layout.names:
        raise ValueError("psi channel names differ from the epoch layout")
    return layout


def run_select(wd, cfg: PipelineConfig):
    """GA feature selection per band."""
    wd = Path(wd)
    out = []
    ga = cfg.ga_config()
    with stage("select", wd) as st:
        for b in cfg.band_specs():
            table = FeatureTable.from_csv(st.at(_band_file(wd, "features", b, "csv")))
            result = evolve(table.X, table.labels, ga, n_jobs=cfg.workers)
            doc = result.to_json()
            doc["band"] = b.to_dict()
            doc["selected_names"] = [table.column_names()[i] for i in result.selected]
            out.append(write_json(st.at(_band_file(wd, "selection", b, "json")), doc))
    return out


def _mask(wd, band):
    doc = read_json(_band_file(wd, "selection", band, "json"))
    return SelectionResult.from_json(doc).best_mask


def best_band(rows):
    """Highest accuracy; ties go to the band with the lower frequency."""
    return sorted(rows, key=lambda r: (-r["accuracy"], r["f_lo"]))[0]


def run_evaluate(wd, cfg: PipelineConfig):
    """Cross-validated committee on each band's selected features.

    Writes ``cv_<band>.json``, ``table3_<band>.txt``, ``table2.csv`` and
    ``best_band.json``.
    """
    wd = Path(wd)
    out = []
    rows = []
    with stage("evaluate", wd) as st:
        for b in cfg.band_specs():
            table = FeatureTable.from_csv(st.at(_band_file(wd, "features", b, "csv")))
            st.at(_band_file(wd, "selection", b, "json"))
            mask = _mask(wd, b)
            rep = cross_validate(table.X[:, mask], table.labels, cfg.folds, cfg.seed,
                                 cfg.trees)
            doc = rep.to_json()
            doc["band"] = b.to_dict()
            doc["n_selected"] = int(mask.sum())
            out.append(write_json(st.at(_band_file(wd, "cv", b, "json")), doc))
            p = st.at(_band_file(wd, "table3", b, "txt"))
            p.write_text(rep.to_text(display_name(b)))
            out.append(p)
            rows.append({"band": b.name, "display": display_name(b), "f_lo": b.f_lo,
                         "n_fcs": int(mask.sum()), "accuracy": rep.accuracy,
                         "kappa": rep.kappa})
        p = st.at(wd / "table2.csv")
        with p.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TABLE2_HEADER)
            for r in rows:
                w.writerow([r["display"], r["n_fcs"], f"{100 * r['accuracy']:.2f}",
                            f"{r['kappa']:.4f}"])
        out.append(p)
        best = best_band(rows)
        out.append(write_json(st.at(wd / "best_band.json"),
                              {"band": best["band"], "accuracy": best["accuracy"],
                               "kappa": best["kappa"], "n_fcs": best["n_fcs"],
                               "rule": "highest accuracy, ties to lower frequency"}))
    return out


def _chosen_band(wd, cfg):
    name = cfg.graph.get("band") or read_json(Path(wd) / "best_band.json")["band"]
    return get_band(name)


def _class_means(labels, X, blocks=1):
    """Per class, ``blocks`` mean vectors over contiguous runs of epochs."""
    out = {}
    for lab in class_order(labels):
        rows = X[labels == lab]
        if len(rows) < blocks:
            raise ValueError(f"class {lab} has {len(rows)} epochs, fewer than "
                             f"{blocks} blocks")
        out[lab] = [chunk.mean(axis=0) for chunk in np.array_split(rows, blocks)]
    return out


def _fmt_cell(values):
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)])
    if v.size == 0:
        return "nan"
    sd = v.std(ddof=1) if v.size > 1 else 0.0
    return f"{v.mean():.3f} ({sd:.3f})"


def run_graph(wd, cfg: PipelineConfig):
    """Class graphs on the chosen band and a Table-IV style metric summary.

    Each class's epochs are split into ``n_blocks`` contiguous blocks; every
    block yields one mean-PSI graph whose metrics give the mean (SD) cells
    and the per-metric Friedman test across classes.
    """
    wd = Path(wd)
    g = cfg.graph
    out = []
    with stage("graph", wd) as st:
        band = _chosen_band(wd, cfg)
        _, names, labels, X = load_psi(st.at(_band_file(wd, "psi", band, "jsonl")))
        st.at(_band_file(wd, "selection", band, "json"))
        mask = _mask(wd, band)
        pidx = PairIndex(len(names))
        classes = list(class_order(labels))

        def metrics_of(vec, key):
            ss = np.random.SeedSequence([cfg.seed, 4, *key])
            graph = build_graph(pidx.matrix(vec), mask, names)
            return graph, graph_metrics(graph, g["n_refs"], ss, g["length"])

        if g["per_class"]:
            for c, lab in enumerate(classes):
                vec = X[labels == lab].mean(axis=0)
                graph, m = metrics_of(vec, (c, g["n_blocks"]))
                graph.to_edge_csv(st.at(wd / f"graph_{lab}.csv"))
                write_bundle(graph, m, st.at(wd / f"graph_{lab}.json"))
                out += [wd / f"graph_{lab}.csv", wd / f"graph_{lab}.json"]
        else:
            graph, m = metrics_of(X.mean(axis=0), (len(classes), 0))
            graph.to_edge_csv(st.at(wd / "graph_all.csv"))
            write_bundle(graph, m, st.at(wd / "graph_all.json"))
            out += [wd / "graph_all.csv", wd / "graph_all.json"]

        blocks = _class_means(labels, X, g["n_blocks"])
        values = {key: {lab: [] for lab in classes} for key, _ in TABLE4_ROWS}
        for c, lab in enumerate(classes):
            for k, vec in enumerate(blocks[lab]):
                _, m = metrics_of(vec, (c, k))
                for key, _ in TABLE4_ROWS:
                    values[key][lab].append(getattr(m, key))
        pvals = {}
        for key, _ in TABLE4_ROWS:
            M = np.array([values[key][lab] for lab in classes], dtype=float).T
            M = M[np.isfinite(M).all(axis=1)]
            try:
                pvals[key] = friedman(M).p_value if len(M) >= 2 else None
            except PsiconnError:
                pvals[key] = None
        p = st.at(wd / "table4.csv")
        with p.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([TABLE4_FIRST] + classes + ["p-value"])
            for key, title in TABLE4_ROWS:
                pv = pvals[key]
                w.writerow([title] + [_fmt_cell(values[key][lab]) for lab in classes]
                           + [format_p(pv)])
        out.append(p)
        out.append(write_json(st.at(wd / "table4.json"),
                              {"band": band.to_dict(), "n_blocks": g["n_blocks"],
                               "n_refs": g["n_refs"], "length": g["length"],
                               "values": values, "friedman_p": pvals}))
    return out


def _friedman_report(M, labels, alpha):
    try:
        fr = friedman(M)
    except PsiconnError as exc:
        return {"friedman": None, "posthoc": None, "note": str(exc)}
    doc = {"friedman": fr.to_dict(), "n_blocks": int(M.shape[0]), "posthoc": None}
    if fr.p_value <= alpha:
        ph = posthoc(M, labels)
        doc["posthoc"] = {f"{a}-{b}": r.to_dict() for (a, b), r in ph.items()}
    return doc


def _blocked(labels, X, classes, blocking, cols=None):
    """Blocks x classes matrix for the Friedman test."""
    Xc = X if cols is None else X[:, cols]
    if blocking == "connection":
        return np.column_stack([Xc[labels == lab].mean(axis=0) for lab in classes])
    n = min(int((labels == lab).sum()) for lab in classes)
    return np.column_stack([Xc[labels == lab][:n].mean(axis=1) for lab in classes])


def run_stats(wd, cfg: PipelineConfig):
    """Friedman and post hoc Wilcoxon tests per band and per cortical cell.

    Also writes the intra/intercortical tally of the selected connections on
    the chosen band.
    """
    wd = Path(wd)
    s = cfg.stats
    out = []
    with stage("stats", wd) as st:
        doc = {"blocking": s["blocking"], "alpha": s["alpha"], "bands": {},
               "subgroups": {}}
        for b in cfg.band_specs():
            _, names, labels, X = load_psi(st.at(_band_file(wd, "psi", b, "jsonl")))
            classes = list(class_order(labels))
            doc["bands"][b.name] = _friedman_report(
                _blocked(labels, X, classes, s["blocking"]), classes, s["alpha"])
        band = _chosen_band(wd, cfg)
        _, names, labels, X = load_psi(st.at(_band_file(wd, "psi", band, "jsonl")))
        classes = list(class_order(labels))
        mask = _mask(wd, band)
        layout = _layout(names, wd)
        part = partition(PairIndex(len(names)), layout)
        cells = np.array([part.cell_of(f) for f in range(len(part.tags))])
        doc["subgroup_band"] = band.name
        for cell in part.counts:
            cols = np.flatnonzero(mask & (cells == cell))
            if s["blocking"] == "connection" and len(cols) < 2:
                doc["subgroups"][cell] = {"friedman": None, "posthoc": None,
                                          "n_blocks": int(len(cols))}
                continue
            if len(cols) == 0:
                doc["subgroups"][cell] = {"friedman": None, "posthoc": None,
                                          "n_blocks": 0}
                continue
            doc["subgroups"][cell] = _friedman_report(
                _blocked(labels, X, classes, s["blocking"], cols), classes, s["alpha"])
        out.append(write_json(st.at(wd / "stats.json"), doc))

        sel = part.selected_counts(mask)
        tally = {"band": band.name, "selected": int(mask.sum()),
                 "intracortical": int(sum(v for k, v in sel.items() if "-" not in k)),
                 "intercortical": int(sum(v for k, v in sel.items() if "-" in k)),
                 "cells": {k: {"selected": sel[k], "available": part.counts[k]}
                           for k in part.counts}}
        out.append(write_json(st.at(wd / "tally.json"), tally))
        p = st.at(wd / "tally.csv")
        with p.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell", "kind", "selected", "available"])
            for k in part.counts:
                w.writerow([k, "inter" if "-" in k else "intra", sel[k], part.counts[k]])
        out.append(p)
    return out


REPORT_INPUTS = ("epoch_counts.json", "partition.json", "table2.csv",
                 "best_band.json", "table4.csv", "stats.json", "tally.json")


def run_report(wd, cfg: PipelineConfig):
    """``report.json`` summarising the run and ``manifest.json`` of checksums."""
    wd = Path(wd)
    with stage("report", wd) as st:
        for name in REPORT_INPUTS:
            if not st.at(wd / name).exists():
                raise FileNotFoundError(f"missing artifact {name}")
        st.at(wd)
        artifacts = {p.name: sha256(p) for p in sorted(wd.iterdir())
                     if p.is_file() and p.name not in ("report.json", "manifest.json")}
        with (wd / "table2.csv").open(newline="", encoding="utf-8") as fh:
            table2 = list(csv.DictReader(fh))
        with (wd / "table4.csv").open(newline="", encoding="utf-8") as fh:
            table4 = list(csv.DictReader(fh))
        stats = read_json(wd / "stats.json")
        report = {
            "version": __version__,
            "seed": cfg.seed,
            "config": cfg.to_dict(),
            "epoch_counts": read_json(wd / "epoch_counts.json"),
            "partition": read_json(wd / "partition.json"),
            "best_band": read_json(wd / "best_band.json"),
            "table2": table2,
            "table3": {b.name: (wd / f"table3_{b.name}.txt").read_text()
                       for b in cfg.band_specs()},
            "table4": table4,
            "friedman_by_band": {
                b: (v["friedman"]["p_value"] if v["friedman"] else None)
                for b, v in stats["bands"].items()},
            "tally": read_json(wd / "tally.json"),
            "artifacts": artifacts,
        }
        write_json(st.at(wd / "report.json"), report)
        artifacts["report.json"] = sha256(wd / "report.json")
        write_json(st.at(wd / "manifest.json"), {"sha256": artifacts})
    return [wd / "report.json", wd / "manifest.json"]


STAGE_FUNCS = {"synth": run_synth, "epoch": run_epoch, "psi": run_psi,
               "features": run_features, "select": run_select,
               "evaluate": run_evaluate, "graph": run_graph, "stats": run_stats,
               "report": run_report}


def run(cfg: PipelineConfig, wd):
    """All stages in order; ``synth`` only when no input record is configured."""
    wd = Path(wd)
    wd.mkdir(parents=True, exist_ok=True)
    for name in STAGES:
        if name == "synth" and cfg.record:
            continue
        STAGE_FUNCS[name](wd, cfg)
    return read_json(wd / "report.json")
