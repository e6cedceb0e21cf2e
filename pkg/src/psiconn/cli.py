"""Command-line entry point: ``psiconn --seed N <command> ...``.

Each pipeline stage is a subcommand working on a shared ``--workdir``;
``run`` executes all of them. A JSON ``--config`` supplies defaults and
command-line flags override it.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .exceptions import PsiconnError, StageError
from .pipeline import STAGE_FUNCS, PipelineConfig, run, write_json
from .signal_io import load_record, save_record
from .spectral import SpectralConfig, coherency, cross_spectra, get_band, psi
from .synthgen import CouplingSpec, coupled_pair


def _add_workdir(p, flag="--workdir"):
    p.add_argument(flag, required=True, type=Path, help="run directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="psiconn",
        description="PSI connectivity, GA feature selection and graph analysis "
                    "of respiratory-phase EEG.")
    parser.add_argument("--version", action="version", version=f"psiconn {__version__}")
    parser.add_argument("--seed", type=int, required=True, help="master seed")
    parser.add_argument("--config", type=Path, help="JSON pipeline config")
    parser.add_argument("--workers", type=int, help="parallel fitness workers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic record")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--kind", choices=("planted", "pair"), default="planted")
    p.add_argument("--channels", type=int)
    p.add_argument("--epochs-per-class", type=int)
    p.add_argument("--pairs-per-class", type=int)
    p.add_argument("--tau-ms", type=float, default=20.0, help="pair delay (pair kind)")
    p.add_argument("--snr", type=float, default=2.0, help="pair snr (pair kind)")

    p = sub.add_parser("epoch", help="cut the record into labelled epochs")
    _add_workdir(p)
    p.add_argument("--record", type=Path)
    p.add_argument("--schedule", type=Path)
    p.add_argument("--epoch-len", type=float)
    p.add_argument("--detrend-pieces", type=int)

    p = sub.add_parser("psi", help="phase slope index per epoch and band")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--workdir", type=Path)
    src.add_argument("--record", type=Path,
                     help="print one PSI matrix for a whole record")
    p.add_argument("--band", default="theta", help="band for --record")
    p.add_argument("--bands", nargs="+")
    p.add_argument("--normalize", action="store_true", default=None)

    p = sub.add_parser("features", help="feature tables per band")
    _add_workdir(p)

    p = sub.add_parser("select", help="GA feature selection per band")
    _add_workdir(p)
    p.add_argument("--ga-seed", type=int)

    p = sub.add_parser("evaluate", help="cross-validate the selected features")
    _add_workdir(p)
    p.add_argument("--folds", type=int)
    p.add_argument("--trees", type=int)

    p = sub.add_parser("graph", help="class graphs and graph metrics")
    _add_workdir(p)
    p.add_argument("--per-class", action="store_true", default=None)
    p.add_argument("--band")
    p.add_argument("--n-refs", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--length", choices=("inverse", "weight"))

    p = sub.add_parser("stats", help="Friedman and Wilcoxon tests")
    _add_workdir(p)
    p.add_argument("--blocking", choices=("connection", "epoch"))

    p = sub.add_parser("report", help="summary report and checksums")
    _add_workdir(p)

    p = sub.add_parser("run", help="all stages in order")
    _add_workdir(p, "--out")
    p.add_argument("--ga-seed", type=int)
    return parser


def resolve_config(args) -> PipelineConfig:
    doc = json.loads(args.config.read_text()) if args.config else {}
    doc["seed"] = args.seed
    if args.workers is not None:
        doc["workers"] = args.workers
    a = vars(args)
    synth = dict(doc.get("synth", {}))
    for flag, key in (("channels", "n_channels"), ("epochs_per_class", "n_epochs_per_class"),
                      ("pairs_per_class", "pairs_per_class")):
        if a.get(flag) is not None:
            synth[key] = a[flag]
    doc["synth"] = synth
    for flag, key in (("epoch_len", "epoch_len_s"), ("detrend_pieces", "detrend_pieces"),
                      ("ga_seed", "ga_seed"), ("folds", "folds"), ("trees", "trees"),
                      ("bands", "bands")):
        if a.get(flag) is not None:
            doc[key] = a[flag]
    if a.get("record") is not None and args.command == "epoch":
        doc["record"] = str(a["record"])
    if a.get("schedule") is not None:
        doc["schedule"] = str(a["schedule"])
    if a.get("normalize"):
        doc["spectral"] = {**doc.get("spectral", {}), "normalize": True}
    graph = dict(doc.get("graph", {}))
    for flag, key in (("per_class", "per_class"), ("band", "band"), ("n_refs", "n_refs"),
                      ("blocks", "n_blocks"), ("length", "length")):
        if args.command == "graph" and a.get(flag) is not None:
            graph[key] = a[flag]
    doc["graph"] = graph
    if a.get("blocking") is not None:
        doc["stats"] = {**doc.get("stats", {}), "blocking": a["blocking"]}
    return PipelineConfig.from_dict(doc)


def _psi_of_record(args, cfg):
    record = load_record(args.record)
    band = get_band(args.band)
    spec = SpectralConfig(rate=record.rate, **cfg.spectral)
    S = cross_spectra(record.samples, spec, fmax=band.f_hi + spec.df)
    m = psi(coherency(S), band, spec.df)
    sys.stdout.write(",".join(record.layout.names) + "\n" + m.to_csv())


def _synth_pair(args):
    args.out.mkdir(parents=True, exist_ok=True)
    record, manifest = coupled_pair(CouplingSpec(tau_ms=args.tau_ms, snr=args.snr),
                                    args.seed)
    save_record(record, args.out / "pair.csv")
    write_json(args.out / "pair_truth.json", {**manifest, "seed": args.seed})


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            if args.kind == "pair":
                _synth_pair(args)
            else:
                STAGE_FUNCS["synth"](args.out, cfg)
        elif args.command == "psi" and args.record is not None:
            _psi_of_record(args, cfg)
        elif args.command == "run":
            report = run(cfg, args.out)
            print(f"best band: {report['best_band']['band']} "
                  f"(accuracy {100 * report['best_band']['accuracy']:.2f} %)")
        else:
            STAGE_FUNCS[args.command](args.workdir, cfg)
    except StageError as exc:
        print(f"psiconn: error in stage '{exc.stage}' ({exc.path}): {exc.cause}",
              file=sys.stderr)
        return 2
    except (PsiconnError, ValueError, OSError) as exc:
        print(f"psiconn: error in stage '{args.command}': {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
