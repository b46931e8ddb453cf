"""Command-line front end.

Subcommands: features, score, split, eval, report (corr|hist), synth.
Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .evaluate import (EvalError, evaluate_predictions, load_predictions,
                       loss_weight_export)
from .pipeline import (read_feature_tables, read_score_file, run_features,
                       fit_normalizer, score_corpus, write_score_file)
from .report import (agent_feature_frame, correlation_matrix, histogram_summary,
                     score_histogram, write_correlation_csv, write_histogram_csv)
from .scenario import ParseError, parse_scenario
from .scoring import FeatureNormalizer
from .splits import (SplitError, read_manifest, scoring_split, uniform_split,
                     write_manifest)
from .synth import KINDS, write_corpus

USAGE_EXIT = 1
DATA_EXIT = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(USAGE_EXIT)


def _add_config_flags(p):
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="config override (repeatable)")
    p.add_argument("--workers", type=int, default=None)


def _build_config(args):
    overrides = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key] = json.loads(value)
    if args.workers is not None:
        overrides["workers"] = args.workers
    return load_config(args.config, overrides)


def _scenario_paths(directory) -> list:
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"scenario directory not found: {directory}")
    paths = sorted(root.glob("*.json"))
    if not paths:
        raise FileNotFoundError(f"no *.json scenarios under {directory}")
    return paths


def _load_scenarios(directory, split=None, partition=None) -> list:
    scenarios = [parse_scenario(p.read_text()) for p in _scenario_paths(directory)]
    if split is not None:
        keep = {sid for sid, part in read_manifest(split).mapping.items()
                if partition is None or part == partition}
        scenarios = [s for s in scenarios if s.scenario_id in keep]
        if not scenarios:
            raise EvalError(f"no scenarios in partition {partition!r}")
    return scenarios


def build_parser() -> _Parser:
    parser = _Parser(prog="scenemine",
                     description="Trajectory criticality mining and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract feature tables from scenarios")
    p.add_argument("scenario_dir")
    p.add_argument("--out", required=True, help="output table directory")
    p.add_argument("--fit-split", default=None, help="split manifest bounding the anomaly fit")
    p.add_argument("--fit-partition", default="train")
    _add_config_flags(p)

    p = sub.add_parser("score", help="score extracted feature tables")
    p.add_argument("--features", required=True, help="feature table directory")
    p.add_argument("--normalizer", choices=("fit", "load"), default="fit")
    p.add_argument("--model", default=None, help="normalizer JSON (saved on fit, read on load)")
    p.add_argument("--fit-split", default=None, help="split manifest bounding the normalizer fit")
    p.add_argument("--fit-partition", default="train")
    p.add_argument("--out", required=True, help="scores JSONL path")
    p.add_argument("--loss-weights", default=None, help="optional loss-weight JSONL path")
    p.add_argument("--scale", type=float, default=1.0, help="loss-weight scale")
    _add_config_flags(p)

    p = sub.add_parser("split", help="build a train/val/test manifest")
    p.add_argument("--scores", required=True, help="scores JSONL from the score command")
    p.add_argument("--method", choices=("uniform", "scoring"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="manifest TSV path")

    p = sub.add_parser("eval", help="evaluate a prediction file against GT futures")
    p.add_argument("--pred", required=True, help="predictions JSONL")
    p.add_argument("--scenarios", required=True, help="scenario directory")
    p.add_argument("--split", default=None, help="manifest restricting the corpus")
    p.add_argument("--partition", default="test")
    p.add_argument("--out", default=None, help="optional JSON report path")
    p.add_argument("--mode-rule", choices=("top_confidence", "best_ade"),
                   default="top_confidence")
    _add_config_flags(p)

    p = sub.add_parser("report", help="corpus reports")
    rsub = p.add_subparsers(dest="report_kind", required=True)
    rc = rsub.add_parser("corr", help="feature correlation matrix")
    rc.add_argument("--features", required=True, help="feature table directory")
    rc.add_argument("--variant", choices=("gt", "fe", "as"), default="gt")
    rc.add_argument("--out", required=True, help="correlation CSV path")
    rh = rsub.add_parser("hist", help="scene score histograms")
    rh.add_argument("--scores", required=True, help="scores JSONL")
    rh.add_argument("--bins", type=int, default=100)
    rh.add_argument("--out", required=True, help="histogram CSV path")

    p = sub.add_parser("synth", help="generate synthetic scenario corpora")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--stop-go-fraction", type=float, default=None)
    p.add_argument("--collision-probability", type=float, default=None)
    p.add_argument("--n-agents-max", type=int, default=None)
    return parser


def _cmd_features(args) -> int:
    cfg = _build_config(args)
    fit_ids = None
    if args.fit_split is not None:
        manifest = read_manifest(args.fit_split)
        fit_ids = [sid for sid, part in manifest.mapping.items()
                   if part == args.fit_partition]
    paths = _scenario_paths(args.scenario_dir)
    features_list, _ = run_features(paths, cfg, args.out, fit_ids=fit_ids)
    print(f"features: {len(features_list)} scenarios -> {args.out}")
    return 0


def _cmd_score(args) -> int:
    cfg = _build_config(args)
    features_list = read_feature_tables(args.features)
    if args.normalizer == "load":
        if args.model is None:
            raise ConfigError("--normalizer load requires --model")
        norm = FeatureNormalizer.load(args.model)
    else:
        fit_ids = None
        if args.fit_split is not None:
            manifest = read_manifest(args.fit_split)
            fit_ids = [sid for sid, part in manifest.mapping.items()
                       if part == args.fit_partition]
        norm = fit_normalizer(features_list, cfg, fit_ids=fit_ids)
        if args.model is not None:
            norm.save(args.model)
    results = score_corpus(features_list, norm, cfg)
    write_score_file(args.out, results)
    if args.loss_weights is not None:
        loss_weight_export(results, args.scale, args.loss_weights)
    print(f"score: {len(results)} scenarios -> {args.out}")
    return 0


def _cmd_split(args) -> int:
    records = read_score_file(args.scores)
    if args.method == "uniform":
        split = uniform_split([r["scenario_id"] for r in records], seed=args.seed)
    else:
        split = scoring_split({r["scenario_id"]: r["value"] for r in records},
                              seed=args.seed)
    write_manifest(split, args.out)
    print(f"split: {split.counts()} -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _build_config(args)
    scenarios = _load_scenarios(args.scenarios, args.split,
                                args.partition if args.split else None)
    preds = load_predictions(args.pred)
    report = evaluate_predictions(preds, scenarios, cfg, mode_rule=args.mode_rule)
    print(report.to_text())
    if args.out is not None:
        Path(args.out).write_text(report.to_json() + "\n")
    return 0


def _cmd_report(args) -> int:
    if args.report_kind == "corr":
        features_list = read_feature_tables(args.features)
        frame = agent_feature_frame(features_list, variant=args.variant)
        names, mat, flags = correlation_matrix(frame)
        write_correlation_csv(names, mat, args.out)
        print(f"report corr: {len(names)} features -> {args.out}"
              + (f" ({len(flags)} degenerate pairs)" if flags else ""))
    else:
        records = read_score_file(args.scores)
        hists = score_histogram(records, bins=args.bins)
        write_histogram_csv(hists, args.out)
        print(histogram_summary(hists))
    return 0


def _cmd_synth(args) -> int:
    kwargs = {}
    if args.stop_go_fraction is not None:
        kwargs["stop_go_fraction"] = args.stop_go_fraction
    if args.collision_probability is not None:
        kwargs["collision_probability"] = args.collision_probability
    if args.n_agents_max is not None:
        kwargs["n_agents_max"] = args.n_agents_max
    paths = write_corpus(args.out, args.kind, args.count, seed=args.seed, **kwargs)
    print(f"synth: {len(paths)} scenarios -> {args.out}")
    return 0


_COMMANDS = {"features": _cmd_features, "score": _cmd_score, "split": _cmd_split,
             "eval": _cmd_eval, "report": _cmd_report, "synth": _cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ParseError, ConfigError, SplitError, EvalError, FileNotFoundError,
            json.JSONDecodeError, ValueError) as exc:
        sys.stderr.write(f"scenemine: {exc}\n")
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
