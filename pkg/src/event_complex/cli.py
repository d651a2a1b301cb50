"""Command line entry point: ``event-complex <command> ...``.

Commands: generate, train, eval, decode, check, ablate, convert-red.
Metrics go to stdout as JSON and, with ``--report``, to a file. The exit
status is 1 when an invariant check fails and 2 on bad input.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import data, harness
from .inference import DEFAULT_MAX_EVENTS
from .model import load_params, save_params
from .relations import ConflictError, count_violations

log = logging.getLogger("event_complex")

# flags shared by every command that builds a TrainConfig, mapped to config keys
_CONFIG_FLAGS = {
    "seed": int, "epochs": int, "batch_size": int, "lr": float,
    "lambda_s": float, "lambda_c": float, "prob_floor": float,
    "max_triples_per_doc": int, "d_h": int, "d_tok": int, "cell_type": str,
    "temporal_keep": float, "subevent_keep": float, "temporal_window": int,
}
_CONFIG_SWITCHES = ("conjunction_hinge", "annotate_reverse", "disjoint_heads", "class_weights",
                    "joint", "task_constraints", "cross_task_constraints", "commonsense")


class InvariantFailure(RuntimeError):
    pass


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="key = value file of TrainConfig fields")
    p.add_argument("--profile", choices=sorted(harness.PROFILES), help="base profile")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config field (repeatable)")
    for name, kind in _CONFIG_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), type=kind, default=None)
    for name in _CONFIG_SWITCHES:
        p.add_argument("--" + name.replace("_", "-"), action=argparse.BooleanOptionalAction, default=None)


def build_config(args: argparse.Namespace) -> harness.TrainConfig:
    """Profile, then config file, then --set overrides, then dedicated flags."""
    cfg = harness.PROFILES[args.profile] if args.profile else harness.TrainConfig()
    if args.config:
        cfg = harness.load_config(args.config, cfg)
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    for name in list(_CONFIG_FLAGS) + list(_CONFIG_SWITCHES):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    return harness.config_from_mapping(overrides, cfg)


def _emit(payload: dict, report: Optional[Path]):
    text = json.dumps(payload, indent=2, sort_keys=True, default=str)
    print(text)
    if report:
        report.write_text(text + "\n")


def _split(records, name: str):
    chosen = [r for r in records if r.split == name]
    if not chosen:
        raise ValueError(f"corpus has no records in split {name!r}")
    return chosen


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_generate(args) -> int:
    spec = data.SyntheticSpec(
        seed=args.seed, docs=args.docs, events=(args.events_min, args.events_max),
        branching=(args.branching_min, args.branching_max), noise=args.noise,
        vocab_size=args.vocab_size, template=args.template, coref_rate=args.coref_rate,
        time_cue_rate=args.time_cue_rate,
    )
    records, _ = data.generate_corpus(spec)
    fractions = [float(x) for x in args.split.split(",")]
    records = data.split_corpus(records, fractions, seed=args.seed)
    data.save_corpus(records, args.out)
    counts = {s: sum(r.split == s for r in records) for s in data.SPLITS}
    _emit({"written": str(args.out), "docs": len(records), "splits": counts}, None)
    return 0


def cmd_train(args) -> int:
    cfg = build_config(args)
    records = data.load_corpus(args.corpus)
    params, history = harness.train(cfg, records)
    save_params(params, args.out)
    payload = {"params": str(args.out), "config": dataclasses.asdict(cfg), "log": history.as_dict()}
    _emit(payload, args.report)
    return 0


def _predict(args, records):
    params = load_params(args.params)
    docs = [r.document for r in records]
    scores = harness.predict_pair_scores(docs, params)
    return harness.decode_scores(scores, docs, args.use_global, args.max_events)


def cmd_eval(args) -> int:
    records = _split(data.load_corpus(args.corpus), args.split)
    preds, stats = _predict(args, records)
    report = harness.evaluate(preds, [r.gold for r in records])
    payload = {"split": args.split, "decoder": "global" if args.use_global else "greedy", **report.as_dict()}
    _emit(payload, args.report)
    if args.use_global and report.violation_rate != 0.0:
        raise InvariantFailure("global decoding produced violating triples")
    return 0


def cmd_decode(args) -> int:
    records = _split(data.load_corpus(args.corpus), args.split)
    preds, stats = _predict(args, records)
    out = [data.CorpusRecord(r.document, g, r.split) for r, g in zip(records, preds)]
    data.save_corpus(out, args.out)
    bad = sum(count_violations(g).violating_triples for g in preds)
    summary = {"decoder": "global" if args.use_global else "greedy", "docs": len(out),
               "violating_triples": bad, "written": str(args.out)}
    if args.stats_json:
        args.stats_json.write_text(json.dumps([s.as_dict() for s in stats], indent=2) + "\n")
        summary["stats"] = str(args.stats_json)
    _emit(summary, None)
    if args.use_global and bad:
        raise InvariantFailure(f"global decoding produced {bad} violating triples")
    return 0


def cmd_check(args) -> int:
    records = data.load_corpus(args.corpus, strict=False)
    problems = harness.check_records(records)
    _emit({"records": len(records), "problems": problems}, args.report)
    if problems:
        raise InvariantFailure(f"{len(problems)} record(s) fail closure or the induction table")
    return 0


def cmd_ablate(args) -> int:
    cfg = build_config(args)
    records = data.load_corpus(args.corpus)
    rows = args.rows.split(",") if args.rows else harness.LADDER
    result = harness.run_ablation(cfg, records, rows, split=args.split)
    print(harness.format_table(result), file=sys.stderr)
    payload = {"rows": [{"name": r.name, "train_seconds": r.train_seconds, **r.report.as_dict()} for r in result]}
    _emit(payload, args.report)
    for r in result:
        if r.config.global_inference and r.report.violation_rate != 0.0:
            raise InvariantFailure(f"row {r.name!r} decoded violating triples")
    return 0


def cmd_convert_red(args) -> int:
    with open(args.input) as fh:
        records = data.convert_red(fh)
    data.save_corpus(records, args.out)
    _emit({"written": str(args.out), "docs": len(records)}, None)
    return 0


# ----------------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------------

def _add_decoder_args(p: argparse.ArgumentParser):
    group = p.add_mutually_exclusive_group()
    group.add_argument("--global", dest="use_global", action="store_true", help="exact consistent decoding")
    group.add_argument("--greedy", dest="use_global", action="store_false", help="per-head argmax (default)")
    p.set_defaults(use_global=False)
    p.add_argument("--max-events", type=int, default=DEFAULT_MAX_EVENTS,
                   help="events per global decoding window")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="event-complex", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--docs", type=int, default=200)
    p.add_argument("--events-min", type=int, default=5)
    p.add_argument("--events-max", type=int, default=9)
    p.add_argument("--branching-min", type=int, default=1)
    p.add_argument("--branching-max", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--vocab-size", type=int, default=24)
    p.add_argument("--template", type=int, default=0)
    p.add_argument("--coref-rate", type=float, default=0.1)
    p.add_argument("--time-cue-rate", type=float, default=0.7)
    p.add_argument("--split", default="0.8,0.1,0.1", help="train,dev,test fractions")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path (.npz)")
    p.add_argument("--report", type=Path)
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--params", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--report", type=Path)
    _add_decoder_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decode", help="write predicted graphs")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--params", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--stats-json", type=Path, help="per-problem search statistics")
    _add_decoder_args(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("check", help="validate gold graphs")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--report", type=Path)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("ablate", help="run the ablation ladder")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--rows", help="comma-separated subset of: " + ", ".join(harness.LADDER))
    p.add_argument("--report", type=Path)
    _add_config_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("convert-red", help="convert a RED tab-separated export")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_convert_red)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvariantFailure as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, ConflictError, data.ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
