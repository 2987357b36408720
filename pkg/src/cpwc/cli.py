"""Command-line interface: ``cpwc <command> [flags]``.

Exit codes: 0 success, 2 usage error, 3 file I/O error, 4 spec/data format
error, 5 computational failure (gradient check failed, training diverged).
Errors are reported on stderr as one JSON line.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .data import CifarFormatError, load_cifar, synth_context_dataset
from .layer import Variant, finite_difference_check, plan_groups, random_check_configs
from .model import build_toy_model
from .netspec import SCHEMA_VERSION, SpecError, builtin_spec, count_network, parse_spec, serialize, surgery
from .train import DEFAULT_DATA, DEFAULT_HYPER, DEFAULT_MODEL, DivergenceError, Hyper, compare_variants, train

RESULTS_ENV = "CPWC_RESULTS_DIR"
EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FORMAT, EXIT_COMPUTE = 0, 2, 3, 4, 5
VARIANTS = [v.value for v in Variant]


class UsageError(Exception):
    pass


class ComputeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--json", action="store_true", help="print machine-readable JSON output")
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")


def _spec_source(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", metavar="FILE", help="network spec JSON document")
    src.add_argument("--builtin", choices=["resnet164", "resnet50"], help="builtin network spec")


def _training_flags(p):
    p.add_argument("--dataset", choices=["synth", "cifar10", "cifar100"], default="synth",
                   help="training data (default: synthetic context dataset)")
    p.add_argument("--data", metavar="DIR", help="directory holding the CIFAR binary files")
    p.add_argument("--subset", type=int, help="train on a seeded random subset of this size")
    p.add_argument("--n-train", type=int, default=DEFAULT_DATA["n_train"],
                   help="synthetic training set size")
    p.add_argument("--n-val", type=int, default=DEFAULT_DATA["n_val"],
                   help="synthetic validation set size")
    p.add_argument("--classes", type=int, default=DEFAULT_DATA["classes"],
                   help="synthetic dataset class count")
    p.add_argument("--size", type=int, default=DEFAULT_DATA["size"],
                   help="synthetic image side length")
    p.add_argument("--epochs", type=int, default=DEFAULT_HYPER.epochs, help="training epochs")
    p.add_argument("--lr", type=float, default=DEFAULT_HYPER.lr, help="initial learning rate")
    p.add_argument("--lr-decay", type=float, default=DEFAULT_HYPER.lr_decay,
                   help="learning-rate multiplier applied at each decay step")
    p.add_argument("--decay-every", type=int, default=DEFAULT_HYPER.decay_every,
                   help="epochs between learning-rate decay steps")
    p.add_argument("--momentum", type=float, default=DEFAULT_HYPER.momentum, help="SGD momentum")
    p.add_argument("--weight-decay", type=float, default=DEFAULT_HYPER.weight_decay,
                   help="L2 weight decay")
    p.add_argument("--batch-size", type=int, default=DEFAULT_HYPER.batch_size, help="batch size")
    p.add_argument("--channels", type=int, default=DEFAULT_MODEL["channels"],
                   help="toy model base width")
    p.add_argument("--blocks", type=int, default=DEFAULT_MODEL["blocks"],
                   help="number of CPWC blocks (2-4)")
    p.add_argument("--augment", action="store_true", help="random crop and flip (CIFAR)")
    p.add_argument("--results", metavar="DIR",
                   help=f"write reports into DIR (default: ${RESULTS_ENV} if set)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cpwc", description="Contextual pointwise convolution tools.")
    parser.add_argument("--version", action="version", version=f"cpwc {__version__}",
                        help="show the version and exit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("plan", help="show the stage-1 channel grouping for C -> Z")
    p.add_argument("--in", dest="cin", type=int, required=True, help="input channels C")
    p.add_argument("--out", dest="cout", type=int, required=True, help="output channels Z")
    _common(p)

    p = sub.add_parser("count", help="parameter/MAC report for a network spec")
    _spec_source(p)
    p.add_argument("--cpwc", choices=VARIANTS, help="apply CPWC surgery with this variant first")
    p.add_argument("--per-node", action="store_true", help="include the per-node table in text output")
    _common(p)

    p = sub.add_parser("surgery", help="replace every 1x1 conv of a spec with CPWC")
    _spec_source(p)
    p.add_argument("--cpwc", choices=VARIANTS, required=True, help="CPWC variant to insert")
    p.add_argument("--emit", metavar="FILE", required=True, help="write the modified spec here")
    _common(p)

    p = sub.add_parser("check-grad", help="finite-difference check of the CPWC backward pass")
    p.add_argument("--trials", type=int, default=50, help="number of random configurations")
    p.add_argument("--tol", type=float, default=1e-6, help="relative error tolerance")
    p.add_argument("--eps", type=float, default=1e-3,
                   help="finite-difference step (the loss is quadratic per coordinate, "
                        "so a wide step only reduces rounding error)")
    _common(p)

    p = sub.add_parser("train", help="train one toy model")
    p.add_argument("--variant", choices=VARIANTS, default="full", help="CPWC variant")
    _training_flags(p)
    _common(p)

    p = sub.add_parser("compare", help="train every variant over several seeds")
    p.add_argument("--variants", default="pwc-only,no-stage2,full",
                   help="comma-separated variants, in table order")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    _training_flags(p)
    _common(p)
    return parser


def _emit(args, command, result, text):
    if args.json:
        doc = {"schema_version": SCHEMA_VERSION, "command": command, "result": result}
        sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(text)


def _load_spec(args):
    if args.builtin:
        return builtin_spec(args.builtin)
    return parse_spec(Path(args.spec).read_text())


def cmd_plan(args):
    plan = plan_groups(args.cin, args.cout)
    result = {"in_channels": plan.in_channels, "out_channels": plan.out_channels,
              "case": plan.case, "sizes": plan.sizes, "groups": [list(g) for g in plan.groups],
              "share_counts": plan.share_counts()}
    lines = [plan.describe()]
    lines.append("r_i: " + " ".join(map(str, plan.sizes)))
    if plan.case == 3:
        lines.append("shares: " + " ".join(map(str, plan.share_counts())))
    _emit(args, "plan", result, "\n".join(lines) + "\n")


def cmd_count(args):
    spec = _load_spec(args)
    base = None
    if args.cpwc:
        base, spec = spec, surgery(spec, args.cpwc)
    report = count_network(spec, baseline=base)
    _emit(args, "count", report.to_dict(), report.to_text(per_node=args.per_node))


def cmd_surgery(args):
    spec = surgery(_load_spec(args), args.cpwc)
    Path(args.emit).write_text(serialize(spec))
    report = count_network(spec, baseline=_load_spec(args))
    _emit(args, "surgery", {"emitted": args.emit, **report.to_dict(per_node=False)},
          f"wrote {args.emit}\n" + report.to_text())


def cmd_check_grad(args):
    trials = []
    for t, p, x in random_check_configs(args.trials, args.seed):
        rep = finite_difference_check(p, x, epsilon=args.eps, tolerance=args.tol, seed=args.seed)
        trials.append({"trial": t, "in_channels": p.plan.in_channels,
                       "out_channels": p.plan.out_channels, "case": p.plan.case,
                       "stride": p.stride, "variant": p.variant.value, **rep.to_dict()})
    failed = [r for r in trials if not r["passed"]]
    worst = max(max(r["max_rel_error"].values()) for r in trials) if trials else 0.0
    result = {"trials": trials, "failed": len(failed), "worst_rel_error": worst,
              "tolerance": args.tol}
    text = (f"{len(trials)} configurations, {len(failed)} failed, "
            f"worst relative error {worst:.3e} (tolerance {args.tol:g})\n")
    _emit(args, "check-grad", result, text)
    if failed:
        raise ComputeFailure(f"{len(failed)} of {len(trials)} gradient checks failed")


def _datasets(args):
    if args.dataset == "synth":
        tr = synth_context_dataset(args.seed, args.n_train, args.classes, args.size)
        va = synth_context_dataset(args.seed + 10_000, args.n_val, args.classes, args.size,
                                   split="val")
    else:
        if not args.data:
            raise UsageError(f"--data is required for --dataset {args.dataset}")
        tr, va = load_cifar(args.data, args.dataset)
    if args.subset:
        tr = tr.subset(args.subset, seed=args.seed)
    return tr, va


def _hyper(args, seed):
    return Hyper(lr=args.lr, lr_decay=args.lr_decay, decay_every=args.decay_every,
                 momentum=args.momentum, weight_decay=args.weight_decay,
                 batch_size=args.batch_size, epochs=args.epochs, seed=seed,
                 augment=args.augment)


def _results_dir(args):
    d = args.results or os.environ.get(RESULTS_ENV)
    if d:
        Path(d).mkdir(parents=True, exist_ok=True)
    return d


def _write(d, stem, doc_json, text, meta):
    Path(d, f"{stem}.json").write_text(doc_json)
    Path(d, f"{stem}.txt").write_text(text)
    Path(d, f"{stem}.meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def cmd_train(args):
    tr, va = _datasets(args)
    model = build_toy_model(args.variant, args.channels, tr.classes, args.blocks,
                            in_channels=tr.images.shape[1], seed=args.seed)
    report = train(model, tr, _hyper(args, args.seed), va,
                   config={"dataset": args.dataset, "n_train": len(tr), "n_val": len(va)})
    lines = [f"{'epoch':>5} {'lr':>8} {'loss':>8} {'acc':>7}"]
    lines += [f"{e.epoch:>5} {e.lr:>8.4g} {e.loss:>8.4f} {100 * e.accuracy:>6.2f}%"
              for e in report.epochs]
    lines.append(f"variant {args.variant}: params {report.params:,}, "
                 f"validation accuracy {100 * report.val_accuracy:.2f}%")
    text = "\n".join(lines) + "\n"
    d = _results_dir(args)
    if d:
        _write(d, f"train-{args.variant}-seed{args.seed}", report.to_json(), text,
               {"wall_time": report.wall_time})
    _emit(args, "train", report.to_dict(), text)


def cmd_compare(args):
    try:
        variants = [Variant.parse(v) for v in args.variants.split(",") if v]
        seeds = [int(s) for s in args.seeds.split(",") if s]
    except ValueError as e:
        raise UsageError(str(e)) from None
    tr, va = _datasets(args)
    table = compare_variants(tr, variants, _hyper(args, args.seed), seeds, va,
                             {"channels": args.channels, "blocks": args.blocks})
    d = _results_dir(args)
    if d:
        _write(d, "compare", table.to_json(), table.to_text(), {})
    _emit(args, "compare", table.to_dict(), table.to_text())


COMMANDS = {"plan": cmd_plan, "count": cmd_count, "surgery": cmd_surgery,
            "check-grad": cmd_check_grad, "train": cmd_train, "compare": cmd_compare}


def _fail(code, kind, message):
    sys.stderr.write(json.dumps({"error": kind, "exit_code": code, "message": str(message)}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as e:
        return _fail(EXIT_USAGE, "usage", e)
    except (SpecError, CifarFormatError, json.JSONDecodeError) as e:
        return _fail(EXIT_FORMAT, "format", e)
    except OSError as e:
        return _fail(EXIT_IO, "io", e)
    except (ComputeFailure, DivergenceError) as e:
        return _fail(EXIT_COMPUTE, "compute", e)
    except ValueError as e:
        return _fail(EXIT_USAGE, "usage", e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
