"""Command-line entry point: ``jitlab <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime failure (or a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from jitlab.data import ForgetSpec, from_csv, split_forget, to_csv
from jitlab.errors import JitError
from jitlab.evaluation import accuracy, mia_score, output_entropy
from jitlab.experiment.benchmark import build_datasets, model_spec_for, run_benchmark
from jitlab.experiment.config import ExperimentConfig, MethodConfig, load_config
from jitlab.experiment.reports import (load_entropy, load_geometry, load_sigmoid, load_sweep, load_table,
                                       render_reports, save_json)
from jitlab.experiment.seeds import derive_seed
from jitlab.experiment.studies import (run_entropy_study, run_geometry_study, run_sensitivity_sweep,
                                       run_sigmoid_study)
from jitlab.gradsuite import run_gradcheck_suite
from jitlab.models import init_model, load_model, save_model, train_sgd
from jitlab.unlearn import UnlearnConfig, jit_unlearn

log = logging.getLogger("jitlab")

FORGET_HELP = ("forget set: full_class:C | sub_class:S | random:COUNT[:SEED] | explicit:i,j,... "
               "(e.g. full_class:0, random:100:7)")
MODEL_FILE = "model.jitm"


class UsageError(Exception):
    """Raised instead of exiting so main() can map parse failures to exit code 1."""


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def forget_spec(text: str) -> ForgetSpec:
    try:
        return ForgetSpec.parse(text)
    except JitError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _jit_flags(p: argparse.ArgumentParser, required: bool = False) -> None:
    p.add_argument("--eta", type=float, required=required, help="JiT learning rate")
    p.add_argument("--sigma", type=float, required=required, help="JiT perturbation standard deviation")
    p.add_argument("--n-perturb", type=int, help="perturbations per forget sample (N)")
    p.add_argument("--epochs", type=int, help="passes over the forget set")


def build_parser() -> Parser:
    parser = Parser(prog="jitlab", description="Zero-shot unlearning experiments: train, unlearn, evaluate, benchmark.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)

    p = sub.add_parser("train", help="train a baseline model from a config")
    p.add_argument("--config", help="experiment config (YAML)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--forget", type=forget_spec, help=FORGET_HELP + "; also writes forget.csv and retain.csv")

    p = sub.add_parser("unlearn", help="apply JiT given only a model file and the forget samples")
    p.add_argument("--model", required=True, help="serialized model")
    p.add_argument("--forget-data", required=True, help="CSV of samples to forget")
    p.add_argument("--out", required=True, help="path for the unlearned model")
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument("--output", choices=("softmax", "logits"), default="softmax", help="model output JiT smooths")
    _jit_flags(p, required=True)

    p = sub.add_parser("eval", help="accuracy, entropy and MIA of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="test CSV (also the MIA non-member pool)")
    p.add_argument("--forget-data", help="forget CSV")
    p.add_argument("--members", help="CSV of training members for the MIA attack")
    p.add_argument("--seed", type=int, default=0, help="attack seed")
    p.add_argument("--out", help="write the JSON report here instead of stdout")

    p = sub.add_parser("bench", help="seeded benchmark over methods and forget targets")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="base seed (repeat r uses seed + r)")
    p.add_argument("--repeats", type=int)
    p.add_argument("--forget", type=forget_spec, action="append", help=FORGET_HELP + "; repeatable")
    _jit_flags(p)

    for name, text in (("geometry", "2-D decision boundary study"), ("sigmoid", "1-D sigmoid study"),
                       ("entropy", "CIFAR-10 forget-set entropy study"), ("sweep", "(eta, sigma) sensitivity grid")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None, help="base seed")
        if name != "sweep":
            p.add_argument("--repeats", type=int, help="number of seeds")
        if name == "entropy":
            p.add_argument("--cifar-dir", help="CIFAR-10 binary directory (default: $JIT_CIFAR10_DIR)")
        if name == "sweep":
            p.add_argument("--n-perturb", type=int)
            p.add_argument("--epochs", type=int)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("render", help="re-render CSV and SVG reports from saved JSON results")
    p.add_argument("--in", dest="src", required=True, help="directory holding *.json results")
    p.add_argument("--out", help="output directory (default: the input directory)")
    return parser


def _config(path: str | None) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _config(args.config)
    out = _out_dir(args.out)
    train, test = build_datasets(cfg.dataset, args.seed)
    model = init_model(model_spec_for(cfg, train, args.seed))
    losses = train_sgd(model, train, cfg.train.to_train_config(derive_seed(args.seed, "shuffle")))
    save_model(model, out / MODEL_FILE)
    to_csv(train, out / "train.csv")
    to_csv(test, out / "test.csv")
    if args.forget is not None:
        part = split_forget(train, args.forget)
        to_csv(part.forget, out / "forget.csv")
        to_csv(part.retain, out / "retain.csv")
    print(json.dumps({"model": str(out / MODEL_FILE), "final_loss": losses[-1] if losses else None,
                      "train_accuracy": accuracy(model, train), "test_accuracy": accuracy(model, test)}))
    return 0


def unlearn_config(args) -> UnlearnConfig:
    """JiT settings from the unlearn flags; unset flags keep the UnlearnConfig defaults."""
    base = UnlearnConfig(args.eta, args.sigma, seed=args.seed, output=args.output)
    changes = {k: v for k, v in (("n_perturb", args.n_perturb), ("epochs", args.epochs)) if v is not None}
    cfg = replace(base, **changes)
    cfg.validate()
    return cfg


def cmd_unlearn(args) -> int:
    model = load_model(args.model)
    forget = from_csv(args.forget_data, n_classes=model.spec.n_classes)
    result = jit_unlearn(model, forget.inputs, unlearn_config(args))
    save_model(result.model, args.out)
    print(json.dumps({"model": args.out, "mean_loss": float(np.mean(result.losses)), **result.provenance},
                     sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    k = model.spec.n_classes
    test = from_csv(args.data, n_classes=k)
    report: dict = {"test_accuracy": accuracy(model, test)}
    if args.forget_data:
        forget = from_csv(args.forget_data, n_classes=k)
        ent = output_entropy(model, forget)
        report.update(forget_accuracy=accuracy(model, forget), entropy_mean=float(ent.mean()),
                      entropy_median=float(np.median(ent)))
        if args.members:
            mia = mia_score(model, forget, from_csv(args.members, n_classes=k), test, args.seed)
            report.update(mia=mia.score, mia_degenerate=mia.degenerate)
    text = json.dumps(report, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def _apply_jit_overrides(methods, args) -> tuple:
    overrides = {"eta": args.eta, "sigma": args.sigma, "n_perturb": args.n_perturb, "epochs": args.epochs}
    if all(v is None for v in overrides.values()):
        return methods
    out = tuple(m.with_overrides(**overrides) if m.name == "jit" else m for m in methods)
    if not any(m.name == "jit" for m in methods):
        out += (MethodConfig.parse({"name": "jit", **{k: v for k, v in overrides.items() if v is not None}}, "--eta"),)
    return out


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    changes: dict = {"methods": _apply_jit_overrides(cfg.methods, args)}
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.repeats is not None:
        changes["repeats"] = args.repeats
    if args.forget:
        changes["forget"] = tuple(s.describe() for s in args.forget)
    cfg = cfg.replace(**changes)
    cfg.validate()
    out = _out_dir(args.out)
    table = run_benchmark(cfg)
    save_json(table, out / "results.json")
    render_reports(out, table=table)
    for cell in table.errors:
        print(f"error: {cell.method} on {cell.forget_target}, repeat {cell.repeat}: {cell.error}", file=sys.stderr)
    print(str(out / "results.csv"))
    return 0


def _seed(args, cfg: ExperimentConfig) -> int:
    return cfg.base_seed if args.seed is None else args.seed


def cmd_geometry(args) -> int:
    cfg = _config(args.config)
    study = cfg.geometry if args.repeats is None else replace(cfg.geometry, seeds=args.repeats)
    out = _out_dir(args.out)
    result = run_geometry_study(study, _seed(args, cfg))
    save_json(result, out / "geometry.json")
    render_reports(out, geometry=result)
    print(str(out / "geometry.csv"))
    return 0


def cmd_sigmoid(args) -> int:
    cfg = _config(args.config)
    study = cfg.sigmoid if args.repeats is None else replace(cfg.sigmoid, seeds=args.repeats)
    out = _out_dir(args.out)
    result = run_sigmoid_study(study, _seed(args, cfg))
    save_json(result, out / "sigmoid.json")
    render_reports(out, sigmoid=result)
    print(str(out / "sigmoid.csv"))
    return 0


def cmd_entropy(args) -> int:
    cfg = _config(args.config)
    study = cfg.entropy
    if args.repeats is not None:
        study = replace(study, seeds=args.repeats)
    if args.cifar_dir:
        study = replace(study, path=args.cifar_dir)
    out = _out_dir(args.out)
    result = run_entropy_study(study, _seed(args, cfg))
    save_json(result, out / "entropy.json")
    render_reports(out, entropy=result)
    print(str(out / "entropy.csv"))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args.config)
    sweep = cfg.sweep
    if args.n_perturb is not None:
        sweep = replace(sweep, n_perturb=args.n_perturb)
    if args.epochs is not None:
        sweep = replace(sweep, epochs=args.epochs)
    out = _out_dir(args.out)
    result = run_sensitivity_sweep(cfg.replace(sweep=sweep), args.seed)
    save_json(result, out / "sweep.json")
    render_reports(out, sweep=result)
    for cell in result.cells:
        if cell.failed:
            print(f"error: sweep cell eta={cell.eta} sigma={cell.sigma}: {cell.error or 'non-finite metric'}",
                  file=sys.stderr)
    print(str(out / "sweep.csv"))
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradcheck_suite(args.trials, args.seed)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.op:<14} trials={r.trials:<4} max_rel_err={r.max_error:.3e} tol={r.tolerance:.0e} {status}")
    failed = [r.op for r in results if not r.passed]
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return 2
    return 0


LOADERS = {"results.json": ("table", load_table), "geometry.json": ("geometry", load_geometry),
           "entropy.json": ("entropy", load_entropy), "sigmoid.json": ("sigmoid", load_sigmoid),
           "sweep.json": ("sweep", load_sweep)}


def cmd_render(args) -> int:
    src = Path(args.src)
    if not src.is_dir():
        raise FileNotFoundError(f"{src} is not a directory")
    found = {key: loader(src / name) for name, (key, loader) in LOADERS.items() if (src / name).exists()}
    if not found:
        raise FileNotFoundError(f"no saved results ({', '.join(LOADERS)}) in {src}")
    for path in render_reports(args.out or src, **found):
        print(str(path))
    return 0


COMMANDS = {"train": cmd_train, "unlearn": cmd_unlearn, "eval": cmd_eval, "bench": cmd_bench,
            "geometry": cmd_geometry, "sigmoid": cmd_sigmoid, "entropy": cmd_entropy, "sweep": cmd_sweep,
            "gradcheck": cmd_gradcheck, "render": cmd_render}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 2
        log.debug("command failed", exc_info=True)
        print(f"jitlab {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
