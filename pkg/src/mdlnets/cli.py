"""Command-line entry point: ``mdlnets <verb> ...``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiment
from .golden import GOLDEN_NAMES, DIFF_GOLDEN_NAMES, load_golden
from .grammar import sample_corpus
from .network import load_network, verify_distribution
from .tasks import TASK_NAMES, get_task


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for p in pairs:
        if "=" not in p:
            raise SystemExit(f"override {p!r} is not key=value")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_gen_corpus(args) -> int:
    task = get_task(args.task)
    if args.test:
        corpus = task.test_set(sample_corpus(task.spec, args.size, args.seed))
    else:
        corpus = sample_corpus(task.spec, args.size, args.seed)
    text = corpus.to_text()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {len(corpus)} strings to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_verify_golden(args) -> int:
    names = args.names or list(GOLDEN_NAMES)
    unknown = [n for n in names if n not in GOLDEN_NAMES + DIFF_GOLDEN_NAMES]
    if unknown:
        raise SystemExit(f"unknown golden network(s): {', '.join(unknown)}")
    if args.file and len(args.names) != 1:
        raise SystemExit("--file needs exactly one task name to check against")
    status = 0
    for name in names:
        base = name.removesuffix("_diff")
        task = get_task(base)
        net = load_network(args.file) if args.file else load_golden(name)
        tol = experiment.DIFF_GOLDEN_TOL if name in DIFF_GOLDEN_NAMES else args.tol
        rep = verify_distribution(net, task.spec, task.verify_len, tol)
        flag = "ok" if rep.passed else "FAILED"
        print(f"{name:14s} {flag:6s} max_dev={rep.max_deviation:.3g} prefixes={rep.prefixes_checked}")
        if not rep.passed:
            print(f"  worst prefix: {' '.join(rep.worst_prefix) or '(empty)'}")
            status = 1
    return status


def _config(args) -> experiment.ExperimentConfig:
    try:
        return experiment.build_config(args.preset, args.config or (), _overrides(args.set or []))
    except experiment.ConfigError as e:
        raise SystemExit(f"config error: {e}")


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.dry_run:
        sys.stdout.write(cfg.to_text())
        return 0
    out = experiment.run(cfg)
    rows = experiment.read_rows(out / "report.csv")
    _, text = experiment.make_table([out])
    print(text, end="")
    print(f"bundle: {out} ({len(rows)} rows)")
    return 0


def cmd_resume(args) -> int:
    out = experiment.resume(args.bundle)
    print(f"bundle: {out}")
    return 0


def cmd_table(args) -> int:
    csv_text, text = experiment.make_table(args.bundles)
    if args.csv:
        Path(args.csv).write_text(csv_text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_plot(args) -> int:
    from .plotting import make_scatter

    path = make_scatter(args.bundles, args.out)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdlnets", description="Evolve and train networks on formal-language tasks.")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen-corpus", help="sample a training corpus or enumerate a test set")
    g.add_argument("task", choices=TASK_NAMES)
    g.add_argument("--size", type=int, default=500)
    g.add_argument("--seed", type=int, default=100)
    g.add_argument("--test", action="store_true", help="emit the exhaustive test set instead")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_corpus)

    v = sub.add_parser("verify-golden", help="check golden networks against the true distribution")
    v.add_argument("names", nargs="*", metavar="NAME", help="golden names (default: the six exact goldens)")
    v.add_argument("--file", help="verify this network file instead of the shipped one")
    v.add_argument("--tol", type=float, default=experiment.GOLDEN_TOL)
    v.set_defaults(func=cmd_verify_golden)

    r = sub.add_parser("run", help="run one experiment and write a result bundle")
    r.add_argument("--preset", choices=("desk", "paper"))
    r.add_argument("--config", action="append", help="key = value file (repeatable)")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    r.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    r.set_defaults(func=cmd_run)

    rs = sub.add_parser("resume", help="continue a genetic-search bundle from its checkpoints")
    rs.add_argument("bundle")
    rs.set_defaults(func=cmd_resume)

    t = sub.add_parser("table", help="tabulate report rows from bundles")
    t.add_argument("bundles", nargs="+")
    t.add_argument("--csv")
    t.set_defaults(func=cmd_table)

    pl = sub.add_parser("plot", help="train/test deviation scatter (SVG)")
    pl.add_argument("bundles", nargs="+")
    pl.add_argument("--out", default="scatter.svg")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
