"""Run orchestration: configs, result bundles, tables."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import gdtrain
from .evaluation import ScoreReport, delta_pct, dh_score, full_report
from .golden import golden_text, load_golden
from .grammar import Corpus, optimal_score, sample_corpus
from .mdl import RegularizerSpec, encode_network, l1_term, l2_term
from .network import Network, load_network, save_network, verify_distribution
from .search import GaConfig, evolve_archipelago
from .tasks import TASK_NAMES, get_task

REGIMES = ("ga_architecture", "ga_weights_only", "gradient_descent")
GOLDEN_TOL = 1e-6
# differentiable goldens only approximate the true distribution
DIFF_GOLDEN_TOL = 1e-2

REPORT_COLUMNS = ("task", "regime", "regularizer", "golden", "h_kind") + ScoreReport.COLUMNS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "anbn"
    regime: str = "ga_architecture"
    reg: str = "mdl"
    lam: float = 1.0
    h_limit_factor: float = 3.0
    train_size: int = 500
    corpus_seed: int = 100
    seed: int = 100
    islands: int = 4
    population: int = 50
    generations: int = 2000
    tournament_size: int = 2
    elite_ratio: float = 0.001
    mutation_prob: float = 1.0
    crossover_prob: float = 0.0
    migration_ratio: float = 0.01
    migration_interval: int = 500
    max_units: int = 1024
    golden_copies: int = 1
    checkpoint_every: int = 0
    workers: int = 1
    learning_rate: float = 1e-4
    epochs: int = 1000
    output_dir: str = ""

    def __post_init__(self):
        if self.task not in TASK_NAMES:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}")
        if self.regime == "gradient_descent":
            if self.reg not in ("none", "l1", "l2"):
                raise ConfigError(f"gradient descent cannot optimise {self.reg!r}")
            if self.task not in ("anbn", "anbncn", "dyck1"):
                raise ConfigError(f"no differentiable golden network for {self.task!r}")
        else:
            if self.reg == "none":
                raise ConfigError("genetic search without a regulariser needs none_with_h_limit")
            if self.reg not in ("mdl", "l1", "l2", "none_with_h_limit"):
                raise ConfigError(f"unknown regularizer {self.reg!r}")

    @property
    def bundle_dir(self) -> Path:
        return Path(self.output_dir or f"runs/{self.task}_{self.regime}_{self.reg}")

    @property
    def golden_name(self) -> str:
        return f"{self.task}_diff" if self.regime == "gradient_descent" else self.task

    def regularizer(self, golden_h: int | None = None) -> RegularizerSpec:
        if self.reg == "none_with_h_limit":
            if golden_h is None:
                raise ConfigError("h limit depends on the golden network's |H|")
            return RegularizerSpec(self.reg, h_limit=self.h_limit_factor * golden_h)
        return RegularizerSpec.parse(self.reg, lam=self.lam)

    def ga_config(self, golden_h: int | None = None) -> GaConfig:
        task = get_task(self.task)
        return GaConfig(
            islands=self.islands,
            population=self.population,
            generations=self.generations,
            tournament_size=self.tournament_size,
            elite_ratio=self.elite_ratio,
            mutation_prob=self.mutation_prob,
            crossover_prob=self.crossover_prob,
            migration_ratio=self.migration_ratio,
            migration_interval=self.migration_interval,
            max_units=self.max_units,
            activations=task.activations,
            unit_kinds=task.unit_kinds,
            mode="weights_only" if self.regime == "ga_weights_only" else "architecture",
            reg=self.regularizer(golden_h),
            seed=self.seed,
            golden_copies=self.golden_copies,
            checkpoint_every=self.checkpoint_every,
        )

    def gd_config(self) -> gdtrain.GdConfig:
        return gdtrain.GdConfig(self.learning_rate, self.epochs, self.regularizer())

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def preset_text(name: str) -> str:
    try:
        return resources.files("mdlnets").joinpath(f"data/presets/{name}.cfg").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"unknown preset {name!r}") from None


def build_config(
    preset: str | None = None, files: Sequence[str] = (), overrides: Mapping[str, str] | None = None
) -> ExperimentConfig:
    """Layer preset, config files and key=value overrides (later wins)."""
    raw: dict[str, str] = {}
    if preset:
        raw.update(parse_config_text(preset_text(preset)))
    for f in files:
        raw.update(parse_config_text(Path(f).read_text(encoding="utf-8")))
    raw.update(overrides or {})
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    kw = {}
    for key, value in raw.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        t = types[key]
        try:
            kw[key] = int(value) if t == "int" else float(value) if t == "float" else value
        except ValueError:
            raise ConfigError(f"bad value for {key}: {value!r}") from None
    return ExperimentConfig(**kw)


# ---------------------------------------------------------------------------
# Runs


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def report_row(task: str, regime: str, reg: str, golden: bool, h_kind: str, rep: ScoreReport) -> dict[str, str]:
    row = {"task": task, "regime": regime, "regularizer": reg, "golden": str(int(golden)), "h_kind": h_kind}
    row.update(rep.as_row())
    return row


def _write_rows(path: Path, rows: list[dict[str, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(REPORT_COLUMNS), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_rows(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _gd_report(net: Network, train: Corpus, test: Corpus) -> ScoreReport:
    dh_tr, sm_tr = dh_score(net, train)
    dh_te, sm_te = dh_score(net, test)
    o_tr, o_te = optimal_score(train), optimal_score(test)
    return ScoreReport(
        gdtrain.approx_h_bits(net), l1_term(net), l2_term(net), dh_tr, dh_te, o_tr, o_te,
        delta_pct(dh_tr, o_tr), delta_pct(dh_te, o_te), sm_tr, sm_te,
    )


def run(config: ExperimentConfig, *, resume: bool = False, on_evaluate=None) -> Path:
    """Execute one experiment and write its bundle; returns the bundle directory.

    Bundle contents: ``config.txt``, ``manifest.json``, ``train.txt``,
    ``golden.net``, ``final.net``, ``report.csv`` (golden row then final
    row) and ``trace.csv``.
    """
    task = get_task(config.task)
    out = config.bundle_dir
    out.mkdir(parents=True, exist_ok=True)
    golden = load_golden(config.golden_name)
    gd = config.regime == "gradient_descent"
    check = verify_distribution(golden, task.spec, task.verify_len, DIFF_GOLDEN_TOL if gd else GOLDEN_TOL)
    if not check.passed:
        raise RuntimeError(f"golden network {config.golden_name!r} failed verification ({check}); the file is corrupt")

    train = sample_corpus(task.spec, config.train_size, config.corpus_seed)
    test = task.test_set(train)
    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    (out / "train.txt").write_text(train.to_text(), encoding="utf-8")
    save_network(golden, out / "golden.net")
    manifest = {
        "config": {f.name: getattr(config, f.name) for f in fields(config)},
        "inputs": {
            "golden": _sha256(golden_text(config.golden_name)),
            "train_corpus": _sha256(train.to_text()),
            "config": _sha256(config.to_text()),
        },
        "golden_verification": {"max_deviation": check.max_deviation, "prefixes": check.prefixes_checked},
        "test_strings": len(test),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    if gd:
        result = gdtrain.train(golden, train, config.gd_config())
        final = result.network
        g_rep, f_rep = _gd_report(golden, train, test), _gd_report(final, train, test)
        h_kind = "approx"
        with open(out / "trace.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_ce_bits", "reg_term", "loss"])
            for e, ce, rv, loss in result.trace:
                w.writerow([e, repr(ce), repr(rv), repr(loss)])
    else:
        ga = config.ga_config(encode_network(golden, task.activations))
        result = evolve_archipelago(
            ga, train, task.alphabet, [golden],
            workers=config.workers,
            on_evaluate=on_evaluate,
            checkpoint_dir=out / "checkpoints" if config.checkpoint_every or resume else None,
            progress_csv=out / "trace.csv",
            resume=resume,
        )
        final = result.best
        g_rep = full_report(golden, train, test, task.activations)
        f_rep = full_report(final, train, test, task.activations)
        h_kind = "exact"
    save_network(final, out / "final.net")
    _write_rows(out / "report.csv", [
        report_row(config.task, config.regime, config.reg, True, h_kind, g_rep),
        report_row(config.task, config.regime, config.reg, False, h_kind, f_rep),
    ])
    return out


def load_bundle_config(bundle) -> ExperimentConfig:
    raw = parse_config_text((Path(bundle) / "config.txt").read_text(encoding="utf-8"))
    raw["output_dir"] = str(bundle)
    return build_config(overrides=raw)


def resume(bundle) -> Path:
    """Continue a genetic-search bundle from its last checkpoint."""
    cfg = load_bundle_config(bundle)
    if cfg.regime == "gradient_descent":
        raise ConfigError("only genetic-search runs can be resumed")
    if not (Path(bundle) / "checkpoints").is_dir():
        raise ConfigError(f"{bundle} has no checkpoints")
    return run(cfg, resume=True)


def rescore_bundle(bundle) -> tuple[float, float]:
    """Reload ``final.net`` and return (recorded test |D:H|, recomputed test |D:H|)."""
    bundle = Path(bundle)
    cfg = load_bundle_config(bundle)
    task = get_task(cfg.task)
    train = Corpus.from_text((bundle / "train.txt").read_text(encoding="utf-8"))
    net = load_network(bundle / "final.net")
    rows = [r for r in read_rows(bundle / "report.csv") if r["golden"] == "0"]
    return float(rows[0]["dh_test"]), dh_score(net, task.test_set(train))[0]


# ---------------------------------------------------------------------------
# Tables


def _fmt(x: float, places: int) -> str:
    s = f"{x:.{places}f}"
    return "0." + "0" * places if s.startswith("-") and float(s) == 0 else s


TABLE_HEADER = ("Task", "Regularizer", "|H|", "L1", "L2", "Train |D:H|", "Test |D:H|", "Δ train %", "Δ test %")


def table_rows(bundles: Iterable) -> list[dict[str, str]]:
    """Report rows from every bundle; golden rows are kept once per task and regime."""
    rows, seen = [], set()
    for b in bundles:
        for r in read_rows(Path(b) / "report.csv"):
            if r["golden"] == "1":
                key = (r["task"], r["regime"])
                if key in seen:
                    continue
                seen.add(key)
            rows.append(r)
    order = {t: i for i, t in enumerate(TASK_NAMES)}
    rows.sort(key=lambda r: (order.get(r["task"], 99), r["regime"], r["golden"] != "1", r["regularizer"]))
    return rows


def make_table(bundles: Iterable) -> tuple[str, str]:
    """(CSV, aligned text) tables; golden rows parenthesised, smoothed cells starred."""
    rows = table_rows(bundles)
    if not rows:
        raise ValueError("no bundles to tabulate")
    cells = []
    for r in rows:
        g = r["golden"] == "1"
        wrap = (lambda s: f"({s})") if g else (lambda s: s)
        star_tr = "*" if r["smoothed_train"] == "1" else ""
        star_te = "*" if r["smoothed_test"] == "1" else ""
        h = r["h_bits"] if r["h_kind"] == "exact" else f"≈{r['h_bits']}"
        cells.append((
            r["task"],
            "Golden" if g else r["regularizer"],
            wrap(h),
            wrap(_fmt(float(r["l1"]), 2)),
            wrap(_fmt(float(r["l2"]), 2)),
            wrap(_fmt(float(r["dh_train"]), 2)) + star_tr,
            wrap(_fmt(float(r["dh_test"]), 2)) + star_te,
            wrap(_fmt(float(r["delta_train_pct"]), 1)),
            wrap(_fmt(float(r["delta_test_pct"]), 1)),
        ))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    w.writerows(cells)
    widths = [max(len(str(c[i])) for c in [TABLE_HEADER] + cells) for i in range(len(TABLE_HEADER))]
    lines = ["  ".join(str(c[i]).rjust(widths[i]) if i >= 2 else str(c[i]).ljust(widths[i]) for i in range(len(c))).rstrip() for c in [TABLE_HEADER] + cells]
    lines.insert(1, "  ".join("-" * wd for wd in widths))
    return buf.getvalue(), "\n".join(lines) + "\n"
