"""Command-line surface: declarative configs in, CSVs and SVG plots out.

Commands: beta-sweep, operators, fixed-point, gen-corpus, icda, verify.
All randomness derives from one master seed; --threads only parallelizes
independent units (grid cells, repetitions), so outputs are byte-identical
for any thread count.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import corpus, driver, operators, rationale, svgplot
from ._rng import derive
from .probmodel import ThetaSpec, mutual_information_symmetric

_TAG_R_CURVE = 11
_TAG_PSI_CURVE = 12
_TAG_FIXED_POINT = 13
_TAG_VERIFY = 14
_TAG_REPETITION = 15

DEFAULTS = {
    "seed": 1234,
    "threads": 1,
    "out": "runs",
    "trials": 60_000,
    "beta_sweep": {
        "theta": {"p_y_given_x1": 0.95, "p_y_given_x2": 0.9},
        "alpha_points": 101,
        "betas": [0.0, 0.25, 0.5, 0.75, 1.0],
    },
    "operators": {
        "theta": {"p_y_given_x1": 0.9, "p_y_given_x2": 0.85},
        "n": 35,
        "alpha_points": 101,
        "r_p_y_given_x1": 0.95,
        "delta_points": 41,
    },
    "fixed_point": {
        "theta": {"p_y_given_x1": 0.9, "p_y_given_x2": 0.85},
        "n": 35,
        "alpha0": 0.27,
        "eps": 0.005,
        "max_iters": 25,
        "psi_points": 21,
    },
    "corpus": {
        "n_docs": 2400,
        "n_aspects": 3,
        "p_target": 0.95,
        "p_spurious": [0.9, 0.5],
        "vocab_size_per_aspect": 12,
        "sentiment_words_per_aspect": 50,
        "neutral_words_shared": 30,
        "sentence_length": [5, 9],
        "shuffle_sentences": True,
        "seed": None,
    },
    "selector": {"em_rounds": 10, "smoothing": 1.0, "exploration_rate": 0.05},
    "icda": {
        "max_iterations": 8,
        "seeds": [11, 22, 33],
        "confidence_keep_fraction": 0.10,
        "resample_each_round": True,
        "delta_a_required_decreasing": True,
        "repetitions": 3,
        "corpus_dir": None,
    },
    "verify": {"n_values": [10, 35], "p_grid": [0.5, 0.6, 0.7, 0.8, 0.9]},
}


class ConfigError(Exception):
    pass


def _deep_merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown configuration key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(base[key], value, where)
        else:
            out[key] = value
    return out


def _apply_set(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects KEY=VALUE, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"--set: unknown configuration section {part!r} in {key!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"--set: unknown configuration key {key!r}")
    node[parts[-1]] = value


def load_config(args) -> dict:
    config = copy.deepcopy(DEFAULTS)
    if args.config is not None:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"{args.config}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})"
            )
        if not isinstance(user, dict):
            raise ConfigError(f"{args.config}: top-level config must be an object")
        config = _deep_merge(config, user)
    for assignment in args.set or []:
        _apply_set(config, assignment)
    for flag in ("seed", "threads", "out", "trials"):
        value = getattr(args, flag, None)
        if value is not None:
            config[flag] = value
    return config


def _build(label: str, factory, /, **kwargs):
    try:
        return factory(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{label}: {exc}")


def _theta(block: dict, label: str) -> ThetaSpec:
    return _build(label, ThetaSpec, p_y_given_x1=block["p_y_given_x1"], p_y_given_x2=block["p_y_given_x2"])


def _corpus_spec(config: dict) -> corpus.CorpusSpec:
    block = dict(config["corpus"])
    if block.get("seed") is None:
        block["seed"] = config["seed"]
    block["p_spurious"] = tuple(block["p_spurious"])
    block["sentence_length"] = tuple(block["sentence_length"])
    return _build("corpus", corpus.CorpusSpec, **block)


def _selector_cfg(config: dict) -> rationale.SelectorTrainConfig:
    return _build("selector", rationale.SelectorTrainConfig, **config["selector"])


def _icda_cfg(config: dict) -> driver.ICDAConfig:
    block = {k: v for k, v in config["icda"].items() if k not in ("repetitions", "corpus_dir")}
    block["seeds"] = tuple(block["seeds"])
    return _build("icda", driver.ICDAConfig, **block)


def parallel_map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _cell(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _outdir(config: dict) -> Path:
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands


def cmd_beta_sweep(config: dict) -> int:
    out = _outdir(config)
    block = config["beta_sweep"]
    theta = _theta(block["theta"], "beta_sweep.theta")
    alphas = np.linspace(0.0, 1.0, int(block["alpha_points"]))
    rows = operators.beta_sweep(theta, alphas, block["betas"])
    csv_path = out / "beta_sweep.csv"
    write_csv(csv_path, ["alpha", "beta", "benefit_bits"], rows)
    svgplot.line_plot_from_csv(
        csv_path,
        out / "beta_sweep.svg",
        x="alpha",
        y="benefit_bits",
        series="beta",
        title="Augmentation benefit vs selection error",
    )
    print(f"beta-sweep: wrote {csv_path}")
    return 0


def cmd_operators(config: dict) -> int:
    out = _outdir(config)
    block = config["operators"]
    theta = _theta(block["theta"], "operators.theta")
    n = int(block["n"])
    trials = int(config["trials"])
    seed = int(config["seed"])

    alphas = np.linspace(0.0, 1.0, int(block["alpha_points"]))
    j_rows = [(float(a), operators.augmented_info_gap(theta, float(a))) for a in alphas]
    j_path = out / "j_curve.csv"
    write_csv(j_path, ["alpha", "delta_a_bits"], j_rows)
    svgplot.line_plot_from_csv(
        j_path,
        out / "j_curve.svg",
        x="alpha",
        y="delta_a_bits",
        title="Augmented informativeness gap vs selection error",
    )

    p1 = float(block["r_p_y_given_x1"])
    mi_top = mutual_information_symmetric(p1)
    deltas = np.linspace(0.0, mi_top, int(block["delta_points"]))
    cfg = operators.SimConfig(n=n, trials=trials)

    def r_cell(item):
        i, d = item
        p2 = operators.inverse_mi_symmetric(mi_top - float(d))
        est = operators.selection_error(
            ThetaSpec(p1, p2), cfg, derive(seed, _TAG_R_CURVE, i)
        )
        return (float(d), est, operators.mc_standard_error(est, trials))

    r_rows = parallel_map(r_cell, list(enumerate(deltas)), int(config["threads"]))
    r_path = out / "r_curve.csv"
    write_csv(r_path, ["delta_bits", "alpha_next", "stderr"], r_rows)
    svgplot.line_plot_from_csv(
        r_path,
        out / "r_curve.svg",
        x="delta_bits",
        y="alpha_next",
        title=f"Selection error vs informativeness gap (n={n})",
    )
    print(f"operators: wrote {j_path} and {r_path}")
    return 0


def cmd_fixed_point(config: dict) -> int:
    out = _outdir(config)
    block = config["fixed_point"]
    theta = _theta(block["theta"], "fixed_point.theta")
    cfg = operators.SimConfig(n=int(block["n"]), trials=int(config["trials"]))
    seed = int(config["seed"])
    threads = int(config["threads"])

    alphas = np.linspace(0.0, 1.0, int(block["psi_points"]))

    def psi_cell(item):
        i, a = item
        nxt, _, _ = operators.iteration_step(theta, float(a), cfg, derive(seed, _TAG_PSI_CURVE, i))
        return (float(a), nxt, operators.mc_standard_error(nxt, cfg.trials))

    psi_rows = parallel_map(psi_cell, list(enumerate(alphas)), threads)
    psi_path = out / "psi_curve.csv"
    write_csv(psi_path, ["alpha", "psi_alpha", "stderr"], psi_rows)
    svgplot.line_plot_from_csv(
        psi_path, out / "psi_curve.svg", x="alpha", y="psi_alpha", title="Iteration map"
    )

    trace = operators.run_fixed_point(
        theta,
        float(block["alpha0"]),
        cfg,
        max_iters=int(block["max_iters"]),
        eps=float(block["eps"]),
        seed=derive(seed, _TAG_FIXED_POINT),
    )
    trace_rows = [(s.k, s.alpha, s.delta_a) for s in trace.steps]
    trace_path = out / "fp_trace.csv"
    write_csv(trace_path, ["k", "alpha", "delta_a_bits"], trace_rows)
    svgplot.line_plot_from_csv(
        trace_path, out / "fp_trace.svg", x="k", y="alpha", title="Error-rate iterations"
    )

    first, last = trace.steps[0].alpha, trace.steps[-1].alpha
    noise = 3.0 * operators.mc_standard_error(max(last, 1.0 / cfg.trials), cfg.trials)
    if last > first + noise:
        direction = "increasing"
    elif last < first - noise:
        direction = "decreasing"
    else:
        direction = "flat"
    write_csv(
        out / "fp_summary.csv",
        ["alpha0", "eps", "n", "trials", "converged", "limit_alpha", "final_alpha", "direction"],
        [
            (
                float(block["alpha0"]),
                float(block["eps"]),
                cfg.n,
                cfg.trials,
                trace.converged,
                trace.limit_alpha,
                last,
                direction,
            )
        ],
    )
    print(
        f"fixed-point: alpha0={block['alpha0']} -> {last:.5f} "
        f"({direction}, converged={trace.converged}, floor~{trace.limit_alpha:.5f})"
    )
    return 0


def _write_corpus(out: Path, spec: corpus.CorpusSpec, splits) -> None:
    train, dev, test = splits
    for name, ds in (("train", train), ("dev", dev), ("test", test)):
        corpus.write_dataset(ds, out / f"{name}.jsonl")
    corpus.write_vocabulary(spec, out / "vocab.json")
    with open(out / "corpus_spec.json", "w", encoding="utf-8") as fh:
        json.dump(asdict(spec), fh, indent=2)
        fh.write("\n")
    corpus.render_documents(train, spec, out / "preview.txt", limit=20)


def _load_corpus(corpus_dir: Path):
    spec_path = corpus_dir / "corpus_spec.json"
    try:
        with open(spec_path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"corpus directory is missing {spec_path}")
    raw["p_spurious"] = tuple(raw["p_spurious"])
    raw["sentence_length"] = tuple(raw["sentence_length"])
    spec = _build("corpus_spec.json", corpus.CorpusSpec, **raw)
    splits = []
    for name in ("train", "dev", "test"):
        path = corpus_dir / f"{name}.jsonl"
        if not path.exists():
            raise ConfigError(f"corpus directory is missing {path}")
        splits.append(corpus.read_dataset(path, name, spec))
    return spec, tuple(splits)


def cmd_gen_corpus(config: dict) -> int:
    out = _outdir(config)
    spec = _corpus_spec(config)
    splits = corpus.generate_corpus(spec)
    _write_corpus(out, spec, splits)
    stats = corpus.corpus_stats(splits[0])
    print(
        f"gen-corpus: {len(splits[0])}/{len(splits[1])}/{len(splits[2])} docs, "
        f"empirical agreement {tuple(round(a, 4) for a in stats.agreement)}"
    )
    return 0


def cmd_icda(config: dict) -> int:
    out = _outdir(config)
    icda_block = config["icda"]
    cfg = _icda_cfg(config)
    sel_cfg = _selector_cfg(config)
    seed = int(config["seed"])
    repetitions = int(icda_block["repetitions"])
    if repetitions < 1:
        raise ConfigError("icda.repetitions must be >= 1")

    if icda_block.get("corpus_dir"):
        spec, (train, dev, test) = _load_corpus(Path(icda_block["corpus_dir"]))
    else:
        spec = _corpus_spec(config)
        train, dev, test = corpus.generate_corpus(spec)
        _write_corpus(out, spec, (train, dev, test))

    def one_rep(rep: int) -> driver.ICDATrace:
        rep_dir = out / f"rep{rep:02d}"
        return driver.run_icda(
            train,
            dev,
            test,
            cfg,
            sel_cfg,
            seed=derive(seed, _TAG_REPETITION, rep),
            out_dir=rep_dir,
        )

    traces = parallel_map(one_rep, list(range(repetitions)), int(config["threads"]))

    curve_rows = []
    for rep, trace in enumerate(traces):
        for r in trace.iterations:
            curve_rows.append((rep, r.k, r.rationale_precision_test))
    curves_path = out / "precision_curves.csv"
    write_csv(curves_path, ["rep", "k", "precision_test"], curve_rows)
    svgplot.line_plot_from_csv(
        curves_path,
        out / "precision_curves.svg",
        x="k",
        y="precision_test",
        series="rep",
        title="Test rationale precision per iteration",
    )

    by_method = {"MMI": [], "CDA": [], "ICDA": []}
    for trace in traces:
        for method, value in trace.method_precisions().items():
            by_method[method].append(value)
    summary_rows = [
        (method, float(np.mean(vals)), float(np.std(vals)), len(vals))
        for method, vals in by_method.items()
    ]
    summary_path = out / "summary.csv"
    write_csv(summary_path, ["method", "mean_precision", "std_precision", "n_runs"], summary_rows)
    for method, mean, std, _ in summary_rows:
        print(f"icda: {method:4s} precision {mean:.4f} +/- {std:.4f}")
    for rep, trace in enumerate(traces):
        print(
            f"icda: rep{rep:02d} stopped after k={trace.iterations[-1].k} ({trace.stop_reason})"
        )
    return 0


def cmd_verify(config: dict) -> int:
    out = _outdir(config)
    block = config["verify"]
    trials = int(config["trials"])
    seed = int(config["seed"])
    grid = [float(p) for p in block["p_grid"]]
    n_values = [int(n) for n in block["n_values"]]
    cells = [
        (i, n, p1, p2)
        for i, (n, p1, p2) in enumerate(
            (n, p1, p2) for n in n_values for p1 in grid for p2 in grid
        )
    ]

    def check(cell):
        i, n, p1, p2 = cell
        exact = operators.exact_selection_error(p1, p2, n)
        est = operators.selection_error(
            ThetaSpec(p1, p2), operators.SimConfig(n=n, trials=trials), derive(seed, _TAG_VERIFY, i)
        )
        se = math.sqrt(max(exact * (1.0 - exact), 0.0) / trials)
        ok = abs(est - exact) <= 3.0 * se
        return (n, p1, p2, exact, est, se, abs(est - exact), ok)

    rows = parallel_map(check, cells, int(config["threads"]))
    path = out / "verify.csv"
    write_csv(
        path, ["n", "p1", "p2", "exact", "mc", "stderr", "abs_err", "within_3se"], rows
    )
    failures = [r for r in rows if not r[-1]]
    for n, p1, p2, exact, est, se, err, ok in rows:
        mark = "ok " if ok else "FAIL"
        print(f"verify: {mark} n={n:3d} p1={p1:.2f} p2={p2:.2f} exact={exact:.6f} mc={est:.6f}")
    print(f"verify: {len(rows) - len(failures)}/{len(rows)} cells within 3 standard errors")
    return 1 if failures else 0


COMMANDS = {
    "beta-sweep": cmd_beta_sweep,
    "operators": cmd_operators,
    "fixed-point": cmd_fixed_point,
    "gen-corpus": cmd_gen_corpus,
    "icda": cmd_icda,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icda",
        description="Iterative counterfactual data augmentation: operators, corpora, experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__doc__)
        sp.add_argument("--config", type=Path, help="JSON config file")
        sp.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override a config key (dotted path, JSON value)",
        )
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--threads", type=int, help="worker threads for independent units")
        sp.add_argument("--out", type=str, help="output directory")
        sp.add_argument("--trials", type=int, help="Monte-Carlo trials per estimate")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        return COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
