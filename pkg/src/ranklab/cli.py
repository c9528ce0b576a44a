"""Command-line front end: ``ranklab {theory,simulate,train,report}``.

Exit codes: 0 success, 1 property violation detected, 2 usage/config error.
Every run writes ``manifest.cfg`` next to its outputs; passing that manifest
back as ``--config`` reproduces the outputs byte for byte.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ranklab import __version__
from ranklab.aggregate import make_partition_plan
from ranklab.configfile import REQUIRED, Section, read_config, read_csv, write_config, write_csv
from ranklab.dynamics import (
    closed_form_trace,
    first_round_below,
    iterate_idealized,
    theorem_bound,
)
from ranklab.errors import LabError
from ranklab.harness import STRATEGIES, ExperimentConfig, run_experiment
from ranklab.population import RankConfig, assign_ranks, forecast

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2
TABLE_ROUNDS = (1, 10, 20, 30, 50, 100)

SCHEMA_THEORY = "ranklab.theory/1"
SCHEMA_SPECTRUM = "ranklab.spectrum/1"
SCHEMA_SPECTRUM_MEAN = "ranklab.spectrum_mean/1"
SCHEMA_RHO = "ranklab.rho/1"
SCHEMA_METRICS = "ranklab.metrics/1"
SCHEMA_REPORT = "ranklab.report/1"


def _population_from(cp):
    sec = Section(cp, "population")
    levels = sec.get_list("levels", int, REQUIRED)
    probs = sec.get_list("probs", float, None)
    rc = RankConfig(levels, probs) if probs is not None else RankConfig.uniform(levels)
    k = sec.get_int("k_clients", REQUIRED)
    m = sec.get_int("m_per_round", REQUIRED)
    seed = sec.get_int("seed", 0)
    pop = assign_ranks(rc, k, seed)
    if not 1 <= m <= k:
        raise LabError("config", f"m_per_round={m} outside [1, {k}]")
    values = {"k_clients": k, "m_per_round": m, "levels": rc.levels, "probs": rc.probs, "seed": seed}
    return pop, m, values


def _energy_vector(sec: Section, key: str, r_max: int, default):
    vals = sec.get_list(key, float, default)
    if len(vals) == 1:
        vals = vals * r_max
    if len(vals) != r_max:
        raise LabError("config", f"[{sec.name}] {key} needs 1 or r_max={r_max} values")
    return np.array(vals, dtype=np.float64)


def _manifest(path: Path, command: str, sections: dict) -> None:
    run = {"subcommand": command, "version": __version__}
    write_config(path / "manifest.cfg", {"run": run, **sections})


def _parse_seeds(text):
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise LabError("config", f"--seeds must be a comma-separated list of integers, got {text!r}") from None


# -- theory ------------------------------------------------------------------


def cmd_theory(args) -> int:
    cp = read_config(args.config)
    pop, m, pop_values = _population_from(cp)
    sec = Section(cp, "theory")
    beta = sec.get_float("beta", 1.0)
    rounds = sec.get_int("rounds", 200)
    trials = args.trials if args.trials is not None else sec.get_int("trials", 1000)
    seeds = args.seeds if args.seeds is not None else (sec.get_int("seed", 0),)
    e0 = _energy_vector(sec, "e0", pop.r_max, (1.0,))
    if rounds < 0 or trials < 1:
        raise LabError("config", "rounds >= 0 and trials >= 1 required")

    fc = forecast(pop, m, beta, e0)
    trace = closed_form_trace(e0, fc, rounds, pop.levels)
    closed = trace.higher_rank_share
    bounds = np.array([theorem_bound(fc, t) for t in range(rounds + 1)])
    violations = int(np.sum(closed > bounds))

    rng = np.random.default_rng(seeds[0])
    r1 = fc.r1
    mc, se = [], []
    for sigma in iterate_idealized("fedavg", pop, m, beta, np.sqrt(e0), rounds, trials, rng):
        e = sigma**2
        tail = e[:, r1:].sum(axis=1)
        head = e[:, :r1].sum(axis=1)
        x, y = tail.mean(), head.mean()
        s = x + y
        ratio = x / s if s > 0 else float("nan")
        if trials > 1 and s > 0:
            # delta method for the ratio of means x / (x + y)
            cov = np.cov(np.vstack([tail, head]))
            g = np.array([y / s**2, -x / s**2])
            stderr = float(np.sqrt(max(g @ cov @ g, 0.0) / trials))
        else:
            stderr = float("nan")
        mc.append(float(ratio))
        se.append(stderr)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [(t, float(bounds[t]), float(closed[t]), mc[t], se[t]) for t in range(rounds + 1)]
    write_csv(
        out / "theory.csv",
        SCHEMA_THEORY,
        ("t", "bound", "closed_form_1_minus_rho", "monte_carlo_1_minus_rho", "mc_stderr"),
        rows,
    )
    t_hit = first_round_below(fc, 1e-3, t_max=100000)
    summary = (
        f"gamma={fc.gamma!r} C={fc.c0!r} r1={r1} violations={violations} "
        f"first_t_bound_below_1e-3={t_hit}\n"
        f"q={','.join(repr(float(q)) for q in fc.q)}\n"
    )
    (out / "summary.txt").write_text(summary, encoding="utf-8")
    _manifest(
        out,
        "theory",
        {
            "population": pop_values,
            "theory": {"beta": beta, "rounds": rounds, "trials": trials, "seed": seeds[0], "e0": tuple(e0.tolist())},
        },
    )
    print(summary, end="")
    if violations:
        print(f"bound violated at {violations} rounds", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


# -- simulate ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    cp = read_config(args.config)
    pop, m, pop_values = _population_from(cp)
    sec = Section(cp, "simulate")
    strategy = args.strategy or sec.get_str("strategy", "fedavg")
    if strategy not in ("fedavg", "raflora"):
        raise LabError("config", f"simulate strategy must be fedavg or raflora, got {strategy!r}")
    beta = sec.get_float("beta", 1.0)
    rounds = sec.get_int("rounds", 20)
    trials = args.trials if args.trials is not None else sec.get_int("trials", 100)
    trace_trials = sec.get_int("trace_trials", 100)
    carry_over = args.carry_over or sec.get_bool("carry_over", False)
    seeds = args.seeds if args.seeds is not None else (sec.get_int("seed", 0),)
    sigma0 = _energy_vector(sec, "sigma0", pop.r_max, (1.0,))
    if rounds < 0 or trials < 1 or trace_trials < 0:
        raise LabError("config", "rounds >= 0, trials >= 1, trace_trials >= 0 required")

    plan = make_partition_plan(pop.levels)
    rng = np.random.default_rng(seeds[0])
    r1 = pop.r1
    per_trial, mean_rows, rho_rows = [], [], []
    keep = min(trace_trials, trials)
    for t, sigma in enumerate(
        iterate_idealized(strategy, pop, m, beta, sigma0, rounds, trials, rng, plan=plan, carry_over=carry_over)
    ):
        e = sigma**2
        for trial in range(keep):
            for i in range(pop.r_max):
                per_trial.append((trial, t, i + 1, float(sigma[trial, i]), float(e[trial, i])))
        s_mean, e_mean = sigma.mean(axis=0), e.mean(axis=0)
        for i in range(pop.r_max):
            mean_rows.append((t, i + 1, float(s_mean[i]), float(e_mean[i])))
        total = e.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            rho = np.where(total > 0, e[:, :r1].sum(axis=1) / total, np.nan)
        e_tot = float(e_mean.sum())
        rho_rows.append((t, float(np.nanmean(rho)) if np.any(total > 0) else float("nan"),
                         float(e_mean[:r1].sum()) / e_tot if e_tot > 0 else float("nan")))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "spectrum.csv", SCHEMA_SPECTRUM, ("trial", "t", "i", "sigma_i", "e_i"), per_trial)
    write_csv(out / "spectrum_mean.csv", SCHEMA_SPECTRUM_MEAN, ("t", "i", "sigma_mean", "e_mean"), mean_rows)
    write_csv(out / "rho.csv", SCHEMA_RHO, ("t", "rho_r1_mean", "rho_r1_of_mean"), rho_rows)
    _manifest(
        out,
        "simulate",
        {
            "population": pop_values,
            "simulate": {
                "strategy": strategy, "beta": beta, "rounds": rounds, "trials": trials,
                "trace_trials": trace_trials, "carry_over": carry_over, "seed": seeds[0],
                "sigma0": tuple(sigma0.tolist()),
            },
        },
    )
    return EXIT_OK


# -- train -------------------------------------------------------------------


def train_config_from(cp, args) -> tuple[ExperimentConfig, tuple[str, ...], tuple[int, ...], tuple[int, ...], dict]:
    pop = Section(cp, "population")
    sec = Section(cp, "train")
    levels = pop.get_list("levels", int, REQUIRED)
    strategies = (args.strategy,) if args.strategy else sec.get_list("strategies", str, STRATEGIES)
    for s in strategies:
        if s not in STRATEGIES:
            raise LabError("config", f"unknown strategy {s!r}")
    seeds = args.seeds if args.seeds is not None else sec.get_list("seeds", int, (0,))
    spectrum_raw = sec.get_str("spectrum", "uniform")
    spectrum = spectrum_raw if spectrum_raw in ("uniform", "balanced") else sec.get_list("spectrum", float)
    cfg = ExperimentConfig(
        k_clients=pop.get_int("k_clients", REQUIRED),
        m_per_round=pop.get_int("m_per_round", REQUIRED),
        levels=levels,
        probs=pop.get_list("probs", float, None),
        rounds=sec.get_int("rounds", 100),
        d=sec.get_int("d", 128),
        n=sec.get_int("n", 128),
        strategy=strategies[0],
        eta=sec.get_float("eta", 0.2),
        local_steps=sec.get_int("local_steps", 4),
        learning_rate=sec.get_float("learning_rate", 0.005),
        seed=seeds[0],
        carry_over=args.carry_over or sec.get_bool("carry_over", False),
        sample_counts=sec.get_list("sample_counts", int, None),
        spectrum=spectrum,
        init=sec.get_str("init", "random"),
        flora_init_scale=sec.get_float("flora_init_scale", 1.0),
    )
    table_rounds = sec.get_list("table_rounds", int, TABLE_ROUNDS)
    sections = {
        "population": {
            "k_clients": cfg.k_clients, "m_per_round": cfg.m_per_round,
            "levels": cfg.levels, "probs": cfg.rank_config.probs,
        },
        "train": {
            "rounds": cfg.rounds, "d": cfg.d, "n": cfg.n, "strategies": strategies, "seeds": seeds,
            "eta": cfg.eta, "local_steps": cfg.local_steps, "learning_rate": cfg.learning_rate,
            "carry_over": cfg.carry_over, "sample_counts": cfg.sample_counts, "spectrum": cfg.spectrum,
            "init": cfg.init, "flora_init_scale": cfg.flora_init_scale, "table_rounds": table_rounds,
        },
    }
    return cfg, strategies, seeds, table_rounds, sections


def metrics_header(n_buckets: int) -> tuple[str, ...]:
    return ("round", "strategy", "loss", *(f"bucket_{j + 1}" for j in range(n_buckets)), "rho_r1", "higher_rank_share")


def format_table(rows: dict[str, dict[int, tuple[float, float]]], rounds, with_std: bool) -> str:
    """Strategies x rounds table of higher-rank share in percent."""
    head = ["Method"] + [f"R={r}" for r in rounds]
    body = []
    for strategy, by_round in rows.items():
        cells = [strategy]
        for r in rounds:
            if r not in by_round:
                cells.append("-")
                continue
            mean, std = by_round[r]
            cells.append(f"{mean * 100:.2f}%" + (f" ± {std * 100:.2f}" if with_std else ""))
        body.append(cells)
    widths = [max(len(row[j]) for row in [head] + body) for j in range(len(head))]
    lines = []
    for row in [head] + body:
        lines.append("  ".join(c.ljust(widths[j]) if j == 0 else c.rjust(widths[j]) for j, c in enumerate(row)))
    return "\n".join(lines) + "\n"


def cmd_train(args) -> int:
    cp = read_config(args.config)
    cfg, strategies, seeds, table_rounds, sections = train_config_from(cp, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = metrics_header(len(cfg.levels))
    shares: dict[str, dict[int, list[float]]] = {s: {} for s in strategies}
    for seed in seeds:
        rows = []
        for strategy in strategies:
            for mt in run_experiment(replace(cfg, strategy=strategy, seed=seed)):
                rows.append((mt.round, mt.strategy, mt.loss, *mt.buckets, mt.rho_r1, mt.higher_rank_share))
                shares[strategy].setdefault(mt.round, []).append(mt.higher_rank_share)
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(exist_ok=True)
        write_csv(seed_dir / "metrics.csv", SCHEMA_METRICS, header, rows)
    table = {
        s: {r: (float(np.mean(v)), float(np.std(v))) for r, v in by_round.items() if r in table_rounds}
        for s, by_round in shares.items()
    }
    rounds = [r for r in table_rounds if r <= cfg.rounds]
    (out / "table.txt").write_text(format_table(table, rounds, len(seeds) > 1), encoding="utf-8")
    _manifest(out, "train", sections)
    return EXIT_OK


# -- report ------------------------------------------------------------------


def cmd_report(args) -> int:
    files = [Path(p) for p in args.inputs]
    if not files:
        raise LabError("config", "report needs at least one metrics.csv")
    schema0, header0 = None, None
    data: dict[tuple[str, int], list[list[float]]] = {}
    order: list[tuple[str, int]] = []
    for path in files:
        schema, header, rows = read_csv(path)
        if schema != SCHEMA_METRICS:
            raise LabError("config", f"{path}: schema {schema!r} is not {SCHEMA_METRICS}")
        if header0 is None:
            schema0, header0 = schema, header
        elif header != header0:
            raise LabError("config", f"{path}: header differs from {files[0]}")
        for row in rows:
            if len(row) != len(header):
                raise LabError("config", f"{path}: ragged row {row}")
            key = (row[1], int(row[0]))
            if key not in data:
                order.append(key)
                data[key] = []
            data[key].append([float(x) for x in row[2:]])
    metrics = header0[2:]
    out_header = ["round", "strategy", "n_runs"]
    for name in metrics:
        out_header += [f"{name}_mean", f"{name}_std"]
    out_rows = []
    table: dict[str, dict[int, tuple[float, float]]] = {}
    share_col = metrics.index("higher_rank_share")
    for strategy, rnd in order:
        vals = np.array(data[(strategy, rnd)])
        mean, std = vals.mean(axis=0), vals.std(axis=0)
        row = [rnd, strategy, vals.shape[0]]
        for j in range(len(metrics)):
            row += [float(mean[j]), float(std[j])]
        out_rows.append(row)
        table.setdefault(strategy, {})[rnd] = (float(mean[share_col]), float(std[share_col]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "report.csv", SCHEMA_REPORT, out_header, out_rows)
    rounds = args.rounds if args.rounds is not None else TABLE_ROUNDS
    present = sorted({r for by_round in table.values() for r in by_round})
    rounds = [r for r in rounds if r in present]
    (out / "report.txt").write_text(format_table(table, rounds, True), encoding="utf-8")
    _manifest(out, "report", {"report": {"inputs": tuple(str(p) for p in files), "rounds": tuple(rounds)}})
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ranklab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ranklab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="key-value config or a previous manifest.cfg")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seeds", type=_parse_seeds, default=None, help="comma-separated seed list")

    p = sub.add_parser("theory", help="closed-form bound check plus Monte Carlo of the idealized FedAvg dynamics")
    common(p)
    p.add_argument("--trials", type=int, default=None)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("simulate", help="idealized spectrum simulation (fedavg or raflora)")
    common(p)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--strategy", choices=("fedavg", "raflora"), default=None)
    p.add_argument("--carry-over", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="federated training on a synthetic task")
    common(p)
    p.add_argument("--strategy", choices=STRATEGIES, default=None)
    p.add_argument("--carry-over", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="merge metrics.csv files into mean/std tables")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--rounds", type=_parse_seeds, default=None, help="rounds shown in report.txt")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except LabError as exc:
        print(f"ranklab {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
