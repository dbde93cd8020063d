"""Command-line front end: ``rltrader {simulate,risk,fit,scramble}``.

Every option can also come from a flat TOML file passed with ``--config``
(keys are the long option names with dashes turned into underscores);
command-line flags win.  All outputs go under ``--out`` together with a
``manifest.json`` listing the produced files and the effective settings.

Exit codes: 0 success, 1 fatal error, 2 some players failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import ingest, report, risk, sim
from .errors import RLTraderError
from .fit import FitConfig, scrambled_experiment
from .model import ModelParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("rltrader")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2
APPENDIX_CAP = 25


class Fatal(Exception):
    pass


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--transactions", help="transaction CSV")
    p.add_argument("--prices", help="stock price CSV (stock,date,close)")
    p.add_argument("--benchmark", help="benchmark price CSV, same layout")
    p.add_argument("--classification", help="precomputed classification JSON "
                   "(used instead of --prices/--benchmark)")
    p.add_argument("--risk", choices=("beta", "riskiness"), default="beta")
    p.add_argument("--cap", type=int, default=None,
                   help="keep only the first N transactions of each player")
    p.add_argument("--appendix", action="store_true",
                   help=f"shorthand for --cap {APPENDIX_CAP} --risk riskiness")
    p.add_argument("--min-sells", type=int, default=5)
    p.add_argument("--min-span-days", type=int, default=30)
    p.add_argument("--reward", choices=("cost_basis", "eq4_literal"), default="cost_basis")
    p.add_argument("--rho", type=float, default=500.0)
    p.add_argument("--ci-confidence", type=float, default=0.99)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rltrader", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="TOML file of option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-agents", type=int, default=46)
    p.add_argument("--n-sells", type=int, default=15)
    p.add_argument("--alpha", type=float, default=0.8)
    p.add_argument("--beta", type=float, default=20.0)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--n-stocks", type=int, default=107)
    p.add_argument("--horizon-days", type=int, default=250)
    p.add_argument("--hold-days", type=int, default=3)
    p.add_argument("--benchmark-vol", type=float, default=0.01)
    p.add_argument("--idio-vol", type=float, default=0.01)
    p.add_argument("--drifts", type=float, nargs=3, default=[0.0, 0.0, 0.0],
                   metavar=("LOW", "MID", "HIGH"), help="daily return drift per bin")
    p.add_argument("--buy-policy", choices=sim.BUY_POLICIES, default="uniform")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("risk", help="emit the stock classification only")
    p.add_argument("--out", required=True)
    p.add_argument("--prices", required=True)
    p.add_argument("--benchmark", required=True)
    p.add_argument("--risk", choices=("beta", "riskiness"), default="beta")

    p = sub.add_parser("fit", help="fit all players and write reports")
    p.add_argument("--out", required=True)
    _add_data_args(p)
    p.add_argument("--lrt-confidence", type=float, default=0.95)
    p.add_argument("--chance-threshold", type=float, default=0.5)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--trace", action="store_true",
                   help="also write per-sell JSONL traces at the myopic optimum")

    p = sub.add_parser("scramble", help="ranked vs scrambled binning for some players")
    p.add_argument("--out", required=True)
    _add_data_args(p)
    p.add_argument("--player", action="append", required=False,
                   help="player id (repeatable)")
    p.add_argument("--n-scrambles", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load_config(argv: list[str]) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    try:
        with open(known.config, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise Fatal(f"cannot read config {known.config}: {exc}") from exc


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    config = _load_config(argv)
    if config:
        # find the subcommand's parser and seed its defaults from the file
        subparsers = next(a for a in parser._actions
                          if isinstance(a, argparse._SubParsersAction))
        command = next((a for a in argv if a in subparsers.choices), None)
        if command:
            sp = subparsers.choices[command]
            dests = {a.dest for a in sp._actions}
            unknown = sorted(set(config) - dests)
            if unknown:
                raise Fatal(f"unknown config keys for {command}: {', '.join(unknown)}")
            sp.set_defaults(**config)
            for action in sp._actions:
                if action.dest in config:
                    action.required = False
    return parser.parse_args(argv)


def _snapshot(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "config", "verbose")}


def _write_manifest(out: Path, command: str, files: list[Path], args) -> Path:
    path = out / "manifest.json"
    report.dump_json({"command": command, "files": report.relative(files, out),
                      "config": _snapshot(args)}, path)
    return path


def _classification(args) -> risk.RiskClassification:
    if args.classification:
        try:
            with open(args.classification, encoding="utf-8") as fh:
                return risk.RiskClassification.from_dict(json.load(fh))
        except (OSError, ValueError, KeyError) as exc:
            raise Fatal(f"cannot read classification: {exc}") from exc
    if not (args.prices and args.benchmark):
        raise Fatal("need --classification or both --prices and --benchmark")
    prices = risk.read_prices(args.prices)
    bench = risk.read_prices(args.benchmark)
    if len(bench) != 1:
        raise Fatal(f"benchmark file must hold exactly one series, found {len(bench)}")
    return risk.classify(prices, next(iter(bench.values())), args.risk)


def _load_population(args, out: Path):
    """Parse, group, filter and cap; returns (histories, diagnostics)."""
    if args.appendix:
        args.cap = args.cap or APPENDIX_CAP
        args.risk = "riskiness"
    if not args.transactions:
        raise Fatal("--transactions is required")
    records, diagnostics = ingest.parse_transactions(args.transactions)
    histories, diags = ingest.build_histories(records)
    diagnostics += diags
    if args.cap:
        histories = [ingest.cap_transactions(h, args.cap) for h in histories]
    histories = ingest.filter_active(histories, args.min_sells, args.min_span_days)
    if not histories:
        raise Fatal("no players left after filtering")
    return histories, diagnostics


def _fit_config(args) -> FitConfig:
    return FitConfig(rho=args.rho, reward=args.reward)


def _fit_one(job):
    history, classification, config, confidence, cap = job
    try:
        return report.fit_all_models(history, classification, config, confidence, cap), None
    except (RLTraderError, NotImplementedError) as exc:
        return None, f"{history.player_id}: {exc}"


def _write_diagnostics(out: Path, diagnostics) -> Path:
    path = out / "diagnostics.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        ingest.write_diagnostics(diagnostics, fh)
    return path


def cmd_fit(args) -> int:
    histories, diagnostics = _load_population(args, Path(args.out))
    classification = _classification(args)
    config = _fit_config(args)
    jobs = [(h, classification, config, args.lrt_confidence, args.cap) for h in histories]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_fit_one, jobs))
    else:
        results = [_fit_one(j) for j in jobs]
    fits = [r for r, _ in results if r is not None]
    failures = [e for _, e in results if e is not None]
    if not fits:
        raise Fatal("every player fit failed: " + "; ".join(failures))

    out = Path(args.out)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    files = []
    for pf in fits:
        path = out / "reports" / report.report_filename(pf.player)
        report.dump_json(pf.to_dict(), path)
        files.append(path)
    summary = report.population_summary(fits, args.ci_confidence, args.chance_threshold)
    summary.update(scheme=classification.scheme, cap=args.cap,
                   failed=[f.split(":")[0] for f in failures])
    files.append(out / "population.json")
    report.dump_json(summary, files[-1])
    for name, _, _ in report.COMPARISONS:
        path = out / f"fig1_{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            report.write_comparison_csv(fits, name, fh)
        files.append(path)
    files.append(out / "fig3_population.csv")
    with open(files[-1], "w", newline="", encoding="utf-8") as fh:
        report.write_population_csv(summary, fh)
    files.append(out / "classification.json")
    files[-1].write_text(classification.to_json() + "\n", encoding="utf-8")
    if args.trace:
        from .model import replay_nll
        (out / "traces").mkdir(exist_ok=True)
        by_id = {h.player_id: h for h in histories}
        for pf in fits:
            _, trace = replay_nll(by_id[pf.player], classification, pf.fits["myopic"].params)
            path = out / "traces" / (report.report_filename(pf.player)[:-5] + ".jsonl")
            report.write_trace(trace, path)
            files.append(path)
    for f in failures:
        diagnostics.append(ingest.Diagnostic(None, f.split(":")[0], f"fit failed: {f}"))
    files.append(_write_diagnostics(out, diagnostics))
    _write_manifest(out, "fit", files, args)
    for f in failures:
        log.error("fit failed for %s", f)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_scramble(args) -> int:
    histories, diagnostics = _load_population(args, Path(args.out))
    classification = _classification(args)
    by_id = {h.player_id: h for h in histories}
    players = args.player or sorted(by_id)
    unknown = [p for p in players if p not in by_id]
    if unknown:
        raise Fatal(f"unknown player(s) after filtering: {', '.join(unknown)}")
    if args.n_scrambles < 1:
        raise Fatal("--n-scrambles must be >= 1")
    config = _fit_config(args)
    results, failures = [], []
    for p in players:
        try:
            results.append(scrambled_experiment(by_id[p], classification, args.n_scrambles,
                                                args.seed, config, args.ci_confidence))
        except (RLTraderError, NotImplementedError) as exc:
            failures.append(f"{p}: {exc}")
    for r in results:
        for msg in r.failures:
            diagnostics.append(ingest.Diagnostic(None, r.player, msg))
    if not results:
        raise Fatal("every scramble experiment failed: " + "; ".join(failures))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "fig2_scramble.csv"]
    with open(files[0], "w", newline="", encoding="utf-8") as fh:
        report.write_scramble_csv(results, fh)
    files.append(_write_diagnostics(out, diagnostics))
    _write_manifest(out, "scramble", files, args)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_simulate(args) -> int:
    try:
        spec = sim.MarketSpec(n_stocks=args.n_stocks, horizon_days=args.horizon_days,
                              benchmark_vol=args.benchmark_vol, idio_vol=args.idio_vol,
                              bin_drifts=tuple(args.drifts), seed=args.seed)
        params = ModelParams(args.alpha, args.beta, args.gamma)
        if args.n_agents < 1:
            raise ValueError("--n-agents must be >= 1")
        market = sim.generate_market(spec)
        runs = sim.simulate_population(market, args.n_agents, params, args.n_sells,
                                       seed=args.seed, hold_days=args.hold_days,
                                       buy_policy=args.buy_policy)
    except ValueError as exc:
        raise Fatal(f"invalid simulation settings: {exc}") from exc
    out = Path(args.out)
    paths = sim.write_dataset(out, market, runs, [params] * len(runs))
    _write_manifest(out, "simulate", list(paths.values()), args)
    return EXIT_OK


def cmd_risk(args) -> int:
    args.classification = None
    classification = _classification(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "classification.json"
    path.write_text(classification.to_json() + "\n", encoding="utf-8")
    _write_manifest(out, "risk", [path], args)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "scramble": cmd_scramble, "simulate": cmd_simulate,
            "risk": cmd_risk}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except Fatal as exc:
        print(f"rltrader: {exc}", file=sys.stderr)
        return EXIT_FATAL
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    for name in ("cap", "min_sells", "min_span_days", "jobs", "n_scrambles"):
        value = getattr(args, name, None)
        if value is not None and value < (0 if name == "min_span_days" else 1):
            print(f"rltrader: --{name.replace('_', '-')} out of range", file=sys.stderr)
            return EXIT_FATAL
    for name in ("lrt_confidence", "ci_confidence"):
        value = getattr(args, name, None)
        if value is not None and not 0 < value < 1:
            print(f"rltrader: --{name.replace('_', '-')} must be in (0, 1)", file=sys.stderr)
            return EXIT_FATAL
    try:
        return COMMANDS[args.command](args)
    except (Fatal, RLTraderError, OSError, ValueError) as exc:
        print(f"rltrader: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
