"""Command line entry point: ``dayahead <subcommand> ...``.

Exit codes: 0 success, 2 study-spec error, 3 data error, 4 numeric
degeneracy.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .errors import DayAheadError, SpecError
from .market_data import load_csv, repair_dst, synth_generate
from .stats import full_dm, hourly_dm, read_error_csv, format_p
from .tpe import TrialHistory

log = logging.getLogger("dayahead")


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise SpecError(f"override {item!r} is not key=value")
        out[key.strip()] = value.strip()
    return out


def _spec(args) -> ex.StudySpec:
    overrides = _overrides(args.set)
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    return ex.load_study_spec(args.spec, overrides)


def cmd_ingest(args) -> None:
    series = repair_dst(load_csv(args.input, allow_dst_duplicates=True))
    series.to_csv(args.output)
    print(f"{len(series)} hourly records, {series.n_days} days -> {args.output}")


def cmd_synth(args) -> None:
    series = synth_generate(args.seed, args.days, args.coupling)
    series.to_csv(args.output)
    print(f"{series.provenance} -> {args.output}")


def cmd_select_features(args) -> None:
    spec = _spec(args)
    outcome = ex.run_feature_selection(spec)
    if outcome.report is not None:
        print(outcome.report.to_text(ex.FEATURE_LABELS))
        print(outcome.selection.to_text())
    print(f"best config (validation sMAPE {outcome.history.best().performance:.3f}%):")
    print(outcome.best.dumps())


def _config(spec: ex.StudySpec, args):
    path = args.config or spec.config
    if path is None:
        raise SpecError("a feature config is required (--config or 'config' key)")
    return ex.load_config(path)


def cmd_backtest(args) -> None:
    spec = _spec(args)
    if args.dual:
        spec = spec.replace(model="dual")
    data = ex.prepare_data(spec)
    result = ex.run_backtest(spec, _config(spec, args), data, name=args.name)
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.to_csv(out / "backtest.csv")
    result.model.save(out / "model.npz")
    problems = ex.audit_leakage(result, data)
    (out / "leakage_audit.txt").write_text("".join(p + "\n" for p in problems) or "no violations\n")
    print(f"{result.name}: {len(result.days)} test days, {result.retrains} retrains, sMAPE {result.smape:.2f}%")
    print(f"leakage audit: {len(problems)} violation(s)")
    if problems:
        sys.exit(3)


def cmd_compare(args) -> None:
    a = ex.BacktestResult.from_csv(args.a, args.name_a)
    b = ex.BacktestResult.from_csv(args.b, args.name_b)
    report = ex.compare_models(a, b)
    report.write(args.out)
    print(report.to_text())


def cmd_dual_study(args) -> None:
    spec = _spec(args)
    data = ex.prepare_data(spec)
    outcome = ex.run_dual_study(spec, _config(spec, args), data)
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    outcome.single.to_csv(out / "backtest_single.csv")
    outcome.dual.to_csv(out / "backtest_dual.csv")
    outcome.comparison.write(out)
    print(outcome.comparison.to_text())


def cmd_dm_test(args) -> None:
    e1, e2 = read_error_csv(args.errors)
    hourly = hourly_dm(e1, e2, args.side, p=args.power, strict=False)
    full = full_dm(e1, e2, args.side, p=args.power, strict=False)
    for h, r in enumerate(hourly, start=1):
        print(f"hour {h:>2}: statistic {r.statistic:>8.3f}  p-value {format_p(r.p_value)}{'  degenerate' if r.degenerate else ''}")
    print(f"full (order {full.order}): statistic {full.statistic:.3f}  p-value {format_p(full.p_value)}")
    if args.out:
        rec = {"hourly": [r.__dict__ for r in hourly], "full": full.__dict__}
        Path(args.out).write_text(json.dumps(rec, indent=1))


def cmd_report(args) -> None:
    spec = _spec(args)
    history = TrialHistory.load(args.trials, spec.search_space())
    report, selection = ex.analyse_history(history, spec)
    ex.write_selection_artifacts(Path(spec.output_dir), history.best().config, report, selection)
    print(report.to_text(ex.FEATURE_LABELS))
    print(selection.to_text())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dayahead", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_spec(p):
        p.add_argument("--spec", help="study spec file (key = value lines)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a spec key")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        return p

    p = sub.add_parser("ingest", help="load a market CSV, repair DST days, write canonical CSV")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="write a synthetic coupled-market CSV")
    p.add_argument("output")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--days", type=int, default=3 * 365)
    p.add_argument("--coupling", type=float, default=0.9)
    p.set_defaults(func=cmd_synth)

    p = with_spec(sub.add_parser("select-features", help="TPE search plus fANOVA feature selection"))
    p.set_defaults(func=cmd_select_features)

    p = with_spec(sub.add_parser("backtest", help="walk-forward backtest over the test slice"))
    p.add_argument("--config", help="feature config file")
    p.add_argument("--dual", action="store_true", help="train the dual-market net")
    p.add_argument("--name")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("compare", help="sMAPE and DM tests for two backtest CSVs (A better than B)")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--name-a", default="A")
    p.add_argument("--name-b", default="B")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_compare)

    p = with_spec(sub.add_parser("dual-study", help="single- vs dual-market backtest comparison"))
    p.add_argument("--config", help="feature config file")
    p.set_defaults(func=cmd_dual_study)

    p = sub.add_parser("dm-test", help="DM tests on a date,hour,error_m1,error_m2 CSV")
    p.add_argument("errors")
    p.add_argument("--side", choices=("one", "two"), default="one")
    p.add_argument("--power", type=int, choices=(1, 2), default=1)
    p.add_argument("--out", help="write a JSON record here")
    p.set_defaults(func=cmd_dm_test)

    p = with_spec(sub.add_parser("report", help="re-run the importance analysis on a trial log"))
    p.add_argument("trials")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DayAheadError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
