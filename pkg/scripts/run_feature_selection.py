"""Run a TPE feature search and the importance analysis, then backtest the best config.

    python scripts/run_feature_selection.py scripts/specs/selection_synthetic.txt --set tpe_trials=40
"""
import argparse
import logging
from pathlib import Path

from dayahead import experiment as ex


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("spec", help="study spec file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--backtest-days", type=int, default=14, help="0 skips the backtest")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    spec = ex.load_study_spec(args.spec, dict(item.split("=", 1) for item in args.set))
    data = ex.prepare_data(spec)
    outcome = ex.run_feature_selection(spec, data)
    if outcome.report is not None:
        print(outcome.report.to_text(ex.FEATURE_LABELS))
        print(outcome.selection.to_text())
    print("best config:")
    print(outcome.best.dumps())

    if args.backtest_days:
        result = ex.run_backtest(spec.replace(test_days=args.backtest_days), outcome.best, data)
        result.to_csv(Path(spec.output_dir) / "backtest_best.csv")
        problems = ex.audit_leakage(result, data)
        print(f"backtest sMAPE {result.smape:.2f}% over {len(result.days)} days, {len(problems)} leakage violation(s)")


if __name__ == "__main__":
    main()
