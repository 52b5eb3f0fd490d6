#!/usr/bin/env python3
"""
Run the acceptance scenarios in benchmarks/ and write a combined report
"""

import argparse
import logging
import os

from utils.benchmark import AcceptanceRunner, AcceptanceScenario


def load_scenarios(benchmark_dir, only=None):
    scenarios = []
    if not os.path.exists(benchmark_dir):
        return scenarios
    for filename in sorted(os.listdir(benchmark_dir)):
        if not filename.endswith('.json'):
            continue
        filepath = os.path.join(benchmark_dir, filename)
        try:
            scenario = AcceptanceScenario.from_json(filepath)
        except (OSError, ValueError, TypeError) as e:
            print(f"Failed to load {filename}: {e}")
            continue
        if only and scenario.name not in only:
            continue
        scenarios.append(scenario)
        print(f"Loaded scenario: {scenario.name}")
    return scenarios


def main(argv=None):
    parser = argparse.ArgumentParser(description="Run csdflow acceptance scenarios")
    parser.add_argument("--benchmarks", default="benchmarks", help="directory of scenario JSON files")
    parser.add_argument("--output", default="benchmark_results", help="results directory")
    parser.add_argument("--only", nargs="*", help="scenario names to run")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    print("=== csdflow Acceptance Runner ===\n")
    runner = AcceptanceRunner(output_dir=args.output)
    scenarios = load_scenarios(args.benchmarks, args.only)
    if not scenarios:
        print("No scenarios found.")
        return 1

    print(f"\nRunning {len(scenarios)} scenario(s)...\n")
    for scenario in scenarios:
        print(f"\n{'='*60}")
        print(f"Scenario: {scenario.name}")
        print(f"Description: {scenario.description}")
        print(f"{'='*60}")

        results = runner.run_scenario(scenario)

        print(f"\n--- Results Summary ---")
        print(f"Stop reason: {results.stop_reason} at t = {results.final_time:.6g} ({results.steps} steps)")
        print(f"Wall time: {results.wall_seconds:.1f}s")
        for name, check in results.checks.items():
            status = "PASS" if check['passed'] else "FAIL"
            print(f"  [{status}] {name}: {check['value']} (limit {check['limit']})")

    print(f"\n{'='*60}")
    print("Generating acceptance report...")
    report_path = os.path.join(runner.output_dir, "benchmark_report.json")
    runner.generate_report(report_path)

    passed = sum(r.passed for r in runner.results)
    print(f"\n{'='*60}")
    print(f"Acceptance complete: {passed}/{len(runner.results)} scenario(s) passed")
    print(f"Results saved to: {runner.output_dir}/")
    print(f"{'='*60}\n")
    return 0 if passed == len(runner.results) else 1


if __name__ == "__main__":
    raise SystemExit(main())
