"""Runs the four simulation scenarios back to back.

    python manage.py runscript reproduce_simulations --script-args <output_dir> [replications] [workers]

Without a replication count, scenario i runs 1400 replicates and the others 700.
"""
from pathlib import Path

from core.choices import Family, Scenario
from core.simlab import ScenarioSpec, run_replications, summary_frame, write_plot_csv, write_summary_csv


def run(*args):
    output_dir = Path(args[0]) if args else Path('simulations')
    replications = int(args[1]) if len(args) > 1 else None
    workers = int(args[2]) if len(args) > 2 else None
    output_dir.mkdir(parents=True, exist_ok=True)

    for scenario in Scenario:
        spec = ScenarioSpec(scenario=scenario, replications=replications)
        results, summary = run_replications(spec, workers)
        write_summary_csv(summary, output_dir / f'scenario_{scenario.value}_summary.csv')
        write_plot_csv(spec, results, output_dir / f'scenario_{scenario.value}_replicates.csv')
        print(f'Scenario {scenario.value} ({scenario.label}), {summary.failures} failed')
        print(summary_frame(summary).to_string(index=False))

    # the propensity-covariate estimator is slower; it gets a smaller design
    spec = ScenarioSpec(
        scenario=Scenario.BOTH_CORRECT, k=50, group_size=8, replications=replications or 200,
        families=(Family.DRBC, Family.DRPICOV),
    )
    results, summary = run_replications(spec, workers)
    write_summary_csv(summary, output_dir / 'picov_summary.csv')
    write_plot_csv(spec, results, output_dir / 'picov_replicates.csv')
    print(summary_frame(summary).to_string(index=False))
