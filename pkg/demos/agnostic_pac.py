"""Replicable agnostic learning of thresholds on 16 points with 10% label noise.

Run: python3 demos/agnostic_pac.py   (about 20 seconds)
"""

from stability_lab.harness import ExperimentConfig, run_experiment

rows = run_experiment(ExperimentConfig(seed=2024, study="agnostic-pac"), write=False)
for row in rows:
    ci = f"+- {row.ci:.4f}" if row.ci is not None else ""
    print(f"{row.metric:<42} {str(row.grid or ''):<16} {row.value:<12.6g} {ci:<10} {row.note}")
