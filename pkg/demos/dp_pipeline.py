"""Stable to private and back: an exact user-level audit, then extraction of a deterministic learner.

Run: python3 demos/dp_pipeline.py
"""

from stability_lab.harness import ExperimentConfig, run_experiment

for study in ("dp-pipeline", "dp-to-stability"):
    print(f"== {study}")
    for row in run_experiment(ExperimentConfig(seed=2024, study=study), write=False):
        verdict = {True: "pass", False: "FAIL", None: "info"}[row.passed]
        print(f"  {row.metric:<28} {str(row.grid or ''):<14} {row.value:<12.6g} {verdict:<5} {row.note}")
