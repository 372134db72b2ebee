"""Random thresholding on a four-output law: the order rule versus the estimate-based rule.

Run: python3 demos/figure_one.py
"""

from fractions import Fraction

from stability_lab.core import make_oracle_algorithm
from stability_lab.distribution import FiniteDistribution
from stability_lab.rep import ThresholdingParams, glob_to_rep, threshold_analysis
from stability_lab.studies import DATA, FIGURE_ONE_LAW
from stability_lab.verify import estimate_global_stability, estimate_replicability

law = FiniteDistribution.from_pairs((y, Fraction(p)) for y, p in FIGURE_ONE_LAW)
oracle = make_oracle_algorithm({DATA: law})
params = ThresholdingParams.default(eta=0.25, T=7)

glob = estimate_global_stability(oracle, DATA, 100_000, seed=0)
print(f"input law {dict((y, float(p)) for y, p in law.items())}")
print(f"input collision probability {glob.estimate:.4f} +- {glob.ci_halfwidth:.4f}")
print(f"thresholds 0.25 - i*{params.gamma:.4g} for i = 1..{params.T_eff}")

for rule in ("order", "min_estimate"):
    alg = glob_to_rep(oracle, params, rule)
    rep = estimate_replicability(alg, DATA, 100_000, seed=1)
    predicted = threshold_analysis(law, params, rule).predicted
    print(f"{rule:>12}: {alg.bit_budget} bits, replicability {rep.estimate:.4f} +- {rep.ci_halfwidth:.4f} (predicted {predicted:.4f})")
