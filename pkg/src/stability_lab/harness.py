"""Config-driven experiments: build a task, apply transforms, run verifiers, report."""

from __future__ import annotations

import copy
import itertools
import json
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import studies
from .core import MeteredAlgorithm, StatisticalTask, coin_bias_task, majority_algorithm, make_oracle_algorithm, make_tape_oracle, planted_task, sign_task
from .distribution import FiniteDistribution
from .dp import DpPipelineParams, check_perfect_generalization, dp_to_stab, selection_mechanism, stab_to_dp
from .errors import StabilityLabError
from .pac import HypothesisClass, agnostic_reduce, labeled_distribution, pac_task
from .rep import ThresholdingParams, amplify_replicability, derandomize_hh, glob_to_rep, rep_to_glob
from .reporting import ReportRow, all_passed, rows_to_csv, rows_to_summary, sort_rows
from .tape import DEFAULT_MAX_ENUM_BITS
from .verify import (
    audit_dp_exact,
    estimate_confidence,
    estimate_global_stability,
    estimate_replicability,
    find_heavy_hitters,
    neighbors,
)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TaskSpec(_Strict):
    id: str
    params: dict[str, Any] = Field(default_factory=dict)


class StepSpec(_Strict):
    name: str
    params: dict[str, Any] = Field(default_factory=dict)


class Caps(_Strict):
    max_enum_bits: int = DEFAULT_MAX_ENUM_BITS
    universe: int = 16
    wall_time: Optional[float] = None  # seconds; later verifiers are skipped once exceeded


class ExperimentConfig(_Strict):
    """Either a built-in ``study`` or a ``task`` with transforms and verifiers."""

    seed: int
    id: str = "experiment"
    study: Optional[str] = None
    params: dict[str, Any] = Field(default_factory=dict)
    task: Optional[TaskSpec] = None
    transforms: list[StepSpec] = Field(default_factory=list)
    verifiers: list[StepSpec] = Field(default_factory=list)
    trials: int = Field(20_000, ge=1)
    caps: Caps = Field(default_factory=Caps)
    output: Optional[str] = None

    @model_validator(mode="after")
    def _one_kind(self):
        if (self.study is None) == (self.task is None):
            raise ValueError("give exactly one of 'study' or 'task'")
        if self.study is not None and self.study not in studies.STUDIES:
            raise ValueError(f"unknown study {self.study!r}; known: {sorted(studies.STUDIES)}")
        if self.task is not None and self.task.id not in TASKS:
            raise ValueError(f"unknown task {self.task.id!r}; known: {sorted(TASKS)}")
        for step in self.transforms:
            if step.name not in TRANSFORMS:
                raise ValueError(f"unknown transform {step.name!r}; known: {sorted(TRANSFORMS)}")
        for step in self.verifiers:
            if step.name not in VERIFIERS:
                raise ValueError(f"unknown verifier {step.name!r}; known: {sorted(VERIFIERS)}")
        return self


def load_config(path_or_dict) -> ExperimentConfig:
    if isinstance(path_or_dict, (str, Path)):
        with open(path_or_dict) as fh:
            path_or_dict = json.load(fh)
    return ExperimentConfig.model_validate(path_or_dict)


# ---------------------------------------------------------------- registries


@dataclass
class Setup:
    alg: MeteredAlgorithm
    family: list
    task: Optional[StatisticalTask] = None
    info: dict = field(default_factory=dict)

    @property
    def dist(self) -> FiniteDistribution:
        return self.family[0]


def _law(pairs) -> FiniteDistribution:
    return FiniteDistribution.from_pairs((int(y), Fraction(str(p))) for y, p in pairs)


def _oracle(law: FiniteDistribution) -> Setup:
    data = studies.DATA
    return Setup(make_oracle_algorithm({data: law}), [data], planted_task({data: law}))


def _task_oracle(p):
    return _oracle(_law(p["law"]))


def _task_figure_one(p):
    return _oracle(_law(studies.FIGURE_ONE_LAW))


def _task_planted(p):
    return _oracle(studies.planted_law(Fraction(str(p.get("eta", "1/4")))))


def _task_tape_oracle(p):
    laws = [_law(law) for law in p["laws"]]
    bits = (len(laws) - 1).bit_length()
    data = studies.DATA
    marginal = {}
    for law in laws:
        for y, q in law.items():
            marginal[y] = marginal.get(y, 0) + q / len(laws)
    return Setup(make_tape_oracle({data: laws}, bits), [data], planted_task({data: FiniteDistribution.from_pairs(marginal.items())}))


def _task_heavy_hitter_oracle(p):
    data = studies.DATA
    return Setup(studies.heavy_hitter_oracle(), [data])


def _task_amplification_oracle(p):
    return Setup(studies.amplification_oracle(), [studies.DATA])


def _task_coin_bias(p):
    grid = coin_bias_task(p.get("d", 1), p.get("alpha", 0.1), p.get("step"))
    biases = p.get("biases", [0.3] * grid.d)
    return Setup(grid.rounding_algorithm(p.get("n", 100)), [grid.product(biases)], grid.task())


def _task_majority(p):
    bias = Fraction(str(p.get("p", "0.7")))
    dist = FiniteDistribution.from_pairs([(0, 1 - bias), (1, bias)])
    return Setup(majority_algorithm(p.get("n", 25)), [dist], sign_task())


def _task_identity(p):
    bias = Fraction(str(p.get("p", "1/2")))
    dist = FiniteDistribution.from_pairs([(0, 1 - bias), (1, bias)])
    return Setup(studies.identity_algorithm(), [dist])


def _task_xor_mechanism(p):
    dist = FiniteDistribution.from_pairs([(0, Fraction(1, 2)), (1, Fraction(1, 2))])
    return Setup(studies.xor_mechanism(), [dist])


def _task_selection(p):
    universe = p.get("universe", [0, 1, 2])
    alg = selection_mechanism(universe, p.get("n", 4), p.get("epsilon", 1.0), p.get("delta", 0.05))
    return Setup(alg, [FiniteDistribution.uniform(universe)])


def _task_pac_thresholds(p):
    size = p.get("domain", 16)
    cls = HypothesisClass.from_json(p["class"]) if "class" in p else HypothesisClass.thresholds(size)
    target = p.get("target", cls.domain_size // 2)
    dist = labeled_distribution(cls.matrix[target].astype(int), Fraction(str(p.get("noise", "0.1"))))
    alpha = p.get("alpha", 0.15)
    alg = agnostic_reduce(cls, alpha, p.get("beta", 0.05))
    return Setup(alg, [dist], pac_task(cls, alpha), {"class": cls})


TASKS: dict[str, Callable[[dict], Setup]] = {
    "oracle": _task_oracle,
    "figure-one": _task_figure_one,
    "planted": _task_planted,
    "tape-oracle": _task_tape_oracle,
    "heavy-hitter-oracle": _task_heavy_hitter_oracle,
    "amplification-oracle": _task_amplification_oracle,
    "coin-bias": _task_coin_bias,
    "majority": _task_majority,
    "identity": _task_identity,
    "xor-mechanism": _task_xor_mechanism,
    "dp-selection": _task_selection,
    "pac-thresholds": _task_pac_thresholds,
}


def _tf_glob2rep(s: Setup, p, seed, caps):
    params = ThresholdingParams.default(**{k: p[k] for k in ("eta", "c_glob", "rho", "T", "beta", "tau_prime") if k in p})
    return replace(s, alg=glob_to_rep(s.alg, params, p.get("selection", "order")))


def _tf_derandomize(s, p, seed, caps):
    return replace(s, alg=derandomize_hh(s.alg, p["eta"], p.get("gamma_prime", 0.05), max_bits=caps.max_enum_bits))


def _tf_rep2glob(s, p, seed, caps):
    return replace(s, alg=rep_to_glob(s.alg, p.get("gamma", 0.1), p.get("tau", 0.05), s.family, seed=seed))


def _tf_amplify(s, p, seed, caps):
    return replace(s, alg=amplify_replicability(s.alg, p["nu"], p["rho"], family=s.family, seed=seed))


def _tf_stab2dp(s, p, seed, caps):
    keys = ("epsilon", "delta", "eta", "beta", "c_glob", "users", "c1", "c", "list_runs", "dummy")
    params = DpPipelineParams(**{k: p[k] for k in keys if k in p})
    return replace(s, alg=stab_to_dp(s.alg, params, s.task, s.family if s.task else (), seed=seed))


def _tf_dp2stab(s, p, seed, caps):
    alg, reports = dp_to_stab(s.alg, p["epsilon"], p["delta"], p["users"], s.family, seed=seed, max_bits=caps.max_enum_bits)
    return replace(s, alg=alg, info=s.info | {"dp2stab": reports})


TRANSFORMS = {
    "glob2rep": _tf_glob2rep,
    "derandomize": _tf_derandomize,
    "rep2glob": _tf_rep2glob,
    "amplify": _tf_amplify,
    "stab2dp": _tf_stab2dp,
    "dp2stab": _tf_dp2stab,
}


def _verdict(value, p) -> Optional[bool]:
    if "min" not in p and "max" not in p:
        return None
    return ("min" not in p or value >= p["min"]) and ("max" not in p or value <= p["max"])


def _v_replicability(s, p, trials, seed, caps):
    rep = estimate_replicability(s.alg, s.dist, trials, seed=seed)
    return [ReportRow("replicability", rep.estimate, rep.ci_halfwidth, s.alg.bit_budget, trials * s.alg.sample_size, _verdict(rep.estimate, p))]


def _v_global_stability(s, p, trials, seed, caps):
    rep = estimate_global_stability(s.alg, s.dist, trials, seed=seed)
    return [ReportRow("global_stability", rep.estimate, rep.ci_halfwidth, s.alg.bit_budget, trials * s.alg.sample_size, _verdict(rep.estimate, p))]


def _v_heavy_hitters(s, p, trials, seed, caps):
    hits = find_heavy_hitters(s.alg, s.dist, p["eta"], p.get("trials"), seed=seed)
    rows = [ReportRow("heavy_hitter_count", len(hits), None, s.alg.bit_budget, None, _verdict(len(hits), p))]
    for y, w in hits:
        rows.append(ReportRow(f"heavy_hitter_weight[{y}]", w, None, s.alg.bit_budget, None, None))
    return rows


def _v_confidence(s, p, trials, seed, caps):
    if s.task is None:
        raise StabilityLabError("confidence needs a task with accepted outputs")
    rep = estimate_confidence(s.alg, s.task, s.dist, trials, seed=seed)
    return [ReportRow("failure_rate", rep.failure_rate, rep.ci_halfwidth, s.alg.bit_budget, trials * s.alg.sample_size, _verdict(rep.failure_rate, p))]


def _v_bits(s, p, trials, seed, caps):
    return [ReportRow("bits", s.alg.bit_budget, None, s.alg.bit_budget, None, _verdict(s.alg.bit_budget, p))]


def _v_audit_dp(s, p, trials, seed, caps):
    users = p.get("users")
    universe = p.get("universe", [0, 1])
    if len(universe) > caps.universe:
        raise StabilityLabError(f"universe of {len(universe)} exceeds the cap {caps.universe}")
    pairs = neighbors(universe, s.alg.sample_size, user_level=users is not None, users=users)
    audit = audit_dp_exact(s.alg, pairs, p["epsilon"], users is not None, caps.max_enum_bits)
    w = audit.witness_json()
    note = f"pairs={audit.pairs_audited};witness={w['S']}->{w['S_prime']}"
    return [ReportRow("delta_max", audit.delta_max, None, s.alg.bit_budget, None, audit.passes(p["delta"]) if "delta" in p else None, note)]


def _v_perfect_generalization(s, p, trials, seed, caps):
    rep = check_perfect_generalization(s.alg, s.dist, p["epsilon"], p["delta"], p.get("beta", 0.05), p.get("samples", 200), seed, max_bits=caps.max_enum_bits)
    return [
        ReportRow("pg_failed_fraction", rep.failed_fraction, None, s.alg.bit_budget, None, rep.passed),
        ReportRow("pg_max_divergence", rep.max_divergence, None, s.alg.bit_budget, None, None),
    ]


VERIFIERS = {
    "replicability": _v_replicability,
    "global_stability": _v_global_stability,
    "heavy_hitters": _v_heavy_hitters,
    "confidence": _v_confidence,
    "bits": _v_bits,
    "audit_dp": _v_audit_dp,
    "perfect_generalization": _v_perfect_generalization,
}


# ---------------------------------------------------------------- running


def _failed(metric: str, exc: Exception) -> ReportRow:
    return ReportRow(metric, float("nan"), status="failed", passed=False, note=f"{type(exc).__name__}: {exc}")


def _run_chain(cfg: ExperimentConfig) -> list:
    start = time.perf_counter()
    try:
        setup = TASKS[cfg.task.id](cfg.task.params)
        for i, step in enumerate(cfg.transforms):
            setup = TRANSFORMS[step.name](setup, step.params, (cfg.seed, 100 + i), cfg.caps)
    except (StabilityLabError, ValueError) as exc:
        return [_failed("setup", exc)]
    rows = []
    for i, step in enumerate(cfg.verifiers):
        t0 = time.perf_counter()
        if cfg.caps.wall_time is not None and t0 - start > cfg.caps.wall_time:
            rows.append(ReportRow(step.name, float("nan"), status="skipped", note="wall-time budget exhausted"))
            continue
        try:
            got = VERIFIERS[step.name](setup, step.params, cfg.trials, (cfg.seed, i), cfg.caps)
        except (StabilityLabError, ValueError) as exc:
            got = [_failed(step.name, exc)]
        for r in got:
            r.wall_time = time.perf_counter() - t0
        rows.extend(got)
    return rows


def run_experiment(cfg, write: bool = True) -> list:
    """Rows for one config; writes ``<output>.csv`` and ``<output>.json`` when ``output`` is set."""
    cfg = cfg if isinstance(cfg, ExperimentConfig) else load_config(cfg)
    t0 = time.perf_counter()
    if cfg.study is not None:
        try:
            rows = studies.STUDIES[cfg.study](cfg.seed, **cfg.params)
        except (StabilityLabError, ValueError) as exc:
            rows = [_failed(cfg.study, exc)]
        elapsed = time.perf_counter() - t0
        for r in rows:
            r.wall_time = elapsed / max(len(rows), 1)
    else:
        rows = _run_chain(cfg)
    for r in rows:
        r.experiment = cfg.id
    rows = sort_rows(rows)
    if write and cfg.output:
        write_report(rows, cfg.output, {"config": cfg.model_dump()})
    return rows


def write_report(rows, output: str, extra: Optional[dict] = None) -> None:
    base = Path(output)
    base.parent.mkdir(parents=True, exist_ok=True)
    base.with_suffix(".csv").write_text(rows_to_csv(rows))
    base.with_suffix(".json").write_text(json.dumps(rows_to_summary(rows, extra), indent=2, default=str))


def _set_path(obj: dict, path: str, value) -> None:
    keys = path.split(".")
    for k in keys[:-1]:
        obj = obj[int(k)] if isinstance(obj, list) else obj.setdefault(k, {})
    last = keys[-1]
    if isinstance(obj, list):
        obj[int(last)] = value
    else:
        obj[last] = value


def sweep(cfg, grid: dict, write: bool = True) -> list:
    """Run the cross product of dotted-path overrides; each row records its grid point."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("sweep grid must be nonempty")
    cfg = cfg if isinstance(cfg, ExperimentConfig) else load_config(cfg)
    base = cfg.model_dump()
    axes = sorted(grid)
    rows = []
    for values in itertools.product(*(grid[a] for a in axes)):
        point = dict(zip(axes, values))
        raw = copy.deepcopy(base)
        raw["output"] = None
        for path, v in point.items():
            _set_path(raw, path, v)
        for r in run_experiment(ExperimentConfig.model_validate(raw), write=False):
            r.grid = point | r.grid
            rows.append(r)
    rows = sort_rows(rows)
    if write and cfg.output:
        write_report(rows, cfg.output, {"config": base, "grid": grid})
    return rows


# ---------------------------------------------------------------- acceptance


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    rows: list
    csv: str
    seconds: float

    def line(self) -> str:
        failing = [f"{r.metric}{r.grid or ''}={r.value:.6g}" for r in self.rows if r.passed is False]
        tail = "" if self.passed else " failing: " + ", ".join(failing)
        return f"criterion {self.number:2d} [{self.name}]: {'PASS' if self.passed else 'FAIL'} ({self.seconds:.1f}s){tail}"


def run_acceptance(seed: int = 2024, only: Optional[Sequence[int]] = None, determinism: bool = True, output: Optional[str] = None) -> list:
    """Criteria 1-9 as studies, then criterion 10: each re-run gives identical CSV bytes."""
    results = []
    for number, name in studies.ACCEPTANCE:
        if only and number not in only:
            continue
        t0 = time.perf_counter()
        cfg = ExperimentConfig(seed=seed, id=f"criterion-{number}", study=name)
        rows = run_experiment(cfg, write=False)
        results.append(CriterionResult(number, name, all_passed(rows), rows, rows_to_csv(rows), time.perf_counter() - t0))
        if output:
            write_report(rows, str(Path(output) / f"criterion-{number}"))
    if determinism and (not only or 10 in only):
        t0 = time.perf_counter()
        mismatched = []
        for res in results:
            again = run_experiment(ExperimentConfig(seed=seed, id=f"criterion-{res.number}", study=res.name), write=False)
            if rows_to_csv(again) != res.csv:
                mismatched.append(res.number)
        row = ReportRow("byte_identical_reruns", float(len(results) - len(mismatched)), passed=not mismatched, note=f"mismatched={mismatched}", experiment="criterion-10")
        results.append(CriterionResult(10, "determinism", not mismatched, [row], rows_to_csv([row]), time.perf_counter() - t0))
    return results
