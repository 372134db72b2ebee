"""Agnostic learning of finite hypothesis classes through list learners.

Labeled examples ``(x, y)`` are encoded as the integer ``2*x + y``. A
hypothesis is a boolean row over the domain; its output id is its row index.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    BOTTOM,
    MeteredAlgorithm,
    Sample,
    StatisticalTask,
    attach_laws,
    make_rng,
    simulate,
)
from .distribution import FiniteDistribution
from .errors import CapExceededError
from .rep import ThresholdingParams, derandomize_hh, glob_to_rep
from .tape import BitTape, bits_for
from .verify import draw_outputs

VC_BRUTE_FORCE_LIMIT = 16
ROWS_PER_CHUNK = 20_000


def sauer_bound(n: int, vc: int) -> int:
    """Number of labelings of n points a VC-dimension-vc class can induce at most."""
    return sum(math.comb(n, i) for i in range(min(vc, n) + 1))


@dataclass(frozen=True, eq=False)
class HypothesisClass:
    matrix: np.ndarray
    name: str = "class"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=bool)
        if m.ndim != 2 or m.shape[0] == 0:
            raise ValueError("need a nonempty 2-D hypothesis matrix")
        if len(np.unique(m, axis=0)) != m.shape[0]:
            raise ValueError("hypotheses must be distinct")
        object.__setattr__(self, "matrix", m)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def domain_size(self) -> int:
        return self.matrix.shape[1]

    @cached_property
    def vc_dim(self) -> int:
        """Largest shattered subset size, by brute force (domains up to 16 points)."""
        if self.domain_size > VC_BRUTE_FORCE_LIMIT:
            raise CapExceededError(f"brute-force VC needs |X| <= {VC_BRUTE_FORCE_LIMIT}")
        best = 0
        for d in range(1, self.domain_size + 1):
            if 1 << d > self.size:
                break
            if any(self.shatters(sub) for sub in itertools.combinations(range(self.domain_size), d)):
                best = d
            else:
                break
        return best

    def shatters(self, points: Sequence[int]) -> bool:
        restricted = self.matrix[:, list(points)]
        return len(np.unique(restricted, axis=0)) == 1 << len(points)

    @cached_property
    def loss(self) -> np.ndarray:
        """loss[h, 2x + y] = 1 when h(x) != y."""
        out = np.empty((self.size, 2 * self.domain_size), dtype=np.int64)
        out[:, 0::2] = self.matrix
        out[:, 1::2] = ~self.matrix
        return out

    @cached_property
    def disagreement(self) -> np.ndarray:
        """dis[x, h, g] = 1 when h(x) != g(x)."""
        m = self.matrix.T.astype(np.int64)
        return (m[:, :, None] != m[:, None, :]).astype(np.float64)

    # constructors

    @classmethod
    def thresholds(cls, n: int) -> "HypothesisClass":
        """h_k(x) = [x >= k] for k = 0 .. n (n + 1 hypotheses, VC dimension 1)."""
        x = np.arange(n)
        return cls(np.stack([x >= k for k in range(n + 1)]), f"thresholds-{n}")

    @classmethod
    def intervals(cls, n: int) -> "HypothesisClass":
        """Indicators of [a, b) for 0 <= a < b <= n, plus the empty set."""
        x = np.arange(n)
        rows = [np.zeros(n, dtype=bool)]
        rows += [(x >= a) & (x < b) for a in range(n) for b in range(a + 1, n + 1)]
        return cls(np.stack(rows), f"intervals-{n}")

    @classmethod
    def random(cls, n: int, vc: int, size: int, seed=0) -> "HypothesisClass":
        """Random sets of at most ``vc`` points, containing all subsets of one ``vc``-set.

        Sets of size at most ``vc`` cannot shatter ``vc + 1`` points, so the VC
        dimension is exactly ``vc``.
        """
        rng = make_rng(seed)
        base = rng.choice(n, size=vc, replace=False)
        rows = set()
        for mask in range(1 << vc):
            rows.add(frozenset(int(base[j]) for j in range(vc) if mask >> j & 1))
        pool = [frozenset(c) for k in range(vc + 1) for c in itertools.combinations(range(n), k)]
        order = rng.permutation(len(pool))
        for i in order:
            if len(rows) >= size:
                break
            rows.add(pool[i])
        mat = np.zeros((len(rows), n), dtype=bool)
        for r, s in enumerate(sorted(rows, key=lambda s: (len(s), sorted(s)))):
            mat[r, list(s)] = True
        return cls(mat, f"random-n{n}-vc{vc}")

    @classmethod
    def from_json(cls, obj) -> "HypothesisClass":
        """``{"domain_size": n, "hypotheses": [[0, 1, ...], ...]}`` or a path to such a file."""
        if isinstance(obj, str):
            with open(obj) as fh:
                obj = json.load(fh)
        mat = np.array(obj["hypotheses"], dtype=bool)
        if mat.shape[1] != obj["domain_size"]:
            raise ValueError("hypothesis length does not match domain_size")
        return cls(mat, obj.get("name", "class"))

    def to_json(self) -> dict:
        return {"name": self.name, "domain_size": self.domain_size, "hypotheses": self.matrix.astype(int).tolist()}


@dataclass(frozen=True)
class LabeledSample:
    points: tuple

    def __post_init__(self):
        object.__setattr__(self, "points", tuple((int(x), int(y)) for x, y in self.points))

    def ids(self) -> np.ndarray:
        return np.array([2 * x + y for x, y in self.points], dtype=np.int64)


def labeled_distribution(
    labels: Sequence[int], noise=0, marginal: Optional[Sequence] = None
) -> FiniteDistribution:
    """Examples with ``x`` from ``marginal`` (uniform by default), label flipped w.p. ``noise``."""
    n = len(labels)
    noise = Fraction(str(noise)) if isinstance(noise, float) else Fraction(noise)
    px = [Fraction(1, n)] * n if marginal is None else [Fraction(str(p)) if isinstance(p, float) else Fraction(p) for p in marginal]
    pairs = []
    for x, lab in enumerate(labels):
        pairs.append((2 * x + int(lab), px[x] * (1 - noise)))
        pairs.append((2 * x + 1 - int(lab), px[x] * noise))
    return FiniteDistribution.from_pairs(p for p in pairs if p[1] > 0)


def err(cls: HypothesisClass, h: int, data) -> Fraction | float:
    """Error of hypothesis ``h``: exact on a distribution, empirical on a sample."""
    row = cls.loss[h]
    if isinstance(data, FiniteDistribution):
        total = sum(p * int(row[z]) for z, p in data.items())
        return total
    ids = data.ids() if isinstance(data, LabeledSample) else np.asarray(data.points if isinstance(data, Sample) else data)
    if len(ids) == 0:
        return 0.0
    return float(row[ids].mean())


def errors_on(cls: HypothesisClass, dist: FiniteDistribution) -> np.ndarray:
    """Exact error of every hypothesis, as floats."""
    p = np.zeros(2 * cls.domain_size)
    for z, q in dist.items():
        p[z] = float(q)
    return cls.loss @ p


def optimal_error(cls: HypothesisClass, dist: FiniteDistribution):
    return min(err(cls, h, dist) for h in range(cls.size))


def all_labelings(cls: HypothesisClass, points: Sequence[int], cap: int = 10_000_000) -> set:
    """Distinct label vectors that hypotheses induce on the (unlabeled) points."""
    points = [int(x) for x in points]
    if len(points) * cls.size > cap:
        raise CapExceededError(f"{len(points)} points x {cls.size} hypotheses exceed the cap")
    labelings = {tuple(row.astype(int).tolist()) for row in cls.matrix[:, points]}
    assert len(labelings) <= sauer_bound(len(set(points)), cls.vc_dim)
    return labelings


def pac_task(cls: HypothesisClass, alpha: float) -> StatisticalTask:
    """Accept hypotheses within ``alpha`` of the best error in the class."""

    def accepted(dist, h):
        if not 0 <= h < cls.size:
            return False
        return err(cls, h, dist) <= optimal_error(cls, dist) + Fraction(str(alpha))

    return StatisticalTask(cls.name, range(2 * cls.domain_size), range(cls.size), accepted)


# ---------------------------------------------------------------- list learners


@dataclass(frozen=True)
class RealizableListLearner:
    """``learn(xs, ys)`` returns a sorted list of hypothesis indices.

    ``tolerance`` is set when the learner is "every hypothesis with empirical
    error at most tolerance"; the reduction then uses a vectorised path.
    """

    learn: Callable
    nu: float
    list_bound: int
    sample_size: int
    tolerance: Optional[float] = None


def default_realizable_list_learner(cls: HypothesisClass, alpha: float, beta: float) -> RealizableListLearner:
    """All hypotheses with empirical error at most alpha/2.

    Sample size ceil((ln|H| + ln(1/beta)) / (alpha/8)); declared weight nu = 1.
    """
    n = math.ceil((math.log(cls.size) + math.log(1 / beta)) / (alpha / 8))
    limit = _mistake_limit(alpha / 2, n)

    def learn(xs, ys):
        xs = np.asarray(xs, dtype=np.int64)
        ys = np.asarray(ys, dtype=bool)
        mistakes = (cls.matrix[:, xs] != ys[None, :]).sum(axis=1)
        return [int(h) for h in np.flatnonzero(mistakes <= limit)]

    return RealizableListLearner(learn, 1.0, cls.size, n, alpha / 2)


def _mistake_limit(rate: float, n: int) -> int:
    return math.floor(rate * n + 1e-9)


# ---------------------------------------------------------------- the reduction


@dataclass(frozen=True)
class AgnosticParams:
    alpha: float
    beta: float
    nu: float
    runs: int  # T unlabeled samples
    unlabeled_size: int
    labeled_max: int
    prune_count: float
    pruned_bound: int
    c_prime: float = 0.5

    @property
    def bits(self) -> int:
        return bits_for(self.pruned_bound)

    def labeled_size(self, candidates: int) -> int:
        """ceil(2 (ln|C| + ln(2/beta)) / alpha^2)."""
        return math.ceil(2 * (math.log(max(candidates, 1)) + math.log(2 / self.beta)) / self.alpha**2)


def agnostic_params(cls: HypothesisClass, alpha: float, beta: float, learner: RealizableListLearner, c_prime: float = 0.5) -> AgnosticParams:
    nu = learner.nu
    runs = math.ceil(8 / nu * math.log(4 / beta))
    pruned = min(math.ceil(2 / nu * sauer_bound(learner.sample_size, cls.vc_dim)), cls.size)
    labeled_max = math.ceil(2 * (math.log(cls.size) + math.log(2 / beta)) / alpha**2)
    return AgnosticParams(alpha, beta, nu, runs, learner.sample_size, labeled_max, c_prime * nu * runs, pruned, c_prime)


@dataclass
class ReductionTrace:
    weights: np.ndarray  # w(h) over the class
    labelings: list  # distinct labelings per unlabeled run
    candidates: np.ndarray  # ids with w > 0
    labeled_size: int
    empirical_errors: np.ndarray
    pruned: np.ndarray


def _select(pruned_sorted: np.ndarray, r: int, bits: int) -> int:
    if len(pruned_sorted) == 0:
        return BOTTOM
    return int(pruned_sorted[(r * len(pruned_sorted)) >> bits])


def agnostic_reduce(
    cls: HypothesisClass,
    alpha: float,
    beta: float,
    learner: Optional[RealizableListLearner] = None,
    c_prime: float = 0.5,
) -> MeteredAlgorithm:
    """Randomized agnostic learner built from a realizable list learner.

    Runs the learner on every labeling of ``T`` unlabeled samples, counts how
    often each hypothesis is listed, prunes by empirical error on a fresh
    labeled sample and by count, and returns a tape-chosen pruned hypothesis
    (index ``floor(r |P| / 2^b)`` in sorted order), or BOTTOM if none survive.
    """
    learner = learner or default_realizable_list_learner(cls, alpha / 8, 1 / 8)
    params = agnostic_params(cls, alpha, beta, learner, c_prime)
    T, n_u, n_l_max, bits = params.runs, params.unlabeled_size, params.labeled_max, params.bits
    vc = cls.vc_dim

    def trace(s: Sample) -> ReductionTrace:
        ids = s.points
        weights = np.zeros(cls.size, dtype=np.int64)
        labelings = []
        for i in range(T):
            xs = ids[i * n_u : (i + 1) * n_u] // 2
            labs = all_labelings(cls, xs)
            labelings.append(labs)
            for lab in sorted(labs):
                for h in learner.learn(xs, np.array(lab, dtype=bool)):
                    weights[h] += 1
        cands = np.flatnonzero(weights > 0)
        n_l = params.labeled_size(len(cands))
        lab_ids = ids[T * n_u : T * n_u + n_l]
        mistakes = cls.loss[:, lab_ids].sum(axis=1)
        errs = mistakes / n_l
        best = mistakes[cands].min()
        keep = (mistakes <= best + 0.75 * alpha * n_l + 1e-9) & (weights >= params.prune_count) & (weights > 0)
        return ReductionTrace(weights, labelings, cands, n_l, errs, np.flatnonzero(keep))

    def fn(s: Sample, tape: BitTape) -> int:
        return _select(trace(s).pruned, tape.read_int(bits), bits)

    fast = learner.tolerance is not None

    def batch(dist, rng, count):
        return _reduce_batch(cls, params, learner, vc, dist, rng, count)

    def tally(dist, rng, count):
        keep = batch(dist, rng, count)["keep"]
        k = keep.sum(axis=1)
        rank = np.cumsum(keep, axis=1) - 1
        total = 1 << bits
        safe_k = np.maximum(k, 1)[:, None]
        hi = ((rank + 1) * total + safe_k - 1) // safe_k
        lo = (rank * total + safe_k - 1) // safe_k
        counts = np.where(keep, hi - lo, 0)
        bottom = np.where(k == 0, total, 0)[:, None]
        outputs = np.append(np.arange(cls.size, dtype=np.int64), BOTTOM)
        return outputs, np.concatenate([counts, bottom], axis=1)

    def simulator(dist, rng, tapes):
        flat = tapes.reshape(-1)
        keep = batch(dist, rng, len(flat))["keep"]
        k = keep.sum(axis=1)
        target = (flat * k) >> bits
        pick = np.argmax(np.cumsum(keep, axis=1) > target[:, None], axis=1)
        return np.where(k > 0, pick, BOTTOM).reshape(tapes.shape)

    return MeteredAlgorithm(
        fn,
        T * n_u + n_l_max,
        bits,
        f"agnostic({cls.name})",
        simulator=simulator if fast else None,
        tally=tally if fast else None,
        meta={"params": params, "trace": trace, "batch": batch, "learner": learner, "class": cls},
    )


def _reduce_batch(cls, params: AgnosticParams, learner, vc, dist, rng, count) -> dict:
    """Vectorised reduction on ``count`` fresh samples (default-style learners only)."""
    H, X = cls.size, cls.domain_size
    probs = np.zeros(2 * X)
    for z, q in dist.items():
        probs[z] = float(q)
    px = probs[0::2] + probs[1::2]
    px = px / px.sum()
    probs = probs / probs.sum()
    limit = _mistake_limit(learner.tolerance, params.unlabeled_size)
    dis = cls.disagreement.reshape(X, H * H)
    upper = np.triu(np.ones((H, H), dtype=bool), k=1)  # upper[h', h]: h' < h
    T = params.runs
    weights = np.zeros((count, H), dtype=np.int64)
    per_chunk = max(1, ROWS_PER_CHUNK // T)
    for start in range(0, count, per_chunk):
        c = min(per_chunk, count - start)
        cnt = rng.multinomial(params.unlabeled_size, px, size=(c, T)).reshape(c * T, X)
        mistakes = (cnt.astype(np.float64) @ dis).reshape(c * T, H, H)
        same = mistakes == 0
        rep = ~np.any(same & upper[None], axis=1)
        distinct_pts = (cnt > 0).sum(axis=1)
        bound = np.array([sauer_bound(int(d), vc) for d in range(X + 1)])
        assert np.all(rep.sum(axis=1) <= bound[distinct_pts]), "Sauer bound violated"
        listed = mistakes <= limit
        w = np.einsum("rh,rhg->rg", rep.astype(np.int64), listed.astype(np.int64))
        weights[start : start + c] = w.reshape(c, T, H).sum(axis=1)
    cand = weights > 0
    n_l = np.array([params.labeled_size(int(k)) for k in cand.sum(axis=1)], dtype=np.int64)
    lab = rng.multinomial(n_l, probs)
    mistakes = lab @ cls.loss.T
    best = np.where(cand, mistakes, np.iinfo(np.int64).max).min(axis=1)
    keep = cand & (mistakes <= best[:, None] + 0.75 * params.alpha * n_l[:, None] + 1e-9)
    keep &= weights >= params.prune_count
    return {"keep": keep, "weights": weights, "candidates": cand, "labeled_size": n_l, "mistakes": mistakes}


# ---------------------------------------------------------------- end to end


def pac_budget_formula(pruned_bound: int, nu: float, rho: float) -> int:
    """ceil(log2(2 |Pruned| / nu)) + ceil(log2(1/rho)) + 1."""
    return math.ceil(math.log2(2 * pruned_bound / nu)) + math.ceil(math.log2(1 / rho)) + 1


def agnostic_replicable_learner(
    cls: HypothesisClass,
    alpha: float,
    beta: float,
    rho: float,
    hh_weight: Optional[float] = None,
    gamma_prime: float = 0.05,
    family: Sequence[FiniteDistribution] = (),
    pilot_runs: int = 0,
    seed=0,
    learner: Optional[RealizableListLearner] = None,
    selection: str = "order",
) -> MeteredAlgorithm:
    """Reduction, then derandomization, then random thresholding.

    ``hh_weight`` defaults to nu / (2 |Pruned| bound) (1 for a single
    hypothesis). With ``pilot_runs`` the derandomized learner's output law on
    each family distribution is estimated from that many runs and attached,
    so the thresholding step can be simulated at full estimation size.
    """
    reduce = agnostic_reduce(cls, alpha, beta, learner)
    params = reduce.meta["params"]
    if hh_weight is None:
        hh_weight = 1.0 if params.pruned_bound == 1 else params.nu / (2 * params.pruned_bound)
    det = derandomize_hh(reduce, hh_weight, gamma_prime)
    if pilot_runs and family:
        laws = {}
        for i, dist in enumerate(family):
            outs = draw_outputs(det, dist, pilot_runs, (seed, 29, i))
            ys, counts = np.unique(outs, return_counts=True)
            laws[dist] = FiniteDistribution.from_pairs(zip(ys.tolist(), (counts / pilot_runs).tolist()))
        det = attach_laws(det, laws)
    if hh_weight >= 1:
        final = det
    else:
        final = glob_to_rep(det, ThresholdingParams.default(eta=hh_weight, rho=rho), selection)
    final.meta.update(
        {
            "reduce": reduce,
            "derandomized": det,
            "hh_weight": hh_weight,
            "budget_formula": pac_budget_formula(params.pruned_bound, params.nu, rho),
        }
    )
    return final
