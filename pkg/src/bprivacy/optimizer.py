"""Bribery cost: allocation strategies, budget search, and coalition size.

The minimum budget that reaches a target success probability is found per
allocation strategy by exponential doubling followed by bisection, then
minimized across strategies.  Success at a given budget is evaluated by
solving the bribery-game equilibrium and estimating the adversary's win
probability; common random numbers across budget probes keep that curve
monotone so bisection is valid.

Budgets are expressed in the same units as voter utilities (mu, sigma),
so absolute values only carry meaning relative to the utility scale; the
ratio to the full-disclosure budget is the scale-free headline metric.
"""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .core import VotingTranscript, raw_totals_units, tally_winner, winner_index
from .game import (
    MonteCarloSpec,
    TallyPolicy,
    UtilityModel,
    solve_equilibrium,
    success_probability,
)

logger = logging.getLogger(__name__)


def derive_seed(base: int, *tags) -> int:
    """Deterministic child seed for a named stream.

    String tags go through crc32, not hash(): the builtin string hash is
    salted per process and would break cross-run reproducibility.
    """
    entropy = [base] + [
        t if isinstance(t, int) else zlib.crc32(str(t).encode()) for t in tags
    ]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint32)[0])


# --- allocation strategies -------------------------------------------------


@dataclass(frozen=True)
class EqualSplit:
    name = "equal_split"


@dataclass(frozen=True)
class Linear:
    name = "linear"


@dataclass(frozen=True)
class SquareRoot:
    name = "sqrt"


@dataclass(frozen=True)
class Quadratic:
    name = "quadratic"


@dataclass(frozen=True)
class Logarithmic:
    name = "log"


@dataclass(frozen=True)
class LinearSloped:
    slope: float

    @property
    def name(self) -> str:
        return f"sloped_{self.slope:g}"


AllocationKind = Union[EqualSplit, Linear, SquareRoot, Quadratic, Logarithmic, LinearSloped]


@dataclass(frozen=True)
class AllOpposing:
    name = "all"


@dataclass(frozen=True)
class TopK:
    k: int

    @property
    def name(self) -> str:
        return f"top{self.k}"


@dataclass(frozen=True)
class TopPercent:
    fraction: float

    def __post_init__(self) -> None:
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must be in (0, 1]")

    @property
    def name(self) -> str:
        return f"top{100 * self.fraction:g}pct"


@dataclass(frozen=True)
class TopMDC:
    name = "top_mdc"


TargetRule = Union[AllOpposing, TopK, TopPercent, TopMDC]


@dataclass(frozen=True)
class AllocationStrategy:
    kind: AllocationKind
    targets: TargetRule

    @property
    def label(self) -> str:
        return f"{self.kind.name}/{self.targets.name}"


def default_strategies() -> tuple[AllocationStrategy, ...]:
    """The strategy portfolio used for headline budget search."""
    return (
        AllocationStrategy(Linear(), AllOpposing()),
        AllocationStrategy(Linear(), TopK(10)),
        AllocationStrategy(Linear(), TopPercent(0.10)),
        AllocationStrategy(Linear(), TopPercent(0.01)),
        AllocationStrategy(Logarithmic(), TopMDC()),
        AllocationStrategy(Logarithmic(), TopPercent(0.01)),
        AllocationStrategy(SquareRoot(), AllOpposing()),
        AllocationStrategy(EqualSplit(), TopMDC()),
    )


_LOG_FLOOR = 1e-6  # log(w) is useless at and below w = 1; keep factors positive


def select_targets(
    rule: TargetRule,
    weights: Sequence[float],
    opposing: Sequence[int],
    mdc_size: int | None = None,
) -> list[int]:
    """Targeted voter indices: opposing voters ranked by weight, ties by index."""
    ranked = sorted(opposing, key=lambda i: (-float(weights[i]), i))
    if isinstance(rule, AllOpposing):
        return ranked
    if isinstance(rule, TopK):
        return ranked[: max(0, rule.k)]
    if isinstance(rule, TopPercent):
        return ranked[: max(1, math.ceil(rule.fraction * len(ranked)))] if ranked else []
    if isinstance(rule, TopMDC):
        if mdc_size is None:
            raise ValueError("TopMDC targeting requires the proposal's MDC")
        return ranked[: max(1, mdc_size)]
    raise TypeError(f"unknown target rule: {rule!r}")


def allocate(
    strategy: AllocationStrategy,
    weights: Sequence[float],
    opposing: Sequence[int],
    budget: float,
    mdc_size: int | None = None,
) -> np.ndarray:
    """Distribute ``budget`` over the strategy's target set.

    Only opposing voters receive bribes.  Proportional kinds normalize
    their weight factors to the budget; the sloped kind solves its
    intercept from the budget constraint, clamping negative bribes to
    zero and rescaling.
    """
    w = np.asarray(weights, dtype=np.float64)
    if budget < 0:
        raise ValueError("budget must be non-negative")
    bribes = np.zeros(len(w))
    if budget == 0:
        return bribes
    targets = select_targets(strategy.targets, w, opposing, mdc_size)
    if not targets:
        raise ValueError(f"strategy {strategy.label} has no voters to target")
    tw = w[targets]

    kind = strategy.kind
    if isinstance(kind, EqualSplit):
        factors = np.ones(len(targets))
    elif isinstance(kind, Linear):
        factors = tw
    elif isinstance(kind, SquareRoot):
        factors = np.sqrt(tw)
    elif isinstance(kind, Quadratic):
        factors = tw**2
    elif isinstance(kind, Logarithmic):
        factors = np.maximum(np.log(np.maximum(tw, _LOG_FLOOR)), _LOG_FLOOR)
    elif isinstance(kind, LinearSloped):
        intercept = (budget - kind.slope * tw.sum()) / len(targets)
        factors = np.maximum(kind.slope * tw + intercept, 0.0)
    else:
        raise TypeError(f"unknown allocation kind: {kind!r}")

    total = factors.sum()
    if total <= 0:
        raise ValueError(f"strategy {strategy.label} produced no positive allocation")
    bribes[targets] = budget * factors / total
    return bribes


# --- minimum decisive coalition ---------------------------------------------


def mdc(t: VotingTranscript) -> int:
    """Fewest winner-side voters whose switch flips the outcome.

    Moving a weight w across shifts the margin by 2w, so taking
    winner-side voters largest-first minimizes the count.  A tied
    outcome flips for free: MDC 0 by convention.
    """
    if t.num_choices != 2:
        raise ValueError("minimum decisive coalition is defined for binary proposals")
    totals = raw_totals_units(t)
    winner = tally_winner(t).winner
    loser = 1 - winner
    if totals[winner] == totals[loser]:
        return 0
    movable = sorted(
        (w.units for w, c in zip(t.weights, t.choices) if c == winner), reverse=True
    )
    win_total, lose_total = totals[winner], totals[loser]
    moved = 0
    for k, units in enumerate(movable, start=1):
        moved += units
        shifted = [0, 0]
        shifted[winner] = win_total - moved
        shifted[loser] = lose_total + moved
        if winner_index(shifted) != winner:
            return k
    return len(movable)


# --- budget search -----------------------------------------------------------


@dataclass(frozen=True)
class BisectSpec:
    """Budget search plan: doubling until feasible, then bisection.

    ``start_budget`` defaults to W/1000.  A strategy fails when the
    doubling cap is hit, or earlier once every targeted voter already
    flips almost surely while the target is still unmet: flip
    probabilities are monotone in the bribe and bounded by one, so more
    budget on the same targets cannot help.
    """

    rel_tol: float = 0.01
    start_budget: float | None = None
    max_doublings: int = 40


@dataclass(frozen=True)
class BPrivacyResult:
    """Minimum bribery budget reaching the target success probability."""

    budget: float
    bribes: np.ndarray | None
    strategy: AllocationStrategy | None
    achieved_p_succ: float
    policy: TallyPolicy
    target_p: float
    relative: float | None = None
    per_strategy: dict[str, float] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return not math.isfinite(self.budget)


def _opposing_indices(utility: UtilityModel) -> list[int]:
    return [i for i, m in enumerate(utility.mu) if m > 0]


def compute_bprivacy(
    t: VotingTranscript,
    utility: UtilityModel,
    policy: TallyPolicy,
    target_p: float = 0.9,
    strategies: Sequence[AllocationStrategy] | None = None,
    mc: MonteCarloSpec = MonteCarloSpec(),
    search: BisectSpec = BisectSpec(),
) -> BPrivacyResult:
    """Minimum total bribe achieving ``target_p`` under the policy.

    Per strategy: double the budget from the starting unit until the
    equilibrium success probability reaches the target, bisect to 1%
    relative width, and keep the cheapest strategy.  Every success
    estimate reuses one random stream (independent of the equilibrium
    stream), so the probed curve is monotone up to escalation effects;
    violations are logged, not fatal.
    """
    if t.num_choices != 2:
        raise ValueError("bribery budgets are computed for binary proposals")
    if not 0.5 < target_p < 1.0:
        raise ValueError(f"target probability must be in (0.5, 1), got {target_p}")
    if utility.n != t.n:
        raise ValueError("utility model size does not match the transcript")

    weights = t.weights_float()
    opposing = _opposing_indices(utility)
    strategies = tuple(strategies) if strategies is not None else default_strategies()
    needs_mdc = any(isinstance(s.targets, TopMDC) for s in strategies)
    mdc_size = mdc(t) if needs_mdc else None

    succ_mc = MonteCarloSpec(
        samples=mc.samples,
        seed=derive_seed(mc.seed, "success"),
        escalated_samples=mc.escalated_samples,
        escalation_window=mc.escalation_window,
    )
    start = search.start_budget if search.start_budget is not None else float(weights.sum()) / 1000.0
    if start <= 0:
        raise ValueError("starting budget must be positive")

    def evaluate(strategy: AllocationStrategy, budget: float):
        # every probe starts from the unbribed equilibrium: the game has a
        # bought-cascade basin, and carrying state across budgets would let
        # hysteresis drag the feasibility boundary to the bracket edge
        bribes = allocate(strategy, weights, opposing, budget, mdc_size)
        eq = solve_equilibrium(weights, utility, bribes, policy, mc)
        p_hat = success_probability(weights, eq, succ_mc, target=target_p)
        return p_hat, bribes, eq

    per_strategy: dict[str, float] = {}
    best: tuple[float, np.ndarray, AllocationStrategy, float] | None = None

    for strategy in strategies:
        try:
            targets = select_targets(strategy.targets, weights, opposing, mdc_size)
            probes: list[tuple[float, float]] = []
            budget = start
            p_hat, bribes, eq = evaluate(strategy, budget)
            probes.append((budget, p_hat))
            doublings = 0
            low = 0.0
            while p_hat < target_p:
                doublings += 1
                if doublings > search.max_doublings:
                    break
                if np.all(eq.yes_prob[targets] >= 1.0 - 1e-6):
                    break  # targeted voters are exhausted; the curve is flat
                low = budget
                budget *= 2.0
                p_hat, bribes, eq = evaluate(strategy, budget)
                probes.append((budget, p_hat))
            if p_hat < target_p:
                per_strategy[strategy.label] = math.inf
                logger.info("strategy %s failed to reach p=%.3f", strategy.label, target_p)
                continue
            high, high_eval = budget, (p_hat, bribes)
            while high - low > search.rel_tol * high:
                mid = 0.5 * (low + high)
                p_mid, b_mid, _ = evaluate(strategy, mid)
                probes.append((mid, p_mid))
                if p_mid >= target_p:
                    high, high_eval = mid, (p_mid, b_mid)
                else:
                    low = mid
            _warn_if_nonmonotone(strategy, probes)
            per_strategy[strategy.label] = high
            if best is None or high < best[0]:
                best = (high, high_eval[1], strategy, high_eval[0])
        except ValueError as exc:
            per_strategy[strategy.label] = math.inf
            logger.info("strategy %s skipped: %s", strategy.label, exc)

    if best is None:
        return BPrivacyResult(
            math.inf, None, None, 0.0, policy, target_p, per_strategy=per_strategy
        )
    budget, bribes, strategy, achieved = best
    return BPrivacyResult(
        budget, bribes, strategy, achieved, policy, target_p, per_strategy=per_strategy
    )


def _warn_if_nonmonotone(strategy: AllocationStrategy, probes: list[tuple[float, float]]) -> None:
    ordered = sorted(probes)
    worst = 0.0
    for (_, p_lo), (_, p_hi) in zip(ordered, ordered[1:]):
        worst = max(worst, p_lo - p_hi)
    if worst > 0.02:
        logger.warning(
            "success probability dipped %.3f across probed budgets (%s); "
            "bisection assumes monotonicity",
            worst,
            strategy.label,
        )


def relative_bprivacy(result: BPrivacyResult, baseline_public: BPrivacyResult) -> float:
    """Budget ratio against the full-disclosure baseline (>= 1 expected)."""
    if baseline_public.failed:
        raise ValueError("full-disclosure baseline failed; the ratio is undefined")
    if result.failed:
        return math.inf
    ratio = result.budget / baseline_public.budget
    if ratio < 1.0 - 0.05:
        logger.warning(
            "relative bribery cost %.3f fell below the public baseline; "
            "likely Monte Carlo noise",
            ratio,
        )
    return ratio
