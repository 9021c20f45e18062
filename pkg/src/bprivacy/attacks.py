"""Ballot extraction from published tallies.

Two complementary attacks recover individual votes from exact raw tallies
given public voter weights:

* whale attack: any undetermined voter whose weight exceeds the
  second-largest remaining tally can only have voted for the current
  leader.  Removing that weight and repeating can flip the leader and
  expose further whales.
* subset-sum attack: a voter's choice is forced when exactly one choice
  admits a weight partition matching the tally.  Membership queries use
  the meet-in-the-middle enumeration (sorted split into two halves, all
  2^(n/2) partial sums per half), practical up to roughly 45 residual
  voters.

Exact unit arithmetic (Python ints) is essential: subset sums of
18-decimal token weights overflow 64-bit integers, and float rounding
would create spurious sum collisions.

A noised tally only supports a conservative variant of the whale attack;
no exact partition matches a noised total, so the subset-sum stage does
not apply there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Union

from .core import RawTally, Weight, winner_index

SUBSET_SUM_DEFAULT_CAP = 45

WeightsLike = Sequence[Union[Weight, int]]
TallyLike = Union[RawTally, Sequence[Union[Weight, int]]]


@dataclass(frozen=True)
class AttackResult:
    """Outcome of an extraction attack.

    ``determined`` maps voter index to the deduced choice;
    ``undetermined`` holds the rest.  Percentages are taken over the
    full input instance.  ``subset_sum_skipped`` marks instances whose
    residual exceeded the enumeration cap (a skip, not a failure).
    """

    determined: Mapping[int, int]
    undetermined: frozenset[int]
    ballots_leaked_pct: float
    weight_leaked_pct: float
    deniability_broken: bool
    full_recovery: bool
    subset_sum_skipped: bool = False

    @classmethod
    def build(
        cls,
        determined: dict[int, int],
        n: int,
        weights: Sequence,
        subset_sum_skipped: bool = False,
    ) -> "AttackResult":
        total = sum(weights)
        leaked = sum(weights[i] for i in determined)
        return cls(
            determined=dict(sorted(determined.items())),
            undetermined=frozenset(range(n)) - determined.keys(),
            ballots_leaked_pct=100.0 * len(determined) / n,
            weight_leaked_pct=100.0 * leaked / total if total else 0.0,
            deniability_broken=bool(determined),
            full_recovery=len(determined) == n,
            subset_sum_skipped=subset_sum_skipped,
        )


def _weight_units(weights: WeightsLike) -> list[int]:
    if not len(weights):
        raise ValueError("attack needs at least one voter")
    units = []
    scale = None
    for w in weights:
        if isinstance(w, Weight):
            if scale is None:
                scale = w.scale
            elif w.scale != scale:
                raise ValueError("mixed weight scales")
            units.append(w.units)
        elif isinstance(w, int) and not isinstance(w, bool):
            units.append(w)
        else:
            raise TypeError(f"weights must be Weight or int units, got {type(w).__name__}")
    return units


def _tally_units(tally: TallyLike, num_choices: int) -> list[int]:
    if isinstance(tally, RawTally):
        values: Sequence = tally.totals
    else:
        values = tally
    if len(values) != num_choices:
        raise ValueError(f"tally has {len(values)} entries for {num_choices} choices")
    return _weight_units(values)


def whale_attack(weights: WeightsLike, tally: TallyLike, num_choices: int) -> AttackResult:
    """Iterated whale extraction from an exact raw tally.

    Each pass assigns every undetermined voter heavier than the
    second-largest remaining tally to the current leader, subtracts the
    assigned weight, and repeats until no whale is found.  The
    second-largest tally is recomputed once per pass.
    """
    units = _weight_units(weights)
    det, _ = _whale_pass(units, _tally_units(tally, num_choices), set(range(len(units))))
    return AttackResult.build(det, len(units), units)


def _whale_pass(
    units: Sequence[int], tallies: list[int], undetermined: set[int]
) -> tuple[dict[int, int], list[int]]:
    """Run the whale loop in place; returns (determinations, residual tallies)."""
    det: dict[int, int] = {}
    while True:
        leader = winner_index(tallies)
        second = max(v for j, v in enumerate(tallies) if j != leader)
        whales = sorted(i for i in undetermined if units[i] > second)
        if not whales:
            return det, tallies
        for i in whales:
            det[i] = leader
            undetermined.remove(i)
            tallies[leader] -= units[i]


def _subset_sums(values: Sequence[int]) -> list[int]:
    """All 2^len subset sums, by iterative doubling."""
    sums = [0]
    for v in values:
        sums += [s + v for s in sums]
    return sums


def _deal_halves(indices: Sequence[int], units: Sequence[int]) -> tuple[list[int], list[int]]:
    """Split voters into two balanced halves: sort by weight descending,
    deal alternately."""
    ranked = sorted(indices, key=lambda i: (-units[i], i))
    return ranked[0::2], ranked[1::2]


def _half_reachable(target: int, own_sums: Sequence[int], other_sums: set[int]) -> bool:
    return any((target - s) in other_sums for s in own_sums)


def exists_assignment(weight_units: Sequence[int], targets: Sequence[int]) -> bool:
    """Whether the weights can be partitioned into the exact per-choice targets.

    Backtracking with largest-first ordering and equal-target symmetry
    pruning; exponential in the worst case, so callers cap instance size.
    """
    if any(t < 0 for t in targets):
        return False
    if sum(weight_units) != sum(targets):
        return False
    order = sorted(weight_units, reverse=True)
    remaining = list(targets)

    def rec(k: int) -> bool:
        if k == len(order):
            return True
        w = order[k]
        tried = set()
        for j, t in enumerate(remaining):
            if t >= w and t not in tried:
                tried.add(t)
                remaining[j] = t - w
                if rec(k + 1):
                    remaining[j] = t
                    return True
                remaining[j] = t
        return False

    return rec(0)


def assignment_consistent(
    weights: WeightsLike,
    tally: TallyLike,
    determined: Mapping[int, int],
    num_choices: int,
) -> bool:
    """Whether fixing the determined votes still admits a completion
    matching the tally."""
    units = _weight_units(weights)
    targets = _tally_units(tally, num_choices)
    residual = list(targets)
    for i, j in determined.items():
        residual[j] -= units[i]
    free = [units[i] for i in range(len(units)) if i not in determined]
    if any(t < 0 for t in residual):
        return False
    if num_choices == 2:
        left, right = free[0::2], free[1::2]
        right_set = set(_subset_sums(right))
        return _half_reachable(residual[0], _subset_sums(left), right_set)
    return exists_assignment(free, residual)


def subset_sum_attack(
    weights: WeightsLike,
    tally: TallyLike,
    num_choices: int,
    max_n: int = SUBSET_SUM_DEFAULT_CAP,
) -> AttackResult:
    """Per-voter forced-choice extraction via meet-in-the-middle sums.

    For each voter the attack asks which choices j admit a full
    consistent assignment with that voter on j; a unique answer pins the
    vote.  Determinations are forced votes, so they do not change any
    other voter's answer -- all membership queries run against the input
    instance, which keeps the total cost at one half-enumeration per
    voter instead of a fresh pair per determination.

    Instances larger than ``max_n`` are skipped (marked, not failed).
    For more than two choices a sum match alone can over-determine, so
    candidate choices are verified by a full partition search.
    """
    units = _weight_units(weights)
    targets = _tally_units(tally, num_choices)
    n = len(units)
    if n > max_n:
        return AttackResult.build({}, n, units, subset_sum_skipped=True)
    det = (
        _subset_sum_binary(units, targets)
        if num_choices == 2
        else _subset_sum_multi(units, targets)
    )
    return AttackResult.build(det, n, units)


def _subset_sum_binary(units: Sequence[int], targets: Sequence[int]) -> dict[int, int]:
    n = len(units)
    left, right = _deal_halves(range(n), units)
    left_pos = set(left)
    left_set = set(_subset_sums([units[i] for i in left]))
    right_set = set(_subset_sums([units[i] for i in right]))
    target_yes = targets[0]

    det: dict[int, int] = {}
    for i in range(n):
        own_half = left if i in left_pos else right
        other_set = right_set if i in left_pos else left_set
        own_sums = _subset_sums([units[j] for j in own_half if j != i])
        # c_i = 0 needs the others' choice-0 subset to sum to target - w_i;
        # c_i = 1 needs it to sum to the full target (complement matches 1)
        can_yes = _half_reachable(target_yes - units[i], own_sums, other_set)
        can_no = _half_reachable(target_yes, own_sums, other_set)
        if can_yes != can_no:
            det[i] = 0 if can_yes else 1
    return det


def _subset_sum_multi(units: Sequence[int], targets: Sequence[int]) -> dict[int, int]:
    n = len(units)
    left, right = _deal_halves(range(n), units)
    left_pos = set(left)
    left_set = set(_subset_sums([units[i] for i in left]))
    right_set = set(_subset_sums([units[i] for i in right]))

    det: dict[int, int] = {}
    for i in range(n):
        own_half = left if i in left_pos else right
        other_set = right_set if i in left_pos else left_set
        own_sums = _subset_sums([units[j] for j in own_half if j != i])
        others = [units[j] for j in range(n) if j != i]
        candidates = []
        for j, target in enumerate(targets):
            if not _half_reachable(target - units[i], own_sums, other_set):
                continue
            # the sum match fixes only choice j; the rest must still
            # partition into the other targets
            residual = list(targets)
            residual[j] -= units[i]
            if exists_assignment(others, residual):
                candidates.append(j)
                if len(candidates) > 1:
                    break
        if len(candidates) == 1:
            det[i] = candidates[0]
    return det


def unified_attack(
    weights: WeightsLike,
    tally: TallyLike,
    num_choices: int,
    subset_sum_cap: int = SUBSET_SUM_DEFAULT_CAP,
) -> AttackResult:
    """Whale attack to fixpoint, then subset-sum on the residual.

    The subset-sum stage runs only when at most ``subset_sum_cap`` voters
    remain undetermined; otherwise the result carries the skip marker.
    """
    units = _weight_units(weights)
    targets = _tally_units(tally, num_choices)
    undetermined = set(range(len(units)))
    det, residual_tally = _whale_pass(units, list(targets), undetermined)

    skipped = False
    if undetermined:
        if len(undetermined) <= subset_sum_cap:
            residual = sorted(undetermined)
            sub = subset_sum_attack(
                [units[i] for i in residual],
                residual_tally,
                num_choices,
                max_n=subset_sum_cap,
            )
            for local, choice in sub.determined.items():
                det[residual[local]] = choice
        else:
            skipped = True
    return AttackResult.build(det, len(units), units, subset_sum_skipped=skipped)


def noised_whale_attack(
    weights: Sequence[float],
    noised_tally: Sequence[float],
    num_choices: int,
    perturbation_d: float,
    total_weight: float,
    true_winner: int | None = None,
) -> AttackResult:
    """Whale attack adapted to a noised tally.

    Exclusion is conservative: voter i is ruled out of choice j only when
    w_i > s_j + d*W, since the observed s_j may understate the true total
    by up to d*W at the calibrated confidence.  When the true winner is
    published (corrected noised tally), any voter with w_i > W/|C| is
    assigned to it first.  Exact subset matching is pointless against
    noised totals, so there is no subset-sum stage.
    """
    w = [float(x) for x in weights]
    tallies = [float(x) for x in noised_tally]
    if len(tallies) != num_choices:
        raise ValueError(f"tally has {len(tallies)} entries for {num_choices} choices")
    slack = perturbation_d * total_weight
    n = len(w)
    undetermined = set(range(n))
    det: dict[int, int] = {}

    if true_winner is not None:
        majority = total_weight / num_choices
        for i in sorted(undetermined):
            if w[i] > majority:
                det[i] = true_winner
                undetermined.discard(i)
                tallies[true_winner] -= w[i]

    while True:
        leader = winner_index(tallies)
        second = max(v for j, v in enumerate(tallies) if j != leader)
        whales = sorted(i for i in undetermined if w[i] > second + slack)
        if not whales:
            break
        for i in whales:
            det[i] = leader
            undetermined.remove(i)
            tallies[leader] -= w[i]

    return AttackResult.build(det, n, w)
