"""Bribery game: equilibrium, bribe margins, and voter deniability.

An adversary targeting a binary proposal commits a per-voter bribe b_i
and a payment rule over the published outcome.  A rational voter with
private aversion U_i ~ Normal(mu_i, sigma) flips to the adversary's side
("yes") when U_i <= alpha_i * b_i / Delta_i, where Delta_i is the chance
the voter's ballot decides the winner (pivotality) and alpha_i is the
extra payment probability earned by complying (bribe margin).

Payment rules are represented per voter: correlating payments across
voters cannot change any individual voter's marginal payment
probabilities, so per-voter condition functions lose no generality.

Pivotality depends on all voters' flip probabilities, which depend back
on pivotality, so the equilibrium is computed as an under-relaxed fixed
point.  Throughout, the yes side wins ties (total >= W/2); adversary
success additionally requires a strict majority.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import ndtr

from .core import NoiseSpec

_RNG_BLOCK = 512  # voters per RNG block; keeps streaming deterministic
_MATERIALIZE_LIMIT = 2**22  # samples*n above this streams instead of caching
_PIVOTALITY_FLOOR = 1e-12


@dataclass(frozen=True)
class FullDisclosure:
    """Every ballot published; payment can condition on the voter's own vote."""


@dataclass(frozen=True)
class WinnerOnly:
    """Only the winning choice published."""


@dataclass(frozen=True)
class CorrectedNoised:
    """Laplace-noised totals published together with the true winner."""

    noise: NoiseSpec


@dataclass(frozen=True)
class DpNoised:
    """Uncorrected Laplace-mechanism tally at privacy budget epsilon."""

    epsilon: float

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


TallyPolicy = Union[FullDisclosure, WinnerOnly, CorrectedNoised, DpNoised]


@dataclass(frozen=True)
class MonteCarloSpec:
    """Sampling plan for pivotality and success estimates.

    Estimates near a decision target are re-run at ``escalated_samples``
    when within ``escalation_window`` of it.
    """

    samples: int = 1000
    seed: int = 0
    escalated_samples: int = 10_000
    escalation_window: float = 0.01

    def __post_init__(self) -> None:
        if self.samples < 2:
            raise ValueError("need at least 2 samples")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class UtilityModel:
    """Per-voter Gaussian aversion to the adversary's outcome.

    mu_i = +1 marks a voter observed on the winning ("no") side, -1 one
    already leaning the adversary's way.  With sigma = 1 an unbribed
    +1 voter defects with probability Phi(-1), about 16%.
    """

    mu: tuple[float, ...]
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @classmethod
    def from_transcript(cls, transcript, sigma: float = 1.0) -> "UtilityModel":
        """Observed winners get mu = +1, the rest -1 (the adversary pushes
        the historically losing side)."""
        from .core import tally_winner

        winner = tally_winner(transcript).winner
        return cls(tuple(1.0 if c == winner else -1.0 for c in transcript.choices), sigma)

    @property
    def n(self) -> int:
        return len(self.mu)

    def unbribed_yes_probs(self) -> np.ndarray:
        return ndtr(-np.asarray(self.mu, dtype=np.float64) / self.sigma)


@dataclass(frozen=True)
class EquilibriumState:
    """Converged (or best-effort) fixed point of the bribery game."""

    pivotality: np.ndarray
    bribe_margin: np.ndarray
    yes_prob: np.ndarray
    converged: bool
    iterations: int


def bribe_margin(policy: TallyPolicy, pivotality, weight):
    """Bribe margin (or tight upper bound) per disclosure policy.

    FullDisclosure pays exactly on the voter's own ballot: margin 1.
    WinnerOnly can only condition on the winner: margin Delta.
    CorrectedNoised is bounded by Delta + (1 - Delta) * TV, where
    TV = 1 - exp(-w / (2b)) is the total-variation distance between the
    noised tallies the voter's two choices induce; b = 0 collapses to
    full disclosure and b -> infinity to winner-only.
    DpNoised is bounded by 1 - exp(-epsilon) independently of Delta.

    Accepts scalars or arrays; broadcasts like numpy.
    """
    delta = np.asarray(pivotality, dtype=np.float64)
    w = np.asarray(weight, dtype=np.float64)
    if np.any(delta < 0) or np.any(delta > 1):
        raise ValueError("pivotality must lie in [0, 1]")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")

    if isinstance(policy, FullDisclosure):
        out = np.ones(np.broadcast(delta, w).shape)
    elif isinstance(policy, WinnerOnly):
        out = delta + np.zeros_like(w)
    elif isinstance(policy, CorrectedNoised):
        b = policy.noise.scale_b
        if b < 0:
            raise ValueError("Laplace scale must be non-negative")
        if b == 0.0:
            tv = np.where(w > 0, 1.0, 0.0)
        else:
            tv = -np.expm1(-w / (2.0 * b))
        out = delta + (1.0 - delta) * tv
    elif isinstance(policy, DpNoised):
        out = np.minimum(1.0, -math.expm1(-policy.epsilon)) + np.zeros(
            np.broadcast(delta, w).shape
        )
    else:
        raise TypeError(f"unknown tally policy: {policy!r}")
    return float(out) if out.ndim == 0 else out


def _uniform_block(seed: int, samples: int, block_index: int, width: int) -> np.ndarray:
    """Antithetic uniforms for one voter block: rows pair u with 1-u."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, block_index)))
    half = (samples + 1) // 2
    u = rng.random((half, width))
    return np.concatenate([u, 1.0 - u], axis=0)[:samples]


class _PivotalitySampler:
    """Shared Bernoulli sample matrix for pivotality estimation.

    One uniform matrix serves every voter (common random numbers): each
    voter's own contribution is subtracted from the shared totals rather
    than re-sampled.  Small problems cache the uniforms; large ones
    stream them block-by-block from the same seeds, giving identical
    results with bounded memory.
    """

    def __init__(self, seed: int, samples: int, n: int):
        self.seed = seed
        self.samples = samples
        self.n = n
        self._cached = None
        if samples * n <= _MATERIALIZE_LIMIT:
            self._cached = np.concatenate(
                [
                    _uniform_block(seed, samples, b, min(_RNG_BLOCK, n - b * _RNG_BLOCK))
                    for b in range((n + _RNG_BLOCK - 1) // _RNG_BLOCK)
                ],
                axis=1,
            )

    def _block(self, index: int) -> np.ndarray:
        lo = index * _RNG_BLOCK
        hi = min(lo + _RNG_BLOCK, self.n)
        if self._cached is not None:
            return self._cached[:, lo:hi]
        return _uniform_block(self.seed, self.samples, index, hi - lo)

    def pivotality(self, weights: np.ndarray, yes_probs: np.ndarray) -> np.ndarray:
        half = weights.sum() / 2.0
        if self._cached is not None:
            contrib = (self._cached <= yes_probs) * weights
            others = contrib.sum(axis=1)[:, None] - contrib
            window = (others >= half - weights) & (others < half)
            return window.mean(axis=0)
        n_blocks = (self.n + _RNG_BLOCK - 1) // _RNG_BLOCK
        totals = np.zeros(self.samples)
        for b in range(n_blocks):
            lo = b * _RNG_BLOCK
            hi = min(lo + _RNG_BLOCK, self.n)
            totals += ((self._block(b) <= yes_probs[lo:hi]) * weights[lo:hi]).sum(axis=1)
        delta = np.empty(self.n)
        for b in range(n_blocks):
            lo = b * _RNG_BLOCK
            hi = min(lo + _RNG_BLOCK, self.n)
            contrib = (self._block(b) <= yes_probs[lo:hi]) * weights[lo:hi]
            others = totals[:, None] - contrib
            window = (others >= half - weights[lo:hi]) & (others < half)
            delta[lo:hi] = window.mean(axis=0)
        return delta


def pivotality_map(weights, yes_probs, mc: MonteCarloSpec = MonteCarloSpec()) -> np.ndarray:
    """Monte Carlo estimate of Pr[others' yes-weight in [W/2 - w_i, W/2)].

    Uses common random numbers across voters and antithetic pairs;
    deterministic given the seed.
    """
    w = np.asarray(weights, dtype=np.float64)
    p = np.asarray(yes_probs, dtype=np.float64)
    if w.shape != p.shape:
        raise ValueError("weights and yes_probs must have equal length")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("yes_probs must lie in [0, 1]")
    return _PivotalitySampler(mc.seed, mc.samples, len(w)).pivotality(w, p)


def _flip_thresholds(alpha: np.ndarray, bribes: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """alpha*b/Delta with the vanishing-pivotality guard: a voter who is
    never pivotal flips for any positive expected bribe and otherwise
    behaves as unbribed."""
    gain = alpha * bribes
    safe = np.maximum(delta, _PIVOTALITY_FLOOR)
    return np.where(
        delta >= _PIVOTALITY_FLOOR,
        gain / safe,
        np.where(gain > 0, np.inf, 0.0),
    )


def _yes_probs(alpha, bribes, delta, mu, sigma) -> np.ndarray:
    thresholds = _flip_thresholds(alpha, bribes, delta)
    return ndtr((thresholds - mu) / sigma)


def solve_equilibrium(
    weights,
    utility: UtilityModel,
    bribes,
    policy: TallyPolicy,
    mc: MonteCarloSpec = MonteCarloSpec(),
    relax: float = 0.7,
    tol: float = 1e-3,
    max_iter: int = 200,
    initial_pivotality=None,
) -> EquilibriumState:
    """Under-relaxed fixed point of pivotality, margins, and flip probabilities.

    Each iteration recomputes margins and flip probabilities from the
    current pivotality, re-estimates pivotality on the shared sample
    matrix, and blends the update with factor ``relax``.  The sample
    matrix is held fixed across iterations so the iterated map is
    deterministic and the stopping rule (max-norm change below ``tol``)
    is meaningful.

    The empirical map is piecewise constant, so instead of a fixed point
    it can fall into a small limit cycle; a detected cycle stops the
    iteration early with ``converged=False`` rather than burning the
    iteration budget.  Non-convergence is reported, never raised.
    ``initial_pivotality`` warm-starts the iteration (e.g. from a
    neighbouring budget's equilibrium); by default it starts from the
    unbribed voter behaviour.
    """
    w = np.asarray(weights, dtype=np.float64)
    mu = np.asarray(utility.mu, dtype=np.float64)
    b = np.zeros_like(w) if bribes is None else np.asarray(bribes, dtype=np.float64)
    if not (len(w) == len(mu) == len(b)):
        raise ValueError("weights, utilities, and bribes must have equal length")
    if np.any(b < 0):
        raise ValueError("bribes must be non-negative")
    if not 0 < relax <= 1:
        raise ValueError("relaxation factor must be in (0, 1]")
    if not tol > 0:
        raise ValueError("tolerance must be positive")

    sampler = _PivotalitySampler(mc.seed, mc.samples, len(w))
    if initial_pivotality is None:
        delta = sampler.pivotality(w, utility.unbribed_yes_probs())
    else:
        delta = np.asarray(initial_pivotality, dtype=np.float64).copy()
    converged = False
    iterations = 0
    previous = delta
    recent_changes: list[float] = []
    for iterations in range(1, max_iter + 1):
        alpha = bribe_margin(policy, delta, w)
        p = _yes_probs(alpha, b, delta, mu, utility.sigma)
        proposal = sampler.pivotality(w, p)
        new_delta = relax * proposal + (1.0 - relax) * delta
        change = float(np.max(np.abs(new_delta - delta)))
        if change < tol:
            delta = new_delta
            converged = True
            break
        # period-2 limit cycle: the iterate returned to where it was two
        # steps ago while still moving
        if float(np.max(np.abs(new_delta - previous))) < 0.1 * tol:
            delta = 0.5 * (new_delta + delta)
            break
        # longer cycle: changes have stopped contracting for a while
        # (genuine convergence contracts ~3x per step, far outside this band)
        recent_changes.append(change)
        if len(recent_changes) > 6:
            recent_changes.pop(0)
            lo, hi = min(recent_changes), max(recent_changes)
            if iterations >= 22 and hi < 1.5 * lo:
                delta = new_delta
                break
        previous = delta
        delta = new_delta

    alpha = bribe_margin(policy, delta, w)
    p = _yes_probs(alpha, b, delta, mu, utility.sigma)
    return EquilibriumState(delta, np.asarray(alpha, dtype=np.float64), p, converged, iterations)


def success_probability(
    weights,
    equilibrium,
    mc: MonteCarloSpec = MonteCarloSpec(),
    target: float | None = None,
) -> float:
    """Monte Carlo estimate of Pr[yes-weight strictly exceeds W/2].

    ``equilibrium`` may be an :class:`EquilibriumState` or a bare
    yes-probability vector.  When the estimate lands within the
    escalation window of ``target``, it is recomputed at the escalated
    sample count.  An exact half-split counts as failure.
    """
    p = np.asarray(getattr(equilibrium, "yes_prob", equilibrium), dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != p.shape:
        raise ValueError("weights and probabilities must have equal length")
    half = w.sum() / 2.0
    n_blocks = (len(w) + _RNG_BLOCK - 1) // _RNG_BLOCK

    def estimate(samples: int) -> float:
        totals = np.zeros(samples)
        for blk in range(n_blocks):
            lo = blk * _RNG_BLOCK
            hi = min(lo + _RNG_BLOCK, len(w))
            u = _uniform_block(mc.seed, samples, blk, hi - lo)
            totals += (u <= p[lo:hi]) @ w[lo:hi]
        return float(np.mean(totals > half))

    est = estimate(mc.samples)
    if target is not None and abs(est - target) < mc.escalation_window:
        est = estimate(max(mc.samples, mc.escalated_samples))
    return est


# ---------------------------------------------------------------------------
# Exact / numerically integrated oracles for small instances
# ---------------------------------------------------------------------------

_ENUM_LIMIT = 12


@dataclass(frozen=True)
class NoiseGrid:
    """Discretization for integrating over a noised outcome axis."""

    step_divisor: int = 200
    half_width: float = 12.0
    max_points: int = 4_000_000


def _other_profiles(w: np.ndarray, p: np.ndarray, voter: int):
    """Enumerate the other voters' choice profiles with probabilities."""
    others = [j for j in range(len(w)) if j != voter]
    m = len(others)
    masks = np.arange(2**m, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(m)) & 1).astype(np.float64)
    probs = np.prod(np.where(bits == 1, p[others], 1.0 - p[others]), axis=1)
    totals = bits @ w[others]
    return totals, probs


def _laplace_mixture(u: np.ndarray, centers: np.ndarray, probs: np.ndarray, scale: float) -> np.ndarray:
    out = np.zeros_like(u)
    for lo in range(0, len(centers), 128):
        c = centers[lo : lo + 128, None]
        pr = probs[lo : lo + 128, None]
        out += (pr * np.exp(-np.abs(u[None, :] - c) / scale)).sum(axis=0)
    return out / (2.0 * scale)


def _integration_axis(centers_lo: float, centers_hi: float, scale: float, grid: NoiseGrid) -> np.ndarray:
    step = scale / grid.step_divisor
    lo = centers_lo - grid.half_width * scale
    hi = centers_hi + grid.half_width * scale
    count = int(math.ceil((hi - lo) / step)) + 1
    if count > grid.max_points:
        raise ValueError(
            f"integration grid needs {count} points (> {grid.max_points}); "
            "coarsen the grid or reduce the instance"
        )
    return lo + step * np.arange(count)


def _discrete_margin(vals_yes, vals_no, probs) -> float:
    """Sum of max(P_yes(v) - P_no(v), 0) over exact outcome values."""
    acc_yes: dict[float, float] = {}
    acc_no: dict[float, float] = {}
    for v, pr in zip(np.round(vals_yes, 9), probs):
        acc_yes[v] = acc_yes.get(v, 0.0) + pr
    for v, pr in zip(np.round(vals_no, 9), probs):
        acc_no[v] = acc_no.get(v, 0.0) + pr
    return sum(
        max(acc_yes.get(v, 0.0) - acc_no.get(v, 0.0), 0.0)
        for v in set(acc_yes) | set(acc_no)
    )


def optimal_bribe_margin_bruteforce(
    weights,
    yes_probs,
    voter: int,
    policy: TallyPolicy,
    grid: NoiseGrid = NoiseGrid(),
) -> float:
    """Optimal bribe margin by enumerating the other voters' profiles.

    The optimal payment rule pays on every outcome more likely under the
    voter's compliance, so the margin is the summed positive part of the
    outcome-distribution difference.  Discrete policies are exact;
    noised policies integrate the Laplace mixtures on a grid.  Exact for
    validation only: limited to 12 voters.
    """
    w = np.asarray(weights, dtype=np.float64)
    p = np.asarray(yes_probs, dtype=np.float64)
    n = len(w)
    if n > _ENUM_LIMIT:
        raise ValueError(f"enumeration limited to {_ENUM_LIMIT} voters, got {n}")
    if not 0 <= voter < n:
        raise ValueError(f"voter index {voter} out of range")

    if isinstance(policy, FullDisclosure):
        return 1.0

    totals, probs = _other_profiles(w, p, voter)
    half = w.sum() / 2.0
    wi = float(w[voter])

    if isinstance(policy, WinnerOnly):
        yes_wins_if_yes = probs[totals + wi >= half].sum()
        yes_wins_if_no = probs[totals >= half].sum()
        return max(yes_wins_if_yes - yes_wins_if_no, 0.0) + max(
            yes_wins_if_no - yes_wins_if_yes, 0.0
        )

    if isinstance(policy, CorrectedNoised):
        b = policy.noise.scale_b
        if b == 0.0:
            return _discrete_margin(totals + wi, totals, probs)
        u = _integration_axis(totals.min(), totals.max() + wi, b, grid)
        step = u[1] - u[0]
        margin = 0.0
        for yes_won in (True, False):
            sel_yes = (totals + wi >= half) == yes_won
            sel_no = (totals >= half) == yes_won
            f_yes = _laplace_mixture(u, totals[sel_yes] + wi, probs[sel_yes], b)
            f_no = _laplace_mixture(u, totals[sel_no], probs[sel_no], b)
            margin += float(np.maximum(f_yes - f_no, 0.0).sum() * step)
        return margin

    if isinstance(policy, DpNoised):
        scale = float(w.max()) / policy.epsilon
        u = _integration_axis(totals.min(), totals.max() + wi, scale, grid)
        step = u[1] - u[0]
        f_yes = _laplace_mixture(u, totals + wi, probs, scale)
        f_no = _laplace_mixture(u, totals, probs, scale)
        return float(np.maximum(f_yes - f_no, 0.0).sum() * step)

    raise TypeError(f"unknown tally policy: {policy!r}")


def _full_profiles(w: np.ndarray, p: np.ndarray):
    n = len(w)
    masks = np.arange(2**n, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(n)) & 1).astype(np.float64)
    probs = np.prod(np.where(bits == 1, p, 1.0 - p), axis=1)
    totals = bits @ w
    return bits, probs, totals


def plausible_deniability(
    weights,
    yes_probs,
    voter: int,
    policy: TallyPolicy,
    grid: NoiseGrid = NoiseGrid(),
):
    """Per-outcome plausible deniability and its expectation.

    PD(o) is the smaller of the two prior-normalized posteriors of the
    voter's choice given outcome o; the expectation runs over the
    outcome distribution.  For policies with continuous outcomes the
    per-outcome map is not enumerable and ``None`` is returned in its
    place, with the expectation integrated on the noise grid.

    A voter with a degenerate prior (0 or 1) has nothing left to hide;
    the minimum is taken over choices with positive prior, giving
    deniability 1 by convention.
    """
    w = np.asarray(weights, dtype=np.float64)
    p = np.asarray(yes_probs, dtype=np.float64)
    n = len(w)
    if n > _ENUM_LIMIT:
        raise ValueError(f"enumeration limited to {_ENUM_LIMIT} voters, got {n}")
    prior = float(p[voter])
    half = w.sum() / 2.0
    wi = float(w[voter])

    continuous = (isinstance(policy, CorrectedNoised) and policy.noise.scale_b > 0) or isinstance(
        policy, DpNoised
    )
    if continuous:
        if prior in (0.0, 1.0):
            return None, 1.0
        totals, probs = _other_profiles(w, p, voter)
        if isinstance(policy, CorrectedNoised):
            scale = policy.noise.scale_b
            u = _integration_axis(totals.min(), totals.max() + wi, scale, grid)
            step = u[1] - u[0]
            epd = 0.0
            for yes_won in (True, False):
                sel_yes = (totals + wi >= half) == yes_won
                sel_no = (totals >= half) == yes_won
                f_yes = _laplace_mixture(u, totals[sel_yes] + wi, probs[sel_yes], scale)
                f_no = _laplace_mixture(u, totals[sel_no], probs[sel_no], scale)
                epd += float(np.minimum(f_yes, f_no).sum() * step)
        else:
            scale = float(w.max()) / policy.epsilon
            u = _integration_axis(totals.min(), totals.max() + wi, scale, grid)
            step = u[1] - u[0]
            f_yes = _laplace_mixture(u, totals + wi, probs, scale)
            f_no = _laplace_mixture(u, totals, probs, scale)
            epd = float(np.minimum(f_yes, f_no).sum() * step)
        return None, epd

    bits, probs, totals = _full_profiles(w, p)
    own_yes = bits[:, voter] == 1
    if isinstance(policy, FullDisclosure):
        keys = [tuple(int(x) for x in row) for row in bits]
    elif isinstance(policy, WinnerOnly):
        keys = [0 if t >= half else 1 for t in totals]
    elif isinstance(policy, CorrectedNoised):  # zero-noise degenerate case
        keys = [float(v) for v in np.round(totals, 9)]
    else:
        raise TypeError(f"unknown tally policy: {policy!r}")

    joint_yes: dict = {}
    joint_no: dict = {}
    for key, pr, is_yes in zip(keys, probs, own_yes):
        table = joint_yes if is_yes else joint_no
        table[key] = table.get(key, 0.0) + pr

    per_outcome = {}
    epd = 0.0
    for key in set(joint_yes) | set(joint_no):
        jy = joint_yes.get(key, 0.0)
        jn = joint_no.get(key, 0.0)
        total = jy + jn
        if total == 0.0:
            continue
        ratios = []
        if prior > 0.0:
            ratios.append((jy / total) / prior)
        if prior < 1.0:
            ratios.append((jn / total) / (1.0 - prior))
        pd = min(ratios)
        per_outcome[key] = pd
        epd += total * pd
    return per_outcome, epd
