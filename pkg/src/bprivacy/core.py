"""Voting transcripts, tally algorithms, and tally-noise calibration.

Voting weights are exact fixed-point numbers: an integer count of
``10**-scale`` units.  Sums of weights are therefore associative and
collision-free, which the ballot-extraction attacks depend on.  Noised
tallies are plain floats, since noise deliberately destroys exactness.

Binary transcripts follow the convention that choice index 0 is the
"yes" side and index 1 the "no" side; ties in the winner computation are
broken toward the lowest choice index.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

DEFAULT_SCALE = 18

_DECIMAL_RE = re.compile(r"^(\d+)(?:\.(\d+))?$")


@dataclass(frozen=True)
class Weight:
    """Non-negative fixed-point voting weight, ``units * 10**-scale``."""

    units: int
    scale: int = DEFAULT_SCALE

    def __post_init__(self) -> None:
        if not isinstance(self.units, int):
            raise TypeError(f"units must be int, got {type(self.units).__name__}")
        if self.units < 0:
            raise ValueError(f"weight must be non-negative, got {self.units} units")
        if self.scale < 0:
            raise ValueError("scale must be non-negative")

    @classmethod
    def from_string(cls, text: str, scale: int = DEFAULT_SCALE) -> "Weight":
        """Parse a plain decimal string losslessly at the given scale.

        Rejects strings with more fractional digits than the scale can
        represent, so ingestion never silently rounds.
        """
        match = _DECIMAL_RE.match(text.strip())
        if match is None:
            raise ValueError(f"not a plain non-negative decimal: {text!r}")
        whole, frac = match.group(1), match.group(2) or ""
        if len(frac) > scale:
            raise ValueError(
                f"{text!r} has {len(frac)} fractional digits, exceeds scale {scale}"
            )
        units = int(whole) * 10**scale
        if frac:
            units += int(frac.ljust(scale, "0"))
        return cls(units, scale)

    @classmethod
    def parse(cls, value: Union["Weight", int, float, str], scale: int = DEFAULT_SCALE) -> "Weight":
        """Coerce a weight-like value.

        Floats go through their shortest decimal representation (``repr``),
        so ``Weight.parse(1.1)`` means exactly 1.1.  Ints are whole tokens.
        """
        if isinstance(value, Weight):
            if value.scale != scale:
                raise ValueError(f"weight scale {value.scale} != expected {scale}")
            return value
        if isinstance(value, bool):
            raise TypeError("bool is not a weight")
        if isinstance(value, int):
            return cls(value * 10**scale, scale)
        if isinstance(value, float):
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"weight must be finite and non-negative: {value}")
            return cls.from_string(repr(value), scale)
        if isinstance(value, str):
            return cls.from_string(value, scale)
        raise TypeError(f"cannot parse weight from {type(value).__name__}")

    @property
    def value(self) -> float:
        return self.units / 10**self.scale

    def __add__(self, other: "Weight") -> "Weight":
        self._check_scale(other)
        return Weight(self.units + other.units, self.scale)

    def __sub__(self, other: "Weight") -> "Weight":
        self._check_scale(other)
        return Weight(self.units - other.units, self.scale)

    def __lt__(self, other: "Weight") -> bool:
        self._check_scale(other)
        return self.units < other.units

    def __le__(self, other: "Weight") -> bool:
        self._check_scale(other)
        return self.units <= other.units

    def __gt__(self, other: "Weight") -> bool:
        self._check_scale(other)
        return self.units > other.units

    def __ge__(self, other: "Weight") -> bool:
        self._check_scale(other)
        return self.units >= other.units

    def _check_scale(self, other: "Weight") -> None:
        if not isinstance(other, Weight):
            raise TypeError(f"expected Weight, got {type(other).__name__}")
        if self.scale != other.scale:
            raise ValueError(f"mixed weight scales: {self.scale} vs {other.scale}")

    def __str__(self) -> str:
        whole, frac = divmod(self.units, 10**self.scale) if self.scale else (self.units, 0)
        if frac == 0:
            return str(whole)
        digits = str(frac).rjust(self.scale, "0").rstrip("0")
        return f"{whole}.{digits}"


@dataclass(frozen=True)
class VotingTranscript:
    """Per-voter weights and choices for one proposal."""

    proposal_id: str
    num_choices: int
    weights: tuple[Weight, ...]
    choices: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.num_choices < 2:
            raise ValueError("a transcript needs at least two choices")
        if len(self.weights) != len(self.choices):
            raise ValueError(
                f"{len(self.weights)} weights but {len(self.choices)} choices"
            )
        if not self.weights:
            raise ValueError("a transcript needs at least one voter")
        scale = self.weights[0].scale
        for w in self.weights:
            if w.scale != scale:
                raise ValueError("all weights in a transcript must share one scale")
        for c in self.choices:
            if not 0 <= c < self.num_choices:
                raise ValueError(f"choice index {c} out of range [0, {self.num_choices})")
        if self.total_units <= 0:
            raise ValueError("total voting weight must be positive")

    @classmethod
    def from_values(
        cls,
        weights: Sequence[Union[Weight, int, float, str]],
        choices: Sequence[int],
        num_choices: int = 2,
        proposal_id: str = "",
        scale: int = DEFAULT_SCALE,
    ) -> "VotingTranscript":
        parsed = tuple(Weight.parse(w, scale) for w in weights)
        return cls(proposal_id, num_choices, parsed, tuple(int(c) for c in choices))

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def scale(self) -> int:
        return self.weights[0].scale

    @property
    def weight_units(self) -> tuple[int, ...]:
        return tuple(w.units for w in self.weights)

    @property
    def total_units(self) -> int:
        return sum(w.units for w in self.weights)

    @property
    def total_weight(self) -> Weight:
        return Weight(self.total_units, self.scale)

    def weights_float(self) -> np.ndarray:
        return np.array([w.value for w in self.weights], dtype=np.float64)


@dataclass(frozen=True)
class RawTally:
    """Exact per-choice weight totals."""

    totals: tuple[Weight, ...]


@dataclass(frozen=True)
class WinnerTally:
    winner: int


@dataclass(frozen=True)
class NoisedTally:
    """Per-choice totals after noise; may be negative or exceed W."""

    totals: tuple[float, ...]


@dataclass(frozen=True)
class CorrectedNoisedTally:
    """Noised totals published together with the true winner."""

    totals: tuple[float, ...]
    winner: int


@dataclass(frozen=True)
class FullTally:
    transcript: VotingTranscript


TallyOutcome = Union[RawTally, WinnerTally, NoisedTally, CorrectedNoisedTally, FullTally]


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-centred Laplace noise with scale ``scale_b``.

    When built through :func:`calibrate_noise`, the calibration inputs
    (perturbation bound d, frequency q, total weight W) are attached and
    satisfy ``scale_b == d * W / -ln(1 - q)``.
    """

    scale_b: float
    perturbation_d: float | None = None
    frequency_q: float | None = None
    total_weight: float | None = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.scale_b) or self.scale_b < 0:
            raise ValueError(f"Laplace scale must be finite and >= 0: {self.scale_b}")

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Draw noise; a zero scale yields exact zeros."""
        if self.scale_b == 0.0:
            return 0.0 if size is None else np.zeros(size)
        return rng.laplace(0.0, self.scale_b, size=size)


def calibrate_noise(d: float, q: float, total_weight: float) -> NoiseSpec:
    """Solve Pr(|Y| <= d*W) = q for the Laplace scale.

    The Laplace CDF gives 1 - exp(-dW/b) = q, hence b = dW / -ln(1-q).
    d = 0 is the degenerate no-noise limit (b = 0); q must lie strictly
    inside (0, 1).
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"frequency q must be in (0, 1), got {q}")
    if not 0.0 <= d <= 1.0:
        raise ValueError(f"perturbation d must be in [0, 1], got {d}")
    if total_weight <= 0:
        raise ValueError(f"total weight must be positive, got {total_weight}")
    scale_b = d * total_weight / -math.log1p(-q)
    return NoiseSpec(scale_b, perturbation_d=d, frequency_q=q, total_weight=total_weight)


def raw_totals_units(t: VotingTranscript) -> list[int]:
    """Exact per-choice totals in weight units."""
    totals = [0] * t.num_choices
    for w, c in zip(t.weights, t.choices):
        totals[c] += w.units
    return totals


def tally_raw(t: VotingTranscript) -> RawTally:
    """Exact per-choice weight totals; they partition W."""
    units = raw_totals_units(t)
    return RawTally(tuple(Weight(u, t.scale) for u in units))


def winner_index(totals: Sequence) -> int:
    """Index of the maximal total, lowest index on ties."""
    best = 0
    for j in range(1, len(totals)):
        if totals[j] > totals[best]:
            best = j
    return best


def tally_winner(t: VotingTranscript) -> WinnerTally:
    return WinnerTally(winner_index(raw_totals_units(t)))


def tally_full(t: VotingTranscript) -> FullTally:
    return FullTally(t)


def tally_noised(
    t: VotingTranscript,
    spec: NoiseSpec,
    rng_seed: int | None = None,
    *,
    noise_draw: float | None = None,
) -> NoisedTally:
    """Binary noised tally from a single Laplace draw.

    One draw y perturbs both totals symmetrically so they still sum to W:
    choice 0 is published as ``raw[0] - y`` and choice 1 as ``raw[1] + y``.
    ``noise_draw`` injects a fixed y instead of drawing from the seed, for
    reproducing worked examples.
    """
    if t.num_choices != 2:
        raise ValueError("single-draw noised tally requires a binary transcript; "
                         "use tally_noised_per_choice for more choices")
    if noise_draw is None:
        y = float(spec.sample(np.random.default_rng(rng_seed)))
    else:
        y = float(noise_draw)
    raw0, raw1 = (w.value for w in tally_raw(t).totals)
    return NoisedTally((raw0 - y, raw1 + y))


def tally_noised_per_choice(
    t: VotingTranscript,
    spec: NoiseSpec,
    rng_seed: int | None = None,
    *,
    noise_draws: Sequence[float] | None = None,
) -> NoisedTally:
    """Noised tally with an independent draw added to every choice total."""
    if noise_draws is None:
        draws = np.asarray(
            spec.sample(np.random.default_rng(rng_seed), size=t.num_choices),
            dtype=np.float64,
        )
    else:
        draws = np.asarray(noise_draws, dtype=np.float64)
        if draws.shape != (t.num_choices,):
            raise ValueError(f"need {t.num_choices} noise draws, got {draws.shape}")
    raw = np.array([w.value for w in tally_raw(t).totals])
    return NoisedTally(tuple(float(x) for x in raw + draws))


def tally_corrected_noised(
    t: VotingTranscript,
    spec: NoiseSpec,
    rng_seed: int | None = None,
    *,
    noise_draw: float | None = None,
) -> CorrectedNoisedTally:
    """Noised totals plus the true winner, so noise never misreports the outcome."""
    noised = tally_noised(t, spec, rng_seed, noise_draw=noise_draw)
    return CorrectedNoisedTally(noised.totals, tally_winner(t).winner)


def tally_dp(
    t: VotingTranscript,
    epsilon: float,
    rng_seed: int | None = None,
    *,
    noise_draw: float | None = None,
) -> NoisedTally:
    """Binary tally with Laplace(w_max / epsilon) noise added to the yes total.

    The yes-total sum has L1 sensitivity w_max under a single vote change,
    so this is the standard Laplace mechanism at privacy budget epsilon.
    """
    if t.num_choices != 2:
        raise ValueError("the Laplace-mechanism tally requires a binary transcript")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    w_max = max(w.value for w in t.weights)
    if noise_draw is None:
        y = float(np.random.default_rng(rng_seed).laplace(0.0, w_max / epsilon))
    else:
        y = float(noise_draw)
    raw0, raw1 = (w.value for w in tally_raw(t).totals)
    return NoisedTally((raw0 + y, raw1 - y))
