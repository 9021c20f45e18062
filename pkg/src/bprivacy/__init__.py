"""Privacy analysis for weighted voting.

Quantifies what published tallies reveal: extracts individual ballots
from exact tallies (whale and subset-sum attacks), simulates a bribery
game to price vote-buying under different tally-disclosure policies, and
calibrates Laplace tally noise that trades transparency for bribery
resistance.
"""

from .attacks import (
    AttackResult,
    assignment_consistent,
    exists_assignment,
    noised_whale_attack,
    subset_sum_attack,
    unified_attack,
    whale_attack,
)
from .core import (
    DEFAULT_SCALE,
    CorrectedNoisedTally,
    FullTally,
    NoiseSpec,
    NoisedTally,
    RawTally,
    VotingTranscript,
    Weight,
    WinnerTally,
    calibrate_noise,
    tally_corrected_noised,
    tally_dp,
    tally_full,
    tally_noised,
    tally_noised_per_choice,
    tally_raw,
    tally_winner,
)
from .dataset import IngestReport, LoadedProposal, ProposalRecord, RunConfig, ingest
from .game import (
    CorrectedNoised,
    DpNoised,
    EquilibriumState,
    FullDisclosure,
    MonteCarloSpec,
    NoiseGrid,
    TallyPolicy,
    UtilityModel,
    WinnerOnly,
    bribe_margin,
    optimal_bribe_margin_bruteforce,
    pivotality_map,
    plausible_deniability,
    solve_equilibrium,
    success_probability,
)
from .optimizer import (
    AllocationStrategy,
    BisectSpec,
    BPrivacyResult,
    allocate,
    compute_bprivacy,
    default_strategies,
    mdc,
    relative_bprivacy,
)
from .runs import RunOutput, run_attacks, run_bprivacy, write_reports

__version__ = "0.1.0"
