"""Corpus ingestion: newline-delimited JSON proposal records.

One record per line:

    {"id": "prop-1", "dao": "ExampleDAO", "num_choices": 2,
     "voters": [{"weight": "12.5", "choice": 0}, ...],
     "metadata": {"space": "example.eth"}}

Weights are decimal strings parsed losslessly at the configured scale;
anything that would round is rejected.  Malformed lines are skipped and
counted, a missing input path is fatal.
"""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterator

from .core import VotingTranscript, Weight

logger = logging.getLogger(__name__)

ATTACK_MODE = "attack"
BPRIVACY_MODE = "bprivacy"


@dataclass(frozen=True)
class ProposalRecord:
    id: str
    dao: str
    num_choices: int
    voters: tuple[tuple[str, int], ...]  # (decimal weight string, choice index)
    metadata: dict[str, str] | None = None


@dataclass(frozen=True)
class RunConfig:
    """Run parameters; defaults match the headline simulation setup."""

    seed: int = 0
    perturbation_d: float = 0.1
    frequency_q: float = 0.95
    target_p: float = 0.9
    sigma: float = 1.0
    mc_samples: int = 1000
    subset_sum_cap: int = 45
    noised_trials: int = 10
    strategy_set: str = "default"
    scale: int = 18
    abstention_choice: int | None = None
    voter_cap: int = 30_000
    workers: int | None = None
    bisect_rel_tol: float = 0.01
    d_sweep: tuple[float, ...] = (0.0, 0.02, 0.05, 0.1, 0.3, 1.0)

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        unknown = set(data) - cls.field_names()
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "d_sweep" in data:
            data = dict(data, d_sweep=tuple(data["d_sweep"]))
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".toml":
            if sys.version_info >= (3, 11):
                import tomllib
            else:
                import tomli as tomllib
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
        return cls.from_mapping(data)

    def merged(self, **overrides) -> "RunConfig":
        cleaned = {k: v for k, v in overrides.items() if v is not None}
        if "d_sweep" in cleaned:
            cleaned["d_sweep"] = tuple(cleaned["d_sweep"])
        return replace(self, **cleaned)


@dataclass(frozen=True)
class LoadedProposal:
    dao: str
    transcript: VotingTranscript


@dataclass
class IngestReport:
    accepted: int = 0
    excluded: dict[str, int] = field(default_factory=dict)

    def exclude(self, reason: str) -> None:
        self.excluded[reason] = self.excluded.get(reason, 0) + 1

    @property
    def total_seen(self) -> int:
        return self.accepted + sum(self.excluded.values())

    def as_dict(self) -> dict:
        return {"accepted": self.accepted, "excluded": dict(sorted(self.excluded.items()))}


def _iter_lines(path: Path) -> Iterator[tuple[str, int, str]]:
    if not path.exists():
        raise FileNotFoundError(f"input path does not exist: {path}")
    files = sorted(p for p in path.iterdir() if p.is_file()) if path.is_dir() else [path]
    for file in files:
        with file.open() as handle:
            for lineno, line in enumerate(handle, start=1):
                if line.strip():
                    yield str(file), lineno, line


def parse_record(line: str) -> ProposalRecord:
    data = json.loads(line)
    voters = tuple((str(v["weight"]), int(v["choice"])) for v in data["voters"])
    return ProposalRecord(
        id=str(data["id"]),
        dao=str(data.get("dao", "unknown")),
        num_choices=int(data["num_choices"]),
        voters=voters,
        metadata=data.get("metadata"),
    )


def record_to_json(record: ProposalRecord) -> str:
    payload = {
        "id": record.id,
        "dao": record.dao,
        "num_choices": record.num_choices,
        "voters": [{"weight": w, "choice": c} for w, c in record.voters],
    }
    if record.metadata is not None:
        payload["metadata"] = record.metadata
    return json.dumps(payload, sort_keys=True)


def transcript_to_record(t: VotingTranscript, dao: str = "unknown") -> ProposalRecord:
    return ProposalRecord(
        id=t.proposal_id,
        dao=dao,
        num_choices=t.num_choices,
        voters=tuple((str(w), c) for w, c in zip(t.weights, t.choices)),
    )


def _build_transcript(record: ProposalRecord, config: RunConfig) -> tuple[VotingTranscript | None, str | None]:
    """Apply the abstention filter and parse weights; (transcript, reject reason)."""
    num_choices = record.num_choices
    voters = list(record.voters)
    abstain = config.abstention_choice
    if abstain is not None and 0 <= abstain < num_choices:
        voters = [(w, c) for w, c in voters if c != abstain]
        voters = [(w, c - 1 if c > abstain else c) for w, c in voters]
        num_choices -= 1
    if not voters:
        return None, "empty_after_abstention"
    if num_choices < 2:
        return None, "too_few_choices"
    try:
        weights = tuple(Weight.from_string(w, config.scale) for w, _ in voters)
        transcript = VotingTranscript(
            proposal_id=record.id,
            num_choices=num_choices,
            weights=weights,
            choices=tuple(c for _, c in voters),
        )
    except ValueError as exc:
        logger.warning("proposal %s rejected: %s", record.id, exc)
        return None, "invalid_record"
    return transcript, None


def ingest(
    path: str | Path,
    config: RunConfig = RunConfig(),
    mode: str = ATTACK_MODE,
) -> tuple[list[LoadedProposal], IngestReport]:
    """Load, validate, and filter a proposal corpus.

    Attack mode accepts any number of choices; bribery mode keeps only
    binary proposals and drops those above the voter cap (equilibrium
    cost grows too fast beyond it).
    """
    if mode not in (ATTACK_MODE, BPRIVACY_MODE):
        raise ValueError(f"mode must be {ATTACK_MODE!r} or {BPRIVACY_MODE!r}")
    report = IngestReport()
    proposals: list[LoadedProposal] = []
    for source, lineno, line in _iter_lines(Path(path)):
        try:
            record = parse_record(line)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            logger.warning("%s:%d skipped malformed record: %s", source, lineno, exc)
            report.exclude("malformed")
            continue
        transcript, reason = _build_transcript(record, config)
        if transcript is None:
            report.exclude(reason)
            continue
        if mode == BPRIVACY_MODE:
            if transcript.num_choices != 2:
                report.exclude("non_binary")
                continue
            if transcript.n > config.voter_cap:
                report.exclude("over_voter_cap")
                continue
        proposals.append(LoadedProposal(record.dao, transcript))
        report.accepted += 1
    return proposals, report
