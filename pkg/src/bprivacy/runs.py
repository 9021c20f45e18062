"""Corpus-scale runners: attacks and bribery-cost analysis over proposals.

Each proposal is an independent task, so a corpus parallelizes across a
process pool; outputs are ordered by input position and seeded per
proposal index, making reports byte-identical for a fixed seed no matter
the worker count.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .attacks import noised_whale_attack, unified_attack
from .core import (
    VotingTranscript,
    calibrate_noise,
    raw_totals_units,
    tally_noised,
    tally_noised_per_choice,
    tally_winner,
)
from .dataset import IngestReport, LoadedProposal, RunConfig
from .game import CorrectedNoised, FullDisclosure, MonteCarloSpec, UtilityModel, WinnerOnly
from .optimizer import (
    AllOpposing,
    AllocationStrategy,
    BisectSpec,
    EqualSplit,
    Linear,
    TopK,
    TopMDC,
    compute_bprivacy,
    default_strategies,
    derive_seed,
    mdc,
    relative_bprivacy,
)

logger = logging.getLogger(__name__)

WORKERS_ENV = "BPRIVACY_WORKERS"

ATTACK_COLUMNS = [
    "proposal_id", "dao", "n_voters", "num_choices", "mode", "trials",
    "ballots_leaked_pct", "weight_leaked_pct",
    "deniability_broken_rate", "full_recovery_rate", "subset_sum_skipped",
]
ATTACK_DAO_COLUMNS = [
    "dao", "n_proposals", "mean_ballots_leaked_pct", "mean_weight_leaked_pct",
    "pct_deniability_broken", "pct_full_recovery",
]
BPRIVACY_COLUMNS = [
    "proposal_id", "dao", "n_voters", "mdc", "policy", "d",
    "budget", "relative", "p_succ", "strategy", "error",
]
BPRIVACY_DAO_COLUMNS = [
    "dao", "policy", "d", "n_proposals", "mean_mdc", "gmean_relative",
]
COHORT_COLUMNS = ["cohort", "policy", "d", "n_proposals", "gmean_relative"]


@dataclass
class RunOutput:
    mode: str
    per_proposal: list[dict]
    per_dao: list[dict]
    mdc_cohorts: list[dict]
    summary: dict


def resolve_workers(config: RunConfig) -> int:
    if config.workers is not None:
        return max(1, config.workers)
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def strategy_set(name: str) -> tuple[AllocationStrategy, ...]:
    """Named strategy portfolios for the budget search."""
    if name == "default":
        return default_strategies()
    if name == "quick":
        return (
            AllocationStrategy(Linear(), AllOpposing()),
            AllocationStrategy(Linear(), TopK(10)),
            AllocationStrategy(EqualSplit(), TopMDC()),
        )
    raise ValueError(f"unknown strategy set {name!r} (expected 'default' or 'quick')")


def _map_tasks(worker, tasks: list, n_workers: int) -> list:
    if n_workers <= 1 or len(tasks) <= 1:
        return [worker(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(worker, tasks))


# --- attacks -----------------------------------------------------------------


def _attack_task(task) -> dict:
    index, proposal, config, noised = task
    t = proposal.transcript
    started = time.perf_counter()
    if not noised:
        res = unified_attack(t.weights, raw_totals_units(t), t.num_choices, config.subset_sum_cap)
        row = {
            "ballots_leaked_pct": res.ballots_leaked_pct,
            "weight_leaked_pct": res.weight_leaked_pct,
            "deniability_broken_rate": float(res.deniability_broken),
            "full_recovery_rate": float(res.full_recovery),
            "subset_sum_skipped": res.subset_sum_skipped,
            "trials": 1,
            "mode": "raw",
        }
    else:
        total = float(t.weights_float().sum())
        spec = calibrate_noise(config.perturbation_d, config.frequency_q, total)
        winner = tally_winner(t).winner
        metrics = np.zeros(4)
        for trial in range(config.noised_trials):
            seed = derive_seed(config.seed, "noised-attack", index, trial)
            if t.num_choices == 2:
                noised_totals = tally_noised(t, spec, rng_seed=seed).totals
            else:
                noised_totals = tally_noised_per_choice(t, spec, rng_seed=seed).totals
            res = noised_whale_attack(
                t.weights_float(), noised_totals, t.num_choices,
                config.perturbation_d, total, true_winner=winner,
            )
            metrics += (
                res.ballots_leaked_pct,
                res.weight_leaked_pct,
                float(res.deniability_broken),
                float(res.full_recovery),
            )
        metrics /= config.noised_trials
        row = {
            "ballots_leaked_pct": float(metrics[0]),
            "weight_leaked_pct": float(metrics[1]),
            "deniability_broken_rate": float(metrics[2]),
            "full_recovery_rate": float(metrics[3]),
            "subset_sum_skipped": False,
            "trials": config.noised_trials,
            "mode": "noised",
        }
    row.update(
        proposal_id=t.proposal_id,
        dao=proposal.dao,
        n_voters=t.n,
        num_choices=t.num_choices,
    )
    logger.info(
        "attack proposal=%s dao=%s n=%d elapsed=%.3fs",
        t.proposal_id, proposal.dao, t.n, time.perf_counter() - started,
    )
    return row


def run_attacks(
    proposals: Sequence[LoadedProposal],
    config: RunConfig = RunConfig(),
    noised: bool = False,
) -> RunOutput:
    """Unified attack (or its noised-threshold variant) over a corpus."""
    tasks = [(i, p, config, noised) for i, p in enumerate(proposals)]
    rows = _map_tasks(_attack_task, tasks, resolve_workers(config))

    per_dao = []
    for dao in sorted({r["dao"] for r in rows}):
        sub = [r for r in rows if r["dao"] == dao]
        per_dao.append(
            {
                "dao": dao,
                "n_proposals": len(sub),
                "mean_ballots_leaked_pct": _mean(sub, "ballots_leaked_pct"),
                "mean_weight_leaked_pct": _mean(sub, "weight_leaked_pct"),
                "pct_deniability_broken": 100.0 * _mean(sub, "deniability_broken_rate"),
                "pct_full_recovery": 100.0 * _mean(sub, "full_recovery_rate"),
            }
        )
    summary = {
        "mode": "attack-noised" if noised else "attack",
        "n_proposals": len(rows),
        "mean_ballots_leaked_pct": _mean(rows, "ballots_leaked_pct"),
        "mean_weight_leaked_pct": _mean(rows, "weight_leaked_pct"),
        "pct_deniability_broken": 100.0 * _mean(rows, "deniability_broken_rate"),
        "pct_full_recovery": 100.0 * _mean(rows, "full_recovery_rate"),
        "config": _config_dict(config),
    }
    return RunOutput(summary["mode"], rows, per_dao, [], summary)


# --- bribery cost ------------------------------------------------------------


def _bprivacy_task(task) -> list[dict]:
    index, proposal, config, d_values = task
    t = proposal.transcript
    base = {
        "proposal_id": t.proposal_id,
        "dao": proposal.dao,
        "n_voters": t.n,
        "mdc": None,
        "error": "",
    }
    started = time.perf_counter()
    try:
        utility = UtilityModel.from_transcript(t, config.sigma)
        mdc_size = mdc(t)
        base["mdc"] = mdc_size
        total = float(t.weights_float().sum())
        mc = MonteCarloSpec(samples=config.mc_samples, seed=derive_seed(config.seed, "bprivacy", index))
        search = BisectSpec(rel_tol=config.bisect_rel_tol)
        strategies = strategy_set(config.strategy_set)

        policies = [("public", FullDisclosure(), None), ("winner", WinnerOnly(), None)]
        for d in d_values:
            policies.append(("noised", CorrectedNoised(calibrate_noise(d, config.frequency_q, total)), d))

        rows = []
        baseline = None
        for name, policy, d in policies:
            result = compute_bprivacy(
                t, utility, policy, config.target_p, strategies, mc, search
            )
            if name == "public":
                baseline = result
            relative = relative_bprivacy(result, baseline) if baseline is not None else None
            rows.append(
                dict(
                    base,
                    policy=name,
                    d=d,
                    budget=result.budget,
                    relative=relative,
                    p_succ=result.achieved_p_succ,
                    strategy=result.strategy.label if result.strategy else "",
                )
            )
        logger.info(
            "bprivacy proposal=%s dao=%s n=%d policies=%d elapsed=%.3fs",
            t.proposal_id, proposal.dao, t.n, len(policies), time.perf_counter() - started,
        )
        return rows
    except Exception as exc:  # per-proposal failures are recorded, not fatal
        logger.warning("bprivacy failed for proposal %s: %s", t.proposal_id, exc)
        return [
            dict(base, policy="", d=None, budget=None, relative=None,
                 p_succ=None, strategy="", error=str(exc))
        ]


def mdc_cohort(value: int) -> str:
    if value <= 1:
        return "<=1"
    if value <= 4:
        return "2-4"
    return ">=5"


def run_bprivacy(
    proposals: Sequence[LoadedProposal],
    config: RunConfig = RunConfig(),
    d_values: Sequence[float] | None = None,
) -> RunOutput:
    """Bribery budgets per proposal under full-disclosure, corrected-noised,
    and winner-only policies, with geometric-mean aggregation."""
    d_list = tuple(d_values) if d_values is not None else (config.perturbation_d,)
    tasks = [(i, p, config, d_list) for i, p in enumerate(proposals)]
    nested = _map_tasks(_bprivacy_task, tasks, resolve_workers(config))
    rows = [row for group in nested for row in group]
    ok = [r for r in rows if not r["error"]]

    groups = sorted({(r["dao"], r["policy"], r["d"]) for r in ok}, key=_group_key)
    per_dao = []
    for dao, policy, d in groups:
        sub = [r for r in ok if (r["dao"], r["policy"], r["d"]) == (dao, policy, d)]
        per_dao.append(
            {
                "dao": dao,
                "policy": policy,
                "d": d,
                "n_proposals": len(sub),
                "mean_mdc": _mean(sub, "mdc"),
                "gmean_relative": _gmean([r["relative"] for r in sub]),
            }
        )

    cohorts = []
    cohort_groups = sorted(
        {(mdc_cohort(r["mdc"]), r["policy"], r["d"]) for r in ok}, key=_group_key
    )
    for cohort, policy, d in cohort_groups:
        sub = [
            r for r in ok if (mdc_cohort(r["mdc"]), r["policy"], r["d"]) == (cohort, policy, d)
        ]
        cohorts.append(
            {
                "cohort": cohort,
                "policy": policy,
                "d": d,
                "n_proposals": len(sub),
                "gmean_relative": _gmean([r["relative"] for r in sub]),
            }
        )

    summary = {
        "mode": "bprivacy",
        "n_proposals": len(proposals),
        "n_failed": len(rows) - len(ok),
        "d_values": list(d_list),
        "gmean_relative_by_policy": {
            f"{policy}" if d is None else f"{policy}@d={d:g}": _gmean(
                [r["relative"] for r in ok if (r["policy"], r["d"]) == (policy, d)]
            )
            for policy, d in sorted({(r["policy"], r["d"]) for r in ok}, key=_group_key)
        },
        "config": _config_dict(config),
    }
    return RunOutput("bprivacy", rows, per_dao, cohorts, summary)


# --- report emission ---------------------------------------------------------


def _mean(rows: list[dict], key: str) -> float:
    return float(np.mean([r[key] for r in rows])) if rows else math.nan


def _gmean(values: list) -> float:
    finite = [v for v in values if v is not None and math.isfinite(v) and v > 0]
    if not finite:
        return math.nan
    return float(np.exp(np.mean(np.log(finite))))


def _group_key(group):
    return tuple("" if g is None else str(g) for g in group)


def _config_dict(config: RunConfig) -> dict:
    data = asdict(config)
    data["d_sweep"] = list(data["d_sweep"])
    return data


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating, np.integer)):
        return repr(value.item())
    return str(value)


def write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(row.get(c)) for c in columns])


def write_reports(
    output: RunOutput,
    out_dir: str | Path,
    ingest_report: IngestReport | None = None,
) -> list[Path]:
    """Emit summary.json, per_proposal.csv, per_dao.csv, and (for bribery
    runs) mdc_cohorts.csv into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    if output.mode.startswith("attack"):
        proposal_cols, dao_cols = ATTACK_COLUMNS, ATTACK_DAO_COLUMNS
    else:
        proposal_cols, dao_cols = BPRIVACY_COLUMNS, BPRIVACY_DAO_COLUMNS

    summary = dict(output.summary)
    if ingest_report is not None:
        summary["ingest"] = ingest_report.as_dict()
    path = out / "summary.json"
    path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    written.append(path)

    path = out / "per_proposal.csv"
    write_csv(path, output.per_proposal, proposal_cols)
    written.append(path)

    path = out / "per_dao.csv"
    write_csv(path, output.per_dao, dao_cols)
    written.append(path)

    if output.mode == "bprivacy":
        path = out / "mdc_cohorts.csv"
        write_csv(path, output.mdc_cohorts, COHORT_COLUMNS)
        written.append(path)
    return written
