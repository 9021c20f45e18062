"""Command-line entry points for corpus analysis.

Every run subcommand reads an NDJSON corpus, writes reports under --out,
and is fully reproducible from --seed.  Option precedence: command-line
flags override the --config file, which overrides built-in defaults.
"""

from __future__ import annotations

import json
import logging
import math
import sys
from pathlib import Path

import click

from .core import calibrate_noise
from .dataset import ATTACK_MODE, BPRIVACY_MODE, RunConfig, ingest
from .optimizer import mdc
from .runs import run_attacks, run_bprivacy, write_csv, write_reports

logger = logging.getLogger(__name__)


def _load_config(config_path: str | None, **flag_overrides) -> RunConfig:
    config = RunConfig.from_file(config_path) if config_path else RunConfig()
    return config.merged(**flag_overrides)


def _common_options(fn):
    fn = click.option("--seed", type=int, default=None, help="Base RNG seed.")(fn)
    fn = click.option(
        "--out", type=click.Path(file_okay=False), default="out", show_default=True,
        help="Report output directory.",
    )(fn)
    fn = click.option(
        "--config", "config_path", type=click.Path(exists=True, dir_okay=False),
        default=None, help="TOML or JSON config file.",
    )(fn)
    fn = click.option("--workers", type=int, default=None, help="Process pool size.")(fn)
    fn = click.option("--verbose", is_flag=True, help="Per-proposal progress logging.")(fn)
    return fn


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s %(message)s",
        stream=sys.stderr,
    )


@click.group()
@click.version_option(package_name="bprivacy")
def main() -> None:
    """Privacy analysis for weighted voting tallies."""


@main.command()
@click.argument("corpus", type=click.Path(exists=True))
@_common_options
@click.option("--subset-sum-cap", type=int, default=None, help="Residual-size cap for the subset-sum stage.")
@click.option("--abstention-choice", type=int, default=None, help="Choice index treated as abstention and dropped.")
def attack(corpus, seed, out, config_path, workers, verbose, subset_sum_cap, abstention_choice):
    """Extract ballots from exact raw tallies across a corpus."""
    _setup_logging(verbose)
    config = _load_config(
        config_path, seed=seed, workers=workers,
        subset_sum_cap=subset_sum_cap, abstention_choice=abstention_choice,
    )
    proposals, report = ingest(corpus, config, ATTACK_MODE)
    output = run_attacks(proposals, config, noised=False)
    paths = write_reports(output, out, report)
    click.echo(f"analyzed {len(proposals)} proposals; reports in {paths[0].parent}")


@main.command("attack-noised")
@click.argument("corpus", type=click.Path(exists=True))
@_common_options
@click.option("-d", "--perturbation-d", type=float, default=None, help="Tally perturbation bound d.")
@click.option("-q", "--frequency-q", type=float, default=None, help="Perturbation frequency q.")
@click.option("--trials", "noised_trials", type=int, default=None, help="Independent noise draws per proposal.")
@click.option("--abstention-choice", type=int, default=None)
def attack_noised(corpus, seed, out, config_path, workers, verbose,
                  perturbation_d, frequency_q, noised_trials, abstention_choice):
    """Run the conservative whale attack against noised tallies."""
    _setup_logging(verbose)
    config = _load_config(
        config_path, seed=seed, workers=workers, perturbation_d=perturbation_d,
        frequency_q=frequency_q, noised_trials=noised_trials,
        abstention_choice=abstention_choice,
    )
    proposals, report = ingest(corpus, config, ATTACK_MODE)
    output = run_attacks(proposals, config, noised=True)
    paths = write_reports(output, out, report)
    click.echo(f"analyzed {len(proposals)} proposals; reports in {paths[0].parent}")


@main.command()
@click.argument("corpus", type=click.Path(exists=True))
@_common_options
@click.option("-d", "--perturbation-d", type=float, default=None)
@click.option("-q", "--frequency-q", type=float, default=None)
@click.option("--target-p", type=float, default=None, help="Adversary success target.")
@click.option("--sigma", type=float, default=None, help="Voter utility standard deviation.")
@click.option("--mc-samples", type=int, default=None)
@click.option("--strategy-set", type=click.Choice(["default", "quick"]), default=None)
@click.option("--abstention-choice", type=int, default=None)
def bprivacy(corpus, seed, out, config_path, workers, verbose, perturbation_d,
             frequency_q, target_p, sigma, mc_samples, strategy_set, abstention_choice):
    """Minimum bribery budgets per proposal and tally policy."""
    _setup_logging(verbose)
    config = _load_config(
        config_path, seed=seed, workers=workers, perturbation_d=perturbation_d,
        frequency_q=frequency_q, target_p=target_p, sigma=sigma,
        mc_samples=mc_samples, strategy_set=strategy_set,
        abstention_choice=abstention_choice,
    )
    proposals, report = ingest(corpus, config, BPRIVACY_MODE)
    output = run_bprivacy(proposals, config)
    paths = write_reports(output, out, report)
    click.echo(f"analyzed {len(proposals)} proposals; reports in {paths[0].parent}")


@main.command()
@click.argument("corpus", type=click.Path(exists=True))
@_common_options
@click.option("--d-values", default=None,
              help="Comma-separated perturbation sweep, e.g. '0,0.05,0.1,0.3'.")
@click.option("--target-p", type=float, default=None)
@click.option("--mc-samples", type=int, default=None)
@click.option("--strategy-set", type=click.Choice(["default", "quick"]), default=None)
@click.option("--abstention-choice", type=int, default=None)
def sweep(corpus, seed, out, config_path, workers, verbose, d_values,
          target_p, mc_samples, strategy_set, abstention_choice):
    """Bribery budgets across a perturbation sweep, grouped by MDC cohort."""
    _setup_logging(verbose)
    config = _load_config(
        config_path, seed=seed, workers=workers, target_p=target_p,
        mc_samples=mc_samples, strategy_set=strategy_set,
        abstention_choice=abstention_choice,
    )
    values = (
        tuple(float(x) for x in d_values.split(",")) if d_values else config.d_sweep
    )
    proposals, report = ingest(corpus, config, BPRIVACY_MODE)
    output = run_bprivacy(proposals, config, d_values=values)
    paths = write_reports(output, out, report)
    click.echo(f"swept d={list(values)} over {len(proposals)} proposals; reports in {paths[0].parent}")


@main.command()
@click.option("-d", "--perturbation-d", type=float, required=True)
@click.option("-q", "--frequency-q", type=float, default=0.95, show_default=True)
@click.option("-W", "--total-weight", type=float, required=True)
def calibrate(perturbation_d, frequency_q, total_weight):
    """Print the Laplace scale for a tally-perturbation target."""
    spec = calibrate_noise(perturbation_d, frequency_q, total_weight)
    click.echo(json.dumps({
        "scale_b": spec.scale_b,
        "perturbation_d": perturbation_d,
        "frequency_q": frequency_q,
        "total_weight": total_weight,
    }, sort_keys=True))


@main.command("mdc")
@click.argument("corpus", type=click.Path(exists=True))
@_common_options
@click.option("--abstention-choice", type=int, default=None)
def mdc_command(corpus, seed, out, config_path, workers, verbose, abstention_choice):
    """Minimum decisive coalition size per proposal."""
    _setup_logging(verbose)
    config = _load_config(
        config_path, seed=seed, workers=workers, abstention_choice=abstention_choice
    )
    proposals, report = ingest(corpus, config, BPRIVACY_MODE)
    rows = []
    for p in proposals:
        rows.append({
            "proposal_id": p.transcript.proposal_id,
            "dao": p.dao,
            "n_voters": p.transcript.n,
            "mdc": mdc(p.transcript),
        })
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "per_proposal.csv", rows, ["proposal_id", "dao", "n_voters", "mdc"])
    finite = [r["mdc"] for r in rows]
    summary = {
        "mode": "mdc",
        "n_proposals": len(rows),
        "mean_mdc": (sum(finite) / len(finite)) if finite else math.nan,
        "ingest": report.as_dict(),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    click.echo(f"computed MDC for {len(rows)} proposals; reports in {out_dir}")


if __name__ == "__main__":
    main()
