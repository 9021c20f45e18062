"""NDJSON ingestion, filtering, and config handling."""

import json

import pytest

from bprivacy.dataset import (
    ATTACK_MODE,
    BPRIVACY_MODE,
    RunConfig,
    ingest,
    parse_record,
    record_to_json,
    transcript_to_record,
)


def write_corpus(tmp_path, records, name="corpus.ndjson"):
    path = tmp_path / name
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    return path


def record(id="p1", dao="TestDAO", num_choices=2, voters=None, **extra):
    if voters is None:
        voters = [{"weight": "1.5", "choice": 0}, {"weight": "2", "choice": 1}]
    return {"id": id, "dao": dao, "num_choices": num_choices, "voters": voters, **extra}


class TestIngest:
    def test_basic_load(self, tmp_path):
        path = write_corpus(tmp_path, [record()])
        proposals, report = ingest(path, RunConfig(), ATTACK_MODE)
        assert report.accepted == 1
        t = proposals[0].transcript
        assert proposals[0].dao == "TestDAO"
        assert t.n == 2
        assert str(t.weights[0]) == "1.5"

    def test_malformed_lines_skipped_not_fatal(self, tmp_path):
        path = tmp_path / "corpus.ndjson"
        path.write_text(
            json.dumps(record()) + "\n"
            + "this is not json\n"
            + json.dumps({"id": "x", "num_choices": 2}) + "\n"
        )
        proposals, report = ingest(path, RunConfig(), ATTACK_MODE)
        assert report.accepted == 1
        assert report.excluded["malformed"] == 2

    def test_missing_path_is_fatal(self):
        with pytest.raises(FileNotFoundError):
            ingest("/nonexistent/corpus.ndjson")

    def test_multichoice_accepted_for_attacks_filtered_for_bprivacy(self, tmp_path):
        three = record(
            num_choices=3,
            voters=[{"weight": "1", "choice": 0}, {"weight": "1", "choice": 2}],
        )
        path = write_corpus(tmp_path, [three])
        accepted, _ = ingest(path, RunConfig(), ATTACK_MODE)
        assert len(accepted) == 1
        filtered, report = ingest(path, RunConfig(), BPRIVACY_MODE)
        assert not filtered
        assert report.excluded["non_binary"] == 1

    def test_voter_cap_applies_to_bprivacy_only(self, tmp_path):
        big = record(voters=[{"weight": "1", "choice": i % 2} for i in range(8)])
        path = write_corpus(tmp_path, [big])
        config = RunConfig(voter_cap=5)
        assert len(ingest(path, config, ATTACK_MODE)[0]) == 1
        filtered, report = ingest(path, config, BPRIVACY_MODE)
        assert not filtered
        assert report.excluded["over_voter_cap"] == 1

    def test_abstention_dropped_and_indices_compacted(self, tmp_path):
        rec = record(
            num_choices=3,
            voters=[
                {"weight": "1", "choice": 0},  # abstain
                {"weight": "2", "choice": 1},
                {"weight": "3", "choice": 2},
            ],
        )
        path = write_corpus(tmp_path, [rec])
        config = RunConfig(abstention_choice=0)
        proposals, _ = ingest(path, config, BPRIVACY_MODE)
        t = proposals[0].transcript
        assert t.n == 2
        assert t.num_choices == 2
        assert t.choices == (0, 1)

    def test_lossy_weight_rejected(self, tmp_path):
        rec = record(voters=[{"weight": "1." + "1" * 19, "choice": 0}])
        path = write_corpus(tmp_path, [rec])
        proposals, report = ingest(path, RunConfig(scale=18), ATTACK_MODE)
        assert not proposals
        assert report.excluded["invalid_record"] == 1

    def test_directory_of_files(self, tmp_path):
        write_corpus(tmp_path, [record(id="a")], name="a.ndjson")
        write_corpus(tmp_path, [record(id="b")], name="b.ndjson")
        proposals, report = ingest(tmp_path, RunConfig(), ATTACK_MODE)
        assert [p.transcript.proposal_id for p in proposals] == ["a", "b"]

    def test_roundtrip_weight_strings(self, tmp_path):
        voters = [
            {"weight": "1.100000000000000001", "choice": 0},
            {"weight": "42", "choice": 1},
            {"weight": "0.000000000000000007", "choice": 0},
        ]
        path = write_corpus(tmp_path, [record(voters=voters)])
        proposals, _ = ingest(path, RunConfig(), ATTACK_MODE)
        rec = transcript_to_record(proposals[0].transcript, proposals[0].dao)
        assert [w for w, _ in rec.voters] == [v["weight"] for v in voters]
        parsed = parse_record(record_to_json(rec))
        assert parsed.voters == rec.voters


class TestRunConfig:
    def test_defaults(self):
        config = RunConfig()
        assert config.perturbation_d == 0.1
        assert config.frequency_q == 0.95
        assert config.target_p == 0.9
        assert config.sigma == 1.0
        assert config.mc_samples == 1000
        assert config.subset_sum_cap == 45
        assert config.noised_trials == 10
        assert config.voter_cap == 30_000

    def test_json_file_and_overrides(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"seed": 7, "perturbation_d": 0.3}))
        config = RunConfig.from_file(path)
        assert config.seed == 7 and config.perturbation_d == 0.3
        merged = config.merged(seed=9, target_p=None)
        assert merged.seed == 9
        assert merged.target_p == 0.9  # None means "not overridden"

    def test_toml_file(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text('seed = 3\nstrategy_set = "quick"\nd_sweep = [0.0, 0.1]\n')
        config = RunConfig.from_file(path)
        assert config.seed == 3
        assert config.strategy_set == "quick"
        assert config.d_sweep == (0.0, 0.1)

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError):
            RunConfig.from_mapping({"not_a_key": 1})
