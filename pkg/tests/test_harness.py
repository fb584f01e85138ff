import json
from dataclasses import replace

import pytest

from socialfl.harness import cli
from socialfl.harness.config import AttackGrid, ConfigError, ExperimentConfig, config_from_dict, load_config
from socialfl.harness.experiments import (
    run_coalition_experiment,
    run_consensus_experiment,
    run_full_pipeline,
    run_provenance_experiment,
)
from socialfl.harness.report import SCHEMAS, SchemaError, read_csv, render_csv, write_csv
from socialfl.ledger import H, OffchainStore, read_chain_export, validate_chain


def small(seed=3, **kw):
    base = dict(
        master_seed=seed, n_avatars=20, rounds=5, consensus_heights=10,
        attack_grid=AttackGrid(ratios=(0.2, 1.0), trials=3, n_clients=10, verification_trials=2),
    )
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    def test_defaults(self):
        c = ExperimentConfig(master_seed=1)
        assert c.n_avatars == 100 and c.trust.alpha_mix == 0.7 and c.sortition.committee_size == 10
        assert c.verify.s_min == 0.95 and c.rounds == 5

    def test_typo_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            config_from_dict({"master_seed": 1, "trust": {"alpha_mx": 0.5}})

    def test_missing_seed(self):
        with pytest.raises(ConfigError, match="master_seed"):
            config_from_dict({"n_avatars": 5})

    def test_round_trip_and_digest(self, tmp_path):
        c = small()
        c.save(tmp_path / "c.json")
        back = load_config(tmp_path / "c.json")
        assert back == c and back.digest() == c.digest()
        assert c.digest() == H(c.canonical_bytes()).hex()
        assert c.with_seed(4).digest() != c.digest()

    def test_profiles(self):
        c = ExperimentConfig(master_seed=0, n_full_nodes=10, byz_fraction=0.3)
        assert c.node_profiles() == ["honest"] * 7 + ["silent", "equivocator", "invalid-proposer"]


class TestReport:
    def test_every_schema_parses_back(self, tmp_path):
        sample = {
            "coalition": (1, 0.5, 0.4, 3),
            "coalition_trace": (0, 0.4, 20, 0),
            "consensus": (1, "ab", [10, 9], 2, 2),
            "consensus_summary": (10, 0, 0, 0.9, ""),
            "provenance": ("stealing", 0.1, 200, 0, 0.0),
            "verification": ("genuine_owned", 200, 200, 1.0),
            "pipeline_rounds": (1, 3, 0.9, 3, 1, "ff"),
            "payments": (1, 1, "aa", True),
        }
        assert set(sample) == set(SCHEMAS)
        for name, row in sample.items():
            path = write_csv(tmp_path / f"{name}.csv", name, [row])
            (parsed,) = read_csv(path, name)
            assert tuple(parsed) == SCHEMAS[name]

    def test_bad_header(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(SchemaError):
            read_csv(p, "coalition")

    def test_render_format(self):
        text = render_csv("consensus", [(1, "empty", [3, 4], 0, 1)])
        assert text.splitlines()[1] == "1,empty,3;4,0,1"


class TestExperiments:
    def test_single_avatar_coalition(self, tmp_path):
        run = run_coalition_experiment(small(n_avatars=1), tmp_path)
        assert len(run.rows) == 1
        assert len(read_csv(tmp_path / "coalition.csv", "coalition")) == 1

    def test_same_seed_identical_csvs(self, tmp_path):
        for d in ("a", "b"):
            run_coalition_experiment(small(), tmp_path / d)
            run_consensus_experiment(small(), tmp_path / d)
            run_provenance_experiment(small(), tmp_path / d)
        for name in ("coalition", "coalition_trace", "consensus", "consensus_summary", "provenance", "verification"):
            assert (tmp_path / "a" / f"{name}.csv").read_bytes() == (tmp_path / "b" / f"{name}.csv").read_bytes()

    def test_consensus_summary(self, tmp_path):
        run = run_consensus_experiment(small(byz_fraction=0.3, n_full_nodes=10), tmp_path)
        row = read_csv(tmp_path / "consensus_summary.csv", "consensus_summary")[0]
        assert row["heights"] == "10" and row["safety_violations"] == "0"
        assert run.safety_violations == 0

    def test_provenance_rows(self, tmp_path):
        run = run_provenance_experiment(small(), tmp_path)
        assert len(run.rows) == 4
        assert run.rate("stealing", 1.0) == 1.0 and run.rate("counterfeiting", 0.2) == 0.0


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe")
    return run_full_pipeline(small(), out), out


class TestPipeline:
    def test_blocks_per_round(self, pipeline):
        run, _ = pipeline
        blocks = run.state.chain[1:]
        assert len(blocks) == 6  # five rounds plus the provenance record
        for rnd, block in enumerate(blocks[:5], start=1):
            kinds = [tx.KIND for tx in block.txs]
            assert kinds.count("gaTx") == 1
            assert all(tx.round == rnd for tx in block.txs if tx.KIND in ("saTx", "gaTx"))
        assert run.satx_per_round == run.clusters_per_round
        assert [tx.KIND for tx in blocks[-1].txs] == ["provTx"]

    def test_chain_and_store_valid(self, pipeline):
        run, out = pipeline
        validate_chain(run.state.chain, OffchainStore(out / "offchain"), run.state.registry)
        assert len(read_chain_export(out / "chain.jsonl")) == 7

    def test_manifest(self, pipeline):
        run, out = pipeline
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config_digest"] == H(small().canonical_bytes()).hex()
        assert manifest["verdict"] == "owned" == run.verdict
        assert manifest["chain_tip"] == run.state.tip.hash.hex()

    def test_payments_settle(self, pipeline):
        _, out = pipeline
        rows = read_csv(out / "payments.csv", "payments")
        assert [r["commit_index"] for r in rows] == ["1", "2", "3", "4", "5"]
        assert all(r["settled"] == "true" for r in rows)


class TestCli:
    def test_pipeline_command(self, tmp_path, capsys):
        small().save(tmp_path / "c.json")
        assert cli.main(["pipeline", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 0
        assert "manifest.json" in capsys.readouterr().out

    def test_figures_written(self, tmp_path):
        small(n_avatars=10).save(tmp_path / "c.json")
        assert cli.main(["coalition", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "coalition.png").stat().st_size > 0
        assert cli.main(["coalition", "--no-figures", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "p")]) == 0
        assert not (tmp_path / "p" / "coalition.png").exists()

    def test_bad_config_exit_code(self, tmp_path, capsys):
        (tmp_path / "bad.json").write_text(json.dumps({"master_seed": 1, "roundz": 3}))
        assert cli.main(["coalition", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path)]) != 0
        assert "ConfigError" in capsys.readouterr().err

    def test_bad_seed(self, tmp_path):
        assert cli.main(["coalition", "--seed", "-1", "--out", str(tmp_path)]) != 0
