"""Experiment drivers.  Each writes fixed-schema CSVs into an output
directory and returns the in-memory results for programmatic use."""

from __future__ import annotations

import json
import platform
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

import socialfl
from socialfl.coalition import (
    GameTrace,
    Partition,
    form_stable_partition,
    noncoop_payoff,
    random_profiles,
)
from socialfl.consensus import HeightResult, NetworkState, node_id, run_height
from socialfl.flsim import GroundTruth, run_round
from socialfl.harness.config import ExperimentConfig
from socialfl.harness.report import write_csv
from socialfl.ledger import (
    EMPTY_BLOCK,
    HashchainState,
    KeyRegistry,
    OffchainStore,
    build_transaction,
    export_chain,
    hashchain_commit,
    hashchain_settle,
    validate_chain,
)
from socialfl.provenance import build_world, collusion_successes, verification_trials, verify_ownership
from socialfl.social_graph import random_graph

TASK_ID = "task-0"
REQUESTER = "requester"
CLOUD = "cloud"
TEE = "tee"


def _out(config: ExperimentConfig, out_dir) -> Path:
    path = Path(out_dir if out_dir is not None else config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


# -- coalition --------------------------------------------------------------


@dataclass
class CoalitionRun:
    trace: GameTrace
    noncoop_avg_payoff: float
    rows: list[tuple]
    paths: list[Path] = field(default_factory=list)

    @property
    def final_avg_payoff(self) -> float:
        return self.trace.avg_payoff_series[-1][1]


def form_case_study_partition(config: ExperimentConfig):
    graph = random_graph(config.n_avatars, config.density, config.master_seed, config.trust)
    profiles = random_profiles(config.n_avatars, config.master_seed)
    trace = form_stable_partition(graph, profiles, config.quality, config.max_iter)
    return graph, profiles, trace


def run_coalition_experiment(config: ExperimentConfig, out_dir=None, write: bool = True) -> CoalitionRun:
    """Best-response dynamics against the all-singleton baseline.

    The main CSV has one row per completed pass (iterations 1..T); the
    trace CSV additionally carries the all-singleton start as iteration 0.
    """
    _, profiles, trace = form_case_study_partition(config)
    baseline = float(np.mean([noncoop_payoff(a, profiles, config.quality) for a in sorted(profiles)]))
    rows = [
        (it, mean, baseline, k)
        for (it, mean), k in zip(trace.avg_payoff_series, trace.num_clusters_series)
        if it >= 1
    ]
    run = CoalitionRun(trace, baseline, rows)
    if write:
        out = _out(config, out_dir)
        run.paths.append(write_csv(out / "coalition.csv", "coalition", rows))
        run.paths.append(write_csv(out / "coalition_trace.csv", "coalition_trace", trace.rows()))
    return run


# -- consensus --------------------------------------------------------------


@dataclass
class ConsensusRun:
    state: NetworkState
    results: list[HeightResult]
    # reputations after each height, index 0 = initial
    reputation_history: list[dict[str, float]]
    paths: list[Path] = field(default_factory=list)

    @property
    def safety_violations(self) -> int:
        return sum(r.safety_violation for r in self.results)

    @property
    def empty_blocks(self) -> int:
        return sum(r.empty for r in self.results)

    def mean_reputation(self, byzantine: bool, history_index: int = -1) -> float:
        reps = self.reputation_history[history_index]
        ids = [n.id for n in self.state.nodes if n.byzantine == byzantine]
        return float(np.mean([reps[i] for i in ids])) if ids else float("nan")


def _consensus_row(r: HeightResult) -> tuple:
    decided = "empty" if r.decision == EMPTY_BLOCK else r.decision.hex()
    return (r.block.height, decided, r.committee_sizes, r.byz_count, r.stages_used)


def run_consensus_experiment(config: ExperimentConfig, out_dir=None, write: bool = True) -> ConsensusRun:
    """``consensus_heights`` heights; one signed gaTx enters the mempool per height."""
    registry = KeyRegistry.generate([node_id(i) for i in range(config.n_full_nodes)] + [CLOUD], config.master_seed)
    state = NetworkState.create(
        config.node_profiles(), config.master_seed, TASK_ID, config.sortition, config.reputation, registry=registry
    )
    results, history = [], [state.reputations()]
    for h in range(1, config.consensus_heights + 1):
        ptr = state.store.put(b"global-model/" + struct.pack("<Q", h))
        payload = dict(task_id=TASK_ID, round=h, global_ptr=ptr, aggregator=CLOUD)
        state.mempool.append(build_transaction("gaTx", payload, registry))
        results.append(run_height(state))
        history.append(state.reputations())
    run = ConsensusRun(state, results, history)
    if write:
        out = _out(config, out_dir)
        run.paths.append(write_csv(out / "consensus.csv", "consensus", [_consensus_row(r) for r in results]))
        summary = (
            len(results), run.safety_violations, run.empty_blocks,
            run.mean_reputation(False), _blank_nan(run.mean_reputation(True)),
        )
        run.paths.append(write_csv(out / "consensus_summary.csv", "consensus_summary", [summary]))
    return run


def _blank_nan(x: float):
    return "" if x != x else x


# -- provenance -------------------------------------------------------------


@dataclass
class ProvenanceRun:
    rows: list[tuple]
    verification: Optional[tuple] = None
    paths: list[Path] = field(default_factory=list)

    def rate(self, attack: str, ratio: float) -> float:
        return next(r[4] for r in self.rows if r[0] == attack and r[1] == ratio)


def run_provenance_experiment(
    config: ExperimentConfig, out_dir=None, write: bool = True, verification: Optional[int] = None
) -> ProvenanceRun:
    """Sweep attack kind x collusion ratio over one shared watermark setup.

    ``verification`` trials (default from the config) additionally measure
    genuine-verification and clean-model rejection rates on fresh setups.
    """
    grid = config.attack_grid
    seed = config.master_seed
    world = build_world(grid.n_clients, seed, config.watermark, thresholds=config.verify)
    rows = []
    for attack in grid.attacks:
        for ratio in grid.ratios:
            wins = collusion_successes(world, attack, ratio, grid.trials, seed, config.verify)
            rows.append((attack, ratio, grid.trials, wins, wins / grid.trials))
    run = ProvenanceRun(rows)
    n_ver = grid.verification_trials if verification is None else verification
    ver_rows = []
    if n_ver:
        rates = verification_trials(n_ver, seed, config.watermark, grid.n_clients, config.verify)
        ver_rows = [
            ("genuine_owned", n_ver, rates.true_positives, rates.true_positive_rate),
            ("clean_not_owned", n_ver, rates.clean_rejections, rates.clean_rejection_rate),
        ]
        run.verification = tuple(ver_rows)
    if write:
        out = _out(config, out_dir)
        run.paths.append(write_csv(out / "provenance.csv", "provenance", rows))
        if ver_rows:
            run.paths.append(write_csv(out / "verification.csv", "verification", ver_rows))
    return run


# -- full pipeline ----------------------------------------------------------


def avatar_principal(a: int) -> str:
    return f"avatar-{a}"


@dataclass
class PipelineRun:
    state: NetworkState
    partition: Partition
    round_rows: list[tuple]
    satx_per_round: list[int]
    clusters_per_round: list[int]
    verdict: str
    manifest: dict
    paths: list[Path] = field(default_factory=list)


def _model_bytes(params: np.ndarray) -> bytes:
    return np.ascontiguousarray(params, dtype="<f8").tobytes()


def run_full_pipeline(config: ExperimentConfig, out_dir=None) -> PipelineRun:
    """Partition, FL rounds recorded in MA blocks, then watermark
    verification recorded as a provenance transaction."""
    out = _out(config, out_dir)
    seed = config.master_seed
    _, profiles, trace = form_case_study_partition(config)
    partition = trace.final_partition
    clusters = [sorted(c) for c in partition.clusters]

    principals = [node_id(i) for i in range(config.n_full_nodes)]
    principals += [avatar_principal(a) for a in profiles] + [REQUESTER, CLOUD, TEE]
    registry = KeyRegistry.generate(principals, seed)
    store = OffchainStore(out / "offchain")
    state = NetworkState.create(
        config.node_profiles(), seed, TASK_ID, config.sortition, config.reputation, store=store, registry=registry
    )

    truth = GroundTruth.generate(seed)
    initial_ptr = store.put(_model_bytes(np.zeros(truth.dim)))
    state.mempool.append(build_transaction("trTx", dict(
        task_id=TASK_ID, timestamp=0.0, requester=REQUESTER, task_reward=float(config.rounds),
        initial_model_ptr=initial_ptr, expected_performance=0.9,
    ), registry))
    # Off-chain per-round payment commitments against a hashchain anchor.
    wallet = HashchainState.new(_payment_seed(seed), config.rounds + 1)

    round_rows, satx_counts, payments, heights = [], [], [], []
    for rnd in range(1, config.rounds + 1):
        result = run_round(clusters, profiles, truth, config.dp, rnd, seed, config.n_edges)
        satx = []
        for agg in result.cluster_aggregates:
            ptr = store.put(_model_bytes(agg.params))
            satx.append(build_transaction("saTx", dict(
                task_id=TASK_ID, round=rnd, members=[avatar_principal(m) for m in agg.members],
                aggregate_ptr=ptr, contributions=[profiles[m].contribution for m in agg.members],
            ), registry))
        global_ptr = store.put(_model_bytes(result.global_model))
        gatx = build_transaction("gaTx", dict(task_id=TASK_ID, round=rnd, global_ptr=global_ptr, aggregator=CLOUD), registry)
        state.mempool.extend(satx + [gatx])
        height = run_height(state)
        heights.append(height)
        in_block = sum(1 for tx in height.block.txs if tx.KIND == "saTx")
        satx_counts.append(in_block)
        round_rows.append((rnd, len(result.cluster_aggregates), result.utility, in_block, height.block.height, height.block.hash.hex()))
        commit = hashchain_commit(wallet)
        payments.append((rnd, wallet.revealed_index, commit.hex(), hashchain_settle(wallet.anchor, commit, wallet.revealed_index)))

    world = build_world(config.n_avatars, seed, config.watermark, thresholds=config.verify)
    verdict = verify_ownership(
        world.watermarked_model, world.genuine_submissions(), world.registry, config.verify, seed, len(world.joint)
    )
    record_ptr = store.put(verdict.record_bytes())
    state.mempool.append(build_transaction("provTx", dict(
        task_id=TASK_ID, model_digest=verdict.model_digest, verdict=verdict.verdict, record_ptr=record_ptr, verifier=TEE,
    ), registry))
    heights.append(run_height(state))
    validate_chain(state.chain, store, registry)

    paths = [
        write_csv(out / "pipeline_rounds.csv", "pipeline_rounds", round_rows),
        write_csv(out / "pipeline_consensus.csv", "consensus", [_consensus_row(h) for h in heights]),
        write_csv(out / "payments.csv", "payments", payments),
    ]
    chain_path = out / "chain.jsonl"
    export_chain(state.chain, chain_path)
    paths.append(chain_path)
    manifest = {
        "master_seed": seed,
        "config_digest": config.digest(),
        "config": config.to_dict(),
        "hashchain_anchor": wallet.anchor.hex(),
        "chain_tip": state.tip.hash.hex(),
        "verdict": verdict.verdict,
        "verdict_digest": verdict.digest.hex(),
        "versions": versions(),
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    paths.append(manifest_path)
    config.save(out / "config.json")
    paths.append(out / "config.json")
    return PipelineRun(
        state, partition, round_rows, satx_counts, [r[1] for r in round_rows], verdict.verdict, manifest, paths
    )


def _payment_seed(seed: int) -> bytes:
    return b"socialfl/payment/" + struct.pack("<Q", seed)


def versions() -> dict:
    return {"socialfl": socialfl.__version__, "numpy": np.__version__, "python": platform.python_version()}
