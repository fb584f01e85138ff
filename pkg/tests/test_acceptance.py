"""End-to-end acceptance checks.  Each test prints one PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

import oracles
from conftest import grow_chain
from socialfl.coalition import (
    AvatarProfile,
    QualityParams,
    contribution_weights,
    federated_payoff,
    form_stable_partition,
    individual_payoffs,
    random_profiles,
)
from socialfl.consensus import Profile
from socialfl.harness.config import AttackGrid, ExperimentConfig
from socialfl.harness.experiments import run_coalition_experiment, run_consensus_experiment, run_full_pipeline, run_provenance_experiment
from socialfl.ledger import InvalidBlockError, hashchain_new, hashchain_settle, validate_chain, validate_chain_bytes
from socialfl.ledger.store import CorruptEntryError
from socialfl.rng import derive_rng
from socialfl.social_graph import TrustParams, combined_trust_table, random_graph

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail, started):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail} ({time.perf_counter() - started:.1f}s)")
        assert ok, detail

    return emit


def test_1_coalition_convergence(report):
    t0 = time.perf_counter()
    worst, ok = 0, True
    for seed in range(10):
        run = run_coalition_experiment(ExperimentConfig(master_seed=seed), write=False)
        worst = max(worst, run.trace.iterations)
        ok &= (not run.trace.truncated) and run.trace.iterations <= 20 and run.final_avg_payoff > run.noncoop_avg_payoff
    elapsed = time.perf_counter() - t0
    report(1, ok and elapsed < 30, f"max iterations {worst}, payoff above baseline in all 10 runs", t0)


def test_2_nash_stability_oracle(report):
    t0 = time.perf_counter()
    failures = 0
    for k in range(50):
        rng = derive_rng(2024, "stability_instance", k)
        n = int(rng.integers(3, 9))
        theta = float(rng.uniform(0.2, 0.6))
        params = QualityParams(cost_per_member=float(rng.uniform(0.0, 0.05)))
        graph = random_graph(n, float(rng.uniform(0.3, 1.0)), k, TrustParams(theta_trust=theta))
        profiles = random_profiles(n, k)
        trace = form_stable_partition(graph, profiles, params)
        part = [sorted(c) for c in trace.final_partition.clusters]
        moves = oracles.improving_moves(part, profiles, params, combined_trust_table(graph), theta)
        failures += trace.truncated or bool(moves)
    elapsed = time.perf_counter() - t0
    report(2, failures == 0 and elapsed < 60, f"{failures} unstable outputs over 50 instances", t0)


def test_3_budget_balance(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_sum = worst_w = 0.0
    for _ in range(1000):
        m = int(rng.integers(1, 30))
        profiles = {i: AvatarProfile(i, float(rng.uniform(0.01, 100)), float(rng.uniform(0.01, 1))) for i in range(m)}
        params = QualityParams(
            u_max=float(rng.uniform(0.1, 5)), kappa=float(rng.uniform(0.1, 50)), beta=float(rng.uniform(0, 1)),
            sigma_dp=float(rng.uniform(0, 2)), cost_per_member=float(rng.uniform(0, 0.2)),
        )
        cluster = list(range(m))
        pays = individual_payoffs(cluster, profiles, params)
        worst_sum = max(worst_sum, abs(sum(pays.values()) - federated_payoff(cluster, profiles, params)))
        worst_w = max(worst_w, abs(sum(contribution_weights(cluster, profiles).values()) - 1.0))
    report(3, worst_sum <= 1e-9 and worst_w <= 1e-9, f"max balance error {worst_sum:.1e}, weight error {worst_w:.1e}", t0)


@pytest.fixture(scope="module")
def byzantine_run():
    cfg = ExperimentConfig(master_seed=4, n_full_nodes=20, byz_fraction=0.3, consensus_heights=500)
    t0 = time.perf_counter()
    run = run_consensus_experiment(cfg, write=False)
    return run, time.perf_counter() - t0


def test_4_consensus_safety_liveness(report, byzantine_run):
    t0 = time.perf_counter()
    run, elapsed = byzantine_run
    honest = [n.id for n in run.state.nodes if not n.byzantine]
    decided = all(set(honest) <= set(r.node_decisions) for r in run.results) and len(run.state.chain) == 501
    clean = run_consensus_experiment(ExperimentConfig(master_seed=4, consensus_heights=500), write=False)
    validate_chain(run.state.chain, run.state.store, run.state.registry)
    elapsed += time.perf_counter() - t0
    ok = run.safety_violations == 0 and decided and clean.empty_blocks == 0 and elapsed < 60
    detail = (f"{run.safety_violations} violations, {run.empty_blocks} empty of 500 with 30% faulty, "
              f"{clean.empty_blocks} empty with none faulty")
    report(4, ok, detail, t0 - elapsed)


def test_5_reputation_dynamics(report, byzantine_run):
    t0 = time.perf_counter()
    run, _ = byzantine_run
    params = run.state.reputation
    hist = run.reputation_history
    honest = [n.id for n in run.state.nodes if not n.byzantine]
    invalid = [n.id for n in run.state.nodes if n.profile is Profile.INVALID_PROPOSER]
    monotone = all(hist[h + 1][i] >= hist[h][i] for h in range(len(hist) - 1) for i in honest)
    separated = run.mean_reputation(False, 50) > run.mean_reputation(True, 50)
    offenses, exact = 0, True
    for h, r in enumerate(run.results):
        for nid in invalid:
            if r.proposal_validity.get(nid) is False:
                offenses += 1
                exact &= math.isclose(hist[h + 1][nid], max(0.0, hist[h][nid] - params.delta2), abs_tol=1e-12)
    ok = monotone and separated and exact and offenses > 0
    report(5, ok, f"honest monotone={monotone}, separated at 50={separated}, {offenses} offenses exact={exact}", t0)


def test_6_ledger_integrity(report):
    t0 = time.perf_counter()
    state = grow_chain(50, seed=6, with_sa=True)
    rng = np.random.default_rng(6)
    raw = [b.to_bytes() for b in state.chain]
    validate_chain_bytes(raw, state.store, state.registry)
    flips = caught = 0
    for i in range(1, len(raw)):
        positions = rng.choice(len(raw[i]), max(1, len(raw[i]) // 100), replace=False)
        for pos in positions:
            mutated = bytearray(raw[i])
            mutated[pos] ^= int(rng.integers(1, 256))
            flips += 1
            try:
                validate_chain_bytes(raw[:i] + [bytes(mutated)] + raw[i + 1:], state.store, state.registry)
            except InvalidBlockError:
                caught += 1
    referenced = set()
    for b in state.chain[1:]:
        referenced |= {b.header.cvscript_ptr, b.header.reputation_ptr}
        referenced |= {getattr(tx, f) for tx in b.txs for f in ("global_ptr", "aggregate_ptr") if hasattr(tx, f)}
    data = state.store._data
    for key in list(data):
        original = data[key]
        for pos in rng.choice(len(original), max(1, len(original) // 100), replace=False):
            mutated = bytearray(original)
            mutated[pos] ^= int(rng.integers(1, 256))
            data[key] = bytes(mutated)
            flips += 1
            detected = False
            try:
                state.store.get(key)
            except CorruptEntryError:
                detected = True
            if key in referenced:
                try:
                    validate_chain(state.chain, state.store, state.registry)
                    detected = False
                except InvalidBlockError:
                    pass
            caught += detected
        data[key] = original
    settle_ok = True
    for n in range(1, 65):
        chain, anchor = hashchain_new(bytes([n]), n)
        settle_ok &= all(hashchain_settle(anchor, chain[n - 1 - k], k) for k in range(n))
    report(6, caught == flips and settle_ok, f"{caught}/{flips} byte flips detected, hashchain settle ok={settle_ok}", t0)


def test_7_provenance_collusion(report, tmp_path):
    t0 = time.perf_counter()
    grid = AttackGrid(ratios=(0.1, 0.2, 0.3, 0.4), trials=200, n_clients=100, verification_trials=200)
    run = run_provenance_experiment(ExperimentConfig(master_seed=7, attack_grid=grid), tmp_path)
    worst = max(r[4] for r in run.rows)
    (_, _, tp, tp_rate), (_, _, tn, tn_rate) = run.verification
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.05 and tp_rate >= 0.99 and tn_rate >= 0.99 and elapsed < 120
    report(7, ok, f"max attack success {worst:.3f}, genuine owned {tp}/200, clean rejected {tn}/200", t0)


def test_8_pipeline_determinism(report, tmp_path):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(master_seed=8)
    runs = [run_full_pipeline(cfg, tmp_path / d) for d in ("a", "b")]
    names = sorted(p.name for p in runs[0].paths)
    same = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    same &= sorted(p.name for p in runs[1].paths) == names
    report(8, same, f"{len(names)} artifacts byte-identical across two runs", t0)
