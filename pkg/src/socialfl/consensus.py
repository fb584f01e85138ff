"""Reputation-weighted sortition and multi-stage Byzantine agreement.

One height runs four phases:

1. committee formation -- node ``i`` is elected for a stage iff its keyed
   hash of ``(seed, stage)`` falls below ``k * r_i / sum(r)``;
2. proposal -- stage-0 members package valid mempool transactions;
3. voting -- up to ``max_retries`` (soft, cert) stage pairs, each with a
   freshly elected committee and a ``ceil(quorum * |committee|)`` threshold;
   when every pair fails the empty block is decided;
4. append -- the decided block is appended, the CVScript and the updated
   reputation table go off-chain and their digests ride in the next header.

Delivery is synchronous per stage and honest nodes relay every message they
receive, so an equivocating sender is seen with two values by every honest
node and its votes are discarded.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

from socialfl.ledger import (
    EMPTY_BLOCK,
    H,
    NULL_DIGEST,
    CVScript,
    InvalidBlockError,
    InvalidTransactionError,
    KeyRegistry,
    MABlock,
    OffchainStore,
    Transaction,
    Vote,
    Writer,
    build_block,
    election_seed,
    genesis_block,
    global_pointer,
    tx_root,
    validate_block,
    validate_transaction,
)


class Profile(str, Enum):
    HONEST = "honest"
    SILENT = "silent"
    EQUIVOCATOR = "equivocator"
    INVALID_PROPOSER = "invalid-proposer"


class NoElectableNodesError(RuntimeError):
    pass


class RejectedVoteError(ValueError):
    def __init__(self, validator: str):
        super().__init__(f"vote by {validator} has an invalid signature")
        self.validator = validator


@dataclass
class FullNode:
    id: str
    reputation: float = 0.5
    profile: Profile = Profile.HONEST

    def __post_init__(self):
        self.profile = Profile(self.profile)
        self.reputation = clamp(self.reputation)

    @property
    def byzantine(self) -> bool:
        return self.profile is not Profile.HONEST


@dataclass(frozen=True)
class ReputationParams:
    delta1: float = 0.05
    delta2: float = 0.1
    r0: float = 0.5

    def __post_init__(self):
        if self.delta1 <= 0 or self.delta2 <= 0:
            raise ValueError("delta1 and delta2 must be > 0")
        if not 0.0 <= self.r0 <= 1.0:
            raise ValueError("r0 must lie in [0, 1]")


@dataclass(frozen=True)
class SortitionParams:
    committee_size: int = 10
    quorum: float = 2 / 3
    max_retries: int = 3

    def __post_init__(self):
        if self.committee_size < 1:
            raise ValueError("committee_size must be >= 1")
        if not 0.5 < self.quorum <= 1.0:
            raise ValueError("quorum must lie in (1/2, 1]")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")

    def threshold(self, committee: int) -> int:
        return math.ceil(self.quorum * committee - 1e-9)


def clamp(r: float) -> float:
    return min(1.0, max(0.0, r))


# -- phase 1: sortition -----------------------------------------------------


def vrf_proof(registry: KeyRegistry, node_id: str, seed: bytes, stage: int) -> bytes:
    return H(registry.secret(node_id), seed, struct.pack("<I", stage))


def proof_to_unit(proof: bytes) -> float:
    """First 8 bytes as a uniform real in [0, 1)."""
    return int.from_bytes(proof[:8], "little") / 2.0**64


def sortition_elect(
    nodes: Sequence[FullNode], seed: bytes, stage: int, params: SortitionParams, registry: KeyRegistry
) -> dict[str, float]:
    """Committee for ``stage`` as ``{node id: priority}``."""
    total = sum(n.reputation for n in nodes)
    if total <= 0:
        raise NoElectableNodesError("every node has zero reputation")
    committee = {}
    for n in nodes:
        value = proof_to_unit(vrf_proof(registry, n.id, seed, stage))
        if value < params.committee_size * n.reputation / total:
            committee[n.id] = value
    return dict(sorted(committee.items()))


def verify_sortition(
    registry: KeyRegistry,
    node_id: str,
    seed: bytes,
    stage: int,
    proof: bytes,
    reputation: float,
    total_reputation: float,
    params: SortitionParams,
) -> bool:
    """Re-check a membership claim against the registry."""
    if proof != vrf_proof(registry, node_id, seed, stage):
        return False
    return proof_to_unit(proof) < params.committee_size * reputation / total_reputation


# -- phase 2: proposal ------------------------------------------------------


def filter_valid(mempool: Iterable[Transaction], registry: KeyRegistry, store: OffchainStore) -> list[Transaction]:
    valid = []
    for tx in mempool:
        try:
            validate_transaction(tx, registry, store)
        except InvalidTransactionError:
            continue
        valid.append(tx)
    return valid


def propose_candidate(
    validator: FullNode,
    mempool: Sequence[Transaction],
    chain_tip: MABlock,
    store: OffchainStore,
    registry: KeyRegistry,
    cvscript_ptr: bytes = NULL_DIGEST,
    reputation_ptr: bytes = NULL_DIGEST,
) -> MABlock:
    txs = filter_valid(mempool, registry, store)
    block = build_block(chain_tip.height + 1, chain_tip, txs, cvscript_ptr, reputation_ptr=reputation_ptr)
    if validator.profile is Profile.INVALID_PROPOSER:
        bad_root = H(b"corrupt", block.header.tx_merkle_root)
        block = MABlock(replace(block.header, tx_merkle_root=bad_root), block.txs)
    return block


def equivocating_variant(block: MABlock) -> Optional[MABlock]:
    """A second, conflicting but well-formed block; ``None`` if none exists."""
    if not block.txs:
        return None
    txs = block.txs[:-1]
    header = replace(block.header, tx_merkle_root=tx_root(txs), global_result_ptr=global_pointer(txs))
    return MABlock(header, txs)


@dataclass(frozen=True)
class Proposal:
    proposer: str
    priority: float
    block: MABlock
    recipients: frozenset


# -- phase 3: voting --------------------------------------------------------


@dataclass(frozen=True)
class Message:
    vote: Vote
    recipients: frozenset


def _split(ids: Sequence[str]) -> tuple[frozenset, frozenset]:
    ids = sorted(ids)
    return frozenset(ids[0::2]), frozenset(ids[1::2])


def _view(messages: Iterable[Message], node: str, honest: frozenset) -> list[Vote]:
    """Messages reaching ``node`` directly or through an honest relay."""
    return [m.vote for m in messages if node in m.recipients or (m.recipients & honest)]


def _tally(votes: Iterable[Vote], stage: int) -> dict[bytes, int]:
    by_sender: dict[str, set] = {}
    for v in votes:
        if v.stage == stage:
            by_sender.setdefault(v.validator, set()).add(v.value)
    counts: dict[bytes, int] = {}
    for values in by_sender.values():
        if len(values) == 1:
            (value,) = values
            counts[value] = counts.get(value, 0) + 1
    return counts


@dataclass
class VoteOutcome:
    decision: bytes
    cvscript: CVScript
    node_decisions: dict[str, bytes]
    committees: list[dict[str, float]]
    stages_used: int
    proposal_validity: dict[str, bool]


def run_multistage_vote(
    nodes: Sequence[FullNode],
    candidates: Sequence[Proposal],
    seed: bytes,
    params: SortitionParams,
    height: int,
    registry: KeyRegistry,
    is_valid=lambda block: True,
    proposer_committee: Optional[dict[str, float]] = None,
) -> VoteOutcome:
    """Soft/cert voting over ``candidates``; always returns a decision.

    ``is_valid`` is the honest nodes' block check.  A proposer that delivered
    two different blocks is ignored by everyone.
    """
    by_id = {n.id: n for n in nodes}
    everyone = frozenset(by_id)
    honest = frozenset(n.id for n in nodes if not n.byzantine)
    committees = [proposer_committee] if proposer_committee is not None else []

    # Every proposal reaches an honest node, so relays give all honest nodes
    # the same candidate set.
    blocks_by_proposer: dict[str, dict[bytes, Proposal]] = {}
    for p in candidates:
        blocks_by_proposer.setdefault(p.proposer, {})[p.block.hash] = p
    validity: dict[str, bool] = {}
    usable: list[Proposal] = []
    valid_cache: dict[bytes, bool] = {}
    for proposer, blocks in sorted(blocks_by_proposer.items()):
        if len(blocks) > 1:
            validity[proposer] = False
            continue
        (p,) = blocks.values()
        if p.block.hash not in valid_cache:
            valid_cache[p.block.hash] = bool(is_valid(p.block))
        validity[proposer] = valid_cache[p.block.hash]
        if validity[proposer]:
            usable.append(p)
    preferred = min(usable, key=lambda p: (p.priority, p.proposer)).block.hash if usable else EMPTY_BLOCK
    alternative = next((p.block.hash for p in sorted(usable, key=lambda p: p.priority) if p.block.hash != preferred), EMPTY_BLOCK)
    if alternative == preferred:
        alternative = H(b"socialfl/bogus", preferred)

    messages: list[Message] = []
    node_decisions: dict[str, bytes] = {}
    first, second = _split(everyone)
    stage = 0
    for attempt in range(params.max_retries):
        soft_stage, cert_stage = 1 + 2 * attempt, 2 + 2 * attempt
        soft = sortition_elect(nodes, seed, soft_stage, params, registry)
        committees.append(soft)
        for nid in soft:
            messages += _cast(by_id[nid], height, soft_stage, preferred, alternative, everyone, first, second, registry)
        cert = sortition_elect(nodes, seed, cert_stage, params, registry)
        committees.append(cert)
        soft_need = params.threshold(len(soft))
        for nid in cert:
            view = _view(messages, nid, honest) if nid in honest else [m.vote for m in messages]
            counts = _tally(view, soft_stage)
            certified = [v for v, c in counts.items() if soft and c >= soft_need]
            value = certified[0] if len(certified) == 1 else None
            if value is None and by_id[nid].profile is not Profile.EQUIVOCATOR:
                continue
            messages += _cast(by_id[nid], height, cert_stage, value or preferred, alternative, everyone, first, second, registry)
        stage = cert_stage
        cert_need = params.threshold(len(cert))
        for nid in sorted(honest - set(node_decisions)):
            counts = _tally(_view(messages, nid, honest), cert_stage)
            winners = [v for v, c in counts.items() if cert and c >= cert_need]
            if len(winners) == 1:
                node_decisions[nid] = winners[0]
        if honest and all(nid in node_decisions for nid in honest):
            break
    for nid in honest:
        node_decisions.setdefault(nid, EMPTY_BLOCK)

    decided = sorted(set(node_decisions.values()))
    decision = decided[0] if len(decided) == 1 else EMPTY_BLOCK
    if not honest:
        decision = EMPTY_BLOCK
    union = sorted({m.vote for m in messages}, key=lambda v: (v.stage, v.validator, v.value))
    return VoteOutcome(decision, CVScript(height, tuple(union), decision), node_decisions, committees, stage + 1, validity)


def _cast(node, height, stage, value, alternative, everyone, first, second, registry) -> list[Message]:
    if node.profile is Profile.SILENT:
        return []
    vote = Vote(node.id, height, stage, value).signed(registry)
    if node.profile is Profile.EQUIVOCATOR:
        other = Vote(node.id, height, stage, alternative).signed(registry)
        return [Message(vote, first), Message(other, second)]
    return [Message(vote, everyone)]


# -- phase 4: reputation ----------------------------------------------------


def equivocators(cvscript: CVScript) -> set[str]:
    seen: dict[tuple[str, int], set] = {}
    for v in cvscript.votes:
        seen.setdefault((v.validator, v.stage), set()).add(v.value)
    return {vid for (vid, _), values in seen.items() if len(values) > 1}


def apply_reputation(
    cvscript: CVScript,
    proposal_validity: Mapping[str, bool],
    reputations: Mapping[str, float],
    params: ReputationParams = ReputationParams(),
    registry: Optional[KeyRegistry] = None,
) -> dict[str, float]:
    """Reward consistent, decision-matching voters by ``delta1``; penalize
    invalid proposers and equivocators by ``delta2`` once per height.  A
    penalized node earns no reward at the same height."""
    if registry is not None:
        for v in cvscript.votes:
            if not v.verify(registry):
                raise RejectedVoteError(v.validator)
    penalized = equivocators(cvscript) | {p for p, ok in proposal_validity.items() if not ok}
    votes_by: dict[str, set] = {}
    for v in cvscript.votes:
        votes_by.setdefault(v.validator, set()).add(v.value)
    rewarded = {vid for vid, values in votes_by.items() if values == {cvscript.finalized}} - penalized
    out = dict(reputations)
    for nid in penalized:
        if nid in out:
            out[nid] = clamp(out[nid] - params.delta2)
    for nid in rewarded:
        if nid in out:
            out[nid] = clamp(out[nid] + params.delta1)
    return out


def encode_reputation_table(height: int, reputations: Mapping[str, float]) -> bytes:
    w = Writer().u64(height).u32(len(reputations))
    for nid in sorted(reputations):
        w.str(nid).f64(reputations[nid])
    return w.getvalue()


# -- end-to-end height ------------------------------------------------------


@dataclass
class HeightResult:
    block: MABlock
    decision: bytes
    cvscript: CVScript
    node_decisions: dict[str, bytes]
    committee_sizes: list[int]
    byz_count: int
    stages_used: int
    proposal_validity: dict[str, bool]

    @property
    def empty(self) -> bool:
        return self.decision == EMPTY_BLOCK

    @property
    def safety_violation(self) -> bool:
        decided = {d for d in self.node_decisions.values() if d != EMPTY_BLOCK}
        return len(decided) > 1


@dataclass
class NetworkState:
    nodes: list[FullNode]
    registry: KeyRegistry
    store: OffchainStore
    chain: list[MABlock]
    sortition: SortitionParams = SortitionParams()
    reputation: ReputationParams = ReputationParams()
    mempool: list = field(default_factory=list)
    cvscript_ptr: bytes = NULL_DIGEST
    reputation_ptr: bytes = NULL_DIGEST

    @classmethod
    def create(
        cls,
        profiles: Sequence[Profile | str],
        seed: int,
        task_id: str = "task-0",
        sortition: SortitionParams = SortitionParams(),
        reputation: ReputationParams = ReputationParams(),
        store: Optional[OffchainStore] = None,
        registry: Optional[KeyRegistry] = None,
    ) -> "NetworkState":
        nodes = [FullNode(node_id(i), reputation.r0, Profile(p)) for i, p in enumerate(profiles)]
        if registry is None:
            registry = KeyRegistry.generate([n.id for n in nodes], seed)
        else:
            for n in nodes:
                if n.id not in registry:
                    registry.register(n.id, KeyRegistry.generate([n.id], seed).secret(n.id))
        store = store if store is not None else OffchainStore()
        return cls(nodes, registry, store, [genesis_block(task_id)], sortition, reputation)

    @property
    def tip(self) -> MABlock:
        return self.chain[-1]

    def reputations(self) -> dict[str, float]:
        return {n.id: n.reputation for n in self.nodes}


def node_id(i: int) -> str:
    return f"node-{i}"


def run_height(state: NetworkState) -> HeightResult:
    """Run phases 1-4 for the next height and append the decided block."""
    tip = state.tip
    height = tip.height + 1
    seed = election_seed(tip.hash, height)
    by_id = {n.id: n for n in state.nodes}
    honest = sorted(n.id for n in state.nodes if not n.byzantine)

    proposers = sortition_elect(state.nodes, seed, 0, state.sortition, state.registry)
    proposals = []
    first, second = _split(by_id)
    for nid, priority in proposers.items():
        node = by_id[nid]
        if node.profile is Profile.SILENT:
            continue
        block = propose_candidate(node, state.mempool, tip, state.store, state.registry, state.cvscript_ptr, state.reputation_ptr)
        variant = equivocating_variant(block) if node.profile is Profile.EQUIVOCATOR else None
        if variant is None:
            proposals.append(Proposal(nid, priority, block, frozenset(by_id)))
        else:
            proposals += [Proposal(nid, priority, block, first), Proposal(nid, priority, variant, second)]

    def is_valid(block: MABlock) -> bool:
        try:
            validate_block(block, tip, state.store, state.registry)
        except InvalidBlockError:
            return False
        return True

    outcome = run_multistage_vote(
        state.nodes, proposals, seed, state.sortition, height, state.registry, is_valid, proposers
    )
    if outcome.decision == EMPTY_BLOCK:
        block = build_block(height, tip, (), state.cvscript_ptr, reputation_ptr=state.reputation_ptr)
    else:
        block = next(p.block for p in proposals if p.block.hash == outcome.decision)
        included = {tx.to_bytes() for tx in block.txs}
        state.mempool = [tx for tx in state.mempool if tx.to_bytes() not in included]
    validate_block(block, tip, state.store, state.registry)
    state.chain.append(block)

    updated = apply_reputation(outcome.cvscript, outcome.proposal_validity, state.reputations(), state.reputation, state.registry)
    for n in state.nodes:
        n.reputation = updated[n.id]
    state.cvscript_ptr = state.store.put(outcome.cvscript.to_bytes())
    state.reputation_ptr = state.store.put(encode_reputation_table(height, updated))

    seen = {nid for c in outcome.committees for nid in c}
    return HeightResult(
        block=block,
        decision=outcome.decision,
        cvscript=outcome.cvscript,
        node_decisions={nid: outcome.node_decisions[nid] for nid in honest},
        committee_sizes=[len(c) for c in outcome.committees],
        byz_count=sum(1 for nid in seen if by_id[nid].byzantine),
        stages_used=outcome.stages_used,
        proposal_validity=outcome.proposal_validity,
    )
