"""Payoff model and game-based stable social cluster formation.

A cluster's federated payoff is its model utility minus a per-member cost.
Each member receives its non-cooperative (singleton) payoff plus a share of
the cluster surplus proportional to its learning contribution ``d_i * q_i``.
Starting from all singletons, avatars repeatedly request their most
preferred improving cluster; the target cluster admits a requester only if
no member loses and at least one gains.  The loop stops when a full pass
moves nobody.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from socialfl.rng import derive_rng
from socialfl.social_graph import InvalidInputError, SocialGraph, combined_trust_table

# Payoff comparisons treat differences below this as ties.
EPS = 1e-12


@dataclass(frozen=True)
class AvatarProfile:
    id: int
    data_size: float
    data_quality: float

    def __post_init__(self):
        if self.data_size <= 0:
            raise InvalidInputError(f"avatar {self.id}: data_size must be > 0")
        if not 0.0 < self.data_quality <= 1.0:
            raise InvalidInputError(f"avatar {self.id}: data_quality must lie in (0, 1]")

    @property
    def contribution(self) -> float:
        return self.data_size * self.data_quality


@dataclass(frozen=True)
class QualityParams:
    u_max: float = 1.0
    kappa: float = 10.0
    beta: float = 0.2
    sigma_dp: float = 1.0
    cost_per_member: float = 0.01

    def __post_init__(self):
        if self.u_max <= 0 or self.kappa <= 0:
            raise InvalidInputError("u_max and kappa must be > 0")
        if self.beta < 0 or self.sigma_dp < 0 or self.cost_per_member < 0:
            raise InvalidInputError("beta, sigma_dp and cost_per_member must be >= 0")


Profiles = Mapping[int, AvatarProfile]
UtilityFn = Callable[[Iterable[int], Profiles, QualityParams], float]


def effective_data(cluster: Iterable[int], profiles: Profiles) -> float:
    return sum(profiles[i].contribution for i in cluster)


def cluster_utility(cluster: Iterable[int], profiles: Profiles, params: QualityParams = QualityParams()) -> float:
    """``u_max * D / (D + kappa) - beta * sigma^2 / |C|`` with ``D = sum d_i q_i``.

    The noise term shrinks with cluster size: members pre-aggregate raw
    updates and the cluster is perturbed once at its boundary.
    """
    members = list(cluster)
    if not members:
        raise InvalidInputError("cluster must be non-empty")
    d = effective_data(members, profiles)
    return params.u_max * d / (d + params.kappa) - params.beta * params.sigma_dp**2 / len(members)


def federated_payoff(
    cluster: Iterable[int],
    profiles: Profiles,
    params: QualityParams = QualityParams(),
    utility: UtilityFn = cluster_utility,
) -> float:
    members = list(cluster)
    return utility(members, profiles, params) - params.cost_per_member * len(members)


def noncoop_payoff(
    avatar: int, profiles: Profiles, params: QualityParams = QualityParams(), utility: UtilityFn = cluster_utility
) -> float:
    if avatar not in profiles:
        raise InvalidInputError(f"unknown avatar {avatar}")
    return federated_payoff([avatar], profiles, params, utility)


def contribution_weights(cluster: Iterable[int], profiles: Profiles) -> dict[int, float]:
    members = sorted(cluster)
    total = effective_data(members, profiles)
    return {i: profiles[i].contribution / total for i in members}


def individual_payoffs(
    cluster: Iterable[int],
    profiles: Profiles,
    params: QualityParams = QualityParams(),
    utility: UtilityFn = cluster_utility,
) -> dict[int, float]:
    """Payoff of every member; sums to the cluster's federated payoff."""
    members = sorted(cluster)
    if not members:
        raise InvalidInputError("cluster must be non-empty")
    solo = {i: noncoop_payoff(i, profiles, params, utility) for i in members}
    if len(members) == 1:
        return solo
    surplus = federated_payoff(members, profiles, params, utility) - sum(solo.values())
    weights = contribution_weights(members, profiles)
    return {i: solo[i] + weights[i] * surplus for i in members}


def individual_payoff(
    avatar: int,
    cluster: Iterable[int],
    profiles: Profiles,
    params: QualityParams = QualityParams(),
    utility: UtilityFn = cluster_utility,
) -> float:
    members = set(cluster)
    if avatar not in members:
        raise InvalidInputError(f"avatar {avatar} is not a member of the cluster")
    return individual_payoffs(members, profiles, params, utility)[avatar]


# -- partitions and bookkeeping ---------------------------------------------


def cluster_id(cluster: Iterable[int]) -> int:
    """Clusters are identified by their smallest member id."""
    return min(cluster)


@dataclass(frozen=True)
class Partition:
    clusters: tuple[frozenset, ...]

    @classmethod
    def of(cls, clusters: Iterable[Iterable[int]], avatars: Optional[Iterable[int]] = None) -> "Partition":
        frozen = [frozenset(c) for c in clusters]
        if any(not c for c in frozen):
            raise InvalidInputError("clusters must be non-empty")
        seen: set[int] = set()
        for c in frozen:
            if seen & c:
                raise InvalidInputError("clusters overlap")
            seen |= c
        if avatars is not None and seen != set(avatars):
            raise InvalidInputError("partition does not cover the avatar set")
        return cls(tuple(sorted(frozen, key=cluster_id)))

    @classmethod
    def singletons(cls, avatars: Iterable[int]) -> "Partition":
        return cls.of([a] for a in avatars)

    def cluster_of(self, avatar: int) -> frozenset:
        for c in self.clusters:
            if avatar in c:
                return c
        raise InvalidInputError(f"avatar {avatar} not placed in partition")

    @property
    def avatars(self) -> list[int]:
        return sorted(a for c in self.clusters for a in c)

    def __len__(self) -> int:
        return len(self.clusters)


def composition_hash(members: Iterable[int]) -> str:
    ids = sorted(members)
    return hashlib.sha256(struct.pack(f"<{len(ids)}q", *ids)).hexdigest()


@dataclass
class RejectionRecord:
    entries: set = field(default_factory=set)

    def add(self, avatar: int, cluster: Iterable[int]) -> None:
        self.entries.add((avatar, composition_hash(cluster)))

    def rejected(self, avatar: int, cluster: Iterable[int]) -> bool:
        return (avatar, composition_hash(cluster)) in self.entries


class TrustGate:
    """Precomputed pairwise combined trust; admits ``i`` to ``C`` iff every
    pair clears ``theta``."""

    def __init__(self, table: Mapping[tuple[int, int], float], theta: float):
        self.table = table
        self.theta = theta

    @classmethod
    def from_graph(cls, graph: SocialGraph) -> "TrustGate":
        return cls(combined_trust_table(graph), graph.params.theta_trust)

    def allows(self, avatar: int, cluster: Iterable[int]) -> bool:
        return all(self.table[(avatar, j)] >= self.theta for j in cluster if j != avatar)


class OpenGate(TrustGate):
    """Everyone trusts everyone; for experiments without a social graph."""

    def __init__(self):
        super().__init__({}, 0.0)

    def allows(self, avatar, cluster):
        return True


def as_gate(graph) -> TrustGate:
    if graph is None:
        return OpenGate()
    if isinstance(graph, TrustGate):
        return graph
    return TrustGate.from_graph(graph)


# -- the three steps of the game --------------------------------------------

SINGLETON = None  # the "empty set" option: leave and form a singleton


def rank_options(prospects: Mapping[Optional[int], float], current: float) -> list[Optional[int]]:
    """Strictly improving options by decreasing payoff; ties go to the lowest
    cluster id, with the singleton option last."""
    improving = [(p, opt) for opt, p in prospects.items() if p > current + EPS]
    improving.sort(key=lambda t: (-t[0], t[1] is SINGLETON, -1 if t[1] is None else t[1]))
    return [opt for _, opt in improving]


def preference_order(
    avatar: int,
    partition: Partition | Sequence[Iterable[int]],
    rejections: RejectionRecord,
    profiles: Profiles,
    params: QualityParams = QualityParams(),
    graph=None,
    utility: UtilityFn = cluster_utility,
) -> list[Optional[int]]:
    gate = as_gate(graph)
    clusters = partition.clusters if isinstance(partition, Partition) else [frozenset(c) for c in partition]
    own = next((c for c in clusters if avatar in c), None)
    if own is None:
        raise InvalidInputError(f"avatar {avatar} not placed in partition")
    current = individual_payoff(avatar, own, profiles, params, utility)
    prospects: dict[Optional[int], float] = {}
    for c in clusters:
        if c is own or not gate.allows(avatar, c) or rejections.rejected(avatar, c):
            continue
        prospects[cluster_id(c)] = individual_payoff(avatar, c | {avatar}, profiles, params, utility)
    if len(own) > 1:
        prospects[SINGLETON] = noncoop_payoff(avatar, profiles, params, utility)
    return rank_options(prospects, current)


def admission_eligible(
    cluster: Iterable[int], candidate: int, profiles: Profiles, params: QualityParams, utility: UtilityFn = cluster_utility
) -> bool:
    """Pareto rule: nobody in the cluster loses and somebody strictly gains."""
    members = set(cluster)
    before = individual_payoffs(members, profiles, params, utility)
    after = individual_payoffs(members | {candidate}, profiles, params, utility)
    gains = [after[j] - before[j] for j in members]
    return all(g >= -EPS for g in gains) and any(g > EPS for g in gains)


def admit_candidate(
    cluster: Iterable[int],
    candidates: Iterable[int],
    profiles: Profiles,
    params: QualityParams = QualityParams(),
    rejections: Optional[RejectionRecord] = None,
    utility: UtilityFn = cluster_utility,
) -> tuple[Optional[int], list[int]]:
    members = frozenset(cluster)
    candidates = sorted(set(candidates))
    base = federated_payoff(members, profiles, params, utility)
    best, best_gain = None, None
    for c in candidates:
        if not admission_eligible(members, c, profiles, params, utility):
            continue
        gain = federated_payoff(members | {c}, profiles, params, utility) - base
        if best is None or gain > best_gain + EPS:
            best, best_gain = c, gain
    rejected = [c for c in candidates if c != best]
    if rejections is not None:
        for c in rejected:
            rejections.add(c, members)
    return best, rejected


@dataclass
class GameTrace:
    iterations: int
    avg_payoff_series: list[tuple[int, float]]
    final_partition: Partition
    truncated: bool = False
    num_clusters_series: list[int] = field(default_factory=list)
    moved_series: list[int] = field(default_factory=list)

    def rows(self) -> list[tuple[int, float, int, int]]:
        """(iteration, mean_individual_payoff, num_clusters, moved_count)."""
        return [
            (it, mean, k, moved)
            for (it, mean), k, moved in zip(self.avg_payoff_series, self.num_clusters_series, self.moved_series)
        ]


def mean_individual_payoff(partition: Partition, profiles: Profiles, params: QualityParams, utility=cluster_utility):
    total = sum(sum(individual_payoffs(c, profiles, params, utility).values()) for c in partition.clusters)
    return total / len(partition.avatars)


def form_stable_partition(
    graph,
    profiles: Profiles,
    params: QualityParams = QualityParams(),
    max_iter: int = 1000,
    utility: UtilityFn = cluster_utility,
) -> GameTrace:
    if max_iter < 1:
        raise InvalidInputError("max_iter must be >= 1")
    gate = as_gate(graph)
    avatars = sorted(profiles)
    clusters: dict[int, frozenset] = {a: frozenset([a]) for a in avatars}
    home = {a: a for a in avatars}
    rejections = RejectionRecord()

    def snapshot() -> Partition:
        return Partition(tuple(clusters[k] for k in sorted(clusters)))

    def move(a: int, target: frozenset) -> None:
        old = clusters.pop(home[a])
        rest = old - {a}
        if rest:
            clusters[min(rest)] = rest
            for m in rest:
                home[m] = min(rest)
        if target:
            clusters.pop(min(target))
        joined = target | {a}
        clusters[min(joined)] = joined
        for m in joined:
            home[m] = min(joined)

    part = snapshot()
    series = [(0, mean_individual_payoff(part, profiles, params, utility))]
    sizes, moves = [len(part)], [0]
    truncated = True
    it = 0
    for it in range(1, max_iter + 1):
        moved = 0
        for a in avatars:
            part = snapshot()
            for opt in preference_order(a, part, rejections, profiles, params, gate, utility):
                if opt is SINGLETON:
                    move(a, frozenset())
                    moved += 1
                    break
                target = clusters[opt]
                admitted, _ = admit_candidate(target, [a], profiles, params, rejections, utility)
                if admitted == a:
                    move(a, target)
                    moved += 1
                    break
        part = snapshot()
        series.append((it, mean_individual_payoff(part, profiles, params, utility)))
        sizes.append(len(part))
        moves.append(moved)
        if moved == 0:
            truncated = False
            break
    return GameTrace(it, series, snapshot(), truncated, sizes, moves)


def improving_deviations(
    partition: Partition, profiles: Profiles, params: QualityParams = QualityParams(), graph=None, utility=cluster_utility
) -> list[tuple[int, Optional[int]]]:
    """Every (avatar, option) unilateral move that strictly improves the mover
    and, for cluster targets, passes the trust gate and the admission rule."""
    gate = as_gate(graph)
    found = []
    for own in partition.clusters:
        pay = individual_payoffs(own, profiles, params, utility)
        for a in sorted(own):
            if len(own) > 1 and noncoop_payoff(a, profiles, params, utility) > pay[a] + EPS:
                found.append((a, SINGLETON))
            for c in partition.clusters:
                if c is own or not gate.allows(a, c):
                    continue
                if individual_payoff(a, c | {a}, profiles, params, utility) <= pay[a] + EPS:
                    continue
                if admission_eligible(c, a, profiles, params, utility):
                    found.append((a, cluster_id(c)))
    return found


def is_nash_stable(
    partition: Partition, profiles: Profiles, params: QualityParams = QualityParams(), graph=None, utility=cluster_utility
) -> bool:
    return not improving_deviations(partition, profiles, params, graph, utility)


def random_profiles(
    n: int, seed: int, data_size: tuple[float, float] = (1.0, 10.0), data_quality: tuple[float, float] = (0.5, 1.0)
) -> dict[int, AvatarProfile]:
    """Avatars ``0..n-1`` with uniformly drawn data size and quality."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    rng = derive_rng(seed, "avatar_profiles")
    d = rng.uniform(*data_size, n)
    q = rng.uniform(*data_quality, n)
    return {i: AvatarProfile(i, float(d[i]), float(q[i])) for i in range(n)}
