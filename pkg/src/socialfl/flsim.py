"""Four-layer federated learning round on a synthetic quadratic task.

Devices produce noisy estimates of a hidden optimum ``w_star``; social
clusters pre-aggregate raw updates and add one Gaussian perturbation with
std ``sigma / |C|``; edges and the cloud take contribution-weighted means.
Model quality is ``1 / (1 + ||w - w_star||^2 / F)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from socialfl.coalition import AvatarProfile
from socialfl.rng import derive_rng
from socialfl.social_graph import InvalidInputError

DEFAULT_DIM = 32


@dataclass(frozen=True)
class DpParams:
    sigma: float = 1.0
    mode: Literal["solo", "cluster"] = "cluster"

    def __post_init__(self):
        if self.sigma < 0:
            raise InvalidInputError("sigma must be >= 0")
        if self.mode not in ("solo", "cluster"):
            raise InvalidInputError(f"unknown dp mode {self.mode!r}")


@dataclass(frozen=True)
class GroundTruth:
    w_star: np.ndarray
    noise_scale: float = 2.0

    @classmethod
    def generate(cls, seed: int, dim: int = DEFAULT_DIM, noise_scale: float = 2.0) -> "GroundTruth":
        return cls(derive_rng(seed, "ground_truth", dim).standard_normal(dim), noise_scale)

    @property
    def dim(self) -> int:
        return len(self.w_star)


@dataclass(frozen=True)
class LocalUpdate:
    avatar: int
    params: np.ndarray
    contribution: float

    def __post_init__(self):
        if self.contribution <= 0:
            raise InvalidInputError("contribution must be > 0")
        if not np.all(np.isfinite(self.params)):
            raise InvalidInputError("model parameters must be finite")


@dataclass(frozen=True)
class SocialAggregate:
    params: np.ndarray
    contribution: float
    members: tuple[int, ...] = field(default=())


def local_update(profile: AvatarProfile, truth: GroundTruth, round: int, seed: int) -> LocalUpdate:
    """``w_star`` plus error with per-coordinate variance ``s^2 / (d q)``."""
    rng = derive_rng(seed, "local_update", profile.id, round)
    std = truth.noise_scale / np.sqrt(profile.contribution)
    return LocalUpdate(profile.id, truth.w_star + std * rng.standard_normal(truth.dim), profile.contribution)


def perturb_solo(update: LocalUpdate, dp: DpParams, rng: np.random.Generator) -> LocalUpdate:
    if dp.mode != "solo":
        raise InvalidInputError("perturb_solo needs dp.mode == 'solo'")
    if dp.sigma == 0:
        return update
    noisy = update.params + dp.sigma * rng.standard_normal(len(update.params))
    return LocalUpdate(update.avatar, noisy, update.contribution)


def _weighted_mean(vectors: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    return (w[:, None] * np.vstack(vectors)).sum(axis=0) / w.sum()


def pre_aggregate_cluster(updates: Sequence[LocalUpdate], dp: DpParams, rng: np.random.Generator) -> SocialAggregate:
    """Weighted mean of raw member updates plus one N(0, (sigma/|C|)^2 I) draw."""
    if not updates:
        raise InvalidInputError("cannot aggregate an empty cluster")
    if dp.mode != "cluster":
        raise InvalidInputError("pre_aggregate_cluster needs dp.mode == 'cluster'")
    mean = _weighted_mean([u.params for u in updates], [u.contribution for u in updates])
    if dp.sigma > 0:
        mean = mean + (dp.sigma / len(updates)) * rng.standard_normal(len(mean))
    members = tuple(sorted(u.avatar for u in updates))
    return SocialAggregate(mean, float(sum(u.contribution for u in updates)), members)


def edge_aggregate(aggregates: Sequence[SocialAggregate]) -> SocialAggregate:
    if not aggregates:
        raise InvalidInputError("edge received no aggregates")
    # Fixed order so the floating-point sum is permutation invariant.
    ordered = sorted(aggregates, key=lambda a: (a.members, a.contribution))
    mean = _weighted_mean([a.params for a in ordered], [a.contribution for a in ordered])
    members = tuple(sorted(m for a in ordered for m in a.members))
    return SocialAggregate(mean, float(sum(a.contribution for a in ordered)), members)


def global_aggregate(edge_results: Sequence[SocialAggregate]) -> np.ndarray:
    if not edge_results:
        raise InvalidInputError("cloud received no edge results")
    return edge_aggregate(edge_results).params


def empirical_utility(model: np.ndarray, truth: GroundTruth) -> float:
    model = np.asarray(model, dtype=float)
    if model.shape != truth.w_star.shape:
        raise InvalidInputError(f"dimension mismatch: {model.shape} vs {truth.w_star.shape}")
    return float(1.0 / (1.0 + np.mean((model - truth.w_star) ** 2)))


def assign_edges(clusters: Sequence, n_edges: int) -> list[list]:
    """Round-robin cluster-to-edge assignment; empty edges are dropped."""
    edges: list[list] = [[] for _ in range(max(1, n_edges))]
    for k, c in enumerate(clusters):
        edges[k % len(edges)].append(c)
    return [e for e in edges if e]


@dataclass
class RoundResult:
    local: dict[int, LocalUpdate]
    cluster_aggregates: list[SocialAggregate]
    edge_results: list[SocialAggregate]
    global_model: np.ndarray
    utility: float


def run_round(
    clusters: Sequence[Sequence[int]],
    profiles: dict[int, AvatarProfile],
    truth: GroundTruth,
    dp: DpParams,
    round: int,
    seed: int,
    n_edges: int = 4,
) -> RoundResult:
    """One global round.  In solo mode every avatar perturbs its own update
    and acts as a singleton aggregate."""
    clusters = [sorted(c) for c in sorted(clusters, key=min)]
    local = {a: local_update(profiles[a], truth, round, seed) for c in clusters for a in c}
    aggregates = []
    for c in clusters:
        if dp.mode == "solo":
            for a in c:
                u = perturb_solo(local[a], dp, derive_rng(seed, "dp_noise", a, round))
                aggregates.append(SocialAggregate(u.params, u.contribution, (a,)))
        else:
            rng = derive_rng(seed, "dp_noise", min(c), round)
            aggregates.append(pre_aggregate_cluster([local[a] for a in c], dp, rng))
    edges = [edge_aggregate(group) for group in assign_edges(aggregates, n_edges)]
    model = global_aggregate(edges)
    return RoundResult(local, aggregates, edges, model, empirical_utility(model, truth))
