"""Avatar social graph and trust measures.

Direct trust between two avatars comes from their interaction history: each
interaction contributes ``experience * (1 - exp(-duration / tau)) *
exp(-lambda * age)`` and the sum is capped at 1.  Indirect trust multiplies
direct trusts along a minimum-hop path.  Combined trust blends the two.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from socialfl.rng import derive_rng


class InvalidInputError(ValueError):
    pass


@dataclass(frozen=True)
class TrustParams:
    lambda_decay: float = 0.1
    tau_duration: float = 1.0
    alpha_mix: float = 0.7
    theta_trust: float = 0.5

    def __post_init__(self):
        if self.lambda_decay < 0:
            raise InvalidInputError("lambda_decay must be >= 0")
        if self.tau_duration <= 0:
            raise InvalidInputError("tau_duration must be > 0")
        if not 0.0 <= self.alpha_mix <= 1.0:
            raise InvalidInputError("alpha_mix must lie in [0, 1]")
        if not 0.0 <= self.theta_trust <= 1.0:
            raise InvalidInputError("theta_trust must lie in [0, 1]")


@dataclass(frozen=True)
class Interaction:
    experience: float
    duration: float
    timestamp: float

    def __post_init__(self):
        if not 0.0 <= self.experience <= 1.0:
            raise InvalidInputError(f"experience {self.experience} outside [0, 1]")
        if self.duration < 0:
            raise InvalidInputError(f"negative duration {self.duration}")
        if self.timestamp < 0:
            raise InvalidInputError(f"negative timestamp {self.timestamp}")


def direct_trust(history: Iterable[Interaction], now: float, params: TrustParams = TrustParams()) -> float:
    total = 0.0
    for it in history:
        if it.timestamp > now:
            raise InvalidInputError(f"interaction at t={it.timestamp} is after now={now}")
        saturation = -math.expm1(-it.duration / params.tau_duration)
        decay = math.exp(-params.lambda_decay * (now - it.timestamp))
        total += it.experience * saturation * decay
    return min(1.0, total)


def edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class SocialEdge:
    endpoints: tuple[int, int]
    history: tuple[Interaction, ...]
    tie_strength: float


@dataclass(frozen=True)
class SocialGraph:
    """Undirected avatar graph.  Build with :meth:`build`; treat as immutable."""

    avatar_ids: tuple[int, ...]
    edges: Mapping[tuple[int, int], SocialEdge]
    now: float
    params: TrustParams = TrustParams()
    _adj: Mapping[int, tuple[int, ...]] = field(default=None, repr=False, compare=False)

    @classmethod
    def build(
        cls,
        avatar_ids: Iterable[int],
        histories: Mapping[tuple[int, int], Iterable[Interaction]],
        now: float = 0.0,
        params: TrustParams = TrustParams(),
    ) -> "SocialGraph":
        ids = tuple(sorted(set(int(a) for a in avatar_ids)))
        known = set(ids)
        edges: dict[tuple[int, int], SocialEdge] = {}
        for (a, b), hist in histories.items():
            if a == b:
                raise InvalidInputError(f"self-loop on avatar {a}")
            if a not in known or b not in known:
                raise InvalidInputError(f"edge ({a}, {b}) references an unknown avatar")
            key = edge_key(a, b)
            if key in edges:
                raise InvalidInputError(f"duplicate edge {key}")
            hist = tuple(hist)
            edges[key] = SocialEdge(key, hist, direct_trust(hist, now, params))
        adj: dict[int, list[int]] = {a: [] for a in ids}
        for a, b in sorted(edges):
            adj[a].append(b)
            adj[b].append(a)
        return cls(ids, edges, float(now), params, {a: tuple(sorted(v)) for a, v in adj.items()})

    def refreshed(self, now: float) -> "SocialGraph":
        """Same interactions, tie strengths re-evaluated at ``now``."""
        hist = {k: e.history for k, e in self.edges.items()}
        return SocialGraph.build(self.avatar_ids, hist, now, self.params)

    def __contains__(self, avatar: int) -> bool:
        return avatar in self._adj

    def __len__(self) -> int:
        return len(self.avatar_ids)

    def check(self, *avatars: int) -> None:
        for a in avatars:
            if a not in self._adj:
                raise InvalidInputError(f"unknown avatar id {a!r}")

    def neighbors(self, avatar: int) -> tuple[int, ...]:
        self.check(avatar)
        return self._adj[avatar]

    def has_edge(self, a: int, b: int) -> bool:
        return edge_key(a, b) in self.edges

    def tie_strength(self, a: int, b: int) -> float:
        """Direct trust on edge ``(a, b)``; 0 when the avatars are not adjacent."""
        edge = self.edges.get(edge_key(a, b))
        return 0.0 if edge is None else edge.tie_strength

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "now": self.now,
            "params": {
                "lambda_decay": self.params.lambda_decay,
                "tau_duration": self.params.tau_duration,
                "alpha_mix": self.params.alpha_mix,
                "theta_trust": self.params.theta_trust,
            },
            "nodes": list(self.avatar_ids),
            "edges": [
                [a, b, [[it.experience, it.duration, it.timestamp] for it in e.history]]
                for (a, b), e in sorted(self.edges.items())
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SocialGraph":
        params = TrustParams(**data.get("params", {}))
        hist = {
            (int(a), int(b)): [Interaction(*map(float, it)) for it in items]
            for a, b, items in data["edges"]
        }
        return cls.build(data["nodes"], hist, float(data.get("now", 0.0)), params)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "SocialGraph":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _best_paths(graph: SocialGraph, source: int) -> dict[int, tuple[float, tuple[int, ...]]]:
    """Minimum-hop paths from ``source``; equal-hop ties go to the larger trust
    product, then to the lexicographically smallest node sequence."""
    dist = {source: 0}
    order = [source]
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in graph._adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                order.append(v)
                queue.append(v)
    best: dict[int, tuple[float, tuple[int, ...]]] = {source: (1.0, (source,))}
    for v in order[1:]:
        chosen = None
        for u in graph._adj[v]:
            if dist.get(u) != dist[v] - 1:
                continue
            prod_u, path_u = best[u]
            cand = (prod_u * graph.tie_strength(u, v), path_u + (v,))
            if chosen is None or cand[0] > chosen[0] or (cand[0] == chosen[0] and cand[1] < chosen[1]):
                chosen = cand
        best[v] = chosen
    return best


def shortest_trust_path(graph: SocialGraph, i: int, j: int) -> tuple[int, ...]:
    """Node sequence chosen for indirect trust; empty when disconnected."""
    graph.check(i, j)
    found = _best_paths(graph, i).get(j)
    return () if found is None else found[1]


def indirect_trust(graph: SocialGraph, i: int, j: int, params: TrustParams | None = None) -> float:
    graph.check(i, j)
    if i == j:
        return 1.0
    found = _best_paths(graph, i).get(j)
    return 0.0 if found is None else found[0]


def combined_trust(graph: SocialGraph, i: int, j: int, params: TrustParams | None = None) -> float:
    params = params or graph.params
    graph.check(i, j)
    if i == j:
        raise InvalidInputError("combined trust is defined for distinct avatars")
    return blend(graph.tie_strength(i, j), indirect_trust(graph, i, j), params.alpha_mix)


def blend(direct: float, indirect: float, alpha: float) -> float:
    return alpha * direct + (1.0 - alpha) * indirect


def combined_trust_table(graph: SocialGraph, params: TrustParams | None = None) -> dict[tuple[int, int], float]:
    """Combined trust for every ordered pair of distinct avatars (one BFS per source)."""
    params = params or graph.params
    table = {}
    for i in graph.avatar_ids:
        paths = _best_paths(graph, i)
        for j in graph.avatar_ids:
            if j == i:
                continue
            indirect = paths[j][0] if j in paths else 0.0
            table[(i, j)] = blend(graph.tie_strength(i, j), indirect, params.alpha_mix)
    return table


def social_impact(graph: SocialGraph, i: int) -> float:
    return sum(graph.tie_strength(i, j) for j in graph.neighbors(i))


# Long enough that 1 - exp(-duration/tau) rounds to exactly 1.0 in float64.
_SATURATED = 64.0


def random_graph(n: int, density: float, seed: int, params: TrustParams = TrustParams()) -> SocialGraph:
    """Erdos-Renyi graph whose tie strengths are uniform on [0, 1].

    Each edge carries one interaction at ``t = now = 0`` with a saturated
    duration, so its tie strength equals the drawn experience exactly.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if not 0.0 <= density <= 1.0:
        raise InvalidInputError("density must lie in [0, 1]")
    rng = derive_rng(seed, "social_graph", n)
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
    present = rng.random(len(pairs)) < density
    strength = rng.random(len(pairs))
    hist = {
        pair: [Interaction(float(s), _SATURATED * params.tau_duration, 0.0)]
        for pair, keep, s in zip(pairs, present, strength)
        if keep
    }
    return SocialGraph.build(range(n), hist, 0.0, params)
