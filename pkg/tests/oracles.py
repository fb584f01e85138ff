"""Independent reference implementations used only by the tests.

They recompute quantities from the defining formulas with no calls into the
package's own helpers, so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import itertools

EPS = 1e-12


def utility(members, profiles, params) -> float:
    d = sum(profiles[i].data_size * profiles[i].data_quality for i in members)
    return params.u_max * d / (d + params.kappa) - params.beta * params.sigma_dp**2 / len(members)


def fed(members, profiles, params) -> float:
    return utility(members, profiles, params) - params.cost_per_member * len(members)


def phi(avatar, members, profiles, params) -> float:
    members = list(members)
    solo = {i: fed([i], profiles, params) for i in members}
    if len(members) == 1:
        return solo[avatar]
    d = {i: profiles[i].data_size * profiles[i].data_quality for i in members}
    share = d[avatar] / sum(d.values())
    return solo[avatar] + share * (fed(members, profiles, params) - sum(solo.values()))


def set_partitions(items):
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1:]


def trusted(a, cluster, table, theta) -> bool:
    return all(table[(a, j)] >= theta for j in cluster if j != a)


def improving_moves(partition, profiles, params, table=None, theta=0.0):
    """Brute-force list of (avatar, target) unilateral moves that strictly
    help the mover and, for a cluster target, pass trust and the Pareto
    admission rule.  ``target`` is a frozenset, empty for 'go alone'."""
    gate = (lambda a, c: True) if table is None else (lambda a, c: trusted(a, c, table, theta))
    clusters = [frozenset(c) for c in partition]
    moves = []
    for own in clusters:
        for a in own:
            now = phi(a, own, profiles, params)
            options = [frozenset()] if len(own) > 1 else []
            options += [c for c in clusters if c != own and gate(a, c)]
            for target in options:
                joined = target | {a}
                if phi(a, joined, profiles, params) <= now + EPS:
                    continue
                if target:
                    deltas = [phi(m, joined, profiles, params) - phi(m, target, profiles, params) for m in target]
                    if not (all(x >= -EPS for x in deltas) and any(x > EPS for x in deltas)):
                        continue
                moves.append((a, target))
    return moves


def gated_partitions(avatars, table, theta):
    for part in set_partitions(avatars):
        if all(trusted(a, c, table, theta) for c in part for a in c):
            yield part


def simple_paths(adj, i, j):
    stack = [(i, (i,))]
    while stack:
        u, path = stack.pop()
        if u == j:
            yield path
            continue
        for v in adj.get(u, ()):
            if v not in path:
                stack.append((v, path + (v,)))


def indirect(ties: dict, n: int, i: int, j: int) -> float:
    """Min-hop path, ties by larger product then lexicographic sequence."""
    if i == j:
        return 1.0
    adj = {}
    for (a, b) in ties:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    paths = list(simple_paths(adj, i, j))
    if not paths:
        return 0.0

    def prod(p):
        out = 1.0
        for a, b in itertools.pairwise(p):
            out *= ties[(min(a, b), max(a, b))]
        return out

    hops = min(len(p) for p in paths)
    best = min((p for p in paths if len(p) == hops), key=lambda p: (-prod(p), p))
    return prod(best)
