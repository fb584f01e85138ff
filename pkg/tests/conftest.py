import struct

import pytest

from socialfl.consensus import NetworkState, node_id, run_height
from socialfl.ledger import KeyRegistry, build_transaction


def grow_chain(heights: int, seed: int = 7, n_nodes: int = 20, profiles=None, with_sa: bool = False) -> NetworkState:
    """Honest network; one gaTx (and optionally an saTx) per height."""
    profiles = profiles or ["honest"] * n_nodes
    members = ["avatar-0", "avatar-1", "avatar-2"]
    registry = KeyRegistry.generate([node_id(i) for i in range(len(profiles))] + ["cloud"] + members, seed)
    state = NetworkState.create(profiles, seed, registry=registry)
    for h in range(1, heights + 1):
        ptr = state.store.put(b"model/" + struct.pack("<Q", h))
        state.mempool.append(build_transaction("gaTx", dict(task_id="task-0", round=h, global_ptr=ptr, aggregator="cloud"), registry))
        if with_sa:
            agg = state.store.put(b"cluster/" + struct.pack("<Q", h))
            state.mempool.append(build_transaction("saTx", dict(
                task_id="task-0", round=h, members=members, aggregate_ptr=agg, contributions=[1.0, 2.0, 3.5],
            ), registry))
        run_height(state)
    return state


@pytest.fixture(scope="session")
def chain50():
    return grow_chain(50, with_sa=True)
