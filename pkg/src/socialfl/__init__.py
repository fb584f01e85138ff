"""Social-trust driven hierarchical federated learning simulator.

Submodules:

* :mod:`socialfl.social_graph` -- avatar graph, direct/indirect trust
* :mod:`socialfl.coalition` -- payoff model and stable cluster formation
* :mod:`socialfl.flsim` -- device / social / edge / cloud aggregation
* :mod:`socialfl.ledger` -- MA blocks, transactions, off-chain store, hashchains
* :mod:`socialfl.consensus` -- reputation-weighted sortition and multi-stage voting
* :mod:`socialfl.provenance` -- joint watermarks and ownership verification
* :mod:`socialfl.harness` -- configuration, experiments, CSV/figure reports, CLI
"""

__version__ = "0.1.0"
