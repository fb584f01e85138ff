"""Strict JSON experiment configuration.

Only ``master_seed`` is required; every other field has a default.  Unknown
keys are rejected at every nesting level so typos fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import MISSING, asdict, dataclass, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

from socialfl.coalition import QualityParams
from socialfl.consensus import Profile, ReputationParams, SortitionParams
from socialfl.flsim import DpParams
from socialfl.ledger import H
from socialfl.provenance import ATTACKS, VerifyThresholds, WatermarkConfig
from socialfl.social_graph import TrustParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AttackGrid:
    attacks: tuple[str, ...] = ATTACKS
    ratios: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    trials: int = 200
    n_clients: int = 100
    # Fresh-setup genuine/clean verification trials; 0 skips them.
    verification_trials: int = 50

    def __post_init__(self):
        object.__setattr__(self, "attacks", tuple(self.attacks))
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        unknown = [a for a in self.attacks if a not in ATTACKS]
        if unknown:
            raise ConfigError(f"unknown attack kinds: {unknown}")
        if any(not 0.0 <= r <= 1.0 for r in self.ratios):
            raise ConfigError("attack ratios must lie in [0, 1]")
        if self.trials < 1 or self.n_clients < 1:
            raise ConfigError("trials and n_clients must be >= 1")
        if self.verification_trials < 0:
            raise ConfigError("verification_trials must be >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int
    n_avatars: int = 100
    density: float = 1.0
    trust: TrustParams = TrustParams()
    quality: QualityParams = QualityParams()
    dp: DpParams = DpParams()
    sortition: SortitionParams = SortitionParams()
    reputation: ReputationParams = ReputationParams()
    verify: VerifyThresholds = VerifyThresholds()
    watermark: WatermarkConfig = WatermarkConfig()
    # Global FL rounds in the full pipeline.
    rounds: int = 5
    n_edges: int = 4
    max_iter: int = 1000
    n_full_nodes: int = 20
    consensus_heights: int = 500
    byz_fraction: float = 0.0
    # Faulty nodes cycle through these behaviours.
    byz_profiles: tuple[str, ...] = ("silent", "equivocator", "invalid-proposer")
    attack_grid: AttackGrid = AttackGrid()
    output_dir: str = "out"

    def __post_init__(self):
        object.__setattr__(self, "byz_profiles", tuple(self.byz_profiles))
        if not isinstance(self.master_seed, int) or isinstance(self.master_seed, bool) or self.master_seed < 0:
            raise ConfigError("master_seed must be a non-negative integer")
        if self.n_avatars < 1 or self.n_full_nodes < 1:
            raise ConfigError("n_avatars and n_full_nodes must be >= 1")
        if not 0.0 <= self.density <= 1.0:
            raise ConfigError("density must lie in [0, 1]")
        if self.rounds < 1 or self.consensus_heights < 1 or self.n_edges < 1 or self.max_iter < 1:
            raise ConfigError("rounds, consensus_heights, n_edges and max_iter must be >= 1")
        if not 0.0 <= self.byz_fraction < 1.0:
            raise ConfigError("byz_fraction must lie in [0, 1)")
        bad = [p for p in self.byz_profiles if p not in {x.value for x in Profile} or p == Profile.HONEST.value]
        if bad or not self.byz_profiles:
            raise ConfigError(f"byz_profiles must name faulty behaviours, got {list(self.byz_profiles)}")

    def node_profiles(self) -> list[str]:
        """Faulty nodes take the highest ids, cycling through ``byz_profiles``."""
        n_byz = round(self.byz_fraction * self.n_full_nodes)
        honest = [Profile.HONEST.value] * (self.n_full_nodes - n_byz)
        return honest + [self.byz_profiles[k % len(self.byz_profiles)] for k in range(n_byz)]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, master_seed=seed)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()

    def digest(self) -> str:
        return H(self.canonical_bytes()).hex()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key {where + '.' if where else ''}{key}")
    kwargs = {}
    for name, f in known.items():
        path = f"{where}.{name}" if where else name
        if name not in data:
            if f.default is MISSING and f.default_factory is MISSING:
                raise ConfigError(f"missing required field {path}")
            continue
        default = f.default
        value = data[name]
        if is_dataclass(default):
            value = _build(type(default), value, path)
        elif isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{path}: expected a list")
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "")


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)
