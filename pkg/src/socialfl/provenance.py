"""Shared-ownership watermarking on a synthetic linear classifier.

Phase 1: every client embeds a private trigger set (random inputs with
random labels) into its local model and registers a subset with the TEE.
The TEE fuses one registered sample per client into each joint-watermark
input and labels it with the normalized histogram of the constituent hard
labels; the global model is fine-tuned on these soft labels.

Phase 2: verification needs a submission from every owner.  Submissions are
scored for similarity to what each owner registered and for cross-owner
diversity; only then is the suspect queried on the regenerated joint
watermark and compared with the soft labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from socialfl.ledger import H, Writer
from socialfl.rng import derive_rng


class WatermarkError(Exception):
    pass


class EmbeddingFailedError(WatermarkError):
    def __init__(self, achieved: float, what: str = "trigger accuracy"):
        super().__init__(f"embedding did not converge ({what} {achieved:.4f})")
        self.achieved = achieved


class IncompleteRegistryError(WatermarkError):
    pass


class UnknownClientError(KeyError):
    pass


@dataclass(frozen=True)
class WatermarkConfig:
    n_classes: int = 10
    dim: int = 32
    # Main-task signal lives in the first ``informative_dims`` coordinates.
    informative_dims: int = 8
    center_scale: float = 2.0
    signal_noise: float = 0.3
    background_noise: float = 0.02
    trigger_size: int = 100
    upload_size: int = 10
    joint_size: int = 20
    local_samples: int = 200
    train_samples: int = 1000
    train_steps: int = 300
    step_size: float = 0.5
    max_steps: int = 10000

    def __post_init__(self):
        if min(self.trigger_size, self.upload_size, self.joint_size) < 1:
            raise ValueError("watermark sizes must be >= 1")
        if self.upload_size > self.trigger_size:
            raise ValueError("upload_size cannot exceed trigger_size")
        if not 0 < self.informative_dims <= self.dim:
            raise ValueError("informative_dims must lie in (0, dim]")


@dataclass(frozen=True)
class VerifyThresholds:
    s_min: float = 0.95
    delta_div: float = 0.1
    eps_gap: float = 0.3

    def __post_init__(self):
        if not 0 < self.s_min <= 1:
            raise ValueError("s_min must lie in (0, 1]")
        if self.delta_div <= 0 or self.eps_gap <= 0:
            raise ValueError("delta_div and eps_gap must be > 0")


# -- model and main task ----------------------------------------------------


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Classifier:
    weights: np.ndarray
    trained: bool = False

    @classmethod
    def zeros(cls, n_classes: int = 10, dim: int = 32) -> "Classifier":
        return cls(np.zeros((n_classes, dim)))

    def proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(np.atleast_2d(x) @ self.weights.T)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(np.atleast_2d(x) @ self.weights.T, axis=1)

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.predict(x) == y)) if len(y) else 1.0

    def copy(self) -> "Classifier":
        return Classifier(self.weights.copy(), self.trained)

    def digest(self) -> bytes:
        return H(np.ascontiguousarray(self.weights, dtype="<f8").tobytes())


@dataclass(frozen=True)
class BlobTask:
    """Gaussian blobs, one per class."""

    centers: np.ndarray
    scales: np.ndarray

    @classmethod
    def generate(cls, seed: int, config: WatermarkConfig = WatermarkConfig()) -> "BlobTask":
        rng = derive_rng(seed, "blob_task")
        centers = np.zeros((config.n_classes, config.dim))
        k = config.informative_dims
        centers[:, :k] = rng.normal(0.0, config.center_scale, (config.n_classes, k))
        scales = np.full(config.dim, config.background_noise)
        scales[:k] = config.signal_noise
        return cls(centers, scales)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        y = rng.integers(0, len(self.centers), n)
        x = self.centers[y] + rng.standard_normal((n, self.centers.shape[1])) * self.scales
        return x, y


def _gd(model: Classifier, x: np.ndarray, targets: np.ndarray, step: float) -> None:
    grad = (model.proba(x) - targets).T @ x / len(x)
    model.weights -= step * grad


def train_classifier(task: BlobTask, seed: int, config: WatermarkConfig = WatermarkConfig()) -> Classifier:
    x, y = task.sample(config.train_samples, derive_rng(seed, "train_data"))
    targets = np.eye(config.n_classes)[y]
    model = Classifier.zeros(config.n_classes, config.dim)
    for _ in range(config.train_steps):
        _gd(model, x, targets, config.step_size)
    model.trained = True
    return model


# -- private watermarks -----------------------------------------------------


@dataclass(frozen=True)
class TriggerSample:
    input: np.ndarray
    hard_label: int


@dataclass(frozen=True)
class PrivateWatermark:
    owner: int
    inputs: np.ndarray
    labels: np.ndarray
    upload_subset: tuple[int, ...]

    @property
    def samples(self) -> list[TriggerSample]:
        return [TriggerSample(x, int(y)) for x, y in zip(self.inputs, self.labels)]

    @property
    def upload_inputs(self) -> np.ndarray:
        return self.inputs[list(self.upload_subset)]

    @property
    def upload_labels(self) -> np.ndarray:
        return self.labels[list(self.upload_subset)]


def gen_private_watermark(client: int, seed: int, config: WatermarkConfig = WatermarkConfig()) -> PrivateWatermark:
    rng = derive_rng(seed, "private_watermark", client)
    inputs = rng.uniform(-1.0, 1.0, (config.trigger_size, config.dim))
    labels = rng.integers(0, config.n_classes, config.trigger_size)
    subset = tuple(sorted(int(i) for i in rng.choice(config.trigger_size, config.upload_size, replace=False)))
    return PrivateWatermark(client, inputs, labels, subset)


def embed_watermark(
    model: Classifier,
    samples: Sequence[TriggerSample] | tuple[np.ndarray, np.ndarray],
    max_steps: int = 10000,
    replay: Optional[tuple[np.ndarray, np.ndarray]] = None,
    step_size: float = 0.5,
    target_accuracy: float = 0.95,
) -> Classifier:
    """Fine-tune on trigger samples (plus ``replay`` main-task data) until
    trigger accuracy reaches ``target_accuracy``."""
    x, y = _as_arrays(samples)
    if len(y) == 0:
        return model.copy()
    n_classes = model.weights.shape[0]
    out = model.copy()
    t = np.eye(n_classes)[y]
    if replay is not None:
        rx, ry = replay
        rt = np.eye(n_classes)[ry]
    for step in range(max_steps + 1):
        if step % 10 == 0 and out.accuracy(x, y) >= target_accuracy:
            return out
        if step == max_steps:
            break
        grad = (out.proba(x) - t).T @ x / len(x)
        if replay is not None:
            grad += (out.proba(rx) - rt).T @ rx / len(rx)
        out.weights -= step_size * grad
    acc = out.accuracy(x, y)
    if acc >= target_accuracy:
        return out
    raise EmbeddingFailedError(acc)


def _as_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(samples, tuple) and len(samples) == 2 and isinstance(samples[0], np.ndarray):
        return samples[0], np.asarray(samples[1], dtype=int)
    samples = list(samples)
    if not samples:
        return np.zeros((0, 0)), np.zeros(0, dtype=int)
    return np.vstack([s.input for s in samples]), np.array([s.hard_label for s in samples], dtype=int)


# -- TEE registry and joint watermark ---------------------------------------


class WatermarkRegistry:
    """Simulated TEE.  Registered triggers are only used by fusion and
    scoring; there is deliberately no accessor for them."""

    def __init__(self, n_classes: int = 10):
        self.n_classes = n_classes
        self._inputs: dict[int, np.ndarray] = {}
        self._labels: dict[int, np.ndarray] = {}
        self.sealed = False

    def register(self, client: int, watermark: PrivateWatermark) -> None:
        if self.sealed:
            raise WatermarkError("registry is sealed")
        if client in self._inputs:
            raise WatermarkError(f"client {client} already registered")
        self._inputs[client] = watermark.upload_inputs.copy()
        self._labels[client] = watermark.upload_labels.copy()

    def seal(self) -> None:
        self.sealed = True

    @property
    def clients(self) -> list[int]:
        return sorted(self._inputs)

    def __contains__(self, client: int) -> bool:
        return client in self._inputs


@dataclass(frozen=True)
class JointWatermark:
    inputs: np.ndarray
    soft_labels: np.ndarray

    @property
    def fused_samples(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.inputs, self.soft_labels))

    def __len__(self) -> int:
        return len(self.inputs)


def soft_label(hard_labels: Iterable[int], n_classes: int) -> np.ndarray:
    counts = np.bincount(np.asarray(list(hard_labels), dtype=int), minlength=n_classes).astype(float)
    return counts / counts.sum()


def fuse_joint(
    registry: WatermarkRegistry, seed: int, M: int = 20, clients: Optional[Iterable[int]] = None
) -> JointWatermark:
    """Each fused input mixes one registered sample per client with
    Dirichlet(1, ..., 1) weights, rescaled so its largest coordinate has
    magnitude 1; its label is the normalized count of the constituent labels.
    """
    if not registry.sealed:
        raise IncompleteRegistryError("registry must be sealed before fusion")
    expected = registry.clients if clients is None else sorted(clients)
    missing = [c for c in expected if c not in registry]
    if missing or not expected:
        raise IncompleteRegistryError(f"clients missing from registry: {missing}")
    rng = derive_rng(seed, "joint_watermark", M)
    n = len(expected)
    inputs, labels = [], []
    for _ in range(M):
        picks = [int(rng.integers(0, len(registry._labels[c]))) for c in expected]
        stacked = np.vstack([registry._inputs[c][k] for c, k in zip(expected, picks)])
        weights = rng.dirichlet(np.ones(n))
        x = weights @ stacked
        peak = np.abs(x).max()
        inputs.append(x / peak if peak > 0 else x)
        labels.append(soft_label([registry._labels[c][k] for c, k in zip(expected, picks)], registry.n_classes))
    return JointWatermark(np.vstack(inputs), np.vstack(labels))


def soft_gap(model: Classifier, joint: JointWatermark) -> float:
    """Mean L1 distance between model outputs and soft labels."""
    if len(joint) == 0:
        return 0.0
    return float(np.abs(model.proba(joint.inputs) - joint.soft_labels).sum(axis=1).mean())


def embed_joint(
    global_model: Classifier,
    joint: JointWatermark,
    max_steps: int = 10000,
    eps_gap: float = 0.3,
    replay: Optional[tuple[np.ndarray, np.ndarray]] = None,
    step_size: float = 0.5,
) -> Classifier:
    """Soft-target cross-entropy fine-tuning until the gap is below ``eps_gap / 2``."""
    out = global_model.copy()
    if len(joint) == 0:
        return out
    target = eps_gap / 2
    if replay is not None:
        rx, ry = replay
        rt = np.eye(out.weights.shape[0])[ry]
    for step in range(max_steps + 1):
        if step % 10 == 0 and soft_gap(out, joint) < target:
            return out
        if step == max_steps:
            break
        grad = (out.proba(joint.inputs) - joint.soft_labels).T @ joint.inputs / len(joint)
        if replay is not None:
            grad += (out.proba(rx) - rt).T @ rx / len(rx)
        out.weights -= step_size * grad
    gap = soft_gap(out, joint)
    if gap < target:
        return out
    raise EmbeddingFailedError(gap, "soft-label gap")


# -- verification -----------------------------------------------------------


@dataclass
class ScoreReport:
    scores: dict[int, float]
    collusion: bool
    min_cross_distance: float


def _unit(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return rows / np.where(norms > 0, norms, 1.0)


def _greedy_batch(sim: np.ndarray) -> np.ndarray:
    """Greedy best-pair matching on a stack of (k, U) similarity matrices;
    returns the sum of matched similarities per matrix."""
    sim = sim.copy()
    b, k, u = sim.shape
    total = np.zeros(b)
    rows = np.arange(b)
    for _ in range(min(k, u)):
        flat = sim.reshape(b, -1).argmax(axis=1)
        i, j = np.divmod(flat, u)
        total += sim[rows, i, j]
        sim[rows, i, :] = -np.inf
        sim[rows, :, j] = -np.inf
    return total


def greedy_match_similarity(submitted: np.ndarray, registered: np.ndarray) -> float:
    """Mean cosine over greedily matched best pairs; unmatched registered
    samples count as zero."""
    submitted = np.atleast_2d(submitted)
    if submitted.size == 0:
        return 0.0
    sim = _unit(submitted) @ _unit(registered).T
    return float(_greedy_batch(sim[None])[0] / len(registered))


def _min_cross_distance(blocks: list[np.ndarray]) -> float:
    """Smallest Euclidean distance between unit rows owned by different clients."""
    u = np.vstack(blocks)
    gram = u @ u.T
    start = 0
    for b in blocks:
        gram[start:start + len(b), start:start + len(b)] = -np.inf
        start += len(b)
    best = float(gram.max())
    return math.sqrt(max(2.0 - 2.0 * best, 0.0))


def score_submissions(
    registry: WatermarkRegistry, submissions: Mapping[int, np.ndarray], thresholds: VerifyThresholds = VerifyThresholds()
) -> ScoreReport:
    for c in submissions:
        if c not in registry:
            raise UnknownClientError(c)
    clients = sorted(submissions)
    subs = {c: _unit(np.atleast_2d(np.asarray(submissions[c], float))) for c in clients}
    scores: dict[int, float] = {}
    # Batch clients whose submission and registration shapes agree.
    groups: dict[tuple, list[int]] = {}
    for c in clients:
        if subs[c].size == 0:
            scores[c] = 0.0
        else:
            groups.setdefault((subs[c].shape, registry._inputs[c].shape), []).append(c)
    for (_, reg_shape), members in groups.items():
        s = np.stack([subs[c] for c in members])
        r = np.stack([_unit(registry._inputs[c]) for c in members])
        totals = _greedy_batch(np.einsum("bkf,buf->bku", s, r)) / reg_shape[0]
        scores.update({c: float(t) for c, t in zip(members, totals)})
    nonempty = [subs[c] for c in clients if subs[c].size]
    min_dist = _min_cross_distance(nonempty) if len(nonempty) > 1 else math.inf
    flag = min_dist < thresholds.delta_div or any(v < thresholds.s_min for v in scores.values())
    return ScoreReport({c: scores[c] for c in clients}, flag, min_dist)


@dataclass
class Verdict:
    verdict: str  # "owned" | "not-owned" | "refused"
    reason: str = ""
    gap: Optional[float] = None
    report: Optional[ScoreReport] = None
    model_digest: bytes = b""

    def record_bytes(self) -> bytes:
        w = Writer().str(self.verdict).str(self.reason).f64(-1.0 if self.gap is None else self.gap)
        w.fixed(self.model_digest or bytes(32))
        scores = self.report.scores if self.report else {}
        w.u32(len(scores))
        for c in sorted(scores):
            w.u64(c).f64(scores[c])
        w.u8(int(bool(self.report and self.report.collusion)))
        return w.getvalue()

    @property
    def digest(self) -> bytes:
        return H(self.record_bytes())


def verify_ownership(
    suspect: Classifier,
    submissions: Mapping[int, np.ndarray],
    registry: WatermarkRegistry,
    thresholds: VerifyThresholds = VerifyThresholds(),
    seed: int = 0,
    M: int = 20,
) -> Verdict:
    digest = suspect.digest()
    missing = [c for c in registry.clients if c not in submissions]
    if missing or not registry.clients:
        return Verdict("refused", f"incomplete authorization: {len(missing)} owner(s) missing", model_digest=digest)
    report = score_submissions(registry, submissions, thresholds)
    if report.collusion:
        return Verdict("refused", "scoring failed", report=report, model_digest=digest)
    gap = soft_gap(suspect, fuse_joint(registry, seed, M))
    verdict = "owned" if gap < thresholds.eps_gap else "not-owned"
    return Verdict(verdict, "", gap, report, digest)


# -- experiments ------------------------------------------------------------


@dataclass
class WatermarkWorld:
    """Everything one verification trial needs."""

    config: WatermarkConfig
    task: BlobTask
    watermarks: dict[int, PrivateWatermark]
    registry: WatermarkRegistry
    joint: JointWatermark
    clean_model: Classifier
    watermarked_model: Classifier
    fusion_seed: int

    def genuine_submissions(self, clients: Optional[Iterable[int]] = None) -> dict[int, np.ndarray]:
        clients = self.watermarks if clients is None else clients
        return {c: self.watermarks[c].upload_inputs for c in clients}


def build_world(n_clients: int, seed: int, config: WatermarkConfig = WatermarkConfig(), task: Optional[BlobTask] = None,
                thresholds: VerifyThresholds = VerifyThresholds()) -> WatermarkWorld:
    task = task or BlobTask.generate(seed, config)
    clean = train_classifier(task, seed, config)
    watermarks = {c: gen_private_watermark(c, seed, config) for c in range(n_clients)}
    registry = WatermarkRegistry(config.n_classes)
    for c, wm in watermarks.items():
        registry.register(c, wm)
    registry.seal()
    joint = fuse_joint(registry, seed, config.joint_size)
    replay = task.sample(config.local_samples, derive_rng(seed, "replay"))
    marked = embed_joint(clean, joint, config.max_steps, thresholds.eps_gap, replay, config.step_size)
    return WatermarkWorld(config, task, watermarks, registry, joint, clean, marked, seed)


ATTACKS = ("stealing", "counterfeiting")


def _attack_submissions(world: WatermarkWorld, attack: str, colluders: Sequence[int], rng) -> dict[int, np.ndarray]:
    cfg = world.config
    subs = world.genuine_submissions(colluders)
    victims = [c for c in sorted(world.watermarks) if c not in set(colluders)]
    if attack == "counterfeiting":
        for v in victims:
            subs[v] = rng.uniform(-1.0, 1.0, (cfg.upload_size, cfg.dim))
    elif attack == "stealing":
        # Colluders observe the fused inputs and strip out their own share.
        own = np.vstack([world.watermarks[c].upload_inputs for c in colluders]).mean(axis=0)
        share = len(colluders) / len(world.watermarks)
        for v in victims:
            picks = rng.integers(0, len(world.joint), cfg.upload_size)
            guess = world.joint.inputs[picks] - share * own
            guess = guess + rng.normal(0.0, 0.05, guess.shape)
            subs[v] = guess / np.abs(guess).max(axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown attack {attack!r}")
    return subs


def attack_trial(world: WatermarkWorld, attack: str, ratio: float, rng: np.random.Generator,
                 thresholds: VerifyThresholds = VerifyThresholds()) -> Verdict:
    clients = sorted(world.watermarks)
    k = math.ceil(ratio * len(clients) - 1e-9)
    colluders = sorted(int(c) for c in rng.choice(clients, size=k, replace=False)) if k else []
    if not colluders:
        return Verdict("refused", "no owner approved")
    subs = _attack_submissions(world, attack, colluders, rng)
    return verify_ownership(world.watermarked_model, subs, world.registry, thresholds, world.fusion_seed, len(world.joint))


def simulate_collusion(
    attack: str,
    ratio: float,
    trials: int,
    seed: int,
    config: WatermarkConfig = WatermarkConfig(),
    n_clients: int = 100,
    thresholds: VerifyThresholds = VerifyThresholds(),
    world: Optional[WatermarkWorld] = None,
) -> float:
    """Fraction of trials in which colluders obtain an ``owned`` verdict."""
    if attack not in ATTACKS:
        raise ValueError(f"unknown attack {attack!r}")
    if not 0.0 <= ratio <= 1.0 or trials < 1:
        raise ValueError("ratio must lie in [0, 1] and trials >= 1")
    world = world or build_world(n_clients, seed, config, thresholds=thresholds)
    return collusion_successes(world, attack, ratio, trials, seed, thresholds) / trials


def collusion_successes(
    world: WatermarkWorld, attack: str, ratio: float, trials: int, seed: int, thresholds: VerifyThresholds = VerifyThresholds()
) -> int:
    wins = 0
    for t in range(trials):
        rng = derive_rng(seed, f"collusion/{attack}", int(round(ratio * 1000)), t)
        wins += attack_trial(world, attack, ratio, rng, thresholds).verdict == "owned"
    return wins


@dataclass
class VerificationRates:
    trials: int
    true_positives: int
    clean_rejections: int

    @property
    def true_positive_rate(self) -> float:
        return self.true_positives / self.trials

    @property
    def clean_rejection_rate(self) -> float:
        return self.clean_rejections / self.trials


def verification_trials(
    trials: int,
    seed: int,
    config: WatermarkConfig = WatermarkConfig(),
    n_clients: int = 100,
    thresholds: VerifyThresholds = VerifyThresholds(),
) -> VerificationRates:
    """Fresh owners, registry and models per trial on one shared main task.

    Counts genuine all-owner verifications of the embedded model that come
    back ``owned`` and clean-model verifications that come back ``not-owned``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    task = BlobTask.generate(seed, config)
    tp = tn = 0
    for t in range(trials):
        world_seed = int(derive_rng(seed, "verification_trial", t).integers(2**62))
        world = build_world(n_clients, world_seed, config, task=task, thresholds=thresholds)
        subs = world.genuine_submissions()
        tp += verify_ownership(world.watermarked_model, subs, world.registry, thresholds, world_seed, len(world.joint)).verdict == "owned"
        tn += verify_ownership(world.clean_model, subs, world.registry, thresholds, world_seed, len(world.joint)).verdict == "not-owned"
    return VerificationRates(trials, tp, tn)
