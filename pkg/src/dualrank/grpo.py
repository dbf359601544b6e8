"""GRPO over judgment policies, with a linear Plackett-Luce policy for desk-scale runs.

The trainer only needs three things from a policy: draw a judgment for an
instance, score a judgment's log-probability, and differentiate that
log-probability with respect to the parameter vector. ``PlackettLucePolicy``
provides all three in closed form, so every step of the update can be
checked exactly.

Candidate programs are never regenerated or modified here; only the
judgments are sampled from the current policy.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .dataset import TrainingInstance
from .jsonl import read_json, write_json, write_jsonl
from .plackett_luce import pl_grad_weights, pl_logprob, pl_sample
from .reward import FormatFailure, RewardSpec, format_ranking, score_response

logger = logging.getLogger(__name__)

FORMAT_FAILURE_TEXT = "I could not decide on an ordering for these candidates."


@dataclass(frozen=True)
class TrainerConfig:
    group_size: int = 8
    clip_low: float = 0.2
    clip_high: float = 0.28
    kl_coeff: float = 0.0
    advantage_epsilon: float = 1e-6
    learning_rate: float = 0.5
    epochs: int = 3
    batch_size: int = 64
    ppo_epochs_per_batch: int = 1
    format_failure_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not 0 < self.clip_low <= self.clip_high < 1:
            raise ValueError("need 0 < clip_low <= clip_high < 1")
        if self.kl_coeff < 0 or self.advantage_epsilon <= 0 or self.learning_rate < 0:
            raise ValueError("kl_coeff and learning_rate must be >= 0, advantage_epsilon > 0")
        if min(self.epochs, self.batch_size, self.ppo_epochs_per_batch) < 1:
            raise ValueError("epochs, batch_size and ppo_epochs_per_batch must be >= 1")
        if not 0 <= self.format_failure_rate <= 1:
            raise ValueError("format_failure_rate must be in [0, 1]")


# -- GRPO primitives -----------------------------------------------------------


def group_advantages(rewards, epsilon: float = 1e-6) -> np.ndarray:
    """Group-relative advantages using the population standard deviation."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ValueError("a rollout group needs at least 2 rewards")
    if np.all(r == r[0]):
        return np.zeros_like(r)
    return (r - r.mean()) / (r.std() + epsilon)


def clipped_surrogate(ratio, advantage, clip_low: float = 0.2, clip_high: float = 0.28):
    clipped = np.clip(ratio, 1.0 - clip_low, 1.0 + clip_high)
    out = np.minimum(ratio * advantage, clipped * advantage)
    return float(out) if np.ndim(out) == 0 else out


def kl_penalty(logp_current, logp_ref):
    """Per-sample KL estimate exp(d) - d - 1 with d = logp_ref - logp_current."""
    delta = np.asarray(logp_ref, dtype=np.float64) - np.asarray(logp_current, dtype=np.float64)
    out = np.maximum(np.expm1(delta) - delta, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def _is_clipped(ratio, advantage, clip_low, clip_high):
    return ((advantage > 0) & (ratio > 1.0 + clip_high)) | ((advantage < 0) & (ratio < 1.0 - clip_low))


# -- policies ------------------------------------------------------------------


@dataclass
class PolicyParams:
    weights: np.ndarray
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        if self.weights.size < 1 or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be a finite vector with d >= 1")

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.weights.copy(), dict(self.extra))


@dataclass(frozen=True)
class Rollout:
    text: str
    ranking: tuple[int, ...] | None  # 0-based, best first; None for a malformed response
    logprob: float


@dataclass(frozen=True)
class FeatureConfig:
    """Per-candidate features for the reference policy.

    ``length`` adds the group-centred log source length. ``label_signal``
    adds the hidden execution label plus Gaussian noise of scale
    ``label_noise``; it exists only for controlled experiments where a
    learnable signal is wanted.
    """

    length: bool = True
    label_signal: bool = False
    label_noise: float = 0.1
    seed: int = 0

    @property
    def dim(self) -> int:
        return int(self.length) + int(self.label_signal)


def featurize(instance: TrainingInstance, cfg: FeatureConfig) -> np.ndarray:
    if cfg.dim < 1:
        raise ValueError("feature config enables no features")
    cols = []
    if cfg.length:
        lengths = np.log1p([len(c) for c in instance.candidates])
        cols.append(lengths - lengths.mean())
    if cfg.label_signal:
        digest = hashlib.sha256(instance.group_id.encode("utf-8")).digest()
        rng = np.random.default_rng([cfg.seed, int.from_bytes(digest[:8], "little")])
        noise = rng.normal(0.0, cfg.label_noise, size=instance.k)
        cols.append(np.asarray(instance.labels, dtype=np.float64) + noise)
    return np.column_stack(cols)


class JudgmentPolicy:
    """Interface the trainer samples from and differentiates."""

    dim: int

    def sample(self, instance: TrainingInstance, params: PolicyParams, rng: np.random.Generator) -> Rollout:
        raise NotImplementedError

    def logprob(self, instance: TrainingInstance, params: PolicyParams, rollout: Rollout) -> float:
        raise NotImplementedError

    def grad_logprob(self, instance: TrainingInstance, params: PolicyParams, rollout: Rollout) -> np.ndarray:
        raise NotImplementedError

    def init_params(self) -> PolicyParams:
        return PolicyParams(np.zeros(self.dim))


class PlackettLucePolicy(JudgmentPolicy):
    """Linear Plackett-Luce judge: scores = features @ weights.

    With probability ``failure_rate`` the policy emits a malformed response
    instead of a ranking. That branch has a parameter-free probability, so
    it contributes reward (the format penalty) but no gradient.
    """

    def __init__(self, features: FeatureConfig | None = None, failure_rate: float = 0.0):
        self.features = features or FeatureConfig()
        self.failure_rate = failure_rate
        self.dim = self.features.dim
        self._cache: dict[str, np.ndarray] = {}

    def feature_matrix(self, instance: TrainingInstance) -> np.ndarray:
        phi = self._cache.get(instance.group_id)
        if phi is None:
            phi = self._cache[instance.group_id] = featurize(instance, self.features)
        return phi

    def scores(self, instance: TrainingInstance, params: PolicyParams) -> np.ndarray:
        return self.feature_matrix(instance) @ params.weights

    def _branch_logprob(self, malformed: bool) -> float:
        q = self.failure_rate
        p = q if malformed else 1.0 - q
        return math.log(p) if p > 0 else -math.inf

    def sample(self, instance, params, rng):
        if self.failure_rate > 0 and rng.random() < self.failure_rate:
            return Rollout(FORMAT_FAILURE_TEXT, None, self._branch_logprob(True))
        ranking, lp = pl_sample(self.scores(instance, params), rng)
        text = f"Ranking (best to worst): {format_ranking(ranking + 1)}"
        return Rollout(text, tuple(int(i) for i in ranking), lp + self._branch_logprob(False))

    def logprob(self, instance, params, rollout):
        if rollout.ranking is None:
            return self._branch_logprob(True)
        return pl_logprob(self.scores(instance, params), rollout.ranking) + self._branch_logprob(False)

    def grad_logprob(self, instance, params, rollout):
        if rollout.ranking is None:
            return np.zeros(self.dim)
        return pl_grad_weights(params.weights, self.feature_matrix(instance), rollout.ranking)


# -- rollouts and the objective ------------------------------------------------


@dataclass(frozen=True)
class RolloutGroup:
    instance_ref: str
    responses: tuple[Rollout, ...]
    rewards: np.ndarray
    advantages: np.ndarray


def collect_rollouts(
    instance: TrainingInstance,
    policy: JudgmentPolicy,
    params: PolicyParams,
    config: TrainerConfig,
    reward_spec: RewardSpec,
    rng: np.random.Generator,
) -> RolloutGroup:
    responses = tuple(policy.sample(instance, params, rng) for _ in range(config.group_size))
    rewards = np.empty(config.group_size)
    for i, rollout in enumerate(responses):
        parsed, rewards[i] = score_response(rollout.text, instance.labels, reward_spec)
        expected = None if isinstance(parsed, FormatFailure) else tuple(c - 1 for c in parsed.order)
        if expected != rollout.ranking:
            raise RuntimeError(f"{instance.group_id}: sampled ranking does not round-trip through the parser")
    advantages = group_advantages(rewards, config.advantage_epsilon)
    return RolloutGroup(instance.group_id, responses, rewards, advantages)


def grpo_objective(
    groups: Sequence[RolloutGroup],
    instances: Sequence[TrainingInstance],
    policy: JudgmentPolicy,
    params: PolicyParams,
    ref_params: PolicyParams,
    config: TrainerConfig,
) -> tuple[float, np.ndarray, dict]:
    """Clipped surrogate minus the KL penalty, averaged over all samples.

    Returns (objective, gradient with respect to ``params.weights``, stats).
    The sampling log-probabilities are the ones stored in the rollouts.
    """
    total = 0.0
    grad = np.zeros_like(params.weights)
    n = n_clipped = 0
    kl_sum = 0.0
    beta = config.kl_coeff
    for group, inst in zip(groups, instances):
        for rollout, adv in zip(group.responses, group.advantages):
            logp = policy.logprob(inst, params, rollout)
            logp_ref = policy.logprob(inst, ref_params, rollout)
            ratio = math.exp(logp - rollout.logprob) if rollout.ranking is not None else 1.0
            kl = kl_penalty(logp, logp_ref) if rollout.ranking is not None else 0.0
            total += clipped_surrogate(ratio, adv, config.clip_low, config.clip_high) - beta * kl
            clipped = bool(_is_clipped(ratio, adv, config.clip_low, config.clip_high))
            n_clipped += clipped
            kl_sum += kl
            n += 1
            coeff = 0.0 if clipped else ratio * adv
            if beta and rollout.ranking is not None:
                coeff -= beta * (1.0 - math.exp(logp_ref - logp))
            if coeff:
                grad += coeff * policy.grad_logprob(inst, params, rollout)
    return total / n, grad / n, {"clip_frac": n_clipped / n, "kl": kl_sum / n}


@dataclass(frozen=True)
class StepMetrics:
    step: int
    mean_reward: float
    clip_frac: float
    kl: float
    mean_abs_adv: float

    def to_record(self) -> dict:
        return asdict(self)


def _substream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, *keys])


def train_step(
    batch: Sequence[TrainingInstance],
    params: PolicyParams,
    ref_params: PolicyParams,
    config: TrainerConfig,
    reward_spec: RewardSpec,
    policy: JudgmentPolicy | None = None,
    step: int = 0,
    workers: int = 1,
) -> tuple[PolicyParams, StepMetrics]:
    """One GRPO update: sample G judgments per instance, score, then ascend.

    Each instance draws from its own generator keyed by (seed, step,
    position in batch), so results do not depend on ``workers``.
    """
    if not batch:
        raise ValueError("empty batch")
    policy = policy or PlackettLucePolicy(failure_rate=config.format_failure_rate)
    old = params.copy()

    def collect(item):
        pos, inst = item
        return collect_rollouts(inst, policy, old, config, reward_spec, _substream(config.seed, step, pos))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(collect, enumerate(batch)))
    else:
        groups = [collect(item) for item in enumerate(batch)]

    new = params.copy()
    clip_fracs, kls = [], []
    for _ in range(config.ppo_epochs_per_batch):
        _, grad, stats = grpo_objective(groups, batch, policy, new, ref_params, config)
        new.weights = new.weights + config.learning_rate * grad
        clip_fracs.append(stats["clip_frac"])
        kls.append(stats["kl"])

    rewards = np.concatenate([g.rewards for g in groups])
    advs = np.concatenate([g.advantages for g in groups])
    metrics = StepMetrics(
        step=step,
        mean_reward=float(rewards.mean()),
        clip_frac=float(np.mean(clip_fracs)),
        kl=float(np.mean(kls)),
        mean_abs_adv=float(np.abs(advs).mean()),
    )
    return new, metrics


def train(
    dataset: Sequence[TrainingInstance],
    config: TrainerConfig,
    reward_spec: RewardSpec = RewardSpec(),
    policy: JudgmentPolicy | None = None,
    params: PolicyParams | None = None,
    on_step: Callable[[StepMetrics], None] | None = None,
    workers: int = 1,
) -> tuple[PolicyParams, list[StepMetrics]]:
    """Run ``epochs`` passes of shuffled mini-batches over a fixed dataset."""
    if not dataset:
        raise ValueError("empty dataset")
    policy = policy or PlackettLucePolicy(failure_rate=config.format_failure_rate)
    params = params.copy() if params is not None else policy.init_params()
    ref_params = params.copy()
    trajectory: list[StepMetrics] = []
    step = 0
    for epoch in range(config.epochs):
        order = _substream(config.seed, 2**31, epoch).permutation(len(dataset))
        for start in range(0, len(order), config.batch_size):
            batch = [dataset[i] for i in order[start:start + config.batch_size]]
            params, metrics = train_step(batch, params, ref_params, config, reward_spec, policy, step, workers)
            trajectory.append(metrics)
            if on_step is not None:
                on_step(metrics)
            step += 1
    return params, trajectory


def smoothed(values: Sequence[float], window: int = 20) -> np.ndarray:
    """Trailing moving average; the first points average what is available."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return v
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


# -- persistence ---------------------------------------------------------------


def save_checkpoint(path: str | os.PathLike, params: PolicyParams, config: TrainerConfig, seed: int | None = None):
    write_json(path, {
        "d": int(params.weights.size),
        "weights": [float(w) for w in params.weights],
        "seed": config.seed if seed is None else seed,
        "config": asdict(config),
    })


def load_checkpoint(path: str | os.PathLike) -> tuple[PolicyParams, TrainerConfig]:
    rec = read_json(path)
    if len(rec["weights"]) != rec["d"]:
        raise ValueError(f"{path}: d={rec['d']} but {len(rec['weights'])} weights")
    known = {f.name for f in fields(TrainerConfig)}
    config = TrainerConfig(**{k: v for k, v in rec["config"].items() if k in known})
    return PolicyParams(rec["weights"]), config


def write_metrics(path: str | os.PathLike, trajectory: Sequence[StepMetrics]) -> int:
    return write_jsonl(path, (m.to_record() for m in trajectory))
