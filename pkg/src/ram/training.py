"""Hybrid supervised + REINFORCE training of the attention model."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional

import numpy as np

from .dataset import AugmentConfig, ConfigError, augment_array, batches, load_split
from .glimpse import GeometryError, GlimpseConfig
from .model import (
    ModelDims,
    RamParams,
    Rollout,
    forward,
    gaussian_score,
    glimpse_network_backward,
    init_params,
    location_head_backward,
)
from .nncore import affine_backward, rnn_cell_backward, save_params, softmax_ce, softmax_ce_backward
from .optim import OPTIMIZERS, decay_lr, make_optimizer
from .report import MemorySink, MetricsRecord

log = logging.getLogger(__name__)

EVAL_LOC_SEED = 20190611


@dataclass(frozen=True)
class HyperParams:
    """One training configuration; defaults are the baseline run."""

    num_glimpses: int = 4
    num_scales: int = 4
    bandwidth: int = 12
    loc_std: float = 0.22
    batch_size: int = 128
    epochs: int = 100
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    decay: float = 0.97

    def validate(self) -> "HyperParams":
        for name in ("num_glimpses", "num_scales", "bandwidth", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.loc_std > 0:
            raise ConfigError("loc_std must be > 0")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 < self.decay <= 1:
            raise ConfigError("decay must be in (0, 1]")
        if self.optimizer.lower() not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        return self

    def glimpse_config(self) -> GlimpseConfig:
        return GlimpseConfig(self.num_glimpses, self.num_scales, self.bandwidth)


@dataclass(frozen=True)
class RunConfig:
    hyper: HyperParams = field(default_factory=HyperParams)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    dims: ModelDims = field(default_factory=ModelDims)
    seed: int = 0
    data_dir: str = "data/mnist"
    n_train: Optional[int] = None
    n_test: Optional[int] = None
    eval_every: int = 1          # steps between evaluations; 0 = end of epoch only
    eval_subset: int = 1000
    checkpoint_every: int = 0    # epochs; 0 = never
    run_id: str = "run"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        sub = {"hyper": HyperParams, "augment": AugmentConfig, "dims": ModelDims}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        for key, typ in sub.items():
            if key in d and not isinstance(d[key], typ):
                extra = set(d[key]) - {f.name for f in fields(typ)}
                if extra:
                    raise ConfigError(f"unknown {key} keys: {sorted(extra)}")
                d[key] = typ(**d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


@dataclass
class TrainData:
    train_digits: np.ndarray   # (N, 28, 28) raw digits, augmented online
    train_labels: np.ndarray
    test_images: np.ndarray    # (M, C, C) augmented once
    test_labels: np.ndarray


def prepare_data(cfg: RunConfig) -> TrainData:
    """Load MNIST and augment the test split once with a seed derived from ``cfg.augment.seed``."""
    aug = cfg.augment.validate()
    tx, ty = load_split(cfg.data_dir, "train", cfg.n_train)
    ex, ey = load_split(cfg.data_dir, "test", cfg.n_test)
    test_rng = np.random.default_rng([aug.seed, 0xE7A1])
    return TrainData(tx, ty, augment_array(ex, aug, test_rng), ey)


@dataclass
class LossComponents:
    classification: float
    policy: float
    baseline: float

    @property
    def total(self) -> float:
        return self.classification + self.policy + self.baseline


def episode_loss_and_grads(ro: Rollout, params: RamParams) -> LossComponents:
    """Batch-mean hybrid objective; accumulates its gradient into ``params``.

    Per episode: ``CE(logits, label) + sum_t -(R - b_t) * log pi(l_{t+1})
    + sum_t (b_t - R)^2``.  The advantage is a constant.  Neither the
    location head's REINFORCE term nor the baseline loss reaches the core:
    both heads read ``h_t`` under a stop-gradient, so the recurrent state is
    shaped by classification alone.
    """
    labels = ro.labels
    n = len(labels)
    G = ro.locs.shape[0]
    R = ro.reward
    ce, probs = softmax_ce(ro.logits, labels)
    dlogits = softmax_ce_backward(probs, labels) / n
    dh = affine_backward(dlogits, ro.caches[-1])

    stochastic = ro.std > 0
    adv = R[None, :] - ro.baselines  # (G, N)
    policy = -(adv[:-1] * ro.logprobs[1:]).sum(axis=0) if stochastic and G > 1 else np.zeros(n)
    base = ((ro.baselines - R[None, :]) ** 2).sum(axis=0)

    for t in range(G - 1, -1, -1):
        gcache, hcache, bcache, pcache = ro.caches[t]
        if pcache is not None and stochastic:
            score = gaussian_score(ro.raw[t + 1], ro.means[t + 1], ro.std)
            dmean = -adv[t][:, None] * score / n
            location_head_backward(dmean, pcache)  # stop-gradient into the core
        db = 2.0 * (ro.baselines[t] - R) / n
        affine_backward(db[:, None], bcache)  # stop-gradient into the core
        dg, dh = rnn_cell_backward(dh, hcache)
        glimpse_network_backward(dg, gcache)
    return LossComponents(float(ce.mean()), float(policy.mean()), float(base.mean()))


def eval_locations(n: int) -> np.ndarray:
    return np.random.default_rng(EVAL_LOC_SEED).uniform(-1.0, 1.0, size=(n, 2))


def evaluate(params: RamParams, images, labels, init_locs=None, chunk: int = 500) -> float:
    """Accuracy with deterministic fixations (policy mean, std 0) from fixed start points."""
    n = len(labels)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if init_locs is None:
        init_locs = eval_locations(n)
    correct = 0
    rng = np.random.default_rng(0)  # unused when std == 0
    for s in range(0, n, chunk):
        ro = forward(images[s:s + chunk], labels[s:s + chunk], params, 0.0, rng,
                     init_locs=init_locs[s:s + chunk], keep_cache=False)
        correct += int(np.sum(ro.predictions == ro.labels))
    return correct / n


@dataclass
class TrainResult:
    params: RamParams
    records: List[MetricsRecord]
    status: str                # completed | diverged
    epochs_run: int
    final_accuracy: float
    best_accuracy: float
    wall_seconds: float        # epoch loop, evaluation included
    train_seconds: float       # epoch loop minus evaluation
    epoch_train_seconds: List[float] = field(default_factory=list)
    message: str = ""


def _rngs(seed: int):
    init, shuffle, aug, policy = np.random.SeedSequence(seed).spawn(4)
    return (np.random.default_rng(init), np.random.default_rng(shuffle),
            np.random.default_rng(aug), np.random.default_rng(policy))


def train(cfg: RunConfig, data: TrainData, sink=None, checkpoint_dir=None) -> TrainResult:
    """Train one run.

    Evaluates on a fixed test subset every ``cfg.eval_every`` steps (and at
    each epoch end), emitting a :class:`MetricsRecord` to ``sink`` each time.
    A non-finite loss stops the run with status ``diverged`` after writing a
    diagnostic record.
    """
    hp = cfg.hyper.validate()
    sink = sink if sink is not None else MemorySink()
    init_rng, shuffle_rng, aug_rng, policy_rng = _rngs(cfg.seed)
    params = init_params(hp.glimpse_config(), cfg.dims, init_rng)
    opt = make_optimizer(hp.optimizer, params.values(), hp.learning_rate)
    lr = hp.learning_rate

    m = min(cfg.eval_subset, len(data.test_labels))
    eval_x, eval_y = data.test_images[:m], data.test_labels[:m]
    eval_locs = eval_locations(m)
    n_batches = math.ceil(len(data.train_labels) / hp.batch_size)

    step, eval_time, best = 0, 0.0, 0.0
    status, message = "completed", ""
    epoch_times: List[float] = []
    start = time.perf_counter()
    epoch = 0
    for epoch in range(1, hp.epochs + 1):
        epoch_start, epoch_eval = time.perf_counter(), 0.0
        for b, idx in enumerate(batches(data.train_labels, hp.batch_size, shuffle_rng)):
            images = augment_array(data.train_digits[idx], cfg.augment, aug_rng)
            step += 1
            try:
                ro = forward(images, data.train_labels[idx], params, hp.loc_std, policy_rng)
                losses = episode_loss_and_grads(ro, params)
                finite = math.isfinite(losses.total) and all(np.all(np.isfinite(p.grad)) for p in params.values())
            except GeometryError:  # a NaN fixation
                finite = False
            if not finite:
                now = time.perf_counter() - start
                sink.append(MetricsRecord(cfg.run_id, epoch, step, float("nan"), float("nan"),
                                          now, lr, now - eval_time))
                status, message = "diverged", f"non-finite loss at epoch {epoch} step {step}"
                log.warning("%s: %s", cfg.run_id, message)
                break
            opt.step()
            if (cfg.eval_every and step % cfg.eval_every == 0) or b == n_batches - 1:
                t0 = time.perf_counter()
                acc = evaluate(params, eval_x, eval_y, eval_locs)
                dt = time.perf_counter() - t0
                eval_time += dt
                epoch_eval += dt
                best = max(best, acc)
                now = time.perf_counter() - start
                sink.append(MetricsRecord(cfg.run_id, epoch, step, losses.classification, acc,
                                          now, lr, now - eval_time))
        epoch_times.append(time.perf_counter() - epoch_start - epoch_eval)
        if status != "completed":
            break
        lr = decay_lr(lr, hp.decay)
        opt.lr = lr
        if checkpoint_dir and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_params(os.path.join(checkpoint_dir, f"checkpoint-epoch{epoch:03d}.npz"),
                        params.tensors, params.meta())
    wall = time.perf_counter() - start
    final = evaluate(params, data.test_images, data.test_labels) if status == "completed" else float("nan")
    return TrainResult(params, list(sink.records), status, epoch if hp.epochs else 0, final, best,
                       wall, wall - eval_time, epoch_times, message)


def with_overrides(cfg: RunConfig, **hyper) -> RunConfig:
    return replace(cfg, hyper=replace(cfg.hyper, **hyper))
