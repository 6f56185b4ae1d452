"""Recurrent attention model: sensor -> glimpse net -> core -> (classifier, locator, baseline).

All forward passes are batched over episodes; :func:`forward_episode` is the
single-image view used for debugging and tests.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .glimpse import GlimpseConfig, Location, retina_batch
from .nncore import (
    DimensionError,
    Param,
    affine_backward,
    affine_forward,
    linear,
    relu_backward,
    relu_forward,
    rnn_cell,
    rnn_params,
    tanh_backward,
    tanh_forward,
)

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ModelDims:
    image_hidden: int = 128
    loc_hidden: int = 128
    g_dim: int = 256
    hidden: int = 256
    num_classes: int = 10


@dataclass
class RamParams:
    glimpse: GlimpseConfig
    dims: ModelDims
    tensors: Dict[str, Param]

    def __getitem__(self, name) -> Param:
        return self.tensors[name]

    def values(self):
        return self.tensors.values()

    def zero_grad(self):
        for p in self.tensors.values():
            p.zero_grad()

    def count(self) -> int:
        return sum(p.value.size for p in self.tensors.values())

    def meta(self) -> dict:
        return {"glimpse": asdict(self.glimpse), "dims": asdict(self.dims)}

    @classmethod
    def from_meta(cls, meta: dict, tensors: Dict[str, Param]) -> "RamParams":
        params = cls(GlimpseConfig(**meta["glimpse"]), ModelDims(**meta["dims"]), tensors)
        expected = init_params(params.glimpse, params.dims, np.random.default_rng(0))
        for name, p in expected.tensors.items():
            if name not in tensors or tensors[name].shape != p.shape:
                raise DimensionError(f"checkpoint tensor {name} missing or mis-shaped")
        return params


def init_params(cfg: GlimpseConfig, dims: ModelDims, rng: np.random.Generator) -> RamParams:
    t: Dict[str, Param] = {}
    t.update(linear("glimpse.image", cfg.sensor_size(), dims.image_hidden, rng))
    t.update(linear("glimpse.loc", 2, dims.loc_hidden, rng))
    t.update(linear("glimpse.combine", dims.image_hidden + dims.loc_hidden, dims.g_dim, rng))
    t.update(rnn_params(dims.g_dim, dims.hidden, rng))
    t.update(linear("action", dims.hidden, dims.num_classes, rng))
    t.update(linear("location", dims.hidden, 2, rng))
    t.update(linear("baseline", dims.hidden, 1, rng))
    return RamParams(cfg, dims, t)


def glimpse_network(obs_flat, loc, params: RamParams):
    """``g = relu(W3 [relu(W1 obs) ; relu(W2 loc)] + b3)``; returns ``(g, cache)``."""
    z1, c1 = affine_forward(obs_flat, params["glimpse.image.W"], params["glimpse.image.b"])
    a1, r1 = relu_forward(z1)
    z2, c2 = affine_forward(loc, params["glimpse.loc.W"], params["glimpse.loc.b"])
    a2, r2 = relu_forward(z2)
    z3, c3 = affine_forward(np.concatenate([a1, a2], axis=-1),
                            params["glimpse.combine.W"], params["glimpse.combine.b"])
    g, r3 = relu_forward(z3)
    return g, (c1, r1, c2, r2, c3, r3, a1.shape[-1])


def glimpse_network_backward(dg, cache) -> None:
    c1, r1, c2, r2, c3, r3, split = cache
    da = affine_backward(relu_backward(dg, r3), c3)
    affine_backward(relu_backward(da[..., :split], r1), c1)
    affine_backward(relu_backward(da[..., split:], r2), c2)


def gaussian_logprob(sample, mean, std: float):
    """Sum over the last axis of ``log N(sample; mean, std^2)``."""
    z = (sample - mean) / std
    return np.sum(-0.5 * z * z - np.log(std) - 0.5 * LOG_2PI, axis=-1)


def gaussian_score(sample, mean, std: float):
    """Gradient of :func:`gaussian_logprob` with respect to ``mean``."""
    return (sample - mean) / (std * std)


def location_policy(h, std: float, rng: np.random.Generator, params: RamParams):
    """Gaussian fixation policy around ``tanh(Wl h + bl)``.

    Returns ``(mean, sampled, logprob)``.  ``sampled`` is clamped to the
    canvas; ``logprob`` is evaluated at the pre-clamp draw.  For a single
    hidden vector, ``mean`` and ``sampled`` are :class:`Location` objects.
    """
    if not std > 0:
        raise ValueError(f"location std must be > 0, got {std}")
    mean, raw, _ = _policy(np.atleast_2d(h), std, rng, params)
    logprob = gaussian_logprob(raw, mean, std)
    sampled = np.clip(raw, -1.0, 1.0)
    if np.ndim(h) == 1:
        return Location(*mean[0]), Location(*sampled[0]), float(logprob[0])
    return mean, sampled, logprob


def _policy(h, std, rng, params):
    pre, cache = affine_forward(h, params["location.W"], params["location.b"])
    mean, tcache = tanh_forward(pre)
    if std > 0:
        raw = mean + std * rng.standard_normal(mean.shape)
    else:
        raw = mean.copy()
    return mean, raw, (cache, tcache)


@dataclass
class Rollout:
    """A batch of episodes with everything the backward pass needs.

    Per-step arrays are indexed by sensed glimpse ``t = 0..G-1``.  ``means[t]``
    and ``logprobs[t]`` describe how location ``t`` was chosen; the first
    location is a uniform draw, so ``means[0] == locs[0]`` and
    ``logprobs[0] == 0``.  ``baselines[t]`` is predicted from the hidden state
    after sensing glimpse ``t``, the same state that chose location ``t+1``.
    """

    labels: np.ndarray
    std: float
    locs: np.ndarray        # (G, N, 2) sensed, clamped
    raw: np.ndarray         # (G, N, 2) pre-clamp samples
    means: np.ndarray       # (G, N, 2)
    logprobs: np.ndarray    # (G, N)
    baselines: np.ndarray   # (G, N)
    logits: np.ndarray      # (N, C)
    hidden: List[np.ndarray]
    caches: list = field(repr=False, default_factory=list)

    @property
    def predictions(self) -> np.ndarray:
        return np.argmax(self.logits, axis=-1)

    @property
    def reward(self) -> np.ndarray:
        return (self.predictions == self.labels).astype(np.float64)


@dataclass
class EpisodeTrace:
    locations: List[Location]
    means: List[Location]
    logprobs: List[float]
    baselines: List[float]
    logits: np.ndarray
    reward: float

    def to_json(self) -> dict:
        return {
            "locations": [[l.x, l.y] for l in self.locations],
            "means": [[l.x, l.y] for l in self.means],
            "logprobs": list(self.logprobs),
            "baselines": list(self.baselines),
            "logits": self.logits.tolist(),
            "reward": self.reward,
        }


def initial_locations(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=(n, 2))


def forward(images: np.ndarray, labels, params: RamParams, std: float,
            rng: np.random.Generator, init_locs: Optional[np.ndarray] = None,
            fixed_samples: Optional[np.ndarray] = None, keep_cache: bool = True) -> Rollout:
    """Run ``G`` glimpses over a batch of images.

    ``std == 0`` fixates deterministically at the policy mean.  ``fixed_samples``
    (``(G, N, 2)`` pre-clamp locations) replays a previous rollout's fixations
    instead of sampling, which is what gradient checks need.
    """
    cfg = params.glimpse
    images = np.asarray(images, dtype=np.float64)
    n = images.shape[0]
    labels = np.asarray(labels, dtype=np.int64)
    G = cfg.num_glimpses
    if fixed_samples is not None:
        loc0 = fixed_samples[0]
    elif init_locs is not None:
        loc0 = np.asarray(init_locs, dtype=np.float64)
    else:
        loc0 = initial_locations(n, rng)
    raw = np.zeros((G, n, 2))
    means = np.zeros((G, n, 2))
    locs = np.zeros((G, n, 2))
    logprobs = np.zeros((G, n))
    baselines = np.zeros((G, n))
    raw[0] = means[0] = loc0
    locs[0] = np.clip(loc0, -1.0, 1.0)
    h = np.zeros((n, params.dims.hidden))
    hidden, caches = [], []
    for t in range(G):
        obs = retina_batch(images, locs[t], cfg)
        g, gcache = glimpse_network(obs, locs[t], params)
        h, hcache = rnn_cell(g, h, params.tensors)
        b, bcache = affine_forward(h, params["baseline.W"], params["baseline.b"])
        baselines[t] = b[:, 0]
        pcache = None
        if t + 1 < G:
            if fixed_samples is not None:
                mean, pcache = _policy_mean(h, params)
                sample = fixed_samples[t + 1]
            else:
                mean, sample, pcache = _policy(h, std, rng, params)
            means[t + 1], raw[t + 1] = mean, sample
            locs[t + 1] = np.clip(sample, -1.0, 1.0)
            if std > 0:
                logprobs[t + 1] = gaussian_logprob(sample, mean, std)
        hidden.append(h)
        if keep_cache:
            caches.append((gcache, hcache, bcache, pcache))
    logits, acache = affine_forward(h, params["action.W"], params["action.b"])
    if keep_cache:
        caches.append(acache)
    return Rollout(labels, std, locs, raw, means, logprobs, baselines, logits, hidden, caches)


def _policy_mean(h, params):
    pre, cache = affine_forward(h, params["location.W"], params["location.b"])
    mean, tcache = tanh_forward(pre)
    return mean, (cache, tcache)


def location_head_backward(dmean, pcache):
    cache, tcache = pcache
    return affine_backward(tanh_backward(dmean, tcache), cache)


def forward_episode(sample, params: RamParams, std: float, rng: np.random.Generator) -> EpisodeTrace:
    """One image through the full model; returns its :class:`EpisodeTrace`."""
    ro = forward(sample.pixels[None], [sample.label], params, std, rng, keep_cache=False)
    return trace_of(ro, 0)


def trace_of(ro: Rollout, i: int) -> EpisodeTrace:
    return EpisodeTrace(
        locations=[Location(*xy) for xy in ro.locs[:, i]],
        means=[Location(*xy) for xy in ro.means[:, i]],
        logprobs=[float(v) for v in ro.logprobs[:, i]],
        baselines=[float(v) for v in ro.baselines[:, i]],
        logits=ro.logits[i].copy(),
        reward=float(ro.reward[i]),
    )

