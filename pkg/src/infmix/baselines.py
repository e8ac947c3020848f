"""Finite-mixture and point-estimate baselines sharing the MLP substrate:
a deterministic network with weight decay, MC dropout, and a deep ensemble.

All three expose the same ``predict`` / ``loss_input_grad`` surface as the
stochastic model, so evaluation and attack code is model-agnostic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import BatchIterator, Dataset
from .network import (PredictiveSummary, backward, forward,
                      mixture_loss_input_grad, mixture_predict)
from .tensor import AdamState, Array, Rng, adam_step

DEFAULT_WEIGHT_DECAY = 1.0 / 60_000.0

_MASK_STREAM = 3
_MEMBER_SEED_STRIDE = 100_003  # keeps member seeds disjoint from trial seeds


@dataclass
class FitConfig:
    """Optimization settings shared by all point-estimate baselines."""

    batch_size: int = 200
    learning_rate: float = 1e-3
    iterations: int = 30_000
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


def glorot_weights(topology, rng: Rng):
    """Glorot-uniform weight matrices with zeroed bias rows, one per layer."""
    weights = []
    for l, (n_in, n_out) in enumerate(zip(topology[:-1], topology[1:])):
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = np.zeros((n_in + 1, n_out))
        w[:n_in] = rng.derive(l).uniform(-limit, limit, (n_in, n_out))
        weights.append(w)
    return weights


@dataclass
class DeterministicMlp:
    """Point-estimate MLP; prediction is a pure function of the input."""

    weights: list

    def log_probs(self, x: Array) -> Array:
        lp, _ = forward(self.weights, x)
        return lp

    def predict(self, x: Array, n_samples: int = 1, rng: Rng | None = None
                ) -> PredictiveSummary:
        # Single component: class variance is identically zero.
        return mixture_predict([(self.weights, None)], 1, x)

    def loss_input_grad(self, x: Array, labels, n_samples: int = 1,
                        rng: Rng | None = None):
        return mixture_loss_input_grad([(self.weights, None)], 1, x, labels)


@dataclass
class DropoutMlp:
    """Deterministic weights plus Bernoulli masks on hidden activations.

    Inverted dropout: kept units are scaled by 1/(1-p) whenever masks are
    sampled, so the no-mask forward pass needs no rescaling.  Evaluation
    draws one mask per component, shared across the batch, mirroring how
    weight draws are shared in the stochastic model.
    """

    weights: list
    p_drop: float

    def __post_init__(self):
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError(f"p_drop must be in [0, 1), got {self.p_drop}")

    def _hidden_sizes(self):
        return [w.shape[1] for w in self.weights[:-1]]

    def sample_masks(self, rng: Rng, per_example: int | None = None):
        """One mask per hidden layer; shape (1, n) shared or (B, n) per example."""
        keep = 1.0 - self.p_drop
        rows = 1 if per_example is None else per_example
        return [
            (rng.uniform(0.0, 1.0, (rows, n)) < keep).astype(np.float64) / keep
            for n in self._hidden_sizes()
        ]

    def _components(self, n_samples: int, rng: Rng):
        for _ in range(n_samples):
            masks = None if self.p_drop == 0.0 else self.sample_masks(rng)
            yield self.weights, masks

    def predict(self, x: Array, n_samples: int, rng: Rng) -> PredictiveSummary:
        if n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {n_samples}")
        return mixture_predict(self._components(n_samples, rng), n_samples, x)

    def loss_input_grad(self, x: Array, labels, n_samples: int, rng: Rng):
        return mixture_loss_input_grad(
            self._components(n_samples, rng), n_samples, x, labels)


@dataclass
class DeepEnsemble:
    """Uniform mixture of independently trained point-estimate networks."""

    members: list

    @property
    def k(self) -> int:
        return len(self.members)

    def _components(self):
        for member in self.members:
            yield member.weights, None

    def predict(self, x: Array, n_samples: int = 0, rng: Rng | None = None
                ) -> PredictiveSummary:
        # Finite mixture: always all k members, uniform weights; n_samples
        # is accepted (and ignored) for interface parity.
        return mixture_predict(self._components(), self.k, x)

    def loss_input_grad(self, x: Array, labels, n_samples: int = 0,
                        rng: Rng | None = None):
        return mixture_loss_input_grad(self._components(), self.k, x, labels)


def _decay_gradient(weights, weight_decay: float):
    """Gradient of weight_decay * 0.5 * sum ||W||^2 with bias rows excluded."""
    grads = []
    for w in weights:
        g = weight_decay * w
        g[-1, :] = 0.0
        grads.append(g)
    return grads


def _train_point_estimate(data: Dataset, weight_decay: float, cfg: FitConfig,
                          p_drop: float = 0.0, topology=(784, 128, 128, 10),
                          progress=None):
    """Cross-entropy + L2 training; optional per-example dropout masks."""
    if weight_decay < 0:
        raise ValueError(f"weight_decay must be >= 0, got {weight_decay}")
    weights = glorot_weights(topology, Rng(cfg.seed).derive(0))
    mask_rng = Rng(cfg.seed).derive(_MASK_STREAM)
    batches = BatchIterator(data, cfg.batch_size, seed=cfg.seed)
    states = [AdamState.for_shape(w.shape, learning_rate=cfg.learning_rate,
                                  beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
                                  eps=cfg.adam_eps)
              for w in weights]
    keep = 1.0 - p_drop
    hidden_sizes = [w.shape[1] for w in weights[:-1]]
    for it in range(cfg.iterations):
        images, labels = batches.next_batch()
        b = images.shape[0]
        masks = None
        if p_drop > 0.0:
            masks = [
                (mask_rng.uniform(0.0, 1.0, (b, n)) < keep).astype(np.float64) / keep
                for n in hidden_sizes
            ]
        log_probs, trace = forward(weights, images, hidden_masks=masks)
        nll = -float(log_probs[np.arange(b), labels].mean())
        if not np.isfinite(nll):
            raise RuntimeError(f"training diverged (non-finite loss) at iteration {it}")
        grad_log_probs = np.zeros_like(log_probs)
        grad_log_probs[np.arange(b), labels] = -1.0 / b
        grad_w, _ = backward(trace, grad_log_probs)
        for g, dg in zip(grad_w, _decay_gradient(weights, weight_decay)):
            g += dg
        for l in range(len(weights)):
            weights[l] = adam_step(states[l], weights[l], grad_w[l],
                                   name=f"layer{l}.weights")
        if progress is not None:
            progress(it, nll)
    return weights


def train_deterministic(data: Dataset, weight_decay: float = DEFAULT_WEIGHT_DECAY,
                        cfg: FitConfig | None = None, topology=(784, 128, 128, 10),
                        progress=None) -> DeterministicMlp:
    cfg = cfg or FitConfig()
    weights = _train_point_estimate(data, weight_decay, cfg, p_drop=0.0,
                                    topology=topology, progress=progress)
    return DeterministicMlp(weights=weights)


def train_dropout(data: Dataset, p_drop: float = 0.5,
                  weight_decay: float = DEFAULT_WEIGHT_DECAY,
                  cfg: FitConfig | None = None, topology=(784, 128, 128, 10),
                  progress=None) -> DropoutMlp:
    cfg = cfg or FitConfig()
    weights = _train_point_estimate(data, weight_decay, cfg, p_drop=p_drop,
                                    topology=topology, progress=progress)
    return DropoutMlp(weights=weights, p_drop=p_drop)


def train_ensemble(data: Dataset, k: int = 5,
                   weight_decay: float = DEFAULT_WEIGHT_DECAY,
                   cfg: FitConfig | None = None, topology=(784, 128, 128, 10),
                   progress=None) -> DeepEnsemble:
    """k members trained independently from distinct derived seeds."""
    cfg = cfg or FitConfig()
    if k < 1:
        raise ValueError(f"ensemble size must be >= 1, got {k}")
    members = []
    for i in range(k):
        member_cfg = FitConfig(batch_size=cfg.batch_size,
                               learning_rate=cfg.learning_rate,
                               iterations=cfg.iterations,
                               seed=cfg.seed + i * _MEMBER_SEED_STRIDE,
                               adam_beta1=cfg.adam_beta1,
                               adam_beta2=cfg.adam_beta2,
                               adam_eps=cfg.adam_eps)
        members.append(train_deterministic(data, weight_decay, member_cfg,
                                           topology=topology, progress=progress))
    return DeepEnsemble(members=members)
