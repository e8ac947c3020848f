"""The two training objectives for the infinite mixture.

Per example n and weight draws s = 1..S with log-likelihoods l[n, s]:

  mixture-likelihood ("ml"):  loss_n = logmeanexp_s l[n, s]
  expected-log       ("vi"):  loss_n = mean_s l[n, s]

Both are regularized by a KL term to the weight prior, weighted by
``kl_weight`` and scaled by 1/N so a mini-batch gives an unbiased estimate
of the full-dataset objective divided by N.  By Jensen, ml >= vi always,
with equality at S = 1; the backward pass differs only in the per-(n, s)
mixture weights (softmax of l over s for ml, uniform 1/S for vi).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .data import BatchIterator, Dataset
from .network import StochasticMlp, backward
from .posterior import PriorSpec, kl_backward, kl_to_prior, sample_backward
from .tensor import AdamState, Array, Rng, adam_step


class ObjectiveKind(str, enum.Enum):
    ML = "ml"   # log of the mixture likelihood (log-mean-exp over draws)
    VI = "vi"   # expected log-likelihood (mean over draws)


# Spawn tag separating the training-time weight-draw stream from the batch
# shuffling stream (which uses _SHUFFLE_STREAM in data.py).
_WEIGHT_SAMPLE_STREAM = 2


@dataclass
class TrainConfig:
    objective: ObjectiveKind = ObjectiveKind.ML
    kl_weight: float = 1.0
    prior: PriorSpec = field(default_factory=PriorSpec)
    n_train_samples: int = 5
    batch_size: int = 200
    learning_rate: float = 1e-3
    iterations: int = 30_000
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.n_train_samples < 1:
            raise ValueError(f"n_train_samples must be >= 1, got {self.n_train_samples}")
        if self.kl_weight < 0:
            raise ValueError(f"kl_weight must be >= 0, got {self.kl_weight}")
        self.objective = ObjectiveKind(self.objective)


def per_example_loglik(net: StochasticMlp, images: Array, labels, n_samples: int,
                       rng: Rng):
    """log p(y_n | x_n, theta_s) for S independent weight draws.

    Returns (ll, traces, sampled) where ll is (B, S); each draw s is one
    mixture component evaluated on the full batch, with its trace and
    sampled weights kept for the backward pass.
    """
    labels = np.asarray(labels)
    b = images.shape[0]
    rows = np.arange(b)
    ll = np.empty((b, n_samples))
    traces, sampled = [], []
    for s in range(n_samples):
        sw = net.sample_weights(rng)
        log_probs, trace = net.forward_sampled(images, sw)
        ll[:, s] = log_probs[rows, labels]
        traces.append(trace)
        sampled.append(sw)
    return ll, traces, sampled


def logmeanexp(a: Array, axis: int = -1) -> Array:
    """log((1/S) sum exp(a)) with max-subtraction stabilization."""
    a_max = np.max(a, axis=axis, keepdims=True)
    out = a_max.squeeze(axis) + np.log(
        np.mean(np.exp(a - a_max), axis=axis))
    return out


def ml_loss(ll: Array):
    """Per-example logmeanexp over draws, and its gradient weights.

    d logmeanexp_s l[n, .] / d l[n, s] = softmax_s(l[n, .]) -- components
    that already explain the example dominate the gradient.
    """
    if not np.all(np.isfinite(ll)):
        raise FloatingPointError("non-finite log-likelihood matrix")
    per_example = logmeanexp(ll, axis=1)
    shifted = ll - ll.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    weights = e / e.sum(axis=1, keepdims=True)
    return per_example, weights


def vi_loss(ll: Array):
    """Per-example mean over draws; uniform 1/S gradient weights."""
    if not np.all(np.isfinite(ll)):
        raise FloatingPointError("non-finite log-likelihood matrix")
    per_example = ll.mean(axis=1)
    weights = np.full_like(ll, 1.0 / ll.shape[1])
    return per_example, weights


_LOSS_BY_KIND = {ObjectiveKind.ML: ml_loss, ObjectiveKind.VI: vi_loss}


def objective_loss(kind: ObjectiveKind, ll: Array):
    return _LOSS_BY_KIND[ObjectiveKind(kind)](ll)


@dataclass
class LossRecord:
    iteration: int
    loss: float
    nll_term: float
    kl_term: float


def loss_history_csv(records) -> str:
    lines = ["iteration,loss,nll_term,kl_term"]
    lines += [f"{r.iteration},{r.loss:.10g},{r.nll_term:.10g},{r.kl_term:.10g}"
              for r in records]
    return "\n".join(lines) + "\n"


class _ParamOptimizer:
    """One ADAM state per (layer, block) so errors can name their block."""

    BLOCKS = ("mean", "row_scale_raw", "col_scale_raw")

    def __init__(self, net: StochasticMlp, cfg: TrainConfig):
        self.states = {}
        for l, layer in enumerate(net.layers):
            for block in self.BLOCKS:
                arr = getattr(layer, block)
                self.states[(l, block)] = AdamState.for_shape(
                    arr.shape, learning_rate=cfg.learning_rate,
                    beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)

    def step(self, net: StochasticMlp, grads):
        for l, layer in enumerate(net.layers):
            for block, grad in zip(self.BLOCKS, grads[l]):
                new = adam_step(self.states[(l, block)], getattr(layer, block),
                                grad, name=f"layer{l}.{block}")
                setattr(layer, block, new)


def objective_gradients(net: StochasticMlp, images: Array, labels,
                        cfg: TrainConfig, n_total: int, rng: Rng,
                        traces_and_samples=None):
    """Loss terms and parameter gradients for one batch.

    Batch loss = -(1/B) sum_n loss_n + kl_weight * KL_total / n_total.
    Returns (nll_term, kl_term, grads) with grads[l] = (gM, ga, gb).
    """
    labels = np.asarray(labels)
    b = images.shape[0]
    if traces_and_samples is None:
        ll, traces, sampled = per_example_loglik(
            net, images, labels, cfg.n_train_samples, rng)
    else:
        ll, traces, sampled = traces_and_samples
    per_example, weights = objective_loss(cfg.objective, ll)
    nll_term = -float(per_example.mean())
    kl_total = sum(kl_to_prior(layer, cfg.prior) for layer in net.layers)
    kl_scale = cfg.kl_weight / n_total
    kl_term = kl_scale * kl_total

    grads = [[np.zeros_like(layer.mean),
              np.zeros_like(layer.row_scale_raw),
              np.zeros_like(layer.col_scale_raw)] for layer in net.layers]
    rows = np.arange(b)
    n_classes = net.layers[-1].n_cols
    for s, (trace, sw) in enumerate(zip(traces, sampled)):
        grad_log_probs = np.zeros((b, n_classes))
        grad_log_probs[rows, labels] = -weights[:, s] / b
        grad_w_layers, _ = backward(trace, grad_log_probs)
        for l, layer in enumerate(net.layers):
            gm, ga, gb = sample_backward(layer, sw[l], grad_w_layers[l])
            grads[l][0] += gm
            grads[l][1] += ga
            grads[l][2] += gb
    if cfg.kl_weight != 0.0:
        for l, layer in enumerate(net.layers):
            gm, ga, gb = kl_backward(layer, cfg.prior)
            grads[l][0] += kl_scale * gm
            grads[l][1] += kl_scale * ga
            grads[l][2] += kl_scale * gb
    return nll_term, kl_term, grads


def train(net: StochasticMlp, data: Dataset, cfg: TrainConfig,
          record_every: int = 1, progress=None):
    """Minibatch-ADAM training loop; mutates ``net`` and returns loss records.

    Deterministic per (net initialization, cfg.seed): batch order and weight
    draws come from streams derived from cfg.seed.  Aborts on a non-finite
    loss, naming the iteration.
    """
    batches = BatchIterator(data, cfg.batch_size, seed=cfg.seed)
    sample_rng = Rng(cfg.seed).derive(_WEIGHT_SAMPLE_STREAM)
    optimizer = _ParamOptimizer(net, cfg)
    records = []
    for it in range(cfg.iterations):
        images, labels = batches.next_batch()
        nll_term, kl_term, grads = objective_gradients(
            net, images, labels, cfg, n_total=data.n, rng=sample_rng)
        loss = nll_term + kl_term
        if not np.isfinite(loss):
            raise RuntimeError(f"training diverged (non-finite loss) at iteration {it}")
        optimizer.step(net, grads)
        if record_every and (it % record_every == 0 or it == cfg.iterations - 1):
            records.append(LossRecord(it, loss, nll_term, kl_term))
        if progress is not None:
            progress(it, loss)
    return records
