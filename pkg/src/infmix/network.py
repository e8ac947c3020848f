"""Component MLP: forward/backward through sampled weights, and the
multi-sample predictive summary (mean probabilities, per-class variance,
entropy).

The forward pass is weight-list based, so the same code serves the
stochastic model (weights drawn per call), the deterministic baseline
(fixed weights), and dropout (optional per-hidden-layer masks).  Biases are
the last row of each weight matrix; inputs are augmented with a constant 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .posterior import MvnLayerPosterior, sample
from .tensor import Array, Rng

DEFAULT_TOPOLOGY = (784, 128, 128, 10)
N_CLASSES = 10
MAX_ENTROPY = float(np.log(N_CLASSES))


def augment(x: Array) -> Array:
    """Append a constant-1 column so the bias row of W acts as the bias."""
    return np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)


@dataclass
class ForwardTrace:
    """Everything needed to replay the forward pass exactly in reverse."""

    inputs: Array                   # (B, n_in) raw batch
    augmented: list                 # per-layer augmented layer input
    pre_activations: list           # per-layer pre-activation z
    weights: list                   # per-layer weight matrix used
    hidden_masks: list | None       # dropout masks on hidden activations, or None
    log_probs: Array                # (B, K) log-softmax output


def log_softmax(z: Array) -> Array:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def forward(weights: list, x: Array, hidden_masks=None):
    """Run the MLP on a batch: ReLU hidden layers, log-softmax output.

    ``weights[l]`` has shape (n_in_l + 1, n_out_l).  ``hidden_masks``, if
    given, multiplies each hidden activation (inverted-dropout convention).
    Returns (log_probs, ForwardTrace).
    """
    if x.ndim != 2 or x.shape[1] != weights[0].shape[0] - 1:
        raise ValueError(
            f"input shape {x.shape} incompatible with first layer "
            f"{weights[0].shape}")
    n_layers = len(weights)
    augmented, pre_activations = [], []
    h = x
    for l, w in enumerate(weights):
        h_aug = augment(h)
        if h_aug.shape[1] != w.shape[0]:
            raise ValueError(
                f"layer {l}: activation width {h_aug.shape[1]} != weight rows "
                f"{w.shape[0]}")
        z = h_aug @ w
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"non-finite activation in layer {l}")
        augmented.append(h_aug)
        pre_activations.append(z)
        if l < n_layers - 1:
            h = np.maximum(z, 0.0)
            if hidden_masks is not None:
                h = h * hidden_masks[l]
    log_probs = log_softmax(pre_activations[-1])
    trace = ForwardTrace(inputs=x, augmented=augmented,
                         pre_activations=pre_activations,
                         weights=list(weights), hidden_masks=hidden_masks,
                         log_probs=log_probs)
    return log_probs, trace


def backward(trace: ForwardTrace, grad_log_probs: Array):
    """Exact reverse pass of ``forward``.

    Returns (per-layer weight gradients, gradient wrt the raw input batch).
    The input gradient is what L-inf attacks consume.
    """
    if grad_log_probs.shape != trace.log_probs.shape:
        raise ValueError(
            f"upstream grad shape {grad_log_probs.shape} does not match trace "
            f"output {trace.log_probs.shape}")
    probs = np.exp(trace.log_probs)
    # d/dz of sum(g * log_softmax(z)) = g - softmax(z) * sum(g)
    grad_z = grad_log_probs - probs * grad_log_probs.sum(axis=1, keepdims=True)
    grad_weights = [None] * len(trace.weights)
    for l in range(len(trace.weights) - 1, -1, -1):
        grad_weights[l] = trace.augmented[l].T @ grad_z
        grad_aug = grad_z @ trace.weights[l].T
        grad_h = grad_aug[:, :-1]
        if l == 0:
            return grad_weights, grad_h
        if trace.hidden_masks is not None:
            grad_h = grad_h * trace.hidden_masks[l - 1]
        grad_z = grad_h * (trace.pre_activations[l - 1] > 0.0)
    raise AssertionError("unreachable")


@dataclass
class PredictiveSummary:
    """Per-example uncertainty summary over S weight draws."""

    mean_probs: Array       # (B, K) averaged class probabilities
    class_variance: Array   # (B, K) per-class variance across draws
    max_variance: Array     # (B,) max over classes
    entropy: Array          # (B,) entropy of mean_probs, nats
    predicted_class: np.ndarray  # (B,) argmax of mean_probs
    n_samples: int

    @property
    def n(self) -> int:
        return self.mean_probs.shape[0]

    def correct_mask(self, labels) -> np.ndarray:
        return self.predicted_class == np.asarray(labels)

    def accuracy(self, labels) -> float:
        return float(np.mean(self.correct_mask(labels)))


def entropy_of(probs: Array) -> Array:
    """Shannon entropy in nats per row, with 0 log 0 := 0."""
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return -terms.sum(axis=1)


def summarize_probs(prob_draws: Array) -> PredictiveSummary:
    """Predictive summary from stacked component probabilities (S, B, K).

    class variance = (1/S) sum_s p_s^2 - p_bar^2, clamped at 0 against
    floating-point cancellation; entropy is computed on p_bar.
    """
    prob_draws = np.asarray(prob_draws, dtype=np.float64)
    if prob_draws.ndim != 3:
        raise ValueError(f"expected (S, B, K) probabilities, got {prob_draws.shape}")
    return summarize_prob_stream(iter(prob_draws), prob_draws.shape[0])


def summarize_prob_stream(draws, n_samples: int) -> PredictiveSummary:
    """Same summary as ``summarize_probs`` from an iterator of (B, K) draws,
    accumulating first and second moments so S draws never sit in memory."""
    prob_sum = None
    sq_sum = None
    count = 0
    for p in draws:
        p = np.asarray(p, dtype=np.float64)
        if prob_sum is None:
            prob_sum = np.zeros_like(p)
            sq_sum = np.zeros_like(p)
        prob_sum += p
        sq_sum += p * p
        count += 1
    if count != n_samples or count == 0:
        raise ValueError(f"expected {n_samples} draws, got {count}")
    mean_probs = prob_sum / count
    mean_sq = sq_sum / count
    class_variance = np.maximum(mean_sq - mean_probs * mean_probs, 0.0)
    return PredictiveSummary(
        mean_probs=mean_probs,
        class_variance=class_variance,
        max_variance=class_variance.max(axis=1),
        entropy=entropy_of(mean_probs),
        predicted_class=mean_probs.argmax(axis=1),
        n_samples=count,
    )


def mixture_predict(components, n_components: int, x: Array) -> PredictiveSummary:
    """Predictive summary of a mixture given an iterable of components.

    Each component is a (weights, hidden_masks) pair evaluated on the whole
    batch; this is the shared evaluation path for weight draws, dropout mask
    draws, and ensemble members alike.
    """

    def draws():
        for weights, masks in components:
            log_probs, _ = forward(weights, x, hidden_masks=masks)
            yield np.exp(log_probs)

    return summarize_prob_stream(draws(), n_components)


def mixture_loss_input_grad(components, n_components: int, x: Array, labels):
    """Gradient wrt x of -log p_bar(y|x) where p_bar averages component
    probabilities (the mixture output itself, not the average of logs).

    The per-example 1/p_bar factor is applied after summing per-component
    gradients of p_s, so no trace outlives its component.  Returns
    (grad_x, mean label probability).
    """
    labels = np.asarray(labels)
    b = x.shape[0]
    rows = np.arange(b)
    label_prob_sum = np.zeros(b)
    grad_accum = np.zeros_like(x)
    count = 0
    for weights, masks in components:
        log_probs, trace = forward(weights, x, hidden_masks=masks)
        p_label = np.exp(log_probs[rows, labels])
        label_prob_sum += p_label
        grad_log_probs = np.zeros_like(log_probs)
        grad_log_probs[rows, labels] = p_label  # d p / d log p = p
        _, gx = backward(trace, grad_log_probs)
        grad_accum += gx
        count += 1
    if count != n_components:
        raise ValueError(f"expected {n_components} components, got {count}")
    mean_label_prob = np.maximum(label_prob_sum / n_components, 1e-300)
    grad_x = -grad_accum / (n_components * mean_label_prob)[:, None]
    return grad_x, mean_label_prob


@dataclass
class StochasticMlp:
    """Stack of matrix-variate normal layers with ReLU hidden activations."""

    layers: list

    @classmethod
    def create(cls, rng: Rng, topology=DEFAULT_TOPOLOGY,
               init_weight_std: float = 0.05) -> "StochasticMlp":
        layers = [
            MvnLayerPosterior.initialize(n_in, n_out, rng.derive(l),
                                         init_weight_std=init_weight_std)
            for l, (n_in, n_out) in enumerate(zip(topology[:-1], topology[1:]))
        ]
        return cls(layers=layers)

    @property
    def topology(self):
        dims = [self.layers[0].n_rows - 1]
        dims += [layer.n_cols for layer in self.layers]
        return tuple(dims)

    def copy(self) -> "StochasticMlp":
        return StochasticMlp([layer.copy() for layer in self.layers])

    def sample_weights(self, rng: Rng) -> list:
        """One draw per layer; each draw is shared by the whole batch."""
        return [sample(layer, rng) for layer in self.layers]

    def forward_sampled(self, x: Array, sampled: list):
        return forward([sw.weights for sw in sampled], x)

    def _components(self, n_samples: int, rng: Rng):
        for _ in range(n_samples):
            yield [sample(layer, rng).weights for layer in self.layers], None

    def predict(self, x: Array, n_samples: int, rng: Rng) -> PredictiveSummary:
        """Mixture prediction from ``n_samples`` fresh weight draws."""
        if n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {n_samples}")
        return mixture_predict(self._components(n_samples, rng), n_samples, x)

    def loss_input_grad(self, x: Array, labels, n_samples: int, rng: Rng):
        """Gradient wrt x of -log p_bar(y|x) over ``n_samples`` fresh draws
        (the attacked quantity: log of the mixture probability)."""
        return mixture_loss_input_grad(
            self._components(n_samples, rng), n_samples, x, labels)
