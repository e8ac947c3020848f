"""L-inf projected gradient descent against any model exposing
``loss_input_grad`` and ``predict``.

Each step ascends the sign of the input gradient of -log p_bar(y|x) and
projects back onto the eps-ball around the clean input intersected with the
[0,1] pixel box.  For stochastic models the gradient is estimated from
``n_grad_samples`` fresh weight draws per step, so a one-sample attack sees
a different mixture component at every iteration.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import numpy as np

from .data import Dataset, IDX_FLOAT64, save_idx
from .network import PredictiveSummary
from .tensor import Array, Rng

_INIT_STREAM = 4
_GRAD_STREAM = 5
_EVAL_STREAM = 6

DEFAULT_EPS_GRID = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4)


@dataclass
class AttackConfig:
    epsilon: float = 0.25
    n_iter: int = 40
    step: float | None = None          # defaults to 2.5 * epsilon / n_iter
    n_grad_samples: int = 1
    random_init: bool = True
    seed: int = 0
    n_eval_samples: int = 100

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.n_iter < 1:
            raise ValueError(f"n_iter must be >= 1, got {self.n_iter}")

    def resolved_step(self) -> float:
        if self.step is not None:
            if self.step <= 0:
                raise ValueError(f"step must be positive, got {self.step}")
            return self.step
        return 2.5 * self.epsilon / self.n_iter


@dataclass
class AttackResult:
    adversarial: Array
    epsilon: float
    true_labels: np.ndarray
    pred_before: np.ndarray
    pred_after: np.ndarray
    success: np.ndarray          # prediction != true label after the attack
    robust_accuracy: float
    summary_after: PredictiveSummary


def project(x: Array, x_clean: Array, epsilon: float) -> Array:
    """Exact projection onto the eps-ball around x_clean and the [0,1] box."""
    return np.clip(np.clip(x, x_clean - epsilon, x_clean + epsilon), 0.0, 1.0)


def pgd_attack(model, images: Array, labels, cfg: AttackConfig,
               step_callback=None) -> AttackResult:
    """Untargeted L-inf PGD; evaluation of the result always uses
    ``cfg.n_eval_samples`` draws.

    ``step_callback(iteration, x_adv)``, when given, observes every iterate
    (used by the projection-invariant tests).
    """
    labels = np.asarray(labels)
    x_clean = np.asarray(images, dtype=np.float64)
    rng = Rng(cfg.seed)
    step = cfg.resolved_step()

    if cfg.random_init and cfg.epsilon > 0:
        x = x_clean + rng.derive(_INIT_STREAM).uniform(
            -cfg.epsilon, cfg.epsilon, x_clean.shape)
        x = project(x, x_clean, cfg.epsilon)
    else:
        x = x_clean.copy()

    grad_rng = rng.derive(_GRAD_STREAM)
    if cfg.epsilon > 0:
        for it in range(cfg.n_iter):
            grad_x, _ = model.loss_input_grad(
                x, labels, cfg.n_grad_samples, grad_rng)
            x = project(x + step * np.sign(grad_x), x_clean, cfg.epsilon)
            if step_callback is not None:
                step_callback(it, x)

    eval_rng = rng.derive(_EVAL_STREAM)
    pred_before = model.predict(x_clean, cfg.n_eval_samples,
                                eval_rng.derive(0)).predicted_class
    summary_after = model.predict(x, cfg.n_eval_samples, eval_rng.derive(1))
    pred_after = summary_after.predicted_class
    success = pred_after != labels
    return AttackResult(
        adversarial=x,
        epsilon=cfg.epsilon,
        true_labels=labels,
        pred_before=pred_before,
        pred_after=pred_after,
        success=success,
        robust_accuracy=float(np.mean(~success)),
        summary_after=summary_after,
    )


def robustness_curve(model, images: Array, labels, eps_grid=DEFAULT_EPS_GRID,
                     cfg: AttackConfig | None = None):
    """Robust accuracy per perturbation budget; one attack per eps.

    Returns a list of (epsilon, AttackResult), eps_grid ascending.
    """
    base = cfg or AttackConfig()
    eps_grid = list(eps_grid)
    if eps_grid != sorted(eps_grid):
        raise ValueError("eps_grid must be sorted ascending")
    curve = []
    for epsilon in eps_grid:
        point_cfg = AttackConfig(
            epsilon=epsilon, n_iter=base.n_iter, step=base.step,
            n_grad_samples=base.n_grad_samples, random_init=base.random_init,
            seed=base.seed, n_eval_samples=base.n_eval_samples)
        curve.append((epsilon, pgd_attack(model, images, labels, point_cfg)))
    return curve


def attack_csv(result: AttackResult) -> str:
    """Per-example outcome table: index, labels, predictions, success flag."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["example_index", "true_label", "pred_before",
                     "pred_after", "success"])
    for i in range(len(result.true_labels)):
        writer.writerow([i, int(result.true_labels[i]),
                         int(result.pred_before[i]), int(result.pred_after[i]),
                         int(result.success[i])])
    return buf.getvalue()


def write_attack_artifacts(result: AttackResult, out_dir, stem: str) -> dict:
    """Persist adversarial images as float64 IDX (exact pixels) plus the
    per-example CSV; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    images_path = os.path.join(out_dir, f"{stem}-images-idx3-double")
    labels_path = os.path.join(out_dir, f"{stem}-labels-idx1-ubyte")
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    adv = Dataset(images=result.adversarial,
                  labels=np.asarray(result.true_labels), name=stem)
    save_idx(adv, images_path, labels_path, type_code=IDX_FLOAT64)
    tmp = csv_path + ".tmp"
    with open(tmp, "w") as f:
        f.write(attack_csv(result))
    os.replace(tmp, csv_path)
    return {"images": images_path, "labels": labels_path, "csv": csv_path}
