"""Uncertainty scoring: rank-based AUROC (plain and class-balanced),
fixed-bin histograms of the two uncertainty measures, and trial aggregation.

Convention: higher score = more anomalous.  Entropy and predictive variance
both rise on out-of-distribution or adversarial inputs, so AUROC > 0.5
means the score is a useful detector; sub-0.5 values are reported as-is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .network import MAX_ENTROPY
from .tensor import Rng

_BALANCE_STREAM = 7

VARIANCE_BIN_EDGES = np.linspace(0.0, 0.25, 26)
ENTROPY_BIN_EDGES = np.linspace(0.0, MAX_ENTROPY, 26)
_EDGES_BY_METRIC = {"max_variance": VARIANCE_BIN_EDGES,
                    "entropy": ENTROPY_BIN_EDGES}


@dataclass
class ScoredSample:
    """One uncertainty score with its detection label and provenance flags."""

    score: float
    positive: bool                      # anomalous (OOD / adversarial) side
    correctly_classified: bool = False  # clean-side classification outcome
    attack_success: bool = False        # adversarial-side attack outcome


def auroc_scores(pos_scores, neg_scores) -> float:
    """P(random positive outranks random negative), midrank tie handling.

    Computed from the Mann-Whitney U statistic on pooled midranks, which
    equals the all-pairs count (wins + 0.5 * ties) / (n_pos * n_neg).
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUROC needs at least one positive and one negative")
    pooled = np.concatenate([pos, neg])
    if not np.all(np.isfinite(pooled)):
        raise ValueError("AUROC scores must be finite")
    ranks = rankdata(pooled)
    u = ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def auroc(scores) -> float:
    """AUROC over a list of ScoredSample (positives vs negatives)."""
    pos = [s.score for s in scores if s.positive]
    neg = [s.score for s in scores if not s.positive]
    return auroc_scores(pos, neg)


@dataclass
class BalancedAuroc:
    value: float
    n_per_class: int
    n_positives_available: int
    n_negatives_available: int


def auroc_balanced(scores, seed: int = 0) -> BalancedAuroc:
    """AUROC restricted to correct-vs-successful-attack samples with the
    larger class subsampled (seeded, uniform) to the size of the smaller.

    Positives: anomalous samples whose attack succeeded.  Negatives: clean
    samples that were correctly classified.
    """
    pos = np.array([s.score for s in scores if s.positive and s.attack_success])
    neg = np.array([s.score for s in scores
                    if not s.positive and s.correctly_classified])
    if pos.size == 0 or neg.size == 0:
        raise ValueError(
            f"balanced AUROC needs both classes after filtering, got "
            f"{pos.size} successful attacks and {neg.size} correct samples")
    m = min(pos.size, neg.size)
    rng = Rng(seed).derive(_BALANCE_STREAM)
    if pos.size > m:
        pos = pos[rng.choice(pos.size, m, replace=False)]
    if neg.size > m:
        neg = neg[rng.choice(neg.size, m, replace=False)]
    return BalancedAuroc(value=auroc_scores(pos, neg), n_per_class=m,
                         n_positives_available=int(len([s for s in scores
                                                        if s.positive and s.attack_success])),
                         n_negatives_available=int(len([s for s in scores
                                                        if not s.positive and s.correctly_classified])))


def uncertainty_histograms(groups: dict) -> dict:
    """Fixed-bin histograms of max-class variance and entropy per group.

    ``groups`` maps a group name ("correct", "wrong", "test", "ood",
    "adversarial", ...) to a dict with arrays under "max_variance" and
    "entropy".  Bin edges are fixed per metric so histograms from different
    trials aggregate bin-wise; total counts equal the input sizes.
    """
    out = {}
    for metric, edges in _EDGES_BY_METRIC.items():
        per_group = {}
        for name, values in groups.items():
            v = np.asarray(values[metric], dtype=np.float64)
            counts, _ = np.histogram(np.clip(v, edges[0], edges[-1]), bins=edges)
            per_group[name] = counts
        out[metric] = {"bin_edges": edges.copy(), "counts": per_group}
    return out


def summary_groups(summary, labels) -> dict:
    """Split one PredictiveSummary into correct/wrong score groups."""
    correct = summary.correct_mask(labels)
    return {
        "correct": {"max_variance": summary.max_variance[correct],
                    "entropy": summary.entropy[correct]},
        "wrong": {"max_variance": summary.max_variance[~correct],
                  "entropy": summary.entropy[~correct]},
    }


@dataclass
class TrialAggregate:
    """Per-trial values with their mean and sample (n-1) standard deviation."""

    values: np.ndarray
    mean: float
    std: float

    @property
    def std3(self) -> float:
        """3-fold standard deviation, the error-bar convention for plots."""
        return 3.0 * self.std


def aggregate(values) -> TrialAggregate:
    v = np.asarray(list(values), dtype=np.float64)
    if v.size < 2:
        raise ValueError(f"aggregation needs >= 2 trials, got {v.size}")
    return TrialAggregate(values=v, mean=float(v.mean()),
                          std=float(v.std(ddof=1)))


def histograms_csv(hists: dict) -> str:
    """Flat CSV of ``uncertainty_histograms`` output:
    metric,group,bin_left,bin_right,count."""
    lines = ["metric,group,bin_left,bin_right,count"]
    for metric, data in hists.items():
        edges = np.asarray(data["bin_edges"])
        for group, counts in data["counts"].items():
            for j, count in enumerate(counts):
                lines.append(f"{metric},{group},{edges[j]:.6g},"
                             f"{edges[j + 1]:.6g},{int(count)}")
    return "\n".join(lines) + "\n"


def aggregates_csv(named: dict) -> str:
    """CSV of per-metric trial aggregates: metric,mean,std,n_trials."""
    lines = ["metric,mean,std,n_trials"]
    for metric, agg in named.items():
        lines.append(f"{metric},{agg.mean:.6g},{agg.std:.6g},{agg.values.size}")
    return "\n".join(lines) + "\n"
