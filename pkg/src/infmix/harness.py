"""Experiment orchestration: flat-text configs, multi-trial runs, the
hyperparameter sweeps, OOD / attack / detection evaluation, and report
emission.

Every result file embeds its fully-resolved config and seed, and is written
atomically (temp file + rename), so concurrent trials never interleave and
any result can be reproduced from its own metadata.
"""

from __future__ import annotations

import dataclasses
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import attacks, baselines, metrics
from .checkpoint import load_model, save_model
from .data import Dataset, load_split, take_prefix
from .metrics import ScoredSample, aggregate, auroc_balanced, auroc_scores
from .network import PredictiveSummary, StochasticMlp
from .objectives import (ObjectiveKind, TrainConfig, loss_history_csv, train)
from .posterior import PriorSpec, kl_to_prior, per_weight_variance
from .tensor import Rng

SCHEMA_VERSION = 1

_EVAL_STREAM = 20
_EVAL_CHUNK = 2000

MODEL_KINDS = ("ml", "vi", "deterministic", "dropout", "ensemble")
SWEEP_AXES = ("none", "kl_weight", "prior")

# Per-weight mixing-distribution variances span orders of magnitude, so the
# exported histograms use fixed log-spaced bins.
MIXING_VARIANCE_EDGES = np.logspace(-8.0, 1.0, 46)


class ConfigError(ValueError):
    """Bad config file, unknown key, or unusable field value."""


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_float_list(s: str):
    return tuple(float(tok) for tok in s.split(",") if tok.strip())


def _parse_optional_float(s: str):
    if s.strip().lower() in ("auto", "none"):
        return None
    return float(s)


@dataclass
class ExperimentConfig:
    """Fully-resolved experiment description (one flat key per field)."""

    schema_version: int = SCHEMA_VERSION
    model: str = "ml"
    dataset: str = "mnist"
    kl_weight: float = 1.0
    prior_variance: float = 1.0
    n_train_samples: int = 5
    n_eval_samples: int = 100
    batch_size: int = 200
    learning_rate: float = 1e-3
    iterations: int = 30_000
    n_trials: int = 10
    base_seed: int = 0
    sweep: str = "none"
    kl_weight_grid: tuple = (1.0, 0.1, 0.01, 1e-3, 1e-4)
    prior_grid: tuple = (0.5, 1.0, 1.5, 3.0)
    weight_decay: float = baselines.DEFAULT_WEIGHT_DECAY
    dropout_p: float = 0.5
    ensemble_size: int = 5
    eps_grid: tuple = attacks.DEFAULT_EPS_GRID
    attack_iterations: int = 40
    attack_step: float | None = None
    n_attack_samples: int = 1
    attack_random_init: bool = True
    attack_epsilon: float = 0.25
    attack_prefix: int = 1000
    detect_full_test: bool = True
    ood_prefix: int = 10_000
    loss_record_every: int = 10
    data_dir: str = "data"
    out_dir: str = "results"
    threads: int = 1

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"schema_version {self.schema_version} unsupported "
                f"(expected {SCHEMA_VERSION})")
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.sweep not in SWEEP_AXES:
            raise ConfigError(f"sweep must be one of {SWEEP_AXES}, got {self.sweep!r}")
        if self.n_trials < 1:
            raise ConfigError(f"n_trials must be >= 1, got {self.n_trials}")

    def trial_seeds(self):
        """Audit-friendly seed schedule: base_seed + trial index."""
        return [self.base_seed + t for t in range(self.n_trials)]

    def run_id(self) -> str:
        if self.model in ("ml", "vi"):
            return (f"{self.model}_{self.dataset}"
                    f"_kl{self.kl_weight:g}_pv{self.prior_variance:g}")
        return f"{self.model}_{self.dataset}"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kl_weight_grid"] = list(self.kl_weight_grid)
        d["prior_grid"] = list(self.prior_grid)
        d["eps_grid"] = list(self.eps_grid)
        return d

    def replace(self, **kwargs) -> "ExperimentConfig":
        return dataclasses.replace(self, **kwargs)


_FIELD_PARSERS = {
    "schema_version": int,
    "model": str,
    "dataset": str,
    "kl_weight": float,
    "prior_variance": float,
    "n_train_samples": int,
    "n_eval_samples": int,
    "batch_size": int,
    "learning_rate": float,
    "iterations": int,
    "n_trials": int,
    "base_seed": int,
    "sweep": str,
    "kl_weight_grid": _parse_float_list,
    "prior_grid": _parse_float_list,
    "weight_decay": float,
    "dropout_p": float,
    "ensemble_size": int,
    "eps_grid": _parse_float_list,
    "attack_iterations": int,
    "attack_step": _parse_optional_float,
    "n_attack_samples": int,
    "attack_random_init": _parse_bool,
    "attack_epsilon": float,
    "attack_prefix": int,
    "detect_full_test": _parse_bool,
    "ood_prefix": int,
    "loss_record_every": int,
    "data_dir": str,
    "out_dir": str,
    "threads": int,
}


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines; '#' starts a comment; unknown keys are
    hard errors so a typo cannot silently change a sweep."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _FIELD_PARSERS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        try:
            values[key] = _FIELD_PARSERS[key](value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    try:
        return ExperimentConfig(**values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def config_text(cfg: ExperimentConfig) -> str:
    """Render a config back to the flat text format (round-trips)."""
    lines = []
    for f_ in dataclasses.fields(cfg):
        v = getattr(cfg, f_.name)
        if isinstance(v, tuple):
            v = ",".join(f"{x:g}" for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif v is None:
            v = "auto"
        lines.append(f"{f_.name} = {v}")
    return "\n".join(lines) + "\n"


def write_json_atomic(path, payload: dict) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def write_text_atomic(path, text: str) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


# ----------------------------------------------------------------------
# Model construction / evaluation helpers
# ----------------------------------------------------------------------

def train_model_for_trial(cfg: ExperimentConfig, train_data: Dataset, seed: int):
    """Train one model of the configured kind; returns (model, loss records)."""
    if cfg.model in ("ml", "vi"):
        net = StochasticMlp.create(Rng(seed).derive(0))
        tc = TrainConfig(objective=ObjectiveKind(cfg.model),
                         kl_weight=cfg.kl_weight,
                         prior=PriorSpec(cfg.prior_variance),
                         n_train_samples=cfg.n_train_samples,
                         batch_size=cfg.batch_size,
                         learning_rate=cfg.learning_rate,
                         iterations=cfg.iterations,
                         seed=seed)
        records = train(net, train_data, tc, record_every=cfg.loss_record_every)
        return net, records
    fit = baselines.FitConfig(batch_size=cfg.batch_size,
                              learning_rate=cfg.learning_rate,
                              iterations=cfg.iterations, seed=seed)
    if cfg.model == "deterministic":
        return baselines.train_deterministic(train_data, cfg.weight_decay, fit), []
    if cfg.model == "dropout":
        return baselines.train_dropout(train_data, cfg.dropout_p,
                                       cfg.weight_decay, fit), []
    if cfg.model == "ensemble":
        return baselines.train_ensemble(train_data, cfg.ensemble_size,
                                        cfg.weight_decay, fit), []
    raise ConfigError(f"unknown model kind {cfg.model!r}")


def concat_summaries(parts) -> PredictiveSummary:
    return PredictiveSummary(
        mean_probs=np.concatenate([p.mean_probs for p in parts]),
        class_variance=np.concatenate([p.class_variance for p in parts]),
        max_variance=np.concatenate([p.max_variance for p in parts]),
        entropy=np.concatenate([p.entropy for p in parts]),
        predicted_class=np.concatenate([p.predicted_class for p in parts]),
        n_samples=parts[0].n_samples,
    )


def predict_dataset(model, images, n_samples: int, rng: Rng,
                    chunk: int = _EVAL_CHUNK) -> PredictiveSummary:
    """Chunked prediction over a whole dataset, deterministic in ``rng``."""
    parts = []
    for start in range(0, images.shape[0], chunk):
        parts.append(model.predict(images[start:start + chunk], n_samples,
                                   rng.derive(start)))
    return concat_summaries(parts)


def mixing_variance_report(net: StochasticMlp) -> list:
    """Per-layer summary of the identifiable per-weight variances."""
    out = []
    for l, layer in enumerate(net.layers):
        v = per_weight_variance(layer).ravel()
        counts, _ = np.histogram(
            np.clip(v, MIXING_VARIANCE_EDGES[0], MIXING_VARIANCE_EDGES[-1]),
            bins=MIXING_VARIANCE_EDGES)
        out.append({
            "layer": l,
            "mean": float(v.mean()),
            "min": float(v.min()),
            "max": float(v.max()),
            "histogram": {"bin_edges": MIXING_VARIANCE_EDGES.tolist(),
                          "counts": counts.tolist()},
        })
    return out


def _json_histograms(groups: dict) -> dict:
    hists = metrics.uncertainty_histograms(groups)
    return {
        metric: {
            "bin_edges": data["bin_edges"].tolist(),
            "counts": {name: counts.tolist()
                       for name, counts in data["counts"].items()},
        }
        for metric, data in hists.items()
    }


# ----------------------------------------------------------------------
# train / sweep
# ----------------------------------------------------------------------

def run_trial(cfg: ExperimentConfig, train_data: Dataset, test_data: Dataset,
              seed: int) -> dict:
    """Train, evaluate on the test set, and persist one trial."""
    model, records = train_model_for_trial(cfg, train_data, seed)
    eval_rng = Rng(seed).derive(_EVAL_STREAM)
    summary = predict_dataset(model, test_data.images, cfg.n_eval_samples,
                              eval_rng)
    correct = summary.correct_mask(test_data.labels)

    os.makedirs(cfg.out_dir, exist_ok=True)
    stem = f"{cfg.run_id()}_seed{seed}"
    ckpt_path = os.path.join(cfg.out_dir, stem + ".ckpt")
    save_model(model, ckpt_path)

    result = {
        "schema_version": SCHEMA_VERSION,
        "kind": "trial",
        "run_id": cfg.run_id(),
        "model": cfg.model,
        "dataset": cfg.dataset,
        "seed": seed,
        "config": cfg.to_dict(),
        "clean_accuracy": summary.accuracy(test_data.labels),
        "mean_max_variance": float(summary.max_variance.mean()),
        "mean_entropy": float(summary.entropy.mean()),
        "mean_max_variance_correct": float(summary.max_variance[correct].mean())
            if correct.any() else None,
        "mean_max_variance_wrong": float(summary.max_variance[~correct].mean())
            if (~correct).any() else None,
        "mean_entropy_correct": float(summary.entropy[correct].mean())
            if correct.any() else None,
        "mean_entropy_wrong": float(summary.entropy[~correct].mean())
            if (~correct).any() else None,
        "histograms": _json_histograms(
            metrics.summary_groups(summary, test_data.labels)),
        "checkpoint": os.path.basename(ckpt_path),
    }
    if isinstance(model, StochasticMlp):
        result["mixing_variance"] = mixing_variance_report(model)
        result["final_kl"] = float(sum(
            kl_to_prior(layer, PriorSpec(cfg.prior_variance))
            for layer in model.layers))
    if records:
        loss_path = os.path.join(cfg.out_dir, stem + "_loss.csv")
        write_text_atomic(loss_path, loss_history_csv(records))
        result["loss_csv"] = os.path.basename(loss_path)
        result["final_loss"] = records[-1].loss
    hist_path = os.path.join(cfg.out_dir, stem + "_hist.csv")
    write_text_atomic(hist_path, metrics.histograms_csv(
        metrics.uncertainty_histograms(
            metrics.summary_groups(summary, test_data.labels))))
    result["histogram_csv"] = os.path.basename(hist_path)
    write_json_atomic(os.path.join(cfg.out_dir, stem + ".json"), result)
    return result


def _map_trials(cfg: ExperimentConfig, fn, seeds):
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(fn, seeds))
    return [fn(s) for s in seeds]


def run_train(cfg: ExperimentConfig) -> list:
    """All trials of one configuration; returns the per-trial result dicts."""
    train_data = load_split(cfg.data_dir, "train", name=cfg.dataset)
    test_data = load_split(cfg.data_dir, "test", name=cfg.dataset)
    return _map_trials(
        cfg, lambda seed: run_trial(cfg, train_data, test_data, seed),
        cfg.trial_seeds())


def run_sweep(cfg: ExperimentConfig) -> dict:
    """Trials for every grid point of the configured sweep axis."""
    if cfg.sweep == "none":
        grid = [None]
    elif cfg.sweep == "kl_weight":
        grid = list(cfg.kl_weight_grid)
    else:
        grid = list(cfg.prior_grid)
    if not grid:
        raise ConfigError(f"empty grid for sweep axis {cfg.sweep!r}")

    rows = []
    for value in grid:
        if value is None:
            point = cfg
        elif cfg.sweep == "kl_weight":
            point = cfg.replace(kl_weight=value)
        else:
            point = cfg.replace(prior_variance=value)
        results = run_train(point)
        accs = [r["clean_accuracy"] for r in results]
        row = {"sweep": cfg.sweep, "value": value, "run_id": point.run_id(),
               "accuracies": accs}
        if len(accs) >= 2:
            agg = aggregate(accs)
            row["mean_accuracy"] = agg.mean
            row["std_accuracy"] = agg.std
        else:
            row["mean_accuracy"] = float(np.mean(accs))
            row["std_accuracy"] = 0.0
        rows.append(row)

    payload = {"schema_version": SCHEMA_VERSION, "kind": "sweep",
               "config": cfg.to_dict(), "rows": rows}
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_json_atomic(os.path.join(
        cfg.out_dir, f"sweep_{cfg.sweep}_{cfg.model}_{cfg.dataset}.json"), payload)
    lines = [f"{cfg.sweep},mean_accuracy,std_accuracy"]
    lines += [f"{r['value']},{r['mean_accuracy']:.6f},{r['std_accuracy']:.6f}"
              for r in rows]
    write_text_atomic(os.path.join(
        cfg.out_dir, f"sweep_{cfg.sweep}_{cfg.model}_{cfg.dataset}.csv"),
        "\n".join(lines) + "\n")
    return payload


# ----------------------------------------------------------------------
# ood / attack / detect
# ----------------------------------------------------------------------

def _trial_checkpoints(cfg: ExperimentConfig, checkpoint=None):
    """(seed, model) pairs for the configured run, from explicit checkpoint
    or from the out_dir files written by run_train."""
    if checkpoint is not None:
        return [(cfg.base_seed, load_model(checkpoint))]
    pairs = []
    missing = []
    for seed in cfg.trial_seeds():
        path = os.path.join(cfg.out_dir, f"{cfg.run_id()}_seed{seed}.ckpt")
        if os.path.exists(path):
            pairs.append((seed, load_model(path)))
        else:
            missing.append(path)
    if not pairs:
        raise ConfigError(
            f"no checkpoints for run {cfg.run_id()!r}; expected e.g. {missing[0]}")
    return pairs


def run_ood(cfg: ExperimentConfig, checkpoint=None) -> dict:
    """Test-vs-OOD AUROC for both uncertainty scores, per trial."""
    test_data = load_split(cfg.data_dir, "test", name=cfg.dataset)
    try:
        ood_data = load_split(cfg.data_dir, "ood", name="ood")
    except FileNotFoundError as exc:
        raise ConfigError(
            f"OOD data missing: {exc}; convert the OOD set to IDX and place "
            f"it in {cfg.data_dir}") from exc
    ood_data = take_prefix(ood_data, min(cfg.ood_prefix, ood_data.n))

    trials = []
    for seed, model in _trial_checkpoints(cfg, checkpoint):
        rng = Rng(seed).derive(_EVAL_STREAM)
        test_summary = predict_dataset(model, test_data.images,
                                       cfg.n_eval_samples, rng.derive(0))
        ood_summary = predict_dataset(model, ood_data.images,
                                      cfg.n_eval_samples, rng.derive(1))
        trials.append({
            "seed": seed,
            "auroc_variance": auroc_scores(ood_summary.max_variance,
                                           test_summary.max_variance),
            "auroc_entropy": auroc_scores(ood_summary.entropy,
                                          test_summary.entropy),
            "n_test": test_data.n,
            "n_ood": ood_data.n,
        })

    payload = {"schema_version": SCHEMA_VERSION, "kind": "ood",
               "run_id": cfg.run_id(), "model": cfg.model,
               "dataset": cfg.dataset, "config": cfg.to_dict(),
               "trials": trials}
    for score in ("auroc_variance", "auroc_entropy"):
        vals = [t[score] for t in trials]
        payload[f"mean_{score}"] = float(np.mean(vals))
        payload[f"std_{score}"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_json_atomic(os.path.join(cfg.out_dir, f"ood_{cfg.run_id()}.json"),
                      payload)
    return payload


def _attack_config(cfg: ExperimentConfig, epsilon: float, seed: int
                   ) -> attacks.AttackConfig:
    return attacks.AttackConfig(
        epsilon=epsilon, n_iter=cfg.attack_iterations, step=cfg.attack_step,
        n_grad_samples=cfg.n_attack_samples,
        random_init=cfg.attack_random_init, seed=seed,
        n_eval_samples=cfg.n_eval_samples)


def run_attack(cfg: ExperimentConfig, checkpoint=None) -> dict:
    """Robustness curves on the first ``attack_prefix`` test samples."""
    test_data = load_split(cfg.data_dir, "test", name=cfg.dataset)
    prefix = take_prefix(test_data, min(cfg.attack_prefix, test_data.n))

    trials = []
    for seed, model in _trial_checkpoints(cfg, checkpoint):
        curve = []
        for epsilon in cfg.eps_grid:
            result = attacks.pgd_attack(model, prefix.images, prefix.labels,
                                        _attack_config(cfg, epsilon, seed))
            curve.append({"epsilon": epsilon,
                          "robust_accuracy": result.robust_accuracy})
        trials.append({"seed": seed, "curve": curve})

    payload = {"schema_version": SCHEMA_VERSION, "kind": "attack_curve",
               "run_id": cfg.run_id(), "model": cfg.model,
               "dataset": cfg.dataset, "config": cfg.to_dict(),
               "n_attack_samples": cfg.n_attack_samples,
               "n_attacked": prefix.n, "trials": trials}
    curve_matrix = np.array([[pt["robust_accuracy"] for pt in t["curve"]]
                             for t in trials])
    payload["mean_curve"] = curve_matrix.mean(axis=0).tolist()
    payload["std_curve"] = (curve_matrix.std(axis=0, ddof=1).tolist()
                            if len(trials) > 1 else [0.0] * curve_matrix.shape[1])
    os.makedirs(cfg.out_dir, exist_ok=True)
    stem = f"attack_{cfg.run_id()}_s{cfg.n_attack_samples}"
    write_json_atomic(os.path.join(cfg.out_dir, stem + ".json"), payload)
    lines = ["epsilon,mean_robust_accuracy,std3"]
    for j, epsilon in enumerate(cfg.eps_grid):
        lines.append(f"{epsilon},{payload['mean_curve'][j]:.6f},"
                     f"{3.0 * payload['std_curve'][j]:.6f}")
    write_text_atomic(os.path.join(cfg.out_dir, stem + ".csv"),
                      "\n".join(lines) + "\n")
    return payload


def run_detect(cfg: ExperimentConfig, checkpoint=None) -> dict:
    """Adversarial-example detection at the configured operating point.

    Clean side: the test set (full by default).  Adversarial side: PGD at
    ``attack_epsilon`` on the same samples.  Reports plain AUROC over all
    samples and the class-balanced correct-vs-successful variant.
    """
    test_data = load_split(cfg.data_dir, "test", name=cfg.dataset)
    if not cfg.detect_full_test:
        test_data = take_prefix(test_data, min(cfg.attack_prefix, test_data.n))

    trials = []
    for seed, model in _trial_checkpoints(cfg, checkpoint):
        result = attacks.pgd_attack(model, test_data.images, test_data.labels,
                                    _attack_config(cfg, cfg.attack_epsilon, seed))
        clean_summary = predict_dataset(model, test_data.images,
                                        cfg.n_eval_samples,
                                        Rng(seed).derive(_EVAL_STREAM, 2))
        adv_summary = result.summary_after
        correct = clean_summary.correct_mask(test_data.labels)

        artifacts = attacks.write_attack_artifacts(
            result, cfg.out_dir,
            f"adv_{cfg.run_id()}_eps{cfg.attack_epsilon:g}_seed{seed}")

        trial = {"seed": seed, "epsilon": cfg.attack_epsilon,
                 "n_samples": test_data.n,
                 "clean_accuracy": clean_summary.accuracy(test_data.labels),
                 "robust_accuracy": result.robust_accuracy,
                 "n_correct_clean": int(correct.sum()),
                 "n_successful_attacks": int(result.success.sum()),
                 "artifacts": {k: os.path.basename(v)
                               for k, v in artifacts.items()}}
        for metric_name, clean_vals, adv_vals in (
                ("variance", clean_summary.max_variance, adv_summary.max_variance),
                ("entropy", clean_summary.entropy, adv_summary.entropy)):
            trial[f"auroc_{metric_name}"] = auroc_scores(adv_vals, clean_vals)
            scored = (
                [ScoredSample(score=float(v), positive=False,
                              correctly_classified=bool(c))
                 for v, c in zip(clean_vals, correct)]
                + [ScoredSample(score=float(v), positive=True,
                                attack_success=bool(s))
                   for v, s in zip(adv_vals, result.success)])
            try:
                balanced = auroc_balanced(scored, seed=seed)
            except ValueError:
                # No successful attacks (or no correct cleans): balanced
                # variant undefined for this trial; counts still recorded.
                trial[f"auroc_{metric_name}_balanced"] = None
                trial[f"balanced_n_per_class_{metric_name}"] = 0
            else:
                trial[f"auroc_{metric_name}_balanced"] = balanced.value
                trial[f"balanced_n_per_class_{metric_name}"] = balanced.n_per_class
        trials.append(trial)

    payload = {"schema_version": SCHEMA_VERSION, "kind": "detection",
               "run_id": cfg.run_id(), "model": cfg.model,
               "dataset": cfg.dataset, "config": cfg.to_dict(),
               "epsilon": cfg.attack_epsilon, "trials": trials}
    for score in ("auroc_variance", "auroc_entropy",
                  "auroc_variance_balanced", "auroc_entropy_balanced"):
        vals = [t[score] for t in trials if t[score] is not None]
        payload[f"mean_{score}"] = float(np.mean(vals)) if vals else None
        payload[f"std_{score}"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_json_atomic(
        os.path.join(cfg.out_dir,
                     f"detect_{cfg.run_id()}_eps{cfg.attack_epsilon:g}.json"),
        payload)
    return payload


# ----------------------------------------------------------------------
# report
# ----------------------------------------------------------------------

def _load_results(results_dir):
    groups = {"trial": [], "sweep": [], "ood": [], "attack_curve": [],
              "detection": []}
    for name in sorted(os.listdir(results_dir)):
        if not name.endswith(".json"):
            continue
        try:
            with open(os.path.join(results_dir, name)) as f:
                payload = json.load(f)
        except (OSError, json.JSONDecodeError):
            continue
        kind = payload.get("kind")
        if kind in groups:
            payload["_file"] = name
            groups[kind].append(payload)
    return groups


def _fmt(value, digits=4):
    return f"{value:.{digits}f}" if value is not None else ""


def _accuracy_table(trials, axis_key: str) -> list:
    """Rows (dataset, model, axis value) -> mean/std accuracy."""
    cells = {}
    for t in trials:
        key = (t["dataset"], t["model"], t["config"][axis_key])
        cells.setdefault(key, []).append(t["clean_accuracy"])
    rows = []
    for (dataset, model, value), accs in sorted(cells.items()):
        rows.append({
            "dataset": dataset, "model": model, axis_key: value,
            "n_trials": len(accs), "mean_accuracy": float(np.mean(accs)),
            "std_accuracy": float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0,
        })
    return rows


def _csv_from_rows(rows, columns) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(
            _fmt(v) if isinstance(v := row.get(c), float) else str(v if v is not None else "")
            for c in columns))
    return "\n".join(lines) + "\n"


def _ordering_summary(groups) -> list:
    """Qualitative claims checked against whatever results are present."""
    lines = []
    trials = groups["trial"]

    def mean_of(model, key, value, field_name):
        vals = [t[field_name] for t in trials
                if t["model"] == model and t["config"].get(key) == value
                and t.get(field_name) is not None]
        return float(np.mean(vals)) if vals else None

    ml_var = mean_of("ml", "kl_weight", 1.0, "mean_max_variance")
    vi_var = mean_of("vi", "kl_weight", 1.0, "mean_max_variance")
    if ml_var is not None and vi_var is not None:
        lines.append(
            f"predictive variance (kl_weight=1): ml={ml_var:.5f} vi={vi_var:.5f} "
            f"ml_higher={ml_var > vi_var}")

    for model in ("ml", "vi"):
        by_kl = {}
        for t in trials:
            if t["model"] == model:
                by_kl.setdefault(t["config"]["kl_weight"], []).append(
                    t["clean_accuracy"])
        if len(by_kl) >= 2:
            best = max(by_kl, key=lambda k: np.mean(by_kl[k]))
            lines.append(f"best kl_weight by accuracy for {model}: {best:g}")

    for model in ("ml", "vi"):
        wrongs = [t for t in trials if t["model"] == model
                  and t.get("mean_max_variance_wrong") is not None
                  and t.get("mean_max_variance_correct") is not None]
        if wrongs:
            gap = float(np.mean([t["mean_max_variance_wrong"]
                                 - t["mean_max_variance_correct"]
                                 for t in wrongs]))
            lines.append(f"variance gap wrong-correct for {model}: {gap:.5f} "
                         f"(positive means wrong is higher)")

    for ood in groups["ood"]:
        lines.append(
            f"ood {ood['run_id']}: auroc_entropy={ood['mean_auroc_entropy']:.4f} "
            f"auroc_variance={ood['mean_auroc_variance']:.4f}")
    for det in groups["detection"]:
        balanced = det.get("mean_auroc_entropy_balanced")
        lines.append(
            f"detection {det['run_id']} eps={det['epsilon']}: "
            f"entropy={det['mean_auroc_entropy']:.4f} "
            f"variance={det['mean_auroc_variance']:.4f} "
            f"balanced_entropy="
            + (f"{balanced:.4f}" if balanced is not None else "undefined"))
    return lines


def run_report(results_dir, report_dir=None) -> dict:
    """Consolidate result JSONs into table CSVs, figure data, and a summary.

    Missing inputs are listed in the summary; a partial report is still
    emitted and the call succeeds.
    """
    report_dir = report_dir or os.path.join(results_dir, "report")
    os.makedirs(report_dir, exist_ok=True)
    groups = _load_results(results_dir)
    written = []
    warnings = []

    stochastic_trials = [t for t in groups["trial"] if t["model"] in ("ml", "vi")]
    baseline_trials = [t for t in groups["trial"] if t["model"] not in ("ml", "vi")]

    if stochastic_trials:
        for axis, fname in (("prior_variance", "table_accuracy_by_prior.csv"),
                            ("kl_weight", "table_accuracy_by_kl_weight.csv")):
            rows = _accuracy_table(stochastic_trials, axis)
            path = os.path.join(report_dir, fname)
            write_text_atomic(path, _csv_from_rows(
                rows, ["dataset", "model", axis, "n_trials", "mean_accuracy",
                       "std_accuracy"]))
            written.append(fname)
    else:
        warnings.append("no stochastic-model trials found")

    if baseline_trials:
        cells = {}
        for t in baseline_trials:
            cells.setdefault((t["dataset"], t["model"]), []).append(
                t["clean_accuracy"])
        rows = [{"dataset": d, "model": m, "n_trials": len(a),
                 "mean_accuracy": float(np.mean(a)),
                 "std_accuracy": float(np.std(a, ddof=1)) if len(a) > 1 else 0.0}
                for (d, m), a in sorted(cells.items())]
        write_text_atomic(os.path.join(report_dir, "table_baseline_accuracy.csv"),
                          _csv_from_rows(rows, ["dataset", "model", "n_trials",
                                                "mean_accuracy", "std_accuracy"]))
        written.append("table_baseline_accuracy.csv")

    if groups["ood"]:
        rows = [{"dataset": o["dataset"], "model": o["model"],
                 "run_id": o["run_id"],
                 "mean_auroc_variance": o["mean_auroc_variance"],
                 "std_auroc_variance": o["std_auroc_variance"],
                 "mean_auroc_entropy": o["mean_auroc_entropy"],
                 "std_auroc_entropy": o["std_auroc_entropy"]}
                for o in groups["ood"]]
        write_text_atomic(os.path.join(report_dir, "table_ood_auroc.csv"),
                          _csv_from_rows(rows, list(rows[0].keys())))
        written.append("table_ood_auroc.csv")
    else:
        warnings.append("no ood results found")

    if groups["detection"]:
        rows = [{"dataset": d["dataset"], "model": d["model"],
                 "epsilon": d["epsilon"],
                 "mean_auroc_variance": d["mean_auroc_variance"],
                 "mean_auroc_entropy": d["mean_auroc_entropy"],
                 "mean_auroc_variance_balanced": d["mean_auroc_variance_balanced"],
                 "mean_auroc_entropy_balanced": d["mean_auroc_entropy_balanced"]}
                for d in groups["detection"]]
        write_text_atomic(os.path.join(report_dir, "table_adv_detection_auroc.csv"),
                          _csv_from_rows(rows, list(rows[0].keys())))
        written.append("table_adv_detection_auroc.csv")
    else:
        warnings.append("no detection results found")

    for curve in groups["attack_curve"]:
        fname = f"fig_robustness_{curve['run_id']}_s{curve['n_attack_samples']}.csv"
        lines = ["x,y,err  # epsilon, mean robust accuracy, 3*std"]
        for j, epsilon in enumerate(curve["config"]["eps_grid"]):
            lines.append(f"{epsilon},{curve['mean_curve'][j]:.6f},"
                         f"{3.0 * curve['std_curve'][j]:.6f}")
        write_text_atomic(os.path.join(report_dir, fname), "\n".join(lines) + "\n")
        written.append(fname)
    if not groups["attack_curve"]:
        warnings.append("no attack curves found")

    # Figure data: per-run mean histograms over trials (uncertainty and
    # mixing-distribution variance).
    by_run = {}
    for t in groups["trial"]:
        by_run.setdefault(t["run_id"], []).append(t)
    for run_id, ts in sorted(by_run.items()):
        for metric in ("max_variance", "entropy"):
            edges = ts[0]["histograms"][metric]["bin_edges"]
            lines = [f"x,y_correct,err_correct,y_wrong,err_wrong  # bin left edge,"
                     f" mean count, 3*std over {len(ts)} trials"]
            stacks = {g: np.array([t["histograms"][metric]["counts"][g]
                                   for t in ts], dtype=float)
                      for g in ("correct", "wrong")}
            for j in range(len(edges) - 1):
                cells = []
                for g in ("correct", "wrong"):
                    col = stacks[g][:, j]
                    std = float(col.std(ddof=1)) if len(ts) > 1 else 0.0
                    cells += [f"{col.mean():.3f}", f"{3.0 * std:.3f}"]
                lines.append(f"{edges[j]:.6g}," + ",".join(cells))
            fname = f"fig_{metric}_hist_{run_id}.csv"
            write_text_atomic(os.path.join(report_dir, fname),
                              "\n".join(lines) + "\n")
            written.append(fname)
        if ts[0].get("mixing_variance"):
            n_layers = len(ts[0]["mixing_variance"])
            for layer in range(n_layers):
                edges = ts[0]["mixing_variance"][layer]["histogram"]["bin_edges"]
                stack = np.array([t["mixing_variance"][layer]["histogram"]["counts"]
                                  for t in ts], dtype=float)
                lines = ["x,y,err  # bin left edge, mean count, 3*std"]
                for j in range(len(edges) - 1):
                    std = float(stack[:, j].std(ddof=1)) if len(ts) > 1 else 0.0
                    lines.append(f"{edges[j]:.6g},{stack[:, j].mean():.3f},"
                                 f"{3.0 * std:.3f}")
                fname = f"fig_mixing_variance_layer{layer}_{run_id}.csv"
                write_text_atomic(os.path.join(report_dir, fname),
                                  "\n".join(lines) + "\n")
                written.append(fname)

    # Per-run aggregate metrics in the metric,mean,std,n_trials format.
    for run_id, ts in sorted(by_run.items()):
        if len(ts) < 2:
            continue
        named = {}
        for field_name in ("clean_accuracy", "mean_max_variance", "mean_entropy"):
            vals = [t[field_name] for t in ts if t.get(field_name) is not None]
            if len(vals) >= 2:
                named[field_name] = aggregate(vals)
        if named:
            fname = f"aggregate_{run_id}.csv"
            write_text_atomic(os.path.join(report_dir, fname),
                              metrics.aggregates_csv(named))
            written.append(fname)

    summary_lines = ["result files consolidated from: " + str(results_dir), ""]
    if warnings:
        summary_lines += [f"warning: {w}" for w in warnings] + [""]
    summary_lines += _ordering_summary(groups)
    write_text_atomic(os.path.join(report_dir, "summary.txt"),
                      "\n".join(summary_lines) + "\n")
    written.append("summary.txt")
    return {"report_dir": report_dir, "written": written, "warnings": warnings}
