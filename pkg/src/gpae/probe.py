"""Shallow MLP probes over frozen embeddings, with score aggregation.

A probe is a single-hidden-layer MLP (ReLU hidden; softmax head for
multiclass tasks, sigmoid head for multilabel) trained with mini-batch Adam.
Training is deterministic for a fixed seed, early-stops on the evaluation
metric, and restores the best weights seen.

Scores across tasks are made comparable by normalizing each raw score against
a per-task reference best and averaging the normalized scores, optionally per
task group.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidInputError, InvalidTaskError

TASK_TYPES = ("multiclass", "multilabel")
METRICS = ("accuracy", "mAP")


@dataclass
class MlpConfig:
    hidden_width: int = 512
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    weight_init_scale: float = 1.0
    val_fraction: float = 0.2  # 0 evaluates on the training set itself
    patience: int = 10
    standardize: bool = True  # z-score features using training-split statistics

    def __post_init__(self):
        if min(self.hidden_width, self.epochs, self.batch_size, self.patience) <= 0:
            raise ConfigurationError("MLP config values must be positive")
        if self.learning_rate <= 0 or self.weight_init_scale <= 0:
            raise ConfigurationError("MLP config values must be positive")
        if not 0 <= self.val_fraction < 1:
            raise ConfigurationError("val_fraction must be in [0, 1)")


@dataclass
class ProbeTask:
    name: str
    embeddings: np.ndarray  # (n, dim)
    labels: np.ndarray  # (n,) ints for multiclass, (n, k) 0/1 for multilabel
    task_type: str
    metric: str
    n_classes: int
    group: str | None = None
    holdout: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.task_type not in TASK_TYPES:
            raise ConfigurationError(f"task_type must be one of {TASK_TYPES}")
        if self.metric not in METRICS:
            raise ConfigurationError(f"metric must be one of {METRICS}")
        if self.embeddings.ndim != 2 or len(self.embeddings) != len(self.labels):
            raise InvalidTaskError(
                f"task {self.name}: embeddings {self.embeddings.shape} do not match "
                f"{len(self.labels)} labels"
            )
        if self.task_type == "multiclass":
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.n_classes:
                raise InvalidTaskError(f"task {self.name}: labels outside class range")
        else:
            self.labels = np.asarray(self.labels, dtype=np.float64)
            if self.labels.shape != (len(self.embeddings), self.n_classes):
                raise InvalidTaskError(f"task {self.name}: bad multilabel shape")

    @classmethod
    def from_examples(cls, name, examples, task_type, metric, n_classes, group=None):
        """Build from a list of (embedding vector, label) pairs."""
        vectors = np.stack([np.asarray(e, dtype=np.float64) for e, _ in examples])
        labels = np.asarray([label for _, label in examples])
        return cls(name, vectors, labels, task_type, metric, n_classes, group)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _init_params(dim, hidden, n_out, cfg: MlpConfig, rng):
    scale = cfg.weight_init_scale
    return {
        "W1": rng.uniform(-1, 1, (dim, hidden)) * scale * np.sqrt(6.0 / dim),
        "b1": np.zeros(hidden),
        "W2": rng.uniform(-1, 1, (hidden, n_out)) * scale * np.sqrt(6.0 / hidden),
        "b2": np.zeros(n_out),
    }


def _loss_and_grads(params, x, y, task_type):
    """Mean loss over the batch and gradients for every parameter.

    Multiclass: softmax cross-entropy, y as int class ids.
    Multilabel: per-element sigmoid binary cross-entropy, y as 0/1 matrix.
    """
    z1 = x @ params["W1"] + params["b1"]
    a1 = np.maximum(z1, 0)
    z2 = a1 @ params["W2"] + params["b2"]
    n = len(x)
    if task_type == "multiclass":
        p = _softmax(z2)
        eps = 1e-12
        loss = -np.log(p[np.arange(n), y] + eps).mean()
        dz2 = p.copy()
        dz2[np.arange(n), y] -= 1.0
        dz2 /= n
    else:
        p = _sigmoid(z2)
        eps = 1e-12
        loss = -(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)).mean()
        dz2 = (p - y) / (n * z2.shape[1])
    grads = {
        "W2": a1.T @ dz2,
        "b2": dz2.sum(axis=0),
    }
    da1 = dz2 @ params["W2"].T
    dz1 = da1 * (z1 > 0)
    grads["W1"] = x.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return loss, grads


@dataclass
class TrainedProbe:
    params: dict[str, np.ndarray]
    task_type: str
    feature_mean: np.ndarray | None = None
    feature_scale: np.ndarray | None = None

    def scores(self, x: np.ndarray) -> np.ndarray:
        """Class scores: softmax probabilities or per-label sigmoids."""
        x = np.asarray(x, dtype=np.float64)
        if self.feature_mean is not None:
            x = (x - self.feature_mean) / self.feature_scale
        a1 = np.maximum(x @ self.params["W1"] + self.params["b1"], 0)
        z2 = a1 @ self.params["W2"] + self.params["b2"]
        return _softmax(z2) if self.task_type == "multiclass" else _sigmoid(z2)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.scores(x).argmax(axis=1)


def accuracy(predictions, labels) -> float:
    return float(np.mean(predictions == labels))


def compute_map(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean over classes of average precision; rank ties broken by index order.

    Classes without a single positive example are skipped.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64).T).T
    labels = np.atleast_2d(np.asarray(labels).T).T
    if scores.shape != labels.shape:
        raise InvalidInputError(
            f"scores {scores.shape} and labels {labels.shape} differ"
        )
    aps = []
    for c in range(scores.shape[1]):
        positives = labels[:, c] > 0
        if not positives.any():
            continue
        order = np.argsort(-scores[:, c], kind="stable")
        hits = positives[order]
        ranks = np.arange(1, len(hits) + 1)
        precision_at_hit = np.cumsum(hits) / ranks
        aps.append(precision_at_hit[hits].mean())
    if not aps:
        raise InvalidInputError("no class has a positive label")
    return float(np.mean(aps))


def _evaluate(probe: TrainedProbe, x, y, metric: str) -> float:
    if metric == "accuracy":
        return accuracy(probe.predict(x), y)
    return compute_map(probe.scores(x), y)


def _check_not_degenerate(task: ProbeTask):
    if task.task_type == "multiclass":
        if len(np.unique(task.labels)) < 2:
            raise InvalidTaskError(
                f"task {task.name}: all labels identical, nothing to learn"
            )
    else:
        col_any = task.labels.any(axis=0)
        col_all = task.labels.all(axis=0)
        if not np.any(col_any & ~col_all):
            raise InvalidTaskError(
                f"task {task.name}: no label column carries both positives and negatives"
            )


def train_probe(task: ProbeTask, cfg: MlpConfig = MlpConfig()) -> tuple[TrainedProbe, float]:
    """Train a probe and return it with its metric on the held-out split.

    The held-out split is ``task.holdout`` when provided, otherwise a seeded
    shuffle split of ``val_fraction``; with ``val_fraction == 0`` the metric
    is measured on the training points themselves.
    """
    _check_not_degenerate(task)
    rng = np.random.default_rng(cfg.seed)
    x, y = task.embeddings, task.labels
    if task.holdout is not None:
        x_eval = np.asarray(task.holdout[0], dtype=np.float64)
        y_eval = np.asarray(task.holdout[1])
        x_train, y_train = x, y
    elif cfg.val_fraction > 0:
        order = rng.permutation(len(x))
        n_eval = max(1, int(len(x) * cfg.val_fraction))
        eval_idx, train_idx = order[:n_eval], order[n_eval:]
        if len(train_idx) == 0:
            raise InvalidTaskError(f"task {task.name}: too few examples to split")
        x_train, y_train = x[train_idx], y[train_idx]
        x_eval, y_eval = x[eval_idx], y[eval_idx]
    else:
        x_train, y_train = x, y
        x_eval, y_eval = x, y

    mean, scale = None, None
    if cfg.standardize:
        mean = x_train.mean(axis=0)
        scale = x_train.std(axis=0)
        scale = np.where(scale < 1e-8, 1.0, scale)
        x_train = (x_train - mean) / scale

    n_out = task.n_classes
    params = _init_params(x.shape[1], cfg.hidden_width, n_out, cfg, rng)
    adam_m = {k: np.zeros_like(v) for k, v in params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    best_score = -np.inf
    best_params = {k: v.copy() for k, v in params.items()}
    stale = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x_train))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            _, grads = _loss_and_grads(params, x_train[batch], y_train[batch],
                                       task.task_type)
            step += 1
            for k in params:
                adam_m[k] = beta1 * adam_m[k] + (1 - beta1) * grads[k]
                adam_v[k] = beta2 * adam_v[k] + (1 - beta2) * grads[k] ** 2
                m_hat = adam_m[k] / (1 - beta1 ** step)
                v_hat = adam_v[k] / (1 - beta2 ** step)
                params[k] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        score = _evaluate(TrainedProbe(params, task.task_type, mean, scale),
                          x_eval, y_eval, task.metric)
        if score > best_score:
            best_score = score
            best_params = {k: v.copy() for k, v in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    probe = TrainedProbe(best_params, task.task_type, mean, scale)
    return probe, float(best_score)


def gradient_check(cfg: MlpConfig = MlpConfig(), task_type: str = "multiclass",
                   seed: int = 0, h: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs on a tiny 3-4-2 network so the full parameter sweep stays cheap.
    """
    if task_type not in TASK_TYPES:
        raise ConfigurationError(f"task_type must be one of {TASK_TYPES}")
    rng = np.random.default_rng(seed)
    dim, hidden, n_out, n = 3, 4, 2, 5
    params = {
        "W1": rng.normal(size=(dim, hidden)),
        "b1": rng.normal(size=hidden),
        "W2": rng.normal(size=(hidden, n_out)),
        "b2": rng.normal(size=n_out),
    }
    x = rng.normal(size=(n, dim))
    if task_type == "multiclass":
        y = rng.integers(0, n_out, size=n)
    else:
        y = rng.integers(0, 2, size=(n, n_out)).astype(np.float64)

    _, grads = _loss_and_grads(params, x, y, task_type)
    worst = 0.0
    for key in params:
        flat = params[key].reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + h
            loss_plus, _ = _loss_and_grads(params, x, y, task_type)
            flat[idx] = original - h
            loss_minus, _ = _loss_and_grads(params, x, y, task_type)
            flat[idx] = original
            numeric = (loss_plus - loss_minus) / (2 * h)
            analytic = grads[key].reshape(-1)[idx]
            denom = max(abs(numeric) + abs(analytic), 1e-8)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst


@dataclass(frozen=True)
class ScoreTable:
    per_task: dict[str, tuple[float, float, float]]  # raw, reference, normalized
    group_means: dict[str, float]
    overall_mean: float


def normalize_scores(raw: dict[str, float], reference: dict[str, float],
                     groups: dict[str, str]) -> ScoreTable:
    """Normalize each task score to 100 * raw / reference and aggregate."""
    per_task = {}
    by_group: dict[str, list[float]] = {}
    for name, score in raw.items():
        if name not in reference:
            raise ConfigurationError(f"no reference score for task {name!r}")
        ref = reference[name]
        if ref <= 0:
            raise ConfigurationError(f"reference for task {name!r} must be > 0, got {ref}")
        normalized = 100.0 * score / ref
        per_task[name] = (score, ref, normalized)
        group = groups.get(name)
        if group is not None:
            by_group.setdefault(group, []).append(normalized)
    if not per_task:
        raise ConfigurationError("no task scores to normalize")
    group_means = {g: float(np.mean(v)) for g, v in sorted(by_group.items())}
    overall = float(np.mean([v[2] for v in per_task.values()]))
    return ScoreTable(per_task=per_task, group_means=group_means, overall_mean=overall)


# ---------------------------------------------------------------------------
# Directory-based task ingestion (used by the CLI `probe` subcommand).
#
# <data_dir>/<task>/task.json   {"task_type": ..., "metric": ..., "n_classes": N}
# <data_dir>/<task>/train.gpav  embeddings for the training split
# <data_dir>/<task>/train.labels
# <data_dir>/<task>/test.gpav   held-out embeddings (optional)
# <data_dir>/<task>/test.labels
#
# Label files carry one label per line: a class id for multiclass tasks, a
# comma-separated 0/1 vector for multilabel tasks.
# ---------------------------------------------------------------------------


def _read_labels(path: Path, task_type: str) -> np.ndarray:
    lines = [line.strip() for line in path.read_text().splitlines() if line.strip()]
    if task_type == "multiclass":
        return np.asarray([int(line) for line in lines], dtype=np.int64)
    return np.asarray(
        [[float(v) for v in line.split(",")] for line in lines], dtype=np.float64
    )


def load_task_dir(task_dir: Path, group: str | None = None) -> ProbeTask:
    from .modelio import load_embeddings  # local import to keep modules decoupled

    task_dir = Path(task_dir)
    meta = json.loads((task_dir / "task.json").read_text())
    task_type, metric = meta["task_type"], meta["metric"]
    n_classes = int(meta["n_classes"])
    train = load_embeddings(task_dir / "train.gpav")
    labels = _read_labels(task_dir / "train.labels", task_type)
    holdout = None
    if (task_dir / "test.gpav").exists():
        test = load_embeddings(task_dir / "test.gpav")
        holdout = (test.vectors, _read_labels(task_dir / "test.labels", task_type))
    return ProbeTask(
        name=task_dir.name,
        embeddings=train.vectors,
        labels=labels,
        task_type=task_type,
        metric=metric,
        n_classes=n_classes,
        group=group,
        holdout=holdout,
    )


def load_references(path) -> tuple[dict[str, float], dict[str, str]]:
    """Reference-best scores and task grouping from a JSON map."""
    try:
        data = json.loads(Path(path).read_text())
        reference = {name: float(entry["reference"]) for name, entry in data.items()}
        groups = {
            name: entry["group"] for name, entry in data.items() if "group" in entry
        }
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad references file {path}: {exc}") from None
    return reference, groups
