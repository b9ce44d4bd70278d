"""Metrics, leave-one-participant-out harness, and report emission."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, neuralprocess as npmod
from .features import FeatureMatrix

LOG_LOSS_CLIP = 1e-15
ACCURACY_THRESHOLD = 0.5
GENERAL_MODELS = ("lasso", "svm", "knn")
OTHER_STRATEGY_NAME = "other"


class UndefinedMetricError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def roc_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """P(score+ > score-) + 0.5 P(tie), via midranks."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("roc_auc needs both classes")
    ranks = _midranks(scores)
    rank_sum_pos = ranks[labels == 1].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _midranks(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    s = scores[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def average_precision(labels: np.ndarray, scores: np.ndarray) -> float:
    """Recall-step-weighted precision over descending score thresholds."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise UndefinedMetricError("average_precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    y = labels[order]
    s = scores[order]
    tp = fp = 0
    prev_recall = 0.0
    ap = 0.0
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        tp += int((y[i : j + 1] == 1).sum())
        fp += int((y[i : j + 1] == 0).sum())
        recall = tp / n_pos
        precision = tp / (tp + fp)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return float(ap)


def log_loss(labels: np.ndarray, probs: np.ndarray) -> float:
    labels = np.asarray(labels, dtype=np.float64)
    p = np.clip(np.asarray(probs, dtype=np.float64), LOG_LOSS_CLIP, 1.0 - LOG_LOSS_CLIP)
    return float(-(labels * np.log(p) + (1 - labels) * np.log(1 - p)).mean())


def accuracy(labels: np.ndarray, scores: np.ndarray, threshold: float = ACCURACY_THRESHOLD) -> float:
    labels = np.asarray(labels)
    pred = (np.asarray(scores) >= threshold).astype(int)
    return float((pred == labels).mean())


def roc_curve_points(labels: np.ndarray, scores: np.ndarray) -> list[tuple[float, float]]:
    """(fpr, tpr) at each distinct threshold, descending, from (0,0) to (1,1)."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("roc curve needs both classes")
    order = np.argsort(-scores, kind="stable")
    y = labels[order]
    s = scores[order]
    pts = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        tp += int((y[i : j + 1] == 1).sum())
        fp += int((y[i : j + 1] == 0).sum())
        pts.append((fp / n_neg, tp / n_pos))
        i = j + 1
    return pts


def pr_curve_points(labels: np.ndarray, scores: np.ndarray) -> list[tuple[float, float]]:
    """(recall, precision) at each distinct threshold, starting at (0, 1)."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise UndefinedMetricError("pr curve needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    y = labels[order]
    s = scores[order]
    pts = [(0.0, 1.0)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        tp += int((y[i : j + 1] == 1).sum())
        fp += int((y[i : j + 1] == 0).sum())
        pts.append((tp / n_pos, tp / (tp + fp)))
        i = j + 1
    return pts


# ---------------------------------------------------------------------------
# LOPO harness
# ---------------------------------------------------------------------------


@dataclass
class FoldResult:
    test_participant_id: str
    model: str
    strategy: str  # "" for general models
    window_start_s: np.ndarray
    labels: np.ndarray
    scores: np.ndarray
    train_participant_ids: tuple[str, ...] = ()


@dataclass
class MetricsRow:
    model: str
    strategy: str
    scope: str  # "fold" | "pooled"
    participant_id: str
    auc: float | None
    average_precision: float | None
    log_loss: float
    accuracy: float


@dataclass
class MetricsReport:
    folds: list[FoldResult] = field(default_factory=list)
    rows: list[MetricsRow] = field(default_factory=list)
    curves: list[tuple[str, str, str, float, float]] = field(default_factory=list)
    models: dict[tuple[str, str, str], object] = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"
    models: tuple[str, ...] = GENERAL_MODELS
    strategies: tuple[str, ...] = ("baseline", "random")
    include_other_participant: bool = True
    test_context_size: int = npmod.TEST_CONTEXT_SIZE
    seed: int = 0
    # neural-process scores per fold are the mean over this many
    # independently seeded trainings; single small-net runs on a small
    # cohort are high-variance, and folds must not hinge on one draw
    np_ensemble: int = 3
    train: npmod.TrainConfig = field(default_factory=npmod.TrainConfig)


def derive_seed(base_seed: int, *parts: str) -> int:
    """Stable per-fold seed: mixes the base seed with labeled parts."""
    digest = hashlib.blake2b("/".join(parts).encode(), digest_size=8).digest()
    return (int(base_seed) ^ int.from_bytes(digest, "little")) % (2**63)


def run_fold(
    matrix: FeatureMatrix, test_pid: str, cfg: ExperimentConfig
) -> tuple[list[FoldResult], dict]:
    """All model evaluations for one held-out participant."""
    test_fm = matrix.for_participant(test_pid)
    train_fm = matrix.excluding_participant(test_pid)
    train_pids = tuple(train_fm.participants())
    assert test_pid not in train_pids

    results: list[FoldResult] = []
    fitted: dict[tuple[str, str], object] = {}
    x_train, y_train = train_fm.X(), train_fm.y()
    x_test, y_test = test_fm.X(), test_fm.y()
    starts = np.array([r.window_start_s for r in test_fm.rows])

    if any(m in cfg.models for m in GENERAL_MODELS):
        scaler = baselines.scaler_fit(x_train)
        xs_train = baselines.scaler_apply(scaler, x_train)
        xs_test = baselines.scaler_apply(scaler, x_test)
        fitted[("scaler", "")] = scaler
        for name in cfg.models:
            if name == "lasso":
                model = baselines.lasso_train(xs_train, y_train)
                scores = baselines.lasso_proba(model, xs_test)
            elif name == "svm":
                model = baselines.svm_train(xs_train, y_train)
                scores = baselines.svm_proba(model, xs_test)
            elif name == "knn":
                model = baselines.knn_train(xs_train, y_train)
                scores = baselines.knn_proba(model, xs_test)
            else:
                raise ConfigError(f"unknown model {name!r}")
            fitted[(name, "")] = model
            results.append(FoldResult(test_pid, name, "", starts, y_test, scores, train_pids))

    per_pid = {pid: train_fm.for_participant(pid) for pid in train_pids}
    for k, strategy in enumerate(cfg.strategies):
        if strategy == "tasks" and cfg.dataset == "wesad":
            raise ConfigError("the tasks strategy is not defined for wesad recordings")
        members = []
        for j in range(max(cfg.np_ensemble, 1)):
            train_cfg = npmod.TrainConfig(
                epochs=cfg.train.epochs,
                learning_rate=cfg.train.learning_rate,
                context_min=cfg.train.context_min,
                context_max=cfg.train.context_max,
                strategy=strategy,
                seed=derive_seed(cfg.seed, test_pid, strategy, f"train{j}"),
                kl_warmup_epochs=cfg.train.kl_warmup_epochs,
                lr_decay_to=cfg.train.lr_decay_to,
                z_source_train=cfg.train.z_source_train,
                kl_direction=cfg.train.kl_direction,
            )
            members.append(npmod.train_np([per_pid[pid] for pid in train_pids], train_cfg))
        fitted[("np", strategy)] = members[0]

        ctx_rng = np.random.default_rng(derive_seed(cfg.seed, test_pid, strategy, "context"))
        context, excluded = npmod.select_context(
            test_fm, strategy, cfg.test_context_size, ctx_rng
        )
        keep = [i for i, r in enumerate(test_fm.rows) if r.window_start_s not in excluded]
        tgt_x = x_test[keep]
        tgt_y = y_test[keep]
        tgt_starts = starts[keep]
        scores = np.mean([npmod.np_predict(m, context, tgt_x) for m in members], axis=0)
        results.append(FoldResult(test_pid, "np", strategy, tgt_starts, tgt_y, scores, train_pids))

        # other-participant context: last listed strategy, same targets
        if cfg.include_other_participant and k == len(cfg.strategies) - 1:
            donor_rng = np.random.default_rng(derive_seed(cfg.seed, test_pid, strategy, "donor"))
            donor = train_pids[int(donor_rng.integers(len(train_pids)))]
            donor_context, _ = npmod.select_context(
                per_pid[donor], strategy, cfg.test_context_size, donor_rng
            )
            other_scores = np.mean(
                [npmod.np_predict(m, donor_context, tgt_x) for m in members], axis=0
            )
            results.append(
                FoldResult(test_pid, "np", OTHER_STRATEGY_NAME, tgt_starts, tgt_y,
                           other_scores, train_pids)
            )

    return results, fitted


def run_experiment(matrix: FeatureMatrix, cfg: ExperimentConfig, jobs: int = 1) -> MetricsReport:
    """Leave-one-participant-out evaluation of every configured model.

    Each fold trains exclusively on the other participants (scaler included)
    and is internally deterministic via seeds derived from the base seed and
    the held-out participant id, so fold order and parallelism never change
    the report.
    """
    pids = matrix.participants()
    if len(pids) < 2:
        raise ConfigError("need >= 2 participants")
    for strategy in cfg.strategies:
        if strategy not in npmod.STRATEGIES:
            raise ConfigError(f"unknown strategy {strategy!r}")
        if strategy == "tasks" and cfg.dataset == "wesad":
            raise ConfigError("the tasks strategy is not defined for wesad recordings")
    for name in cfg.models:
        if name not in GENERAL_MODELS:
            raise ConfigError(f"unknown model {name!r}")

    report = MetricsReport()
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(run_fold, [matrix] * len(pids), pids, [cfg] * len(pids)))
    else:
        outs = [run_fold(matrix, pid, cfg) for pid in pids]

    for pid, (results, fitted) in zip(pids, outs):
        report.folds.extend(results)
        for (name, strategy), model in fitted.items():
            report.models[(name, strategy, pid)] = model

    _assemble(report)
    return report


def _metric_row(model: str, strategy: str, scope: str, pid: str,
                labels: np.ndarray, scores: np.ndarray) -> MetricsRow:
    try:
        auc = roc_auc(labels, scores)
    except UndefinedMetricError:
        auc = None
    try:
        ap = average_precision(labels, scores)
    except UndefinedMetricError:
        ap = None
    return MetricsRow(model, strategy, scope, pid, auc, ap,
                      log_loss(labels, scores), accuracy(labels, scores))


def _assemble(report: MetricsReport) -> None:
    keys = sorted({(f.model, f.strategy) for f in report.folds})
    for model, strategy in keys:
        group = [f for f in report.folds if (f.model, f.strategy) == (model, strategy)]
        group.sort(key=lambda f: f.test_participant_id)
        for f in group:
            report.rows.append(
                _metric_row(model, strategy, "fold", f.test_participant_id, f.labels, f.scores)
            )
        labels = np.concatenate([f.labels for f in group])
        scores = np.concatenate([f.scores for f in group])
        report.rows.append(_metric_row(model, strategy, "pooled", "", labels, scores))
        try:
            for x, y in roc_curve_points(labels, scores):
                report.curves.append((model, strategy, "roc", x, y))
            for x, y in pr_curve_points(labels, scores):
                report.curves.append((model, strategy, "pr", x, y))
        except UndefinedMetricError:
            pass


def pooled_metric(report: MetricsReport, model: str, strategy: str, name: str):
    for row in report.rows:
        if (row.model, row.strategy, row.scope) == (model, strategy, "pooled"):
            return getattr(row, name)
    raise KeyError(f"no pooled row for ({model!r}, {strategy!r})")


# ---------------------------------------------------------------------------
# report files (deterministic row order)
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def write_metrics_csv(report: MetricsReport, path: str | Path) -> None:
    rows = sorted(
        report.rows, key=lambda r: (r.model, r.strategy, r.scope, r.participant_id)
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["model", "strategy", "scope", "participant_id", "auc", "average_precision",
             "log_loss", "accuracy"]
        )
        for r in rows:
            writer.writerow(
                [r.model, r.strategy, r.scope, r.participant_id, _fmt(r.auc),
                 _fmt(r.average_precision), _fmt(r.log_loss), _fmt(r.accuracy)]
            )


def write_curves_csv(report: MetricsReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "strategy", "curve", "x", "y"])
        for model, strategy, curve, x, y in report.curves:
            writer.writerow([model, strategy, curve, _fmt(x), _fmt(y)])


def write_predictions_csv(report: MetricsReport, path: str | Path) -> None:
    folds = sorted(report.folds, key=lambda f: (f.model, f.strategy, f.test_participant_id))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "strategy", "participant_id", "window_start_s", "label", "score"])
        for f in folds:
            for start, label, score in zip(f.window_start_s, f.labels, f.scores):
                writer.writerow(
                    [f.model, f.strategy, f.test_participant_id, _fmt(start), int(label), _fmt(score)]
                )


def read_predictions_csv(path: str | Path) -> dict[tuple[str, str], tuple[np.ndarray, np.ndarray]]:
    """(model, strategy) -> (labels, scores) pooled over participants."""
    groups: dict[tuple[str, str], list[tuple[int, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            groups.setdefault((row["model"], row["strategy"]), []).append(
                (int(row["label"]), float(row["score"]))
            )
    return {
        key: (np.array([v[0] for v in vals]), np.array([v[1] for v in vals]))
        for key, vals in groups.items()
    }
