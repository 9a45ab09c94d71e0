"""End-to-end orchestration: weak supervision -> pretrain -> finetune -> eval.

Stages are pure given (config, seed, data); reports therefore serialize to
byte-identical JSON across reruns. Wall-clock runtime is kept out of the
canonical JSON for exactly that reason (the run manifest carries it instead).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from labelqc.data import (
    CrowdLabel,
    FeatureVector,
    LabelType,
    sample_downstream,
    split,
)
from labelqc.errors import DataError
from labelqc.features import featurize_batch, infra_arrays
from labelqc.geo import ClusterIndex, Infrastructure, fast_clustered
from labelqc.labelmodel import LabelModelParams, SoftLabel, fit, hard_rule, predict_soft
from labelqc.lf import LFConfig, LFStats, REGISTRY, analyze, apply_all
from labelqc.model import (
    FeatureSchema,
    ModelBundle,
    default_schema,
    encode_features,
    forward,
    init_bundle,
    tokenize_batch,
)
from labelqc.training import TrainConfig, TrainHistory, train


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    cluster_threshold_m: float = 10.0
    lf: LFConfig = field(default_factory=LFConfig)
    # Uniform prior a la common weak-supervision tooling; None lets EM
    # re-estimate it each M-step (only safe when LFs vote both ways).
    class_balance: Optional[float] = 0.5
    lm_max_iters: int = 100
    lm_tol: float = 1e-6
    pretrain: TrainConfig = field(default_factory=TrainConfig.pretrain)
    finetune: TrainConfig = field(default_factory=TrainConfig.finetune)
    # Independent pretraining inits; the best-validation run is kept. A small
    # d=4 network occasionally starts in a basin it cannot leave at lr 1e-4.
    pretrain_restarts: int = 1
    threshold: float = 0.5
    finetune_val_fraction: float = 0.2

    @staticmethod
    def from_file(path: str | Path) -> "PipelineConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        kwargs = dict(raw)
        if "lf" in kwargs:
            lf_raw = kwargs.pop("lf")
            for key in ("severity_extremes", "correct_way_types", "wrong_way_types"):
                if key in lf_raw:
                    lf_raw[key] = frozenset(lf_raw[key])
            kwargs["lf"] = LFConfig(**lf_raw)
        if "pretrain" in kwargs:
            kwargs["pretrain"] = TrainConfig.pretrain(**kwargs.pop("pretrain"))
        if "finetune" in kwargs:
            kwargs["finetune"] = TrainConfig.finetune(**kwargs.pop("finetune"))
        return PipelineConfig(**kwargs)


class StageError(RuntimeError):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as e:  # noqa: BLE001 - tagged and re-raised
        raise StageError(name, e) from e


# ---------------------------------------------------------------------------
# metrics


def _prf(tp: int, fp: int, tn: int, fn: int) -> dict:
    total = tp + fp + tn + fn
    accuracy = (tp + tn) / total if total else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    recall_neg = tn / (tn + fp) if tn + fp else 0.0
    return {
        "accuracy": accuracy,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "balanced_accuracy": 0.5 * (recall + recall_neg),
        "confusion": {"tp": tp, "fp": fp, "tn": tn, "fn": fn},
    }


@dataclass
class EvalReport:
    """Threshold metrics overall and per label type (positive class: correct).

    Natural-ratio metrics are computed on the test set as given; the balanced
    accuracy reweights the two classes equally since the paper's test mix is
    unspecified.
    """

    overall: dict
    per_type: dict[str, dict]
    n_test: int
    threshold: float
    model_version: str
    runtime_s: float = 0.0

    @property
    def accuracy(self) -> float:
        return self.overall["accuracy"]

    @property
    def f1(self) -> float:
        return self.overall["f1"]

    def to_dict(self, deterministic: bool = True) -> dict:
        out = {
            "overall": self.overall,
            "per_type": self.per_type,
            "n_test": self.n_test,
            "threshold": self.threshold,
            "model_version": self.model_version,
        }
        if not deterministic:
            out["runtime_s"] = self.runtime_s
        return out

    def to_json(self, deterministic: bool = True) -> str:
        return json.dumps(self.to_dict(deterministic), sort_keys=True, indent=2)

    def as_table(self) -> str:
        o = self.overall
        lines = [
            f"n={self.n_test} threshold={self.threshold} model={self.model_version}",
            f"accuracy={o['accuracy']:.3f} precision={o['precision']:.3f} "
            f"recall={o['recall']:.3f} f1={o['f1']:.3f} balanced_acc={o['balanced_accuracy']:.3f}",
            f"{'label type':<18} {'n':>5} {'F1':>7} {'acc':>7}",
        ]
        for name, m in self.per_type.items():
            n = sum(m["confusion"].values())
            lines.append(f"{name:<18} {n:>5} {m['f1']:>7.3f} {m['accuracy']:>7.3f}")
        return "\n".join(lines)


def compute_report(
    p: np.ndarray,
    verdicts: np.ndarray,
    label_types: Sequence[LabelType],
    threshold: float,
    model_version: str,
) -> EvalReport:
    pred = p >= threshold
    truth = verdicts.astype(bool)
    types = np.array([int(t) for t in label_types])

    def counts(mask):
        tp = int(np.sum(pred & truth & mask))
        fp = int(np.sum(pred & ~truth & mask))
        tn = int(np.sum(~pred & ~truth & mask))
        fn = int(np.sum(~pred & truth & mask))
        return _prf(tp, fp, tn, fn)

    overall = counts(np.ones_like(truth, dtype=bool))
    per_type = {
        lt.name: counts(types == int(lt)) for lt in LabelType if np.any(types == int(lt))
    }
    return EvalReport(
        overall=overall,
        per_type=per_type,
        n_test=len(p),
        threshold=threshold,
        model_version=model_version,
    )


def auc_score(p: np.ndarray, truth: np.ndarray) -> float:
    """Rank-based AUC with tie handling (midranks)."""
    p = np.asarray(p, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    order = np.argsort(p, kind="mergesort")
    ranks = np.empty(len(p))
    ranks[order] = np.arange(1, len(p) + 1)
    # midranks for ties
    sorted_p = p[order]
    i = 0
    while i < len(p):
        j = i
        while j + 1 < len(p) and sorted_p[j + 1] == sorted_p[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    pos = truth.sum()
    neg = len(p) - pos
    if pos == 0 or neg == 0:
        raise DataError("AUC undefined for single-class truth")
    return float((ranks[truth].sum() - pos * (pos + 1) / 2) / (pos * neg))


# ---------------------------------------------------------------------------
# featurization helpers


def featurize_against_index(
    labels: Sequence[CrowdLabel], infra: Infrastructure, index: ClusterIndex
) -> list[FeatureVector]:
    """Features for held-out labels using history clusters (the online view)."""
    feats, _ = featurize_batch(labels, infra, index=index)
    return feats


def predict_bundle(bundle: ModelBundle, features: Sequence[FeatureVector]) -> np.ndarray:
    x_num, x_cat = encode_features(features, bundle.schema)
    p, _ = forward(tokenize_batch(x_num, x_cat, bundle), bundle, dropout_active=False)
    return np.atleast_1d(p)


# ---------------------------------------------------------------------------
# pipeline stages


@dataclass
class PretrainResult:
    bundle: ModelBundle
    label_model: LabelModelParams
    lf_stats: LFStats
    index: ClusterIndex
    history: TrainHistory
    split_warnings: tuple[str, ...]
    n_raw: int
    n_covered: int


def pretrain_run(
    raw: Sequence[CrowdLabel],
    infra: Infrastructure,
    cfg: PipelineConfig,
    registry=REGISTRY,
    schema: Optional[FeatureSchema] = None,
) -> PretrainResult:
    """PWS annotation of the raw corpus, then from-scratch pretraining."""
    if any(lb.expert_verdict is not None for lb in raw):
        raise StageError("ingest", DataError("pretraining corpus must be unannotated"))
    if not raw:
        raise StageError("ingest", DataError("pretraining corpus is empty"))
    feats, index = _stage(
        "featurize", featurize_batch, raw, infra, cfg.cluster_threshold_m
    )
    votes = _stage("labeling-functions", apply_all, feats, cfg.lf, registry)
    lf_stats = _stage("lf-analysis", analyze, votes)
    params = _stage(
        "label-model",
        fit,
        votes,
        max_iters=cfg.lm_max_iters,
        tol=cfg.lm_tol,
        seed=cfg.seed,
        class_balance=cfg.class_balance,
    )
    soft = _stage("label-model", predict_soft, votes, params)

    # Uncovered rows carry nothing but the prior; drop them from pretraining.
    kept = [i for i, s in enumerate(soft) if s.covered]
    if not kept:
        raise StageError("label-model", DataError("no covered rows to pretrain on"))
    kept_labels = [raw[i] for i in kept]
    kept_feats = [feats[i] for i in kept]
    kept_soft = [soft[i] for i in kept]
    classes = [s.p_correct >= 0.5 for s in kept_soft]
    ds = _stage("split", split, kept_labels, cfg.seed, classes)

    train_set = [(kept_feats[i], kept_soft[i]) for i in ds.train]
    val_set = [(kept_feats[i], kept_soft[i]) for i in ds.validation]
    train_cfg = replace(cfg.pretrain, seed=cfg.seed, mode="pretrain")
    trained, history = None, None
    for restart in range(max(1, cfg.pretrain_restarts)):
        bundle = init_bundle(
            schema or default_schema(), seed=cfg.seed + 7919 * restart, version=f"pt-{cfg.seed}"
        )
        cand, cand_history = _stage("train", train, train_set, val_set, bundle, train_cfg)
        if history is None or min(cand_history.val_loss) < min(history.val_loss):
            trained, history = cand, cand_history
    trained.version = f"pt-{cfg.seed}"
    return PretrainResult(
        bundle=trained,
        label_model=params,
        lf_stats=lf_stats,
        index=index,
        history=history,
        split_warnings=ds.warnings,
        n_raw=len(raw),
        n_covered=len(kept),
    )


@dataclass
class FinetuneResult:
    bundle: ModelBundle
    history: TrainHistory
    sample_ids: tuple[str, ...]


def finetune_run(
    bundle: ModelBundle,
    expert: Sequence[CrowdLabel],
    infra: Infrastructure,
    index: ClusterIndex,
    k_per_type: int,
    cfg: PipelineConfig,
) -> FinetuneResult:
    """End-to-end fine-tuning on a small expert-validated downstream sample."""
    sample = _stage("sample", sample_downstream, expert, k_per_type, cfg.seed)
    feats = _stage("featurize", featurize_against_index, sample, infra, index)
    targets = [SoftLabel(1.0 if lb.expert_verdict else 0.0, True) for lb in sample]

    # Hold out a stratified slice of the sample for early stopping.
    rng = np.random.default_rng(cfg.seed)
    by_cell: dict[tuple[int, bool], list[int]] = {}
    for i, lb in enumerate(sample):
        by_cell.setdefault((int(lb.label_type), bool(lb.expert_verdict)), []).append(i)
    val_idx: set[int] = set()
    for key in sorted(by_cell):
        idx = np.array(by_cell[key])
        rng.shuffle(idx)
        n_val = max(1, int(round(len(idx) * cfg.finetune_val_fraction)))
        val_idx.update(int(i) for i in idx[:n_val])
    train_set = [(feats[i], targets[i]) for i in range(len(sample)) if i not in val_idx]
    val_set = [(feats[i], targets[i]) for i in sorted(val_idx)]

    train_cfg = replace(cfg.finetune, seed=cfg.seed, mode="finetune")
    tuned, history = _stage("train", train, train_set, val_set, bundle, train_cfg)
    tuned.version = f"{bundle.version}+ft{k_per_type}-{cfg.seed}"
    return FinetuneResult(
        bundle=tuned,
        history=history,
        sample_ids=tuple(lb.id for lb in sample),
    )


def evaluate(
    bundle: ModelBundle,
    test: Sequence[CrowdLabel],
    infra: Infrastructure,
    index: ClusterIndex,
    threshold: float = 0.5,
) -> EvalReport:
    """Threshold metrics of the bundle against expert verdicts."""
    if not test:
        raise StageError("evaluate", DataError("test set is empty"))
    if any(lb.expert_verdict is None for lb in test):
        raise StageError("evaluate", DataError("test labels need expert verdicts"))
    t0 = time.perf_counter()
    feats = _stage("featurize", featurize_against_index, test, infra, index)
    p = predict_bundle(bundle, feats)
    verdicts = np.array([bool(lb.expert_verdict) for lb in test])
    report = compute_report(
        p, verdicts, [lb.label_type for lb in test], threshold, bundle.version
    )
    report.runtime_s = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# baselines


def _logreg_design(
    features: Sequence[FeatureVector], schema: FeatureSchema, stats=None
):
    x_num, x_cat = encode_features(features, schema)
    if stats is None:
        mean = x_num.mean(axis=0)
        std = x_num.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
    else:
        mean, std = stats
    cols = [(x_num - mean) / std]
    for j, f in enumerate(schema.categorical):
        onehot = np.zeros((len(features), f.cardinality))
        onehot[np.arange(len(features)), x_cat[:, j]] = 1.0
        cols.append(onehot)
    return np.hstack(cols), (mean, std)


def baseline_logreg(
    train_labels: Sequence[CrowdLabel],
    test_labels: Sequence[CrowdLabel],
    infra: Infrastructure,
    index: ClusterIndex,
    threshold: float = 0.5,
    l2: float = 1e-2,
    lr: float = 0.5,
    max_iters: int = 5000,
    tol: float = 1e-7,
) -> EvalReport:
    """L2-regularized logistic regression on the one-hot-expanded features.

    Trained from scratch on the expert sample alone (no pretraining), by
    full-batch gradient descent until the gradient norm falls under tol.
    """
    if any(lb.expert_verdict is None for lb in train_labels):
        raise StageError("baseline", DataError("baseline training needs expert verdicts"))
    y = np.array([bool(lb.expert_verdict) for lb in train_labels], dtype=np.float64)
    if y.min() == y.max():
        raise StageError("baseline", DataError("baseline training set has a single class"))
    schema = default_schema()
    feats = featurize_against_index(train_labels, infra, index)
    X, stats = _logreg_design(feats, schema)
    n, dim = X.shape
    w = np.zeros(dim)
    b = 0.0
    for _ in range(max_iters):
        z = X @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        gw = X.T @ (p - y) / n + l2 * w
        gb = float(np.mean(p - y))
        w -= lr * gw
        b -= lr * gb
        if np.sqrt(np.sum(gw * gw) + gb * gb) < tol:
            break
    t_feats = featurize_against_index(test_labels, infra, index)
    Xt, _ = _logreg_design(t_feats, schema, stats)
    pt = 1.0 / (1.0 + np.exp(-(Xt @ w + b)))
    verdicts = np.array([bool(lb.expert_verdict) for lb in test_labels])
    return compute_report(
        pt, verdicts, [lb.label_type for lb in test_labels], threshold, "logreg"
    )


def hard_rule_report(
    features: Sequence[FeatureVector],
    verdicts: np.ndarray,
    label_types: Sequence[LabelType],
    rule_table: dict[LabelType, str],
    lf_cfg: LFConfig,
    threshold: float = 0.5,
) -> EvalReport:
    """EvalReport for the single-designated-rule baseline."""
    soft = hard_rule(features, rule_table, lf_cfg)
    p = np.array([s.p_correct for s in soft])
    return compute_report(p, verdicts, label_types, threshold, "hard-rule")


# ---------------------------------------------------------------------------
# interpretation


@dataclass
class ImportanceReport:
    """Attention mass from [CLS] to each feature token, per label type."""

    per_type: dict[str, list[tuple[str, float]]]

    def top(self, label_type: LabelType, k: int = 3) -> list[tuple[str, float]]:
        return self.per_type[label_type.name][:k]

    def to_dict(self) -> dict:
        return {
            name: [{"feature": f, "coefficient": c} for f, c in rows]
            for name, rows in self.per_type.items()
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def as_table(self) -> str:
        lines = []
        for name, rows in self.per_type.items():
            top = ", ".join(f"{f}={c:.3f}" for f, c in rows[:3])
            lines.append(f"{name:<18} {top}")
        return "\n".join(lines)


def feature_importance(
    bundle: ModelBundle, features: Sequence[FeatureVector]
) -> ImportanceReport:
    """[CLS]-to-feature attention in the final encoder layer, per label type.

    The final layer's [CLS] row feeds the classification head directly, so it
    is the one whose attention reflects what the decision reads; earlier
    layers mostly mix feature tokens and averaging them in dilutes the signal.
    Coefficients are averaged over heads and examples, then renormalized over
    the feature tokens.
    """
    if not features:
        raise DataError("feature importance needs a nonempty feature list")
    names = bundle.schema.feature_names()
    by_type: dict[int, list[FeatureVector]] = {}
    for fv in features:
        by_type.setdefault(fv.label_type, []).append(fv)
    out: dict[str, list[tuple[str, float]]] = {}
    for code in sorted(by_type):
        group = by_type[code]
        x_num, x_cat = encode_features(group, bundle.schema)
        _, attns = forward(tokenize_batch(x_num, x_cat, bundle), bundle, dropout_active=False)
        # attns[layer]: (B, heads, T, T); row 0 is the [CLS] query.
        coeff = attns[-1][:, :, 0, 1:].mean(axis=(0, 1))
        coeff = coeff / coeff.sum()
        order = sorted(range(len(names)), key=lambda i: (-coeff[i], i))
        out[LabelType(code).name] = [(names[i], float(coeff[i])) for i in order]
    return ImportanceReport(per_type=out)


# ---------------------------------------------------------------------------
# ablation


@dataclass
class AblationResult:
    full: EvalReport
    ablated: EvalReport
    full_registry: tuple[str, ...]
    ablated_registry: tuple[str, ...]
    dropped: str


def ablate_lf(
    raw: Sequence[CrowdLabel],
    expert: Sequence[CrowdLabel],
    test: Sequence[CrowdLabel],
    lf_to_drop: str,
    cfg: PipelineConfig,
    infra: Infrastructure,
    k_per_type: int = 40,
) -> AblationResult:
    """Paired full-vs-ablated pipeline runs sharing every seed."""
    names = [name for name, _ in REGISTRY]
    if lf_to_drop not in names:
        raise DataError(f"unknown LF name {lf_to_drop!r}; registry has {names}")
    reduced = tuple((n, f) for n, f in REGISTRY if n != lf_to_drop)

    reports = []
    for registry in (REGISTRY, reduced):
        pre = pretrain_run(raw, infra, cfg, registry=registry)
        ft = finetune_run(pre.bundle, expert, infra, pre.index, k_per_type, cfg)
        reports.append(evaluate(ft.bundle, test, infra, pre.index, cfg.threshold))
    return AblationResult(
        full=reports[0],
        ablated=reports[1],
        full_registry=tuple(names),
        ablated_registry=tuple(n for n, _ in reduced),
        dropped=lf_to_drop,
    )
