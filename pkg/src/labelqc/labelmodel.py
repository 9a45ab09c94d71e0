"""Generative aggregation of LF votes into noise-aware probabilistic labels.

The model is conditionally independent given the true class: each LF j has an
accuracy alpha_j (chance its non-abstain vote matches the truth), a propensity
beta_j (chance it votes at all), and the data share a class prior pi. Fitting
is plain EM on the two-class product likelihood; correlations between LFs are
deliberately not modeled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from labelqc.data import FeatureVector, LabelType
from labelqc.errors import DataError, NumericError
from labelqc.lf import ABSTAIN, CORRECT, REGISTRY, WRONG, LFConfig, VoteMatrix

ALPHA_MAX = 0.95
# Accuracies never drop below chance: the registry declares each LF's
# polarity, so a fitted "inverted" LF would contradict its contract. The floor
# blocks the label-flip degeneracy that correlated one-sided LFs can induce.
ALPHA_MIN = 0.5
_PI_EPS = 1e-6


@dataclass(frozen=True)
class LabelModelParams:
    alpha: np.ndarray  # per-LF accuracy, clamped to [0.05, 0.95]
    beta: np.ndarray  # per-LF propensity (non-abstain rate)
    pi: float  # class prior for Correct
    log_likelihood_trace: tuple[float, ...]
    lf_names: tuple[str, ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "lf_names": list(self.lf_names),
                "alpha": [float(a) for a in self.alpha],
                "beta": [float(b) for b in self.beta],
                "pi": self.pi,
                "log_likelihood_trace": list(self.log_likelihood_trace),
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "LabelModelParams":
        raw = json.loads(text)
        return LabelModelParams(
            alpha=np.array(raw["alpha"], dtype=np.float64),
            beta=np.array(raw["beta"], dtype=np.float64),
            pi=float(raw["pi"]),
            log_likelihood_trace=tuple(raw["log_likelihood_trace"]),
            lf_names=tuple(raw["lf_names"]),
        )


@dataclass(frozen=True)
class SoftLabel:
    p_correct: float
    covered: bool


def _posteriors(C: np.ndarray, W: np.ndarray, alpha: np.ndarray, pi: float) -> np.ndarray:
    # Posterior log-odds; abstain and propensity factors cancel between the
    # two class branches.
    w = np.log(alpha) - np.log1p(-alpha)
    logit = np.log(pi) - np.log1p(-pi) + C @ w - W @ w
    return 1.0 / (1.0 + np.exp(-logit))


def _log_likelihood(
    C: np.ndarray, W: np.ndarray, A: np.ndarray, alpha: np.ndarray, beta: np.ndarray, pi: float
) -> float:
    beta = np.clip(beta, 1e-12, 1.0 - 1e-12)
    la, lna = np.log(alpha), np.log1p(-alpha)
    lb, lnb = np.log(beta), np.log1p(-beta)
    # log P(row | Y=Correct) and log P(row | Y=Wrong)
    ll_c = C @ (lb + la) + W @ (lb + lna) + A @ lnb
    ll_w = C @ (lb + lna) + W @ (lb + la) + A @ lnb
    hi = np.maximum(ll_c + np.log(pi), ll_w + np.log1p(-pi))
    lo = np.minimum(ll_c + np.log(pi), ll_w + np.log1p(-pi))
    return float(np.sum(hi + np.log1p(np.exp(lo - hi))))


def fit(
    matrix: VoteMatrix,
    max_iters: int = 100,
    tol: float = 1e-6,
    seed: int = 0,
    class_balance: Optional[float] = None,
    cavity: bool = False,
) -> LabelModelParams:
    """EM for the per-LF accuracy/propensity model.

    Initialization is deterministic (alpha 0.7, beta from coverage, pi 0.5);
    the seed parameter is accepted for interface symmetry with the rest of the
    pipeline but does not influence the fit.

    When class_balance is given, the prior is pinned there instead of being
    re-estimated each M-step. A learned prior is only identifiable when LFs
    vote both ways; with a mostly one-sided registry it drifts degenerate, so
    the pipeline pins it (see the majority of weak-supervision tooling, which
    treats class balance as an input).

    cavity=True scores each LF against the leave-its-own-vote-out posterior
    in the M-step. Plain EM lets a one-sided LF ratchet itself up: its own
    vote raises the posterior on its rows, which raises its agreement, until
    even a noise LF pins at the ceiling. The cavity estimate uses independent
    evidence only, at the cost of the strict EM monotonicity guarantee (the
    likelihood trace is still recorded).
    """
    v = matrix.votes
    if v.shape[0] == 0 or not matrix.covered().any():
        raise DataError("cannot fit label model: no covered rows")
    C = (v == CORRECT).astype(np.float64)
    W = (v == WRONG).astype(np.float64)
    A = (v == ABSTAIN).astype(np.float64)
    n, m = v.shape

    nonabs = C + W
    votes_per_lf = nonabs.sum(axis=0)
    alpha = np.full(m, 0.7)
    beta = votes_per_lf / n
    pi = 0.5 if class_balance is None else float(class_balance)
    if not _PI_EPS <= pi <= 1.0 - _PI_EPS:
        raise DataError(f"class_balance must be inside (0,1), got {pi}")
    trace = []
    signed = C - W  # +1 correct vote, -1 wrong vote, 0 abstain
    for it in range(max_iters):
        p = _posteriors(C, W, alpha, pi)
        ll = _log_likelihood(C, W, A, alpha, beta, pi)
        if not np.isfinite(ll):
            raise NumericError(f"label model log-likelihood became non-finite at iteration {it}")
        trace.append(ll)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < tol:
            break
        if cavity:
            w = np.log(alpha) - np.log1p(-alpha)
            logit_full = np.log(pi) - np.log1p(-pi) + signed @ w
            # (n, m): posterior with column j's own vote subtracted out
            logit_cav = logit_full[:, None] - signed * w[None, :]
            p_cav = 1.0 / (1.0 + np.exp(-logit_cav))
            agree = (C * p_cav + W * (1.0 - p_cav)).sum(axis=0)
        else:
            agree = C.T @ p + W.T @ (1.0 - p)
        with np.errstate(invalid="ignore"):
            new_alpha = np.where(votes_per_lf > 0, agree / np.maximum(votes_per_lf, 1.0), 0.5)
        alpha = np.clip(new_alpha, ALPHA_MIN, ALPHA_MAX)
        if class_balance is None:
            pi = float(np.clip(np.mean(p), _PI_EPS, 1.0 - _PI_EPS))
    return LabelModelParams(
        alpha=alpha,
        beta=beta,
        pi=pi,
        log_likelihood_trace=tuple(trace),
        lf_names=matrix.lf_names,
    )


def predict_soft(matrix: VoteMatrix, params: LabelModelParams) -> list[SoftLabel]:
    """Per-row posterior P(correct | votes); uncovered rows carry the prior."""
    if matrix.m != len(params.alpha):
        raise DataError(
            f"vote matrix has {matrix.m} LF columns but params were fitted with {len(params.alpha)}"
        )
    v = matrix.votes
    C = (v == CORRECT).astype(np.float64)
    W = (v == WRONG).astype(np.float64)
    p = _posteriors(C, W, params.alpha, params.pi)
    covered = matrix.covered()
    return [
        SoftLabel(p_correct=float(p[i]) if covered[i] else params.pi, covered=bool(covered[i]))
        for i in range(matrix.n)
    ]


def majority_vote(matrix: VoteMatrix) -> list[SoftLabel]:
    """Baseline: fraction of non-abstain votes that say Correct; 0.5 on silence."""
    v = matrix.votes
    n_correct = (v == CORRECT).sum(axis=1)
    n_nonabs = (v != ABSTAIN).sum(axis=1)
    out = []
    for i in range(matrix.n):
        if n_nonabs[i] == 0:
            out.append(SoftLabel(0.5, False))
        else:
            out.append(SoftLabel(float(n_correct[i] / n_nonabs[i]), True))
    return out


def hard_rule(
    features: Sequence[FeatureVector],
    rule_table: dict[LabelType, str],
    cfg: LFConfig,
) -> list[SoftLabel]:
    """Single designated LF per label type; 1/0 from its vote, 0.5 on abstain."""
    by_name: dict[str, Callable] = dict(REGISTRY)
    fns = {}
    for lt, name in rule_table.items():
        if name not in by_name:
            raise DataError(f"unknown LF name {name!r} for {LabelType(lt).name}")
        fns[int(lt)] = by_name[name]
    out = []
    for fv in features:
        fn = fns.get(fv.label_type)
        if fn is None:
            raise DataError(f"rule table has no entry for {LabelType(fv.label_type).name}")
        vote = fn(fv, cfg)
        p = {CORRECT: 1.0, WRONG: 0.0, ABSTAIN: 0.5}[vote]
        out.append(SoftLabel(p, vote != ABSTAIN))
    return out
