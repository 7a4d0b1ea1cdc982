"""Logistic-regression stacking over the three base probabilities."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.linear_model import LogisticRegression
from sklearn.utils.validation import check_is_fitted

from .classifiers import CommitClassifier
from .ingest import CommitRecord, IssueReport
from .linker import IssueLinker

FEATURE_NAMES = ("message", "issue", "patch")


@dataclass(frozen=True)
class StackedFeatures:
    p_message: float
    p_issue: float
    p_patch: float
    issue_imputed: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.p_message, self.p_issue, self.p_patch], dtype=np.float64)


@dataclass(frozen=True)
class ScoredCommit:
    id: str
    probability: float
    flagged: bool


def classify_with_threshold(score: float, threshold: float) -> bool:
    return score > threshold


def rank_commits(scored: Iterable[ScoredCommit]) -> list[ScoredCommit]:
    """Highest probability first; equal probabilities ordered by id."""
    return sorted(scored, key=lambda s: (-s.probability, s.id))


class StackingEnsemble(ClassifierMixin, BaseEstimator):
    """Logistic regression over ``(p_message, p_issue, p_patch)``.

    Parameters
    ----------
    threshold : float, default=0.5
        Commits scoring strictly above it are flagged.
    C : float or None, default=1.0
        Inverse L2 strength; ``None`` fits without a penalty.
    """

    def __init__(self, threshold: float = 0.5, C: Optional[float] = 1.0):
        self.threshold = threshold
        self.C = C

    def fit(self, X, y, issue_imputation_value: Optional[float] = None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=int)
        if X.ndim != 2 or X.shape[1] != 3:
            raise ValueError(f"expected an (n, 3) feature matrix, got shape {X.shape}")
        if len(np.unique(y)) < 2:
            raise ValueError("degenerate labels: stacker needs both classes")
        if self.C is None:
            lr = LogisticRegression(penalty=None, solver="lbfgs", max_iter=10000, tol=1e-12)
        else:
            lr = LogisticRegression(C=self.C, solver="lbfgs", max_iter=10000, tol=1e-12)
        lr.fit(X, y)
        self.coef_ = np.asarray(lr.coef_[0], dtype=np.float64)
        self.intercept_ = float(lr.intercept_[0])
        self.issue_imputation_value_ = (
            float(np.mean(y)) if issue_imputation_value is None else float(issue_imputation_value)
        )
        self.classes_ = np.array([False, True])
        return self

    @classmethod
    def from_weights(cls, weights, bias: float, threshold: float = 0.5, issue_imputation_value: float = 0.5):
        ens = cls(threshold=threshold)
        ens.coef_ = np.asarray(weights, dtype=np.float64)
        ens.intercept_ = float(bias)
        ens.issue_imputation_value_ = float(issue_imputation_value)
        ens.classes_ = np.array([False, True])
        return ens

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in [0, 1], got {self.threshold}")
        return self.predict_proba(X)[:, 1] > self.threshold

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "weights": [float(w) for w in self.coef_],
            "bias": self.intercept_,
            "threshold": self.threshold,
            "C": self.C,
            "issue_imputation_value": self.issue_imputation_value_,
            "features": list(FEATURE_NAMES),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StackingEnsemble":
        ens = cls.from_weights(d["weights"], d["bias"], d["threshold"], d["issue_imputation_value"])
        ens.C = d.get("C", 1.0)
        return ens

    def save(self, path: str | Path, extra: Optional[dict] = None) -> None:
        d = self.to_dict()
        if extra:
            d.update(extra)
        Path(path).write_text(json.dumps(d, sort_keys=True, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "StackingEnsemble":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def score_commit(ensemble: StackingEnsemble, features: StackedFeatures) -> float:
    return float(ensemble.predict_proba(features.as_array())[0, 1])


def resolve_issues(
    records: Sequence[CommitRecord], linker: Optional[IssueLinker]
) -> list[Optional[IssueReport]]:
    """Explicit issue if present; otherwise the linker's recovery, if any."""
    out = []
    for r in records:
        if r.issue is not None:
            out.append(r.issue)
        elif linker is not None:
            out.append(linker.link_commit(r))
        else:
            out.append(None)
    return out


def assemble_feature_matrix(
    records: Sequence[CommitRecord],
    message_model: CommitClassifier,
    issue_model: Optional[CommitClassifier],
    patch_model: CommitClassifier,
    linker: Optional[IssueLinker],
    imputation_value: float,
    issues: Optional[Sequence[Optional[IssueReport]]] = None,
) -> list[StackedFeatures]:
    records = list(records)
    if issues is None:
        issues = resolve_issues(records, linker)
    p_msg = message_model.positive_proba_raw([r.message for r in records])
    p_patch = patch_model.positive_proba_raw([r.patch for r in records])
    with_issue = [i for i, iss in enumerate(issues) if iss is not None]
    p_issue = np.full(len(records), float(imputation_value))
    imputed = np.ones(len(records), dtype=bool)
    if issue_model is not None and with_issue:
        p_issue[with_issue] = issue_model.positive_proba_raw([issues[i].classifier_text() for i in with_issue])
        imputed[with_issue] = False
    return [
        StackedFeatures(float(p_msg[i]), float(p_issue[i]), float(p_patch[i]), bool(imputed[i]))
        for i in range(len(records))
    ]


def assemble_features(
    commit: CommitRecord,
    models: Sequence[Optional[CommitClassifier]],
    linker: Optional[IssueLinker],
    imputation_value: float,
) -> StackedFeatures:
    """Base probabilities for one commit; ``models`` is (message, issue, patch)."""
    message_model, issue_model, patch_model = models
    return assemble_feature_matrix([commit], message_model, issue_model, patch_model, linker, imputation_value)[0]
