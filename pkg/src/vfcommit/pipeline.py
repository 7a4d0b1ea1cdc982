"""End-to-end detector: issue linking, three base classifiers, stacking."""
from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import StratifiedKFold, train_test_split
from sklearn.utils.validation import check_is_fitted

from .classifiers import CommitClassifier, DegenerateLabelsError
from .ensemble import (
    ScoredCommit,
    StackedFeatures,
    StackingEnsemble,
    assemble_feature_matrix,
    classify_with_threshold,
    resolve_issues,
)
from .ingest import CommitRecord, LabeledDataset
from .linker import IssueLinker

logger = logging.getLogger(__name__)

MODEL_FORMAT = "vfcommit-model"
MODEL_FORMAT_VERSION = 1
_BASE_PARAMS = ("epochs", "batch_size", "learning_rate", "validation_fraction", "max_tokens", "max_files")


class VulnerabilityFixDetector(ClassifierMixin, BaseEstimator):
    """Scores commits as vulnerability-fixing.

    Parameters
    ----------
    backend : {"fallback", "encoder"}
    linker : IssueLinker or None
        Used to recover issues for commits that lack one, both when
        training and when scoring.
    folds : int, default=5
        Out-of-fold splits used to produce the stacker's training features.
        The encoder backend uses a single stratified hold-out instead.
    threshold : float, default=0.5
    seed : int
    stacker_C : float or None
    text_encoder, code_encoder : str or None
        Pretrained model ids for the encoder backend.
    """

    def __init__(
        self,
        backend: str = "fallback",
        linker: Optional[IssueLinker] = None,
        folds: int = 5,
        threshold: float = 0.5,
        seed: int = 42,
        stacker_C: Optional[float] = 1.0,
        text_encoder: Optional[str] = None,
        code_encoder: Optional[str] = None,
        epochs: int = 3,
        batch_size: int = 8,
        learning_rate: float = 2e-5,
        validation_fraction: float = 0.1,
        max_tokens: int = 512,
        max_files: int = 32,
    ):
        self.backend = backend
        self.linker = linker
        self.folds = folds
        self.threshold = threshold
        self.seed = seed
        self.stacker_C = stacker_C
        self.text_encoder = text_encoder
        self.code_encoder = code_encoder
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.validation_fraction = validation_fraction
        self.max_tokens = max_tokens
        self.max_files = max_files

    def _base(self, source: str) -> CommitClassifier:
        encoder = self.code_encoder if source == "patch" else self.text_encoder
        return CommitClassifier(
            source=source,
            backend=self.backend,
            encoder_id=encoder,
            seed=self.seed,
            **{k: getattr(self, k) for k in _BASE_PARAMS},
        )

    def _fit_bases(self, records: Sequence[CommitRecord], y: np.ndarray):
        message = self._base("message").fit(records, y)
        patch = self._base("patch").fit(records, y)
        try:
            issue = self._base("issue").fit(records, y)
        except DegenerateLabelsError as exc:
            logger.warning("issue classifier not trained (%s); issue probabilities will be imputed", exc)
            issue = None
        return message, issue, patch

    def _features(self, records, models, issues, imputation) -> list[StackedFeatures]:
        message, issue, patch = models
        return assemble_feature_matrix(records, message, issue, patch, None, imputation, issues=issues)

    def fit(self, X: Sequence[CommitRecord], y=None):
        records = list(X)
        labels = [r.label for r in records] if y is None else list(y)
        if any(v is None for v in labels):
            raise ValueError("training records need labels")
        y_arr = np.asarray(labels, dtype=int)
        if len(np.unique(y_arr)) < 2:
            raise DegenerateLabelsError("training data has a single class")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in [0, 1], got {self.threshold}")

        # training commits get the same issue recovery as inference commits
        issues = resolve_issues(records, self.linker)
        records = [dataclasses.replace(r, issue=iss) for r, iss in zip(records, issues)]
        imputation = float(np.mean(y_arr))

        oof = np.zeros((len(records), 3))
        idx = np.arange(len(records))
        if self.backend == "fallback":
            if self.folds < 2:
                raise ValueError(f"folds must be >= 2, got {self.folds}")
            if np.bincount(y_arr).min() < self.folds:
                raise ValueError(f"each class needs at least {self.folds} records for {self.folds}-fold stacking")
            splits = StratifiedKFold(self.folds, shuffle=True, random_state=self.seed).split(idx, y_arr)
            protocol = f"{self.folds}-fold out-of-fold"
            stack_idx = idx
        else:
            tr, ho = train_test_split(idx, test_size=0.2, stratify=y_arr, random_state=self.seed)
            splits = [(tr, ho)]
            protocol = "single stratified hold-out (20%)"
            stack_idx = np.sort(ho)

        for train_idx, held_idx in splits:
            models = self._fit_bases([records[i] for i in train_idx], y_arr[train_idx])
            held = [records[i] for i in held_idx]
            feats = self._features(held, models, [r.issue for r in held], imputation)
            oof[held_idx] = [f.as_array() for f in feats]

        self.ensemble_ = StackingEnsemble(threshold=self.threshold, C=self.stacker_C).fit(
            oof[stack_idx], y_arr[stack_idx], issue_imputation_value=imputation
        )
        self.message_model_, self.issue_model_, self.patch_model_ = self._fit_bases(records, y_arr)
        self.stacker_protocol_ = protocol
        self.oof_features_ = oof
        self.classes_ = np.array([False, True])
        return self

    def stacked_features(self, X: Sequence[CommitRecord]) -> list[StackedFeatures]:
        check_is_fitted(self, "ensemble_")
        records = list(X)
        issues = resolve_issues(records, self.linker)
        models = (self.message_model_, self.issue_model_, self.patch_model_)
        return self._features(records, models, issues, self.ensemble_.issue_imputation_value_)

    def base_probabilities(self, X: Sequence[CommitRecord]) -> np.ndarray:
        feats = self.stacked_features(X)
        return np.array([f.as_array() for f in feats]).reshape(len(feats), 3)

    def predict_proba(self, X: Sequence[CommitRecord]) -> np.ndarray:
        F = self.base_probabilities(X)
        if len(F) == 0:
            return np.zeros((0, 2))
        return self.ensemble_.predict_proba(F)

    def predict(self, X: Sequence[CommitRecord]) -> np.ndarray:
        p = self.predict_proba(X)[:, 1]
        return np.array([classify_with_threshold(v, self.threshold) for v in p], dtype=bool)

    def score_commits(self, X: Sequence[CommitRecord]) -> list[ScoredCommit]:
        records = list(X)
        p = self.predict_proba(records)[:, 1] if records else []
        return [
            ScoredCommit(r.id, float(v), classify_with_threshold(float(v), self.threshold))
            for r, v in zip(records, p)
        ]

    def save(self, model_dir: str | Path) -> None:
        check_is_fitted(self, "ensemble_")
        root = Path(model_dir)
        root.mkdir(parents=True, exist_ok=True)
        self.message_model_.save(root / "message")
        self.patch_model_.save(root / "patch")
        if self.issue_model_ is not None:
            self.issue_model_.save(root / "issue")
        self.ensemble_.save(root / "ensemble.json", extra={"folds": self.folds, "protocol": self.stacker_protocol_})
        params = {k: v for k, v in self.get_params(deep=False).items() if k != "linker"}
        manifest = {
            "format": MODEL_FORMAT,
            "version": MODEL_FORMAT_VERSION,
            "backend": self.backend,
            "seed": self.seed,
            "folds": self.folds,
            "stacker_protocol": self.stacker_protocol_,
            "params": params,
            "artifacts": {
                "message": "message",
                "issue": "issue" if self.issue_model_ is not None else None,
                "patch": "patch",
                "ensemble": "ensemble.json",
            },
            "ensemble": self.ensemble_.to_dict(),
        }
        (root / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, model_dir: str | Path, linker: Optional[IssueLinker] = None) -> "VulnerabilityFixDetector":
        root = Path(model_dir)
        manifest_path = root / "manifest.json"
        if not manifest_path.is_file():
            raise FileNotFoundError(f"model manifest not found: {manifest_path}")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("format") != MODEL_FORMAT or manifest.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model directory {root}; expected {MODEL_FORMAT} version {MODEL_FORMAT_VERSION}")
        det = cls(linker=linker, **manifest["params"])
        art = manifest["artifacts"]
        det.message_model_ = CommitClassifier.load(root / art["message"])
        det.patch_model_ = CommitClassifier.load(root / art["patch"])
        det.issue_model_ = CommitClassifier.load(root / art["issue"]) if art["issue"] else None
        det.ensemble_ = StackingEnsemble.load(root / art["ensemble"])
        det.ensemble_.threshold = det.threshold
        det.stacker_protocol_ = manifest["stacker_protocol"]
        det.classes_ = np.array([False, True])
        return det


def train_stacker(
    training: LabeledDataset,
    linker: Optional[IssueLinker] = None,
    folds: int = 5,
    **detector_params,
) -> StackingEnsemble:
    """Fit base classifiers out-of-fold and return the fitted stacker."""
    det = VulnerabilityFixDetector(linker=linker, folds=folds, **detector_params).fit(training.records)
    return det.ensemble_
