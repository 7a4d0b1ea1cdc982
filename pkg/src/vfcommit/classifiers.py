"""Base probability classifiers over commit messages, issues, and patches.

Each classifier scores one information source. Two backends exist:

``"encoder"``
    Fine-tunes a pretrained transformer (RoBERTa-style for text, a code
    encoder for patches). Patches are encoded per file as
    ``[CLS] removed [SEP] added [EOS]``; file embeddings are averaged and a
    linear two-logit head produces the probability.
``"fallback"``
    TF-IDF bag of words plus L2 logistic regression. Patches use the same
    per-file layout (tokens tagged by the side of the separator they sit on)
    and the same mean aggregation. Needs no GPU or downloaded weights.
"""
from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import train_test_split
from sklearn.utils.validation import check_is_fitted

from .ingest import CommitRecord, FileChange, LabeledDataset
from .linker import TfidfModel

logger = logging.getLogger(__name__)

SOURCES = ("message", "issue", "patch")
BACKENDS = ("fallback", "encoder")
CLASSIFIER_FORMAT = "vfcommit-classifier"
CLASSIFIER_FORMAT_VERSION = 1

DEFAULT_ENCODERS = {
    "message": "roberta-base",
    "issue": "roberta-base",
    "patch": "microsoft/codebert-base",
}

# fallback regularization grid, tried smallest first
C_GRID = (0.1, 1.0, 10.0, 100.0)


class DegenerateLabelsError(ValueError):
    def __init__(self, detail: str = ""):
        super().__init__("degenerate labels" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class EncoderConfig:
    encoder_id: str = "roberta-base"
    max_tokens: int = 512
    embedding_dim: Optional[int] = None

    def __post_init__(self):
        if self.max_tokens < 8:
            raise ValueError(f"max_tokens must be >= 8, got {self.max_tokens}")


@dataclass(frozen=True)
class TrainingConfig:
    """Training knobs. The defaults are this package's choices."""

    epochs: int = 3
    batch_size: int = 8
    learning_rate: float = 2e-5
    seed: int = 42
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate <= 0 or self.seed < 0:
            raise ValueError("epochs, batch_size, learning_rate must be positive and seed non-negative")
        if not 0.0 < self.validation_fraction <= 0.5:
            raise ValueError(f"validation_fraction must lie in (0, 0.5], got {self.validation_fraction}")


class SimpleCodeTokenizer:
    """Whitespace/punctuation tokenizer with bracketed sentinel tokens."""

    cls_token = "[CLS]"
    sep_token = "[SEP]"
    eos_token = "[EOS]"
    _re = re.compile(r"[A-Za-z_][A-Za-z0-9_]*|\d+|\S")

    def tokenize(self, text: str) -> list[str]:
        return self._re.findall(text)


@dataclass
class PatchInput:
    tokens: list[str]
    separator_index: int
    cls_token: str = "[CLS]"
    sep_token: str = "[SEP]"
    eos_token: str = "[EOS]"

    @property
    def removed_tokens(self) -> list[str]:
        return self.tokens[1 : self.separator_index]

    @property
    def added_tokens(self) -> list[str]:
        return self.tokens[self.separator_index + 1 : -1]

    def check(self, max_tokens: int) -> list[str]:
        problems = []
        if len(self.tokens) > max_tokens:
            problems.append(f"length {len(self.tokens)} exceeds {max_tokens}")
        if not self.tokens or self.tokens[0] != self.cls_token:
            problems.append("does not begin with the classification token")
        if len(self.tokens) < 3 or self.tokens[-1] != self.eos_token:
            problems.append("does not end with the end token")
        if not 0 < self.separator_index < len(self.tokens) - 1 or self.tokens[self.separator_index] != self.sep_token:
            problems.append("separator missing")
        if self.tokens[1:-1].count(self.sep_token) != 1:
            problems.append("separator count != 1")
        return problems

    def __str__(self) -> str:
        return " ".join(self.tokens)


def _split_budget(n_removed: int, n_added: int, max_tokens: int) -> tuple[int, int]:
    if n_removed + n_added + 3 <= max_tokens:
        return n_removed, n_added
    half = (max_tokens - 3) // 2
    # a short side donates its unused share to the other
    if n_removed < half:
        return n_removed, min(n_added, 2 * half - n_removed)
    if n_added < half:
        return min(n_removed, 2 * half - n_added), n_added
    return half, half


def build_patch_input(file_change: FileChange, config: EncoderConfig, tokenizer=None) -> PatchInput:
    """Lay out one file's change as ``[CLS] removed [SEP] added [EOS]``.

    Over-long sides are tail-truncated to an equal budget of
    ``(max_tokens - 3) // 2`` tokens each.
    """
    tok = tokenizer if tokenizer is not None else SimpleCodeTokenizer()
    removed = tok.tokenize("\n".join(file_change.removed_lines))
    added = tok.tokenize("\n".join(file_change.added_lines))
    n_rem, n_add = _split_budget(len(removed), len(added), config.max_tokens)
    tokens = [tok.cls_token, *removed[:n_rem], tok.sep_token, *added[:n_add], tok.eos_token]
    return PatchInput(tokens, n_rem + 1, tok.cls_token, tok.sep_token, tok.eos_token)


_WORD_RE = re.compile(r"[a-z_][a-z0-9_]*|\d+")


def _text_counts(text: str) -> Counter:
    return Counter(_WORD_RE.findall(text.lower()))


def _patch_input_counts(pi: PatchInput) -> Counter:
    c = Counter("rem:" + t for t in pi.removed_tokens)
    c.update("add:" + t for t in pi.added_tokens)
    return c


def _check_labels(y: np.ndarray, what: str) -> None:
    if len(y) == 0:
        raise DegenerateLabelsError(f"no {what} training records")
    if len(np.unique(y)) < 2:
        raise DegenerateLabelsError(f"{what} training data has a single class")


class _FallbackBackend:
    """TF-IDF features + logistic regression; inputs are Counters or lists of Counters."""

    def __init__(self, patch: bool, seed: int, validation_fraction: float):
        self.patch = patch
        self.seed = seed
        self.validation_fraction = validation_fraction

    def _features(self, items) -> sp.csr_matrix:
        if not self.patch:
            return self.tfidf.transform_counts(items)
        flat = [c for files in items for c in files]
        files = self.tfidf.transform_counts(flat)
        rows, cols, vals = [], [], []
        k = 0
        for i, group in enumerate(items):
            for _ in group:
                rows.append(i)
                cols.append(k)
                vals.append(1.0 / len(group))
                k += 1
        mean = sp.csr_matrix((vals, (rows, cols)), shape=(len(items), len(flat)))
        return (mean @ files).tocsr()

    def _fit_vocab(self, items) -> None:
        docs = [c for files in items for c in files] if self.patch else list(items)
        self.tfidf = TfidfModel.fit_counts(docs or [Counter()], channel="fallback")

    def _lr(self, C: float) -> LogisticRegression:
        return LogisticRegression(C=C, solver="lbfgs", max_iter=2000, tol=1e-8)

    def fit(self, items, y: np.ndarray):
        idx = np.arange(len(y))
        C = 1.0
        counts = np.bincount(y.astype(int), minlength=2)
        if counts.min() >= 2 and len(y) >= 4:
            tr, va = train_test_split(
                idx, test_size=self.validation_fraction, stratify=y, random_state=self.seed
            )
            if len(np.unique(y[tr])) == 2:
                self._fit_vocab([items[i] for i in tr])
                Xtr = self._features([items[i] for i in tr])
                Xva = self._features([items[i] for i in va])
                best = math.inf
                for c in C_GRID:
                    lr = self._lr(c).fit(Xtr, y[tr])
                    p = np.clip(lr.predict_proba(Xva)[:, 1], 1e-12, 1 - 1e-12)
                    loss = -float(np.mean(y[va] * np.log(p) + (1 - y[va]) * np.log(1 - p)))
                    if loss < best - 1e-12:
                        best, C = loss, c
        self._fit_vocab(items)
        lr = self._lr(C).fit(self._features(items), y)
        self.C = C
        self.coef = np.asarray(lr.coef_[0], dtype=np.float64)
        self.intercept = float(lr.intercept_[0])
        return self

    def predict(self, items) -> np.ndarray:
        X = self._features(items)
        return expit(X @ self.coef + self.intercept)

    def state(self) -> dict:
        return {
            "C": self.C,
            "tfidf": self.tfidf.to_dict(),
            "coef": [float(v) for v in self.coef],
            "intercept": self.intercept,
        }

    def load_state(self, d: dict) -> None:
        self.C = float(d["C"])
        self.tfidf = TfidfModel.from_dict(d["tfidf"])
        self.coef = np.asarray(d["coef"], dtype=np.float64)
        self.intercept = float(d["intercept"])


class _EncoderBackend:
    """Transformer fine-tuning. Text items are strings; patch items are lists of FileChange."""

    def __init__(self, patch: bool, config: EncoderConfig, training: TrainingConfig, max_files: int):
        self.patch = patch
        self.config = config
        self.training = training
        self.max_files = max_files

    # torch/transformers are imported lazily so the fallback path stays light
    def _build(self, path: Optional[str] = None):
        import torch
        from transformers import AutoModel, AutoModelForSequenceClassification, AutoTokenizer

        src = path or self.config.encoder_id
        self.device = torch.device("cuda" if torch.cuda.is_available() else "cpu")
        self.tokenizer = AutoTokenizer.from_pretrained(src)
        if self.patch:
            self.model = AutoModel.from_pretrained(src)
            hidden = self.model.config.hidden_size
            self.head = torch.nn.Linear(hidden, 2)
            self.head.to(self.device)
        else:
            self.model = AutoModelForSequenceClassification.from_pretrained(src, num_labels=2)
            self.head = None
        self.model.to(self.device)

    def _params(self):
        params = list(self.model.parameters())
        if self.head is not None:
            params += list(self.head.parameters())
        return params

    def _logits(self, batch):
        import torch

        if not self.patch:
            enc = self.tokenizer(
                list(batch),
                truncation=True,
                max_length=self.config.max_tokens,
                padding=True,
                return_tensors="pt",
            ).to(self.device)
            return self.model(**enc).logits

        file_ids, owners = [], []
        for i, changes in enumerate(batch):
            for fc in list(changes)[: self.max_files]:
                pi = build_patch_input(fc, self.config, self.tokenizer)
                file_ids.append(self.tokenizer.convert_tokens_to_ids(pi.tokens))
                owners.append(i)
        hidden = self.model.config.hidden_size
        pooled = torch.zeros(len(batch), hidden, device=self.device)
        if file_ids:
            pad = self.tokenizer.pad_token_id or 0
            width = max(len(ids) for ids in file_ids)
            ids = torch.full((len(file_ids), width), pad, dtype=torch.long)
            mask = torch.zeros((len(file_ids), width), dtype=torch.long)
            for r, seq in enumerate(file_ids):
                ids[r, : len(seq)] = torch.tensor(seq)
                mask[r, : len(seq)] = 1
            out = self.model(input_ids=ids.to(self.device), attention_mask=mask.to(self.device))
            emb = out.last_hidden_state[:, 0]
            owner = torch.tensor(owners, device=self.device)
            pooled = pooled.index_add(0, owner, emb)
            counts = torch.bincount(owner, minlength=len(batch)).clamp(min=1).unsqueeze(1)
            pooled = pooled / counts
        return self.head(pooled)

    def fit(self, items, y: np.ndarray):
        import torch

        t = self.training
        torch.manual_seed(t.seed)
        self._build()
        idx = np.arange(len(y))
        counts = np.bincount(y.astype(int), minlength=2)
        if counts.min() >= 2:
            tr, va = train_test_split(idx, test_size=t.validation_fraction, stratify=y, random_state=t.seed)
        else:
            tr, va = idx, idx[:0]
        opt = torch.optim.AdamW(self._params(), lr=t.learning_rate)
        loss_fn = torch.nn.CrossEntropyLoss()
        rng = np.random.default_rng(t.seed)
        best_loss, best_state = math.inf, None
        for epoch in range(t.epochs):
            self.model.train()
            order = rng.permutation(tr)
            for start in range(0, len(order), t.batch_size):
                b = order[start : start + t.batch_size]
                logits = self._logits([items[i] for i in b])
                target = torch.tensor(y[b], dtype=torch.long, device=self.device)
                loss = loss_fn(logits, target)
                opt.zero_grad()
                loss.backward()
                opt.step()
            if len(va):
                val_loss = self._mean_loss([items[i] for i in va], y[va])
                logger.info("epoch %d validation loss %.4f", epoch + 1, val_loss)
                if val_loss < best_loss:
                    best_loss, best_state = val_loss, self._snapshot()
        if best_state is not None:
            self._restore(best_state)
        self.model.eval()
        return self

    def _snapshot(self):
        snap = {"model": {k: v.detach().clone() for k, v in self.model.state_dict().items()}}
        if self.head is not None:
            snap["head"] = {k: v.detach().clone() for k, v in self.head.state_dict().items()}
        return snap

    def _restore(self, snap):
        self.model.load_state_dict(snap["model"])
        if self.head is not None:
            self.head.load_state_dict(snap["head"])

    def _mean_loss(self, items, y) -> float:
        p = np.clip(self.predict(items), 1e-12, 1 - 1e-12)
        return -float(np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))

    def predict(self, items) -> np.ndarray:
        import torch

        self.model.eval()
        out = []
        with torch.no_grad():
            for start in range(0, len(items), self.training.batch_size):
                logits = self._logits(items[start : start + self.training.batch_size])
                out.append(torch.softmax(logits, dim=-1)[:, 1].double().cpu().numpy())
        return np.concatenate(out) if out else np.zeros(0)

    def save(self, path: Path) -> None:
        import torch

        self.model.save_pretrained(path / "encoder")
        self.tokenizer.save_pretrained(path / "encoder")
        if self.head is not None:
            torch.save(self.head.state_dict(), path / "head.pt")

    def load(self, path: Path) -> None:
        import torch

        self._build(str(path / "encoder"))
        if self.head is not None:
            self.head.load_state_dict(torch.load(path / "head.pt", map_location=self.device))
        self.model.eval()


class CommitClassifier(ClassifierMixin, BaseEstimator):
    """Probability that a commit is vulnerability-fixing, from one source.

    ``X`` is a sequence of :class:`CommitRecord`. For ``source="issue"``,
    records without an issue are dropped during ``fit`` and rejected by
    ``predict_proba``; callers impute those.
    """

    def __init__(
        self,
        source: str = "message",
        backend: str = "fallback",
        encoder_id: Optional[str] = None,
        max_tokens: int = 512,
        epochs: int = 3,
        batch_size: int = 8,
        learning_rate: float = 2e-5,
        seed: int = 42,
        validation_fraction: float = 0.1,
        max_files: int = 32,
    ):
        self.source = source
        self.backend = backend
        self.encoder_id = encoder_id
        self.max_tokens = max_tokens
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.validation_fraction = validation_fraction
        self.max_files = max_files

    @property
    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.encoder_id or DEFAULT_ENCODERS[self.source], self.max_tokens)

    @property
    def training_config(self) -> TrainingConfig:
        return TrainingConfig(self.epochs, self.batch_size, self.learning_rate, self.seed, self.validation_fraction)

    def _check_params(self):
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        self.encoder_config, self.training_config  # run dataclass checks

    def _make_backend(self):
        if self.backend == "fallback":
            return _FallbackBackend(self.source == "patch", self.seed, self.validation_fraction)
        return _EncoderBackend(self.source == "patch", self.encoder_config, self.training_config, self.max_files)

    # raw inputs per source, shaped for the chosen backend
    def _raw(self, record: CommitRecord):
        if self.source == "message":
            return record.message
        if self.source == "issue":
            if record.issue is None:
                raise ValueError(f"commit {record.id!r} has no issue to classify")
            return record.issue.classifier_text()
        return record.patch

    def _encode(self, raws: Sequence):
        if self.backend == "encoder":
            return list(raws)
        if self.source == "patch":
            cfg = self.encoder_config
            return [[_patch_input_counts(build_patch_input(fc, cfg)) for fc in changes] for changes in raws]
        return [_text_counts(t) for t in raws]

    def fit(self, X: Sequence[CommitRecord], y=None):
        self._check_params()
        records = list(X)
        labels = [r.label for r in records] if y is None else list(y)
        if any(v is None for v in labels):
            raise ValueError("training records need labels")
        if self.source == "issue":
            keep = [i for i, r in enumerate(records) if r.issue is not None]
            records = [records[i] for i in keep]
            labels = [labels[i] for i in keep]
        y_arr = np.asarray(labels, dtype=int)
        _check_labels(y_arr, self.source)
        self.classes_ = np.array([False, True])
        self.backend_ = self._make_backend()
        self.backend_.fit(self._encode([self._raw(r) for r in records]), y_arr)
        self.n_train_ = len(records)
        return self

    def positive_proba_raw(self, raws: Sequence) -> np.ndarray:
        """Positive-class probability for raw texts (message/issue) or change lists (patch)."""
        check_is_fitted(self, "backend_")
        raws = list(raws)
        if not raws:
            return np.zeros(0)
        return np.asarray(self.backend_.predict(self._encode(raws)), dtype=np.float64)

    def predict_proba(self, X: Sequence[CommitRecord]) -> np.ndarray:
        p = self.positive_proba_raw([self._raw(r) for r in X])
        return np.column_stack([1.0 - p, p]) if len(p) else np.zeros((0, 2))

    def predict(self, X: Sequence[CommitRecord]) -> np.ndarray:
        return self.predict_proba(X)[:, 1] > 0.5

    def save(self, path: str | Path) -> None:
        check_is_fitted(self, "backend_")
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format": CLASSIFIER_FORMAT,
            "version": CLASSIFIER_FORMAT_VERSION,
            "source": self.source,
            "backend": self.backend,
            "seed": self.seed,
            "params": self.get_params(),
            "encoder": asdict(self.encoder_config),
            "training": asdict(self.training_config),
            "n_train": self.n_train_,
        }
        if self.backend == "fallback":
            (path / "params.json").write_text(
                json.dumps(self.backend_.state(), sort_keys=True, separators=(",", ":")), encoding="utf-8"
            )
        else:
            self.backend_.save(path)
        (path / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CommitClassifier":
        path = Path(path)
        manifest_path = path / "manifest.json"
        if not manifest_path.is_file():
            raise FileNotFoundError(f"classifier manifest not found: {manifest_path}")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("format") != CLASSIFIER_FORMAT or manifest.get("version") != CLASSIFIER_FORMAT_VERSION:
            raise ValueError(
                f"unsupported classifier artifact {path}; expected {CLASSIFIER_FORMAT} version {CLASSIFIER_FORMAT_VERSION}"
            )
        clf = cls(**manifest["params"])
        clf.classes_ = np.array([False, True])
        clf.n_train_ = manifest["n_train"]
        backend = clf._make_backend()
        if clf.backend == "fallback":
            backend.load_state(json.loads((path / "params.json").read_text(encoding="utf-8")))
        else:
            backend.load(path)
        clf.backend_ = backend
        return clf


def train_classifier(
    data: LabeledDataset,
    source: str,
    backend: str = "fallback",
    config: TrainingConfig = TrainingConfig(),
    encoder: Optional[EncoderConfig] = None,
) -> CommitClassifier:
    kwargs = asdict(config)
    if encoder is not None:
        kwargs.update(encoder_id=encoder.encoder_id, max_tokens=encoder.max_tokens)
    return CommitClassifier(source=source, backend=backend, **kwargs).fit(data.records)


def classify_text(model: CommitClassifier, text: str) -> float:
    if model.source == "patch":
        raise ValueError("classify_text needs a message or issue classifier")
    return float(model.positive_proba_raw([text])[0])


def classify_patch(model: CommitClassifier, changes: Sequence[FileChange]) -> float:
    if model.source != "patch":
        raise ValueError("classify_patch needs a patch classifier")
    return float(model.positive_proba_raw([list(changes)])[0])
