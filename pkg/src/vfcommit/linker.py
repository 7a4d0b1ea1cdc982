"""Commit-to-issue link recovery over TF-IDF term channels.

A commit without an explicit issue is matched to the most similar report in
an issue corpus. Text is split into two channels, natural-language terms and
code terms, each with its own TF-IDF model. The similarity of a commit and
an issue is the larger of the two channel cosines, and a link is admitted
only when it exceeds ``similarity_threshold``.
"""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .ingest import CommitRecord, IssueReport, parse_issue_object

LINKER_FORMAT = "vfcommit-linker"
LINKER_FORMAT_VERSION = 1

CHANNELS = ("nl", "code")

STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because been
    before being below between both but by can could did do does doing down during
    each few for from further had has have having he her here hers herself him
    himself his how i if in into is it its itself just me more most my myself no nor
    not now of off on once only or other our ours ourselves out over own same she
    should so some such than that the their theirs them themselves then there these
    they this those through to too under until up very was we were what when where
    which while who whom why will with would you your yours yourself yourselves
    """.split()
)

_TOKEN_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*")
_CAMEL_RE = re.compile(r"[a-z0-9][A-Z]")


class LinkerError(ValueError):
    pass


@dataclass
class TermProfile:
    nl_terms: Counter = field(default_factory=Counter)
    code_terms: Counter = field(default_factory=Counter)

    def channel(self, name: str) -> Counter:
        if name == "nl":
            return self.nl_terms
        if name == "code":
            return self.code_terms
        raise ValueError(f"unknown channel {name!r}")

    def __add__(self, other: "TermProfile") -> "TermProfile":
        return TermProfile(self.nl_terms + other.nl_terms, self.code_terms + other.code_terms)


def _is_code_token(token: str, next_char: str) -> bool:
    return (
        "_" in token
        or "." in token
        or _CAMEL_RE.search(token) is not None
        or next_char == "("
    )


def extract_terms(text: str) -> TermProfile:
    """Route each identifier-like token to the code channel, the rest to nl.

    >>> p = extract_terms("Fix buffer overflow in parseHeader()")
    >>> sorted(p.nl_terms), sorted(p.code_terms)
    (['buffer', 'fix', 'overflow'], ['parseHeader'])
    """
    nl: Counter = Counter()
    code: Counter = Counter()
    for m in _TOKEN_RE.finditer(text):
        token = m.group(0)
        next_char = text[m.end() : m.end() + 1]
        if _is_code_token(token, next_char):
            code[token] += 1
        else:
            word = token.lower()
            if word not in STOPWORDS:
                nl[word] += 1
    return TermProfile(nl, code)


def commit_document(commit: CommitRecord) -> str:
    parts = [commit.message]
    for fc in commit.patch:
        parts.extend(fc.added_lines)
        parts.extend(fc.removed_lines)
    return " ".join(parts)


def issue_document(issue: IssueReport) -> str:
    return " ".join([issue.title, issue.body, *issue.comments])


@dataclass(frozen=True)
class TfidfModel:
    """Fitted vocabulary and smoothed idf weights for one term channel."""

    vocabulary: dict
    idf: np.ndarray
    document_count: int
    channel: str = "nl"

    @classmethod
    def fit_counts(cls, counts: Sequence[Counter], channel: str = "nl") -> "TfidfModel":
        if len(counts) == 0:
            raise LinkerError("empty corpus")
        df: Counter = Counter()
        for c in counts:
            df.update(t for t, n in c.items() if n > 0)
        terms = sorted(df)
        n = len(counts)
        idf = np.array([math.log((1 + n) / (1 + df[t])) + 1.0 for t in terms], dtype=np.float64)
        idf.setflags(write=False)
        return cls({t: i for i, t in enumerate(terms)}, idf, n, channel)

    def transform_counts(self, counts: Sequence[Counter]) -> sp.csr_matrix:
        """L2-normalized tf*idf rows; rows with no known term stay zero."""
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for c in counts:
            known = sorted((self.vocabulary[t], n) for t, n in c.items() if n > 0 and t in self.vocabulary)
            if known:
                cols = [j for j, _ in known]
                vals = np.array([n * self.idf[j] for j, n in known], dtype=np.float64)
                norm = math.sqrt(float(np.dot(vals, vals)))
                indices.extend(cols)
                data.extend((vals / norm).tolist())
            indptr.append(len(indices))
        return sp.csr_matrix(
            (np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
            shape=(len(counts), len(self.vocabulary)),
        )

    def to_dict(self) -> dict:
        terms = sorted(self.vocabulary, key=self.vocabulary.__getitem__)
        return {
            "channel": self.channel,
            "document_count": self.document_count,
            "terms": terms,
            "idf": [float(x) for x in self.idf],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TfidfModel":
        idf = np.asarray(d["idf"], dtype=np.float64)
        idf.setflags(write=False)
        return cls({t: i for i, t in enumerate(d["terms"])}, idf, int(d["document_count"]), d["channel"])


def fit_tfidf(documents: Sequence[TermProfile], channel: str) -> TfidfModel:
    return TfidfModel.fit_counts([doc.channel(channel) for doc in documents], channel)


def vectorize(model: TfidfModel, profile: TermProfile) -> sp.csr_matrix:
    return model.transform_counts([profile.channel(model.channel)])


def _cosine_rows(matrix: sp.csr_matrix, query: sp.csr_matrix) -> np.ndarray:
    # rows are unit or zero, so the dot product is the cosine
    return np.asarray((matrix @ query.T).todense()).ravel()


class IssueLinker(BaseEstimator):
    """Searchable index over an issue corpus.

    Parameters
    ----------
    similarity_threshold : float, default=0.5
        A recovered link must score strictly above this value.
    corpus_path : str or None
        Where the corpus came from; informational only.
    """

    def __init__(self, similarity_threshold: float = 0.5, corpus_path: Optional[str] = None):
        self.similarity_threshold = similarity_threshold
        self.corpus_path = corpus_path

    def _check_threshold(self):
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise LinkerError(f"similarity_threshold must lie in [0, 1], got {self.similarity_threshold}")

    def fit(self, issues: Sequence[IssueReport], y=None, keys: Optional[Sequence[str]] = None):
        self._check_threshold()
        issues = list(issues)
        if not issues:
            raise LinkerError("empty corpus")
        profiles = [extract_terms(issue_document(i)) for i in issues]
        models = {ch: fit_tfidf(profiles, ch) for ch in CHANNELS}
        self._set_state(issues, models, keys)
        return self

    def _set_state(self, issues, models, keys):
        self.issues_ = list(issues)
        self.issue_keys_ = list(keys) if keys is not None else [str(i) for i in range(len(issues))]
        if len(self.issue_keys_) != len(self.issues_):
            raise LinkerError("issue keys and issues differ in length")
        self.models_ = models
        profiles = [extract_terms(issue_document(i)) for i in self.issues_]
        self.matrices_ = {
            ch: models[ch].transform_counts([p.channel(ch) for p in profiles]) for ch in CHANNELS
        }

    @property
    def n_issues(self) -> int:
        check_is_fitted(self, "issues_")
        return len(self.issues_)

    def vocabulary_sizes(self) -> dict:
        check_is_fitted(self, "models_")
        return {ch: len(self.models_[ch].vocabulary) for ch in CHANNELS}

    def similarities(self, profile: TermProfile) -> np.ndarray:
        """Similarity of ``profile`` to every indexed issue, in corpus order."""
        check_is_fitted(self, "matrices_")
        per_channel = [
            _cosine_rows(self.matrices_[ch], vectorize(self.models_[ch], profile)) for ch in CHANNELS
        ]
        return np.clip(np.maximum(*per_channel), 0.0, 1.0)

    def similarity(self, profile: TermProfile, issue_position: int) -> float:
        check_is_fitted(self, "matrices_")
        if not 0 <= issue_position < len(self.issues_):
            raise IndexError(f"issue position {issue_position} out of range [0, {len(self.issues_)})")
        best = 0.0
        for ch in CHANNELS:
            q = vectorize(self.models_[ch], profile)
            row = self.matrices_[ch][issue_position]
            best = max(best, float((row @ q.T).sum()))
        return min(1.0, max(0.0, best))

    def best_match(self, commit: CommitRecord) -> tuple[int, float]:
        sims = self.similarities(extract_terms(commit_document(commit)))
        pos = int(np.argmax(sims))  # first maximum wins ties
        return pos, float(sims[pos])

    def link_commit(self, commit: CommitRecord) -> Optional[IssueReport]:
        if commit.issue is not None:
            raise LinkerError(f"commit {commit.id!r} already has an explicit issue; refusing to relink")
        self._check_threshold()
        pos, score = self.best_match(commit)
        if score > self.similarity_threshold:
            return self.issues_[pos]
        return None

    def transform(self, commits: Iterable[CommitRecord]) -> list[Optional[IssueReport]]:
        """Explicit issue when present, otherwise the recovered link (or None)."""
        return [c.issue if c.issue is not None else self.link_commit(c) for c in commits]

    def to_dict(self) -> dict:
        check_is_fitted(self, "models_")
        return {
            "format": LINKER_FORMAT,
            "version": LINKER_FORMAT_VERSION,
            "config": {
                "similarity_threshold": self.similarity_threshold,
                "corpus_path": self.corpus_path,
            },
            "issues": [
                {"key": k, **issue.to_dict()} for k, issue in zip(self.issue_keys_, self.issues_)
            ],
            "models": {ch: self.models_[ch].to_dict() for ch in CHANNELS},
        }

    def save(self, path: str | Path) -> None:
        text = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        Path(path).write_text(text + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "IssueLinker":
        path = Path(path)
        if not path.is_file():
            raise LinkerError(f"linker artifact not found: {path}")
        expected = f"{LINKER_FORMAT} version {LINKER_FORMAT_VERSION}"
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise LinkerError(f"corrupt linker artifact {path}; expected {expected}") from exc
        if not isinstance(d, dict) or d.get("format") != LINKER_FORMAT or d.get("version") != LINKER_FORMAT_VERSION:
            found = d.get("version") if isinstance(d, dict) else None
            raise LinkerError(f"unsupported linker artifact {path} (version {found!r}); expected {expected}")
        try:
            linker = cls(**d["config"])
            issues = [parse_issue_object(i) for i in d["issues"]]
            keys = [i["key"] for i in d["issues"]]
            models = {ch: TfidfModel.from_dict(d["models"][ch]) for ch in CHANNELS}
        except (KeyError, TypeError, ValueError) as exc:
            raise LinkerError(f"corrupt linker artifact {path}; expected {expected}") from exc
        linker._set_state(issues, models, keys)
        return linker


def persist_linker(index: IssueLinker, path: str | Path) -> None:
    index.save(path)


def load_linker(path: str | Path) -> IssueLinker:
    return IssueLinker.load(path)


def load_issue_corpus(corpus_path: str | Path) -> tuple[list[str], list[IssueReport]]:
    """Read every ``*.json`` issue file in a directory, ordered by file name."""
    root = Path(corpus_path)
    if not root.is_dir():
        raise LinkerError(f"corpus not found: {root}")
    keys, issues = [], []
    for f in sorted(root.glob("*.json")):
        try:
            obj = json.loads(f.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise LinkerError(f"{f.name}: malformed JSON ({exc.msg})") from exc
        issues.append(parse_issue_object(obj, f.name))
        keys.append(f.stem)
    return keys, issues


def build_linker(corpus_path: str | Path, similarity_threshold: float = 0.5) -> IssueLinker:
    keys, issues = load_issue_corpus(corpus_path)
    if not issues:
        raise LinkerError(f"empty corpus: no issue files in {corpus_path}")
    return IssueLinker(similarity_threshold, str(corpus_path)).fit(issues, keys=keys)
