"""Synthetic labeled commits with planted vocabulary, for tests and demos.

Positives carry security vocabulary in the message, the issue, and the
added code; negatives draw from routine-maintenance vocabulary. Both share a
pool of filler words so no single filler token is informative.
"""
from __future__ import annotations

import random
from typing import Optional

from .ingest import CommitRecord, FileChange, IssueReport

POSITIVE_MESSAGE_WORDS = ["cve", "overflow", "vulnerability", "sanitize", "exploit", "security", "injection"]
NEGATIVE_MESSAGE_WORDS = ["refactor", "docs", "typo", "bump", "cleanup", "rename", "changelog"]
POSITIVE_ISSUE_WORDS = ["attacker", "crash", "heap", "overflow", "untrusted", "bypass", "xss"]
NEGATIVE_ISSUE_WORDS = ["feature", "request", "slow", "ui", "documentation", "translation", "layout"]
POSITIVE_CODE = [
    "memcpy_bound(dst, src, len);",
    "if (len > MAX_LEN) return -EINVAL;",
    "escape_html(user_input)",
    "check_bounds(idx, size);",
]
NEGATIVE_CODE = [
    "log_message(\"starting\");",
    "int total = count + 1;",
    "return render_template(page);",
    "self.name = name",
]
FILLER = ["the", "module", "handler", "value", "config", "parser", "service", "client", "request", "module"]


def _sentence(rng: random.Random, planted: list[str], k_planted: int, k_filler: int) -> str:
    words = rng.sample(planted, k_planted) + [rng.choice(FILLER) for _ in range(k_filler)]
    rng.shuffle(words)
    return " ".join(words)


def _file_change(rng: random.Random, positive: bool, tag: str) -> FileChange:
    pool = POSITIVE_CODE if positive else NEGATIVE_CODE
    added = [rng.choice(pool)] + [f"{tag}_{rng.randint(0, 9)} = {rng.randint(0, 99)};"]
    removed = [rng.choice(NEGATIVE_CODE)] if rng.random() < 0.7 else []
    path = f"src/{rng.choice(FILLER)}_{tag}.c"
    return FileChange(path, added, removed)


def make_synthetic_dataset(
    n: int = 250,
    negative_ratio: int = 5,
    seed: int = 0,
    explicit_issue_fraction: float = 0.4,
    linkable_fraction: float = 0.3,
) -> tuple[list[CommitRecord], list[tuple[str, IssueReport]]]:
    """Return ``(records, corpus)``.

    ``n // (negative_ratio + 1)`` records are positive. A share of commits
    keep an explicit issue; another share have their issue moved into the
    returned corpus (keyed by file stem) so a linker can recover it from the
    shared identifiers.
    """
    rng = random.Random(seed)
    n_pos = n // (negative_ratio + 1)
    labels = [True] * n_pos + [False] * (n - n_pos)
    rng.shuffle(labels)
    records: list[CommitRecord] = []
    corpus: list[tuple[str, IssueReport]] = []
    for i, positive in enumerate(labels):
        tag = f"fn{i:04d}"
        msg_words = POSITIVE_MESSAGE_WORDS if positive else NEGATIVE_MESSAGE_WORDS
        issue_words = POSITIVE_ISSUE_WORDS if positive else NEGATIVE_ISSUE_WORDS
        message = _sentence(rng, msg_words, 2, 3) + f" in {tag}_handler()"
        patch = [_file_change(rng, positive, tag) for _ in range(rng.randint(1, 3))]
        issue = IssueReport(
            title=_sentence(rng, issue_words, 2, 2),
            body=_sentence(rng, issue_words, 2, 6) + f" see {tag}_handler()",
            comments=[_sentence(rng, FILLER, 1, 3)] if rng.random() < 0.5 else [],
        )
        u = rng.random()
        if u < explicit_issue_fraction:
            attached: Optional[IssueReport] = issue
        else:
            attached = None
            if u < explicit_issue_fraction + linkable_fraction:
                corpus.append((f"issue-{i:04d}", issue))
        records.append(CommitRecord(f"c{i:04d}", message, attached, patch, positive))
    # decoy issues that match nothing in particular
    for j in range(max(3, n // 20)):
        words = POSITIVE_ISSUE_WORDS if rng.random() < 0.2 else NEGATIVE_ISSUE_WORDS
        corpus.append((f"decoy-{j:04d}", IssueReport(_sentence(rng, words, 2, 2), _sentence(rng, words, 2, 5))))
    return records, corpus
