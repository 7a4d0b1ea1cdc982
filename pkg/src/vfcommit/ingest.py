"""Commit input parsing: JSON commit files and unified diffs."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

logger = logging.getLogger(__name__)

_COMMIT_KEYS = {"id", "message", "issue", "patch", "label"}
_ISSUE_KEYS = {"title", "body", "comments"}
_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")


class IngestError(ValueError):
    """Raised when an input file cannot be turned into commit records."""


@dataclass
class IssueReport:
    title: str = ""
    body: str = ""
    comments: list[str] = field(default_factory=list)

    @property
    def usable(self) -> bool:
        return bool(self.title.strip() or self.body.strip())

    def classifier_text(self) -> str:
        # comments are linker-only
        return f"{self.title}\n{self.body}"

    def to_dict(self) -> dict:
        return {"title": self.title, "body": self.body, "comments": list(self.comments)}


@dataclass
class FileChange:
    file_path: str = ""
    added_lines: list[str] = field(default_factory=list)
    removed_lines: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "file_path": self.file_path,
            "added": list(self.added_lines),
            "removed": list(self.removed_lines),
        }


@dataclass
class CommitRecord:
    id: str
    message: str = ""
    issue: Optional[IssueReport] = None
    patch: list[FileChange] = field(default_factory=list)
    label: Optional[bool] = None

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"id": self.id, "message": self.message}
        if self.issue is not None:
            out["issue"] = self.issue.to_dict()
        out["patch"] = [fc.to_dict() for fc in self.patch]
        if self.label is not None:
            out["label"] = self.label
        return out


@dataclass
class LabeledDataset:
    records: list[CommitRecord]

    def __post_init__(self):
        missing = [r.id for r in self.records if r.label is None]
        if missing:
            raise IngestError(f"unlabeled records in dataset: {missing[:10]}")

    @property
    def positive_count(self) -> int:
        return sum(1 for r in self.records if r.label)

    @property
    def negative_count(self) -> int:
        return len(self.records) - self.positive_count

    @property
    def labels(self) -> list[bool]:
        return [bool(r.label) for r in self.records]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass
class ValidationResult:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def parse_unified_diff(diff_text: str) -> list[FileChange]:
    """Split a unified diff into per-file added/removed line lists.

    Hunk line counts are tracked, so a removed line whose content starts
    with ``--`` is not mistaken for a file header. A hunk with no preceding
    file header yields a change with an empty ``file_path``.
    """
    changes: list[FileChange] = []
    current: Optional[FileChange] = None
    # True between a "diff --git" line and its first hunk: ---/+++ belong to it
    git_header_open = False
    old_left = new_left = 0
    old_path = ""

    for line in diff_text.splitlines():
        if old_left > 0 or new_left > 0:
            if line.startswith("\\"):
                continue
            if line.startswith("+"):
                current.added_lines.append(line[1:])
                new_left -= 1
                continue
            if line.startswith("-"):
                current.removed_lines.append(line[1:])
                old_left -= 1
                continue
            if line.startswith(" ") or line == "":
                old_left -= 1
                new_left -= 1
                continue
            old_left = new_left = 0  # truncated hunk

        if line.startswith("diff --git "):
            parts = line.split()
            path = _strip_prefix(parts[3]) if len(parts) >= 4 else ""
            current = FileChange(file_path=path)
            changes.append(current)
            git_header_open = True
        elif line.startswith("--- "):
            old_path = _strip_prefix(line[4:])
            if not git_header_open:
                current = FileChange(file_path=old_path)
                changes.append(current)
                git_header_open = True
        elif line.startswith("+++ ") and current is not None and git_header_open:
            new_path = _strip_prefix(line[4:])
            current.file_path = old_path if new_path == "/dev/null" else new_path
        elif (m := _HUNK_RE.match(line)) is not None:
            if current is None:
                current = FileChange()
                changes.append(current)
            git_header_open = False
            old_left = int(m.group(2)) if m.group(2) is not None else 1
            new_left = int(m.group(4)) if m.group(4) is not None else 1
    return changes


def _strip_prefix(path: str) -> str:
    path = path.split("\t", 1)[0].strip()
    if path.startswith(("a/", "b/")):
        return path[2:]
    return path


def _as_str_list(value: Any, where: str) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return value.splitlines()
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return list(value)
    raise IngestError(f"{where}: expected a string or list of strings")


def _parse_patch_entry(entry: Any, where: str) -> list[FileChange]:
    if isinstance(entry, str):
        return parse_unified_diff(entry)
    if isinstance(entry, dict):
        added = entry.get("added", entry.get("added_lines"))
        removed = entry.get("removed", entry.get("removed_lines"))
        path = entry.get("file_path", entry.get("path", entry.get("file", "")))
        if added is None and removed is None and "diff" in entry:
            changes = parse_unified_diff(entry["diff"])
            for fc in changes:
                fc.file_path = fc.file_path or str(path)
            return changes
        return [
            FileChange(
                file_path=str(path or ""),
                added_lines=_as_str_list(added, f"{where}.added"),
                removed_lines=_as_str_list(removed, f"{where}.removed"),
            )
        ]
    raise IngestError(f"{where}: patch element must be diff text or an object")


def _parse_issue(obj: Any, where: str) -> Optional[IssueReport]:
    if obj is None:
        return None
    if not isinstance(obj, dict):
        raise IngestError(f"{where}: issue must be an object")
    unknown = set(obj) - _ISSUE_KEYS
    if unknown:
        logger.warning("%s: ignoring unknown issue keys %s", where, sorted(unknown))
    comments = obj.get("comments") or []
    if not isinstance(comments, list):
        raise IngestError(f"{where}.comments: expected a list")
    return IssueReport(
        title=str(obj.get("title") or ""),
        body=str(obj.get("body") or ""),
        comments=[str(c) for c in comments],
    )


def parse_issue_object(obj: Any, where: str = "issue") -> IssueReport:
    issue = _parse_issue(obj, where)
    if issue is None:
        raise IngestError(f"{where}: empty issue object")
    return issue


def record_from_dict(obj: Any, index: int) -> CommitRecord:
    where = f"[{index}]"
    if not isinstance(obj, dict):
        raise IngestError(f"element {index}: expected an object")
    if "id" not in obj or obj["id"] is None:
        raise IngestError(f"element {index}: missing required key 'id'")
    unknown = set(obj) - _COMMIT_KEYS
    if unknown:
        logger.warning("element %d: ignoring unknown keys %s", index, sorted(unknown))

    patch_raw = obj.get("patch") or []
    if isinstance(patch_raw, str):
        patch_raw = [patch_raw]
    if not isinstance(patch_raw, list):
        raise IngestError(f"{where}.patch: expected a list")
    patch: list[FileChange] = []
    for j, entry in enumerate(patch_raw):
        patch.extend(_parse_patch_entry(entry, f"{where}.patch[{j}]"))

    label = obj.get("label")
    if label is not None:
        if isinstance(label, bool):
            pass
        elif label in (0, 1):
            label = bool(label)
        else:
            raise IngestError(f"{where}.label: expected a boolean")

    return CommitRecord(
        id=str(obj["id"]),
        message=str(obj.get("message") or ""),
        issue=_parse_issue(obj.get("issue"), f"{where}.issue"),
        patch=patch,
        label=label,
    )


def parse_input_data(data: bytes | str) -> list[CommitRecord]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    try:
        items = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise IngestError(f"malformed JSON at byte offset {offset}: {exc.msg}") from exc
    if not isinstance(items, list):
        raise IngestError("input must be a JSON array of commit objects")
    records = [record_from_dict(obj, i) for i, obj in enumerate(items)]
    seen: dict[str, int] = {}
    for i, rec in enumerate(records):
        if rec.id in seen:
            raise IngestError(f"element {i}: duplicate id {rec.id!r} (first at element {seen[rec.id]})")
        seen[rec.id] = i
    return records


def parse_input_file(path: str | Path) -> list[CommitRecord]:
    """Read a JSON array of commits from ``path``."""
    return parse_input_data(Path(path).read_bytes())


def records_to_json(records: Iterable[CommitRecord], indent: int | None = 2) -> str:
    return json.dumps([r.to_dict() for r in records], indent=indent, ensure_ascii=False)


def write_records(records: Iterable[CommitRecord], path: str | Path) -> None:
    Path(path).write_text(records_to_json(records), encoding="utf-8")


def validate_record(record: CommitRecord, require_label: bool = False) -> ValidationResult:
    violations = []
    if not isinstance(record.id, str) or not record.id.strip():
        violations.append("empty id")
    if not isinstance(record.message, str):
        violations.append("message is not a string")
    if record.issue is not None and not record.issue.usable:
        violations.append("issue has empty title and body")
    if require_label and record.label is None:
        violations.append("label absent")
    return ValidationResult(violations)


def load_labeled_dataset(path: str | Path) -> tuple[LabeledDataset | None, list[str]]:
    """Parse a training file. Returns (dataset, violations); dataset is None if any violation."""
    records = parse_input_file(path)
    problems = []
    for i, rec in enumerate(records):
        for v in validate_record(rec, require_label=True).violations:
            problems.append(f"element {i} ({rec.id!r}): {v}")
    if problems:
        return None, problems
    return LabeledDataset(records), []
