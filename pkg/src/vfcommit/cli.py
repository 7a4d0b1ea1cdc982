"""Command-line entry points: linker_builder, model_builder, application, evaluation.

Options accept ``--name``, ``--name_with_underscores`` and the single-dash
``-name`` spelling.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional, Sequence

from .classifiers import DegenerateLabelsError
from .ensemble import rank_commits
from .evaluation import evaluate_detector, f1_row, format_f1_table, split_dataset
from .ingest import IngestError, load_labeled_dataset, parse_input_file
from .linker import IssueLinker, LinkerError, build_linker
from .pipeline import VulnerabilityFixDetector

logger = logging.getLogger("vfcommit")

DEFAULT_LINKER_PATH = "issue_linker.json"
DEFAULT_MODEL_DIR = "model"


def _opt(parser: argparse.ArgumentParser, name: str, **kwargs) -> None:
    spellings = {f"--{name}", f"-{name}", f"--{name.replace('_', '-')}", f"--{name.replace('-', '_')}"}
    spellings |= {f"-{s.lstrip('-')}" for s in list(spellings)}
    parser.add_argument(*sorted(spellings, key=lambda s: (not s.startswith("--"), s)), dest=name.replace("-", "_"), **kwargs)


def _parser(prog: str, description: str) -> argparse.ArgumentParser:
    return argparse.ArgumentParser(prog=prog, description=description, allow_abbrev=False)


def _setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format="%(levelname)s: %(message)s")


def write_json_atomic(obj, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, ensure_ascii=False)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_linker(path: Optional[str], required: bool) -> Optional[IssueLinker]:
    if path is None:
        if Path(DEFAULT_LINKER_PATH).is_file():
            return IssueLinker.load(DEFAULT_LINKER_PATH)
        if required:
            raise LinkerError(f"linker artifact not found: {DEFAULT_LINKER_PATH}")
        logger.warning("no linker artifact; commits without explicit issues will use the imputed issue score")
        return None
    return IssueLinker.load(path)


def linker_builder(argv: Optional[Sequence[str]] = None) -> int:
    p = _parser("linker_builder", "Index an issue corpus for commit-issue link recovery.")
    _opt(p, "corpus_path", required=True, help="directory of issue JSON files")
    _opt(p, "output", default=DEFAULT_LINKER_PATH, help="where to write the linker artifact")
    _opt(p, "similarity_threshold", type=float, default=0.5)
    args = p.parse_args(argv)
    _setup_logging()
    try:
        linker = build_linker(args.corpus_path, args.similarity_threshold)
        linker.save(args.output)
    except LinkerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sizes = linker.vocabulary_sizes()
    print(f"indexed {linker.n_issues} issues (nl vocabulary {sizes['nl']}, code vocabulary {sizes['code']}) -> {args.output}")
    return 0


def _add_training_options(p: argparse.ArgumentParser) -> None:
    _opt(p, "linker", default=None, help="linker artifact (default: ./issue_linker.json when present)")
    _opt(p, "backend", choices=("fallback", "encoder"), default="fallback")
    _opt(p, "seed", type=int, default=42)
    _opt(p, "folds", type=int, default=5)
    _opt(p, "text_encoder", default=None, help="pretrained text encoder id (encoder backend)")
    _opt(p, "code_encoder", default=None, help="pretrained code encoder id (encoder backend)")
    _opt(p, "epochs", type=int, default=3)
    _opt(p, "batch_size", type=int, default=8)
    _opt(p, "learning_rate", type=float, default=2e-5)


def _detector_from_args(args, linker) -> VulnerabilityFixDetector:
    return VulnerabilityFixDetector(
        backend=args.backend,
        linker=linker,
        folds=args.folds,
        seed=args.seed,
        text_encoder=args.text_encoder,
        code_encoder=args.code_encoder,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
    )


def _load_training(path: str):
    dataset, problems = load_labeled_dataset(path)
    if problems:
        print(f"error: {len(problems)} schema violation(s) in {path}:", file=sys.stderr)
        for line in problems[:10]:
            print(f"  {line}", file=sys.stderr)
    return dataset


def model_builder(argv: Optional[Sequence[str]] = None) -> int:
    p = _parser("model_builder", "Train the three base classifiers and the stacking ensemble.")
    _opt(p, "data_path", required=True, help="labeled training JSON")
    _opt(p, "model-dir", default=DEFAULT_MODEL_DIR)
    _add_training_options(p)
    args = p.parse_args(argv)
    _setup_logging()
    try:
        dataset = _load_training(args.data_path)
        if dataset is None:
            return 1
        linker = _load_linker(args.linker, required=args.linker is not None)
        det = _detector_from_args(args, linker).fit(dataset.records)
        det.save(args.model_dir)
    except DegenerateLabelsError:
        print("error: degenerate labels (training data must contain both classes)", file=sys.stderr)
        return 1
    except (IngestError, LinkerError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    w = det.ensemble_.coef_
    print(
        f"trained on {len(dataset)} commits ({dataset.positive_count} positive); "
        f"stacker weights message={w[0]:.4f} issue={w[1]:.4f} patch={w[2]:.4f} "
        f"bias={det.ensemble_.intercept_:.4f} -> {args.model_dir}"
    )
    return 0


def application(argv: Optional[Sequence[str]] = None) -> int:
    p = _parser("application", "Score commits in prediction or ranking mode.")
    _opt(p, "mode", choices=("prediction", "ranking"), required=True)
    _opt(p, "input", required=True)
    _opt(p, "output", required=True)
    _opt(p, "threshold", type=float, default=None, help="decision threshold (prediction mode, default 0.5)")
    _opt(p, "model-dir", default=DEFAULT_MODEL_DIR)
    _opt(p, "linker", default=None)
    args = p.parse_args(argv)
    _setup_logging()

    threshold = 0.5
    if args.threshold is not None:
        if args.mode == "ranking":
            logger.warning("--threshold is ignored in ranking mode")
        elif not 0.0 <= args.threshold <= 1.0:
            print(f"error: threshold must lie in [0, 1], got {args.threshold}", file=sys.stderr)
            return 1
        else:
            threshold = args.threshold

    if not Path(args.model_dir).is_dir():
        print(f"error: model directory not found: {args.model_dir}", file=sys.stderr)
        return 1
    try:
        records = parse_input_file(args.input)
        linker = _load_linker(args.linker, required=args.linker is not None)
        det = VulnerabilityFixDetector.load(args.model_dir, linker=linker)
        det.threshold = threshold
        det.ensemble_.threshold = threshold
        scored = det.score_commits(records)
    except (IngestError, LinkerError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.mode == "prediction":
        out = [{"id": s.id, "probability": s.probability, "prediction": s.flagged} for s in scored]
        summary = f"{sum(s.flagged for s in scored)} of {len(scored)} commits flagged at threshold {threshold}"
    else:
        out = [{"id": s.id, "probability": s.probability} for s in rank_commits(scored)]
        summary = f"ranked {len(scored)} commits"
    try:
        write_json_atomic(out, args.output)
    except OSError as exc:
        print(f"error: cannot write {args.output}: {exc}", file=sys.stderr)
        return 1
    print(f"{summary} -> {args.output}")
    return 0


def evaluation(argv: Optional[Sequence[str]] = None) -> int:
    p = _parser("evaluation", "Split a labeled dataset, train, and report per-classifier and ensemble F1.")
    _opt(p, "data_path", required=True)
    _opt(p, "train_fraction", type=float, default=0.8)
    _opt(p, "split_seed", type=int, default=0)
    _opt(p, "name", default="model", help="row label in the F1 table")
    _opt(p, "output", default=None, help="write the JSON report here")
    _add_training_options(p)
    args = p.parse_args(argv)
    _setup_logging()
    try:
        dataset = _load_training(args.data_path)
        if dataset is None:
            return 1
        train, test = split_dataset(dataset, args.train_fraction, args.split_seed)
        linker = _load_linker(args.linker, required=args.linker is not None)
        det = _detector_from_args(args, linker).fit(train.records)
        report = evaluate_detector(det, test)
    except DegenerateLabelsError:
        print("error: degenerate labels (training data must contain both classes)", file=sys.stderr)
        return 1
    except (IngestError, LinkerError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(format_f1_table({args.name: f1_row(report)}))
    ab = report["ablation"]
    print(
        f"unique true positives: message={ab['uniques']['message']} issue={ab['uniques']['issue']} "
        f"patch={ab['uniques']['patch']} (total discovered {ab['total_discovered']})"
    )
    if args.output:
        write_json_atomic(report, args.output)
    return 0


_COMMANDS = {
    "linker_builder": linker_builder,
    "model_builder": model_builder,
    "application": application,
    "evaluation": evaluation,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in _COMMANDS:
        print(f"usage: python -m vfcommit {{{','.join(_COMMANDS)}}} [options]", file=sys.stderr)
        return 2
    return _COMMANDS[argv[0]](argv[1:])


if __name__ == "__main__":
    sys.exit(main())
