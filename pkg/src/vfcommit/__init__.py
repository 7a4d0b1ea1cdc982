"""Vulnerability-fixing commit detection from messages, issues, and patches."""
from .classifiers import (
    CommitClassifier,
    EncoderConfig,
    PatchInput,
    TrainingConfig,
    build_patch_input,
    classify_patch,
    classify_text,
    train_classifier,
)
from .ensemble import (
    ScoredCommit,
    StackedFeatures,
    StackingEnsemble,
    assemble_features,
    classify_with_threshold,
    rank_commits,
    score_commit,
)
from .evaluation import ablation_unique_tp, compute_metrics, split_dataset
from .ingest import (
    CommitRecord,
    FileChange,
    IssueReport,
    LabeledDataset,
    parse_input_file,
    parse_unified_diff,
    validate_record,
)
from .linker import IssueLinker, TermProfile, TfidfModel, extract_terms, fit_tfidf, vectorize
from .pipeline import VulnerabilityFixDetector, train_stacker

__version__ = "0.1.0"
