"""Retrieval-augmented log anomaly detection.

Raw logs are parsed into labeled entries, normal entries are embedded and
stored, and a query log line is judged normal or abnormal by a completion
backend shown the most similar stored normals.
"""

from .embed import Embedder, EmbedderDescriptor, HashingEmbedder, RemoteEmbedder
from .evaluation import ConfusionMatrix, MetricsReport, accumulate, compare_strategies, metrics
from .ingest import (
    DatasetSplit,
    GroundTruth,
    LogEntry,
    load_dataset,
    parse_line,
    read_dataset,
    sample_test,
    split_dataset,
    write_dataset,
)
from .ragqa import (
    ClassificationError,
    MockBackend,
    PromptTemplate,
    RemoteBackend,
    Trace,
    Verdict,
    VerdictLabel,
    VerdictParseError,
    classify_entry,
    parse_verdict,
    render_prompt,
)
from .refset import (
    BuildReport,
    ClusteredPlan,
    RandomPlan,
    build_reference_store,
    elbow_select_k,
    kmeans,
    project_2d,
)
from .store import RetrievalHit, VectorRecord, VectorStore

__version__ = "0.1.0"

__all__ = [
    "BuildReport",
    "ClassificationError",
    "ClusteredPlan",
    "ConfusionMatrix",
    "DatasetSplit",
    "Embedder",
    "EmbedderDescriptor",
    "GroundTruth",
    "HashingEmbedder",
    "LogEntry",
    "MetricsReport",
    "MockBackend",
    "PromptTemplate",
    "RandomPlan",
    "RemoteBackend",
    "RemoteEmbedder",
    "RetrievalHit",
    "Trace",
    "VectorRecord",
    "VectorStore",
    "Verdict",
    "VerdictLabel",
    "VerdictParseError",
    "accumulate",
    "build_reference_store",
    "classify_entry",
    "compare_strategies",
    "elbow_select_k",
    "kmeans",
    "load_dataset",
    "metrics",
    "parse_line",
    "parse_verdict",
    "project_2d",
    "read_dataset",
    "render_prompt",
    "sample_test",
    "split_dataset",
    "write_dataset",
    "__version__",
]
