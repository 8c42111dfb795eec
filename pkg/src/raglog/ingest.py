"""Raw log ingestion: label extraction, train/test splitting, JSONL dataset files.

Supercomputer-style logs (BGL, Thunderbird) label each line with a leading
token: ``-`` for non-alert lines, an alert category tag otherwise. Only that
token is interpreted; the rest of the line is kept verbatim, with no template
parsing of any kind.
"""
from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

log = logging.getLogger(__name__)

DATASET_FORMAT_NAME = "raglog-dataset"
DATASET_FORMAT_VERSION = 1

_FIRST_TOKEN_RE = re.compile(r"^(\S+)(\s+)?(.*)$", re.DOTALL)


class ParseError(ValueError):
    """A single line could not be turned into a log entry."""


class EmptyLineError(ParseError):
    """Blank or whitespace-only input line."""


class NoMessageError(ParseError):
    """Line consists of only the label token, no message content."""


class FormatError(ParseError):
    """Unrecoverable line in a dataset file; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DegenerateSplitError(ValueError):
    """A requested split would leave the test or training side empty."""


class GroundTruth(Enum):
    NORMAL = "normal"
    ANOMALOUS = "anomalous"


@dataclass(frozen=True)
class LogEntry:
    """One raw log line with its ground-truth label and the label-stripped message.

    ``raw`` keeps the original line (label token included); it is never fed to
    the classifier and is not persisted in dataset files, so the ground truth
    cannot leak downstream. Entries read back from a dataset file carry
    ``raw = ""``.
    """

    id: int
    source: str
    label: GroundTruth
    message: str
    raw: str = ""


@dataclass
class LoadResult:
    """Entries read from one log file plus skip counters."""

    entries: list[LogEntry]
    blank_lines: int = 0
    skipped_lines: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass
class DatasetSplit:
    """Deterministic partition of a dataset into training normals and a test set.

    Every source entry lands in exactly one of: ``train_normals``, ``test``,
    or the discarded anomalous training-side remainder (counted in
    ``discarded_train_anomalous``). Anomalous entries are never used for
    training because the reference store must contain only normals.
    """

    train_normals: list[LogEntry]
    test: list[LogEntry]
    seed: int
    test_fraction: float
    discarded_train_anomalous: int = 0


def parse_line(line: str, fmt: str = "bgl_like", *, entry_id: int = 0, source: str = "") -> LogEntry:
    """Parse one raw log line into a labeled entry.

    The first whitespace-delimited token is the label: ``-`` means normal,
    anything else is an alert category tag and means anomalous. The token and
    the whitespace run after it are stripped from the message; spacing in the
    remainder is preserved.

    Raises EmptyLineError for blank input and NoMessageError when the line is
    only a label token.
    """
    if fmt != "bgl_like":
        raise ValueError(f"unknown log format: {fmt!r}")
    stripped = line.rstrip("\r\n")
    if not stripped.strip():
        raise EmptyLineError("blank or whitespace-only line")
    m = _FIRST_TOKEN_RE.match(stripped.lstrip())
    token, message = m.group(1), m.group(3)
    if not message:
        raise NoMessageError(f"line has label token {token!r} but no message")
    label = GroundTruth.NORMAL if token == "-" else GroundTruth.ANOMALOUS
    return LogEntry(id=entry_id, source=source, label=label, message=message, raw=stripped)


def load_dataset(
    path: str | Path,
    fmt: str = "bgl_like",
    *,
    limit: int | None = None,
    lenient: bool = False,
) -> LoadResult:
    """Load a raw log file into entries, in file order, with ids 0..n-1.

    Blank lines are always skipped and counted. Malformed lines raise
    FormatError with the line number unless ``lenient`` is set, in which case
    they are skipped and counted. Bytes that are not valid UTF-8 are decoded
    with replacement characters; these logs contain occasional binary garbage.
    """
    path = Path(path)
    source = path.name
    entries: list[LogEntry] = []
    blanks = 0
    skipped = 0
    with open(path, encoding="utf-8", errors="replace") as fh:
        for line_no, line in enumerate(fh, start=1):
            if limit is not None and len(entries) >= limit:
                break
            if not line.strip():
                blanks += 1
                continue
            try:
                entry = parse_line(line, fmt, entry_id=len(entries), source=source)
            except ParseError as exc:
                if lenient:
                    skipped += 1
                    log.warning("skipping line %d of %s: %s", line_no, path, exc)
                    continue
                raise FormatError(line_no, str(exc)) from exc
            entries.append(entry)
    return LoadResult(entries=entries, blank_lines=blanks, skipped_lines=skipped)


def split_dataset(entries: list[LogEntry], test_fraction: float, seed: int) -> DatasetSplit:
    """Split entries into training normals and a mixed-label test set.

    A uniform random subset of ``floor(n * test_fraction)`` entries becomes the
    test set; the remaining entries with a normal label become the training
    pool. Anomalous entries on the training side are discarded (counted, never
    embedded or stored). Deterministic in (entries, seed, test_fraction).
    """
    if not entries:
        raise DegenerateSplitError("cannot split an empty dataset")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(entries)
    test_size = int(n * test_fraction)
    if test_size == 0:
        raise DegenerateSplitError(f"test side is empty: {n} entries at fraction {test_fraction}")
    rng = random.Random(seed)
    indices = list(range(n))
    rng.shuffle(indices)
    test_idx = set(indices[:test_size])
    test = [entries[i] for i in sorted(test_idx)]
    train_side = [entries[i] for i in range(n) if i not in test_idx]
    train_normals = [e for e in train_side if e.label is GroundTruth.NORMAL]
    discarded = len(train_side) - len(train_normals)
    if not train_normals:
        raise DegenerateSplitError("no normal entries left on the training side")
    return DatasetSplit(
        train_normals=train_normals,
        test=test,
        seed=seed,
        test_fraction=test_fraction,
        discarded_train_anomalous=discarded,
    )


def sample_test(test: list[LogEntry], n: int, seed: int) -> list[LogEntry]:
    """Sample min(n, len(test)) entries without replacement, in sampling order.

    Deterministic in seed; original entry ids are preserved. Asking for more
    than the population returns the whole set (a warning is logged).
    """
    if n < 1:
        raise ValueError(f"sample size must be >= 1, got {n}")
    if n >= len(test):
        if n > len(test):
            log.warning("requested %d test entries but only %d available; using all", n, len(test))
        n = len(test)
    return random.Random(seed).sample(test, n)


def _count_labels(entries: list[LogEntry]) -> dict[str, int]:
    anomalous = sum(1 for e in entries if e.label is GroundTruth.ANOMALOUS)
    return {"entries": len(entries), "normal": len(entries) - anomalous, "anomalous": anomalous}


def write_dataset(
    path: str | Path,
    entries: list[LogEntry],
    source: str,
    *,
    extra_header: dict | None = None,
) -> None:
    """Write entries as a JSON-Lines dataset file.

    First line is a header object; each following line is one entry with
    fields ``{id, source, label, message}``. The raw line is intentionally not
    persisted (the label token must not reach the classifier).
    """
    header = {
        "format": DATASET_FORMAT_NAME,
        "version": DATASET_FORMAT_VERSION,
        "source": source,
        "counts": _count_labels(entries),
    }
    if extra_header:
        header.update(extra_header)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for e in entries:
            record = {"id": e.id, "source": e.source, "label": e.label.value, "message": e.message}
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_dataset(path: str | Path) -> tuple[list[LogEntry], dict]:
    """Read a JSON-Lines dataset file back into entries plus its header."""
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line:
            raise FormatError(1, "empty dataset file")
        header = json.loads(header_line)
        if header.get("format") != DATASET_FORMAT_NAME:
            raise FormatError(1, f"not a {DATASET_FORMAT_NAME} file")
        if header.get("version") != DATASET_FORMAT_VERSION:
            raise FormatError(1, f"unsupported dataset version {header.get('version')!r}")
        entries = []
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            obj = json.loads(line)
            entries.append(
                LogEntry(
                    id=int(obj["id"]),
                    source=obj.get("source", ""),
                    label=GroundTruth(obj["label"]),
                    message=obj["message"],
                )
            )
    return entries, header


def is_dataset_file(path: str | Path) -> bool:
    """True when the file starts with a raglog dataset header."""
    try:
        with open(path, encoding="utf-8", errors="replace") as fh:
            first = fh.readline()
        obj = json.loads(first)
        return isinstance(obj, dict) and obj.get("format") == DATASET_FORMAT_NAME
    except (OSError, json.JSONDecodeError):
        return False
