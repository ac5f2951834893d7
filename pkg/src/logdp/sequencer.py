"""Grouping of parsed messages into log sequences and the event count matrix."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from logdp.artifacts import fingerprint
from logdp.ingest import UNSEEN_TEMPLATE_ID, ParsedMessage, TemplateStore

logger = logging.getLogger(__name__)

NORMAL = "normal"
ANOMALOUS = "anomalous"
WINDOW_MODES = ("session", "fixed_count", "fixed_time", "sliding")


class SequencerError(Exception):
    pass


@dataclass(frozen=True)
class WindowSpec:
    mode: str = "session"
    size: float = 0
    step: float = 0
    # sliding windows only: "count" (messages) or "seconds"
    unit: str = "count"

    def __post_init__(self):
        if self.mode not in WINDOW_MODES:
            raise ValueError(f"unknown window mode {self.mode!r}")
        if self.mode != "session" and self.size <= 0:
            raise ValueError(f"{self.mode} windows need size > 0")
        if self.mode == "sliding":
            if not 0 < self.step <= self.size:
                raise ValueError("sliding windows need 0 < step <= size")
            if self.unit not in ("count", "seconds"):
                raise ValueError(f"unknown sliding unit {self.unit!r}")
        if self.mode in ("fixed_count",) or (self.mode == "sliding" and self.unit == "count"):
            if self.size != int(self.size) or self.step != int(self.step):
                raise ValueError("count windows need integer size and step")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def uses_time(self) -> bool:
        return self.mode == "fixed_time" or (self.mode == "sliding" and self.unit == "seconds")


@dataclass
class LogSequence:
    sequence_id: str
    line_nos: list[int]
    events: list[int]
    label: Optional[str] = None


@dataclass
class PartitionDiagnostics:
    missing_session_key: int = 0


def _or_label(labels: Sequence[Optional[str]]) -> Optional[str]:
    if any(lab == ANOMALOUS for lab in labels):
        return ANOMALOUS
    if any(lab is not None for lab in labels):
        return NORMAL
    return None


def _from_members(seq_id: str, members: Sequence[ParsedMessage]) -> LogSequence:
    return LogSequence(
        sequence_id=seq_id,
        line_nos=[m.line_no for m in members],
        events=[m.template_id for m in members],
        label=_or_label([m.label for m in members]),
    )


def _count_windows(n: int, size: int, step: int) -> list[tuple[int, int]]:
    bounds = []
    start = 0
    while start + size <= n:
        bounds.append((start, start + size))
        start += step
    # trailing messages not yet covered go into one partial window
    covered = bounds[-1][1] if bounds else 0
    if covered < n:
        bounds.append((start, n))
    return bounds


def _time_windows(times: np.ndarray, size: float, step: float) -> list[np.ndarray]:
    t0, t1 = float(times.min()), float(times.max())
    n_windows = int(math.floor((t1 - t0) / step)) + 1
    out = []
    for k in range(n_windows):
        lo = t0 + k * step
        idx = np.flatnonzero((times >= lo) & (times < lo + size))
        if idx.size:
            out.append(idx)
    return out


def partition(
    messages: Sequence[ParsedMessage],
    spec: WindowSpec,
    session_labels: Optional[Mapping[str, str]] = None,
    diagnostics: Optional[PartitionDiagnostics] = None,
) -> list[LogSequence]:
    """Group messages into sequences according to ``spec`` (file order preserved)."""
    if not messages:
        return []
    if spec.uses_time:
        for m in messages:
            if m.timestamp is None:
                raise SequencerError(f"time windows need timestamps; line {m.line_no} has none")

    if spec.mode == "session":
        groups: dict[str, list[ParsedMessage]] = {}
        missing = 0
        for m in messages:
            if m.session_key is None:
                missing += 1
                continue
            groups.setdefault(m.session_key, []).append(m)
        if missing:
            logger.warning("%d messages without a session key were excluded", missing)
        if diagnostics is not None:
            diagnostics.missing_session_key += missing
        out = []
        for key, members in groups.items():
            seq = _from_members(key, members)
            if session_labels is not None:
                seq.label = session_labels.get(key, seq.label)
            out.append(seq)
        return out

    if spec.mode == "fixed_count":
        size = int(spec.size)
        bounds = [(i, min(i + size, len(messages))) for i in range(0, len(messages), size)]
        return [_from_members(str(k), messages[a:b]) for k, (a, b) in enumerate(bounds)]

    if spec.mode == "fixed_time":
        times = np.array([m.timestamp for m in messages], dtype=float)
        index = np.floor((times - times.min()) / spec.size).astype(np.int64)
        groups_t: dict[int, list[ParsedMessage]] = {}
        for k, m in zip(index.tolist(), messages):
            groups_t.setdefault(k, []).append(m)
        return [_from_members(str(k), groups_t[k]) for k in sorted(groups_t)]

    if spec.unit == "count":
        bounds = _count_windows(len(messages), int(spec.size), int(spec.step))
        return [_from_members(str(k), messages[a:b]) for k, (a, b) in enumerate(bounds)]
    times = np.array([m.timestamp for m in messages], dtype=float)
    windows = _time_windows(times, spec.size, spec.step)
    return [_from_members(str(k), [messages[i] for i in idx]) for k, idx in enumerate(windows)]


@dataclass
class EventCountMatrix:
    counts: np.ndarray
    event_ids: list[int]
    sequence_ids: list[str]
    labels: list[Optional[str]]
    # provenance hash of whatever produced the rows (parser + windowing, or a synthetic spec)
    source: str = ""

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(len(self.sequence_ids), len(self.event_ids))
        if len(self.labels) != len(self.sequence_ids):
            raise SequencerError("labels and sequence ids differ in length")
        if list(self.event_ids) != sorted(self.event_ids):
            raise SequencerError("event columns must be in ascending id order")
        if (self.counts < 0).any():
            raise SequencerError("counts must be nonnegative")

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def m(self) -> int:
        return self.counts.shape[1]

    def column_index(self, event_id: int) -> int:
        return self.event_ids.index(event_id)

    def rows(self, index) -> "EventCountMatrix":
        index = np.asarray(index, dtype=np.int64).reshape(-1)
        return EventCountMatrix(
            self.counts[index],
            list(self.event_ids),
            [self.sequence_ids[i] for i in index],
            [self.labels[i] for i in index],
            self.source,
        )

    def anomalous_mask(self) -> np.ndarray:
        return np.array([lab == ANOMALOUS for lab in self.labels], dtype=bool)

    def to_records(self) -> list[dict]:
        header = {"kind": "ecm", "event_ids": list(self.event_ids), "source": self.source, "n": self.n}
        rows = []
        for sid, lab, row in zip(self.sequence_ids, self.labels, self.counts):
            nz = np.flatnonzero(row)
            rows.append({
                "sequence_id": sid,
                "label": lab,
                "counts": [[int(self.event_ids[j]), int(row[j])] for j in nz],
            })
        return [header] + rows

    def save(self, path: Path | str) -> None:
        with Path(path).open("w") as fh:
            for r in self.to_records():
                fh.write(json.dumps(r, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "EventCountMatrix":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"event count matrix not found: {path}")
        with path.open() as fh:
            header = json.loads(fh.readline())
            if header.get("kind") != "ecm":
                raise SequencerError(f"{path}: not an event count matrix file")
            event_ids = header["event_ids"]
            col = {e: j for j, e in enumerate(event_ids)}
            seq_ids, labels, rows = [], [], []
            for raw in fh:
                if not raw.strip():
                    continue
                r = json.loads(raw)
                row = np.zeros(len(event_ids), dtype=np.int64)
                for e, c in r["counts"]:
                    row[col[e]] = c
                seq_ids.append(r["sequence_id"])
                labels.append(r["label"])
                rows.append(row)
        counts = np.vstack(rows) if rows else np.zeros((0, len(event_ids)), dtype=np.int64)
        return cls(counts, event_ids, seq_ids, labels, header.get("source", ""))


def vocabulary(store: TemplateStore) -> list[int]:
    """ECM columns for a store: the unseen-template sentinel plus every template id."""
    return sorted([UNSEEN_TEMPLATE_ID] + store.event_ids)


def build_ecm(sequences: Sequence[LogSequence], store: TemplateStore, source: str = "") -> EventCountMatrix:
    event_ids = vocabulary(store)
    col = {e: j for j, e in enumerate(event_ids)}
    counts = np.zeros((len(sequences), len(event_ids)), dtype=np.int64)
    for i, seq in enumerate(sequences):
        for e, c in Counter(seq.events).items():
            if e not in col:
                raise SequencerError(f"sequence {seq.sequence_id}: template {e} is not in the store")
            counts[i, col[e]] = c
    return EventCountMatrix(
        counts, event_ids, [s.sequence_id for s in sequences], [s.label for s in sequences], source
    )


def data_source(parser_fingerprint: str, spec: WindowSpec) -> str:
    return fingerprint({"parser": parser_fingerprint, "window": spec.to_dict()})


def split_train_val(X: EventCountMatrix, ratio: float = 2 / 3) -> tuple[EventCountMatrix, EventCountMatrix]:
    """Chronological split: the first ceil(n * ratio) rows train, the rest validate."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    bad = np.flatnonzero(X.anomalous_mask())
    if bad.size:
        raise SequencerError(
            f"training data must be normal-only; {bad.size} anomalous rows (first: {X.sequence_ids[bad[0]]})"
        )
    n_train = math.ceil(Fraction(ratio).limit_denominator(10**6) * X.n)
    if n_train >= X.n:
        raise SequencerError("validation set empty")
    return X.rows(np.arange(n_train)), X.rows(np.arange(n_train, X.n))
