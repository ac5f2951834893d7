"""Test phase: a sequence is anomalous as soon as one event deviates beyond its threshold."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from logdp.ingest import UNSEEN_TEMPLATE_ID
from logdp.models import compute_deviation_matrix
from logdp.pipeline import ModelBundle
from logdp.sequencer import EventCountMatrix


class SchemaMismatch(Exception):
    pass


@dataclass
class Verdict:
    sequence_id: str
    deviations: np.ndarray
    violated_events: list[int]
    is_anomaly: bool
    unseen_event_hit: bool = False

    def to_record(self, event_ids: Sequence[int], thresholds: np.ndarray) -> dict:
        col = {e: j for j, e in enumerate(event_ids)}
        return {
            "sequence_id": self.sequence_id,
            "is_anomaly": self.is_anomaly,
            "unseen_event_hit": self.unseen_event_hit,
            "violations": [
                {"event_id": e, "deviation": float(self.deviations[col[e]]), "threshold": float(thresholds[col[e]])}
                for e in self.violated_events
            ],
        }


def check_schema(event_ids: Sequence[int], bundle: ModelBundle) -> None:
    if list(event_ids) != list(bundle.event_ids):
        extra = sorted(set(event_ids) - set(bundle.event_ids))
        missing = sorted(set(bundle.event_ids) - set(event_ids))
        raise SchemaMismatch(
            f"data columns differ from the model bundle: extra {extra}, missing {missing}"
            + ("" if extra or missing else ", column order differs")
        )


def _verdicts(ids: Sequence[str], counts: np.ndarray, D: np.ndarray, bundle: ModelBundle) -> list[Verdict]:
    t = bundle.thresholds.values
    exceed = D > t
    unseen_col = bundle.event_ids.index(UNSEEN_TEMPLATE_ID) if UNSEEN_TEMPLATE_ID in bundle.event_ids else None
    out = []
    for i, sid in enumerate(ids):
        violated = [bundle.event_ids[j] for j in np.flatnonzero(exceed[i])]
        unseen = bool(unseen_col is not None and counts[i, unseen_col] > 0)
        out.append(Verdict(sid, D[i], violated, bool(violated) or unseen, unseen))
    return out


def score_sequence(row, bundle: ModelBundle, event_ids: Optional[Sequence[int]] = None, sequence_id: str = "") -> Verdict:
    """Score one count vector aligned with ``event_ids`` (defaults to the bundle's columns)."""
    event_ids = bundle.event_ids if event_ids is None else event_ids
    check_schema(event_ids, bundle)
    counts = np.asarray(row, dtype=float).reshape(1, -1)
    D = compute_deviation_matrix(counts, bundle.event_ids, bundle.models)
    return _verdicts([sequence_id], counts, D, bundle)[0]


def detect_batch(X: EventCountMatrix, bundle: ModelBundle, check_source: bool = True) -> list[Verdict]:
    check_schema(X.event_ids, bundle)
    if check_source and bundle.source and X.source != bundle.source:
        raise SchemaMismatch(
            f"data fingerprint {X.source[:12]} does not match the bundle's training data {bundle.source[:12]}"
        )
    if X.n == 0:
        return []
    D = compute_deviation_matrix(X.counts, X.event_ids, bundle.models)
    return _verdicts(X.sequence_ids, X.counts, D, bundle)


def verdict_records(verdicts: Sequence[Verdict], bundle: ModelBundle, header: Optional[dict] = None) -> list[dict]:
    head = {"kind": "verdicts", "n": len(verdicts), "anomalies": sum(v.is_anomaly for v in verdicts)}
    head.update(header or {})
    t = bundle.thresholds.values
    return [head] + [v.to_record(bundle.event_ids, t) for v in verdicts]


def save_verdicts(path: Path | str, verdicts: Sequence[Verdict], bundle: ModelBundle, header: Optional[dict] = None) -> None:
    with Path(path).open("w") as fh:
        for r in verdict_records(verdicts, bundle, header):
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def load_verdict_flags(path: Path | str) -> list[tuple[str, bool]]:
    """(sequence_id, is_anomaly) pairs from a verdict file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"verdict file not found: {path}")
    records = [json.loads(x) for x in path.read_text().splitlines() if x.strip()]
    if not records or records[0].get("kind") != "verdicts":
        raise ValueError(f"{path}: not a verdict file")
    return [(r["sequence_id"], bool(r["is_anomaly"])) for r in records[1:]]
