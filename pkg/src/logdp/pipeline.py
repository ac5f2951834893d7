"""Training phase: blanket discovery, per-event models, threshold calibration."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from logdp.markov_blanket import MarkovBlanketMap, classify_events, discover_all
from logdp.models import (
    DependencyModel,
    Hyperparameters,
    ModelError,
    PatternModel,
    ThresholdVector,
    calibrate_thresholds,
    compute_deviation_matrix,
    model_from_dict,
    train_patterns,
)
from logdp.sequencer import EventCountMatrix, SequencerError

logger = logging.getLogger(__name__)


@dataclass
class ModelBundle:
    event_ids: list[int]
    models: dict[int, PatternModel]
    # column maxima of the validation deviation matrix, before any margin
    validation_max: np.ndarray
    blankets: MarkovBlanketMap
    hyperparameters: Hyperparameters
    seed: int
    margin: float = 1.0
    source: str = ""
    config_fingerprint: str = ""

    @property
    def thresholds(self) -> ThresholdVector:
        return ThresholdVector(list(self.event_ids), self.margin * self.validation_max, self.margin)

    @property
    def dependent_events(self) -> list[int]:
        return [e for e in self.event_ids if isinstance(self.models[e], DependencyModel)]

    @property
    def independent_events(self) -> list[int]:
        return [e for e in self.event_ids if not isinstance(self.models[e], DependencyModel)]

    def with_margin(self, margin: float) -> "ModelBundle":
        if margin < 1.0:
            raise ValueError("margin must be >= 1")
        return ModelBundle(
            self.event_ids, self.models, self.validation_max, self.blankets, self.hyperparameters,
            self.seed, margin, self.source, self.config_fingerprint,
        )

    def to_records(self) -> list[dict]:
        header = {
            "kind": "model_bundle",
            "seed": self.seed,
            "hyperparameters": self.hyperparameters.to_dict(),
            "margin": self.margin,
            "event_ids": list(self.event_ids),
            "dependent_events": self.dependent_events,
            "independent_events": self.independent_events,
            "blankets": self.blankets.header(),
            "source": self.source,
            "config_fingerprint": self.config_fingerprint,
        }
        t = self.thresholds.values
        records = [header]
        for j, e in enumerate(self.event_ids):
            records.append({
                "event_id": e,
                "blanket": list(self.blankets.blankets.get(e, ())),
                "model": self.models[e].to_dict(),
                "validation_max": float(self.validation_max[j]),
                "threshold": float(t[j]),
            })
        return records

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.to_records())

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: Path | str) -> "ModelBundle":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"model bundle not found: {path}")
        records = [json.loads(x) for x in path.read_text().splitlines() if x.strip()]
        h = records[0]
        if h.get("kind") != "model_bundle":
            raise ModelError(f"{path}: not a model bundle")
        rows = records[1:]
        bh = h["blankets"]
        blankets = MarkovBlanketMap(
            {r["event_id"]: tuple(r["blanket"]) for r in rows},
            bh["alpha"], bh["max_cond"], bh["rule"], bh["algorithm"],
        )
        return cls(
            event_ids=list(h["event_ids"]),
            models={r["event_id"]: model_from_dict(r["model"]) for r in rows},
            validation_max=np.array([r["validation_max"] for r in rows], dtype=float),
            blankets=blankets,
            hyperparameters=Hyperparameters(**h["hyperparameters"]),
            seed=h["seed"],
            margin=h["margin"],
            source=h["source"],
            config_fingerprint=h["config_fingerprint"],
        )


def fit(
    train: EventCountMatrix,
    val: EventCountMatrix,
    *,
    alpha: float = 0.05,
    max_cond: int = 8,
    rule: str = "AND",
    hp: Hyperparameters = Hyperparameters(),
    seed: int = 0,
    margin: float = 1.0,
    jobs: int = 1,
    force_independent: bool = False,
    config_fingerprint: str = "",
) -> ModelBundle:
    """Learn dependency and proximity patterns from normal sequences.

    ``force_independent`` skips blanket discovery so that every event gets a
    mean model (the proximity-only ablation).
    """
    if train.event_ids != val.event_ids:
        raise SequencerError("training and validation matrices have different columns")
    if train.source != val.source:
        raise SequencerError("training and validation matrices come from different sources")
    for name, X in (("training", train), ("validation", val)):
        if X.anomalous_mask().any():
            raise SequencerError(f"{name} data contains anomalous sequences")
    if train.n == 0:
        raise ModelError("training set is empty")
    if val.n == 0:
        raise ModelError("validation set empty")

    if force_independent:
        blankets = MarkovBlanketMap({e: () for e in train.event_ids}, alpha, max_cond, "none", "none")
    else:
        blankets = discover_all(train.counts, train.event_ids, alpha, max_cond, rule, jobs)
    cls = classify_events(blankets)
    logger.info("%d dependent, %d independent events", len(cls.dependent), len(cls.independent))
    models = train_patterns(train.counts, train.event_ids, blankets.blankets, hp, seed, jobs)
    D = compute_deviation_matrix(val.counts, val.event_ids, models)
    return ModelBundle(
        event_ids=list(train.event_ids),
        models=models,
        validation_max=calibrate_thresholds(D, val.event_ids, 1.0).values,
        blankets=blankets,
        hyperparameters=hp,
        seed=seed,
        margin=margin,
        source=train.source,
        config_fingerprint=config_fingerprint,
    )
