"""Detection metrics, planted-dependency synthetic corpora and the proximity-only ablation."""

from __future__ import annotations

import dataclasses
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from logdp.artifacts import fingerprint
from logdp.detector import Verdict, detect_batch
from logdp.pipeline import fit
from logdp.sequencer import ANOMALOUS, NORMAL, EventCountMatrix


class EvaluationError(Exception):
    pass


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    degenerate: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["degenerate"] = list(self.degenerate)
        return d

    def summary(self) -> str:
        lines = [
            f"sequences  {self.tp + self.fp + self.fn + self.tn}",
            f"tp {self.tp}  fp {self.fp}  fn {self.fn}  tn {self.tn}",
            f"precision  {self.precision:.4f}",
            f"recall     {self.recall:.4f}",
            f"f1         {self.f1:.4f}",
        ]
        if self.degenerate:
            lines.append("undefined (reported as 0): " + ", ".join(self.degenerate))
        return "\n".join(lines)


def metrics_from_counts(tp: int, fp: int, fn: int, tn: int) -> MetricsReport:
    degenerate = []
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        degenerate.append("precision")
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        degenerate.append("recall")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        degenerate.append("f1")
    return MetricsReport(tp, fp, fn, tn, precision, recall, f1, tuple(degenerate))


Flags = Sequence[Union[Verdict, tuple[str, bool]]]


def _pairs(flags: Flags) -> list[tuple[str, bool]]:
    return [(v.sequence_id, v.is_anomaly) if isinstance(v, Verdict) else (v[0], bool(v[1])) for v in flags]


def evaluate(verdicts: Flags, labels: Union[EventCountMatrix, Sequence[tuple[str, Optional[str]]]]) -> MetricsReport:
    """Confusion counts of predicted flags against ground truth, matched by sequence id in order."""
    if isinstance(labels, EventCountMatrix):
        labels = list(zip(labels.sequence_ids, labels.labels))
    predicted = _pairs(verdicts)
    if len(predicted) != len(labels):
        raise EvaluationError(f"{len(predicted)} verdicts but {len(labels)} labels")
    tp = fp = fn = tn = 0
    for k, ((sid, flag), (lid, lab)) in enumerate(zip(predicted, labels)):
        if sid != lid:
            raise EvaluationError(f"sequence ids diverge at position {k}: verdict {sid!r} vs label {lid!r}")
        if lab not in (NORMAL, ANOMALOUS):
            raise EvaluationError(f"sequence {sid!r} has no ground-truth label")
        truth = lab == ANOMALOUS
        tp += flag and truth
        fp += flag and not truth
        fn += truth and not flag
        tn += not flag and not truth
    return metrics_from_counts(tp, fp, fn, tn)


# -- synthetic corpora ---------------------------------------------------------

@dataclass(frozen=True)
class Dependency:
    target: int
    sources: tuple[int, ...]
    kind: str = "linear"
    coefficients: tuple[float, ...] = ()
    intercept: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "quadratic"):
            raise ValueError(f"unknown dependency kind {self.kind!r}")
        if len(self.coefficients) != len(self.sources):
            raise ValueError("one coefficient per source is required")

    def value(self, X: np.ndarray) -> np.ndarray:
        src = np.asarray(X, dtype=float)[..., list(self.sources)]
        if self.kind == "quadratic":
            src = src**2
        return self.intercept + src @ np.asarray(self.coefficients, dtype=float)


DEFAULT_DEPENDENCIES = (
    Dependency(3, (0, 1), "linear", (1.0, 1.0)),
    Dependency(4, (2,), "linear", (2.0,)),
    Dependency(5, (2,), "quadratic", (0.2,)),
)


@dataclass(frozen=True)
class SyntheticSpec:
    m: int = 10
    dependencies: tuple[Dependency, ...] = DEFAULT_DEPENDENCIES
    # non-target events are drawn uniformly from this integer range
    value_range: tuple[int, int] = (2, 7)
    # additive integer noise on targets, uniform on [-noise_bound, noise_bound]
    noise_bound: int = 1
    anomaly_rate: float = 0.1
    magnitude: float = 5.0  # in units of the noise standard deviation
    # fixed perturbation in counts; overrides magnitude (needed for noise-free specs)
    absolute_perturbation: Optional[int] = None
    n_train: int = 1000
    n_val: int = 500
    n_test: int = 500
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.anomaly_rate < 1.0:
            raise ValueError("anomaly_rate must be in [0, 1)")
        targets = [d.target for d in self.dependencies]
        if len(set(targets)) != len(targets):
            raise ValueError("each event can be the target of at most one dependency")
        for d in self.dependencies:
            if not all(0 <= e < self.m for e in (d.target, *d.sources)):
                raise ValueError(f"dependency on events outside 0..{self.m - 1}")
        self.generation_order()  # raises on cycles

    def generation_order(self) -> list[int]:
        deps = {d.target: d for d in self.dependencies}
        order, state = [], {}

        def visit(e):
            if state.get(e) == 1:
                raise ValueError("dependency graph is cyclic")
            if state.get(e) == 2:
                return
            state[e] = 1
            for s in deps[e].sources if e in deps else ():
                visit(s)
            state[e] = 2
            order.append(e)

        for e in range(self.m):
            visit(e)
        return order

    @property
    def noise_std(self) -> float:
        b = self.noise_bound
        return math.sqrt(b * (b + 1) / 3.0)

    @property
    def perturbation(self) -> int:
        if self.absolute_perturbation is not None:
            return self.absolute_perturbation
        return max(1, int(round(self.magnitude * self.noise_std)))

    @property
    def independent_events(self) -> list[int]:
        involved = {e for d in self.dependencies for e in (d.target, *d.sources)}
        return [e for e in range(self.m) if e not in involved]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        if "dependencies" in d:
            d["dependencies"] = tuple(
                Dependency(x["target"], tuple(x["sources"]), x["kind"], tuple(x["coefficients"]), x.get("intercept", 0.0))
                for x in d["dependencies"]
            )
        if "value_range" in d:
            d["value_range"] = tuple(d["value_range"])
        return cls(**d)

    def true_blankets(self) -> dict[int, tuple[int, ...]]:
        """Parents, children and co-parents of every event in the planted graph."""
        parents = {e: set() for e in range(self.m)}
        for d in self.dependencies:
            parents[d.target] |= set(d.sources)
        out = {}
        for e in range(self.m):
            children = {c for c in range(self.m) if e in parents[c]}
            spouses = set().union(*(parents[c] for c in children)) if children else set()
            out[e] = tuple(sorted((parents[e] | children | spouses) - {e}))
        return out

    def target_range(self, dep: Dependency) -> tuple[int, int]:
        """Smallest and largest count a normal row can show for a dependency target."""
        lo, hi = self.value_range
        values = [dep.value(np.array(g, dtype=float)) for g in _source_grid(self, dep, lo, hi)]
        vmin = max(0, int(round(min(values))) - self.noise_bound)
        return vmin, int(round(max(values))) + self.noise_bound


def _source_grid(spec: SyntheticSpec, dep: Dependency, lo: int, hi: int):
    grid = np.zeros(spec.m)
    for combo in itertools.product(range(lo, hi + 1), repeat=len(dep.sources)):
        g = grid.copy()
        g[list(dep.sources)] = combo
        yield g


def _normal_rows(spec: SyntheticSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = spec.value_range
    deps = {d.target: d for d in spec.dependencies}
    X = np.zeros((n, spec.m), dtype=np.int64)
    for e in spec.generation_order():
        if e in deps:
            noise = rng.integers(-spec.noise_bound, spec.noise_bound + 1, size=n)
            X[:, e] = np.maximum(0, np.round(deps[e].value(X)).astype(np.int64) + noise)
        else:
            X[:, e] = rng.integers(lo, hi + 1, size=n)
    return X


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()):
    """Train/validation/test matrices (normal train and validation) and per-test-row labels.

    Anomalous test rows break exactly one pattern: with probability 1/2 a
    dependency target is moved by the perturbation while staying inside its
    normal marginal range, otherwise an independent event is pushed beyond
    its normal range.  Returns ``(train, val, test, labels)`` where labels are
    dicts with ``sequence_id``, ``label`` and ``kind``.
    """
    rng = np.random.default_rng(spec.seed)
    source = fingerprint({"synthetic": spec.to_dict()})
    ids = list(range(spec.m))

    def ecm(counts, prefix, labels):
        return EventCountMatrix(counts, ids, [f"{prefix}-{i}" for i in range(len(counts))], labels, source)

    train = _normal_rows(spec, spec.n_train, rng)
    val = _normal_rows(spec, spec.n_val, rng)
    test = _normal_rows(spec, spec.n_test, rng)

    n_anom = int(round(spec.anomaly_rate * spec.n_test))
    anomalous = np.sort(rng.permutation(spec.n_test)[:n_anom])
    kinds = [""] * spec.n_test
    delta = spec.perturbation
    independent = spec.independent_events
    hi_range = spec.value_range[1]
    for i in anomalous:
        use_dp = rng.random() < 0.5
        if (use_dp and spec.dependencies) or not independent:
            dep = spec.dependencies[rng.integers(len(spec.dependencies))]
            t_lo, t_hi = spec.target_range(dep)
            c = test[i, dep.target]
            signs = [s for s in (1, -1) if t_lo <= c + s * delta <= t_hi]
            if signs:
                sign = signs[rng.integers(len(signs))]
            else:
                # counts cannot go negative, so a downward move that would clip goes up instead
                sign = 1 if c - t_lo < t_hi - c or c < delta else -1
            test[i, dep.target] = c + sign * delta
            kinds[i] = f"dp:{dep.target}"
        else:
            e = independent[rng.integers(len(independent))]
            test[i, e] = hi_range + delta
            kinds[i] = f"pp:{e}"
    test_labels = [ANOMALOUS if k else NORMAL for k in kinds]
    test_ecm = ecm(test, "test", test_labels)
    labels = [
        {"sequence_id": sid, "label": lab, "kind": kind}
        for sid, lab, kind in zip(test_ecm.sequence_ids, test_labels, kinds)
    ]
    return (
        ecm(train, "train", [NORMAL] * spec.n_train),
        ecm(val, "val", [NORMAL] * spec.n_val),
        test_ecm,
        labels,
    )


def save_labels(path: Path | str, labels: Sequence[dict]) -> None:
    with Path(path).open("w") as fh:
        for r in labels:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def load_labels(path: Path | str) -> list[tuple[str, Optional[str]]]:
    """Labels from a label file, or from the label column of an event count matrix file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"label file not found: {path}")
    records = [json.loads(x) for x in path.read_text().splitlines() if x.strip()]
    if records and records[0].get("kind") == "ecm":
        records = records[1:]
    return [(r["sequence_id"], r["label"]) for r in records]


def mean_only_baseline(train: EventCountMatrix, val: EventCountMatrix, test: EventCountMatrix, **fit_kwargs):
    """Same pipeline with every event treated as independent; returns (verdicts, metrics)."""
    bundle = fit(train, val, force_independent=True, **fit_kwargs)
    verdicts = detect_batch(test, bundle)
    if not verdicts:
        return verdicts, metrics_from_counts(0, 0, 0, 0)
    return verdicts, evaluate(verdicts, test)
