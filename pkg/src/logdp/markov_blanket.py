"""Markov blanket discovery over event count columns.

Conditional independence is judged with the Fisher-z test on partial
correlations.  Blankets are found with incremental association: grow by the
most associated candidate while it stays dependent, then shrink away members
that are independent of the focused event given the rest.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import norm

logger = logging.getLogger(__name__)

R_CLAMP = 1.0 - 1e-12
RIDGE = 1e-6
# Condition number above which a conditioning correlation matrix is treated as singular.
SINGULAR_COND = 1e12
VAR_EPS = 1e-12


@dataclass(frozen=True)
class CITestResult:
    statistic: float
    p_value: float
    independent: bool
    n_eff: int
    partial_corr: float = 0.0
    degenerate: bool = False


def correlation_matrix(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlations with zero-variance columns decoupled (unit diagonal, zero elsewhere)."""
    data = np.asarray(data, dtype=float)
    centered = data - data.mean(axis=0)
    std = np.sqrt((centered**2).mean(axis=0))
    constant = std <= VAR_EPS * np.maximum(1.0, np.abs(data).max(axis=0, initial=0.0))
    std = np.where(constant, 1.0, std)
    z = centered / std
    R = (z.T @ z) / max(data.shape[0], 1)
    R[constant, :] = 0.0
    R[:, constant] = 0.0
    np.fill_diagonal(R, 1.0)
    R = np.clip(R, -1.0, 1.0)
    return R, constant


def fisher_z(r: float | np.ndarray, n: int, k: int):
    """Fisher-z statistic sqrt(n - k - 3) * |atanh(r)| and its two-sided p-value."""
    r = np.clip(r, -R_CLAMP, R_CLAMP)
    stat = math.sqrt(n - k - 3) * np.abs(np.arctanh(r))
    return stat, 2.0 * norm.sf(stat)


def _regularize(M: np.ndarray) -> tuple[np.ndarray, bool]:
    if M.size and np.linalg.cond(M) > SINGULAR_COND:
        return M + RIDGE * np.eye(M.shape[0]), True
    return M, False


def partial_correlation(R: np.ndarray, i: int, j: int, cond: Sequence[int]) -> tuple[float, bool]:
    """Partial correlation of i and j given cond, from the inverse of their joint correlation block."""
    idx = [i, j, *cond]
    sub, ridged = _regularize(R[np.ix_(idx, idx)])
    P = np.linalg.inv(sub)
    denom = P[0, 0] * P[1, 1]
    if denom <= 0:
        return 0.0, True
    return float(-P[0, 1] / math.sqrt(denom)), ridged


def ci_test(
    data: np.ndarray,
    i: int,
    j: int,
    cond: Sequence[int] = (),
    alpha: float = 0.05,
    corr: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> CITestResult:
    """Test whether columns ``i`` and ``j`` of ``data`` are independent given ``cond``."""
    data = np.asarray(data)
    n = data.shape[0]
    cond = list(cond)
    if i == j or i in cond or j in cond:
        raise ValueError("i and j must be distinct and outside the conditioning set")
    if n <= len(cond) + 3:
        raise ValueError(f"Fisher-z needs n > |cond| + 3 (n={n}, |cond|={len(cond)})")
    R, constant = corr if corr is not None else correlation_matrix(data)
    if constant[i] or constant[j]:
        return CITestResult(0.0, 1.0, True, n - len(cond), 0.0, degenerate=True)
    r, degenerate = partial_correlation(R, i, j, cond)
    stat, p = fisher_z(r, n, len(cond))
    return CITestResult(float(stat), float(p), bool(p > alpha), n - len(cond), r, degenerate)


def partial_correlations_given(R: np.ndarray, focus: int, candidates: np.ndarray, cond: Sequence[int]) -> np.ndarray:
    """Partial correlations of ``focus`` with every candidate given ``cond`` (Schur complement)."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if len(cond) == 0:
        return R[focus, candidates].copy()
    cond = list(cond)
    Rzz, _ = _regularize(R[np.ix_(cond, cond)])
    A = np.linalg.solve(Rzz, R[np.ix_(cond, [focus, *candidates])])
    B = R[np.ix_(cond, [focus, *candidates])]
    cov_f = R[focus, candidates] - B[:, 0] @ A[:, 1:]
    var_f = 1.0 - B[:, 0] @ A[:, 0]
    var_c = 1.0 - np.einsum("ij,ij->j", B[:, 1:], A[:, 1:])
    denom = var_f * var_c
    out = np.zeros(len(candidates))
    ok = denom > VAR_EPS
    out[ok] = cov_f[ok] / np.sqrt(denom[ok])
    return out


def _conditioning(members: Sequence[int], assoc: np.ndarray, cap: int) -> list[int]:
    if len(members) <= cap:
        return list(members)
    ranked = sorted(members, key=lambda c: (-assoc[c], c))
    return sorted(ranked[:cap])


def discover_mb(
    data: Optional[np.ndarray],
    focused: int,
    alpha: float = 0.05,
    max_cond: int = 8,
    corr: Optional[tuple[np.ndarray, np.ndarray]] = None,
    n: Optional[int] = None,
) -> list[int]:
    """Markov blanket (column indices, ascending) of column ``focused``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if corr is None:
        data = np.asarray(data)
        corr = correlation_matrix(data)
        n = data.shape[0]
    R, constant = corr
    m = R.shape[0]
    if m < 2:
        raise ValueError("need at least two columns")
    if constant[focused]:
        return []
    cap = min(max_cond, n - 4)
    if cap < 0:
        logger.warning("n=%d is too small for any conditional independence test", n)
        return []
    assoc = np.abs(R[focused])
    usable = np.array([c for c in range(m) if c != focused and not constant[c]], dtype=np.int64)
    mb: list[int] = []
    while True:
        candidates = usable[~np.isin(usable, mb)]
        if candidates.size == 0:
            break
        cond = _conditioning(mb, assoc, cap)
        r = partial_correlations_given(R, focused, candidates, cond)
        stat, p = fisher_z(r, n, len(cond))
        best = int(np.argmax(stat))
        if p[best] > alpha:
            break
        mb.append(int(candidates[best]))
    for member in list(mb):
        rest = [c for c in mb if c != member]
        cond = _conditioning(rest, assoc, cap)
        r = partial_correlations_given(R, focused, np.array([member]), cond)
        _, p = fisher_z(r, n, len(cond))
        if p[0] > alpha:
            mb.remove(member)
    return sorted(mb)


@dataclass
class MarkovBlanketMap:
    blankets: dict[int, tuple[int, ...]]
    alpha: float = 0.05
    max_cond: int = 8
    rule: str = "raw"
    algorithm: str = "iamb-fisherz"

    def __getitem__(self, event_id: int) -> tuple[int, ...]:
        return self.blankets[event_id]

    def header(self) -> dict:
        return {
            "kind": "markov_blankets",
            "algorithm": self.algorithm,
            "alpha": self.alpha,
            "max_cond": self.max_cond,
            "rule": self.rule,
        }

    def to_records(self) -> list[dict]:
        return [self.header()] + [
            {"event_id": e, "blanket": sorted(self.blankets[e])} for e in sorted(self.blankets)
        ]

    def save(self, path: Path | str) -> None:
        Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in self.to_records()))

    @classmethod
    def from_records(cls, records: Sequence[dict]) -> "MarkovBlanketMap":
        h = records[0]
        blankets = {int(r["event_id"]): tuple(r["blanket"]) for r in records[1:]}
        return cls(blankets, h["alpha"], h["max_cond"], h["rule"], h["algorithm"])

    @classmethod
    def load(cls, path: Path | str) -> "MarkovBlanketMap":
        lines = Path(path).read_text().splitlines()
        return cls.from_records([json.loads(x) for x in lines if x.strip()])

    def is_symmetric(self) -> bool:
        return all(i in self.blankets.get(j, ()) for i, mb in self.blankets.items() for j in mb)


def symmetry_correct(raw: MarkovBlanketMap, rule: str = "AND") -> MarkovBlanketMap:
    rule = rule.upper()
    if rule not in ("AND", "OR"):
        raise ValueError(f"symmetry rule must be AND or OR, got {rule!r}")
    sets = {e: set(mb) for e, mb in raw.blankets.items()}
    if rule == "AND":
        out = {e: {j for j in mb if e in sets.get(j, ())} for e, mb in sets.items()}
    else:
        out = {e: set(mb) for e, mb in sets.items()}
        for e, mb in sets.items():
            for j in mb:
                out.setdefault(j, set()).add(e)
    return MarkovBlanketMap(
        {e: tuple(sorted(mb - {e})) for e, mb in out.items()},
        raw.alpha,
        raw.max_cond,
        rule,
        raw.algorithm,
    )


@dataclass(frozen=True)
class EventClassification:
    dependent: frozenset
    independent: frozenset


def classify_events(mbs: MarkovBlanketMap) -> EventClassification:
    dependent = frozenset(e for e, mb in mbs.blankets.items() if mb)
    return EventClassification(dependent, frozenset(mbs.blankets) - dependent)


def _discover_chunk(args) -> list[list[int]]:
    R, constant, n, focus_list, alpha, max_cond = args
    return [discover_mb(None, f, alpha, max_cond, corr=(R, constant), n=n) for f in focus_list]


def discover_all(
    data: np.ndarray,
    event_ids: Sequence[int],
    alpha: float = 0.05,
    max_cond: int = 8,
    rule: str = "AND",
    jobs: int = 1,
) -> MarkovBlanketMap:
    """Blankets of every column, symmetry corrected with ``rule`` (``"none"`` keeps the raw map)."""
    data = np.asarray(data)
    m = data.shape[1]
    if m < 2:
        raw = {e: () for e in event_ids}
    else:
        R, constant = correlation_matrix(data)
        n = data.shape[0]
        if jobs > 1:
            chunks = [list(range(k, m, jobs)) for k in range(jobs)]
            found: dict[int, list[int]] = {}
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = pool.map(_discover_chunk, [(R, constant, n, c, alpha, max_cond) for c in chunks])
                for chunk, res in zip(chunks, results):
                    found.update(zip(chunk, res))
            columns = [found[k] for k in range(m)]
        else:
            columns = _discover_chunk((R, constant, n, list(range(m)), alpha, max_cond))
        raw = {event_ids[k]: tuple(event_ids[c] for c in cols) for k, cols in enumerate(columns)}
    raw_map = MarkovBlanketMap(raw, alpha, max_cond, "raw")
    if rule.lower() == "none":
        return raw_map
    return symmetry_correct(raw_map, rule)
