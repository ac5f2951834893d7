"""Log ingestion: header stripping, token masking and fixed-depth tree template mining.

Template mining follows the fixed-depth prefix tree scheme (Drain): messages are
routed by token count, then by their leading tokens, and matched against the
templates stored at the leaf by token similarity.  Fitting is two-pass: the
first pass grows templates, the second re-assigns every line against the final
(frozen) templates, so that fitted ids and frozen-mode ids always agree.
"""

from __future__ import annotations

import dataclasses
import datetime
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from logdp.artifacts import fingerprint

logger = logging.getLogger(__name__)

WILDCARD = "<*>"
MALFORMED_TOKEN = "<MALFORMED>"
# Template id reported for messages that match nothing in a frozen store.
UNSEEN_TEMPLATE_ID = -1

MASK_PATTERNS = {
    "block": r"blk_-?\d+",
    "ipv4": r"/?(?:\d{1,3}\.){3}\d{1,3}(?::\d+)?",
    "hex": r"0[xX][0-9a-fA-F]+|(?=[0-9a-fA-F]*\d)[0-9a-fA-F]{8,}",
    "number": r"[-+]?\d+(?:\.\d+)?",
}
DEFAULT_MASKS = ("block", "ipv4", "hex", "number")

HDFS_HEADER = r"(?P<date>\d{6}) (?P<time>\d{6}) (?P<pid>\d+) (?P<level>\w+) (?P<component>[^:]+): (?P<content>.*)"
BGL_HEADER = (
    r"(?P<label>\S+) (?P<epoch>\d+) (?P<date>\S+) (?P<node>\S+) (?P<time>\S+) "
    r"(?P<node_repeat>\S+) (?P<type>\S+) (?P<component>\S+) (?P<level>\S+) (?P<content>.*)"
)


class IngestError(Exception):
    pass


@dataclass(frozen=True)
class ParserConfig:
    depth: int = 4
    similarity: float = 0.4
    max_children: int = 100
    masks: tuple[str, ...] = DEFAULT_MASKS
    extra_masks: tuple[str, ...] = ()
    header_regex: Optional[str] = None
    # Named groups of header_regex joined with a space and parsed with
    # timestamp_format; a single group without a format is read as epoch seconds.
    timestamp_fields: tuple[str, ...] = ()
    timestamp_format: Optional[str] = None
    label_field: Optional[str] = None
    normal_label: str = "-"
    session_regex: Optional[str] = None

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if not 0.0 < self.similarity < 1.0:
            raise ValueError(f"similarity threshold must be in (0, 1), got {self.similarity}")
        if self.max_children < 2:
            raise ValueError("max_children must be >= 2")
        unknown = set(self.masks) - set(MASK_PATTERNS)
        if unknown:
            raise ValueError(f"unknown masking rules: {sorted(unknown)}")

    @classmethod
    def preset(cls, name: str, **overrides) -> "ParserConfig":
        presets = {
            "generic": {},
            "hdfs": dict(
                header_regex=HDFS_HEADER,
                timestamp_fields=("date", "time"),
                timestamp_format="%y%m%d %H%M%S",
                session_regex=r"blk_-?[0-9]+",
            ),
            "bgl": dict(
                header_regex=BGL_HEADER,
                timestamp_fields=("epoch",),
                label_field="label",
                normal_label="-",
            ),
        }
        if name not in presets:
            raise ValueError(f"unknown dataset preset {name!r}; choose from {sorted(presets)}")
        return cls(**{**presets[name], **overrides})

    @classmethod
    def from_dict(cls, data: dict) -> "ParserConfig":
        data = dict(data)
        for key in ("masks", "extra_masks", "timestamp_fields"):
            if key in data and data[key] is not None:
                data[key] = tuple(data[key])
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())


@dataclass
class RawLogLine:
    line_no: int
    content: str
    timestamp: Optional[float] = None
    label: Optional[str] = None
    malformed: bool = False


@dataclass
class LogTemplate:
    template_id: int
    tokens: tuple[str, ...]
    occurrence_count: int = 0

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class ParsedMessage:
    line_no: int
    template_id: int
    timestamp: Optional[float] = None
    session_key: Optional[str] = None
    label: Optional[str] = None


@dataclass
class IngestDiagnostics:
    total_lines: int = 0
    skipped_empty: int = 0
    malformed: int = 0
    unseen: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def compile_masks(config: ParserConfig) -> list[re.Pattern]:
    patterns = [MASK_PATTERNS[name] for name in config.masks] + list(config.extra_masks)
    return [re.compile(p) for p in patterns]


def mask_tokens(tokens: Sequence[str], rules: Sequence[re.Pattern]) -> list[str]:
    """Replace every token that fully matches a masking rule by the wildcard."""
    return [WILDCARD if any(r.fullmatch(t) for r in rules) else t for t in tokens]


def _has_digits(token: str) -> bool:
    return any(c.isdigit() for c in token)


class _Node:
    __slots__ = ("children", "cluster_ids")

    def __init__(self):
        self.children: dict[str, _Node] = {}
        self.cluster_ids: list[int] = []


class TemplateMiner:
    """Online fixed-depth tree template miner over already-masked token lists."""

    def __init__(self, depth: int = 4, similarity: float = 0.4, max_children: int = 100):
        self.prefix_depth = max(depth - 3, 0)
        self.similarity = similarity
        self.max_children = max_children
        self.root = _Node()
        self.templates: list[list[str]] = []
        self.sizes: list[int] = []

    def _similarity(self, template: Sequence[str], tokens: Sequence[str]) -> tuple[float, int]:
        if not tokens:
            return 1.0, 0
        same = 0
        params = 0
        for t, tok in zip(template, tokens):
            if t == WILDCARD:
                params += 1
            elif t == tok:
                same += 1
        return same / len(tokens), params

    def _leaf(self, tokens: Sequence[str]) -> Optional[_Node]:
        node = self.root.children.get(str(len(tokens)))
        if node is None:
            return None
        for depth, token in enumerate(tokens, start=1):
            if depth > self.prefix_depth or depth >= len(tokens):
                break
            nxt = node.children.get(token)
            if nxt is None:
                nxt = node.children.get(WILDCARD)
            if nxt is None:
                return None
            node = nxt
        return node

    def _insert(self, cluster_id: int) -> None:
        tokens = self.templates[cluster_id]
        node = self.root.children.setdefault(str(len(tokens)), _Node())
        for depth, token in enumerate(tokens, start=1):
            if depth > self.prefix_depth or depth >= len(tokens):
                break
            children = node.children
            if token in children:
                node = children[token]
            elif _has_digits(token):
                node = children.setdefault(WILDCARD, _Node())
            elif WILDCARD in children:
                if len(children) < self.max_children:
                    node = children.setdefault(token, _Node())
                else:
                    node = children[WILDCARD]
            elif len(children) + 1 < self.max_children:
                node = children.setdefault(token, _Node())
            else:
                # the last free slot is reserved for the wildcard child
                node = children.setdefault(WILDCARD, _Node())
        node.cluster_ids.append(cluster_id)

    def add(self, tokens: Sequence[str]) -> int:
        """Route one masked message, creating or generalizing a template; return its id."""
        leaf = self._leaf(tokens)
        best = None
        if leaf is not None:
            best_sim, best_params = -1.0, -1
            for cid in leaf.cluster_ids:
                sim, params = self._similarity(self.templates[cid], tokens)
                if sim > best_sim or (sim == best_sim and params > best_params):
                    best, best_sim, best_params = cid, sim, params
            if best is not None and best_sim < self.similarity:
                best = None
        if best is None:
            best = len(self.templates)
            self.templates.append(list(tokens))
            self.sizes.append(1)
            self._insert(best)
        else:
            template = self.templates[best]
            for i, tok in enumerate(tokens):
                if template[i] != tok:
                    template[i] = WILDCARD
            self.sizes[best] += 1
        return best


class TemplateStore:
    """Frozen collection of templates with contiguous ids and a config fingerprint."""

    def __init__(self, config: ParserConfig, templates: Optional[list[LogTemplate]] = None):
        self.config = config
        self.templates: list[LogTemplate] = templates or []
        self._masks = compile_masks(config)
        self._by_length: dict[int, list[LogTemplate]] = {}
        self._cache: dict[tuple[str, ...], int] = {}
        for i, t in enumerate(self.templates):
            if t.template_id != i:
                raise IngestError(f"template ids must be contiguous, found {t.template_id} at position {i}")
            self._by_length.setdefault(len(t.tokens), []).append(t)

    def __len__(self) -> int:
        return len(self.templates)

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint

    @property
    def event_ids(self) -> list[int]:
        return [t.template_id for t in self.templates]

    def match(self, tokens: Sequence[str]) -> int:
        """Best exact match of masked tokens: fewest wildcards, then lowest id."""
        key = tuple(tokens)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        best, best_wild = UNSEEN_TEMPLATE_ID, None
        for t in self._by_length.get(len(key), ()):
            wild = 0
            for a, b in zip(t.tokens, key):
                if a == WILDCARD:
                    wild += 1
                elif a != b:
                    break
            else:
                if best_wild is None or wild < best_wild:
                    best, best_wild = t.template_id, wild
        self._cache[key] = best
        return best

    def masked(self, line: RawLogLine) -> tuple[str, ...]:
        if line.malformed:
            return (MALFORMED_TOKEN,)
        return tuple(mask_tokens(line.content.split(), self._masks))

    def to_records(self) -> list[dict]:
        header = {"kind": "template_store", "fingerprint": self.fingerprint, "config": self.config.to_dict()}
        rows = [
            {"template_id": t.template_id, "tokens": list(t.tokens), "occurrence_count": t.occurrence_count}
            for t in self.templates
        ]
        return [header] + rows

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.to_records())

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: Path | str) -> "TemplateStore":
        lines = Path(path).read_text().splitlines()
        if not lines:
            raise IngestError(f"{path}: empty template store file")
        header = json.loads(lines[0])
        if header.get("kind") != "template_store":
            raise IngestError(f"{path}: not a template store")
        config = ParserConfig.from_dict(header["config"])
        if config.fingerprint != header["fingerprint"]:
            raise IngestError(f"{path}: stored fingerprint does not match stored config")
        templates = []
        for raw in lines[1:]:
            r = json.loads(raw)
            templates.append(LogTemplate(r["template_id"], tuple(r["tokens"]), r["occurrence_count"]))
        return cls(config, templates)


class LineReader:
    """Split raw text lines into header fields and content according to a parser config."""

    def __init__(self, config: ParserConfig):
        self.config = config
        self._header = re.compile(config.header_regex) if config.header_regex else None
        self.diagnostics = IngestDiagnostics()

    def _timestamp(self, fields: dict) -> Optional[float]:
        names = self.config.timestamp_fields
        if not names:
            return None
        try:
            text = " ".join(fields[n] for n in names)
            if self.config.timestamp_format:
                dt = datetime.datetime.strptime(text, self.config.timestamp_format)
                return dt.replace(tzinfo=datetime.timezone.utc).timestamp()
            return float(text)
        except (KeyError, TypeError, ValueError):
            return None

    def read(self, lines: Iterable[str]) -> Iterator[RawLogLine]:
        cfg = self.config
        for line_no, text in enumerate(lines, start=1):
            self.diagnostics.total_lines += 1
            text = text.rstrip("\r\n")
            if not text.strip():
                self.diagnostics.skipped_empty += 1
                continue
            if self._header is None:
                yield RawLogLine(line_no, text.strip())
                continue
            m = self._header.fullmatch(text)
            if m is None:
                self.diagnostics.malformed += 1
                yield RawLogLine(line_no, text.strip(), malformed=True)
                continue
            fields = m.groupdict()
            content = (fields.get("content") or "").strip()
            if not content:
                self.diagnostics.skipped_empty += 1
                continue
            label = None
            if cfg.label_field:
                label = "normal" if fields.get(cfg.label_field) == cfg.normal_label else "anomalous"
            yield RawLogLine(line_no, content, timestamp=self._timestamp(fields), label=label)


def read_log(path: Path | str, config: ParserConfig) -> tuple[list[RawLogLine], IngestDiagnostics]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"log file not found: {path}")
    reader = LineReader(config)
    with path.open(encoding="utf-8", errors="replace") as fh:
        lines = list(reader.read(fh))
    return lines, reader.diagnostics


def fit_templates(lines: Iterable[RawLogLine], config: ParserConfig) -> TemplateStore:
    """Mine templates from lines (in order) and return the frozen store.

    Malformed lines share one catch-all template.  Occurrence counts reflect the
    final assignment of every line against the frozen templates.
    """
    lines = list(lines)
    rules = compile_masks(config)
    miner = TemplateMiner(config.depth, config.similarity, config.max_children)
    masked = []
    has_malformed = False
    for line in lines:
        if line.malformed:
            has_malformed = True
            masked.append(None)
            continue
        tokens = mask_tokens(line.content.split(), rules)
        miner.add(tokens)
        masked.append(tuple(tokens))
    templates = [LogTemplate(i, tuple(t)) for i, t in enumerate(miner.templates)]
    if has_malformed:
        templates.append(LogTemplate(len(templates), (MALFORMED_TOKEN,)))
    store = TemplateStore(config, templates)
    for line, tokens in zip(lines, masked):
        tid = store.match(tokens if tokens is not None else (MALFORMED_TOKEN,))
        if tid == UNSEEN_TEMPLATE_ID:  # pragma: no cover - templates only generalize
            raise IngestError(f"line {line.line_no} matches no fitted template")
        store.templates[tid].occurrence_count += 1
    return store


def parse_line(line: RawLogLine, store: TemplateStore, config: ParserConfig) -> ParsedMessage:
    if config.fingerprint != store.fingerprint:
        raise IngestError(
            f"parser config fingerprint {config.fingerprint[:12]} does not match "
            f"template store fingerprint {store.fingerprint[:12]}"
        )
    session_key = None
    if config.session_regex and not line.malformed:
        m = re.search(config.session_regex, line.content)
        session_key = m.group(0) if m else None
    return ParsedMessage(
        line_no=line.line_no,
        template_id=store.match(store.masked(line)),
        timestamp=line.timestamp,
        session_key=session_key,
        label=line.label,
    )


def parse_lines(
    lines: Iterable[RawLogLine], store: TemplateStore, config: ParserConfig, diagnostics: Optional[IngestDiagnostics] = None
) -> list[ParsedMessage]:
    out = [parse_line(line, store, config) for line in lines]
    if diagnostics is not None:
        diagnostics.unseen += sum(m.template_id == UNSEEN_TEMPLATE_ID for m in out)
    return out


def save_parsed(messages: Sequence[ParsedMessage], path: Path | str, header: dict) -> None:
    with Path(path).open("w") as fh:
        fh.write(json.dumps({"kind": "parsed_messages", **header}, sort_keys=True) + "\n")
        for m in messages:
            fh.write(json.dumps(dataclasses.asdict(m), sort_keys=True) + "\n")


def load_parsed(path: Path | str) -> tuple[dict, list[ParsedMessage]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"parsed messages file not found: {path}")
    with path.open() as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "parsed_messages":
            raise IngestError(f"{path}: not a parsed messages file")
        messages = [ParsedMessage(**json.loads(raw)) for raw in fh if raw.strip()]
    return header, messages


def load_session_labels(path: Path | str) -> dict[str, str]:
    """Read a per-session label table (``BlockId,Label`` rows with Normal/Anomaly values)."""
    labels = {}
    with Path(path).open() as fh:
        for i, row in enumerate(fh):
            parts = [p.strip() for p in row.strip().split(",")]
            if len(parts) < 2 or (i == 0 and parts[1].lower() == "label"):
                continue
            labels[parts[0]] = "normal" if parts[1].lower() in ("normal", "0", "-") else "anomalous"
    return labels
