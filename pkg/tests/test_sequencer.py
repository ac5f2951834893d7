import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logdp.ingest import LogTemplate, ParsedMessage, ParserConfig, TemplateStore
from logdp.sequencer import (
    ANOMALOUS,
    NORMAL,
    EventCountMatrix,
    LogSequence,
    PartitionDiagnostics,
    SequencerError,
    WindowSpec,
    build_ecm,
    partition,
    split_train_val,
)


def msgs(n, keys=None, times=None, labels=None, events=None):
    return [
        ParsedMessage(
            line_no=i + 1,
            template_id=events[i] if events else i % 3,
            timestamp=times[i] if times else None,
            session_key=keys[i] if keys else None,
            label=labels[i] if labels else None,
        )
        for i in range(n)
    ]


def store_with(n_templates):
    return TemplateStore(ParserConfig(), [LogTemplate(i, ("t", str(i))) for i in range(n_templates)])


def ecm(n, labels=None):
    labels = labels or [NORMAL] * n
    return EventCountMatrix(np.arange(n * 2).reshape(n, 2), [0, 1], [str(i) for i in range(n)], labels)


def test_fixed_count_keeps_partial_window():
    seqs = partition(msgs(5), WindowSpec("fixed_count", 2))
    assert [len(s.events) for s in seqs] == [2, 2, 1]


def test_session_grouping_in_first_seen_order():
    seqs = partition(msgs(3, keys=["a", "a", "b"]), WindowSpec("session"))
    assert [(s.sequence_id, len(s.events)) for s in seqs] == [("a", 2), ("b", 1)]


def test_sliding_count_full_windows():
    seqs = partition(msgs(5), WindowSpec("sliding", 3, 1))
    assert [s.line_nos for s in seqs] == [[1, 2, 3], [2, 3, 4], [3, 4, 5]]


def test_sliding_count_trailing_partial_window():
    seqs = partition(msgs(6), WindowSpec("sliding", 4, 3))
    assert [s.line_nos for s in seqs] == [[1, 2, 3, 4], [4, 5, 6]]


def test_fixed_time_skips_empty_windows():
    seqs = partition(msgs(4, times=[0.0, 5.0, 31.0, 32.0]), WindowSpec("fixed_time", 10))
    assert [s.line_nos for s in seqs] == [[1, 2], [3, 4]]


def test_sliding_seconds():
    seqs = partition(msgs(4, times=[0.0, 1.0, 2.5, 4.0]), WindowSpec("sliding", 2, 1, unit="seconds"))
    assert [s.line_nos for s in seqs] == [[1, 2], [2, 3], [3], [4], [4]]


def test_time_windows_need_timestamps():
    with pytest.raises(SequencerError, match="timestamps"):
        partition(msgs(2), WindowSpec("fixed_time", 10))


def test_messages_without_key_are_counted():
    diag = PartitionDiagnostics()
    seqs = partition(msgs(3, keys=["a", None, "a"]), WindowSpec("session"), diagnostics=diag)
    assert len(seqs) == 1 and diag.missing_session_key == 1


def test_labels_or_over_members_and_session_table_wins():
    m = msgs(4, keys=["a", "a", "b", "b"], labels=[NORMAL, ANOMALOUS, NORMAL, NORMAL])
    assert [s.label for s in partition(m, WindowSpec("session"))] == [ANOMALOUS, NORMAL]
    seqs = partition(m, WindowSpec("session"), session_labels={"b": ANOMALOUS})
    assert [s.label for s in seqs] == [ANOMALOUS, ANOMALOUS]


@pytest.mark.parametrize(
    "spec",
    [
        dict(mode="fixed_count", size=0),
        dict(mode="sliding", size=3, step=4),
        dict(mode="sliding", size=3, step=0),
        dict(mode="fixed_count", size=2.5),
        dict(mode="tumbling", size=2),
    ],
)
def test_invalid_window_specs(spec):
    with pytest.raises(ValueError):
        WindowSpec(**spec)


def test_build_ecm_counts():
    seqs = [LogSequence("s0", [1, 2, 3], [0, 1, 0]), LogSequence("s1", [4], [1])]
    X = build_ecm(seqs, store_with(2))
    assert X.event_ids == [-1, 0, 1]
    assert X.counts[:, 1:].tolist() == [[2, 1], [0, 1]]


def test_empty_sequence_is_zero_row():
    X = build_ecm([LogSequence("s", [], [])], store_with(2))
    assert X.counts.tolist() == [[0, 0, 0]]


def test_unseen_sentinel_gets_a_column():
    X = build_ecm([LogSequence("s", [1, 2], [-1, 0])], store_with(1))
    assert X.counts.tolist() == [[1, 1]]


def test_split_examples():
    train, val = split_train_val(ecm(9), 2 / 3)
    assert (train.n, val.n) == (6, 3)
    assert train.sequence_ids == [str(i) for i in range(6)]
    with pytest.raises(SequencerError, match="validation set empty"):
        split_train_val(ecm(1), 2 / 3)


def test_split_at_full_scale_arithmetic():
    # a zero-width matrix keeps this cheap at 287,530 rows
    n = 287_530
    X = EventCountMatrix(np.zeros((n, 0)), [], [str(i) for i in range(n)], [NORMAL] * n)
    train, val = split_train_val(X, 2 / 3)
    assert (train.n, val.n) == (191_687, 95_843)


def test_split_rejects_anomalous_rows():
    with pytest.raises(SequencerError, match="normal-only"):
        split_train_val(ecm(4, [NORMAL, ANOMALOUS, NORMAL, NORMAL]))


def test_ecm_round_trip(tmp_path):
    X = EventCountMatrix([[0, 3], [2, 0]], [-1, 4], ["a", "b"], [NORMAL, None], "src")
    X.save(tmp_path / "x.jsonl")
    Y = EventCountMatrix.load(tmp_path / "x.jsonl")
    assert (Y.counts == X.counts).all()
    assert (Y.event_ids, Y.sequence_ids, Y.labels, Y.source) == ([-1, 4], ["a", "b"], [NORMAL, None], "src")


@given(st.lists(st.integers(0, 4), min_size=1, max_size=60), st.integers(1, 7))
def test_fixed_count_partition_covers_each_message_once(events, size):
    seqs = partition(msgs(len(events), events=events), WindowSpec("fixed_count", size))
    X = build_ecm(seqs, store_with(5))
    assert X.counts.sum() == len(events)
    assert X.counts.sum(axis=0)[1:].tolist() == [events.count(e) for e in range(5)]
    assert len(seqs) == math.ceil(len(events) / size)


@given(st.lists(st.sampled_from("abcd"), min_size=1, max_size=60))
def test_session_partition_covers_each_message_once(keys):
    seqs = partition(msgs(len(keys), keys=keys), WindowSpec("session"))
    assert sorted(l for s in seqs for l in s.line_nos) == list(range(1, len(keys) + 1))
    assert len(seqs) == len(set(keys))


@given(st.integers(1, 80), st.integers(1, 6), st.integers(1, 6))
@settings(max_examples=200)
def test_sliding_multiplicity(n, step, k):
    size = step * k
    seqs = partition(msgs(n), WindowSpec("sliding", size, step))
    seen = np.zeros(n + 1, dtype=int)
    for s in seqs:
        seen[s.line_nos] += 1
    counts = seen[1:]
    assert counts.min() >= 1
    assert counts.max() <= math.ceil(size / step)
    # messages away from both ends sit in exactly size/step windows
    if n >= 3 * size:
        interior = counts[size : n - 2 * size]
        assert (interior == size // step).all()
