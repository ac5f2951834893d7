import datetime as dt

import numpy as np
import pytest

from logdp.evaluation import SyntheticSpec, generate_synthetic

# HDFS-shaped message bodies; {b} is the block id, the rest are parameters.
_NORMAL_FLOW = [
    ("dfs.DataNode$DataXceiver", "Receiving block {b} src: /{ip}:{port} dest: /{ip2}:50010"),
    ("dfs.FSNamesystem", "BLOCK* NameSystem.allocateBlock: /user/root/rand/_temporary/part-{n}. {b}"),
    ("dfs.DataNode$PacketResponder", "PacketResponder {k} for block {b} terminating"),
    ("dfs.DataNode$PacketResponder", "Received block {b} of size {size} from /{ip}"),
    ("dfs.FSNamesystem", "BLOCK* NameSystem.addStoredBlock: blockMap updated: {ip}:50010 is added to {b} size {size}"),
]
_TAIL = [
    ("dfs.DataNode$DataXceiver", "{ip}:50010 Served block {b} to /{ip2}"),
    ("dfs.FSDataset", "Deleting block {b} file /mnt/hadoop/dfs/data/current/subdir{k}/{b}"),
    ("dfs.FSNamesystem", "BLOCK* NameSystem.delete: {b} is added to invalidSet of {ip}:50010"),
    ("dfs.DataNode", "{ip}:50010 Starting thread to transfer block {b} to {ip2}:50010"),
    ("dfs.DataBlockScanner", "Verification succeeded for {b}"),
]
_FAULTS = [
    ("dfs.DataNode$DataXceiver", "writeBlock {b} received exception java.io.IOException: Connection reset by peer"),
    ("dfs.DataNode", "{ip}:50010:Got exception while serving {b} to /{ip2}:"),
    ("dfs.DataNode$PacketResponder", "PacketResponder {b} {k} Exception java.io.InterruptedIOException: Interruped while waiting for IO"),
]


def _ip(rng):
    return "10.251.{}.{}".format(rng.integers(0, 256), rng.integers(0, 256))


def hdfs_corpus(n_blocks=400, anomaly_rate=0.05, seed=0):
    """(log lines, {block id: "Normal"|"Anomaly"}) with interleaved sessions."""
    rng = np.random.default_rng(seed)
    events = []
    labels = {}
    t0 = dt.datetime(2008, 11, 9, 20, 35, 0)
    for b in range(n_blocks):
        block = "blk_{}{}".format("-" if rng.random() < 0.5 else "", rng.integers(10**17, 10**18))
        start = rng.integers(0, 3600)
        flow = list(_NORMAL_FLOW[:2]) + [_NORMAL_FLOW[2 + (i % 3)] for i in range(3 * int(rng.integers(1, 3)))]
        flow += [_TAIL[i] for i in rng.choice(len(_TAIL), size=int(rng.integers(0, 3)), replace=False)]
        anomalous = rng.random() < anomaly_rate
        if anomalous:
            flow.insert(int(rng.integers(1, len(flow))), _FAULTS[int(rng.integers(len(_FAULTS)))])
        labels[block] = "Anomaly" if anomalous else "Normal"
        for i, (component, body) in enumerate(flow):
            text = body.format(
                b=block, ip=_ip(rng), ip2=_ip(rng), port=rng.integers(30000, 60000),
                n=rng.integers(0, 100), k=rng.integers(0, 3), size=rng.integers(1, 67108864),
            )
            events.append((start + 2 * i + rng.random(), component, text))
    events.sort(key=lambda e: e[0])
    lines = []
    for sec, component, text in events:
        ts = t0 + dt.timedelta(seconds=int(sec))
        lines.append(f"{ts:%y%m%d %H%M%S} {rng.integers(1, 40000)} INFO {component}: {text}")
    return lines, labels


@pytest.fixture(scope="session")
def hdfs_small(tmp_path_factory):
    lines, labels = hdfs_corpus(n_blocks=300, seed=1)
    d = tmp_path_factory.mktemp("hdfs")
    (d / "HDFS.log").write_text("\n".join(lines) + "\n")
    (d / "anomaly_label.csv").write_text(
        "BlockId,Label\n" + "".join(f"{k},{v}\n" for k, v in labels.items())
    )
    return d


@pytest.fixture(scope="session")
def synthetic0():
    return generate_synthetic(SyntheticSpec(seed=0))


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
