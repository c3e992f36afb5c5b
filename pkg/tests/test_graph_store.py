import numpy as np
import pytest

from framework.errors import InvariantError, LeakageError, NodeReferenceError, ParseError, RangeError
from middleware.access_audit import AccessAudit
from services.graph_store import (
    CLASS_INCREMENTAL,
    INSTANCE_INCREMENTAL,
    GraphBlockSequence,
    assign_splits,
    block_of,
    delta,
    load_directory,
    load_sequence,
    snapshot,
    write_sequence,
)


def write_files(tmp_path, nodes, edges):
    (tmp_path / "nodes.tsv").write_text(nodes, encoding="utf-8")
    (tmp_path / "edges.tsv").write_text(edges, encoding="utf-8")
    return tmp_path


def test_smallest_fixture(tmp_path):
    write_files(tmp_path, "u\t1\t0\ttrain\t1.0\nv\t1\t1\ttest\t2.0\n", "u\tv\n")
    seq = load_directory(tmp_path)
    assert seq.num_blocks == 1
    assert seq.num_nodes == 2
    assert len(seq.edges) == 1


def test_three_block_columns_match_the_file(three_block, three_block_dir):
    expected = [int(line.split("\t")[1]) for line in (three_block_dir / "nodes.tsv").read_text().splitlines()]
    assert three_block.blocks.tolist() == expected
    assert three_block.num_blocks == 3
    assert three_block.task_kind == CLASS_INCREMENTAL
    assert three_block.classes_per_block == [[0, 1], [2, 3], [4, 5]]
    assert three_block.external_ids[4] == "b1"


def test_edge_block_defaults_to_later_endpoint(three_block):
    rows = {(int(s), int(d)): int(b) for s, d, b in three_block.edges}
    assert rows[(4, 0)] == 2
    assert rows[(0, 2)] == 1
    assert rows[(2, 3)] == 3


def test_edge_arriving_before_its_endpoint_is_rejected(tmp_path):
    write_files(tmp_path, "x\t1\t0\ttrain\t0.0\ny\t2\t1\ttrain\t1.0\n", "x\ty\t1\n")
    with pytest.raises(InvariantError):
        load_directory(tmp_path)


def test_unknown_edge_endpoint(tmp_path):
    write_files(tmp_path, "x\t1\t0\ttrain\t0.0\n", "x\tz\n")
    with pytest.raises(NodeReferenceError):
        load_directory(tmp_path)


@pytest.mark.parametrize(
    "nodes",
    [
        "x\t1\t0\n",
        "x\t0\t0\ttrain\t1.0\n",
        "x\t1\t0\tholdout\t1.0\n",
        "x\t1\t0\ttrain\t1.0\nx\t1\t1\ttrain\t2.0\n",
        "x\t1\t0\ttrain\t1.0\ny\t1\t1\ttrain\t2.0,3.0\n",
    ],
)
def test_malformed_node_rows(tmp_path, nodes):
    write_files(tmp_path, nodes, "")
    with pytest.raises(ParseError):
        load_directory(tmp_path)


def test_class_reuse_contradicts_declared_kind(tmp_path):
    write_files(tmp_path, "x\t1\t0\ttrain\t0.0\ny\t2\t0\ttrain\t1.0\n", "")
    assert load_directory(tmp_path).task_kind == INSTANCE_INCREMENTAL
    with pytest.raises(InvariantError):
        load_sequence(tmp_path / "nodes.tsv", tmp_path / "edges.tsv", task_kind=CLASS_INCREMENTAL)


def test_block_of(three_block):
    assert block_of(three_block, 0) == 1
    assert block_of(three_block, 11) == 3
    with pytest.raises(NodeReferenceError):
        block_of(three_block, 12)


def test_snapshot_holds_only_arrived_nodes_and_edges(three_block):
    first = snapshot(three_block, 1)
    assert first.nodes.tolist() == [0, 1, 2, 3]
    assert first.neighbors(0).tolist() == [1, 2]
    assert first.neighbors(2).tolist() == [0]
    assert snapshot(three_block, 2).neighbors(0).tolist() == [1, 2, 4]
    assert snapshot(three_block, 3).neighbors(2).tolist() == [0, 3]
    assert len(snapshot(three_block, 3).edges) == len(three_block.edges)


def test_snapshots_are_nested(three_block):
    for i in range(1, three_block.num_blocks):
        assert set(snapshot(three_block, i).nodes) <= set(snapshot(three_block, i + 1).nodes)


def test_snapshot_rejects_unknown_block(three_block):
    with pytest.raises(RangeError):
        snapshot(three_block, 4)
    with pytest.raises(RangeError):
        snapshot(three_block, 0)


def test_delta_partitions_the_graph(three_block):
    nodes, edges = delta(three_block, 2)
    assert nodes.tolist() == [4, 5, 6, 7]
    assert len(edges) == 4 and set(edges[:, 2]) == {2}
    all_nodes = np.concatenate([delta(three_block, i)[0] for i in range(1, 4)])
    all_edges = np.concatenate([delta(three_block, i)[1] for i in range(1, 4)])
    assert sorted(all_nodes.tolist()) == list(range(three_block.num_nodes))
    assert len(all_edges) == len(three_block.edges)


def test_delta_one_is_the_first_snapshot(three_block):
    nodes, edges = delta(three_block, 1)
    assert nodes.tolist() == snapshot(three_block, 1).nodes.tolist()
    assert len(edges) == len(snapshot(three_block, 1).edges)


def test_future_reads_are_counted_by_the_audit(three_block):
    audit = AccessAudit()
    view = snapshot(three_block, 1, audit)
    view.features([0, 1])
    audit.assert_clean()
    view.features([4])
    assert audit.violations == 1
    with pytest.raises(LeakageError):
        audit.assert_clean()


def test_future_reads_without_audit_raise(three_block):
    with pytest.raises(NodeReferenceError):
        snapshot(three_block, 1).labels([8])


def test_sequence_is_immutable(three_block):
    with pytest.raises(ValueError):
        three_block.blocks[0] = 2


def test_missing_splits_are_drawn_per_block():
    blocks = np.array([1] * 10 + [2] * 5)
    splits = assign_splits(blocks, [None] * 15, seed=3)
    first = splits[:10]
    assert (first.count("train"), first.count("valid"), first.count("test")) == (6, 2, 2)
    assert splits == assign_splits(blocks, [None] * 15, seed=3)


def test_written_sequence_loads_back(three_block, tmp_path):
    write_sequence(three_block, tmp_path)
    again = load_directory(tmp_path)
    assert again.blocks.tolist() == three_block.blocks.tolist()
    assert again.labels.tolist() == three_block.labels.tolist()
    assert np.array_equal(again.features, three_block.features)
    assert again.splits.tolist() == three_block.splits.tolist()
    assert sorted(map(tuple, again.edges.tolist())) == sorted(map(tuple, three_block.edges.tolist()))


def test_self_loops_are_rejected():
    with pytest.raises(InvariantError):
        GraphBlockSequence([1, 1], [0, 1], np.zeros((2, 1)), ["train", "test"], np.array([[0, 0, 1]]))
