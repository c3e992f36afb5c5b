from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from framework.errors import (
    DataError,
    InvariantError,
    NodeReferenceError,
    ParseError,
    RangeError,
)
from middleware.access_audit import AccessAudit
from models.graph import EdgeRecord, NodeRecord
from utils.rng import stream

logger = logging.getLogger(__name__)

CLASS_INCREMENTAL = "class-incremental"
INSTANCE_INCREMENTAL = "instance-incremental"
SPLITS = ("train", "valid", "test")
DEFAULT_SPLIT = (0.6, 0.2, 0.2)


class GraphBlockSequence:
    """Nodes and undirected edges tagged with the block in which they arrive.

    Node ids are dense integers 0..N-1. Each undirected edge is stored once in
    ``edges`` as ``(src, dst, block)`` and in both directions in the adjacency.
    Immutable after construction.
    """

    def __init__(
        self,
        blocks: Sequence[int],
        labels: Sequence[int],
        features: np.ndarray,
        splits: Sequence[str],
        edges: np.ndarray,
        task_kind: Optional[str] = None,
        external_ids: Optional[List[str]] = None,
    ):
        self.blocks = np.array(blocks, dtype=np.int64)
        self.labels = np.array(labels, dtype=np.int64)
        self.features = np.array(features, dtype=np.float64)
        self.splits = np.array(splits, dtype="<U5")
        self.edges = np.array(edges, dtype=np.int64).reshape(-1, 3)
        self.external_ids = external_ids if external_ids is not None else [str(v) for v in range(len(self.blocks))]
        if self.blocks.size == 0:
            raise DataError("sequence has no nodes")
        self.num_blocks = int(self.blocks.max())
        self.task_kind = task_kind or self._infer_task_kind()
        self._validate()
        self._build_adjacency()
        for column in (self.blocks, self.labels, self.features, self.splits, self.edges):
            column.setflags(write=False)

    # -------------------------------------------------------------------------
    # Construction helpers
    # -------------------------------------------------------------------------
    def _label_sets(self) -> List[set]:
        return [set(self.labels[self.blocks == i].tolist()) for i in range(1, self.num_blocks + 1)]

    def _infer_task_kind(self) -> str:
        seen: set = set()
        for labels in self._label_sets():
            if seen & labels:
                return INSTANCE_INCREMENTAL
            seen |= labels
        return CLASS_INCREMENTAL

    def _validate(self) -> None:
        n = len(self.blocks)
        if not (len(self.labels) == len(self.splits) == self.features.shape[0] == n):
            raise InvariantError("node columns have different lengths")
        if self.blocks.min() < 1:
            raise InvariantError("block indices start at 1")
        if self.edges.size:
            src, dst, arrival = self.edges.T
            if src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= n:
                raise NodeReferenceError("edge references an unknown node")
            if np.any(src == dst):
                raise InvariantError("self-loops are not allowed")
            endpoint = np.maximum(self.blocks[src], self.blocks[dst])
            early = np.nonzero(arrival < endpoint)[0]
            if early.size:
                e = early[0]
                raise InvariantError(
                    f"edge ({self.external_ids[src[e]]}, {self.external_ids[dst[e]]}) arrives in block "
                    f"{arrival[e]} before its endpoint's block {endpoint[e]}"
                )
            if arrival.max() > self.num_blocks:
                raise InvariantError(f"edge arrives in block {arrival.max()} after the last node block {self.num_blocks}")
        if self.task_kind == CLASS_INCREMENTAL:
            seen: set = set()
            for i, labels in enumerate(self._label_sets(), start=1):
                if seen & labels:
                    raise InvariantError(f"class-incremental block {i} reuses classes {sorted(seen & labels)}")
                seen |= labels

    def _build_adjacency(self) -> None:
        src, dst, arrival = (self.edges.T if self.edges.size else (np.zeros(0, np.int64),) * 3)
        heads = np.concatenate([src, dst])
        tails = np.concatenate([dst, src])
        when = np.concatenate([arrival, arrival])
        order = np.lexsort((tails, when, heads))
        self._adj_nodes = tails[order]
        self._adj_blocks = when[order]
        counts = np.bincount(heads, minlength=len(self.blocks))
        self._indptr = np.concatenate([[0], np.cumsum(counts)])

    # -------------------------------------------------------------------------
    # Queries
    # -------------------------------------------------------------------------
    @property
    def num_nodes(self) -> int:
        return len(self.blocks)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def classes_per_block(self) -> List[List[int]]:
        return [sorted(labels) for labels in self._label_sets()]

    def classes_through(self, i: int) -> List[int]:
        """Distinct labels of blocks 1..i in order of first appearance."""
        ordered: List[int] = []
        for labels in self.classes_per_block[:i]:
            ordered.extend(c for c in labels if c not in ordered)
        return ordered

    def check_block(self, i: int) -> None:
        if not 1 <= i <= self.num_blocks:
            raise RangeError(f"block {i} outside [1, {self.num_blocks}]")

    def check_node(self, v: int) -> None:
        if not 0 <= v < self.num_nodes:
            raise NodeReferenceError(f"unknown node id {v}")

    def nodes_in_block(self, i: int, split: Optional[str] = None) -> np.ndarray:
        mask = self.blocks == i
        if split is not None:
            mask &= self.splits == split
        return np.nonzero(mask)[0]

    def adjacency(self, v: int, limit: int) -> Tuple[np.ndarray, np.ndarray]:
        """Neighbors of ``v`` whose connecting edge arrived by block ``limit``."""
        lo, hi = self._indptr[v], self._indptr[v + 1]
        cut = lo + int(np.searchsorted(self._adj_blocks[lo:hi], limit, side="right"))
        return self._adj_nodes[lo:cut], self._adj_blocks[lo:cut]


class GraphView:
    """Snapshot G^(limit): nodes and edges with block index <= limit.

    Reads go through an optional ``AccessAudit`` so training and evaluation can
    prove they never looked past ``limit``.
    """

    def __init__(self, seq: GraphBlockSequence, limit: int, audit: Optional[AccessAudit] = None):
        seq.check_block(limit)
        self.seq = seq
        self.limit = limit
        self.audit = audit

    def contains(self, v: int) -> bool:
        return 0 <= v < self.seq.num_nodes and self.seq.blocks[v] <= self.limit

    def _require(self, nodes: np.ndarray) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64)
        if nodes.size and (nodes.min() < 0 or nodes.max() >= self.seq.num_nodes):
            raise NodeReferenceError("unknown node id in request")
        if self.audit is not None:
            self.audit.observe(self.seq.blocks[nodes], self.limit, "node")
        elif nodes.size and self.seq.blocks[nodes].max() > self.limit:
            raise NodeReferenceError(f"node not present in snapshot {self.limit}")
        return nodes

    @property
    def nodes(self) -> np.ndarray:
        return np.nonzero(self.seq.blocks <= self.limit)[0]

    @property
    def edges(self) -> np.ndarray:
        return self.seq.edges[self.seq.edges[:, 2] <= self.limit] if self.seq.edges.size else self.seq.edges

    def neighbors(self, v: int) -> np.ndarray:
        self._require(np.array([v]))
        found, arrival = self.seq.adjacency(int(v), self.limit)
        if self.audit is not None:
            self.audit.observe(arrival, self.limit, "edge")
            self.audit.observe(self.seq.blocks[found], self.limit, "node")
        return found

    def features(self, nodes: Sequence[int]) -> np.ndarray:
        return self.seq.features[self._require(nodes)]

    def blocks(self, nodes: Sequence[int]) -> np.ndarray:
        return self.seq.blocks[self._require(nodes)]

    def labels(self, nodes: Sequence[int]) -> np.ndarray:
        return self.seq.labels[self._require(nodes)]


# -----------------------------------------------------------------------------
# Operations
# -----------------------------------------------------------------------------
def block_of(seq: GraphBlockSequence, v: int) -> int:
    seq.check_node(v)
    return int(seq.blocks[v])


def snapshot(seq: GraphBlockSequence, i: int, audit: Optional[AccessAudit] = None) -> GraphView:
    return GraphView(seq, i, audit)


def delta(seq: GraphBlockSequence, i: int) -> Tuple[np.ndarray, np.ndarray]:
    """(new node ids, new edge rows) of block i; delta(1) is all of G^(1)."""
    seq.check_block(i)
    new_edges = seq.edges[seq.edges[:, 2] == i] if seq.edges.size else seq.edges
    return seq.nodes_in_block(i), new_edges


def assign_splits(blocks: np.ndarray, splits: List[Optional[str]], seed: int, fractions=DEFAULT_SPLIT) -> List[str]:
    """Fill missing split tags with a per-block shuffled 60/20/20 partition."""
    filled = list(splits)
    for i in np.unique(blocks):
        missing = [v for v in np.nonzero(blocks == i)[0] if filled[v] is None]
        if not missing:
            continue
        order = stream(seed, "split", int(i)).permutation(len(missing))
        n_train = int(round(fractions[0] * len(missing)))
        n_valid = int(round(fractions[1] * len(missing)))
        for rank, pos in enumerate(order):
            tag = "train" if rank < n_train else "valid" if rank < n_train + n_valid else "test"
            filled[missing[pos]] = tag
    return filled


def _parse_rows(path: Path) -> List[Tuple[int, List[str]]]:
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    rows = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            rows.append((line_no, line.split("\t")))
    return rows


def load_sequence(
    node_path: Path | str,
    edge_path: Path | str,
    task_kind: Optional[str] = None,
    seed: int = 0,
) -> GraphBlockSequence:
    node_path, edge_path = Path(node_path), Path(edge_path)
    index: Dict[str, int] = {}
    external: List[str] = []
    blocks: List[int] = []
    labels: List[int] = []
    splits: List[Optional[str]] = []
    features: List[List[float]] = []

    for line_no, cols in _parse_rows(node_path):
        if len(cols) == 5:
            node_id, block, label, split, feats = cols
        elif len(cols) == 4:
            node_id, block, label, feats = cols
            split = None
        else:
            raise ParseError(f"expected 4 or 5 tab-separated columns, got {len(cols)}", str(node_path), line_no)
        try:
            record = NodeRecord(
                node_id=node_id,
                block=block,
                label=label,
                split=split or None,
                features=[f for f in feats.split(",") if f.strip()],
            )
        except ValidationError as exc:
            first = exc.errors()[0]
            raise ParseError(f"{'.'.join(map(str, first['loc']))}: {first['msg']}", str(node_path), line_no) from None
        if record.node_id in index:
            raise ParseError(f"duplicate node id {record.node_id!r}", str(node_path), line_no)
        if features and len(record.features) != len(features[0]):
            raise ParseError(f"{len(record.features)} features, expected {len(features[0])}", str(node_path), line_no)
        index[record.node_id] = len(external)
        external.append(record.node_id)
        blocks.append(record.block)
        labels.append(record.label)
        splits.append(record.split)
        features.append(record.features)

    if not external:
        raise DataError(f"{node_path}: no nodes")
    block_arr = np.asarray(blocks, dtype=np.int64)

    edges: List[Tuple[int, int, int]] = []
    for line_no, cols in _parse_rows(edge_path):
        if len(cols) not in (2, 3):
            raise ParseError(f"expected 2 or 3 tab-separated columns, got {len(cols)}", str(edge_path), line_no)
        try:
            record = EdgeRecord(src=cols[0], dst=cols[1], block=cols[2] if len(cols) == 3 and cols[2] else None)
        except ValidationError as exc:
            first = exc.errors()[0]
            raise ParseError(f"{'.'.join(map(str, first['loc']))}: {first['msg']}", str(edge_path), line_no) from None
        for endpoint in (record.src, record.dst):
            if endpoint not in index:
                raise NodeReferenceError(f"{edge_path}:{line_no}: edge references unknown node {endpoint!r}")
        u, v = index[record.src], index[record.dst]
        arrival = record.block if record.block is not None else int(max(block_arr[u], block_arr[v]))
        edges.append((u, v, arrival))

    seq = GraphBlockSequence(
        blocks=block_arr,
        labels=labels,
        features=np.asarray(features, dtype=np.float64),
        splits=assign_splits(block_arr, splits, seed),
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 3),
        task_kind=task_kind,
        external_ids=external,
    )
    logger.info(
        "loaded %d nodes, %d edges, %d blocks (%s) from %s",
        seq.num_nodes, len(seq.edges), seq.num_blocks, seq.task_kind, node_path.parent,
    )
    return seq


def write_sequence(seq: GraphBlockSequence, out_dir: Path | str) -> List[Path]:
    """Write nodes.tsv, edges.tsv and node_index.tsv in canonical (id) order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    node_path, edge_path, index_path = out_dir / "nodes.tsv", out_dir / "edges.tsv", out_dir / "node_index.tsv"
    ext = seq.external_ids
    with open(node_path, "w", encoding="utf-8", newline="\n") as handle:
        for v in range(seq.num_nodes):
            feats = ",".join(repr(float(x)) for x in seq.features[v])
            handle.write(f"{ext[v]}\t{seq.blocks[v]}\t{seq.labels[v]}\t{seq.splits[v]}\t{feats}\n")
    order = np.lexsort((seq.edges[:, 1], seq.edges[:, 0])) if seq.edges.size else []
    with open(edge_path, "w", encoding="utf-8", newline="\n") as handle:
        for e in order:
            src, dst, arrival = seq.edges[e]
            handle.write(f"{ext[src]}\t{ext[dst]}\t{arrival}\n")
    with open(index_path, "w", encoding="utf-8", newline="\n") as handle:
        for v, name in enumerate(ext):
            handle.write(f"{name}\t{v}\n")
    return [node_path, edge_path, index_path]


def load_directory(data_dir: Path | str, task_kind: Optional[str] = None, seed: int = 0) -> GraphBlockSequence:
    data_dir = Path(data_dir)
    return load_sequence(data_dir / "nodes.tsv", data_dir / "edges.tsv", task_kind=task_kind, seed=seed)
