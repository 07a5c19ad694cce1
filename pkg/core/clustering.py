"""Server-side clustering of uploaded decoders into two groups by average linkage."""
import logging
import math
import os
from dataclasses import dataclass

import networkx as nx
import numpy as np

from core.errors import (
    DimensionMismatch,
    EmptyInput,
    InvalidAssignment,
    OverlappingClusters,
    TooFewDecoders,
    ZeroNormVector,
)
from core.params import cosine_distance

logger = logging.getLogger(__name__)

CLUSTER_COUNT = 2


@dataclass(frozen=True)
class DistanceMatrix:
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise DimensionMismatch(f"distance matrix must be square, got shape {entries.shape}")
        if not np.array_equal(entries, entries.T):
            raise DimensionMismatch("distance matrix is not symmetric")
        if np.any(np.diag(entries) != 0.0):
            raise DimensionMismatch("distance matrix diagonal must be zero")
        if np.any(entries < 0.0) or np.any(entries > 2.0):
            raise DimensionMismatch("cosine distances must lie in [0, 2]")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n(self):
        return int(self.entries.shape[0])

    def __getitem__(self, key):
        i, j = key
        return float(self.entries[i, j])

    def to_rows(self):
        return self.entries.tolist()


def build_distance_matrix(decoders):
    decoders = list(decoders)
    n = len(decoders)
    if n < CLUSTER_COUNT:
        raise TooFewDecoders(f"need at least {CLUSTER_COUNT} decoders to cluster, got {n}")
    dims = {d.dim for d in decoders}
    if len(dims) > 1:
        raise DimensionMismatch(f"decoders have differing dims: {sorted(dims)}")
    for i, decoder in enumerate(decoders):
        if decoder.is_zero():
            raise ZeroNormVector(index=i)

    entries = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            d = cosine_distance(decoders[i], decoders[j])
            entries[i, j] = d
            entries[j, i] = d
    return DistanceMatrix(entries)


def _as_members(members, n):
    members = tuple(sorted(set(int(m) for m in members)))
    if not members:
        raise EmptyInput("cluster has no members")
    if members[0] < 0 or members[-1] >= n:
        raise InvalidAssignment(f"cluster members {members} fall outside 0..{n - 1}")
    return members


def average_linkage(dm, ci, cj):
    """Mean of all pairwise distances between the members of ci and cj."""
    ci = _as_members(ci, dm.n)
    cj = _as_members(cj, dm.n)
    if set(ci) & set(cj):
        raise OverlappingClusters(f"clusters {ci} and {cj} share members")
    # fsum makes the result independent of summation order
    total = math.fsum(dm.entries[u, v] for u in ci for v in cj)
    return total / (len(ci) * len(cj))


@dataclass(frozen=True)
class MergeStep:
    left: tuple
    right: tuple
    linkage: float


@dataclass(frozen=True)
class ClusterAssignment:
    """Two-block partition of decoder indices plus the cluster index list I."""

    index_list: tuple
    members_0: tuple
    members_1: tuple
    merge_trace: tuple = ()

    @classmethod
    def from_index_list(cls, index_list, merge_trace=()):
        index_list = tuple(int(v) for v in index_list)
        members_0 = tuple(i for i, v in enumerate(index_list) if v == 0)
        members_1 = tuple(i for i, v in enumerate(index_list) if v == 1)
        assignment = cls(index_list, members_0, members_1, tuple(merge_trace))
        assignment.validate()
        return assignment

    @classmethod
    def from_members(cls, members_0, members_1, merge_trace=()):
        n = len(members_0) + len(members_1)
        index_list = [None] * n
        for label, members in ((0, members_0), (1, members_1)):
            for m in members:
                if not 0 <= m < n or index_list[m] is not None:
                    raise InvalidAssignment(f"members {members_0} / {members_1} are not a partition of 0..{n - 1}")
                index_list[m] = label
        return cls.from_index_list(index_list, merge_trace)

    @property
    def n(self):
        return len(self.index_list)

    def validate(self):
        n = self.n
        if n < CLUSTER_COUNT:
            raise InvalidAssignment(f"assignment covers {n} decoders, need at least {CLUSTER_COUNT}")
        if any(v not in (0, 1) for v in self.index_list):
            raise InvalidAssignment(f"index list holds labels other than 0/1: {self.index_list}")
        m0, m1 = set(self.members_0), set(self.members_1)
        if m0 & m1 or (m0 | m1) != set(range(n)) or len(self.members_0) + len(self.members_1) != n:
            raise InvalidAssignment("cluster members are not a partition of all decoders")
        if not m0 or not m1:
            raise InvalidAssignment("both clusters must be non-empty")
        for i, label in enumerate(self.index_list):
            if (label == 0) != (i in m0):
                raise InvalidAssignment(f"index list disagrees with members at decoder {i}")

    def members(self, label):
        return self.members_0 if label == 0 else self.members_1


def cluster_to_two(dm):
    """Agglomerate singletons by minimal average linkage until two clusters remain.

    Ties on linkage go to the pair whose (smaller min-member, larger min-member)
    tuple is lexicographically smallest. The cluster holding decoder 0 is C_0.
    """
    n = dm.n
    if n < CLUSTER_COUNT:
        raise TooFewDecoders(f"need at least {CLUSTER_COUNT} decoders to cluster, got {n}")

    clusters = [(i,) for i in range(n)]
    linkages = {}
    trace = []
    while len(clusters) > CLUSTER_COUNT:
        best = None
        for a_pos in range(len(clusters)):
            for b_pos in range(a_pos + 1, len(clusters)):
                a, b = clusters[a_pos], clusters[b_pos]
                link = linkages.get((a, b))
                if link is None:
                    link = average_linkage(dm, a, b)
                    linkages[(a, b)] = link
                key = (link, a[0], b[0])
                if best is None or key < best[0]:
                    best = (key, a, b)
        (link, _, _), a, b = best
        trace.append(MergeStep(a, b, link))
        merged = tuple(sorted(a + b))
        clusters = sorted([c for c in clusters if c != a and c != b] + [merged], key=lambda c: c[0])
        logger.debug("merged %s + %s at linkage %.6f", a, b, link)

    return ClusterAssignment.from_members(clusters[0], clusters[1], trace)


def merge_tree(assignment):
    """Dendrogram of the merge trace; its two roots are C_0 and C_1."""
    tree = nx.DiGraph()
    current = {}
    for i in range(assignment.n):
        tree.add_node(i, label=f"decoder {i}")
        current[(i,)] = i
    for k, step in enumerate(assignment.merge_trace):
        node = f"m{k}"
        tree.add_node(node, label=f"merge {k} linkage={step.linkage:.6f}")
        tree.add_edge(node, current.pop(step.left))
        tree.add_edge(node, current.pop(step.right))
        current[tuple(sorted(step.left + step.right))] = node
    for label in (0, 1):
        root = current[assignment.members(label)]
        tree.nodes[root]["label"] = f"C_{label}: {tree.nodes[root]['label']}"
        tree.nodes[root]["cluster"] = label
    return tree


def dump_clustering_debug(dm, assignment, path, round_index=None):
    """Append the distance matrix and merge tree for one round to a plain-text log."""
    tree = merge_tree(assignment)
    roots = sorted((node for node, data in tree.nodes(data=True) if "cluster" in data),
                   key=lambda node: tree.nodes[node]["cluster"])
    lines = [f"== round {round_index} ==" if round_index is not None else "== clustering =="]
    lines.append("distance matrix:")
    for row in dm.entries:
        lines.append("  " + " ".join(f"{v:.6f}" for v in row))
    lines.append("merge tree:")
    lines.extend("  " + line for line in nx.generate_network_text(tree, sources=roots, ascii_only=True))
    lines.append(f"index list I: {list(assignment.index_list)}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n\n")
