"""
Density clustering of gradient factors.

core distances -> mutual reachability graph -> MST (Prim) -> single-linkage
hierarchy -> condensed tree -> excess-of-mass selection. The root of the
condensed tree is never selected, so a structureless point cloud comes out
as noise rather than as one cluster.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from selshare.core.exceptions import ConfigurationError, InternalError
from selshare.core.logger import logger

NOISE = -1


@dataclass
class PointSet:
    points: np.ndarray
    # task id of every point
    labels: np.ndarray
    batch_index: np.ndarray
    n_degenerate: int = 0
    # points contributed by one task in the epoch, degenerate ones included
    points_per_task: int = 0

    @classmethod
    def from_factor_matrices(cls, matrices) -> "PointSet":
        """Stack all tasks' factor vectors; degenerate (zero) vectors are left out"""
        rows = [row for task_id in sorted(matrices) for row in matrices[task_id].rows]
        kept = [row for row in rows if not row.degenerate]
        per_task = max((len(m) for m in matrices.values()), default=0)
        if kept:
            points = np.stack([row.values for row in kept])
        else:
            points = np.zeros((0, 0))
        return cls(
            points=points,
            labels=np.array([row.task_id for row in kept], dtype=np.int64),
            batch_index=np.array([row.batch_index for row in kept], dtype=np.int64),
            n_degenerate=len(rows) - len(kept),
            points_per_task=per_task,
        )

    @property
    def n_points(self) -> int:
        return int(self.points.shape[0])


def default_min_cluster_size(points_per_task: int) -> int:
    return max(5, points_per_task // 4)


# ============================================
# MUTUAL REACHABILITY
# ============================================

@dataclass
class MutualReachGraph:
    k: int
    base: np.ndarray
    core_dist: np.ndarray
    d_mreach: np.ndarray

    @property
    def n_points(self) -> int:
        return int(self.d_mreach.shape[0])


def _check_metric(graph: MutualReachGraph) -> None:
    d, base, core = graph.d_mreach, graph.base, graph.core_dist
    off = ~np.eye(len(d), dtype=bool)
    if not np.array_equal(d, d.T):
        raise InternalError("mutual reachability matrix is not symmetric")
    if np.any(d < 0) or np.any(np.diag(d) != 0):
        raise InternalError("mutual reachability must be nonnegative with a zero diagonal")
    if np.any(d[off] < base[off]):
        raise InternalError("mutual reachability below the base distance")
    if np.any(d[off] < np.maximum.outer(core, core)[off]):
        raise InternalError("mutual reachability below a core distance")


def mutual_reachability(points, k: int) -> MutualReachGraph:
    """d_mreach(i, j) = max(core_k(i), core_k(j), d(i, j)) with Euclidean d"""
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if k < 1 or k >= n:
        raise ConfigurationError(f"core distance needs 1 <= k < N, got k={k}, N={n}")
    upper = np.triu(cdist(x, x, metric="euclidean"), 1)
    base = upper + upper.T
    # row k of the sorted distances: the k-th neighbour, the point itself sits at 0
    core = np.sort(base, axis=1)[:, k]
    mreach = np.maximum(base, np.maximum.outer(core, core))
    np.fill_diagonal(mreach, 0.0)
    graph = MutualReachGraph(k, base, core, mreach)
    _check_metric(graph)
    return graph


# ============================================
# HIERARCHY
# ============================================

@dataclass
class Dendrogram:
    graph: MutualReachGraph
    # [N-1, 3]: a, b, weight, sorted by (weight, min index, max index)
    mst: np.ndarray
    # [N-1, 4] scipy-style linkage: left, right, distance, size
    linkage: np.ndarray

    @property
    def n_points(self) -> int:
        return self.graph.n_points

    @property
    def mst_weight(self) -> float:
        return float(self.mst[:, 2].sum()) if len(self.mst) else 0.0


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(2 * n - 1)
        self.size = np.concatenate([np.ones(n, dtype=np.int64), np.zeros(n - 1, dtype=np.int64)])
        self.next_label = n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return int(root)

    def union(self, a: int, b: int) -> int:
        label = self.next_label
        self.parent[a] = self.parent[b] = label
        self.size[label] = self.size[a] + self.size[b]
        self.next_label += 1
        return label


def _prim_mst(d: np.ndarray) -> np.ndarray:
    n = len(d)
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    edges = []
    current = 0
    in_tree[0] = True
    for _ in range(n - 1):
        closer = ~in_tree & (d[current] < best)
        best[closer] = d[current][closer]
        parent[closer] = current
        candidates = np.where(in_tree, np.inf, best)
        nxt = int(np.argmin(candidates))
        edges.append((min(parent[nxt], nxt), max(parent[nxt], nxt), best[nxt]))
        in_tree[nxt] = True
        current = nxt
    edges.sort(key=lambda e: (e[2], e[0], e[1]))
    return np.array(edges, dtype=np.float64).reshape(-1, 3)


def build_hierarchy(graph: MutualReachGraph) -> Dendrogram:
    n = graph.n_points
    mst = _prim_mst(graph.d_mreach)
    linkage = np.zeros((max(n - 1, 0), 4))
    if n > 1:
        sets = _UnionFind(n)
        for row, (a, b, weight) in enumerate(mst):
            ra, rb = sets.find(int(a)), sets.find(int(b))
            linkage[row] = (ra, rb, weight, sets.size[ra] + sets.size[rb])
            sets.union(ra, rb)
    return Dendrogram(graph, mst, linkage)


# ============================================
# CONDENSED TREE / EXTRACTION
# ============================================

def _bfs(linkage: np.ndarray, root: int, n: int) -> List[int]:
    order, queue = [], [root]
    while queue:
        order.extend(queue)
        queue = [int(c) for node in queue if node >= n for c in linkage[node - n, :2]]
    return order


def _condense(linkage: np.ndarray, n: int, min_cluster_size: int) -> np.ndarray:
    """Rows (parent, child, lambda, child_size); clusters are labelled from n, the root first"""
    positive = linkage[:, 2][linkage[:, 2] > 0]
    # zero-distance merges get a finite lambda above every real one
    lambda_cap = 2.0 / positive.min() if len(positive) else 1.0

    def size(node: int) -> int:
        return 1 if node < n else int(linkage[node - n, 3])

    root = 2 * n - 2
    relabel = {root: n}
    next_label = n + 1
    ignore = set()
    rows = []
    for node in _bfs(linkage, root, n):
        if node in ignore or node < n:
            continue
        left, right = int(linkage[node - n, 0]), int(linkage[node - n, 1])
        dist = linkage[node - n, 2]
        lam = 1.0 / dist if dist > 0 else lambda_cap
        parent = relabel[node]
        big_left, big_right = size(left) >= min_cluster_size, size(right) >= min_cluster_size
        if big_left and big_right:
            for child in (left, right):
                relabel[child] = next_label
                rows.append((parent, next_label, lam, size(child)))
                next_label += 1
            continue
        for child, big in ((left, big_left), (right, big_right)):
            if big:
                relabel[child] = parent
            else:
                for sub in _bfs(linkage, child, n):
                    if sub < n:
                        rows.append((parent, sub, lam, 1))
                    ignore.add(sub)
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def _stability(tree: np.ndarray, root: int) -> Dict[int, float]:
    births = {root: 0.0}
    for parent, child, lam, child_size in tree:
        if child_size > 1:
            births[int(child)] = lam
    stability = {c: 0.0 for c in births}
    for parent, child, lam, child_size in tree:
        p = int(parent)
        stability[p] += (lam - births[p]) * child_size
    return stability


def _select_eom(tree: np.ndarray, stability: Dict[int, float], root: int) -> List[int]:
    cluster_rows = tree[tree[:, 3] > 1]
    children: Dict[int, List[int]] = {}
    for parent, child, _, _ in cluster_rows:
        children.setdefault(int(parent), []).append(int(child))
    propagated = dict(stability)
    selected = {c: True for c in stability if c != root}

    def descendants(node: int) -> List[int]:
        out, queue = [], list(children.get(node, []))
        while queue:
            out.extend(queue)
            queue = [c for q in queue for c in children.get(q, [])]
        return out

    # children carry larger labels than their parents
    for node in sorted(selected, reverse=True):
        subtree = sum(propagated[c] for c in children.get(node, []))
        if subtree > propagated[node]:
            selected[node] = False
            propagated[node] = subtree
        else:
            for sub in descendants(node):
                selected[sub] = False
    return sorted(c for c, keep in selected.items() if keep)


@dataclass
class ClusterInfo:
    cluster_id: int
    stability: float
    members: np.ndarray
    mean_core_distance: float
    composition: Dict[int, int] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return int(len(self.members))

    @property
    def distinct_tasks(self) -> int:
        return len(self.composition)


@dataclass
class ClusterOutcome:
    labels: np.ndarray
    clusters: List[ClusterInfo]
    min_cluster_size: int
    graph: Optional[MutualReachGraph] = None
    task_labels: Optional[np.ndarray] = None

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def n_noise(self) -> int:
        return int(np.sum(self.labels == NOISE))

    def cluster(self, cluster_id: int) -> ClusterInfo:
        return self.clusters[cluster_id]

    def medoid(self, cluster_id: int) -> int:
        """Member with the smallest summed mutual reachability to the others"""
        members = self.clusters[cluster_id].members
        within = self.graph.d_mreach[np.ix_(members, members)]
        return int(members[int(np.argmin(within.sum(axis=1)))])


def extract_clusters(dendrogram: Dendrogram, min_cluster_size: int,
                     task_labels: Optional[Sequence[int]] = None) -> ClusterOutcome:
    if min_cluster_size < 2:
        raise ConfigurationError(f"min_cluster_size must be >= 2, got {min_cluster_size}")
    n = dendrogram.n_points
    graph = dendrogram.graph
    tasks = None if task_labels is None else np.asarray(task_labels, dtype=np.int64)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n < max(2, min_cluster_size):
        return ClusterOutcome(labels, [], min_cluster_size, graph, tasks)

    root = n
    tree = _condense(dendrogram.linkage, n, min_cluster_size)
    stability = _stability(tree, root)
    chosen = _select_eom(tree, stability, root)

    cluster_parent = {int(child): int(parent) for parent, child, _, size in tree if size > 1}
    point_parent = {int(child): int(parent) for parent, child, _, size in tree if size == 1}
    cluster_id = {label: i for i, label in enumerate(chosen)}
    for point in range(n):
        node = point_parent.get(point)
        while node is not None and node not in cluster_id:
            node = cluster_parent.get(node)
        if node is not None:
            labels[point] = cluster_id[node]

    clusters = []
    for label, cid in cluster_id.items():
        members = np.flatnonzero(labels == cid)
        composition = {}
        if tasks is not None:
            ids, counts = np.unique(tasks[members], return_counts=True)
            composition = {int(t): int(c) for t, c in zip(ids, counts)}
        clusters.append(ClusterInfo(
            cluster_id=cid,
            stability=float(stability[label]),
            members=members,
            mean_core_distance=float(graph.core_dist[members].mean()),
            composition=composition,
        ))
    return ClusterOutcome(labels, clusters, min_cluster_size, graph, tasks)


def cluster_points(point_set: PointSet, min_cluster_size: Optional[int] = None,
                   k: Optional[int] = None) -> ClusterOutcome:
    """Whole pipeline on one epoch's factor vectors"""
    if min_cluster_size is None:
        min_cluster_size = default_min_cluster_size(point_set.points_per_task)
    k = min_cluster_size if k is None else k
    n = point_set.n_points
    if n < 2 or k >= n:
        logger.warning(f"⚠️ {n} clustering points for k={k}: every point is noise")
        return ClusterOutcome(np.full(n, NOISE, dtype=np.int64), [], min_cluster_size, None, point_set.labels)
    graph = mutual_reachability(point_set.points, k)
    return extract_clusters(build_hierarchy(graph), min_cluster_size, point_set.labels)


def assign_tasks(outcome: ClusterOutcome, dominance: float,
                 task_ids: Optional[Sequence[int]] = None) -> Dict[int, Optional[int]]:
    """
    task -> cluster when at least `dominance` of the task's non-noise points
    fall in that cluster; ties go to the lower cluster id, None otherwise.
    """
    tasks = outcome.task_labels if outcome.task_labels is not None else np.zeros(0, dtype=np.int64)
    if task_ids is None:
        task_ids = sorted({int(t) for t in tasks})
    assignment: Dict[int, Optional[int]] = {}
    for task_id in task_ids:
        labels = outcome.labels[(tasks == task_id) & (outcome.labels != NOISE)]
        if len(labels) == 0:
            assignment[task_id] = None
            continue
        counts = np.bincount(labels, minlength=outcome.n_clusters)
        best = int(np.argmax(counts))
        assignment[task_id] = best if counts[best] / len(labels) >= dominance else None
    return assignment
