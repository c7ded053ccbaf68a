"""Maxmin point ordering and nearest-neighbor conditioning structure.

The sparse likelihood conditions each point on at most ``k`` of its
predecessors in a maxmin ordering: the first point is the one closest to
the centroid and every later point maximizes its minimum distance to the
points already placed. Prediction locations instead condition on their
``k`` nearest observed points without any ordering restriction.
"""

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_K = 15

# Below this many observed points a KD-tree buys nothing.
_BRUTE_FORCE_LIMIT = 64


@dataclass
class NeighborGraph:
    """Maxmin permutation plus per-position conditioning sets.

    ``order[i]`` is the original index of the i-th ordered point and
    ``cond_sets[i]`` holds the original indices of its min(i, k)
    conditioning points, all of which appear earlier in ``order``.
    """

    order: np.ndarray
    cond_sets: list
    k: int

    @property
    def n(self) -> int:
        return len(self.order)

    def positions(self) -> np.ndarray:
        """Inverse permutation: original index -> ordering position."""
        pos = np.empty(self.n, dtype=np.int64)
        pos[self.order] = np.arange(self.n)
        return pos

    def padded_cond_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Conditioning sets as an (n, k) index array plus validity mask.

        Padded slots point at index 0 and are masked out; callers must
        apply the mask before using gathered values.
        """
        idx = np.zeros((self.n, self.k), dtype=np.int64)
        mask = np.zeros((self.n, self.k), dtype=bool)
        for i, cs in enumerate(self.cond_sets):
            m = len(cs)
            idx[i, :m] = cs
            mask[i, :m] = True
        return idx, mask

    def validate(self):
        n = self.n
        if sorted(self.order.tolist()) != list(range(n)):
            raise ValueError("order is not a permutation")
        pos = self.positions()
        for i, cs in enumerate(self.cond_sets):
            if len(cs) != min(i, self.k):
                raise ValueError(f"conditioning set {i} has wrong size {len(cs)}")
            if any(pos[j] >= i for j in cs):
                raise ValueError(f"conditioning set {i} contains a later point")


def _check_distinct(points: np.ndarray):
    _, inverse, counts = np.unique(
        points, axis=0, return_inverse=True, return_counts=True
    )
    if np.any(counts > 1):
        dup_groups = np.flatnonzero(counts > 1)
        listed = []
        for g in dup_groups[:5]:
            listed.append(tuple(int(i) for i in np.flatnonzero(inverse == g)))
        raise ValueError(f"duplicate points at indices {listed}")


def maxmin_order(points) -> np.ndarray:
    """Exact maxmin ordering of a distinct point set.

    Runs in O(n^2) with incremental min-distance caching; ties go to the
    lowest original index so the result is fully deterministic.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[0]
    if n < 1:
        raise ValueError("need at least one point")
    _check_distinct(pts)

    centroid = pts.mean(axis=0)
    first = int(np.argmin(np.linalg.norm(pts - centroid, axis=1)))

    order = np.empty(n, dtype=np.int64)
    order[0] = first
    min_dist = np.linalg.norm(pts - pts[first], axis=1)
    min_dist[first] = -np.inf
    for i in range(1, n):
        nxt = int(np.argmax(min_dist))
        order[i] = nxt
        d = np.linalg.norm(pts - pts[nxt], axis=1)
        np.minimum(min_dist, d, out=min_dist)
        min_dist[nxt] = -np.inf
    return order


def build_cond_sets(points, order, k: int) -> NeighborGraph:
    """Nearest previously-ordered points for every position.

    Ties break toward the earlier ordering position. Brute force per node;
    total cost is O(n^2) which is exact and deterministic.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    order = np.asarray(order, dtype=np.int64)
    n = pts.shape[0]
    ordered_pts = pts[order]

    cond_sets: list[np.ndarray] = [np.empty(0, dtype=np.int64)]
    for i in range(1, n):
        m = min(i, k)
        d = np.linalg.norm(ordered_pts[:i] - ordered_pts[i], axis=1)
        sel = np.lexsort((np.arange(i), d))[:m]  # distance, then earlier position
        cond_sets.append(order[sel])
    return NeighborGraph(order=order, cond_sets=cond_sets, k=k)


def build_neighbor_graph(points, k: int = DEFAULT_K) -> NeighborGraph:
    """Maxmin ordering followed by conditioning-set construction."""
    order = maxmin_order(points)
    return build_cond_sets(points, order, k)


def knn_predict_sets(obs_points, pred_points, k: int) -> np.ndarray:
    """Indices of the k nearest observed points per prediction location.

    Uses a KD-tree above a small-size cutoff and brute force below it; the
    two paths agree except possibly on exactly tied distances.
    """
    obs = np.atleast_2d(np.asarray(obs_points, dtype=float))
    pred = np.atleast_2d(np.asarray(pred_points, dtype=float))
    n_obs = obs.shape[0]
    if k > n_obs:
        raise ValueError(f"k={k} exceeds the {n_obs} observed points")
    if k < 1:
        raise ValueError("k must be >= 1")

    if n_obs < _BRUTE_FORCE_LIMIT:
        out = np.empty((pred.shape[0], k), dtype=np.int64)
        for i in range(pred.shape[0]):
            d = np.linalg.norm(obs - pred[i], axis=1)
            out[i] = np.lexsort((np.arange(n_obs), d))[:k]
        return out
    tree = cKDTree(obs)
    _, idx = tree.query(pred, k=k, workers=1)
    return np.atleast_2d(idx).astype(np.int64)


def graph_cache_key(points, k: int) -> str:
    """Content hash of (rounded coordinates, k) identifying a graph."""
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    h = hashlib.sha256()
    h.update(pts.tobytes())
    h.update(str(int(k)).encode())
    return h.hexdigest()


def save_graph(path, graph: NeighborGraph, key: str):
    """Persist a graph with its content key for cache validation.

    Written via a temp file plus rename so a crashed run never leaves a
    truncated cache behind.
    """
    import os
    import tempfile

    flat = (
        np.concatenate(graph.cond_sets)
        if graph.n > 1
        else np.empty(0, dtype=np.int64)
    )
    offsets = np.cumsum([0] + [len(cs) for cs in graph.cond_sets])
    directory = os.path.dirname(os.path.abspath(str(path))) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".npz.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(
                fh,
                order=graph.order,
                cond_flat=flat.astype(np.int64),
                cond_offsets=offsets.astype(np.int64),
                k=np.int64(graph.k),
                key=np.bytes_(key.encode()),
            )
        os.replace(tmp, str(path))
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_graph(path, expected_key: str | None = None) -> NeighborGraph | None:
    """Load a cached graph; returns None when the key does not match."""
    with np.load(path) as data:
        stored_key = bytes(data["key"]).decode()
        if expected_key is not None and stored_key != expected_key:
            return None
        order = data["order"]
        flat = data["cond_flat"]
        offsets = data["cond_offsets"]
        k = int(data["k"])
    cond_sets = [flat[offsets[i] : offsets[i + 1]] for i in range(len(order))]
    return NeighborGraph(order=order, cond_sets=cond_sets, k=k)
