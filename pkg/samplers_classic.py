"""
Task-irrelevant samplers and test-time matching.

Point clouds are float64 numpy arrays of shape (N, 3). Every distance
comparison is done on squared Euclidean distance and every tie goes to the
lowest index, so all functions here are deterministic.
"""
import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np

from errors import DimensionError, DomainError

logger = logging.getLogger(__name__)


def as_cloud(points, name: str = "cloud") -> np.ndarray:
    """Validate and convert to an (N, 3+) float64 array with N >= 1 and finite entries"""
    cloud = np.asarray(points, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] < 3:
        raise DimensionError(f"{name} must have shape (N, 3), got {cloud.shape}")
    if cloud.shape[0] < 1:
        raise DomainError(f"{name} is empty")
    if not np.all(np.isfinite(cloud)):
        raise DomainError(f"{name} contains NaN or Inf coordinates")
    return cloud


def sq_dist_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """D[i, j] = ‖a_i − b_j‖²"""
    diff = a[:, None, :] - b[None, :, :]
    return (diff * diff).sum(axis=2)


def _check_count(m: int, n: int, op: str):
    if m < 1:
        raise DomainError(f"{op}: m must be >= 1, got {m}")
    if m > n:
        raise DomainError(f"{op}: cannot pick m={m} from N={n} points")


def _greedy_complete(cloud: np.ndarray, selected: List[int], m: int) -> np.ndarray:
    """Append farthest points to ``selected`` until it holds m indices"""
    xyz = cloud[:, :3]
    chosen = list(selected)
    if not chosen:
        chosen = [0]
    min_d = sq_dist_matrix(xyz, xyz[chosen]).min(axis=1)
    min_d[chosen] = -1.0
    while len(chosen) < m:
        nxt = int(np.argmax(min_d))
        chosen.append(nxt)
        diff = xyz - xyz[nxt]
        min_d = np.minimum(min_d, (diff * diff).sum(axis=1))
        min_d[chosen] = -1.0
    return np.asarray(chosen[:m], dtype=np.int64)


def fps(p, m: int, start: int = 0) -> np.ndarray:
    """Greedy farthest point sampling from ``start``"""
    cloud = as_cloud(p)
    n = cloud.shape[0]
    _check_count(m, n, "fps")
    if not 0 <= start < n:
        raise DomainError(f"fps: start {start} outside [0, {n})")
    return _greedy_complete(cloud, [start], m)


def random_sample(p, m: int, seed: int) -> np.ndarray:
    """m distinct indices drawn without replacement"""
    cloud = as_cloud(p)
    _check_count(m, cloud.shape[0], "random_sample")
    rng = np.random.default_rng(seed)
    return rng.choice(cloud.shape[0], size=m, replace=False).astype(np.int64)


def voxel_keys(p, edge: float) -> np.ndarray:
    """Integer voxel coordinates, binned by floor from the cloud's min corner"""
    cloud = as_cloud(p)
    if edge <= 0:
        raise DomainError(f"voxel edge must be positive, got {edge}")
    xyz = cloud[:, :3]
    return np.floor((xyz - xyz.min(axis=0)) / edge).astype(np.int64)


def count_voxels(p, edge: float) -> int:
    return int(np.unique(voxel_keys(p, edge), axis=0).shape[0])


def _voxel_representatives(cloud: np.ndarray, edge: float) -> List[int]:
    keys = voxel_keys(cloud, edge)
    groups: Dict[Tuple[int, ...], List[int]] = {}
    for i, key in enumerate(map(tuple, keys)):
        groups.setdefault(key, []).append(i)
    reps = []
    for key in sorted(groups):
        members = np.asarray(groups[key])
        pts = cloud[members, :3]
        centroid = pts.mean(axis=0)
        d = ((pts - centroid) ** 2).sum(axis=1)
        reps.append(int(members[int(np.argmin(d))]))
    return reps


def voxel_sample_indices(p, target_m: int, iterations: int = 60) -> np.ndarray:
    """
    Voxel-grid downsampling to ``target_m`` indices.

    The voxel edge is bisected on a log scale for the largest occupied-voxel
    count not above target_m; each voxel keeps the input point nearest its
    points' centroid; any shortfall is completed greedily by farthest points.
    """
    cloud = as_cloud(p)
    n = cloud.shape[0]
    if target_m < 1:
        raise DomainError(f"voxel_sample: target_m must be >= 1, got {target_m}")
    target_m = min(target_m, n)
    if target_m == n:
        return np.arange(n, dtype=np.int64)

    extent = float(np.ptp(cloud[:, :3], axis=0).max())
    hi = 2.0 * extent + 1.0
    lo = max(extent, 1.0) * 1e-12
    best_edge, best_count = hi, 1
    for _ in range(iterations):
        mid = float(np.sqrt(lo * hi))
        c = count_voxels(cloud, mid)
        if c > target_m:
            lo = mid
        else:
            hi = mid
            if c > best_count:
                best_edge, best_count = mid, c
        if best_count == target_m:
            break

    reps = _voxel_representatives(cloud, best_edge)
    logger.debug(f"[VOXEL] edge={best_edge:.6g} voxels={len(reps)} target={target_m}")
    if len(reps) < target_m:
        return _greedy_complete(cloud, reps, target_m)
    return np.asarray(reps[:target_m], dtype=np.int64)


def voxel_sample(p, target_m: int) -> np.ndarray:
    cloud = as_cloud(p)
    return cloud[voxel_sample_indices(cloud, target_m)]


def nn_match(generated, p) -> np.ndarray:
    """Index of the nearest input point for each generated point (duplicates allowed)"""
    gen = as_cloud(generated, "generated")
    cloud = as_cloud(p)
    return np.argmin(sq_dist_matrix(gen[:, :3], cloud[:, :3]), axis=1).astype(np.int64)


def dedup_and_complete(matched: Sequence[int], p, m: int) -> np.ndarray:
    """Drop repeated indices (first occurrence wins) and fill up to m by farthest points"""
    cloud = as_cloud(p)
    n = cloud.shape[0]
    _check_count(m, n, "dedup_and_complete")
    seen = set()
    unique = []
    for idx in matched:
        idx = int(idx)
        if not 0 <= idx < n:
            raise DomainError(f"dedup_and_complete: index {idx} outside [0, {n})")
        if idx not in seen:
            seen.add(idx)
            unique.append(idx)
    if len(unique) >= m:
        return np.asarray(unique[:m], dtype=np.int64)
    return _greedy_complete(cloud, unique, m)


def apply_sampler(name: str, p, m: int, seed: int = 0, start: int = 0) -> np.ndarray:
    """Indices chosen by a classic sampler name: fps, random or voxel"""
    if name == "fps":
        return fps(p, m, start)
    if name == "random":
        return random_sample(p, m, seed)
    if name == "voxel":
        return voxel_sample_indices(p, m)
    raise DomainError(f"unknown classic sampler '{name}'")
