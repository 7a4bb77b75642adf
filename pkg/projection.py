"""
Differentiable soft projection of generated points onto the input cloud.

Each generated point q is replaced by z = Σ w_i·p_i over its k nearest input
points, with w = softmax(−d²/t). Neighbor selection is piecewise constant; the
weights are differentiable in the generated coordinates and in t.
"""
import logging
from typing import List, Tuple, Union

import numpy as np

import tensor_core as tc
from errors import DomainError
from samplers_classic import as_cloud
from schemas import ProjectionConfig, TemperatureKind
from tensor_core import Matrix

logger = logging.getLogger(__name__)

TEMPERATURE_FLOOR = 1e-6


def knn(p, q, k: int) -> List[Tuple[int, float]]:
    """The k nearest input points to q as (index, squared distance), ascending"""
    cloud = as_cloud(p)
    if not 1 <= k <= cloud.shape[0]:
        raise DomainError(f"knn: k={k} outside [1, {cloud.shape[0]}]")
    diff = cloud[:, :3] - np.asarray(q, dtype=np.float64)[:3]
    d = (diff * diff).sum(axis=1)
    order = np.argsort(d, kind="stable")[:k]
    return [(int(i), float(d[i])) for i in order]


def knn_indices(sq_dists: np.ndarray, k: int) -> np.ndarray:
    """Row-wise indices of the k smallest entries, ties to the lowest index"""
    if not 1 <= k <= sq_dists.shape[1]:
        raise DomainError(f"knn: k={k} outside [1, {sq_dists.shape[1]}]")
    return np.argsort(sq_dists, axis=1, kind="stable")[:, :k]


def project_weights(sq_dists, t: float) -> np.ndarray:
    """w_i = exp(−d_i/t) / Σ_j exp(−d_j/t), shifted by the smallest distance"""
    if not t > 0:
        raise DomainError(f"temperature must be positive, got {t}")
    d = np.asarray(sq_dists, dtype=np.float64)
    e = np.exp(-(d - d.min()) / t)
    return e / e.sum()


def _temperature(t) -> Matrix:
    t = t if isinstance(t, Matrix) else Matrix(float(t))
    if t.shape != (1, 1):
        raise DomainError(f"temperature must be a scalar, got shape {t.shape}")
    if not t.value[0, 0] > 0:
        raise DomainError(f"temperature must be positive, got {t.value[0, 0]}")
    return t


def soft_project(generated: Matrix, p, cfg: ProjectionConfig, t) -> Matrix:
    """Soft-projected m×3 points, recorded on the generated points' tape"""
    cloud = as_cloud(p)[:, :3]
    if cfg.k > cloud.shape[0]:
        raise DomainError(f"projection k={cfg.k} exceeds N={cloud.shape[0]}")
    gen = generated if isinstance(generated, Matrix) else Matrix(generated)
    t = _temperature(t)
    p_const = Matrix(cloud)
    d = tc.pairwise_sq_dist(gen, p_const)
    idx = knn_indices(d.value, cfg.k)
    logits = tc.scale(tc.divide(tc.gather_cols(d, idx), t), -1.0)
    weights = tc.scatter_cols(tc.row_softmax(logits), idx, cloud.shape[0])
    return tc.matmul(weights, p_const)


def projection_loss(t, kind: Union[TemperatureKind, str]) -> Matrix:
    """T(t) for the configured temperature function"""
    t = t if isinstance(t, Matrix) else Matrix(float(t))
    kind = TemperatureKind(kind)
    if kind == TemperatureKind.t:
        return tc.scale(t, 1.0)
    if kind == TemperatureKind.t2:
        return tc.square(t)
    if kind == TemperatureKind.t3:
        return tc.mul(tc.square(t), t)
    if kind == TemperatureKind.t4:
        return tc.square(tc.square(t))
    return tc.exp(t)


def soft_project_points(generated: np.ndarray, p, cfg: ProjectionConfig, t: float) -> np.ndarray:
    """Plain-array soft projection for evaluation"""
    return soft_project(Matrix(generated), p, cfg, t).numpy()
