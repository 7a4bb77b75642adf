"""
Sampling losses: Chamfer, repulsion, projection and their compositions.

L_sampling = L_CD + α·L_repl + β·T(t);  L_total = L_sampling + δ·L_task.
"""
import logging
from typing import Dict

import numpy as np

import tensor_core as tc
from errors import DomainError
from projection import projection_loss
from samplers_classic import as_cloud, sq_dist_matrix
from schemas import LossConfig, SampleMetrics
from tensor_core import Matrix

logger = logging.getLogger(__name__)


def _matrix(x) -> Matrix:
    return x if isinstance(x, Matrix) else Matrix(np.asarray(x, dtype=np.float64))


def chamfer(q, p) -> Matrix:
    """(1/M)·Σ_q min_p ‖q−p‖² + (1/N)·Σ_p min_q ‖p−q‖²"""
    q, p = _matrix(q), _matrix(p)
    if q.rows == 0 or p.rows == 0:
        raise DomainError(f"chamfer on empty cloud ({q.rows} vs {p.rows} points)")
    d = tc.pairwise_sq_dist(q, p)
    q_to_p = tc.reduce(tc.reduce(tc.transpose(d), "min_over_rows"), "mean")
    p_to_q = tc.reduce(tc.reduce(d, "min_over_rows"), "mean")
    return tc.add(q_to_p, p_to_q)


def repulsion(q, cfg: LossConfig) -> Matrix:
    """(1/(M·k)) Σ_i Σ_{q' ∈ kNN(q_i)} max(0, h² − ‖q' − q_i‖²), self excluded"""
    q = _matrix(q)
    m = q.rows
    if m < 2:
        logger.warning(f"[REPULSION] needs at least 2 points, got {m}; returning 0")
        return Matrix(0.0)
    k = min(cfg.k_rep, m - 1)
    d = tc.pairwise_sq_dist(q, q)
    masked = np.array(d.value)
    np.fill_diagonal(masked, np.inf)
    idx = np.argsort(masked, axis=1, kind="stable")[:, :k]
    eta = tc.relu(tc.shift(tc.scale(tc.gather_cols(d, idx), -1.0), cfg.h * cfg.h))
    return tc.reduce(eta, "mean")


def sampling_loss_terms(q_generated, q_projected, p, t, cfg: LossConfig) -> Dict[str, Matrix]:
    """
    Each unweighted component plus the weighted total under key "sampling".

    "displacement" is a detached diagnostic: mean squared distance between the
    generated points and their projections.
    """
    gen, proj = _matrix(q_generated).value, _matrix(q_projected).value
    terms = {
        "chamfer": chamfer(q_projected, p),
        "displacement": Matrix(((gen - proj) ** 2).sum(axis=1).mean()),
    }
    total = terms["chamfer"]
    if cfg.alpha != 0:
        terms["repulsion"] = repulsion(q_projected, cfg)
        total = tc.add(total, tc.scale(terms["repulsion"], cfg.alpha))
    if cfg.beta != 0:
        terms["projection"] = projection_loss(t, cfg.temperature_kind)
        total = tc.add(total, tc.scale(terms["projection"], cfg.beta))
    terms["sampling"] = total
    return terms


def sampling_loss(q_generated, q_projected, p, t, cfg: LossConfig) -> Matrix:
    """chamfer(projected, p) + α·repulsion(projected) + β·T(t)"""
    return sampling_loss_terms(q_generated, q_projected, p, t, cfg)["sampling"]


def total_loss(sampling, task, cfg: LossConfig) -> Matrix:
    """sampling + δ·task"""
    sampling = _matrix(sampling)
    if cfg.delta == 0:
        return sampling
    return tc.add(sampling, tc.scale(_matrix(task), cfg.delta))


def sample_metrics(sample, p, sampler: str, source: str = "") -> SampleMetrics:
    """Chamfer to the input, minimum pairwise distance and coverage radius of a sample"""
    sample = as_cloud(sample, "sample")[:, :3]
    cloud = as_cloud(p)[:, :3]
    d = sq_dist_matrix(sample, cloud)
    cd = float(d.min(axis=1).mean() + d.min(axis=0).mean())
    if sample.shape[0] > 1:
        self_d = sq_dist_matrix(sample, sample)
        np.fill_diagonal(self_d, np.inf)
        min_pair = float(np.sqrt(self_d.min()))
    else:
        min_pair = 0.0
    coverage = float(np.sqrt(d.min(axis=0).max()))
    return SampleMetrics(source=source, sampler=sampler, n=int(cloud.shape[0]), m=int(sample.shape[0]),
                         chamfer=cd, min_pairwise_distance=min_pair, coverage_radius=coverage)
