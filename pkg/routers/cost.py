from fastapi import APIRouter, Query
from typing import List, Optional
import logging

import cost_model
from schemas import AttentionVariant, PipelineSpec, SweepRow

router = APIRouter(prefix="/cost", tags=["Cost"])

logger = logging.getLogger(__name__)


@router.post("/pipeline")
def pipeline_cost(spec: PipelineSpec, param_budget: Optional[int] = Query(None, ge=0)):
    """
    Whole-pipeline cost of a sampler spec: the sampler, the task network at m and
    at N, and the resource budget check between them.
    """
    logger.info(f"[COST_API] pipeline N={spec.n} m={spec.m} variant={spec.attention.variant.value}")
    return cost_model.pipeline_budget(spec, param_budget)


@router.get("/attention")
def attention_cost(
    n: int = Query(1024, ge=1),
    d: int = Query(64, ge=1),
    heads: int = Query(1, ge=1),
    a: int = Query(1, ge=1),
    variant: AttentionVariant = Query(AttentionVariant.qkv_full),
    symmetric: bool = Query(False),
):
    macs = cost_model.flops_attention(n, d, heads, a, variant, symmetric)
    return {
        "variant": variant.value,
        "n": n,
        "d": d,
        "heads": heads,
        "a": a,
        "macs": macs,
        "flops": cost_model.FLOPS_PER_MAC * macs,
        "softmax_flops": cost_model.SOFTMAX_FLOPS_PER_ELEMENT * cost_model.softmax_elements(n, heads),
        "params": cost_model.params_attention(d, heads, a, variant),
    }


@router.get("/sweep", response_model=List[SweepRow])
def ratio_sweep(
    n: int = Query(1024, ge=1),
    ratios: List[int] = Query([2, 4, 8, 16, 32, 64]),
):
    """Downsampling-ratio sweep of the default pipeline against full-resolution PointNet"""
    rows = cost_model.ratio_sweep(PipelineSpec(n=n), ratios)
    return [dict(zip(cost_model.SWEEP_COLUMNS, row)) for row in rows]
