"""
Analytic FLOPs and parameter accounting.

Convention: one multiply-accumulate (MAC) is 2 FLOPs. Matrix products are the
only MAC-bearing operations; row softmax is charged separately at
SOFTMAX_FLOPS_PER_ELEMENT per score entry. Layer normalization, biases, relu
and the 1/√d scaling are not charged.

The attention formulas return the matmul MAC count of one forward pass and
coincide with the textbook "4ND² + 2N²D" style expressions, so they can be
checked exactly against ``instrument_count``.
"""
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

import lightn_model
import task_head
import tensor_core as tc
from errors import DomainError
from schemas import (AttentionConfig, AttentionVariant, CostReport, CostStage, EmbeddingStyle, FFNConfig,
                     FFNScope, PipelineSpec, PipelineStage, TaskProfile)
from utils import serializers

logger = logging.getLogger(__name__)

FLOPS_PER_MAC = 2
SOFTMAX_FLOPS_PER_ELEMENT = 4

# Standard PointNet classifier: input and feature transform nets, shared MLPs
# 64-64 and 64-128-1024, classifier FC 512-256-classes. Batch norm is not counted.
POINTNET_TNET_CONV = (64, 128, 1024)
POINTNET_TNET_FC = (512, 256)
POINTNET_MLP1 = (3, 64, 64)
POINTNET_MLP2 = (64, 64, 128, 1024)
POINTNET_FC = (1024, 512, 256)

SWEEP_COLUMNS = ["config", "N", "m", "flops", "params", "reduction_pct", "increase_pct"]


def _positive(**values):
    for name, value in values.items():
        if value < 1:
            raise DomainError(f"{name} must be >= 1, got {value}")


def _chain_macs(widths: Sequence[int]) -> int:
    return sum(widths[i] * widths[i + 1] for i in range(len(widths) - 1))


def _chain_params(widths: Sequence[int]) -> int:
    return sum(widths[i] * widths[i + 1] + widths[i + 1] for i in range(len(widths) - 1))


# ---------- attention ----------

def flops_attention(n: int, d: int, heads: int = 1, a: int = 1,
                    variant: Union[AttentionVariant, str] = AttentionVariant.qkv_full,
                    symmetric: bool = False) -> int:
    """
    Matmul cost of one attention sublayer.

    qkv_full:          h·(2nd²/a + 2nd² + n²d/a + n²d)   (= 4nd² + 2n²d at h = a = 1)
    q_removed:         3nd² + 2n²d
    kv_removed:        2nd² + 2n²d
    self_correlation:  nd² + 2n²d, or nd² + n(n+1)/2·d + n²d when only the
                       upper triangle of X·Xᵀ is evaluated (``symmetric``)

    Examples:
        >>> flops_attention(1024, 64)
        150994944
        >>> flops_attention(1024, 64, variant="self_correlation")
        138412032
    """
    _positive(n=n, d=d, heads=heads, a=a)
    variant = AttentionVariant(variant)
    if variant == AttentionVariant.qkv_full:
        if d % a:
            raise DomainError(f"scale factor a={a} does not divide d={d}")
        d_head = d // a
        return heads * (2 * n * d * d_head + 2 * n * d * d + n * n * d_head + n * n * d)
    if variant == AttentionVariant.q_removed:
        return 3 * n * d * d + 2 * n * n * d
    if variant == AttentionVariant.kv_removed:
        return 2 * n * d * d + 2 * n * n * d
    if symmetric:
        return n * d * d + n * (n + 1) // 2 * d + n * n * d
    return n * d * d + 2 * n * n * d


def params_attention(d: int, heads: int = 1, a: int = 1,
                     variant: Union[AttentionVariant, str] = AttentionVariant.qkv_full) -> int:
    """Weight entries of the attention sublayer, layer normalization excluded"""
    cfg = AttentionConfig(variant=variant, heads=heads, scale_factor_a=a, model_dim=d)
    return lightn_model.attention_param_count(cfg)


def softmax_elements(n: int, heads: int = 1) -> int:
    return heads * n * n


def attention_ablation(n: int = 1024, d: int = 64,
                       configs: Optional[Sequence[Tuple[str, int, int]]] = None) -> List[dict]:
    """FLOPs/params of attention variants with deltas relative to single-head qkv_full"""
    configs = configs or [
        (AttentionVariant.self_correlation.value, 1, 1),
        (AttentionVariant.kv_removed.value, 1, 1),
        (AttentionVariant.q_removed.value, 1, 1),
        (AttentionVariant.qkv_full.value, 1, 1),
        (AttentionVariant.qkv_full.value, 2, 1),
        (AttentionVariant.qkv_full.value, 3, 1),
        (AttentionVariant.qkv_full.value, 2, 2),
        (AttentionVariant.qkv_full.value, 4, 4),
    ]
    base_macs = flops_attention(n, d)
    base_params = params_attention(d)
    rows = []
    for variant, heads, a in configs:
        macs = flops_attention(n, d, heads, a, variant)
        params = params_attention(d, heads, a, variant)
        rows.append({
            "variant": variant,
            "heads": heads,
            "a": a,
            "macs": macs,
            "flops": FLOPS_PER_MAC * macs + SOFTMAX_FLOPS_PER_ELEMENT * softmax_elements(n, heads),
            "params": params,
            "flops_delta_pct": float(Fraction(macs - base_macs, base_macs) * 100),
            "params_delta_pct": float(Fraction(params - base_params, base_params) * 100),
        })
    return rows


# ---------- embedding / FFN ----------

def flops_embedding(n: int, d_o: int, style: Union[EmbeddingStyle, str] = EmbeddingStyle.lightn) -> int:
    """lightn: n·d_o²; reference_pct (two layers at d_m = 2d_o): 2n·(2d_o)²"""
    _positive(n=n, d_o=d_o)
    if EmbeddingStyle(style) == EmbeddingStyle.lightn:
        return n * d_o * d_o
    return 2 * n * (2 * d_o) ** 2


def embedding_macs(n: int, d_in: int, d_o: int) -> int:
    """Exact MACs of the shared d_in -> d_o map"""
    return n * d_in * d_o


def flops_ffn(n: int, d_f: int, r: int, scope: Union[FFNScope, str] = FFNScope.per_point) -> int:
    """Extra cost of the inserted d_f -> d_f/r layer: n·d_f²/r² per point, d_f²/r² once for global"""
    _positive(n=n, d_f=d_f, r=r)
    rows = 1 if FFNScope(scope) == FFNScope.global_ else n
    return rows * d_f * d_f // (r * r)


def ffn_widths(d_o: int, ffn: FFNConfig, m: int) -> List[int]:
    return [d_o] + list(ffn.hidden) + [3 * m]


def ffn_macs(d_o: int, ffn: FFNConfig, m: int) -> int:
    """Global FFN: one pooled row through every layer"""
    return _chain_macs(ffn_widths(d_o, ffn, m))


def ffn_params(d_o: int, ffn: FFNConfig, m: int) -> int:
    return _chain_params(ffn_widths(d_o, ffn, m))


def ffn_ablation(d_o: int = 64, m: int = 32, d_f: int = 512,
                 configs: Sequence[Tuple[int, int]] = ((2, 1), (3, 2), (3, 4), (4, 2), (4, 4))) -> List[dict]:
    """Generation-head cost for (layers, r) settings; (2, ·) is the d_o -> d_f -> 3m baseline"""
    rows = []
    for layers, r in configs:
        ffn = FFNConfig.expand_reduce(layers, r, d_f)
        macs = ffn_macs(d_o, ffn, m)
        rows.append({
            "layers": layers,
            "r": r,
            "hidden": list(ffn.hidden),
            "macs": macs,
            "flops": FLOPS_PER_MAC * macs,
            "params": ffn_params(d_o, ffn, m),
        })
    return rows


# ---------- task heads ----------

def _pointnet_per_point_macs() -> int:
    tnet3 = _chain_macs((3,) + POINTNET_TNET_CONV)
    tnet64 = _chain_macs((64,) + POINTNET_TNET_CONV)
    return tnet3 + 3 * 3 + _chain_macs(POINTNET_MLP1) + tnet64 + 64 * 64 + _chain_macs(POINTNET_MLP2)


def _pointnet_global_macs(classes: int) -> int:
    tnet3_fc = _chain_macs((POINTNET_TNET_CONV[-1],) + POINTNET_TNET_FC + (9,))
    tnet64_fc = _chain_macs((POINTNET_TNET_CONV[-1],) + POINTNET_TNET_FC + (64 * 64,))
    return tnet3_fc + tnet64_fc + _chain_macs(POINTNET_FC + (classes,))


def _pointnet_params(classes: int) -> int:
    tnet3 = _chain_params((3,) + POINTNET_TNET_CONV) + _chain_params((1024,) + POINTNET_TNET_FC + (9,))
    tnet64 = _chain_params((64,) + POINTNET_TNET_CONV) + _chain_params((1024,) + POINTNET_TNET_FC + (64 * 64,))
    return (tnet3 + tnet64 + _chain_params(POINTNET_MLP1) + _chain_params(POINTNET_MLP2)
            + _chain_params(POINTNET_FC + (classes,)))


def task_head_macs(n: int, widths: Sequence[int] = (3, 32, 64, 128), classes: int = 4,
                   profile: Union[TaskProfile, str] = TaskProfile.mini) -> Tuple[int, int]:
    """(per-point MACs summed over n points, global MACs) of a task network"""
    _positive(n=n, classes=classes)
    if TaskProfile(profile) == TaskProfile.pointnet_full:
        return n * _pointnet_per_point_macs(), _pointnet_global_macs(classes)
    return n * _chain_macs(widths), widths[-1] * classes


def flops_task_head(n: int, widths: Sequence[int] = (3, 32, 64, 128), classes: int = 4,
                    profile: Union[TaskProfile, str] = TaskProfile.mini) -> int:
    """2·(n·Σ w_i·w_{i+1} + classifier) for the mini head; full PointNet for pointnet_full"""
    per_point, global_ = task_head_macs(n, widths, classes, profile)
    return FLOPS_PER_MAC * (per_point + global_)


def params_count(widths: Sequence[int] = (3, 32, 64, 128), classes: int = 4,
                 profile: Union[TaskProfile, str] = TaskProfile.mini) -> int:
    """Weights plus biases of a task network"""
    if TaskProfile(profile) == TaskProfile.pointnet_full:
        return _pointnet_params(classes)
    return _chain_params(list(widths) + [classes])


# ---------- reports ----------

def _stage(name: str, macs: int, params: int, aux: int = 0) -> CostStage:
    return CostStage(name=name, macs=macs, flops=FLOPS_PER_MAC * macs + aux, params=params, aux_flops=aux)


def _report(config: str, stages: List[CostStage]) -> CostReport:
    return CostReport(
        config=config,
        macs=sum(s.macs for s in stages),
        flops=sum(s.flops for s in stages),
        params=sum(s.params for s in stages),
        flops_per_mac=FLOPS_PER_MAC,
        breakdown=stages,
    )


def sampler_cost(spec: PipelineSpec) -> CostReport:
    """LighTN at N = spec.n emitting spec.m points: embed, attention (+ layer norm params), FFN"""
    att = spec.attention
    stages = [
        _stage(PipelineStage.embed.value, embedding_macs(spec.n, spec.d_in, spec.d_o), spec.d_in * spec.d_o + spec.d_o),
        _stage(
            PipelineStage.attention.value,
            flops_attention(spec.n, spec.d_o, att.heads, att.scale_factor_a, att.variant,
                            symmetric=att.symmetric_gram),
            params_attention(spec.d_o, att.heads, att.scale_factor_a, att.variant) + 2 * spec.d_o,
            SOFTMAX_FLOPS_PER_ELEMENT * softmax_elements(spec.n, att.heads),
        ),
        _stage(PipelineStage.ffn.value, ffn_macs(spec.d_o, spec.ffn, spec.m), ffn_params(spec.d_o, spec.ffn, spec.m)),
    ]
    return _report(f"lightn[{att.variant.value},h={att.heads},a={att.scale_factor_a}] N={spec.n} m={spec.m}", stages)


def task_cost(spec: PipelineSpec, n: int) -> CostReport:
    """The task network on n points"""
    per_point, global_ = task_head_macs(n, spec.task_widths, spec.classes, spec.task_profile)
    params = params_count(spec.task_widths, spec.classes, spec.task_profile)
    stage = _stage(PipelineStage.task_head.value, per_point + global_, params)
    return _report(f"{spec.task_profile.value} N={n}", [stage])


def pipeline_cost(spec: PipelineSpec) -> CostReport:
    """Sampler at N followed by the task network at m"""
    stages = list(sampler_cost(spec).breakdown) + list(task_cost(spec, spec.m).breakdown)
    return _report(f"lightn+{spec.task_profile.value} N={spec.n} m={spec.m}", stages)


@dataclass
class BudgetResult:
    ok: bool
    flops_ok: bool
    params_ok: bool
    flops_margin: Fraction
    params_increase: Fraction


def budget_check(sampler: CostReport, task_at_m: CostReport, task_at_n: CostReport,
                 param_budget: Optional[int] = None) -> BudgetResult:
    """
    Resource inequality: sampler + task(m) must cost strictly fewer FLOPs than
    task(N), and the added parameters must fit ``param_budget`` when given.

    flops_margin = 1 − (sampler + task(m)) / task(N)
    params_increase = (sampler + task(m) − task(N)) / task(N) in parameters
    Both are exact fractions of integer counts.
    """
    used = sampler.flops + task_at_m.flops
    flops_ok = used < task_at_n.flops
    margin = Fraction(task_at_n.flops - used, task_at_n.flops) if task_at_n.flops else Fraction(0)
    extra = sampler.params + task_at_m.params - task_at_n.params
    increase = Fraction(extra, task_at_n.params) if task_at_n.params else Fraction(0)
    params_ok = param_budget is None or sampler.params + task_at_m.params <= param_budget
    return BudgetResult(flops_ok and params_ok, flops_ok, params_ok, margin, increase)


def pipeline_budget(spec: PipelineSpec, param_budget: Optional[int] = None) -> Dict[str, object]:
    """Sampler, task(m), task(N) reports plus the budget check for one pipeline spec"""
    sampler, at_m, at_n = sampler_cost(spec), task_cost(spec, spec.m), task_cost(spec, spec.n)
    result = budget_check(sampler, at_m, at_n, param_budget)
    logger.info(f"[COST] N={spec.n} m={spec.m}: sampler {sampler.flops:,} + task {at_m.flops:,} "
                f"vs {at_n.flops:,} FLOPs, reduction {float(result.flops_margin) * 100:.2f}%")
    return {
        "pipeline": serializers.cost_report_to_dict(pipeline_cost(spec)),
        "sampler": serializers.cost_report_to_dict(sampler),
        "task_at_m": serializers.cost_report_to_dict(at_m),
        "task_at_n": serializers.cost_report_to_dict(at_n),
        "budget": serializers.budget_to_dict(result),
    }


def ratio_sweep(spec: PipelineSpec, ratios: Sequence[int] = (2, 4, 8, 16, 32, 64)) -> List[list]:
    """One row per downsampling ratio N/m: config, N, m, flops, params, reduction_pct, increase_pct"""
    full = task_cost(spec, spec.n)
    rows = [[full.config, spec.n, spec.n, full.flops, full.params, 0.0, 0.0]]
    for ratio in ratios:
        m = spec.n // ratio
        if m < 1:
            raise DomainError(f"ratio {ratio} leaves no points from N={spec.n}")
        at = spec.model_copy(update={"m": m})
        sampler, at_m = sampler_cost(at), task_cost(at, m)
        result = budget_check(sampler, at_m, full)
        rows.append([f"lightn+{spec.task_profile.value} ratio={ratio}", spec.n, m, sampler.flops + at_m.flops,
                     sampler.params + at_m.params, float(result.flops_margin * 100),
                     float(result.params_increase * 100)])
    return rows


def write_sweep_csv(path: str, rows: Sequence[Sequence]):
    serializers.write_csv(path, SWEEP_COLUMNS, rows)


# ---------- instrumented oracle ----------

def instrument_count(spec: PipelineSpec, seed: int = 0) -> Dict[str, int]:
    """
    Run the real forward pass on a random cloud of spec.n points under a MAC
    counter and return MACs per executed stage plus "total".

    Only stages listed in spec.stages run; with none listed the total is 0.
    """
    stages = set(spec.stages)
    rng = np.random.default_rng(seed)
    result = {"total": 0}
    if not stages:
        return result
    d_in = spec.d_in
    params = lightn_model.init_params(seed, spec.attention, m=spec.m, d_o=spec.d_o, ffn=spec.ffn)
    w = {name: tc.Matrix(value) for name, value in params.blocks.items()}
    if d_in != 3:
        # wider inputs exercise the embedding map alone
        bound = 1.0 / np.sqrt(d_in)
        w["embed_w"] = tc.Matrix(rng.uniform(-bound, bound, size=(d_in, spec.d_o)))
    cloud = tc.Matrix(rng.uniform(-1.0, 1.0, size=(spec.n, d_in)))
    x = tc.Matrix(rng.normal(size=(spec.n, spec.d_o)))

    with tc.count_macs() as counter:
        if PipelineStage.embed in stages:
            with counter.stage(PipelineStage.embed.value):
                x = tc.linear(cloud, w["embed_w"], w["embed_b"])
        if PipelineStage.attention in stages:
            with counter.stage(PipelineStage.attention.value):
                x = lightn_model.attention_block(x, w, spec.attention)
        if PipelineStage.ffn in stages:
            with counter.stage(PipelineStage.ffn.value):
                generated = lightn_model.ffn_generate(lightn_model.pool_global(x), w, spec.m)
        if PipelineStage.task_head in stages and spec.task_profile == TaskProfile.mini:
            theta = task_head.init_task_params(spec.classes, seed, spec.task_widths)
            points = generated if PipelineStage.ffn in stages else tc.Matrix(rng.normal(size=(spec.m, 3)))
            with counter.stage(PipelineStage.task_head.value):
                task_head.task_forward(points, theta)
    result.update(counter.by_stage)
    result["total"] = counter.total
    logger.debug(f"[COST] instrumented MACs {result}")
    return result
