"""
LighTN sampler network.

Pipeline: shared linear embedding (3 -> d_o) -> attention block -> column-wise
max pooling -> expand-reduce FFN emitting m×3 generated coordinates. There is
no positional encoding anywhere; the input coordinates play that role.

Functions taking ``params`` accept either a SamplerParams (evaluated as
constants) or a dict of Matrices from ``attach`` (recorded on a tape).
"""
import logging
import math
from typing import Dict, List, Tuple, Union

import numpy as np

import tensor_core as tc
from errors import ConfigError, ContractError, DomainError
from schemas import AttentionConfig, AttentionVariant, FFNConfig, ProjectionConfig
from tensor_core import Matrix, Tape
from utils import serializers

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "lightn_sampler"
LAYER_NORM_EPS = 1e-5

Weights = Dict[str, Matrix]


class SamplerParams:
    """All learnable LighTN weights as named float64 blocks, plus their configs"""

    def __init__(self, blocks: Dict[str, np.ndarray], m: int, d_o: int,
                 attention: AttentionConfig, ffn: FFNConfig, projection: ProjectionConfig = None):
        self.blocks = blocks
        self.m = m
        self.d_o = d_o
        self.attention = attention
        self.ffn = ffn
        self.projection = projection or ProjectionConfig()

    @property
    def temperature_t(self) -> float:
        return float(self.blocks["temperature_t"][0, 0])

    def clamp_temperature(self, floor: float = 1e-6):
        self.blocks["temperature_t"][0, 0] = max(self.blocks["temperature_t"][0, 0], floor)

    def count(self) -> int:
        return int(sum(v.size for v in self.blocks.values()))

    def copy(self) -> "SamplerParams":
        return SamplerParams({k: v.copy() for k, v in self.blocks.items()}, self.m, self.d_o,
                             self.attention, self.ffn, self.projection)

    def meta(self) -> dict:
        return {
            "m": self.m,
            "d_o": self.d_o,
            "attention": self.attention.model_dump(mode="json"),
            "ffn": self.ffn.model_dump(mode="json"),
            "projection": self.projection.model_dump(mode="json"),
        }


def _block_shapes(m: int, d_o: int, cfg: AttentionConfig, ffn: FFNConfig) -> List[Tuple[str, Tuple[int, int], int]]:
    """(name, shape, fan_in) in initialization order; fan_in 0 marks bias-like blocks"""
    shapes = [("embed_w", (3, d_o), 3), ("embed_b", (1, d_o), 0)]
    d_head = d_o // cfg.scale_factor_a
    if cfg.variant == AttentionVariant.self_correlation:
        shapes += [("fc_out_w", (d_o, d_o), d_o), ("fc_out_b", (1, d_o), 0)]
    elif cfg.variant == AttentionVariant.qkv_full:
        for h in range(cfg.heads):
            shapes += [(f"wq{h}", (d_o, d_head), d_o), (f"wk{h}", (d_o, d_head), d_o),
                       (f"wv{h}", (d_o, d_o), d_o), (f"wout{h}", (d_o, d_o), d_o)]
    elif cfg.variant == AttentionVariant.q_removed:
        shapes += [("wk0", (d_o, d_o), d_o), ("wv0", (d_o, d_o), d_o), ("wout0", (d_o, d_o), d_o)]
    elif cfg.variant == AttentionVariant.kv_removed:
        shapes += [("wq0", (d_o, d_o), d_o), ("wout0", (d_o, d_o), d_o)]
    shapes += [("ln_gain", (1, d_o), -1), ("ln_bias", (1, d_o), 0)]
    widths = [d_o] + list(ffn.hidden) + [3 * m]
    for i in range(len(widths) - 1):
        shapes += [(f"ffn{i}_w", (widths[i], widths[i + 1]), widths[i]), (f"ffn{i}_b", (1, widths[i + 1]), 0)]
    return shapes


def init_params(seed: int, cfg: AttentionConfig = None, m: int = 16, d_o: int = None,
                ffn: FFNConfig = None, projection: ProjectionConfig = None) -> SamplerParams:
    """Weights ~ U[−√(1/fan_in), √(1/fan_in)], biases zero, layer-norm gain one, t = 1"""
    cfg = cfg or AttentionConfig()
    d_o = d_o or cfg.model_dim
    if d_o != cfg.model_dim:
        raise ConfigError(f"d_o={d_o} differs from attention model_dim={cfg.model_dim}")
    if m < 1:
        raise DomainError(f"m must be >= 1, got {m}")
    ffn = ffn or FFNConfig()
    rng = np.random.default_rng(seed)
    blocks = {}
    for name, shape, fan_in in _block_shapes(m, d_o, cfg, ffn):
        if fan_in > 0:
            bound = math.sqrt(1.0 / fan_in)
            blocks[name] = rng.uniform(-bound, bound, size=shape)
        elif fan_in < 0:
            blocks[name] = np.ones(shape)
        else:
            blocks[name] = np.zeros(shape)
    blocks["temperature_t"] = np.ones((1, 1))
    return SamplerParams(blocks, m, d_o, cfg, ffn, projection)


def attach(params: SamplerParams, tape: Tape) -> Weights:
    """Register every block as a tape leaf named after the block"""
    return {name: tape.leaf(value, name=name) for name, value in params.blocks.items()}


def _weights(params: Union[SamplerParams, Weights]) -> Weights:
    if isinstance(params, SamplerParams):
        return {name: Matrix(value) for name, value in params.blocks.items()}
    return params


def _as_input(p) -> Matrix:
    x = p if isinstance(p, Matrix) else Matrix(np.asarray(p, dtype=np.float64))
    if x.cols != 3:
        raise ContractError(f"LighTN takes XYZ-only points (width 3), got width {x.cols}")
    return x


def input_embed(p, params) -> Matrix:
    """Shared per-point linear map 3 -> d_o"""
    w = _weights(params)
    return tc.linear(_as_input(p), w["embed_w"], w["embed_b"])


def correlation_scores(x: Matrix, symmetric: bool = True) -> Matrix:
    """A = X·Xᵀ"""
    return tc.gram(x, symmetric=symmetric)


def self_correlation_core(x: Matrix, symmetric: bool = True) -> Matrix:
    """softmax(X·Xᵀ/√d)·X"""
    scores = tc.row_softmax(tc.scale(correlation_scores(x, symmetric), 1.0 / math.sqrt(x.cols)))
    return tc.matmul(scores, x)


def self_correlation(x: Matrix, params, symmetric: bool = True) -> Matrix:
    """FC_out(softmax(X·Xᵀ/√d)·X) + X, then per-point layer normalization"""
    w = _weights(params)
    c = self_correlation_core(x, symmetric)
    out = tc.add(tc.linear(c, w["fc_out_w"], w["fc_out_b"]), x)
    return tc.layer_norm(out, w["ln_gain"], w["ln_bias"], LAYER_NORM_EPS)


def _attend(q: Matrix, k: Matrix, v: Matrix, scale: float) -> Matrix:
    scores = tc.row_softmax(tc.scale(tc.matmul(q, tc.transpose(k)), scale))
    return tc.matmul(scores, v)


def attention_variant(x: Matrix, cfg: AttentionConfig, weights) -> Matrix:
    """
    Attention output before the residual skip and normalization.

    qkv_full sums per-head outputs projected by their own W_out (the same as
    concatenating heads and projecting); q_removed uses X as the query;
    kv_removed uses X as key and value; self_correlation returns the
    parameter-free core.
    """
    w = _weights(weights)
    d = x.cols
    if d != cfg.model_dim:
        raise ConfigError(f"input width {d} does not match model_dim {cfg.model_dim}")
    if cfg.variant == AttentionVariant.self_correlation:
        if cfg.heads != 1:
            raise ConfigError("self_correlation is single-head")
        return self_correlation_core(x, cfg.symmetric_gram)
    if cfg.variant == AttentionVariant.qkv_full:
        scale = 1.0 / math.sqrt(d / cfg.scale_factor_a)
        out = None
        for h in range(cfg.heads):
            head = _attend(tc.matmul(x, w[f"wq{h}"]), tc.matmul(x, w[f"wk{h}"]), tc.matmul(x, w[f"wv{h}"]), scale)
            head = tc.matmul(head, w[f"wout{h}"])
            out = head if out is None else tc.add(out, head)
        return out
    scale = 1.0 / math.sqrt(d)
    if cfg.variant == AttentionVariant.q_removed:
        head = _attend(x, tc.matmul(x, w["wk0"]), tc.matmul(x, w["wv0"]), scale)
        return tc.matmul(head, w["wout0"])
    if cfg.variant == AttentionVariant.kv_removed:
        head = _attend(tc.matmul(x, w["wq0"]), x, x, scale)
        return tc.matmul(head, w["wout0"])
    raise ConfigError(f"unknown attention variant {cfg.variant}")


def attention_block(x: Matrix, params, cfg: AttentionConfig) -> Matrix:
    """The configured attention with residual skip and layer normalization"""
    w = _weights(params)
    if cfg.variant == AttentionVariant.self_correlation:
        return self_correlation(x, w, cfg.symmetric_gram)
    out = tc.add(attention_variant(x, cfg, w), x)
    return tc.layer_norm(out, w["ln_gain"], w["ln_bias"], LAYER_NORM_EPS)


def attention_param_count(cfg: AttentionConfig) -> int:
    """Weight entries of the attention sublayer (excluding layer normalization)"""
    d = cfg.model_dim
    if cfg.variant == AttentionVariant.self_correlation:
        return d * d + d
    if cfg.variant == AttentionVariant.qkv_full:
        return cfg.heads * (2 * d * (d // cfg.scale_factor_a) + 2 * d * d)
    if cfg.variant == AttentionVariant.q_removed:
        return 3 * d * d
    return 2 * d * d


def pool_global(x: Matrix) -> Matrix:
    """Column-wise max over points"""
    return tc.reduce(x, "max_over_rows")


def ffn_generate(g: Matrix, params, m: int) -> Matrix:
    """Pooled feature (1×d_o) -> hidden relu layers -> linear m×3 output"""
    w = _weights(params)
    layers = 0
    while f"ffn{layers}_w" in w:
        layers += 1
    if layers == 0:
        raise ConfigError("no FFN layers in params")
    out_width = w[f"ffn{layers - 1}_w"].cols
    if out_width != 3 * m:
        raise ConfigError(f"FFN last layer width {out_width} does not emit m={m} points")
    h = g
    for i in range(layers):
        h = tc.linear(h, w[f"ffn{i}_w"], w[f"ffn{i}_b"])
        if i < layers - 1:
            h = tc.relu(h)
    return tc.reshape(h, m, 3)


def forward(p, params, m: int, cfg: AttentionConfig = None) -> Matrix:
    """Generate m points from cloud p"""
    if m < 1:
        raise DomainError(f"m must be >= 1, got {m}")
    if cfg is None:
        if not isinstance(params, SamplerParams):
            raise ConfigError("attention config required when params are tape weights")
        cfg = params.attention
    w = _weights(params)
    x = input_embed(p, w)
    x = attention_block(x, w, cfg)
    return ffn_generate(pool_global(x), w, m)


def generate(p, params: SamplerParams) -> np.ndarray:
    """Generated points as a plain array, using the params' own m and attention config"""
    return forward(p, params, params.m, params.attention).numpy()


def save_params(params: SamplerParams, path: str):
    serializers.save_checkpoint(path, CHECKPOINT_KIND, params.blocks, params.meta())
    logger.info(f"[CHECKPOINT] saved sampler params ({params.count():,} weights) to {path}")


def load_params(path: str) -> SamplerParams:
    blocks, meta = serializers.load_checkpoint(path, CHECKPOINT_KIND)
    return SamplerParams(
        blocks,
        m=int(meta["m"]),
        d_o=int(meta["d_o"]),
        attention=AttentionConfig(**meta["attention"]),
        ffn=FFNConfig(**meta["ffn"]),
        projection=ProjectionConfig(**meta["projection"]),
    )
