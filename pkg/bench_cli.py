"""
Command-line harness: sampling, training, evaluation, cost analysis and benchmarks.

Usage:
    python bench_cli.py sample --input cloud.xyz --sampler fps --m 32
    python bench_cli.py train-task --config config.json
    python bench_cli.py train-sampler --m 16 --task-checkpoint outputs/task_head.json
    python bench_cli.py eval --sampler lightn --sampler-checkpoint outputs/sampler_m16.json
    python bench_cli.py flops --m 32
    python bench_cli.py bench --m-list 8 16 32

Every command prints one JSON document on stdout and writes its reports plus the
resolved run_config.json into the output directory. Failures print an error
document and exit nonzero (2 for toolkit errors, 1 for anything unexpected).
"""
import argparse
import logging
import os
import sys
from typing import Dict, List, Optional, Tuple

from pydantic import ValidationError

import config
import cost_model
import lightn_model
import task_head
from datasets import PointDataset, make_splits
from errors import ConfigError, LighTNError, UsageError
from losses import sample_metrics
from pointcloud_io import infer_format, load_pointcloud, save_pointcloud
from samplers_classic import apply_sampler, dedup_and_complete, nn_match
from schemas import (AttentionVariant, Command, EvalMode, PipelineSpec, PointFormat, RunConfig, SamplerName,
                     TaskProfile, TemperatureKind)
from utils import serializers

logger = logging.getLogger(__name__)

BENCH_COLUMNS = ["sampler", "m", "accuracy_soft", "accuracy_matched", "flops", "params"]
CLASSIC_SAMPLERS = (SamplerName.fps, SamplerName.random, SamplerName.voxel)
ABLATION_SAMPLER = "lightn_cd_soft_t2"

# CLI flag -> RunConfig field
FLAG_FIELDS = {
    "input": "input",
    "output": "output",
    "format": "format",
    "m": "m",
    "m_list": "m_list",
    "seed": "seed",
    "sampler": "sampler",
    "variant": "variant",
    "heads": "heads",
    "scale_factor_a": "scale_factor_a",
    "alpha": "alpha",
    "beta": "beta",
    "delta": "delta",
    "temperature": "temperature_kind",
    "projection_k": "projection_k",
    "ffn_layers": "ffn_layers",
    "ffn_ratio": "ffn_ratio",
    "epochs": "epochs",
    "task_epochs": "task_epochs",
    "batch_size": "batch_size",
    "sampler_lr": "sampler_lr",
    "task_lr": "task_lr",
    "loss_ablation": "loss_ablation",
    "task_checkpoint": "task_checkpoint",
    "sampler_checkpoint": "sampler_checkpoint",
    "n_full": "n_full",
    "ratios": "ratios",
    "param_budget": "param_budget",
}


class _Parser(argparse.ArgumentParser):
    """Usage errors raise instead of exiting, so they get an error document like any other failure"""

    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(description="LighTN point-cloud downsampling toolkit")
    parser.add_argument("command", choices=[c.value for c in Command])
    parser.add_argument("--config", help="JSON RunConfig file; flags override its values")
    parser.add_argument("--input", nargs="+", help="point files (xyz or csv)")
    parser.add_argument("--output", help=f"output directory (default ${{LIGHTN_OUTPUT_DIR}} = {config.OUTPUT_DIR})")
    parser.add_argument("--format", choices=[f.value for f in PointFormat], help="format of written point files")
    parser.add_argument("--m", type=int, help="number of sampled points")
    parser.add_argument("--m-list", type=int, nargs="+", dest="m_list", help="sample sizes swept by bench")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--sampler", choices=[s.value for s in SamplerName])
    parser.add_argument("--variant", choices=[v.value for v in AttentionVariant])
    parser.add_argument("--heads", type=int)
    parser.add_argument("--scale-factor-a", type=int, dest="scale_factor_a")
    parser.add_argument("--alpha", type=float, help="repulsion weight")
    parser.add_argument("--beta", type=float, help="projection (temperature) weight")
    parser.add_argument("--delta", type=float, help="task loss weight")
    parser.add_argument("--temperature", choices=[t.value for t in TemperatureKind])
    parser.add_argument("--projection-k", type=int, dest="projection_k")
    parser.add_argument("--ffn-layers", type=int, dest="ffn_layers")
    parser.add_argument("--ffn-ratio", type=int, dest="ffn_ratio")
    parser.add_argument("--epochs", type=int, help="sampler training epochs")
    parser.add_argument("--task-epochs", type=int, dest="task_epochs")
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--sampler-lr", type=float, dest="sampler_lr")
    parser.add_argument("--task-lr", type=float, dest="task_lr")
    parser.add_argument("--loss-ablation", action="store_true", default=None, dest="loss_ablation",
                        help="bench also trains with Chamfer + t² projection loss only")
    parser.add_argument("--task-checkpoint", dest="task_checkpoint")
    parser.add_argument("--sampler-checkpoint", dest="sampler_checkpoint")
    parser.add_argument("--n-full", type=int, dest="n_full", help="input size of the cost analysis")
    parser.add_argument("--ratios", type=int, nargs="+", help="downsampling ratios of the cost sweep")
    parser.add_argument("--param-budget", type=int, dest="param_budget")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults <- config.json <- --config file <- explicit flags"""
    values = {"seed": config.DEFAULT_SEED}
    if os.path.exists(config.RUN_CONFIG_PATH):
        values.update(serializers.read_json(config.RUN_CONFIG_PATH))
    if args.config:
        values.update(serializers.read_json(args.config))
    for flag, field_name in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[field_name] = value
    values["command"] = args.command
    return RunConfig(**values)


def _output_dir(cfg: RunConfig) -> str:
    out = cfg.output or config.OUTPUT_DIR
    os.makedirs(out, exist_ok=True)
    return out


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


# ---------- commands ----------

def cmd_sample(cfg: RunConfig, out: str) -> dict:
    if not cfg.input:
        raise ConfigError("sample needs at least one --input file")
    sampler = None
    if cfg.sampler == SamplerName.lightn:
        if not cfg.sampler_checkpoint:
            raise ConfigError("lightn sampling needs --sampler-checkpoint")
        sampler = lightn_model.load_params(cfg.sampler_checkpoint)
        if sampler.m != cfg.m:
            raise ConfigError(f"checkpoint emits {sampler.m} points, --m is {cfg.m}")

    outputs, metrics = [], []
    for path in cfg.input:
        cloud = load_pointcloud(path, infer_format(path, cfg.format))
        if sampler is None:
            idx = apply_sampler(cfg.sampler.value, cloud, cfg.m, seed=cfg.seed)
        else:
            idx = dedup_and_complete(nn_match(lightn_model.generate(cloud, sampler), cloud), cloud, cfg.m)
        sample = cloud[idx]
        name = f"{_stem(path)}_{cfg.sampler.value}_m{cfg.m}"
        cloud_path = os.path.join(out, f"{name}.{cfg.format.value}")
        save_pointcloud(sample, cloud_path, cfg.format)
        doc = serializers.metrics_to_dict(sample_metrics(sample, cloud, cfg.sampler.value, source=path))
        serializers.write_json(os.path.join(out, f"{name}.metrics.json"), doc)
        outputs.append(cloud_path)
        metrics.append(doc)
        logger.info(f"[SAMPLE] {path}: {cloud.shape[0]} -> {cfg.m} points ({cfg.sampler.value})")
    return {"outputs": outputs, "metrics": metrics}


def _task_head(cfg: RunConfig, train: PointDataset, test: PointDataset, out: str) -> Tuple[task_head.TaskParams, dict]:
    """Load the configured task checkpoint, or pre-train one and save it"""
    if cfg.task_checkpoint and os.path.exists(cfg.task_checkpoint):
        theta = task_head.load_task_params(cfg.task_checkpoint)
        return theta, {"checkpoint": cfg.task_checkpoint, "test_accuracy": task_head.accuracy(test, theta)}
    result = task_head.pretrain_task(train, cfg.task_train_config(), test,
                                     metrics_path=os.path.join(out, "task_metrics.csv"))
    path = cfg.task_checkpoint or os.path.join(out, "task_head.json")
    task_head.save_task_params(result.params, path)
    return result.params, {
        "checkpoint": path,
        "train_accuracy": result.train_accuracy,
        "test_accuracy": result.test_accuracy,
    }


def cmd_train_task(cfg: RunConfig, out: str) -> dict:
    train, test = make_splits(cfg.dataset)
    result = task_head.pretrain_task(train, cfg.task_train_config(), test,
                                     metrics_path=os.path.join(out, "task_metrics.csv"))
    path = cfg.task_checkpoint or os.path.join(out, "task_head.json")
    task_head.save_task_params(result.params, path)
    return {
        "checkpoint": path,
        "train_accuracy": result.train_accuracy,
        "test_accuracy": result.test_accuracy,
        "epochs": len(result.history),
    }


def _train_lightn(cfg: RunConfig, train: PointDataset, theta: task_head.TaskParams, m: int, out: str,
                  ablation: bool = False):
    loss_cfg = cfg.loss_config()
    projection = cfg.projection_config()
    tag = f"sampler_m{m}"
    if ablation:
        # Chamfer plus the t² projection loss, no repulsion
        loss_cfg = loss_cfg.model_copy(update={"alpha": 0.0, "temperature_kind": TemperatureKind.t2})
        projection = projection.model_copy(update={"temperature_kind": TemperatureKind.t2})
        tag = f"{ABLATION_SAMPLER}_m{m}"
    return task_head.train_sampler(
        train, theta, m, cfg.sampler_train_config(), loss_cfg,
        attention=cfg.attention_config(), ffn=cfg.ffn_config(), projection=projection,
        metrics_path=os.path.join(out, f"{tag}_metrics.csv"),
    ).params, tag


def cmd_train_sampler(cfg: RunConfig, out: str) -> dict:
    train, test = make_splits(cfg.dataset)
    theta, head = _task_head(cfg, train, test, out)
    params, tag = _train_lightn(cfg, train, theta, cfg.m, out)
    path = cfg.sampler_checkpoint or os.path.join(out, f"{tag}.json")
    lightn_model.save_params(params, path)
    return {
        "checkpoint": path,
        "task_head": head,
        "temperature_t": params.temperature_t,
        "accuracy_soft": task_head.evaluate(test, params, theta, cfg.m, EvalMode.soft),
        "accuracy_matched": task_head.evaluate(test, params, theta, cfg.m, EvalMode.matched),
    }


def cmd_eval(cfg: RunConfig, out: str) -> dict:
    if not cfg.task_checkpoint:
        raise ConfigError("eval needs --task-checkpoint")
    _, test = make_splits(cfg.dataset)
    theta = task_head.load_task_params(cfg.task_checkpoint)
    if cfg.sampler == SamplerName.lightn:
        if not cfg.sampler_checkpoint:
            raise ConfigError("lightn evaluation needs --sampler-checkpoint")
        sampler = lightn_model.load_params(cfg.sampler_checkpoint)
    else:
        sampler = cfg.sampler.value
    report = {
        "sampler": cfg.sampler.value,
        "m": cfg.m,
        "accuracy_full": task_head.accuracy(test, theta),
        "accuracy_soft": task_head.evaluate(test, sampler, theta, cfg.m, EvalMode.soft, cfg.seed),
        "accuracy_matched": task_head.evaluate(test, sampler, theta, cfg.m, EvalMode.matched, cfg.seed),
    }
    report["matched_soft_gap"] = report["accuracy_soft"] - report["accuracy_matched"]
    serializers.write_json(os.path.join(out, "eval.json"), report)
    return report


def _pipeline_spec(cfg: RunConfig, n: int, m: int, profile: TaskProfile, classes: int) -> PipelineSpec:
    return PipelineSpec(n=n, m=m, attention=cfg.attention_config(), ffn=cfg.ffn_config(),
                        task_profile=profile, classes=classes)


def cmd_flops(cfg: RunConfig, out: str) -> dict:
    spec = _pipeline_spec(cfg, cfg.n_full, cfg.m, TaskProfile.pointnet_full, 40)
    report = cost_model.pipeline_budget(spec, cfg.param_budget)
    report["attention_ablation"] = cost_model.attention_ablation(cfg.n_full, spec.d_o)
    report["ffn_ablation"] = cost_model.ffn_ablation(spec.d_o, cfg.m)
    sweep_path = os.path.join(out, "ratio_sweep.csv")
    cost_model.write_sweep_csv(sweep_path, cost_model.ratio_sweep(spec, cfg.ratios))
    report["sweep_csv"] = sweep_path
    serializers.write_json(os.path.join(out, "flops.json"), report)
    return report


def cmd_bench(cfg: RunConfig, out: str) -> dict:
    train, test = make_splits(cfg.dataset)
    theta, head = _task_head(cfg, train, test, out)
    rows: List[list] = []
    for m in cfg.m_list:
        spec = _pipeline_spec(cfg, train.n, m, TaskProfile.mini, theta.classes)
        task_at_m = cost_model.task_cost(spec, m)
        for name in CLASSIC_SAMPLERS:
            acc = task_head.evaluate(test, name.value, theta, m, EvalMode.soft, cfg.seed)
            # classic samplers already return input points, so both modes coincide
            rows.append([name.value, m, acc, acc, task_at_m.flops, task_at_m.params])
        lightn = cost_model.pipeline_cost(spec)
        variants = [False, True] if cfg.loss_ablation else [False]
        for ablation in variants:
            params, tag = _train_lightn(cfg, train, theta, m, out, ablation)
            lightn_model.save_params(params, os.path.join(out, f"{tag}.json"))
            rows.append([
                ABLATION_SAMPLER if ablation else SamplerName.lightn.value, m,
                task_head.evaluate(test, params, theta, m, EvalMode.soft),
                task_head.evaluate(test, params, theta, m, EvalMode.matched),
                lightn.flops, lightn.params,
            ])
    full = cost_model.task_cost(_pipeline_spec(cfg, train.n, train.n, TaskProfile.mini, theta.classes), train.n)
    acc_full = task_head.accuracy(test, theta)
    rows.append(["full", train.n, acc_full, acc_full, full.flops, full.params])
    rows.sort(key=lambda r: (r[1], r[0]))

    csv_path = os.path.join(out, "bench.csv")
    serializers.write_csv(csv_path, BENCH_COLUMNS, rows)
    logger.info(f"[BENCH] ✅ {len(rows)} rows written to {csv_path}")
    return {"csv": csv_path, "task_head": head, "rows": [dict(zip(BENCH_COLUMNS, r)) for r in rows]}


COMMANDS = {
    Command.sample: cmd_sample,
    Command.train_task: cmd_train_task,
    Command.train_sampler: cmd_train_sampler,
    Command.eval: cmd_eval,
    Command.flops: cmd_flops,
    Command.bench: cmd_bench,
}


def run(cmd, cfg: RunConfig) -> Dict[str, object]:
    """Execute one command; the returned report is also written as report.json"""
    cmd = Command(cmd)
    cfg = cfg.model_copy(update={"command": cmd})
    out = _output_dir(cfg)
    serializers.write_json(os.path.join(out, "run_config.json"), cfg.model_dump(mode="json"))
    logger.info(f"[{cmd.name.upper()}] output directory {out}")
    report = {"command": cmd.value, "output": out}
    report.update(COMMANDS[cmd](cfg, out))
    serializers.write_json(os.path.join(out, "report.json"), report)
    return report


def main(argv: Optional[List[str]] = None) -> int:
    config.configure_logging()
    try:
        args = build_parser().parse_args(argv)
        report = run(args.command, resolve_config(args))
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    except LighTNError as e:
        logger.error(f"[CLI] {e.code}: {e}")
        sys.stdout.write(serializers.dumps(e.to_dict()))
        return 2
    except ValidationError as e:
        sys.stdout.write(serializers.dumps({"error": "config_error", "detail": str(e)}))
        return 2
    except OSError as e:
        sys.stdout.write(serializers.dumps({"error": "io_error", "detail": str(e)}))
        return 2
    except Exception as e:
        logger.exception("[CLI] unexpected failure")
        sys.stdout.write(serializers.dumps({"error": "internal_error", "detail": f"{type(e).__name__}: {e}"}))
        return 1
    sys.stdout.write(serializers.dumps(report))
    return 0


if __name__ == "__main__":
    sys.exit(main())
