"""
Pipeline stages shared by the CLI commands, and the full benchmark that chains them:
generate data, pre-train, evaluate source-only, adapt with OSUDA and both ablations,
evaluate each on the target test split, write comparison.csv.
"""
import logging
import os
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel

from src.domain.config import RunConfig
from src.domain.errors import ScheduleRangeError
from src.domain.schedule import AdaptFlags, StepReport
from src.engine.core.types import DType
from src.infrastructure.atomic_file import atomic_write
from src.infrastructure.observability.metrics_log_writer import MetricsLogWriter
from src.infrastructure.rng import SeedStreams
from src.models.segnet import NetworkSpec, ToyUNet
from src.services.adaptation import adapt_run
from src.services.checkpoint_store import load_checkpoint, save_checkpoint
from src.services.data_synth import generate_benchmark, load_split
from src.services.evaluation import COMPARISON_HEADER, EvaluationTable, evaluate
from src.services.pretraining import PretrainReport, pretrain_source

logger = logging.getLogger(__name__)

SOURCE_ONLY = "Source only"
METHODS: Dict[str, Tuple[bool, bool]] = {
    # name: (adaptive_channels, use_se)
    "OSUDA": (True, True),
    "OSUDA-AC": (False, True),
    "OSUDA-SE": (True, False),
}


def new_model(config: RunConfig) -> ToyUNet:
    spec = NetworkSpec(in_channels=config.in_channels, num_classes=config.num_classes)
    return ToyUNet(spec, SeedStreams(config.seed).init(), dtype=DType(config.dtype).numpy.newbyteorder("="))


def pretrain_stage(config: RunConfig, data_dir: str, out_path: str,
                   eval_split: str = "source-val") -> Tuple[ToyUNet, PretrainReport, EvaluationTable]:
    model = new_model(config)
    source = load_split(data_dir, "source-train")
    report = pretrain_source(
        model, source,
        epochs=config.epochs, lr=config.lr, batch_size=config.batch_size,
        seed=config.seed, source_momentum=config.source_momentum,
    )
    save_checkpoint(out_path, model, "pretrained", config.seed)
    # Score the saved checkpoint so the numbers match `eval` on the same file.
    table = evaluate_stage(out_path, data_dir, eval_split)
    return model, report, table


def adapt_stage(config: RunConfig, model_path: str, data_dir: str, out_path: str,
                log_path: Optional[str] = None, flags: Optional[AdaptFlags] = None,
                split: str = "target-train") -> Tuple[ToyUNet, List[StepReport]]:
    model, meta = load_checkpoint(model_path)
    flags = flags or config.flags()
    schedule = config.schedule()
    if meta.iterations_target > schedule.total_iters:
        raise ScheduleRangeError(
            f"checkpoint is already at t={meta.iterations_target}, beyond adapt_iters={schedule.total_iters}"
        )
    schedule.t = meta.iterations_target
    target = load_split(data_dir, split)

    writer = MetricsLogWriter(log_path, config.num_classes) if log_path else None
    if writer:
        writer.open()
    try:
        model, reports = adapt_run(
            model, target.images, schedule, flags,
            lr=config.adapt_lr, batch_size=config.batch_size, seed=config.seed,
        )
    finally:
        if writer:
            writer.close()
    save_checkpoint(out_path, model, "adapted", config.seed)
    return model, reports


def evaluate_stage(model_path: str, data_dir: str, split: str, out_csv: Optional[str] = None
                   ) -> EvaluationTable:
    model, _ = load_checkpoint(model_path)
    table = evaluate(model, load_split(data_dir, split))
    if out_csv:
        table.write_csv(out_csv)
    return table


class BenchmarkResult(BaseModel):
    preset: str
    source_val: EvaluationTable
    target_test: Dict[str, EvaluationTable]
    comparison_path: str

    def overall_dice(self, method: str) -> float:
        return self.target_test[method].overall.dice


def run_benchmark(config: RunConfig, preset: str, out_dir: str,
                  counts: Optional[Dict[str, int]] = None) -> BenchmarkResult:
    os.makedirs(out_dir, exist_ok=True)
    data_dir = config.data_dir or os.path.join(out_dir, "data")
    generate_benchmark(data_dir, preset, config.seed, counts=counts)

    pretrained = os.path.join(out_dir, "pretrained.bnck")
    _, _, source_val = pretrain_stage(config, data_dir, pretrained)
    source_val.write_csv(os.path.join(out_dir, "source_val.csv"))

    tables: Dict[str, EvaluationTable] = {
        SOURCE_ONLY: evaluate_stage(pretrained, data_dir, "target-test", os.path.join(out_dir, "source_only.csv"))
    }
    for method, (adaptive_channels, use_se) in METHODS.items():
        slug = method.lower()
        flags = AdaptFlags(adaptive_channels=adaptive_channels, use_se=use_se, freeze_non_bn=config.freeze_non_bn)
        adapted = os.path.join(out_dir, f"{slug}.bnck")
        adapt_stage(config, pretrained, data_dir, adapted,
                    log_path=os.path.join(out_dir, f"{slug}_log.csv"), flags=flags)
        tables[method] = evaluate_stage(adapted, data_dir, "target-test", os.path.join(out_dir, f"{slug}.csv"))

    comparison_path = os.path.join(out_dir, "comparison.csv")
    lines = [COMPARISON_HEADER] + [table.comparison_row(method) for method, table in tables.items()]
    atomic_write(comparison_path, "\n".join(lines) + "\n")
    logger.info(f"🏁 Benchmark on {preset} written to {comparison_path}")
    return BenchmarkResult(preset=preset, source_val=source_val, target_test=tables, comparison_path=comparison_path)
