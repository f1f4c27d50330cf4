import argparse
import logging
import os
import sys
from typing import List, Optional

from rich.console import Console
from rich.table import Table

from src.app.app_context import AppContext, get_app_context, set_app_context
from src.domain.config import RunConfig
from src.domain.errors import BNStatError, ConfigError
from src.domain.scene import DEFAULT_COUNTS, PRESETS, SPLITS
from src.services.benchmark import adapt_stage, evaluate_stage, pretrain_stage, run_benchmark
from src.services.data_synth import generate_benchmark
from src.services.evaluation import EvaluationTable
from src.services.inspection import InspectionReport, inspect_checkpoint

logger = logging.getLogger(__name__)


# ---------- Rendering ----------

def render_table(table: EvaluationTable, title: str) -> None:
    view = Table(title=title)
    for column in ("Region", "Dice", "Dice std", "Hausdorff [px]", "Hausdorff std"):
        view.add_column(column, justify="right" if column != "Region" else "left")
    for row in table.rows:
        view.add_row(row.region, f"{row.dice:.4f}", f"{row.dice_std:.4f}",
                     f"{row.hausdorff:.3f}", f"{row.hausdorff_std:.3f}")
    Console().print(view)


def render_inspection(report: InspectionReport) -> None:
    console = Console()
    console.print(
        f"[bold]{report.spec_id}[/bold] phase={report.phase} seed={report.seed} "
        f"K={report.iterations_source} t={report.iterations_target} channels={report.total_channels}"
    )
    view = Table(title="BN layers")
    for column in ("Layer", "C", "mean(mu)", "mean(var)", "mean(gamma)", "mean(beta)",
                   "max d", "max |dgamma|", "max |dbeta|"):
        view.add_column(column, justify="right" if column != "Layer" else "left")
    for layer in report.layers:
        view.add_row(
            layer.name, str(layer.channels),
            f"{layer.running_mean.mean:.4g}", f"{layer.running_var.mean:.4g}",
            f"{layer.gamma.mean:.4g}", f"{layer.beta.mean:.4g}",
            f"{max(layer.distance):.4g}", f"{max(layer.gamma_delta):.4g}", f"{max(layer.beta_delta):.4g}",
        )
    console.print(view)


# ---------- Commands ----------

def _activate(args, run_dir: Optional[str] = None) -> RunConfig:
    """
    Build the run config (file plus flag overrides) and install the process context.
    Run events are logged under the configured out_dir, else under `run_dir`.
    """
    overrides = {
        "seed": getattr(args, "seed", None),
        "adapt_iters": getattr(args, "iters", None),
        "adaptive_channels": False if getattr(args, "no_adaptive_channels", False) else None,
        "use_se": False if getattr(args, "no_se", False) else None,
        "freeze_non_bn": True if getattr(args, "freeze_non_bn", False) else None,
    }
    config_path = getattr(args, "config", None)
    if config_path:
        config = RunConfig.from_file(config_path, **overrides)
    else:
        config = RunConfig.from_mapping({k: v for k, v in overrides.items() if v is not None})
    set_app_context(AppContext(config, run_dir=run_dir))
    return config


def _output_dir(path: str) -> str:
    return os.path.dirname(os.path.abspath(path))


def _data_dir(args, config: RunConfig) -> str:
    data_dir = args.data or config.data_dir
    if not data_dir:
        raise ConfigError("no dataset given: pass --data or set data_dir in the config")
    return data_dir


def cmd_gen_data(args) -> int:
    config = _activate(args)
    counts = {split: getattr(args, split.replace("-", "_")) for split in SPLITS}
    generate_benchmark(args.out, args.preset, config.seed, counts=counts)
    return 0


def cmd_pretrain(args) -> int:
    config = _activate(args, run_dir=_output_dir(args.out))
    _, report, table = pretrain_stage(config, _data_dir(args, config), args.out)
    logger.info(f"Pre-trained for {report.iterations} iterations, final loss {report.final_loss:.4f}")
    render_table(table, "source-val")
    return 0


def cmd_adapt(args) -> int:
    config = _activate(args, run_dir=_output_dir(args.out))
    log_path = args.log or os.path.splitext(args.out)[0] + "_log.csv"
    _, reports = adapt_stage(config, args.model, _data_dir(args, config), args.out, log_path=log_path)
    logger.info(f"Adapted for {len(reports)} steps; log at {log_path}")
    return 0


def cmd_eval(args) -> int:
    _activate(args, run_dir=_output_dir(args.out))
    table = evaluate_stage(args.model, args.data, args.split, args.out)
    render_table(table, args.split)
    return 0


def cmd_inspect(args) -> int:
    _activate(args)
    render_inspection(inspect_checkpoint(args.model))
    return 0


def cmd_benchmark(args) -> int:
    _activate(args, run_dir=args.out)
    config = get_app_context().config
    out_dir = args.out or config.out_dir
    if not out_dir:
        raise ConfigError("no output directory: pass --out or set out_dir in the config")
    result = run_benchmark(config, args.preset, out_dir)
    render_table(result.source_val, "source-val (pretrained)")
    for method, table in result.target_test.items():
        render_table(table, f"target-test: {method}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnstat", description="Source-free BN-statistics segmentation adaptation")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="Generate the synthetic source/target benchmark")
    gen.add_argument("--preset", required=True, choices=sorted(PRESETS))
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    for split in SPLITS:
        gen.add_argument(f"--{split}", dest=split.replace("-", "_"), type=int, default=DEFAULT_COUNTS[split],
                         help=f"number of {split} samples")
    gen.set_defaults(func=cmd_gen_data)

    pre = sub.add_parser("pretrain", help="Supervised source pre-training")
    pre.add_argument("--config")
    pre.add_argument("--data", help="dataset root (default: data_dir from the config)")
    pre.add_argument("--out", required=True)
    pre.add_argument("--seed", type=int)
    pre.set_defaults(func=cmd_pretrain)

    ada = sub.add_parser("adapt", help="Source-free target adaptation of a pretrained checkpoint")
    ada.add_argument("--config")
    ada.add_argument("--model", required=True)
    ada.add_argument("--data", help="dataset root (default: data_dir from the config)")
    ada.add_argument("--out", required=True)
    ada.add_argument("--log", help="per-iteration CSV log (default: <out>_log.csv)")
    ada.add_argument("--seed", type=int)
    ada.add_argument("--iters", type=int, help="override adapt_iters")
    ada.add_argument("--no-adaptive-channels", action="store_true")
    ada.add_argument("--no-se", action="store_true")
    ada.add_argument("--freeze-non-bn", action="store_true")
    ada.set_defaults(func=cmd_adapt)

    ev = sub.add_parser("eval", help="Dice/Hausdorff table of a checkpoint on one split")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--split", default="target-test", choices=SPLITS)
    ev.set_defaults(func=cmd_eval)

    ins = sub.add_parser("inspect", help="Summarize a checkpoint's BN statistics and snapshot deltas")
    ins.add_argument("--model", required=True)
    ins.set_defaults(func=cmd_inspect)

    bench = sub.add_parser("benchmark", help="Full pipeline: source only, OSUDA, OSUDA-AC, OSUDA-SE")
    bench.add_argument("--config")
    bench.add_argument("--preset", required=True, choices=sorted(PRESETS))
    bench.add_argument("--out", help="output directory (default: out_dir from the config)")
    bench.add_argument("--seed", type=int)
    bench.add_argument("--iters", type=int, help="override adapt_iters")
    bench.set_defaults(func=cmd_benchmark)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """Parse and dispatch. Returns the exit code; argparse errors exit with 2 on their own."""
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BNStatError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        logger.error(f"❌ I/O failure: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.error(f"❌ Unexpected failure: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1
