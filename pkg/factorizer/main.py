# factorizer/main.py

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from dotenv import load_dotenv

from factorizer.exceptions import ConfigurationError, FactorizerError, UsageError
from factorizer.models.network import build
from factorizer.schemas.config import FactorizerConfig, OutputMode, RunConfig
from factorizer.services import ablation, checkpoint, components, dataset_io, inference, metrics, reports, synthetic, training
from factorizer.services.transforms import pad_to, preprocess
from factorizer.utils.config_file import load_run_config, parse_assignments
from factorizer.utils.log_setup import configure_logging

logger = logging.getLogger("factorizer")

# Published parameter count of the BraTS-scale model with shifted windows
REFERENCE_PARAMETERS = 5_900_000


def env_int(name: str) -> Optional[int]:
    raw = os.getenv(name)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"{name} must be an integer, got '{raw}'") from None


def env_defaults() -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    seed = env_int("FACTORIZER_SEED")
    if seed is not None:
        values.update({"train.seed": seed, "data.seed": seed})
    workers = env_int("FACTORIZER_NUM_WORKERS")
    if workers is not None:
        values.update({"train.num_workers": workers, "infer.num_workers": workers})
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = parse_assignments(args.set or [])
    if args.seed is not None:
        overrides.update({"train.seed": args.seed, "data.seed": args.seed})
    return load_run_config(args.config, overrides=overrides, defaults=env_defaults())


# Subcommands

def cmd_gen_data(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = Path(args.out)
    splits = ["train", "eval"] if args.split == "both" else [args.split]
    for split in splits:
        target = out / split if len(splits) > 1 else out
        dataset_io.save_dataset(synthetic.generate(cfg.data, split), target)
    return 0


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    samples = [preprocess(sample) for sample in dataset_io.load_dataset(args.data)]
    if args.limit:
        samples = samples[: args.limit]
    resume = checkpoint.load_checkpoint(args.resume) if args.resume else None
    if resume is not None:
        model = checkpoint.restore_model(resume)
    else:
        model = build(cfg.model, seed=cfg.train.seed)
    result = training.train(model, samples, cfg.train, cfg.augment, checkpoint_dir=args.out, resume=resume)
    reports.write_table(result.log, Path(args.out) / "train_log.tsv")
    if result.checkpoint is not None:
        logger.info(f"Final checkpoint {result.checkpoint} sha256 {checkpoint.file_hash(result.checkpoint)}")
    return 0


def cmd_infer(args: argparse.Namespace, cfg: RunConfig) -> int:
    model = checkpoint.restore_model(checkpoint.load_checkpoint(args.checkpoint))
    model.eval()
    window = cfg.infer.window or model.cfg.patch_size
    for sample in dataset_io.load_dataset(args.data):
        result = inference.predict_sample(model, sample, cfg.infer, window)
        dataset_io.save_prediction(args.out, sample.id, result.labels, result.probabilities)
        logger.info(f"Predicted {sample.id}")
    return 0


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    nested = cfg.model.output_mode == OutputMode.SIGMOID
    classes = list(range(1, cfg.data.classes + 1))
    rows = []
    for sample in dataset_io.load_dataset(args.data):
        prediction = dataset_io.load_prediction(args.predictions, sample.id)
        rows.extend(metrics.evaluate_case(sample.id, sample.label, prediction, classes, sample.spacing, nested))
    text = reports.write_metrics(rows, args.report)
    if args.report is None:
        sys.stdout.write(text)
    logger.info(f"Mean dice over {len(rows)} case/class pairs: {metrics.mean_dice(rows):.4f}")
    return 0


def cmd_ablate(args: argparse.Namespace, cfg: RunConfig) -> int:
    loaded = checkpoint.load_checkpoint(args.checkpoint)
    model = checkpoint.restore_model(loaded)
    samples = dataset_io.load_dataset(args.data)
    window = cfg.infer.window or model.cfg.patch_size
    frame = ablation.ablate(model, samples, args.plan, cfg.infer, window)
    text = reports.write_table(frame, args.report)
    if args.report is None:
        sys.stdout.write(text)
    return 0


def cmd_inspect_components(args: argparse.Namespace, cfg: RunConfig) -> int:
    model = checkpoint.restore_model(checkpoint.load_checkpoint(args.checkpoint))
    samples = dataset_io.load_dataset(args.data)
    by_id = {sample.id: sample for sample in samples}
    case = args.case or samples[0].id
    if case not in by_id:
        raise UsageError(f"case '{case}' not found in {args.data}")
    prepared = pad_to(preprocess(by_id[case]), model.cfg.patch_size)
    extent = np.asarray(prepared.label.shape)
    corner = (extent - np.asarray(model.cfg.patch_size)) // 2
    region = tuple(slice(int(c), int(c) + p) for c, p in zip(corner, model.cfg.patch_size))
    window = prepared.image[(slice(None),) + region]
    layers = [int(v) for v in args.layers.split(",")] if args.layers else None
    maps = components.capture_components(model, window, layers)
    components.dump_components(maps, args.out)
    return 0


def cmd_params(args: argparse.Namespace, cfg: RunConfig) -> int:
    model_cfg: FactorizerConfig = cfg.model
    count = build(model_cfg, seed=cfg.train.seed).parameter_count()
    deviation = 100.0 * (count - REFERENCE_PARAMETERS) / REFERENCE_PARAMETERS
    sys.stdout.write(f"parameters\t{count}\nreference\t{REFERENCE_PARAMETERS}\ndeviation_percent\t{deviation:+.2f}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file (dotted keys)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key; repeatable")
    common.add_argument("--seed", type=int, help="seed for data generation, initialization and training")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR (default FACTORIZER_LOG_LEVEL or INFO)")

    parser = argparse.ArgumentParser(prog="factorizer", description="NMF-based volumetric segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["train", "eval", "both"], default="both")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--limit", type=int, help="use only the first N samples")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="sliding-window inference")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="score predictions against a dataset")
    p.add_argument("--predictions", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="NMF ablation sweeps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--plan", choices=list(ablation.PLANS), default="all")
    p.add_argument("--report")
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("inspect-components", parents=[common], help="dump NMF spatial factors")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--case")
    p.add_argument("--layers", help="comma-separated NMF layer indices (default all)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_inspect_components)

    p = sub.add_parser("params", parents=[common], help="report the parameter count of a config")
    p.set_defaults(handler=cmd_params)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        configure_logging(args.log_level)
    except ValueError as e:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"factorizer: error: {e}\n")
        return 2
    try:
        cfg = resolve_config(args)
        return args.handler(args, cfg)
    except FactorizerError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
