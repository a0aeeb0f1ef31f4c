"""
Inference-time NMF ablations.

Plans:
  keep-first     keep NMF layers 1..k, short-circuit the rest (k = 0..L)
  leave-one-out  short-circuit one layer at a time
  t-sweep        iteration count T = 1..20 in every layer
  rank-sweep     rank R in {1, 2, 4, 8} with each solver
  all            the four plans above plus the unablated baseline
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence

import numpy as np
import pandas as pd

from factorizer.exceptions import UsageError
from factorizer.models.network import Factorizer
from factorizer.schemas.config import InferConfig, OutputMode, Solver
from factorizer.services.inference import predict_sample
from factorizer.services.metrics import evaluate_case
from factorizer.services.reports import nan_mean
from factorizer.services.synthetic import VolumeSample

logger = logging.getLogger(__name__)

PLANS = ("keep-first", "leave-one-out", "t-sweep", "rank-sweep", "all")
T_SWEEP = tuple(range(1, 21))
RANK_SWEEP = (1, 2, 4, 8)


@dataclass
class AblationSetting:
    family: str
    apply: Callable[[Factorizer], None]
    layer: Optional[int] = None
    iterations: Optional[int] = None
    rank: Optional[int] = None
    solver: Optional[str] = None
    extra: Dict[str, object] = field(default_factory=dict)


def foreground_classes(model: Factorizer) -> List[int]:
    if OutputMode(model.cfg.output_mode) == OutputMode.SOFTMAX:
        return list(range(1, model.cfg.out_channels))
    return list(range(1, model.cfg.out_channels + 1))


def evaluate_model(
    model: Factorizer,
    samples: Sequence[VolumeSample],
    cfg: InferConfig,
    window: Sequence[int],
) -> List[Dict[str, object]]:
    """Metric rows (case, class, dice, hd95) for raw samples"""
    nested = OutputMode(model.cfg.output_mode) == OutputMode.SIGMOID
    classes = foreground_classes(model)
    rows: List[Dict[str, object]] = []
    for sample in samples:
        result = predict_sample(model, sample, cfg, window)
        rows.extend(evaluate_case(sample.id, sample.label, result.labels, classes, sample.spacing, nested=nested))
    return rows


def settings(plan: str, layers: int) -> Iterator[AblationSetting]:
    if plan not in PLANS:
        raise UsageError(f"unknown ablation plan '{plan}', expected one of {', '.join(PLANS)}")
    if plan == "all":
        yield AblationSetting("baseline", lambda model: None)
    if plan in ("keep-first", "all"):
        for k in range(layers + 1):
            dropped = list(range(k + 1, layers + 1))
            yield AblationSetting(
                "keep-first", lambda model, dropped=dropped: model.short_circuit(dropped) if dropped else None, layer=k
            )
    if plan in ("leave-one-out", "all"):
        for i in range(1, layers + 1):
            yield AblationSetting("leave-one-out", lambda model, i=i: model.short_circuit([i]), layer=i)
    if plan in ("t-sweep", "all"):
        for t in T_SWEEP:
            yield AblationSetting("t-sweep", lambda model, t=t: model.override_nmf(iterations=t), iterations=t)
    if plan in ("rank-sweep", "all"):
        for solver in (Solver.MU, Solver.HALS):
            for r in RANK_SWEEP:
                yield AblationSetting(
                    "rank-sweep",
                    lambda model, r=r, solver=solver: model.override_nmf(rank=r, solver=solver),
                    rank=r,
                    solver=solver.value,
                )


def ablate(
    model: Factorizer,
    samples: Sequence[VolumeSample],
    plan: str,
    cfg: InferConfig,
    window: Sequence[int],
) -> pd.DataFrame:
    """One row per setting with mean dice/hd95 and per-class columns"""
    layers = len(model.nmf_layers())
    classes = foreground_classes(model)
    model.eval()
    table = []
    for setting in settings(plan, layers):
        model.clear_overrides()
        try:
            setting.apply(model)
            rows = evaluate_model(model, samples, cfg, window)
        finally:
            model.clear_overrides()
        record: Dict[str, object] = {
            "family": setting.family,
            "layer": setting.layer,
            "iterations": setting.iterations,
            "rank": setting.rank,
            "solver": setting.solver,
            "mean_dice": float(np.mean([row["dice"] for row in rows])) if rows else float("nan"),
            "mean_hd95": nan_mean([row["hd95"] for row in rows]),
        }
        for k in classes:
            record[f"dice_{k}"] = float(np.mean([row["dice"] for row in rows if row["class"] == k]))
            record[f"hd95_{k}"] = nan_mean([row["hd95"] for row in rows if row["class"] == k])
        logger.info(
            f"{setting.family} layer={setting.layer} T={setting.iterations} R={setting.rank} "
            f"solver={setting.solver}: dice {record['mean_dice']:.4f}"
        )
        table.append(record)
    frame = pd.DataFrame(table)
    for column in ("layer", "iterations", "rank"):
        frame[column] = frame[column].astype("Int64")
    return frame
