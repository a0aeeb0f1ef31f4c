"""Tab-separated reports built with pandas."""
import io
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["case", "class", "dice", "hd95"]


def metrics_frame(rows: List[Dict[str, object]]) -> pd.DataFrame:
    frame = pd.DataFrame(rows, columns=METRIC_COLUMNS)
    return frame.sort_values(["case", "class"], kind="stable").reset_index(drop=True)


def metrics_summary(frame: pd.DataFrame) -> pd.DataFrame:
    """Per class: mean dice, mean hd95 over defined values, count of undefined hd95"""
    grouped = frame.groupby("class", sort=True)
    summary = pd.DataFrame(
        {
            "cases": grouped["dice"].size(),
            "mean_dice": grouped["dice"].mean(),
            "mean_hd95": grouped["hd95"].mean(),
            "undefined_hd95": grouped["hd95"].apply(lambda s: int(s.isna().sum())),
        }
    ).reset_index()
    overall = {
        "class": "all",
        "cases": int(frame["case"].nunique()),
        "mean_dice": frame["dice"].mean(),
        "mean_hd95": frame["hd95"].mean(),
        "undefined_hd95": int(frame["hd95"].isna().sum()),
    }
    return pd.concat([summary, pd.DataFrame([overall])], ignore_index=True)


def render_metrics(rows: List[Dict[str, object]]) -> str:
    """Per-case table, a '# summary' marker line, then the summary table"""
    frame = metrics_frame(rows)
    buffer = io.StringIO()
    frame.to_csv(buffer, sep="\t", index=False, na_rep="undefined", float_format="%.6f")
    buffer.write("# summary\n")
    metrics_summary(frame).to_csv(buffer, sep="\t", index=False, na_rep="undefined", float_format="%.6f")
    return buffer.getvalue()


def write_table(frame: pd.DataFrame, path: Optional[Union[str, Path]]) -> str:
    text = frame.to_csv(sep="\t", index=False, na_rep="undefined", float_format="%.6f")
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        logger.info(f"Wrote {len(frame)} rows to {path}")
    return text


def write_metrics(rows: List[Dict[str, object]], path: Optional[Union[str, Path]]) -> str:
    text = render_metrics(rows)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        logger.info(f"Wrote metrics for {len(rows)} case/class pairs to {path}")
    return text


def nan_mean(values: List[float]) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0 or np.isnan(values).all():
        return float("nan")
    return float(np.nanmean(values))
