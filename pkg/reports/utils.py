"""
Post-processing of episode results and training logs into plot-ready tables.

Standard deviations are sample deviations (n - 1 denominator) and are left
out when fewer than two seeds contribute.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

from reports.exceptions import EmptyInput, LogParseError

logger = logging.getLogger(__name__)

METRICS = ("scheduled_length", "avg_cpu_utilization", "income")
RESULT_COLUMNS = ("seed", "scenario", "warm_start", "policy", "length", "income", "cpu_allo")
TABLE_COLUMNS = {"length": "scheduled_length", "cpu_allo": "avg_cpu_utilization", "income": "income"}
DEFAULT_WINDOW = 10


@dataclass
class RunSummary:
    policy: str
    scenario: str
    results: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    mean: dict = field(default_factory=dict)
    std: dict | None = None

    @property
    def n_seeds(self) -> int:
        return len(self.results)

    def to_dict(self) -> dict:
        data = {
            "policy": self.policy,
            "scenario": self.scenario,
            "seeds": list(self.seeds),
            "mean": dict(self.mean),
        }
        if self.std is not None:
            data["std"] = dict(self.std)
        return data


def aggregate(results, policy: str = "", scenario: str = "", seeds=None) -> RunSummary:
    """
    Mean and sample std of every metric over the given episode results.

    Raises:
        EmptyInput: `results` is empty
    """
    results = list(results)
    if not results:
        raise EmptyInput(f"No results to aggregate for {policy or 'policy'} on {scenario or 'scenario'}")
    frame = pd.DataFrame(
        [{metric: float(getattr(result, metric)) for metric in METRICS} for result in results]
    )
    mean = {metric: float(frame[metric].mean()) for metric in METRICS}
    std = None
    if len(results) >= 2:
        std = {metric: float(frame[metric].std(ddof=1)) for metric in METRICS}
    return RunSummary(
        policy=policy,
        scenario=scenario,
        results=results,
        seeds=list(seeds) if seeds is not None else list(range(len(results))),
        mean=mean,
        std=std,
    )


def read_training_log(path, column: str = "scheduled_length") -> pd.DataFrame:
    """
    Load a training log CSV with numeric `epoch` and `column`.

    Raises:
        LogParseError: the file is missing, empty, or malformed
    """
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as e:
        raise LogParseError(f"Training log {path} does not exist") from e
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise LogParseError(f"Training log {path} is not a CSV table: {e}") from e

    missing = [name for name in ("epoch", column) if name not in frame.columns]
    if missing:
        raise LogParseError(f"Training log {path} lacks columns {', '.join(missing)}", line=1)
    if frame.empty:
        raise LogParseError(f"Training log {path} has no rows", line=2)

    for name in ("epoch", column):
        values = pd.to_numeric(frame[name], errors="coerce")
        bad = values.isna()
        if bad.any():
            # header is line 1
            raise LogParseError(
                f"non-numeric {name} {frame[name][bad].iloc[0]!r} in {path}",
                line=int(bad.idxmax()) + 2,
            )
        frame[name] = values
    return frame


def smooth(values, window: int = DEFAULT_WINDOW) -> pd.Series:
    """Trailing moving average; leading partial windows average the points available."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    return pd.Series(values, dtype=float).rolling(window, min_periods=1).mean()


def learning_curve(paths, window: int = DEFAULT_WINDOW, column: str = "scheduled_length") -> pd.DataFrame:
    """
    Smooth each training log, then combine the logs (one per seed) by epoch.

    Returns a frame with columns epoch, mean, std, seeds; std is empty where
    fewer than two logs cover the epoch.
    """
    paths = list(paths)
    if not paths:
        raise EmptyInput("No training logs given")

    curves = []
    for seed_index, path in enumerate(paths):
        log = read_training_log(path, column)
        curves.append(
            pd.DataFrame(
                {
                    "epoch": log["epoch"].astype(int).to_numpy(),
                    "value": smooth(log[column].to_numpy(), window).to_numpy(),
                    "log": seed_index,
                }
            )
        )
    grouped = pd.concat(curves, ignore_index=True).groupby("epoch")["value"]
    curve = pd.DataFrame(
        {
            "mean": grouped.mean(),
            "std": grouped.std(ddof=1),
            "seeds": grouped.count(),
        }
    ).reset_index()
    logger.debug(f"Learning curve over {len(paths)} logs, {len(curve)} epochs, window {window}")
    return curve


def write_learning_curve(paths, out_path, window: int = DEFAULT_WINDOW) -> Path:
    out_path = Path(out_path)
    learning_curve(paths, window).to_csv(out_path, index=False, float_format="%.10g")
    return out_path


def result_row(result, seed: int, scenario: str, warm_start: float, policy: str) -> dict:
    return {
        "seed": seed,
        "scenario": scenario,
        "warm_start": warm_start,
        "policy": policy,
        "length": result.scheduled_length,
        "income": result.income,
        "cpu_allo": result.avg_cpu_utilization,
    }


def results_frame(rows) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=list(RESULT_COLUMNS))


def summary_table(results: pd.DataFrame) -> pd.DataFrame:
    """
    Long table of (scenario, warm_start, policy, metric, mean, std, n).

    Rows are sorted by scenario, warm start, metric and policy so the output
    does not depend on the order results were produced in.
    """
    if results.empty:
        raise EmptyInput("No results to tabulate")
    long = results.melt(
        id_vars=["scenario", "warm_start", "policy"],
        value_vars=list(TABLE_COLUMNS),
        var_name="metric",
    )
    long["metric"] = long["metric"].map(TABLE_COLUMNS)
    table = (
        long.groupby(["scenario", "warm_start", "metric", "policy"])["value"]
        .agg(mean="mean", std=lambda values: values.std(ddof=1), n="count")
        .reset_index()
    )
    return table


def format_cell(mean: float, std: float | None) -> str:
    if std is None or pd.isna(std):
        return f"{mean:.4g}"
    return f"{mean:.4g} (±{std:.2g})"


def comparison_table(summary: pd.DataFrame) -> pd.DataFrame:
    """Wide table: one row per (scenario, metric, policy), one column per warm-start ratio."""
    cells = summary.assign(
        cell=[format_cell(m, s) for m, s in zip(summary["mean"], summary["std"])]
    )
    wide = cells.pivot(index=["scenario", "metric", "policy"], columns="warm_start", values="cell")
    wide.columns = [f"ws={ratio:g}" for ratio in wide.columns]
    return wide.reset_index()
