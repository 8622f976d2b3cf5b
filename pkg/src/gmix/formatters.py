"""Output formatters."""

from pathlib import Path
from typing import Iterable, List, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from gmix import __version__  # noqa: E402
from gmix.dynamics import order_parameters  # noqa: E402
from gmix.taxonomies import CellStatus, Recipe  # noqa: E402
from gmix.tuples import (  # noqa: E402
    CellResult,
    Context,
    PlotSpec,
    TrajectoryPoint,
)
from gmix.utils import format_console  # noqa: E402

RESULTS_FILE = "results.csv"
SUMMARY_FILE = "summary.csv"
PLOT_FILE = "plot.svg"
LOCK_FILE = "config.lock.json"
HEADER = f"# gmix {__version__}"
META_COLUMNS = ("replicate", "seed", "status", "error")
GROUP_COLUMNS = ("source", "model", "t")

PLOT_SPECS = {
    Recipe.FIG1: PlotSpec(
        x="snr",
        y=("class_error_2lnn", "class_error_rf", "oracle"),
        xlog=True,
        xlabel="snr",
        ylabel="classification error",
    ),
    Recipe.FIG2: PlotSpec(
        x="t",
        y=("pmse", "class_error"),
        series=("source",),
        xlog=True,
        xlabel="t",
    ),
    Recipe.FIG3: PlotSpec(
        x="weight_decay",
        y=("pmse",),
        xlog=True,
        band=True,
        xlabel="weight decay",
        ylabel="pmse",
    ),
    Recipe.FIG4: PlotSpec(
        x="scaling_var",
        y=("class_error_analytic",),
        series=("dim", "gamma"),
        xlabel="σ D^{1/2} / P^{1/4}",
        ylabel="classification error",
    ),
    Recipe.FIG5: PlotSpec(
        x="regime",
        y=("class_error",),
        series=("model",),
        band=True,
        ylabel="classification error",
    ),
    Recipe.FIG7: PlotSpec(
        x="regime",
        y=("class_error",),
        series=("model",),
        band=True,
        ylabel="classification error",
    ),
    Recipe.OVERPARAM: PlotSpec(
        x="K",
        y=("converged",),
        xlabel="K",
        ylabel="fraction converged",
    ),
    Recipe.ODEVSIM: PlotSpec(
        x="t",
        y=("pmse", "class_error"),
        series=("source",),
        xlog=True,
        xlabel="t",
    ),
}


class SchemaError(Exception):
    pass


def required_columns(recipe: str) -> List[str]:
    plot = PLOT_SPECS[recipe]
    return [plot.x, *plot.y, *plot.series]


def trajectory_frame(
    points: Iterable[TrajectoryPoint], wide: bool = False
) -> pd.DataFrame:
    """One row per recorded time; `wide` adds M_a_k, Q_k_l and v_k."""
    rows = []

    for point in points:
        row = {
            "t": point.t,
            "pmse": point.pmse,
            "class_error": point.class_error,
        }

        if wide:
            if point.state is None:
                raise SchemaError(
                    f"Wide columns need the state recorded at t={point.t:g}."
                )

            M, Q = order_parameters(point.state)
            row.update(
                {
                    f"M_{a}_{k}": M[a, k]
                    for a in range(M.shape[0])
                    for k in range(M.shape[1])
                }
            )
            row.update(
                {
                    f"Q_{k}_{l}": Q[k, l]
                    for k in range(Q.shape[0])
                    for l in range(Q.shape[1])
                }
            )
            row.update({f"v_{k}": v for k, v in enumerate(point.state.v)})

        rows.append(row)

    return pd.DataFrame(rows)


def results_frame(
    results: Iterable[CellResult], axes: Iterable[str]
) -> pd.DataFrame:
    """All rows of all cells, in cell order, with a fixed column order."""
    rows = []

    for result in results:
        base = {
            **result.coords,
            "seed": result.seed,
            "status": result.status,
            "error": result.error or "",
        }

        if result.rows:
            rows.extend({**base, **row} for row in result.rows)
        else:
            rows.append(base)

    frame = pd.DataFrame(rows)

    if frame.empty:
        return frame

    leading = [c for c in [*sorted(axes), *META_COLUMNS] if c in frame]
    trailing = [c for c in frame.columns if c not in leading]
    return frame[leading + trailing]


def aggregate(frame: pd.DataFrame, axes: Iterable[str]) -> pd.DataFrame:
    """Mean and std across replicates, with failure counts.

    When a `converged` column is present the fraction of converged
    replicates and their mean classification error are added.
    """
    if frame.empty:
        return pd.DataFrame()

    axes = sorted(a for a in axes if a != "replicate")
    frame = frame.assign(_all=0)
    cell_keys = axes or ["_all"]
    keys = cell_keys + [c for c in GROUP_COLUMNS if c in frame]
    failed = (
        frame[frame["status"] == CellStatus.FAILED]
        .groupby(cell_keys, sort=True)
        .size()
        .rename("n_failed")
        .reset_index()
    )
    ok = frame[frame["status"] == CellStatus.OK]

    if ok.empty:
        return failed.drop(columns="_all", errors="ignore")

    metrics = [
        c
        for c in ok.select_dtypes("number").columns
        if c not in keys and c not in META_COLUMNS and c != "_all"
    ]
    grouped = ok.groupby(keys, sort=True, dropna=False)
    summary = grouped[metrics].agg(["mean", "std"])
    summary.columns = [f"{c}_{stat}" for c, stat in summary.columns]
    summary["n"] = grouped.size()

    if "converged" in ok:
        # failed cells leave NaN behind, so the column may be object dtype
        hit = ok["converged"].astype(bool)
        runs = ok.assign(
            _converged=hit.astype(float),
            _hit=ok["class_error"].where(hit),
        ).groupby(keys, sort=True, dropna=False)
        summary["converged_fraction"] = runs["_converged"].mean()
        summary["converged_class_error"] = runs["_hit"].mean()

    summary = summary.reset_index().merge(failed, on=cell_keys, how="outer")
    summary["n_failed"] = summary["n_failed"].fillna(0).astype(int)
    return summary.drop(columns="_all", errors="ignore")


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    """UTF-8, `\\n` line endings, a version header line."""
    path = Path(path)

    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(HEADER + "\n")
        frame.to_csv(f, index=False, lineterminator="\n")

    return path


def read_csv(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, comment="#")
    except pd.errors.EmptyDataError:
        return pd.DataFrame()


def emit_plot(
    csv_path: Path, recipe: str, out: Optional[Path] = None
) -> Path:
    """Static SVG of a results CSV, byte-stable for identical input."""
    if recipe not in PLOT_SPECS:
        raise SchemaError(f'Unknown recipe "{recipe}".')

    plot = PLOT_SPECS[recipe]
    frame = read_csv(csv_path)
    out = Path(out) if out else Path(csv_path).with_name(PLOT_FILE)

    plt.rcParams["svg.hashsalt"] = "gmix"
    fig, ax = plt.subplots(figsize=(6, 4))

    if frame.empty:
        format_console(__name__).warning(
            f'"{csv_path}" holds no rows, writing empty axes.'
        )
        ax.text(0.5, 0.5, "no data", ha="center", transform=ax.transAxes)
    else:
        missing = [c for c in required_columns(recipe) if c not in frame]

        if missing:
            plt.close(fig)
            raise SchemaError(
                f'"{csv_path}" lacks columns {missing} for recipe "{recipe}".'
            )

        if "status" in frame:
            frame = frame[frame["status"] == CellStatus.OK]

        _draw(ax, frame, plot)

    if plot.xlog:
        ax.set_xscale("log")

    if plot.ylog:
        ax.set_yscale("log")

    ax.set_xlabel(plot.xlabel or plot.x)
    ax.set_ylabel(plot.ylabel or ", ".join(plot.y))
    fig.tight_layout()
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    format_console(__name__).info(f'Wrote plot to "{out}".')
    return out


def _draw(ax, frame: pd.DataFrame, plot: PlotSpec):
    series = list(plot.series)
    categories = None

    if not pd.api.types.is_numeric_dtype(frame[plot.x]):
        categories = list(dict.fromkeys(frame[plot.x]))
        ax.set_xticks(range(len(categories)), categories)

    groups = frame.groupby(series, sort=True) if series else [((), frame)]

    for key, group in groups:
        key = key if isinstance(key, tuple) else (key,)
        label = ", ".join(f"{s}={k}" for s, k in zip(series, key))
        stats = group.groupby(plot.x, sort=True)[list(plot.y)].agg(
            ["mean", "std"]
        )
        x = stats.index.to_numpy()

        if categories is not None:
            x = np.array([categories.index(c) for c in x], dtype=float)

        for y in plot.y:
            mean = stats[(y, "mean")].to_numpy()
            prefix = y if len(plot.y) > 1 else ""
            name = " ".join(filter(None, [prefix, label]))
            ax.plot(x, mean, marker="o", markersize=3, label=name or y)

            if plot.band:
                std = stats[(y, "std")].fillna(0.0).to_numpy()
                ax.fill_between(x, mean - std, mean + std, alpha=0.2)

    if series or len(plot.y) > 1:
        ax.legend(fontsize="small")


def console(results: List[CellResult], context: Context):
    for result in results:
        coords = ", ".join(
            f"{k}={v}" for k, v in sorted(result.coords.items())
        )

        if result.status == CellStatus.FAILED:
            format_console(__name__).error(
                f"Cell {result.index} ({coords}) failed: {result.error}"
            )
            continue

        format_console(__name__).info(
            f"Cell {result.index} ({coords}) finished with"
            f" {len(result.rows)} rows in {result.wall_time:.1f}s."
        )

