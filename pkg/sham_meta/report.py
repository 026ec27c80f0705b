""" CSV / JSON tables and SVG figures for the analysis commands. """

import csv
import json
from pathlib import Path
import warnings

import numpy as np

from sham_meta import classical
from sham_meta.classical import EstimateSet
from sham_meta.util import ValidationError

SVG_HASH_SALT = "sham_meta"
# p<0.01, 0.01<=p<0.05, p>=0.05
BAND_COLORS = ["tab:red", "tab:orange", "tab:gray"]
METRIC_TITLES = {
    "prop_significant": "Proportion significant",
    "type_s_rate": "Type S error rate",
    "rmse": "RMSE",
    "rank_corr": "Rank correlation",
}


def _format(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_rows(rows, path, header=None):
    """ Write a list of dicts as CSV, floats at full precision.

    :param rows: table rows
    :type rows: list(dict)
    :param path: output file
    :type path: str or Path
    :param header: column order, defaults to the keys of the first row
    :type header: list
    """

    path = Path(path)
    if path.suffix != ".csv":
        warnings.warn(f"File extension mismatch: {path.name} should be of type .csv")
    header = header or (list(rows[0].keys()) if rows else [])
    with path.open('w', encoding='utf-8', newline='') as f:
        f.write(','.join(header) + '\n')
        for row in rows:
            f.write(','.join(_format(row.get(k)) for k in header) + '\n')


def write_json(obj, path):
    path = Path(path)
    if path.suffix != ".json":
        warnings.warn(f"File extension mismatch: {path.name} should be of type .json")
    with path.open('w', encoding='utf-8') as f:
        json.dump(obj, f, indent=2)
        f.write('\n')


def write_estimates(e, path):
    """ Per-study estimates as id, estimate, se. """
    write_rows(e.rows(), path, ["id", "estimate", "se"])


def read_estimates(path, method):
    """ Read an estimate CSV written by :func:`write_estimates`.

    :raises ValidationError: on missing columns or values
    :rtype: EstimateSet
    """

    with open(path, 'r', encoding='utf-8', newline='') as f:
        rows = list(csv.DictReader(f))
    try:
        return EstimateSet(method, [r["id"] for r in rows],
                           [float(r["estimate"]) for r in rows], [float(r["se"]) for r in rows])
    except (KeyError, ValueError) as e:
        raise ValidationError(f"{path}: not an estimate table ({e})")


def write_significance(table, path):
    write_rows(table.rows(), path, ["id", "stat", "p", "band"])


def write_adjustment(result, path):
    write_rows(result.rows(), path, ["id", "lambda", "b_hat", "s_post", "theta_hat", "se"])


def write_intervals(rows, path):
    write_rows(rows, path, ["id", "estimate", "low", "high"])


def _pyplot():
    # lazy import, plotting is optional for every command
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = SVG_HASH_SALT
    matplotlib.rcParams["svg.fonttype"] = "path"
    return plt


def _save(plt, fig, path):
    path = Path(path)
    if path.suffix != ".svg":
        warnings.warn(f"File extension mismatch: {path.name} should be of type .svg")
    # no creation date, so repeated runs give identical files
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_estimates(estimate_sets, path, tables=None):
    """ One panel per estimate set: estimate +- 1.96 se per study, zero line dashed.

    Bars are coloured by significance band and labelled with their p-value.

    :param estimate_sets: e.g. exposed-only and difference estimates
    :type estimate_sets: list(EstimateSet)
    :param path: output SVG
    :type path: str or Path
    :param tables: significance per estimate set (default: normal reference)
    :type tables: list(SignificanceTable)
    """

    if tables is None:
        tables = [classical.classify_significance(e) for e in estimate_sets]
    plt = _pyplot()
    fig, axes = plt.subplots(1, len(estimate_sets), figsize=(5 * len(estimate_sets), 4),
                             sharey=True, squeeze=False)
    for ax, e, table in zip(axes[0], estimate_sets, tables):
        pos = np.arange(len(e))
        for band, color in zip(classical.BANDS, BAND_COLORS):
            idx = [j for j, b in enumerate(table.band) if b == band]
            if idx:
                ax.errorbar(pos[idx], e.estimate[idx], yerr=1.96 * e.se[idx], fmt='o',
                            capsize=3, color=color, label=band)
        for j in pos:
            ax.annotate(f"p={table.p[j]:.2g}", (j, e.estimate[j] + 1.96 * e.se[j]),
                        textcoords='offset points', xytext=(0, 4), ha='center', fontsize=7)
        ax.axhline(0, color='k', linestyle='--', linewidth=0.8)
        ax.set_xticks(pos)
        ax.set_xticklabels(e.ids, rotation=30, ha='right')
        ax.set_title(e.method)
        ax.set(ylabel='Estimate')
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(plt, fig, path)


def plot_sham_scatter(d, path):
    """ Sham estimates against exposed estimates with 1 se bars. """
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.errorbar(d.column("y0"), d.column("y1"), xerr=d.column("s0"), yerr=d.column("s1"),
                fmt='o', capsize=2)
    ax.axvline(0, color='k', linestyle='--', linewidth=0.8)
    ax.axhline(0, color='k', linestyle='--', linewidth=0.8)
    ax.set(xlabel='Sham estimate', ylabel='Exposed estimate')
    fig.tight_layout()
    _save(plt, fig, path)


def plot_shrinkage(raw, summary, path):
    """ Raw per-study estimates next to posterior mean +- sd of theta.

    :param raw: unpooled estimates (e.g. difference)
    :type raw: EstimateSet
    :param summary: fit summary
    :type summary: FitSummary
    :param path: output SVG
    :type path: str or Path
    """

    plt = _pyplot()
    pos = np.arange(len(raw))
    post = summary.estimate_set()
    fig, ax = plt.subplots(figsize=(max(5, 0.4 * len(raw) + 2), 4))
    ax.errorbar(pos - 0.15, raw.estimate, yerr=raw.se, fmt='o', capsize=2, label=raw.method)
    ax.errorbar(pos + 0.15, post.estimate, yerr=post.se, fmt='s', capsize=2,
                label='posterior mean +- sd')
    ax.axhline(0, color='k', linestyle='--', linewidth=0.8)
    ax.set_xticks(pos)
    ax.set_xticklabels(raw.ids, rotation=30, ha='right')
    ax.set(ylabel='Effect')
    ax.set_title(f'Model: {summary.variant}')
    ax.legend()
    fig.tight_layout()
    _save(plt, fig, path)


def plot_metrics(grid, path):
    """ Four panels of grid metrics against sigma_b, one line per estimator.

    :param grid: simulation results
    :type grid: MetricsGrid
    :param path: output SVG
    :type path: str or Path
    """

    plt = _pyplot()
    fig, axes = plt.subplots(2, 2, figsize=(9, 7))
    for ax, (metric, title) in zip(axes.flat, METRIC_TITLES.items()):
        for estimator in grid.estimators:
            values = [grid.value(s, estimator, metric) for s in grid.sigma_b_grid]
            ax.plot(grid.sigma_b_grid, values, marker='o', label=estimator)
        ax.set_title(title)
        ax.set(xlabel='sigma_b')
    axes.flat[0].legend()
    if grid.size is not None:
        fig.suptitle(f'M = {grid.size}', fontweight='bold')
    fig.tight_layout()
    _save(plt, fig, path)
