"""Figure data and report writers for evaluation runs.

Everything is written as CSV; ``render_svgs`` additionally draws the
histogram, grid and scatter with matplotlib. SVG output is byte-stable
(fixed hash salt, no date).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ShapeError
from .simulator import FEATURES

logger = logging.getLogger(__name__)

SVG_SALT = 'galaxy-allocation'


@dataclass
class AllocationGrid:
    """Counts, allocation-weighted counts and their ratio over ``(d, log m)`` bins.

    ``ratio`` is NaN where a bin holds no galaxies.
    """

    d_edges: np.ndarray
    m_edges: np.ndarray
    counts: np.ndarray
    weighted: np.ndarray
    ratio: np.ndarray

    @property
    def empty(self):
        return self.counts == 0


def allocation_histogram(allocations, n_bins, r_max=60.0):
    """Fixed-width histogram over ``[0, r_max]``; returns ``(edges, counts)``."""
    values = np.clip(np.asarray(allocations, dtype=np.float64).ravel(), 0.0, r_max)
    counts, edges = np.histogram(values, bins=n_bins, range=(0.0, r_max))
    return edges, counts


def extreme_fraction(allocations, r_max=60.0):
    """Share of galaxies in the lowest or highest tenth of ``[0, r_max]``."""
    values = np.asarray(allocations, dtype=np.float64).ravel()
    extreme = (values < 0.1 * r_max) | (values >= 0.9 * r_max)
    return float(extreme.mean())


def mass_distance_grid(d, log_m, allocations, bins):
    if bins < 2:
        raise ShapeError('the grid needs at least 2 bins per axis')
    d = np.clip(np.asarray(d, dtype=np.float64).ravel(), 0.0, 1.0)
    log_m = np.clip(np.asarray(log_m, dtype=np.float64).ravel(), 0.0, 1.0)
    weights = np.asarray(allocations, dtype=np.float64).ravel()
    if not len(d) == len(log_m) == len(weights):
        raise ShapeError(f'd, log_m and allocations differ in length: {len(d)}, {len(log_m)}, {len(weights)}')
    span = [[0.0, 1.0], [0.0, 1.0]]
    counts, d_edges, m_edges = np.histogram2d(d, log_m, bins=bins, range=span)
    weighted, _, _ = np.histogram2d(d, log_m, bins=bins, range=span, weights=weights)
    with np.errstate(invalid='ignore', divide='ignore'):
        ratio = np.where(counts > 0, weighted / counts, np.nan)
    return AllocationGrid(d_edges, m_edges, counts.astype(np.int64), weighted, ratio)


def quadrant_means(grid):
    """Mean ratio of the (near, massive) and (far, light) quadrants."""
    half = grid.ratio.shape[0] // 2
    near_massive = grid.ratio[:half, half:]
    far_light = grid.ratio[half:, :half]
    with np.errstate(invalid='ignore'):
        return (float(np.nanmean(near_massive)) if np.any(~np.isnan(near_massive)) else np.nan,
                float(np.nanmean(far_light)) if np.any(~np.isnan(far_light)) else np.nan)


def _writer(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle = open(path, 'w', newline='')
    return handle, csv.writer(handle)


def write_histogram_csv(path, histograms):
    """``histograms`` maps method -> ``(edges, counts)``."""
    handle, writer = _writer(path)
    with handle:
        writer.writerow(['method', 'bin', 'low', 'high', 'count'])
        for method, (edges, counts) in histograms.items():
            for i, count in enumerate(counts):
                writer.writerow([method, i, repr(float(edges[i])), repr(float(edges[i + 1])),
                                 int(count)])
    return Path(path)


def write_grid_csv(path, grids):
    handle, writer = _writer(path)
    with handle:
        writer.writerow(['method', 'd_bin', 'm_bin', 'd_low', 'd_high', 'm_low', 'm_high',
                         'count', 'weighted', 'ratio', 'empty'])
        for method, grid in grids.items():
            rows, cols = grid.counts.shape
            for i in range(rows):
                for j in range(cols):
                    empty = bool(grid.empty[i, j])
                    writer.writerow([
                        method, i, j,
                        repr(float(grid.d_edges[i])), repr(float(grid.d_edges[i + 1])),
                        repr(float(grid.m_edges[j])), repr(float(grid.m_edges[j + 1])),
                        int(grid.counts[i, j]), repr(float(grid.weighted[i, j])),
                        '' if empty else repr(float(grid.ratio[i, j])), int(empty),
                    ])
    return Path(path)


def write_field_records(path, report):
    handle, writer = _writer(path)
    with handle:
        writer.writerow(['method', 'field', 'phi', 'phi_hat', 'residual', 'sum_r'])
        for result in report.results.values():
            for record in result.records:
                writer.writerow([result.method, record.index, repr(record.phi),
                                 repr(record.phi_hat), repr(record.residual), repr(record.sum_r)])
    return Path(path)


def write_scatter_csv(path, report):
    handle, writer = _writer(path)
    with handle:
        writer.writerow(['method', 'phi', 'phi_hat'])
        for result in report.results.values():
            for record in result.records:
                writer.writerow([result.method, repr(record.phi), repr(record.phi_hat)])
    return Path(path)


def write_field_overview(path, report, index):
    """Features of one evaluation field next to every method's allocation."""
    example = report.fields[index]
    methods = list(report.results)
    handle, writer = _writer(path)
    with handle:
        writer.writerow(['galaxy', *FEATURES, *methods])
        for galaxy, row in enumerate(example.field.features.tolist()):
            grants = [repr(float(report.results[m].allocations[index][galaxy])) for m in methods]
            writer.writerow([galaxy, *(repr(value) for value in row), *grants])
    return Path(path)


def write_report_csv(path, report):
    handle, writer = _writer(path)
    with handle:
        writer.writerow(['method', 'precision', 'std', 'bias', 'n_fields'])
        for result in report.ranking():
            writer.writerow([result.method, repr(result.precision), repr(result.std),
                             repr(result.bias), result.n_fields])
    return Path(path)


def format_report_table(report):
    """Aligned text table in ranking order."""
    header = ('rank', 'method', 'precision', 'std', 'bias', 'n_fields')
    rows = [header]
    for rank, result in enumerate(report.ranking(), start=1):
        rows.append((str(rank), result.method, f'{result.precision:.2f}', f'{result.std:.4f}',
                     f'{result.bias:+.4f}', str(result.n_fields)))
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ['  '.join(cell.rjust(width) if i != 1 else cell.ljust(width)
                       for i, (cell, width) in enumerate(zip(row, widths)))
             for row in rows]
    return '\n'.join(lines) + '\n'


def render_svgs(out_dir, histograms, grids, report):
    """Draw the histogram, ratio grid and scatter as SVG files."""
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    with plt.rc_context({'svg.hashsalt': SVG_SALT}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for method, (edges, counts) in histograms.items():
            ax.stairs(counts, edges, label=method)
        ax.set_xlabel('allocated time [min]')
        ax.set_ylabel('galaxies')
        ax.legend()
        paths.append(_save(fig, out_dir / 'allocation_histogram.svg', plt))

        fig, axes = plt.subplots(1, len(grids), figsize=(4 * len(grids), 4), squeeze=False)
        for ax, (method, grid) in zip(axes[0], grids.items()):
            extent = (grid.m_edges[0], grid.m_edges[-1], grid.d_edges[-1], grid.d_edges[0])
            image = ax.imshow(grid.ratio, extent=extent, aspect='auto')
            ax.set_title(method)
            ax.set_xlabel('log m')
            ax.set_ylabel('d')
            fig.colorbar(image, ax=ax)
        paths.append(_save(fig, out_dir / 'mass_distance_grid.svg', plt))

        fig, ax = plt.subplots(figsize=(5, 5))
        for result in report.results.values():
            ax.scatter([r.phi for r in result.records], [r.phi_hat for r in result.records],
                       s=8, label=result.method)
        ax.set_xlabel('phi')
        ax.set_ylabel('phi_hat')
        ax.legend()
        paths.append(_save(fig, out_dir / 'phi_scatter.svg', plt))
    return paths


def _save(fig, path, plt):
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    logger.info('Wrote %s', path)
    return path


def export_report(report, cfg, out_dir, svg=False):
    """Write every report and figure file under ``out_dir``.

    Histograms and grids pool each method's allocations over all fields.
    Returns the written paths by name.
    """
    out_dir = Path(out_dir)
    r_max = cfg.noise.r_cap
    features = np.vstack([example.field.features for example in report.fields])
    histograms, grids = {}, {}
    for method, result in report.results.items():
        pooled = np.concatenate(result.allocations)
        histograms[method] = allocation_histogram(pooled, cfg.evaluation.histogram_bins, r_max)
        grids[method] = mass_distance_grid(features[:, 2], features[:, 3], pooled,
                                           cfg.evaluation.grid_bins)
        near, far = quadrant_means(grids[method])
        logger.info('%s: extreme fraction %.3f, near/massive %.3g vs far/light %.3g',
                    method, extreme_fraction(pooled, r_max), near, far)

    paths = {
        'report': write_report_csv(out_dir / 'report.csv', report),
        'histogram': write_histogram_csv(out_dir / 'allocation_histogram.csv', histograms),
        'grid': write_grid_csv(out_dir / 'mass_distance_grid.csv', grids),
        'scatter': write_scatter_csv(out_dir / 'phi_scatter.csv', report),
        'fields': write_field_records(out_dir / 'field_records.csv', report),
        'overview': write_field_overview(out_dir / 'field_overview.csv', report,
                                         cfg.evaluation.overview_field),
    }
    table = out_dir / 'report.txt'
    table.write_text(format_report_table(report))
    paths['table'] = table
    if svg:
        for svg_path in render_svgs(out_dir, histograms, grids, report):
            paths[svg_path.stem + '_svg'] = svg_path
    return paths
