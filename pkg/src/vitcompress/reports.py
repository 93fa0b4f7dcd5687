"""Report emission: architecture JSON, kept-dimension heatmaps (CSV + SVG),
cost tables, and search-history CSV.

The head heatmap has one row per layer and one column per head, each cell the
kept-dim count of that head; the MLP export is a layers x 1 column. SVG cells
are filled with a grayscale that darkens monotonically with the cell value,
so a parsed SVG can be checked against its CSV.
"""

import json
import os

from .errors import ConfigError


def _svg_heatmap(values, vmax, cell=42):
    rows = len(values)
    cols = len(values[0]) if rows else 0
    width, height = cols * cell, rows * cell
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}">']
    for r in range(rows):
        for c in range(cols):
            v = values[r][c]
            frac = 0.0 if vmax <= 0 else v / vmax
            gray = int(round(255 - 205 * frac))
            text = "#000000" if frac < 0.55 else "#ffffff"
            x, y = c * cell, r * cell
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="rgb({gray},{gray},{gray})" stroke="#888888"/>')
            parts.append(
                f'<text x="{x + cell // 2}" y="{y + cell // 2 + 4}" '
                f'text-anchor="middle" font-size="12" fill="{text}">{v}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def _write(path, content):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(content)
    os.replace(tmp, path)
    return path


def export_reports(arch, report, history, out_dir, config):
    """Writes arch JSON, heatmap CSV+SVG pairs, cost report, optional history
    CSV; returns the written paths."""
    if not os.path.isdir(out_dir):
        raise ConfigError(f"output directory does not exist: {out_dir}")
    arch.validate(config)
    paths = []

    paths.append(_write(os.path.join(out_dir, "arch.json"),
                        json.dumps(arch.to_json_dict(), indent=2) + "\n"))

    head_counts = [[len(dims) for dims in layer] for layer in arch.head_dims]
    lines = ["layer," + ",".join(f"h{h}" for h in range(config.heads))]
    for l, row in enumerate(head_counts):
        lines.append(f"{l}," + ",".join(str(v) for v in row))
    paths.append(_write(os.path.join(out_dir, "head_dims.csv"),
                        "\n".join(lines) + "\n"))
    paths.append(_write(os.path.join(out_dir, "head_dims.svg"),
                        _svg_heatmap(head_counts, config.head_dim) + "\n"))

    mlp_counts = [[len(dims)] for dims in arch.mlp_dims]
    lines = ["layer,mlp_dims"]
    for l, row in enumerate(mlp_counts):
        lines.append(f"{l},{row[0]}")
    paths.append(_write(os.path.join(out_dir, "mlp_dims.csv"),
                        "\n".join(lines) + "\n"))
    paths.append(_write(os.path.join(out_dir, "mlp_dims.svg"),
                        _svg_heatmap(mlp_counts, config.mlp_dim) + "\n"))

    paths.append(_write(os.path.join(out_dir, "cost.json"), report.to_json() + "\n"))
    paths.append(_write(os.path.join(out_dir, "cost.txt"), report.table() + "\n"))

    if history is not None:
        path = os.path.join(out_dir, "search_history.csv")
        history.to_csv(path)
        paths.append(path)
    return paths
