"""Deterministic standalone SVG plots: coverage growth, critical difference, similarity heatmap."""

import math
from html import escape
from typing import List, Mapping, Optional, Sequence, Tuple

from app.stats import CriticalDifference, cd_groups

WIDTH = 800
HEIGHT = 480
FONT = "DejaVu Sans, Arial, Helvetica, sans-serif"
PALETTE = (
    "#2563eb", "#ef4444", "#10b981", "#f59e0b", "#8b5cf6", "#ec4899", "#14b8a6", "#64748b",
    "#84cc16", "#f97316", "#06b6d4", "#a855f7", "#22c55e", "#eab308", "#0ea5e9", "#d946ef",
)  # fmt: skip


def _num(value: float) -> str:
    return f"{value:.2f}"


def _text(x: float, y: float, content: str, anchor: str = "start", size: int = 12, extra: str = "") -> str:
    return (
        f'<text x="{_num(x)}" y="{_num(y)}" text-anchor="{anchor}" font-size="{size}"{extra}>'
        f"{escape(content)}</text>"
    )


def _document(title: str, body: List[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="{FONT}">'
    )
    return "\n".join(
        [
            '<?xml version="1.0" encoding="UTF-8"?>',
            head,
            f"<title>{escape(title)}</title>",
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
            _text(WIDTH / 2, 24, title, anchor="middle", size=16),
            *body,
            "</svg>",
            "",
        ]
    )


def placeholder(title: str, message: str = "no data") -> str:
    return _document(title, [_text(WIDTH / 2, HEIGHT / 2, message, anchor="middle", size=14, extra=' class="empty"')])


def _nice_ceiling(value: float) -> float:
    if value <= 0:
        return 1.0
    magnitude = 10 ** math.floor(math.log10(value))
    for step in (1, 2, 2.5, 5, 10):
        if value <= step * magnitude:
            return step * magnitude
    return 10 * magnitude


def _final(values: Sequence[Tuple[int, float]]) -> float:
    return values[-1][1] if values else 0.0


def growth_legend_order(series: Mapping[str, Sequence[Tuple[int, float]]]) -> List[str]:
    return sorted(series, key=lambda f: (-_final(series[f]), f))


def plot_coverage_growth(benchmark_id: str, series: Mapping[str, Sequence[Tuple[int, float]]]) -> str:
    """One median line per fuzzer; legend ordered by final median, highest first."""
    title = f"Coverage growth: {benchmark_id}"
    points = [p for values in series.values() for p in values]
    if not points:
        return placeholder(title)

    left, right, top, bottom = 70.0, 190.0, 50.0, 60.0
    plot_w, plot_h = WIDTH - left - right, HEIGHT - top - bottom
    x_max = _nice_ceiling(max(t for t, _ in points))
    y_max = _nice_ceiling(max(v for _, v in points))

    def sx(t: float) -> float:
        return left + plot_w * t / x_max

    def sy(v: float) -> float:
        return top + plot_h * (1 - v / y_max)

    body = [
        f'<line x1="{_num(left)}" y1="{_num(top + plot_h)}" x2="{_num(left + plot_w)}" y2="{_num(top + plot_h)}" '
        'stroke="#000000"/>',
        f'<line x1="{_num(left)}" y1="{_num(top)}" x2="{_num(left)}" y2="{_num(top + plot_h)}" stroke="#000000"/>',
    ]
    for i in range(6):
        t = x_max * i / 5
        v = y_max * i / 5
        body.append(_text(sx(t), top + plot_h + 18, f"{t:g}", anchor="middle", size=11))
        body.append(_text(left - 8, sy(v) + 4, f"{v:g}", anchor="end", size=11))
    body.append(_text(left + plot_w / 2, HEIGHT - 16, "seconds", anchor="middle"))
    body.append(
        _text(
            20,
            top + plot_h / 2,
            "lines covered",
            anchor="middle",
            extra=f' transform="rotate(-90 20 {_num(top + plot_h / 2)})"',
        )
    )

    colours = {fuzzer: PALETTE[i % len(PALETTE)] for i, fuzzer in enumerate(sorted(series))}
    for fuzzer in sorted(series):
        values = series[fuzzer]
        if not values:
            continue
        coords = " ".join(f"{_num(sx(t))},{_num(sy(v))}" for t, v in values)
        body.append(
            f'<polyline class="growth" data-fuzzer="{escape(fuzzer)}" points="{coords}" fill="none" '
            f'stroke="{colours[fuzzer]}" stroke-width="2"/>'
        )

    for i, fuzzer in enumerate(growth_legend_order(series)):
        y = top + 10 + 20 * i
        x = WIDTH - right + 20
        body.append(f'<rect x="{_num(x)}" y="{_num(y - 9)}" width="12" height="12" fill="{colours[fuzzer]}"/>')
        body.append(_text(x + 18, y + 2, f"{fuzzer} ({_final(series[fuzzer]):g})", extra=' class="legend"'))
    return _document(title, body)


def plot_critical_difference(cd: CriticalDifference) -> str:
    """Mean ranks on an axis (best on the left) with bars joining groups closer than the critical difference."""
    title = f"Critical difference ({cd.metric}, alpha={cd.alpha:g})"
    left, right, axis_y = 120.0, 120.0, 140.0
    axis_w = WIDTH - left - right
    k = max(cd.k, 2)

    def sx(rank: float) -> float:
        return left + axis_w * (rank - 1) / (k - 1)

    body = [
        f'<line x1="{_num(left)}" y1="{_num(axis_y)}" x2="{_num(left + axis_w)}" y2="{_num(axis_y)}" '
        'stroke="#000000"/>'
    ]
    for rank in range(1, k + 1):
        x = sx(rank)
        body.append(
            f'<line x1="{_num(x)}" y1="{_num(axis_y - 6)}" x2="{_num(x)}" y2="{_num(axis_y)}" stroke="#000000"/>'
        )
        body.append(_text(x, axis_y - 10, str(rank), anchor="middle", size=11))

    ruler_y = 70.0
    ruler_end = min(left + axis_w, left + axis_w * cd.cd_value / (k - 1))
    body.append(
        f'<line class="cd-ruler" x1="{_num(left)}" y1="{_num(ruler_y)}" x2="{_num(ruler_end)}" '
        f'y2="{_num(ruler_y)}" stroke="#000000" stroke-width="2"/>'
    )
    body.append(_text(left, ruler_y - 8, f"CD = {cd.cd_value:.2f}", extra=' class="cd-value"'))

    ordered = sorted(cd.average_ranks, key=lambda f: (cd.average_ranks[f], f))
    half = (len(ordered) + 1) // 2
    for i, fuzzer in enumerate(ordered):
        rank = cd.average_ranks[fuzzer]
        x = sx(rank)
        on_left = i < half
        row = i if on_left else len(ordered) - 1 - i
        label_y = axis_y + 110 + 22 * row
        label_x = left - 10 if on_left else left + axis_w + 10
        body.append(
            f'<polyline points="{_num(x)},{_num(axis_y)} {_num(x)},{_num(label_y)} {_num(label_x)},{_num(label_y)}" '
            'fill="none" stroke="#475569"/>'
        )
        body.append(
            _text(
                label_x + (-4 if on_left else 4),
                label_y + 4,
                f"{fuzzer} ({rank:.2f})",
                anchor="end" if on_left else "start",
                extra=' class="cd-label"',
            )
        )

    for j, group in enumerate(cd_groups(cd.average_ranks, cd.cd_value)):
        y = axis_y + 20 + 12 * j
        x1 = sx(cd.average_ranks[group[0]]) - 4
        x2 = sx(cd.average_ranks[group[-1]]) + 4
        body.append(
            f'<line class="cd-group" data-members="{escape(",".join(group))}" x1="{_num(x1)}" y1="{_num(y)}" '
            f'x2="{_num(x2)}" y2="{_num(y)}" stroke="#111827" stroke-width="4"/>'
        )
    return _document(title, body)


def _heat(value: float) -> str:
    level = int(round(255 * (1 - max(0.0, min(1.0, value)))))
    return f"#{level:02x}{level:02x}ff"


def plot_similarity(matrix: Mapping[str, Mapping[str, Optional[float]]], title: str = "Coverage similarity") -> str:
    fuzzers = sorted(matrix)
    if not fuzzers:
        return placeholder(title)
    left, top = 160.0, 60.0
    cell = min((WIDTH - left - 20) / len(fuzzers), (HEIGHT - top - 20) / len(fuzzers))
    body: List[str] = []
    for i, a in enumerate(fuzzers):
        body.append(_text(left - 8, top + cell * (i + 0.5) + 4, a, anchor="end", size=11))
        body.append(_text(left + cell * (i + 0.5), top - 8, a, anchor="middle", size=11))
        for j, b in enumerate(fuzzers):
            value = matrix[a].get(b)
            fill = "#d1d5db" if value is None else _heat(value)
            x, y = left + cell * j, top + cell * i
            body.append(
                f'<rect class="cell" x="{_num(x)}" y="{_num(y)}" width="{_num(cell)}" height="{_num(cell)}" '
                f'fill="{fill}" stroke="#ffffff"/>'
            )
            body.append(_text(x + cell / 2, y + cell / 2 + 4, "n/a" if value is None else f"{value:.2f}", "middle", 10))
    return _document(title, body)
