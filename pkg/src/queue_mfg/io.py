"""CSV artifacts with lossless float formatting, and standalone SVG charts."""

from __future__ import annotations

import csv
import hashlib
import math
from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import DomainError
from .measures import GridSpec, MeasureFlow


def fmt(v) -> str:
    """17 significant digits, which round-trips every binary64 value."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def read_csv(path: Path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _layers(M: int, stride: int) -> list:
    layers = list(range(0, M + 1, stride))
    if layers[-1] != M:
        layers.append(M)
    return layers


def write_flow(path: Path, nu: MeasureFlow, stride: int = 1) -> Path:
    """Header ``t,x0,...,xJ``, one row per kept time stamp."""
    g = nu.grid
    header = ["t"] + [f"x{j}" for j in range(g.J + 1)]
    return write_csv(path, header, ([g.t[m], *nu.weights[m]] for m in _layers(g.M, stride)))


def read_flow(path: Path, L: float) -> MeasureFlow:
    header, rows = read_csv(path)
    data = np.array(rows, dtype=float)
    t, w = data[:, 0], data[:, 1:]
    if w.shape[1] != len(header) - 1:
        raise DomainError(f"{path}: ragged flow table")
    grid = GridSpec(J=w.shape[1] - 1, M=w.shape[0] - 1, L=L, T=float(t[-1]))
    return MeasureFlow(w, grid)


def write_field(path: Path, values: np.ndarray, grid: GridSpec, name: str, stride: int = 1) -> Path:
    """Long-format table ``t,x,<name>`` on every ``stride``-th time layer (the last always kept)."""
    layers = _layers(grid.M, stride)
    x = grid.x
    rows = ((grid.t[m], x[j], values[m, j]) for m in layers for j in range(grid.J + 1))
    return write_csv(path, ["t", "x", name], rows)


def read_field(path: Path):
    """Returns (t stamps, x nodes, table) of a long-format field."""
    _, rows = read_csv(path)
    data = np.array(rows, dtype=float)
    t = np.unique(data[:, 0])
    x = np.unique(data[:, 1])
    return t, x, data[:, 2].reshape(t.size, x.size)


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# SVG

_W, _H, _PAD = 640, 400, 56
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")


def _ticks(lo: float, hi: float, k: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (k - 1) for i in range(k)]


def _frame(title, xlabel, ylabel, x_rng, y_rng, logx=False):
    (x0, x1), (y0, y1) = x_rng, y_rng
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
        f'<text x="{_W / 2}" y="{_H - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>',
        f'<text x="16" y="{_H / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {_H / 2})">{escape(ylabel)}</text>',
        f'<rect x="{_PAD}" y="{_PAD}" width="{_W - 2 * _PAD}" height="{_H - 2 * _PAD}" fill="none" stroke="black"/>',
    ]
    for v in _ticks(x0, x1):
        px = _PAD + (v - x0) / (x1 - x0) * (_W - 2 * _PAD)
        label = f"{10 ** v:.3g}" if logx else f"{v:.3g}"
        parts.append(f'<text x="{px:.2f}" y="{_H - _PAD + 16}" text-anchor="middle" font-family="sans-serif" '
                     f'font-size="10">{label}</text>')
    for v in _ticks(y0, y1):
        py = _H - _PAD - (v - y0) / (y1 - y0) * (_H - 2 * _PAD)
        parts.append(f'<text x="{_PAD - 6}" y="{py:.2f}" text-anchor="end" font-family="sans-serif" '
                     f'font-size="10">{v:.3g}</text>')
    return parts


def _range(arrays):
    lo = min(float(np.min(a)) for a in arrays)
    hi = max(float(np.max(a)) for a in arrays)
    if not math.isfinite(lo) or not math.isfinite(hi):
        raise DomainError("cannot plot non-finite values")
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def line_chart(path: Path, series: dict, title: str, xlabel: str, ylabel: str, logx: bool = False) -> Path:
    """``series`` maps a label to an (x, y) pair of arrays."""
    xs = {k: np.log10(np.asarray(v[0], dtype=float)) if logx else np.asarray(v[0], dtype=float)
          for k, v in series.items()}
    ys = {k: np.asarray(v[1], dtype=float) for k, v in series.items()}
    x_rng, y_rng = _range(list(xs.values())), _range(list(ys.values()))
    parts = _frame(title, xlabel, ylabel, x_rng, y_rng, logx)
    sx = (_W - 2 * _PAD) / (x_rng[1] - x_rng[0])
    sy = (_H - 2 * _PAD) / (y_rng[1] - y_rng[0])
    for k, label in enumerate(series):
        pts = " ".join(f"{_PAD + (a - x_rng[0]) * sx:.2f},{_H - _PAD - (b - y_rng[0]) * sy:.2f}"
                       for a, b in zip(xs[label], ys[label]))
        color = _COLORS[k % len(_COLORS)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{_W - _PAD - 4}" y="{_PAD + 14 + 14 * k}" text-anchor="end" fill="{color}" '
                     f'font-family="sans-serif" font-size="11">{escape(str(label))}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
    return Path(path)


def heat_strip(path: Path, table: np.ndarray, t: np.ndarray, x: np.ndarray, title: str) -> Path:
    """Table over (t, x) as coloured cells, time across and space up."""
    table = np.asarray(table, dtype=float)
    lo, hi = _range([table])
    parts = _frame(title, "t", "x", (float(t[0]), float(t[-1])), (float(x[0]), float(x[-1])))
    nt, nx = table.shape
    cw = (_W - 2 * _PAD) / nt
    ch = (_H - 2 * _PAD) / nx
    for m in range(nt):
        for j in range(nx):
            z = (table[m, j] - lo) / (hi - lo)
            r, b = int(255 * z), int(255 * (1 - z))
            parts.append(f'<rect x="{_PAD + m * cw:.2f}" y="{_H - _PAD - (j + 1) * ch:.2f}" width="{cw + 0.05:.2f}" '
                         f'height="{ch + 0.05:.2f}" fill="rgb({r},64,{b})"/>')
    parts.append(f'<text x="{_W - _PAD}" y="{_PAD - 8}" text-anchor="end" font-family="sans-serif" '
                 f'font-size="10">blue {lo:.3g} .. red {hi:.3g}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
    return Path(path)
