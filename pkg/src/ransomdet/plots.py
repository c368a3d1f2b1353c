"""Dependency-free SVG renderings of PR curves, confusion matrices and correlation heat maps."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape


from .dataset import LABEL_NAMES
from .metrics import ConfusionMatrix, CorrelationMatrix, PrCurve


def _svg(width, height, body):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        + "\n".join(body)
        + "\n</svg>\n"
    )


def _text(x, y, s, anchor="middle", size=12, extra=""):
    return f'<text x="{x:.1f}" y="{y:.1f}" text-anchor="{anchor}" font-size="{size}" {extra}>{escape(str(s))}</text>'


def pr_curve_svg(curve: PrCurve, title: str = "Precision-Recall curve") -> str:
    w, h, m = 480, 400, 56
    pw, ph = w - 2 * m, h - 2 * m

    def xy(r, p):
        return m + r * pw, h - m - p * ph

    body = [_text(w / 2, 24, title, size=14)]
    body.append(f'<rect x="{m}" y="{m}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for i in range(6):
        v = i / 5
        x, _ = xy(v, 0)
        _, y = xy(0, v)
        body.append(f'<line x1="{x:.1f}" y1="{h - m}" x2="{x:.1f}" y2="{h - m + 4}" stroke="black"/>')
        body.append(_text(x, h - m + 18, f"{v:.1f}"))
        body.append(f'<line x1="{m - 4}" y1="{y:.1f}" x2="{m}" y2="{y:.1f}" stroke="black"/>')
        body.append(_text(m - 8, y + 4, f"{v:.1f}", anchor="end"))
    body.append(_text(w / 2, h - 14, "Recall"))
    body.append(_text(16, h / 2, "Precision", extra=f'transform="rotate(-90 16 {h / 2})"'))
    pts = sorted(((p.recall, p.precision) for p in curve.points if p.precision_defined))
    path = " ".join(f"{x:.2f},{y:.2f}" for x, y in (xy(r, p) for r, p in pts))
    body.append(f'<polyline points="{path}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
    return _svg(w, h, body)


def confusion_svg(cm: ConfusionMatrix, title: str = "Confusion matrix") -> str:
    mat = cm.as_matrix()
    cell, m = 120, 110
    w, h = m + 2 * cell + 30, m + 2 * cell + 50
    peak = max(int(mat.max()), 1)
    body = [_text(w / 2, 24, title, size=14)]
    for t in (0, 1):
        for p in (0, 1):
            v = int(mat[t, p])
            shade = int(255 - 200 * v / peak)
            x, y = m + p * cell, m + t * cell
            body.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="black"/>')
            color = "white" if shade < 128 else "black"
            body.append(_text(x + cell / 2, y + cell / 2 + 5, v, size=16, extra=f'fill="{color}"'))
    for i in (0, 1):
        body.append(_text(m + i * cell + cell / 2, m - 8, f"{LABEL_NAMES[i]} ({i})"))
        body.append(_text(m - 8, m + i * cell + cell / 2 + 4, f"{LABEL_NAMES[i]} ({i})", anchor="end"))
    body.append(_text(m + cell, m - 28, "Predicted label"))
    body.append(_text(m + cell, h - 16, f"rows: true label; positive class {cm.positive}", size=11))
    return _svg(w, h, body)


def _diverging(v: float) -> str:
    v = max(-1.0, min(1.0, v))
    if v >= 0:
        r, g, b = 255, int(255 - 200 * v), int(255 - 200 * v)
    else:
        r, g, b = int(255 + 200 * v), int(255 + 200 * v), 255
    return f"rgb({r},{g},{b})"


def heatmap_svg(corr: CorrelationMatrix, title: str = "Feature correlation") -> str:
    d = len(corr.names)
    cell = 28
    label_w = max(8 * max((len(n) for n in corr.names), default=1), 40)
    w = label_w + d * cell + 20
    h = label_w + d * cell + 40
    body = [_text(w / 2, 20, title, size=14)]
    top = label_w + 10
    for i, row in enumerate(corr.values):
        for j, v in enumerate(row):
            x, y = label_w + j * cell, top + i * cell
            v = float(v)
            body.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{_diverging(v)}">'
                        f'<title>{escape(corr.names[i])} / {escape(corr.names[j])}: {v:.3f}</title></rect>')
            if not math.isnan(v):
                body.append(_text(x + cell / 2, y + cell / 2 + 3, f"{v:.1f}", size=8))
    for i, name in enumerate(corr.names):
        c = label_w + i * cell + cell / 2
        body.append(_text(label_w - 4, top + i * cell + cell / 2 + 4, name, anchor="end", size=10))
        body.append(_text(c, top - 4, name, anchor="start", size=10, extra=f'transform="rotate(-90 {c} {top - 4})"'))
    return _svg(w, h, body)


