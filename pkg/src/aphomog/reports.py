"""Deterministic report emission: CSV with provenance, JSON, and SVG plots.

Identical inputs must produce byte-identical files: floats are formatted
with repr (shortest round-trip), no timestamps or randomness enter the
output, and files are written atomically (temp + rename).
"""

import hashlib
import json
import math
import os
import tempfile


def atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-report-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def provenance_line(spec_path=None, **knobs):
    parts = []
    if spec_path is not None:
        digest = hashlib.sha256(open(spec_path, "rb").read()).hexdigest()[:16]
        parts.append(f"spec_sha256={digest}")
    for key in sorted(knobs):
        parts.append(f"{key}={_fmt(knobs[key])}")
    return "# provenance: " + " ".join(parts)


def write_csv(path, header, rows, provenance):
    lines = [provenance, ",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# minimal deterministic SVG line plots


def _transform(vals, kind_axis):
    if kind_axis == "log":
        return [math.log10(v) for v in vals]
    return list(vals)


def fitted_slope(xs, ys, kind):
    """Least-squares slope in the plot's coordinates (log-log or semilog)."""
    tx = _transform(xs, "log" if kind in ("loglog",) else "linear")
    ty = _transform(ys, "log" if kind in ("loglog", "semilogy") else "linear")
    n = len(tx)
    mx = sum(tx) / n
    my = sum(ty) / n
    denom = sum((x - mx) ** 2 for x in tx)
    if denom == 0:
        return float("nan")
    return sum((x - mx) * (y - my) for x, y in zip(tx, ty)) / denom


def emit_plot(path, rows, kind="loglog", title="", xlabel="x", ylabel="y"):
    """Write an SVG 1.1 line plot of rows [(x, y), ...]; annotates the
    fitted slope when there are at least two points.  Deterministic bytes."""
    if not rows:
        raise ValueError("cannot plot an empty report")
    xs = [float(r[0]) for r in rows]
    ys = [float(r[1]) for r in rows]
    if kind in ("loglog",) and (min(xs) <= 0 or min(ys) <= 0):
        kind = "linear"
    if kind == "semilogy" and min(ys) <= 0:
        kind = "linear"
    tx = _transform(xs, "log" if kind == "loglog" else "linear")
    ty = _transform(ys, "log" if kind in ("loglog", "semilogy") else "linear")
    w, h, m = 640, 480, 60
    x0, x1 = min(tx), max(tx)
    y0, y1 = min(ty), max(ty)
    xr = (x1 - x0) or 1.0
    yr = (y1 - y0) or 1.0

    def px(x):
        return m + (x - x0) / xr * (w - 2 * m)

    def py(y):
        return h - m - (y - y0) / yr * (h - 2 * m)

    pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(tx, ty))
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
        f'<rect x="{m}" y="{m}" width="{w - 2 * m}" height="{h - 2 * m}" fill="none" stroke="black"/>',
        f'<polyline points="{pts}" fill="none" stroke="#1f5fa6" stroke-width="1.5"/>',
    ]
    for x, y in zip(tx, ty):
        parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="#1f5fa6"/>')
    parts.append(f'<text x="{w // 2}" y="24" text-anchor="middle" font-size="14">{title}</text>')
    parts.append(f'<text x="{w // 2}" y="{h - 16}" text-anchor="middle" font-size="12">{xlabel} [{kind}]</text>')
    parts.append(f'<text x="16" y="{h // 2}" text-anchor="middle" font-size="12" '
                 f'transform="rotate(-90 16 {h // 2})">{ylabel}</text>')
    parts.append(f'<text x="{m}" y="{h - m + 16}" font-size="10">{min(xs):.6g}</text>')
    parts.append(f'<text x="{w - m}" y="{h - m + 16}" text-anchor="end" font-size="10">{max(xs):.6g}</text>')
    parts.append(f'<text x="{m - 4}" y="{h - m}" text-anchor="end" font-size="10">{min(ys):.6g}</text>')
    parts.append(f'<text x="{m - 4}" y="{m + 4}" text-anchor="end" font-size="10">{max(ys):.6g}</text>')
    if len(rows) >= 2:
        slope = fitted_slope(xs, ys, kind)
        parts.append(f'<text x="{w - m}" y="{m + 18}" text-anchor="end" font-size="12">'
                     f'fitted slope = {slope:.6g}</text>')
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts) + "\n")
