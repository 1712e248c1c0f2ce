"""Run artifacts: CSV tables, run manifests, hashes and minimal SVG charts.

Every command writes a flat key=value manifest holding the fully resolved
options (JSON-encoded per key), input hashes, seed and artifact list --
enough to re-execute the command and compare outputs byte for byte.
Timestamps are recorded but excluded from any reproducibility comparison.

Charts are hand-emitted SVG polylines; the CSV next to them remains the
authoritative record.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

CSV_SCHEMA_VERSION = 1
METRICS_CSV_HEADER = [
    "case_id", "method", "t_prime", "ensemble_size", "dice", "jaccard", "hd95", "f1", "nfe",
]


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def write_csv(path: str | Path, header: list[str], rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(row.get(col)) for col in header])
    return path


def read_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_tree(root: str | Path) -> str:
    """Digest of a directory: file names and contents, order-independent."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode("utf-8"))
        h.update(bytes.fromhex(sha256_file(path)))
    return h.hexdigest()


def write_manifest(
    path: str | Path,
    command: str,
    options: dict,
    *,
    seed: int | None = None,
    hashes: dict[str, str] | None = None,
    started: str = "",
    finished: str = "",
    artifacts: list[str] | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"command={command}", f"csv_schema={CSV_SCHEMA_VERSION}"]
    if seed is not None:
        lines.append(f"seed={seed}")
    for name, value in sorted(options.items()):
        lines.append(f"opt.{name}={json.dumps(value)}")
    for name, value in sorted((hashes or {}).items()):
        lines.append(f"hash.{name}={value}")
    lines.append(f"started={started}")
    lines.append(f"finished={finished}")
    for artifact in artifacts or []:
        lines.append(f"artifact={artifact}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path: str | Path) -> dict:
    """Parse a manifest into {command, options, hashes, artifacts, ...}."""
    command, options, hashes, artifacts, rest = None, {}, {}, [], {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        if key == "command":
            command = value
        elif key.startswith("opt."):
            options[key[4:]] = json.loads(value)
        elif key.startswith("hash."):
            hashes[key[5:]] = value
        elif key == "artifact":
            artifacts.append(value)
        else:
            rest[key] = value
    if command is None:
        raise ValueError(f"{path}: not a run manifest (no command line)")
    return {"command": command, "options": options, "hashes": hashes,
            "artifacts": artifacts, **rest}


def write_line_chart(
    path: str | Path,
    xs: list[float],
    series: dict[str, list[float]],
    xlabel: str,
    ylabel: str,
    title: str = "",
) -> Path:
    """Minimal SVG line chart: axes, polylines, end-point tick labels."""
    path = Path(path)
    width, height, margin = 640, 400, 60
    xs = [float(x) for x in xs]
    all_ys = [float(y) for ys in series.values() for y in ys]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(all_ys), max(all_ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def sy(y):
        return height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="14">{xlabel}</text>',
        f'<text x="16" y="{height / 2:.1f}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 16 {height / 2:.1f})">{ylabel}</text>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="15">{title}</text>',
        f'<text x="{margin}" y="{height - margin + 18}" text-anchor="middle" '
        f'font-size="11">{x_lo:g}</text>',
        f'<text x="{width - margin}" y="{height - margin + 18}" text-anchor="middle" '
        f'font-size="11">{x_hi:g}</text>',
        f'<text x="{margin - 6}" y="{height - margin + 4}" text-anchor="end" '
        f'font-size="11">{y_lo:.4g}</text>',
        f'<text x="{margin - 6}" y="{margin + 4}" text-anchor="end" font-size="11">{y_hi:.4g}</text>',
    ]
    for i, (name, ys) in enumerate(series.items()):
        color = palette[i % len(palette)]
        points = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{points}"/>')
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{color}"/>')
        parts.append(
            f'<text x="{width - margin + 6}" y="{margin + 16 * i + 4}" font-size="12" '
            f'fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts) + "\n")
    return path
