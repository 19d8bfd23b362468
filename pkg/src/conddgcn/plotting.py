"""Tiny portable plot writers: PGM heatmaps and SVG line charts."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_heatmap_pgm(path, matrix: np.ndarray, cell: int = 16) -> None:
    """Binary PGM; zero maps to mid-grey, the largest magnitude to black or white."""
    m = np.asarray(matrix, dtype=np.float64)
    peak = np.max(np.abs(m)) or 1.0
    grey = np.clip(np.round(127.5 + 127.5 * m / peak), 0, 255).astype(np.uint8)
    img = np.kron(grey, np.ones((cell, cell), dtype=np.uint8))
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def write_curve_svg(path, x, y, xlabel: str = "threshold (mm)", ylabel: str = "PCK (%)",
                    width: int = 480, height: int = 320) -> None:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    pad = 40
    x0, x1 = float(x.min()), float(x.max())
    sx = (width - 2 * pad) / ((x1 - x0) or 1.0)
    sy = (height - 2 * pad) / 100.0
    pts = " ".join(f"{pad + (a - x0) * sx:.1f},{height - pad - b * sy:.1f}" for a, b in zip(x, y))
    svg = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<polyline fill="none" stroke="steelblue" stroke-width="2" points="{pts}"/>',
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})"'
        f' text-anchor="middle">{ylabel}</text>',
        f'<text x="{pad}" y="{height - pad + 14}" font-size="10">{x0:g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 14}" font-size="10" text-anchor="end">{x1:g}</text>',
        "</svg>",
    ]
    Path(path).write_text("\n".join(svg) + "\n")
