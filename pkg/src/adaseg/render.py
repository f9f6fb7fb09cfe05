"""Timeline rendering of label tracks: one colored bar per track.

Produces a standalone SVG (and an aligned ASCII form for terminals).
Colors derive deterministically from class ids via golden-ratio hue
rotation unless an explicit class->color table is supplied.
"""

from __future__ import annotations

import colorsys
from typing import Mapping, Sequence

import numpy as np

from .metrics import labels_to_segments

_GOLDEN = 0.6180339887498949
_ASCII_CHARS = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789"


def class_color(class_id: int) -> str:
    hue = (0.13 + class_id * _GOLDEN) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.62, 0.88)
    return f"#{int(r * 255):02x}{int(g * 255):02x}{int(b * 255):02x}"


def _check_tracks(tracks: Sequence[tuple[str, np.ndarray]]) -> int:
    if not tracks:
        raise ValueError("no tracks to render")
    length = len(tracks[0][1])
    for name, labels in tracks:
        if len(labels) != length:
            raise ValueError(f"track {name!r} has {len(labels)} frames, expected {length}")
        if len(labels) == 0:
            raise ValueError(f"track {name!r} is empty")
    return length


def render_timeline_svg(tracks: Sequence[tuple[str, np.ndarray]],
                        class_names: Sequence[str] | None = None,
                        colors: Mapping[int, str] | None = None,
                        width: int = 900, bar_height: int = 26, gap: int = 10,
                        label_width: int = 120) -> str:
    """Render tracks (name, frame labels) to an SVG document string."""
    frames = _check_tracks(tracks)
    scale = width / frames
    used = sorted({int(c) for _, labels in tracks for c in np.asarray(labels)})
    color_of = {c: (colors[c] if colors and c in colors else class_color(c)) for c in used}
    rows = len(tracks)
    legend_h = bar_height + gap
    total_w = label_width + width + 10
    total_h = rows * (bar_height + gap) + legend_h + gap
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{total_h}" '
        f'viewBox="0 0 {total_w} {total_h}" font-family="sans-serif" font-size="12">',
        f'<rect width="{total_w}" height="{total_h}" fill="white"/>',
    ]
    for row, (name, labels) in enumerate(tracks):
        y = row * (bar_height + gap)
        parts.append(f'<text x="4" y="{y + bar_height * 0.65:.1f}">{_escape(name)}</text>')
        for seg in labels_to_segments(np.asarray(labels)):
            x = label_width + seg.start * scale
            w = seg.length * scale
            parts.append(f'<rect x="{x:.2f}" y="{y}" width="{w:.2f}" height="{bar_height}" '
                         f'fill="{color_of[seg.class_id]}"/>')
    y = rows * (bar_height + gap)
    x = label_width
    for c in used:
        name = class_names[c] if class_names and c < len(class_names) else str(c)
        parts.append(f'<rect x="{x:.2f}" y="{y}" width="14" height="14" fill="{color_of[c]}"/>')
        parts.append(f'<text x="{x + 18:.2f}" y="{y + 12}">{_escape(name)}</text>')
        x += 28 + 7 * len(name)
    parts.append("</svg>")
    return "\n".join(parts)


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_timeline_ascii(tracks: Sequence[tuple[str, np.ndarray]],
                          width: int = 80) -> str:
    """Aligned one-character-per-column rendering for terminals."""
    frames = _check_tracks(tracks)
    cols = min(width, frames)
    name_w = max(len(name) for name, _ in tracks)
    lines = []
    for name, labels in tracks:
        labels = np.asarray(labels)
        idx = ((np.arange(cols) + 0.5) * frames / cols).astype(int)
        chars = "".join(_ASCII_CHARS[int(c) % len(_ASCII_CHARS)] for c in labels[idx])
        lines.append(f"{name:<{name_w}} |{chars}|")
    return "\n".join(lines)
