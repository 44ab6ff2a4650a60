"""Static figures: proposal overlays, confusion-matrix heatmaps, loss curves."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image, ImageDraw  # noqa: E402

from .dwm import WindowProposal  # noqa: E402
from .imaging import to_uint8  # noqa: E402
from .metrics import ConfusionCounts  # noqa: E402

SCALE_COLORS = [(0, 255, 255), (255, 255, 0), (0, 255, 0), (255, 0, 255)]
_PNG_META = {"Software": None}


def draw_windows(
    image: np.ndarray, proposals: Sequence[WindowProposal], scale: tuple[float, float] = (1.0, 1.0)
) -> Image.Image:
    """Draw 2-px rectangles, one color per DWM scale, onto a copy of ``image``.

    ``scale`` maps proposal coordinates (model input space) to image pixels.
    """
    canvas = Image.fromarray(to_uint8(image), mode="RGB")
    draw = ImageDraw.Draw(canvas)
    sy, sx = scale
    for p in proposals:
        color = SCALE_COLORS[p.scale_index % len(SCALE_COLORS)]
        x0, y0 = round(p.tl_x * sx), round(p.tl_y * sy)
        x1, y1 = round(p.br_x * sx) - 1, round(p.br_y * sy) - 1
        draw.rectangle([x0, y0, x1, y1], outline=color, width=2)
    return canvas


def save_confusion_png(counts: ConfusionCounts, path: str | Path) -> Path:
    path = Path(path)
    m = counts.as_matrix()
    fig, ax = plt.subplots(figsize=(3.6, 3.2), dpi=100)
    ax.imshow(m, cmap="Blues", vmin=0)
    names = [["TN", "FP"], ["FN", "TP"]]
    for i in range(2):
        for j in range(2):
            ax.text(j, i, f"{names[i][j]}\n{m[i, j]}", ha="center", va="center",
                    color="white" if m[i, j] > m.max() / 2 else "black")
    ax.set_xticks([0, 1], ["non-ref", "referable"])
    ax.set_yticks([0, 1], ["non-ref", "referable"])
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)
    return path


def read_log(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def save_loss_png(records: Sequence[dict], path: str | Path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 3.2), dpi=100)
    ax.plot([r["iteration"] for r in records], [r["loss"] for r in records], lw=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("training loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)
    return path
