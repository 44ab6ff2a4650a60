"""Dataset manifests, stratified splitting and a synthetic fundus generator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .imaging import RoiBox, save_image

HEADER = ("image_path", "label", "roi_x0", "roi_y0", "roi_x1", "roi_y1")


class ManifestError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class ManifestParseError(ManifestError):
    pass


class ManifestValidationError(ManifestError):
    pass


@dataclass(frozen=True)
class SampleRecord:
    image_path: str
    label: int
    roi: RoiBox | None = None

    def __post_init__(self):
        if not self.image_path:
            raise ManifestValidationError("empty image path")
        if self.label not in (0, 1):
            raise ManifestValidationError(f"label must be 0 or 1, got {self.label!r}")


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[SampleRecord, ...]
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.image_path in seen:
                raise ManifestValidationError(f"duplicate image path {r.image_path!r}")
            seen.add(r.image_path)

    @property
    def class_counts(self) -> tuple[int, int]:
        n_ref = sum(r.label for r in self.records)
        return len(self.records) - n_ref, n_ref

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def resolve(self, record: SampleRecord) -> Path:
        p = Path(record.image_path)
        return p if p.is_absolute() else self.root / p

    def __len__(self) -> int:
        return len(self.records)


def _parse_row(row: list[str], line: int) -> SampleRecord:
    if len(row) != len(HEADER):
        raise ManifestParseError(f"expected {len(HEADER)} columns, got {len(row)}", line)
    path, label, *roi = (c.strip() for c in row)
    try:
        label_value = int(label)
    except ValueError:
        raise ManifestParseError(f"label {label!r} is not an integer", line) from None
    if label_value not in (0, 1):
        raise ManifestValidationError(f"unknown label {label_value}", line)
    if not path:
        raise ManifestValidationError("empty image path", line)
    box = None
    if any(roi):
        if not all(roi):
            raise ManifestParseError("ROI columns must be all present or all empty", line)
        try:
            x0, y0, x1, y1 = (int(v) for v in roi)
        except ValueError:
            raise ManifestParseError(f"ROI values {roi} are not integers", line) from None
        if not (0 <= x0 < x1 and 0 <= y0 < y1):
            raise ManifestValidationError(f"ROI box {roi} is empty or negative", line)
        box = RoiBox(x0, y0, x1, y1)
    return SampleRecord(path, label_value, box)


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != HEADER:
            raise ManifestParseError(f"header must be {','.join(HEADER)}", 1)
        for row in reader:
            if not row:
                continue
            records.append(_parse_row(row, reader.line_num))
    try:
        return DatasetManifest(tuple(records), root=path.parent)
    except ManifestValidationError as e:
        raise ManifestValidationError(f"{path}: {e}") from None


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HEADER)
        for r in manifest.records:
            roi = ["", "", "", ""] if r.roi is None else [r.roi.x0, r.roi.y0, r.roi.x1, r.roi.y1]
            w.writerow([r.image_path, r.label, *roi])
    return path


def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of ``n`` items with at least one per part."""
    raw = [f * n for f in fractions]
    sizes = [max(1, math.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - math.floor(raw[i])), i))
    i = 0
    while sum(sizes) < n:
        sizes[order[i % len(order)]] += 1
        i += 1
    while sum(sizes) > n:
        big = max(range(len(sizes)), key=lambda j: sizes[j])
        sizes[big] -= 1
    return sizes


def split_records(
    manifest: DatasetManifest, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0
) -> tuple[DatasetManifest, ...]:
    """Stratified, seeded split into disjoint partitions covering every record."""
    if any(f <= 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError(f"fractions must be positive and sum to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    parts: list[list[SampleRecord]] = [[] for _ in fractions]
    for label in (0, 1):
        members = [r for r in manifest.records if r.label == label]
        if not members:
            continue
        if len(members) < len(fractions):
            raise ManifestValidationError(
                f"class {label} has {len(members)} samples, fewer than {len(fractions)} partitions"
            )
        perm = rng.permutation(len(members))
        start = 0
        for part, size in zip(parts, _allocate(len(members), fractions)):
            part.extend(members[k] for k in perm[start : start + size])
            start += size
    out = []
    for part in parts:
        order = rng.permutation(len(part))
        out.append(DatasetManifest(tuple(part[k] for k in order), root=manifest.root))
    return tuple(out)


# ---------------------------------------------------------------------------
# synthetic fundus images
# ---------------------------------------------------------------------------

CDR_RANGES = {0: (0.2, 0.5), 1: (0.65, 0.95)}


@dataclass(frozen=True)
class FundusGeometry:
    center_y: float
    center_x: float
    disc_ry: float
    disc_rx: float
    cdr: float

    def disc_box(self, side: int) -> RoiBox:
        y0 = max(0, math.floor(self.center_y - self.disc_ry))
        x0 = max(0, math.floor(self.center_x - self.disc_rx))
        y1 = min(side, math.ceil(self.center_y + self.disc_ry) + 1)
        x1 = min(side, math.ceil(self.center_x + self.disc_rx) + 1)
        return RoiBox(x0, y0, x1, y1)

    def roi_box(self, side: int, pad: float = 0.2) -> RoiBox:
        d = self.disc_box(side)
        py = math.ceil(pad * (d.y1 - d.y0))
        px = math.ceil(pad * (d.x1 - d.x0))
        return RoiBox(max(0, d.x0 - px), max(0, d.y0 - py), min(side, d.x1 + px), min(side, d.y1 + py))


def _blend(img: np.ndarray, mask: np.ndarray, color) -> None:
    img *= 1.0 - mask
    img += mask * np.asarray(color, dtype=np.float64)[:, None, None]


def _soft_ellipse(yy, xx, cy, cx, ry, rx, edge: float) -> np.ndarray:
    r = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
    return np.clip((1.0 - r) * min(ry, rx) / edge + 0.5, 0.0, 1.0)


def _segment_distance(yy, xx, p, q) -> np.ndarray:
    d = q - p
    t = ((yy - p[0]) * d[0] + (xx - p[1]) * d[1]) / max(float(d @ d), 1e-12)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(yy - (p[0] + t * d[0]), xx - (p[1] + t * d[1]))


def draw_fundus(rng: np.random.Generator, side: int, cdr: float) -> tuple[np.ndarray, FundusGeometry]:
    """Render one synthetic fundus photograph with the given cup-to-disc ratio."""
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    c = (side - 1) / 2.0
    img = np.empty((3, side, side))
    base = np.array([0.72, 0.30, 0.12]) * rng.uniform(0.85, 1.1)
    radial = np.hypot(yy - c, xx - c) / (0.5 * side)
    img[:] = base[:, None, None] * (1.0 - 0.35 * radial**2)[None]

    ry = side * rng.uniform(0.08, 0.11)
    rx = ry * rng.uniform(0.88, 1.12)
    # disc centre uniform over a disc well inside the fundus circle
    radius = (0.45 * side - 1.6 * max(ry, rx)) * np.sqrt(rng.uniform())
    theta = rng.uniform(0, 2 * np.pi)
    cy = c + radius * np.sin(theta)
    cx = c + radius * np.cos(theta)
    _blend(img, _soft_ellipse(yy, xx, cy, cx, ry, rx, 1.5)[None], (0.93, 0.68, 0.38))
    _blend(img, _soft_ellipse(yy, xx, cy, cx, cdr * ry, cdr * rx, 1.5)[None], (1.0, 0.93, 0.75))

    width = max(1.0, side * 0.006)
    for _ in range(rng.integers(4, 7)):
        angle = rng.uniform(0, 2 * np.pi)
        p = np.array([cy, cx])
        for _ in range(4):
            angle += rng.normal(0, 0.35)
            step = side * rng.uniform(0.08, 0.16)
            q = p + step * np.array([np.sin(angle), np.cos(angle)])
            mask = np.clip(width - _segment_distance(yy, xx, p, q) + 0.5, 0.0, 1.0)
            _blend(img, 0.8 * mask[None], (0.42, 0.08, 0.05))
            p = q
            width = max(1.0, width * 0.85)
        width = max(1.0, side * 0.006)

    img += rng.normal(0.0, 0.02, size=img.shape)
    img *= (radial <= 0.98)[None]
    return np.clip(img, 0.0, 1.0), FundusGeometry(cy, cx, ry, rx, cdr)


def make_synthetic(
    out_dir: str | Path,
    n: int,
    seed: int = 0,
    image_side: int = 299,
    cdr_ranges: dict[int, tuple[float, float]] = CDR_RANGES,
) -> DatasetManifest:
    """Write ``n`` class-balanced synthetic fundus PNGs and ``manifest.csv``."""
    if n < 2:
        raise ValueError("need at least two images (one per class)")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = np.arange(n) % 2
    np.random.default_rng(seed).shuffle(labels)
    records = []
    for i, label in enumerate(labels):
        rng = np.random.default_rng([seed, i])
        cdr = rng.uniform(*cdr_ranges[int(label)])
        image, geom = draw_fundus(rng, image_side, cdr)
        name = f"synth_{i:05d}.png"
        save_image(out_dir / name, image)
        records.append(SampleRecord(name, int(label), geom.roi_box(image_side)))
    manifest = DatasetManifest(tuple(records), root=out_dir)
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest
