"""Corpus manifests: ingestion, ground-truth queries, subsets, synthetic fixtures.

The manifest is a CSV file with header ``image_id,path,writer_id,subset``;
lines starting with ``#`` are comments. Entry order is the single source of
truth for the row/column order of every derived matrix.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

SUBSET_TAGS = ("manuscripts", "letters_a", "letters_b", "charters", "synthetic")

MANIFEST_HEADER = ("image_id", "path", "writer_id", "subset")


class ManifestError(ValueError):
    """Raised when a manifest file is malformed or violates an invariant."""


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    path: str
    writer_id: str
    subset: str


class CorpusManifest:
    """Ordered collection of manifest entries; order defines matrix indexing."""

    def __init__(self, entries):
        self.entries = list(entries)
        seen = set()
        for e in self.entries:
            if e.image_id in seen:
                raise ManifestError(f"duplicate image_id: {e.image_id!r}")
            seen.add(e.image_id)
            if e.subset not in SUBSET_TAGS:
                raise ManifestError(f"unknown subset tag: {e.subset!r}")
        self._index = {e.image_id: i for i, e in enumerate(self.entries)}

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def image_ids(self):
        return [e.image_id for e in self.entries]

    @property
    def writer_ids(self):
        return [e.writer_id for e in self.entries]

    def index_of(self, image_id: str) -> int:
        try:
            return self._index[image_id]
        except KeyError:
            raise ManifestError(f"unknown image_id: {image_id!r}") from None


def load_manifest(path) -> CorpusManifest:
    """Parse a manifest CSV, validating header, field count and invariants."""
    path = Path(path)
    entries = []
    header_seen = False
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                row = next(csv.reader(io.StringIO(line)))
            except csv.Error as exc:
                raise ManifestError(f"{path}:{lineno}: parse error: {exc}") from exc
            row = [c.strip() for c in row]
            if not header_seen:
                if tuple(row) != MANIFEST_HEADER:
                    raise ManifestError(
                        f"{path}:{lineno}: bad header {row!r}, "
                        f"expected {','.join(MANIFEST_HEADER)}"
                    )
                header_seen = True
                continue
            if len(row) != 4:
                raise ManifestError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            entries.append(ManifestEntry(*row))
    if not header_seen:
        raise ManifestError(f"{path}: empty manifest (missing header)")
    try:
        return CorpusManifest(entries)
    except ManifestError as exc:
        raise ManifestError(f"{path}: {exc}") from None


def save_manifest(manifest: CorpusManifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for e in manifest:
            writer.writerow([e.image_id, e.path, e.writer_id, e.subset])


def relevant_count(manifest: CorpusManifest, image_id: str) -> int:
    """Number of *other* entries sharing the writer of ``image_id`` (symbol R)."""
    q = manifest.entries[manifest.index_of(image_id)]
    return sum(1 for e in manifest if e.writer_id == q.writer_id) - 1


def subset_select(manifest: CorpusManifest, tags) -> CorpusManifest:
    """Filter to entries whose subset tag is in ``tags``, preserving order."""
    tags = set(tags)
    if not tags:
        raise ValueError("tags must be non-empty")
    unknown = tags - set(SUBSET_TAGS)
    if unknown:
        raise ManifestError(f"unknown subset tags: {sorted(unknown)}")
    return CorpusManifest([e for e in manifest if e.subset in tags])


# ---------------------------------------------------------------------------
# Synthetic corpus generation
# ---------------------------------------------------------------------------

_SYNTH_SIZE = 300  # page side in pixels; large enough to survive the 42 px crop


def _writer_param_grid(total_writers: int, seed: int):
    """Per-writer texture parameters on a shuffled (orientation, spacing) grid.

    Grid placement keeps writer classes separated in texture space, which a
    purely random draw does not guarantee for large writer counts.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11]))
    m1 = int(np.ceil(np.sqrt(total_writers)))
    m2 = int(np.ceil(total_writers / m1))
    orientations = np.linspace(-42.0, 42.0, m1)
    spacings = np.linspace(8.0, 26.0, m2)
    cells = [(o, s) for o in orientations for s in spacings]
    order = rng.permutation(len(cells))[:total_writers]
    params = []
    for idx in order:
        o, s = cells[idx]
        params.append(
            {
                "orientation_deg": float(o),
                "spacing": float(s),
                "duty": float(rng.uniform(0.18, 0.42)),
                "ink": int(rng.integers(20, 90)),
                "background": int(rng.integers(185, 225)),
            }
        )
    return params


def _render_page(params: dict, page_seed) -> np.ndarray:
    """Render one deterministic grayscale page for a writer parameter set."""
    rng = np.random.default_rng(page_seed)
    n = _SYNTH_SIZE
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    theta = np.deg2rad(params["orientation_deg"])
    # Coordinate along the stripe normal; phase varies per page, texture does not.
    t = xx * np.sin(theta) + yy * np.cos(theta) + rng.uniform(0.0, params["spacing"])
    stripe = (t / params["spacing"]) % 1.0 < params["duty"]
    img = np.full((n, n), params["background"], dtype=np.float64)
    img[stripe] = params["ink"]
    img += rng.normal(0.0, 8.0, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synth_corpus(
    num_writers: int,
    pages_per_writer: int,
    num_distractors: int,
    seed: int,
    out_dir,
) -> CorpusManifest:
    """Write a deterministic synthetic corpus and return its manifest.

    Writers get distinct procedural textures (stroke orientation, width, line
    spacing); pages of one writer differ only in phase and noise. Distractors
    are singleton writers. Same seed yields bit-identical image files.
    """
    if num_writers <= 0 or pages_per_writer <= 0:
        raise ValueError("num_writers and pages_per_writer must be positive")
    if num_distractors < 0:
        raise ValueError("num_distractors must be non-negative")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    total = num_writers + num_distractors
    params = _writer_param_grid(total, seed)
    entries = []
    for w in range(total):
        pages = pages_per_writer if w < num_writers else 1
        writer_id = f"w{w:04d}" if w < num_writers else f"d{w - num_writers:04d}"
        for p in range(pages):
            image_id = f"{writer_id}_p{p}"
            img = _render_page(params[w], np.random.SeedSequence([seed, w, p]))
            rel_path = f"{image_id}.png"
            Image.fromarray(img, mode="L").save(out_dir / rel_path)
            entries.append(
                ManifestEntry(image_id, str(out_dir / rel_path), writer_id, "synthetic")
            )
    manifest = CorpusManifest(entries)
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest
