"""Dataset generation, preprocessing, and lot/version/location assembly.

A dataset is a directory tree of processed frames,

    <root>/<class>/lot<i>/v<version>/loc<j>/frame_<k>.spkl

with one metadata sidecar per movie directory and a manifest CSV at the
root. Preprocessing subtracts the blockwise mean of consecutive frames
(removing the time-invariant static speckle) and normalizes each frame
to [0, 1] by its own maximum. Version-1 frames are split 8:1:1 into
train/val/test per class; every Version-2 frame lands in the
"independent" split.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .frameio import read_frame, read_meta, write_frame, write_meta
from .optics import Frame, Movie, OpticalConfig, record_movie
from .protocols import ExposureProtocol
from .seeding import stream_key, substream
from .suspension import ParticlePopulation, SuspensionSample

__all__ = [
    "DatasetCounts",
    "ManifestEntry",
    "DatasetManifest",
    "rolling_background_subtract",
    "normalize",
    "split_dataset",
    "lot_sample",
    "generate_dataset",
    "verify_dataset",
]

MANIFEST_NAME = "manifest.csv"
MANIFEST_HEADER = "path,class,lot,version,location,frame,split"
SPLITS = ("train", "val", "test", "independent")


@dataclass(frozen=True)
class DatasetCounts:
    lots: int = 5
    versions: int = 2
    locations: int = 3
    frames_per_movie: int = 200

    def __post_init__(self):
        if min(self.lots, self.versions, self.locations, self.frames_per_movie) < 1:
            raise ConfigError("dataset counts must be positive")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    class_label: str
    lot: int
    version: int
    location: int
    frame: int
    split: str = ""


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    classes: tuple[str, ...]
    protocol_tag: str
    split_seed: int
    root: Path | None = None

    def for_split(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def for_class(self, label: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.class_label == label]

    def write(self, path) -> None:
        lines = [MANIFEST_HEADER]
        for e in self.entries:
            lines.append(
                f"{e.path},{e.class_label},{e.lot},{e.version},{e.location},{e.frame},{e.split}"
            )
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        lines = path.read_text().splitlines()
        if not lines or lines[0] != MANIFEST_HEADER:
            raise DataError(f"{path}: not a dataset manifest")
        entries = []
        for line in lines[1:]:
            if not line:
                continue
            p, cls_label, lot, version, location, frame, split = line.split(",")
            entries.append(
                ManifestEntry(p, cls_label, int(lot), int(version), int(location), int(frame), split)
            )
        classes = tuple(sorted({e.class_label for e in entries}))
        meta_path = path.parent / "dataset.txt"
        protocol_tag = ""
        split_seed = 0
        if meta_path.exists():
            meta = read_meta(meta_path)
            protocol_tag = meta.get("protocol", "")
            split_seed = int(meta.get("split_seed", "0"))
        return cls(entries, classes, protocol_tag, split_seed, root=path.parent)


def rolling_background_subtract(movie: Movie, window: int = 200, mode: str = "blocked") -> Movie:
    """Subtract the mean over groups of consecutive frames, clamp at zero.

    "blocked" (default) averages non-overlapping blocks of ``window``
    frames, the final partial block over its own length; "sliding" uses a
    centered window truncated at the movie edges. Static speckle is
    time-invariant, so either removes it exactly.
    """
    if window < 1:
        raise ConfigError("window must be >= 1")
    if mode not in ("blocked", "sliding"):
        raise ConfigError(f"unknown background mode {mode!r}")
    stack = movie.pixel_stack().astype(float)
    n = len(stack)
    residual = np.empty_like(stack)
    if mode == "blocked":
        for start in range(0, n, window):
            block = stack[start : start + window]
            residual[start : start + window] = block - block.mean(axis=0)
    else:
        half = window // 2
        cumsum = np.cumsum(np.concatenate([np.zeros((1,) + stack.shape[1:]), stack]), axis=0)
        for i in range(n):
            lo = max(0, i - half)
            hi = min(n, lo + window)
            lo = max(0, hi - window)
            residual[i] = stack[i] - (cumsum[hi] - cumsum[lo]) / (hi - lo)
    residual = np.maximum(residual, 0.0)
    frames = [
        Frame(pixels=residual[i], exposure=f.exposure, timestamp=f.timestamp, meta=dict(f.meta))
        for i, f in enumerate(movie.frames)
    ]
    meta = dict(movie.meta)
    meta["background_window"] = window
    meta["background_mode"] = mode
    return Movie(frames=frames, meta=meta, static_scene_seed=movie.static_scene_seed)


def normalize(frame):
    """Scale a frame by its maximum to [0, 1] float32 (max exactly 1)."""
    if isinstance(frame, Frame):
        out = normalize(frame.pixels)
        return Frame(pixels=out, exposure=frame.exposure, timestamp=frame.timestamp, meta=dict(frame.meta))
    pixels = np.asarray(frame, dtype=float)
    peak = pixels.max() if pixels.size else 0.0
    if peak <= 0:
        raise DataError("empty frame: normalization requires a nonzero pixel")
    return (pixels / peak).astype(np.float32)


def split_dataset(manifest: DatasetManifest, seed: int) -> DatasetManifest:
    """Assign splits: per-class randomized 8:1:1 over Version-1 frames.

    Version-2 frames all go to "independent". Deterministic under the
    seed; a class without Version-1 frames is an error.
    """
    new_entries = list(manifest.entries)
    index_of = {id(e): i for i, e in enumerate(manifest.entries)}
    for label in manifest.classes:
        v1 = [e for e in manifest.for_class(label) if e.version == 1]
        if not v1:
            raise DataError(f"class {label!r} has no Version-1 frames to split")
        order = substream(seed, "split", label).permutation(len(v1))
        n = len(v1)
        n_test = n // 10
        n_val = n // 10
        for rank, idx in enumerate(order):
            if rank < n_test:
                split = "test"
            elif rank < n_test + n_val:
                split = "val"
            else:
                split = "train"
            entry = v1[idx]
            new_entries[index_of[id(entry)]] = replace(entry, split=split)
    for i, e in enumerate(new_entries):
        if e.version >= 2:
            new_entries[i] = replace(e, split="independent")
    return DatasetManifest(
        entries=new_entries,
        classes=manifest.classes,
        protocol_tag=manifest.protocol_tag,
        split_seed=seed,
        root=manifest.root,
    )


def lot_sample(
    template: SuspensionSample,
    class_label: str,
    lot: int,
    master_seed: int,
    jitter: float = 0.03,
) -> SuspensionSample:
    """Realize one lot: jitter mobile populations, fix identity and seed.

    Each lot perturbs median radius and number density of the mobile
    populations by independent multiplicative factors uniform in
    [1 - jitter, 1 + jitter]; the immobile glass background belongs to
    the cuvette, not the milk, and is left untouched.
    """
    rng = substream(master_seed, "lot", class_label, lot)
    populations = []
    for pop in template.populations:
        if pop.mobile and jitter > 0:
            populations.append(
                dataclasses.replace(
                    pop,
                    median_radius=pop.median_radius * (1 + rng.uniform(-jitter, jitter)),
                    number_density=pop.number_density * (1 + rng.uniform(-jitter, jitter)),
                )
            )
        else:
            populations.append(pop)
    return dataclasses.replace(
        template,
        populations=populations,
        class_label=class_label,
        lot_id=f"lot{lot}",
        seed=stream_key(master_seed, "sample", class_label, lot) % 2**63,
    )


def generate_dataset(
    class_templates: dict[str, SuspensionSample],
    protocol: ExposureProtocol,
    counts: DatasetCounts,
    optics: OpticalConfig,
    seed: int,
    out_dir,
    background_window: int = 200,
    background_mode: str = "blocked",
    jitter: float = 0.03,
) -> DatasetManifest:
    """Record, preprocess, and persist movies for every class/lot/version/location.

    Returns the split manifest; also writes it (plus a dataset sidecar
    and per-movie metadata) under ``out_dir``.
    """
    if not protocol.covers(class_templates):
        missing = [c for c in class_templates if c not in protocol.schedule]
        raise ConfigError(f"protocol {protocol.tag} missing classes {missing}")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    entries: list[ManifestEntry] = []
    summary: dict[str, dict] = {}
    for label, template in class_templates.items():
        exposures = protocol.exposures_for_lots(label, counts.lots)
        for lot in range(counts.lots):
            sample = lot_sample(template, label, lot, seed, jitter)
            exposure = exposures[lot]
            for version in range(1, counts.versions + 1):
                for loc in range(counts.locations):
                    location_seed = stream_key(seed, "location", label, lot, version, loc) % 2**63
                    movie = record_movie(sample, optics, exposure, counts.frames_per_movie, location_seed)
                    movie = rolling_background_subtract(movie, background_window, background_mode)
                    movie_dir = root / label / f"lot{lot}" / f"v{version}" / f"loc{loc}"
                    movie_dir.mkdir(parents=True, exist_ok=True)
                    for i, frame in enumerate(movie.frames):
                        processed = normalize(frame.pixels)
                        rel = f"{label}/lot{lot}/v{version}/loc{loc}/frame_{i:04d}.spkl"
                        write_frame(root / rel, processed)
                        entries.append(ManifestEntry(rel, label, lot, version, loc, i))
                    meta = dict(movie.meta)
                    meta.update(version=version, location=loc, protocol=protocol.tag)
                    meta["particle_counts"] = ";".join(
                        f"{k}:{v}" for k, v in sorted(meta.pop("particle_counts", {}).items())
                    )
                    meta["warnings"] = ";".join(meta.pop("warnings", []))
                    write_meta(movie_dir / "meta.txt", meta)
                    key = f"{label}/lot{lot}"
                    summary.setdefault(key, {"exposure": exposure, "gain": movie.meta["gain"]})

    manifest = DatasetManifest(
        entries=entries,
        classes=tuple(class_templates),
        protocol_tag=protocol.tag,
        split_seed=seed,
        root=root,
    )
    manifest = split_dataset(manifest, seed)
    manifest.write(root / MANIFEST_NAME)
    write_meta(
        root / "dataset.txt",
        {
            "protocol": protocol.tag,
            "classes": ",".join(class_templates),
            "lots": counts.lots,
            "versions": counts.versions,
            "locations": counts.locations,
            "frames_per_movie": counts.frames_per_movie,
            "seed": seed,
            "split_seed": seed,
            "background_window": background_window,
            "background_mode": background_mode,
        },
    )
    return manifest


def verify_dataset(root) -> list[str]:
    """Check manifest partition invariants and frame file integrity.

    Returns a list of human-readable problems (empty when the dataset is
    sound).
    """
    root = Path(root)
    problems: list[str] = []
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        return [f"missing {MANIFEST_NAME}"]
    manifest = DatasetManifest.read(manifest_path)

    seen: set[str] = set()
    for e in manifest.entries:
        if e.path in seen:
            problems.append(f"duplicate manifest path {e.path}")
        seen.add(e.path)
        if e.split not in SPLITS:
            problems.append(f"{e.path}: unknown split {e.split!r}")
        if e.version >= 2 and e.split != "independent":
            problems.append(f"{e.path}: version {e.version} frame not in independent split")
        if e.version == 1 and e.split == "independent":
            problems.append(f"{e.path}: version 1 frame in independent split")

    for label in manifest.classes:
        v1 = [e for e in manifest.for_class(label) if e.version == 1]
        n = len(v1)
        if n == 0:
            problems.append(f"class {label}: no version-1 frames")
            continue
        n_test = sum(1 for e in v1 if e.split == "test")
        n_val = sum(1 for e in v1 if e.split == "val")
        n_train = sum(1 for e in v1 if e.split == "train")
        if n_train + n_val + n_test != n:
            problems.append(f"class {label}: splits do not partition version-1 frames")
        if n_test != n // 10 or n_val != n // 10:
            problems.append(f"class {label}: split proportions deviate from 8:1:1")

    shape = None
    for e in manifest.entries:
        fpath = root / e.path
        if not fpath.exists():
            problems.append(f"missing frame file {e.path}")
            continue
        try:
            pixels = read_frame(fpath)
        except DataError as exc:
            problems.append(str(exc))
            continue
        if shape is None:
            shape = pixels.shape
        elif pixels.shape != shape:
            problems.append(f"{e.path}: shape {pixels.shape} differs from {shape}")
        if pixels.dtype == np.float32:
            lo, hi = float(pixels.min()), float(pixels.max())
            if lo < 0 or hi > 1 or not math.isfinite(lo) or not math.isfinite(hi):
                problems.append(f"{e.path}: processed values outside [0, 1]")
    return problems
