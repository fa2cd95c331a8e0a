"""Labelled image sets, stratified splitting and the four-file CSV layout.

CSV layout (no header, comma separated, ``\\n`` terminated)::

    train_data.csv    one row-major flattened image per line
    train_labels.csv  one integer class index per line, same order
    test_data.csv
    test_labels.csv

Two optional sidecars travel with them: ``classes.txt`` (one class name per
line, in index order) and ``norm_stats.csv`` (one ``mean,std`` line per image
row).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dsp import DspParams, NormStats, ScoutSpec, epoch_by_annotations, normalize_tfr, scout_project, window_image
from .edf import TASK_LABELS, Recording
from .errors import (
    ClassTooSmall,
    InvalidSpec,
    LabelOutOfRange,
    MissingArtifact,
    ParseError,
    ShapeMismatch,
)
from .fetch import atomic_write
from .rng import Rng

DEFAULT_CLASSES = ("T0", "T1", "T2")
FILES = ("train_data.csv", "train_labels.csv", "test_data.csv", "test_labels.csv")


@dataclass
class LabeledSample:
    image: np.ndarray
    label: int
    label_name: str
    source: tuple  # (subject, run, onset_s)


@dataclass
class DatasetSplit:
    train: list[LabeledSample]
    test: list[LabeledSample]
    class_names: tuple[str, ...]
    norm_stats: NormStats | None = None
    seed: int | None = None
    label_map: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        self.label_map = {name: i for i, name in enumerate(self.class_names)}
        if not self.train or not self.test:
            raise ValueError("both train and test splits must be non-empty")
        dims = self.image_dims
        for s in self.train + self.test:
            if s.image.shape != dims:
                raise ShapeMismatch(f"image {s.image.shape} differs from {dims}")
            if not 0 <= s.label < len(self.class_names):
                raise LabelOutOfRange(f"label {s.label} with {len(self.class_names)} classes")
        overlap = {s.source for s in self.train} & {s.source for s in self.test}
        if overlap:
            raise ValueError(f"{len(overlap)} source key(s) appear in both train and test")

    @property
    def image_dims(self) -> tuple[int, int]:
        return self.train[0].image.shape

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def fmt_float(x: float) -> str:
    """Shortest decimal that round-trips to the same double; integral
    values lose the trailing ``.0``."""
    text = repr(float(x))
    return text[:-2] if text.endswith(".0") else text


def build_split(samples: Sequence[LabeledSample], test_fraction: float, seed: int,
                class_names: Sequence[str] | None = None) -> DatasetSplit:
    """Stratified, seeded train/test split with train-only normalisation.

    Each class contributes ``round(test_fraction * n)`` samples to the test
    set, clamped to ``[1, n - 1]``. Shuffling uses :class:`mibci.rng.Rng`, so
    a seed gives the same membership on every platform. Images are expected
    raw (pre-normalisation); per-row statistics are taken from the training
    images only and applied to both partitions.
    """
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if class_names is None:
        names = {s.label: s.label_name for s in samples}
        class_names = [names[i] for i in sorted(names)]
    class_names = tuple(class_names)
    sources = [s.source for s in samples]
    if len(set(sources)) != len(sources):
        raise ValueError("duplicate source keys in samples")

    by_class: dict[int, list[LabeledSample]] = {i: [] for i in range(len(class_names))}
    for s in samples:
        if s.label not in by_class:
            raise LabelOutOfRange(f"label {s.label} with {len(class_names)} classes")
        by_class[s.label].append(s)

    rng = Rng(seed)
    train, test = [], []
    for label in sorted(by_class):
        members = sorted(by_class[label], key=lambda s: s.source)
        n = len(members)
        if n < 2:
            raise ClassTooSmall(f"class {class_names[label]} has {n} sample(s); need >= 2")
        n_test = min(max(1, math.floor(test_fraction * n + 0.5)), n - 1)
        order = rng.permutation(n)
        test += [members[i] for i in order[:n_test]]
        train += [members[i] for i in order[n_test:]]

    stats = NormStats.from_images([s.image for s in train])

    def norm(s):
        return LabeledSample(normalize_tfr(s.image, stats), s.label, s.label_name, s.source)

    return DatasetSplit([norm(s) for s in train], [norm(s) for s in test], class_names,
                        stats, seed)


def label_mapping(class_names: Sequence[str]) -> dict[str, int]:
    """Map annotation labels to class indices.

    Task labels (``T0``, ``T1``, ``T2``) map to themselves. At most one other
    name may appear; it collects every task label not listed, so
    ``("rest", "T1")`` gives a binary T1-versus-rest problem.
    """
    names = tuple(class_names)
    if len(names) < 2 or len(set(names)) != len(names):
        raise InvalidSpec(f"need at least two distinct class names, got {names}")
    catch_all = [n for n in names if n not in TASK_LABELS]
    if len(catch_all) > 1:
        raise InvalidSpec(f"only one catch-all class allowed, got {catch_all}")
    mapping = {n: i for i, n in enumerate(names) if n in TASK_LABELS}
    if catch_all:
        idx = names.index(catch_all[0])
        for label in TASK_LABELS:
            mapping.setdefault(label, idx)
    return mapping


def recording_samples(rec: Recording, scout: ScoutSpec, params: DspParams,
                      class_names: Sequence[str] = DEFAULT_CLASSES) -> list[LabeledSample]:
    """Raw (unnormalised) labelled TFR images, one per qualifying annotation.

    Annotations whose label has no class in ``class_names`` are dropped.
    """
    mapping = label_mapping(class_names)
    series = scout_project(rec, scout)
    out = []
    for ep in epoch_by_annotations(rec, series, params.window_s, params.offset_s):
        if ep.label not in mapping:
            continue
        idx = mapping[ep.label]
        img = window_image(ep.samples, ep.sample_rate_hz, params)
        out.append(LabeledSample(img.power, idx, class_names[idx], ep.source))
    return out


# ---------------------------------------------------------------------------
# CSV interchange

def _data_text(samples):
    return "".join(",".join(fmt_float(v) for v in s.image.reshape(-1)) + "\n" for s in samples)


def _label_text(samples):
    return "".join(f"{s.label}\n" for s in samples)


def export_csv(split: DatasetSplit, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    texts = {
        "train_data.csv": _data_text(split.train),
        "train_labels.csv": _label_text(split.train),
        "test_data.csv": _data_text(split.test),
        "test_labels.csv": _label_text(split.test),
        "classes.txt": "".join(f"{c}\n" for c in split.class_names),
    }
    if split.norm_stats is not None:
        texts["norm_stats.csv"] = "".join(
            f"{fmt_float(m)},{fmt_float(s)}\n"
            for m, s in zip(split.norm_stats.mean, split.norm_stats.std))
    paths = []
    for name, text in texts.items():
        atomic_write(directory / name, text.encode("ascii"))
        paths.append(directory / name)
    return paths[:4]


def _read_lines(path: Path) -> list[str]:
    if not path.exists():
        raise MissingArtifact(path, "build-dataset")
    text = path.read_text()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _read_data(path: Path, dims) -> list[np.ndarray]:
    rows, cols = dims
    out = []
    for k, line in enumerate(_read_lines(path), 1):
        fields = line.split(",")
        if len(fields) != rows * cols:
            raise ShapeMismatch(f"{path.name}: {len(fields)} fields, expected {rows * cols}", line=k)
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise ParseError(f"{path.name}: non-numeric field", line=k) from None
        out.append(np.array(values, dtype=np.float64).reshape(rows, cols))
    return out


def _read_labels(path: Path, n_classes: int) -> list[int]:
    out = []
    for k, line in enumerate(_read_lines(path), 1):
        try:
            label = int(line.strip())
        except ValueError:
            raise ParseError(f"{path.name}: not an integer label: {line!r}", line=k) from None
        if not 0 <= label < n_classes:
            raise LabelOutOfRange(f"{path.name}: label {label} with {n_classes} classes", line=k)
        out.append(label)
    return out


def import_csv(directory, image_dims, class_names: Sequence[str] | None = None) -> DatasetSplit:
    """Read the four-file layout back into a :class:`DatasetSplit`.

    Class names come from ``class_names``, else ``classes.txt``, else the
    default T0/T1/T2. Normalisation statistics come from ``norm_stats.csv``
    when present; otherwise identity statistics are assumed. Imported samples
    get synthetic source keys ``("csv", partition, line_index)``.
    """
    directory = Path(directory)
    if class_names is None:
        sidecar = directory / "classes.txt"
        class_names = _read_lines(sidecar) if sidecar.exists() else DEFAULT_CLASSES
    class_names = tuple(class_names)

    parts = {}
    for part in ("train", "test"):
        data = _read_data(directory / f"{part}_data.csv", image_dims)
        labels = _read_labels(directory / f"{part}_labels.csv", len(class_names))
        if len(data) != len(labels):
            raise ShapeMismatch(f"{part}: {len(data)} images but {len(labels)} labels")
        parts[part] = [LabeledSample(img, lab, class_names[lab], ("csv", part, i))
                       for i, (img, lab) in enumerate(zip(data, labels))]

    stats_path = directory / "norm_stats.csv"
    if stats_path.exists():
        pairs = []
        for k, line in enumerate(_read_lines(stats_path), 1):
            try:
                m, s = (float(v) for v in line.split(","))
            except ValueError:
                raise ParseError("norm_stats.csv: expected 'mean,std'", line=k) from None
            pairs.append((m, s))
        if len(pairs) != image_dims[0]:
            raise ShapeMismatch(f"norm_stats.csv has {len(pairs)} rows, images have {image_dims[0]}")
        stats = NormStats(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))
    else:
        stats = NormStats.identity(image_dims[0])
    return DatasetSplit(parts["train"], parts["test"], class_names, stats)
