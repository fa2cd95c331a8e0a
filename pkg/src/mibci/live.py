"""Simulated live inference: replay a recording window by window through a
restored model."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cnn import Model, load_model
from .dataset import fmt_float, label_mapping
from .dsp import DspParams, NormStats, ScoutSpec, epoch_by_annotations, normalize_tfr, scout_project, window_image
from .edf import Recording
from .errors import InvalidSpec, ShapeMismatch, TooShort
from .fetch import atomic_write

POLICIES = ("annotation", "stride")
EVENT_COLUMNS = ("t", "pred", "conf", "true", "latency_s")


@dataclass
class StreamChunk:
    samples: np.ndarray
    sample_rate_hz: float
    t_start_s: float
    true_label: str | None = None


@dataclass
class InferenceEvent:
    t_start_s: float
    predicted_label: str
    confidence: float
    true_label: str | None
    latency_s: float
    probabilities: tuple[float, ...] = ()

    @property
    def correct(self) -> bool | None:
        return None if self.true_label is None else self.predicted_label == self.true_label

    def fields(self) -> list[str]:
        return [fmt_float(self.t_start_s), self.predicted_label, fmt_float(self.confidence),
                self.true_label or "-", fmt_float(self.latency_s)]

    def line(self) -> str:
        return " ".join(f"{k}={v}" for k, v in zip(EVENT_COLUMNS, self.fields()))


@dataclass
class SessionReport:
    events: list[InferenceEvent] = field(default_factory=list)

    @property
    def labelled(self) -> list[InferenceEvent]:
        return [e for e in self.events if e.true_label is not None]

    @property
    def n_total(self) -> int:
        return len(self.labelled)

    @property
    def n_correct(self) -> int:
        return sum(1 for e in self.labelled if e.correct)

    @property
    def accuracy(self) -> float | None:
        return None if self.n_total == 0 else self.n_correct / self.n_total

    def per_class(self) -> dict[str, tuple[int, int]]:
        """``true label -> (n, n_correct)`` in order of first appearance."""
        out: dict[str, list[int]] = {}
        for e in self.labelled:
            row = out.setdefault(e.true_label, [0, 0])
            row[0] += 1
            row[1] += bool(e.correct)
        return {k: (n, c) for k, (n, c) in out.items()}

    def summary(self) -> str:
        acc = "undefined" if self.accuracy is None else fmt_float(self.accuracy)
        parts = [f"summary n_events={len(self.events)} n_total={self.n_total} "
                 f"n_correct={self.n_correct} accuracy={acc}"]
        for label, (n, c) in self.per_class().items():
            parts.append(f"class={label} n={n} correct={c} accuracy={fmt_float(c / n)}")
        return " ".join(parts)

    def to_text(self) -> str:
        return "".join(e.line() + "\n" for e in self.events) + self.summary() + "\n"

    def to_csv(self) -> str:
        rows = [",".join(EVENT_COLUMNS)] + [",".join(e.fields()) for e in self.events]
        return "\n".join(rows) + "\n"

    def write(self, path) -> tuple[Path, Path]:
        """Write the text report to ``path`` and the CSV beside it."""
        path = Path(path)
        csv_path = path.with_suffix(".csv")
        atomic_write(path, self.to_text().encode("ascii"))
        atomic_write(csv_path, self.to_csv().encode("ascii"))
        return path, csv_path


# ---------------------------------------------------------------------------

def replay(rec: Recording, scout: ScoutSpec, window_s: float, label_policy: str = "annotation",
           offset_s: float = 0.0) -> list[StreamChunk]:
    """Cut a recording into the chunks a live session would receive.

    ``annotation`` yields one chunk per annotation that admits a full window
    (the same rule as dataset epoching) and labels it. ``stride`` walks the
    recording in consecutive non-overlapping windows and labels a chunk only
    when it lies entirely inside one annotation.
    """
    if label_policy not in POLICIES:
        raise ValueError(f"label_policy must be one of {POLICIES}, got {label_policy!r}")
    rate = rec.sample_rate_hz
    n = int(round(window_s * rate))
    if n < 1 or n > rec.n_samples:
        raise TooShort(f"recording has {rec.n_samples} samples; window needs {n}")
    series = scout_project(rec, scout)

    if label_policy == "annotation":
        return [StreamChunk(ep.samples, rate, ep.source[2] + offset_s, ep.label)
                for ep in epoch_by_annotations(rec, series, window_s, offset_s)]

    chunks = []
    for i0 in range(0, rec.n_samples - n + 1, n):
        t0 = i0 / rate
        t1 = (i0 + n) / rate
        label = next((a.label for a in rec.annotations
                      if a.onset_s <= t0 + 1e-9 and t1 <= a.end_s + 1e-9), None)
        chunks.append(StreamChunk(series[i0:i0 + n].copy(), rate, t0, label))
    return chunks


def chunk_image(chunk: StreamChunk, params: DspParams, stats: NormStats | None) -> np.ndarray:
    img = window_image(chunk.samples, chunk.sample_rate_hz, params)
    if stats is None:
        stats = NormStats.identity(img.power.shape[0])
    return normalize_tfr(img, stats)


def classify_chunk(model: Model, chunk: StreamChunk, params: DspParams,
                   norm_stats: NormStats | None = None,
                   clock: Callable[[], float] = time.perf_counter) -> InferenceEvent:
    """Band-pass, transform, normalise and classify one chunk in eval mode.

    ``norm_stats`` defaults to the statistics stored with the model.
    """
    start = clock()
    stats = model.norm_stats if norm_stats is None else norm_stats
    image = chunk_image(chunk, params, stats)
    if (1, *image.shape) != tuple(model.input_shape):
        raise ShapeMismatch(f"chunk image {image.shape} vs model input {tuple(model.input_shape)}")
    probs = np.asarray(model.forward(image, train=False), dtype=np.float64)
    k = int(np.argmax(probs))
    latency = max(0.0, clock() - start)
    return InferenceEvent(chunk.t_start_s, model.class_names[k], float(probs[k]), chunk.true_label,
                          latency, tuple(float(p) for p in probs))


def classify_session(model: Model, chunks: Sequence[StreamChunk], params: DspParams,
                     norm_stats: NormStats | None = None,
                     clock: Callable[[], float] = time.perf_counter) -> SessionReport:
    return SessionReport([classify_chunk(model, c, params, norm_stats, clock) for c in chunks])


def run_session(model_path, rec: Recording, scout: ScoutSpec, params: DspParams,
                report_path=None, label_policy: str = "annotation",
                clock: Callable[[], float] = time.perf_counter) -> SessionReport:
    """Restore a model from disk and classify every chunk of ``rec``.

    Chunk labels are compared against the model's class names, so a
    recording annotated T0/T2 replayed through a ``rest``/``T1`` model has
    its labels folded into ``rest``.
    """
    model = load_model(model_path)
    chunks = replay(rec, scout, params.window_s, label_policy, params.offset_s)
    try:
        mapping = label_mapping(model.class_names)
    except InvalidSpec:
        mapping = None  # class names are not task labels; keep chunk labels as they are
    if mapping is not None:
        for c in chunks:
            if c.true_label is not None:
                idx = mapping.get(c.true_label)
                c.true_label = None if idx is None else model.class_names[idx]
    report = classify_session(model, chunks, params, clock=clock)
    if report_path is not None:
        report.write(report_path)
    return report
