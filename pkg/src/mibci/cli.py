"""``mibci`` command line: fetch, preprocess, build-dataset, train, eval,
infer-live (plus ``manifest`` to build a manifest from a checksum list).

Every stage reads the same config file. Outputs land under
``paths.output_dir``::

    epochs/<subject>/<run>/images.npy   raw TFR images, one per epoch
    epochs/<subject>/<run>/epochs.csv   index,onset_s,label
    dataset/                            four CSV files plus sidecars
    model.bin, curve.csv                trained model and learning curve
    eval.txt, eval.csv                  evaluation report
    live/<subject>_<run>.txt/.csv       simulated live session

Failures print a single ``mibci: error=<Kind> ... msg="..."`` line on stderr
and exit non-zero (2 for configuration problems, 1 otherwise).
"""

from __future__ import annotations

import argparse
import io
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cnn import build_model, load_model, save_model
from .config import RunConfig, load_config
from .dataset import (
    DEFAULT_CLASSES,
    FILES,
    LabeledSample,
    build_split,
    export_csv,
    fmt_float,
    import_csv,
    label_mapping,
    recording_samples,
)
from .edf import read_edf
from .errors import ConfigError, MibciError, MissingArtifact, ShapeMismatch
from .fetch import (
    PHYSIONET_BASE,
    DatasetManifest,
    ManifestEntry,
    atomic_write,
    cache_path,
    eligible_runs,
    fetch_run,
    manifest_from_sha256sums,
    url_transport,
)
from .live import run_session
from .train import diagnose_overfitting, emit_curve_csv, evaluate, train

log = logging.getLogger("mibci")

MODEL_FILE = "model.bin"
CURVE_FILE = "curve.csv"
EPOCH_HEADER = "index,onset_s,label"
_RUN_PATH = re.compile(r"\*?((S\d{3})/S\d{3}(R\d{2})\.edf)\s*$")


# ---------------------------------------------------------------------------
# helpers

def _manifest(cfg: RunConfig) -> DatasetManifest:
    path = cfg["dataset.manifest"]
    if path is None:
        raise ConfigError("dataset.manifest", "required for this command")
    return DatasetManifest.load(path)


def selected_runs(cfg: RunConfig, manifest: DatasetManifest) -> list[ManifestEntry]:
    subjects = cfg["dataset.subjects"] or tuple(dict.fromkeys(e.subject for e in manifest))
    out = []
    for subject in subjects:
        runs = cfg["dataset.runs"] or tuple(manifest.runs_for(subject))
        for run in runs:
            if (subject, run) not in manifest:
                raise ConfigError("dataset.runs", f"{subject} {run} is not in the manifest")
            out.append(manifest[subject, run])
    if not out:
        raise ConfigError("dataset.subjects", "selection matches no manifest entries")
    return out


def _cached(entry: ManifestEntry, cfg: RunConfig) -> Path:
    path = cache_path(entry, cfg.cache_dir)
    if not path.is_file():
        raise MissingArtifact(path, "fetch")
    return path


def _epoch_dir(cfg: RunConfig, entry: ManifestEntry) -> Path:
    return cfg.output_dir / "epochs" / entry.subject / entry.run


def _require(path: Path, stage: str) -> Path:
    if not path.is_file():
        raise MissingArtifact(path, stage)
    return path


def _npy_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, array, allow_pickle=False)
    return buf.getvalue()


def _out(text: str):
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    sys.stdout.flush()


# ---------------------------------------------------------------------------
# commands

def cmd_fetch(cfg: RunConfig, args) -> int:
    manifest = _manifest(cfg)
    for entry in selected_runs(cfg, manifest):
        data = fetch_run(manifest, entry.subject, entry.run, cfg.cache_dir, transport=url_transport)
        _out(f"fetched subject={entry.subject} run={entry.run} bytes={len(data)} "
             f"path={cache_path(entry, cfg.cache_dir)}")
    return 0


def cmd_preprocess(cfg: RunConfig, args) -> int:
    params = cfg.dsp_params()
    scout = cfg.scout()
    dims = cfg.image_dims()
    for entry in selected_runs(cfg, _manifest(cfg)):
        rec = read_edf(_cached(entry, cfg), entry.subject, entry.run)
        samples = recording_samples(rec, scout, params, DEFAULT_CLASSES)
        images = (np.stack([s.image for s in samples]) if samples
                  else np.zeros((0, *dims)))
        rows = [EPOCH_HEADER] + [f"{i},{fmt_float(s.source[2])},{s.label_name}"
                                 for i, s in enumerate(samples)]
        out = _epoch_dir(cfg, entry)
        atomic_write(out / "images.npy", _npy_bytes(images.astype("<f8")))
        atomic_write(out / "epochs.csv", ("\n".join(rows) + "\n").encode("ascii"))
        _out(f"preprocessed subject={entry.subject} run={entry.run} epochs={len(samples)} "
             f"ignored_annotations={rec.n_ignored_annotations}")
    return 0


def _load_epochs(cfg: RunConfig, entry: ManifestEntry) -> list[tuple[np.ndarray, float, str]]:
    d = _epoch_dir(cfg, entry)
    images = np.load(_require(d / "images.npy", "preprocess"), allow_pickle=False)
    lines = _require(d / "epochs.csv", "preprocess").read_text().splitlines()
    if not lines or lines[0] != EPOCH_HEADER or len(lines) - 1 != len(images):
        raise ShapeMismatch(f"{d}: epochs.csv does not match images.npy (re-run `preprocess`)")
    if images.shape[1:] != cfg.image_dims():
        raise ShapeMismatch(f"{d}: images are {images.shape[1:]}, config expects "
                            f"{cfg.image_dims()} (re-run `preprocess`)")
    out = []
    for img, line in zip(images, lines[1:]):
        _, onset, label = line.split(",")
        out.append((np.array(img, dtype=np.float64), float(onset), label))
    return out


def cmd_build_dataset(cfg: RunConfig, args) -> int:
    names = cfg.class_names
    mapping = label_mapping(names)
    samples = []
    for entry in selected_runs(cfg, _manifest(cfg)):
        for image, onset, label in _load_epochs(cfg, entry):
            if label in mapping:
                idx = mapping[label]
                samples.append(LabeledSample(image, idx, names[idx], (entry.subject, entry.run, onset)))
    split = build_split(samples, cfg["dataset.test_fraction"], cfg["dataset.split_seed"], names)
    export_csv(split, cfg.output_dir / "dataset")
    _out(f"dataset train={len(split.train)} test={len(split.test)} classes={','.join(names)}")
    return 0


def _load_split(cfg: RunConfig):
    d = cfg.output_dir / "dataset"
    for name in FILES:
        _require(d / name, "build-dataset")
    return import_csv(d, cfg.image_dims(), cfg.class_names)


def cmd_train(cfg: RunConfig, args) -> int:
    split = _load_split(cfg)
    tcfg = cfg.train_config()
    model = build_model(cfg.layers(), (1, *cfg.image_dims()), cfg["model.seed"],
                        class_names=split.class_names, norm_stats=split.norm_stats)
    model, curve = train(model, split, tcfg, log_line=_out)
    diagnosis = diagnose_overfitting(curve)
    metadata = {
        "train": {k.split(".", 1)[1]: v for k, v in cfg.values.items() if k.startswith("train.")},
        "dsp": {k.split(".", 1)[1]: v for k, v in cfg.values.items()
                if k.startswith("dsp.") and k != "dsp.scout_file"},
        "split_seed": cfg["dataset.split_seed"],
        "best_epoch": curve.best_epoch,
        "diagnosis": diagnosis,
    }
    model_path = Path(args.model) if args.model else cfg.output_dir / MODEL_FILE
    save_model(model, model_path, metadata)
    emit_curve_csv(curve, cfg.output_dir / CURVE_FILE)
    _out(f"trained epochs={len(curve)} diagnosis={diagnosis} model={model_path}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    model_path = Path(args.model) if args.model else cfg.output_dir / MODEL_FILE
    model = load_model(_require(model_path, "train"))
    split = _load_split(cfg)
    samples = {"test": split.test, "train": split.train, "all": split.train + split.test}[args.split]
    report = evaluate(model, samples)
    stem = cfg.output_dir / ("eval" if args.split == "test" else f"eval_{args.split}")
    atomic_write(stem.with_suffix(".txt"), report.to_text().encode("ascii"))
    atomic_write(stem.with_suffix(".csv"), report.to_csv().encode("ascii"))
    _out(report.to_text())
    return 0


def cmd_infer_live(cfg: RunConfig, args) -> int:
    model_path = Path(args.model) if args.model else cfg.output_dir / MODEL_FILE
    _require(model_path, "train")
    manifest = _manifest(cfg)
    subject = args.subject or cfg["live.subject"]
    run = args.run or cfg["live.run"]
    if subject and run:
        if (subject, run) not in manifest:
            raise ConfigError("live.run", f"{subject} {run} is not in the manifest")
        entry = manifest[subject, run]
    else:
        entry = selected_runs(cfg, manifest)[0]
    rec = read_edf(_cached(entry, cfg), entry.subject, entry.run)
    report_path = cfg.output_dir / "live" / f"{entry.subject}_{entry.run}.txt"
    report = run_session(model_path, rec, cfg.scout(), cfg.dsp_params(), report_path,
                         label_policy=cfg["live.label_policy"])
    _out(report.to_text())
    return 0


def cmd_manifest(args) -> int:
    sums = Path(args.sums).read_text()
    if args.all_files:
        selection = []
        for line in sums.splitlines():
            m = _RUN_PATH.search(line)
            if m:
                selection.append((m.group(2), m.group(3), m.group(1)))
    else:
        selection = eligible_runs()
    manifest = manifest_from_sha256sums(sums, selection, base_url=args.base_url)
    atomic_write(Path(args.output), manifest.dumps().encode("ascii"))
    _out(f"manifest entries={len(manifest)} path={args.output}")
    return 0


COMMANDS = {
    "fetch": (cmd_fetch, "download and verify the selected runs into the cache"),
    "preprocess": (cmd_preprocess, "epoch cached recordings into TFR images"),
    "build-dataset": (cmd_build_dataset, "split images into the four-file CSV dataset"),
    "train": (cmd_train, "train a model and write model.bin and curve.csv"),
    "eval": (cmd_eval, "evaluate a trained model on the dataset"),
    "infer-live": (cmd_infer_live, "replay one run through a restored model"),
}


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mibci", description="Motor-imagery EEG classification pipeline.")
    parser.add_argument("--version", action="version", version=f"mibci {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name in ("train", "eval", "infer-live"):
            p.add_argument("--model", help=f"model file (default <output_dir>/{MODEL_FILE})")
        if name == "eval":
            p.add_argument("--split", choices=("test", "train", "all"), default="test")
        if name == "infer-live":
            p.add_argument("--subject")
            p.add_argument("--run")

    p = sub.add_parser("manifest", help="build a manifest from a SHA256SUMS listing")
    p.add_argument("--sums", required=True, help="checksum file (`<sha256>  <relative path>` lines)")
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--base-url", default=PHYSIONET_BASE)
    p.add_argument("--all-files", action="store_true",
                   help="include every listed EDF file, not only the eligible runs")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _error_line(exc: BaseException) -> str:
    parts = [f"error={type(exc).__name__}"]
    if isinstance(exc, ConfigError):
        parts.append(f"field={exc.field}")
    if isinstance(exc, MissingArtifact):
        parts.append(f"path={exc.path}")
        if exc.stage:
            parts.append(f"stage={exc.stage}")
    msg = " ".join(str(exc).split()).replace('"', "'")
    parts.append(f'msg="{msg}"')
    return "mibci: " + " ".join(parts)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "manifest":
            return cmd_manifest(args)
        cfg = load_config(args.config, args.overrides)
        return COMMANDS[args.command][0](cfg, args)
    except ConfigError as exc:
        print(_error_line(exc), file=sys.stderr)
        return 2
    except (MibciError, OSError, ValueError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
