"""Run configuration: one ``section.key = value`` file plus overrides.

Lines are ``key = value``; blank lines and ``#`` comments are ignored.
Relative paths in the file resolve against the file's directory, so a run is
fully described by its config. Precedence, lowest first: built-in defaults,
the file, the ``MIBCI_CACHE`` environment variable (cache directory only),
``--set key=value`` overrides. Everything is validated on load and problems
are reported as :class:`~mibci.errors.ConfigError` naming the offending key.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .cnn import Layer, Model, parse_architecture
from .dataset import DEFAULT_CLASSES, label_mapping
from .dsp import DspParams, FilterSpec, MorletParams, ScoutSpec, load_scouts
from .errors import ConfigError, MibciError
from .train import TrainConfig

CACHE_ENV = "MIBCI_CACHE"


def _int(v: str) -> int:
    return int(v)


def _float(v: str) -> float:
    x = float(v)
    if not np.isfinite(x):
        raise ValueError("must be finite")
    return x


def _str(v: str) -> str:
    return v


def _list(v: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in v.split(",") if p.strip())


_PATH = "path"  # marker: resolved against the config directory

# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable | str, object]] = {
    "dataset.manifest": (_PATH, None),
    "dataset.cache_dir": (_PATH, "cache"),
    "dataset.subjects": (_list, ()),
    "dataset.runs": (_list, ()),
    "dataset.classes": (_list, DEFAULT_CLASSES),
    "dataset.test_fraction": (_float, 0.2),
    "dataset.split_seed": (_int, 0),
    "dsp.low_hz": (_float, 5.0),
    "dsp.high_hz": (_float, 50.0),
    "dsp.order": (_int, 4),
    "dsp.center_freq_hz": (_float, 1.0),
    "dsp.fwhm_s": (_float, 3.0),
    "dsp.freq_min_hz": (_float, 8.0),
    "dsp.freq_max_hz": (_float, 30.0),
    "dsp.freq_step_hz": (_float, 1.0),
    "dsp.time_bins": (_int, 64),
    "dsp.window_s": (_float, 4.0),
    "dsp.offset_s": (_float, 0.0),
    "dsp.scout_file": (_PATH, None),
    "dsp.scout": (_str, "R5"),
    "model.architecture": (_str, "default"),
    "model.seed": (_int, 0),
    "train.batch_size": (_int, 32),
    "train.max_epochs": (_int, 100),
    "train.learning_rate": (_float, 1e-3),
    "train.seed": (_int, 0),
    "train.eval_every": (_int, 1),
    "train.early_stop_patience": (_int, 10),
    "live.subject": (_str, ""),
    "live.run": (_str, ""),
    "live.label_policy": (_str, "annotation"),
    "paths.output_dir": (_PATH, "out"),
}


def parse_pairs(text: str, origin: str = "<config>") -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{origin}:{n}", "expected `key = value`")
        out[key.strip()] = value.strip()
    return out


@dataclass
class RunConfig:
    values: dict
    base_dir: Path
    source: Path | None = None

    def __getitem__(self, key):
        return self.values[key]

    # -- derived objects -----------------------------------------------------

    @property
    def output_dir(self) -> Path:
        return self.values["paths.output_dir"]

    @property
    def cache_dir(self) -> Path:
        return self.values["dataset.cache_dir"]

    @property
    def class_names(self) -> tuple[str, ...]:
        return self.values["dataset.classes"]

    def filter_spec(self) -> FilterSpec:
        v = self.values
        return FilterSpec(v["dsp.low_hz"], v["dsp.high_hz"], v["dsp.order"])

    def morlet_params(self) -> MorletParams:
        v = self.values
        lo, hi, step = v["dsp.freq_min_hz"], v["dsp.freq_max_hz"], v["dsp.freq_step_hz"]
        n = int(np.floor((hi - lo) / step + 1e-9)) + 1
        freqs = tuple(float(lo + i * step) for i in range(n))
        return MorletParams(v["dsp.center_freq_hz"], v["dsp.fwhm_s"], freqs)

    def dsp_params(self) -> DspParams:
        v = self.values
        return DspParams(self.filter_spec(), self.morlet_params(), v["dsp.time_bins"],
                         v["dsp.window_s"], v["dsp.offset_s"])

    def scout(self) -> ScoutSpec:
        return load_scouts(self.values["dsp.scout_file"])[self.values["dsp.scout"]]

    def image_dims(self) -> tuple[int, int]:
        return (len(self.morlet_params().freqs_hz), self.values["dsp.time_bins"])

    def architecture_text(self) -> str:
        spec = self.values["model.architecture"]
        if spec.startswith("@"):
            return Path(self._path(spec[1:])).read_text()
        return spec

    def layers(self) -> list[Layer]:
        return parse_architecture(self.architecture_text(), (1, *self.image_dims()),
                                  len(self.class_names))

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(**{f: v[f"train.{f}"] for f in (
            "batch_size", "max_epochs", "learning_rate", "seed", "eval_every", "early_stop_patience")})

    def _path(self, value) -> Path:
        p = Path(value).expanduser()
        return p if p.is_absolute() else self.base_dir / p

    # -- validation ----------------------------------------------------------

    def validate(self):
        v = self.values
        if not v["dsp.low_hz"] > 0:
            raise ConfigError("dsp.low_hz", "must be > 0")
        if not v["dsp.low_hz"] < v["dsp.high_hz"]:
            raise ConfigError("dsp.low_hz", f"must be < dsp.high_hz ({v['dsp.high_hz']})")
        if v["dsp.order"] < 2 or v["dsp.order"] % 2:
            raise ConfigError("dsp.order", "must be an even integer >= 2")
        if not v["dsp.freq_step_hz"] > 0:
            raise ConfigError("dsp.freq_step_hz", "must be > 0")
        if not v["dsp.freq_min_hz"] <= v["dsp.freq_max_hz"]:
            raise ConfigError("dsp.freq_min_hz", "must be <= dsp.freq_max_hz")
        for key in ("dsp.center_freq_hz", "dsp.fwhm_s", "dsp.freq_min_hz", "dsp.window_s"):
            if not v[key] > 0:
                raise ConfigError(key, "must be > 0")
        if v["dsp.offset_s"] < 0:
            raise ConfigError("dsp.offset_s", "must be >= 0")
        if v["dsp.time_bins"] < 1:
            raise ConfigError("dsp.time_bins", "must be >= 1")
        if not 0 < v["dataset.test_fraction"] < 1:
            raise ConfigError("dataset.test_fraction", "must be in (0, 1)")
        if v["live.label_policy"] not in ("annotation", "stride"):
            raise ConfigError("live.label_policy", "must be `annotation` or `stride`")
        try:
            label_mapping(self.class_names)
        except MibciError as exc:
            raise ConfigError("dataset.classes", str(exc)) from None

        for key in ("dataset.manifest", "dsp.scout_file"):
            if v[key] is not None and not Path(v[key]).is_file():
                raise ConfigError(key, f"file not found: {v[key]}")
        try:
            scouts = load_scouts(v["dsp.scout_file"])
        except (MibciError, ValueError) as exc:
            raise ConfigError("dsp.scout_file", str(exc)) from None
        if v["dsp.scout"] not in scouts:
            raise ConfigError("dsp.scout", f"no scout named {v['dsp.scout']!r} "
                                           f"(have {', '.join(sorted(scouts))})")

        spec = v["model.architecture"]
        if spec.startswith("@") and not self._path(spec[1:]).is_file():
            raise ConfigError("model.architecture", f"file not found: {spec[1:]}")
        try:
            Model(self.layers(), (1, *self.image_dims()), self.class_names)
        except (MibciError, ValueError) as exc:
            raise ConfigError("model.architecture", str(exc)) from None

        try:
            self.train_config()
        except ValueError as exc:
            field = str(exc).split()[0]
            raise ConfigError(f"train.{field}", str(exc)) from None
        return self


def _convert(key: str, raw: str, base: Path):
    if key not in SCHEMA:
        raise ConfigError(key, "unknown key")
    parser, _ = SCHEMA[key]
    if parser == _PATH:
        if not raw:
            return None
        p = Path(raw).expanduser()
        return p if p.is_absolute() else base / p
    try:
        return parser(raw)
    except ValueError as exc:
        kind = {_int: "an integer", _float: "a number"}.get(parser, "a value")
        raise ConfigError(key, f"expected {kind}, got {raw!r} ({exc})") from None


def load_config(path=None, overrides: Sequence[str] | Mapping[str, str] = (),
                env: Mapping[str, str] | None = None) -> RunConfig:
    """Read, merge and validate a run configuration."""
    env = os.environ if env is None else env
    base = Path(path).resolve().parent if path is not None else Path.cwd()
    values = {}
    for key, (parser, default) in SCHEMA.items():
        if parser == _PATH and default is not None:
            default = base / default
        values[key] = default

    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError("--config", f"file not found: {path}")
        for key, raw in parse_pairs(path.read_text(), str(path)).items():
            values[key] = _convert(key, raw, base)
    if env.get(CACHE_ENV):
        values["dataset.cache_dir"] = Path(env[CACHE_ENV]).expanduser().resolve()

    if isinstance(overrides, Mapping):
        pairs = overrides.items()
    else:
        pairs = []
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError("--set", f"expected key=value, got {item!r}")
            pairs.append((key.strip(), raw.strip()))
    for key, raw in pairs:
        values[key] = _convert(key, raw, base)

    return RunConfig(values, base, path).validate()
