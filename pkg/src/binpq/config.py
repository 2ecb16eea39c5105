"""Experiment configuration files.

INI-style sections parsed with :mod:`configparser`::

    [model]
    layers = 784, 128, 64, 10
    seed = 0

    [train]
    learning_rate = 1.0
    batch_size = 40
    epochs = 30
    alpha0 = 1e-5
    c = 1.001
    seed = 0
    regularized_layers = 1, 2

    [data]
    source = mnist            # or: synth
    mnist_dir = data/mnist
    train_limit = 10000
    test_limit =              # empty: whole test split

    [output]
    dir = out/run

    [sweep]
    model = out/run/model.bqm
    seed = 0

    [grid.plain]              # one section per grid entry
    layers = 1, 2
    s = 2, 4, 8
    k = 4, 8, 16
    binary = false
    axis = count              # count: s segments; width: segments of s columns

Every key can be overridden from the command line with ``section.key=value``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .errors import ConfigError
from .nn import TrainConfig

DEFAULT_LAYERS = (784, 128, 64, 10)


def _ints(text: str) -> list[int]:
    text = text.strip()
    if not text:
        return []
    try:
        return [int(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from exc


@dataclass
class DataConfig:
    source: str = "mnist"
    mnist_dir: str | None = None
    train_limit: int | None = 10000
    test_limit: int | None = None
    synth_seed: int = 0
    synth_train: int = 2000
    synth_test: int = 1000
    synth_dims: int = 2
    synth_classes: int = 2
    synth_separation: float = 10.0


@dataclass
class GridEntry:
    name: str
    layers: list[int]
    s_values: list[int]
    k_values: list[int]
    binary: bool = False
    axis: str = "count"

    def segments(self, value: int, width: int) -> int:
        """Segment count for a layer of ``width`` columns, or -1 if indivisible."""
        if self.axis == "count":
            return value if width % value == 0 else -1
        return width // value if width % value == 0 else -1


@dataclass
class ExperimentConfig:
    layers: list[int] = field(default_factory=lambda: list(DEFAULT_LAYERS))
    init_seed: int = 0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=1.0, batch_size=40))
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str = "out"
    sweep_model: str | None = None
    sweep_seed: int = 0
    grids: list[GridEntry] = field(default_factory=list)

    def validate(self, layer_widths=None) -> None:
        """Check cross-field constraints; ``layer_widths`` are per-layer column counts."""
        if len(self.layers) < 3 or any(s <= 0 for s in self.layers):
            raise ConfigError(f"model.layers must hold >= 3 positive sizes, got {self.layers}")
        depth = len(self.layers) - 1
        bad = sorted(i for i in self.train.regularized_layers if not 0 <= i < depth)
        if bad:
            raise ConfigError(f"train.regularized_layers {bad} out of range for {depth} layers")
        if self.data.source not in ("mnist", "synth"):
            raise ConfigError(f"data.source must be 'mnist' or 'synth', got {self.data.source!r}")
        widths = list(layer_widths) if layer_widths is not None else self.layers[1:]
        for g in self.grids:
            if g.axis not in ("count", "width"):
                raise ConfigError(f"grid.{g.name}: axis must be 'count' or 'width'")
            if not g.layers or not g.s_values or not g.k_values:
                raise ConfigError(f"grid.{g.name}: layers, s and k must be non-empty")
            out = sorted(i for i in g.layers if not 0 <= i < len(widths))
            if out:
                raise ConfigError(f"grid.{g.name}: layer indices {out} out of range")
            if min(g.s_values) < 1 or min(g.k_values) < 1:
                raise ConfigError(f"grid.{g.name}: s and k values must be positive")
            if not any(
                all(g.segments(v, widths[i]) > 0 for i in g.layers) for v in g.s_values
            ):
                raise ConfigError(
                    f"grid.{g.name}: no s value divides the widths of layers {g.layers}"
                )


def _parser() -> configparser.ConfigParser:
    return configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)


def apply_overrides(cp: configparser.ConfigParser, overrides) -> None:
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        section, option = key.strip().rsplit(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, option, value.strip())


def load_config(path=None, overrides=()) -> ExperimentConfig:
    cp = _parser()
    if path is not None:
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    apply_overrides(cp, overrides)
    try:
        return _build(cp)
    except (ValueError, configparser.Error) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _opt_int(text):
    text = (text or "").strip()
    return int(text) if text else None


def _build(cp: configparser.ConfigParser) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if cp.has_section("model"):
        m = cp["model"]
        cfg.layers = _ints(m.get("layers", ",".join(map(str, DEFAULT_LAYERS))))
        cfg.init_seed = m.getint("seed", 0)
    t = cp["train"] if cp.has_section("train") else {}
    d = TrainConfig(learning_rate=1.0, batch_size=40)
    cfg.train = TrainConfig(
        learning_rate=float(t.get("learning_rate", d.learning_rate)),
        batch_size=int(t.get("batch_size", d.batch_size)),
        epochs=int(t.get("epochs", d.epochs)),
        alpha0=float(t.get("alpha0", d.alpha0)),
        c=float(t.get("c", d.c)),
        seed=int(t.get("seed", d.seed)),
        regularized_layers=frozenset(_ints(t.get("regularized_layers", ""))),
    )
    if cp.has_section("data"):
        s = cp["data"]
        dc = DataConfig()
        cfg.data = DataConfig(
            source=s.get("source", dc.source).strip(),
            mnist_dir=s.get("mnist_dir", "").strip() or None,
            train_limit=_opt_int(s.get("train_limit", str(dc.train_limit))),
            test_limit=_opt_int(s.get("test_limit", "")),
            synth_seed=s.getint("synth_seed", dc.synth_seed),
            synth_train=s.getint("synth_train", dc.synth_train),
            synth_test=s.getint("synth_test", dc.synth_test),
            synth_dims=s.getint("synth_dims", dc.synth_dims),
            synth_classes=s.getint("synth_classes", dc.synth_classes),
            synth_separation=s.getfloat("synth_separation", dc.synth_separation),
        )
    if cp.has_section("output"):
        cfg.output_dir = cp["output"].get("dir", cfg.output_dir).strip()
    if cp.has_section("sweep"):
        cfg.sweep_model = cp["sweep"].get("model", "").strip() or None
        cfg.sweep_seed = cp["sweep"].getint("seed", 0)
    for section in cp.sections():
        if not section.startswith("grid."):
            continue
        g = cp[section]
        cfg.grids.append(
            GridEntry(
                name=section[len("grid."):],
                layers=_ints(g.get("layers", "")),
                s_values=sorted(set(_ints(g.get("s", "")))),
                k_values=sorted(set(_ints(g.get("k", "")))),
                binary=g.getboolean("binary", False),
                axis=g.get("axis", "count").strip(),
            )
        )
    return cfg

