"""Command-line entry point: ``binpq {train,binarize,compress,sweep,eval,inspect}``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
runtime failures (divergence, corrupt files, I/O). Every artifact is a pure
function of the config and seeds, so re-running a command reproduces its
outputs byte for byte. JSON summaries name files without their directory so
they do not depend on where a run was written.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, GridEntry, load_config
from .data import default_mnist_dir, load_mnist, synth_dataset
from .errors import BinPQError, ConfigError
from .nn import Dataset, Network, evaluate, init_network
from .pq import QuantizedDense, QuantizedModel, aggregate_rate, layer_rate, quantize_network
from .regularizer import binarization_progress, harden_layers, trace_header, train_regularized
from .store import measured_size_bits, read_model, write_model
from .sweep import COLUMNS, best_rate, rows_to_csv, sweep_rows

log = logging.getLogger("binpq")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _clean(value):
    """JSON-safe copy: NaN becomes null, numpy scalars become Python numbers."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return None if math.isnan(value) else value
    if isinstance(value, np.integer):
        return int(value)
    return value


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _layer_list(text: str | None) -> list[int]:
    if text is None or not text.strip():
        return []
    try:
        return sorted({int(v) for v in text.replace(" ", "").split(",") if v})
    except ValueError as exc:
        raise UsageError(f"layer list must be comma-separated integers, got {text!r}") from exc


def _check_layers(model, layers, what="layer") -> None:
    bad = [i for i in layers if not 0 <= i < len(model.layers)]
    if bad:
        raise UsageError(f"{what} indices {bad} out of range for a {len(model.layers)}-layer model")


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Train and test sets described by ``cfg.data``."""
    d = cfg.data
    if d.source == "synth":
        full = synth_dataset(d.synth_seed, d.synth_train + d.synth_test, d.synth_dims,
                             d.synth_classes, d.synth_separation)
        return full.subset(slice(0, d.synth_train)), full.subset(slice(d.synth_train, None))
    directory = Path(d.mnist_dir) if d.mnist_dir else default_mnist_dir()
    return (
        load_mnist(directory, "train", d.train_limit),
        load_mnist(directory, "test", d.test_limit),
    )


def _dense(model) -> Network:
    return model.to_network() if isinstance(model, QuantizedModel) else model


def _cell(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    path.write_text(buf.getvalue())


def _summary_path(model_path: Path) -> Path:
    return model_path.with_suffix(".json")


def _config_dict(cfg: ExperimentConfig) -> dict:
    t = cfg.train
    return {
        "layers": cfg.layers,
        "init_seed": cfg.init_seed,
        "train": {
            "learning_rate": t.learning_rate, "batch_size": t.batch_size, "epochs": t.epochs,
            "alpha0": t.alpha0, "c": t.c, "seed": t.seed,
            "regularized_layers": sorted(t.regularized_layers),
        },
        "data": vars(cfg.data),
    }


def cmd_train(cfg: ExperimentConfig, out_dir: Path) -> dict:
    cfg.validate()
    train, test = load_data(cfg)
    if train.inputs.shape[1] != cfg.layers[0] or train.classes != cfg.layers[-1]:
        raise ConfigError(
            f"model.layers {cfg.layers} do not fit data with {train.inputs.shape[1]} inputs "
            f"and {train.classes} classes"
        )
    net = init_network(cfg.layers, cfg.init_seed)
    net, trace = train_regularized(net, train, cfg.train, test)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_model(out_dir / "model.bqm", net)
    layers = list(range(len(net)))
    _write_csv(out_dir / "trace.csv", trace_header(layers), [r.as_row(layers) for r in trace])
    last = trace[-1]
    summary = {
        "command": "train",
        "config": _config_dict(cfg),
        "train_error": evaluate(net, train),
        "test_error": last.test_error,
        "data_loss": last.data_loss,
        "penalty": last.penalty,
        "alpha": last.alpha,
        "progress": last.progress,
        "model": "model.bqm",
        "trace": "trace.csv",
    }
    (out_dir / "summary.json").write_text(dump_json(summary))
    print(f"test error {last.test_error:.4f}  model {out_dir / 'model.bqm'}")
    return summary


def cmd_binarize(model_path: Path, layers, out_path: Path, test: Dataset) -> dict:
    model = read_model(model_path)
    if not isinstance(model, Network):
        raise UsageError("binarize needs a dense model")
    _check_layers(model, layers)
    before = evaluate(model, test)
    hard = harden_layers(model, layers)
    after = evaluate(hard, test)
    write_model(out_path, hard)
    summary = {
        "command": "binarize", "input": model_path.name, "output": out_path.name,
        "layers": list(layers), "error_before": before, "error_after": after,
    }
    _summary_path(out_path).write_text(dump_json(summary))
    print(f"test error before {before:.4f}  after {after:.4f}")
    return summary


def cmd_compress(model_path: Path, layers, s: int, k: int, binary: bool, seed: int,
                 axis: str, out_path: Path, test: Dataset) -> dict:
    model = read_model(model_path)
    if not isinstance(model, Network):
        raise UsageError("compress needs a dense model")
    _check_layers(model, layers)
    if not layers:
        raise UsageError("compress needs at least one layer")
    grid = GridEntry("cli", list(layers), [s], [k], binary, axis)
    params = {}
    for i in layers:
        segs = grid.segments(s, model.layers[i].shape[1])
        if segs < 1:
            raise UsageError(
                f"layer {i}: width {model.layers[i].shape[1]} not divisible by {axis} {s}"
            )
        params[i] = (segs, k)
    far = 0
    if binary:
        far = int(sum(np.sum(np.abs(np.abs(model.layers[i].weights) - 1) > 0.1) for i in layers))
        if far:
            log.warning("binary codebook on %d weights farther than 0.1 from +-1", far)
    qmodel, accounts, _ = quantize_network(model, layers, params, binary, seed)
    acct = aggregate_rate([accounts[i] for i in layers])
    err = evaluate(qmodel.to_network(), test)
    write_model(out_path, qmodel)
    summary = {
        "command": "compress", "input": model_path.name, "output": out_path.name,
        "layers": list(layers), "s": s, "k": k, "axis": axis, "binary": binary, "seed": seed,
        "segments": {i: params[i][0] for i in layers},
        "formula_rate": acct.formula_rate, "measured_rate": acct.measured_rate,
        "index_bits": acct.index_bits, "codebook_bits": acct.codebook_bits,
        "test_error": err, "far_from_binary": far,
    }
    _summary_path(out_path).write_text(dump_json(summary))
    print(f"formula rate {acct.formula_rate:.4f}  measured rate {acct.measured_rate:.4f}  "
          f"test error {err:.4f}")
    return summary


def cmd_sweep(cfg: ExperimentConfig, model_path: Path, out_dir: Path, test: Dataset) -> dict:
    model = read_model(model_path)
    if not isinstance(model, Network):
        raise UsageError("sweep needs a dense model")
    if not cfg.grids:
        raise ConfigError("sweep needs at least one [grid.NAME] section")
    cfg.validate([l.shape[1] for l in model.layers])
    rows = sweep_rows(model, test, cfg.grids, cfg.sweep_seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.csv").write_text(rows_to_csv(rows))
    best = {}
    for g in cfg.grids:
        sel = [r for r in rows if not r.is_baseline and r.binary == g.binary
               and r.layers == tuple(sorted(set(g.layers)))]
        best[g.name] = best_rate(sel, 0.02)
    summary = {
        "command": "sweep", "model": model_path.name, "rows": len(rows),
        "failed_rows": sum(1 for r in rows if not (r.ok or r.is_baseline)),
        "baseline_error": rows[0].test_error, "best_rate_within_2pp": best,
        "columns": COLUMNS,
    }
    (out_dir / "sweep.json").write_text(dump_json(summary))
    print(f"{len(rows)} rows  baseline error {rows[0].test_error:.4f}")
    for name, rate in sorted(best.items()):
        print(f"  {name}: best rate within 2pp {'-' if rate is None else f'{rate:.4f}'}")
    return summary


def cmd_eval(model_path: Path, test: Dataset) -> dict:
    model = read_model(model_path)
    summary = {"command": "eval", "model": model_path.name, "test_error": evaluate(_dense(model), test),
               "examples": len(test)}
    sys.stdout.write(dump_json(summary))
    return summary


def cmd_inspect(model_path: Path) -> dict:
    model = read_model(model_path)
    layers = []
    for i, layer in enumerate(model.layers):
        info = {"index": i, "shape": list(layer.shape), "activation": layer.activation}
        if isinstance(layer, QuantizedDense):
            acct = layer_rate(layer)
            info.update(kind="quantized", s=layer.q.s, k=layer.q.k, binary=layer.q.binary_codebook,
                        formula_rate=acct.formula_rate, measured_rate=acct.measured_rate)
        else:
            info.update(kind="dense", progress=binarization_progress(layer.weights, 0.1))
        layers.append(info)
    summary = {"command": "inspect", "model": model_path.name, "layers": layers,
               "payload_bits": measured_size_bits(model)}
    sys.stdout.write(dump_json(summary))
    return summary


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="binpq", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("-c", "--config", help="INI experiment config")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config entry (repeatable)")

    sp = sub.add_parser("train", help="train (optionally regularized) and save a dense model")
    with_config(sp)
    sp.add_argument("-o", "--out", help="output directory (default: [output] dir)")

    sp = sub.add_parser("binarize", help="harden layers of a dense model to +-1")
    with_config(sp)
    sp.add_argument("model")
    sp.add_argument("--layers", default="", help="comma-separated layer indices")
    sp.add_argument("-o", "--out", required=True)

    sp = sub.add_parser("compress", help="product-quantize layers of a dense model")
    with_config(sp)
    sp.add_argument("model")
    sp.add_argument("--layers", required=True, help="comma-separated layer indices")
    sp.add_argument("-s", type=int, required=True, help="segment count (or width, see --axis)")
    sp.add_argument("-k", type=int, required=True, help="centroids per codebook")
    sp.add_argument("--binary", action="store_true", help="harden codebooks to +-1")
    sp.add_argument("--axis", choices=("count", "width"), default="count")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--out", required=True)

    sp = sub.add_parser("sweep", help="rate/error sweep over the config's grids")
    with_config(sp)
    sp.add_argument("--model", help="dense model (default: [sweep] model)")
    sp.add_argument("-o", "--out", help="output directory (default: [output] dir)")

    sp = sub.add_parser("eval", help="test error of a model")
    with_config(sp)
    sp.add_argument("model")

    sp = sub.add_parser("inspect", help="describe a model file")
    sp.add_argument("model")
    return p


def _test_set(cfg: ExperimentConfig) -> Dataset:
    cfg.validate()
    return load_data(cfg)[1]


def run(args) -> None:
    if args.command == "inspect":
        cmd_inspect(Path(args.model))
        return
    cfg = load_config(args.config, args.set)
    if args.command == "train":
        cmd_train(cfg, Path(args.out or cfg.output_dir))
    elif args.command == "binarize":
        cmd_binarize(Path(args.model), _layer_list(args.layers), Path(args.out), _test_set(cfg))
    elif args.command == "compress":
        cmd_compress(Path(args.model), _layer_list(args.layers), args.s, args.k, args.binary,
                     args.seed, args.axis, Path(args.out), _test_set(cfg))
    elif args.command == "sweep":
        model = args.model or cfg.sweep_model
        if not model:
            raise UsageError("sweep needs --model or [sweep] model")
        cmd_sweep(cfg, Path(model), Path(args.out or cfg.output_dir), _test_set(cfg))
    elif args.command == "eval":
        cmd_eval(Path(args.model), _test_set(cfg))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        run(args)
    except (UsageError, ConfigError) as exc:
        print(f"binpq: error: {exc}", file=sys.stderr)
        return 1
    except (BinPQError, OSError, ValueError) as exc:
        print(f"binpq: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
