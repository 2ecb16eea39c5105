"""Compression-rate / test-error sweeps over PQ grids."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from .config import GridEntry
from .errors import BinPQError
from .nn import Dataset, Network, evaluate
from .pq import aggregate_rate, quantize_network

COLUMNS = [
    "layers", "s", "k", "binary", "formula_rate", "measured_rate",
    "test_error", "delta_error", "axis", "segments", "status",
]


@dataclass
class SweepRow:
    layers: tuple
    s: int | None
    k: int | None
    binary: bool | None
    formula_rate: float
    measured_rate: float
    test_error: float
    delta_error: float
    axis: str = ""
    segments: str = ""
    status: str = "ok"

    @property
    def is_baseline(self) -> bool:
        return self.s is None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def as_row(self) -> list:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, bool):
                return str(v).lower()
            if isinstance(v, float):
                return "" if math.isnan(v) else repr(v)
            return v
        return [
            " ".join(map(str, self.layers)), fmt(self.s), fmt(self.k), fmt(self.binary),
            fmt(self.formula_rate), fmt(self.measured_rate), fmt(self.test_error),
            fmt(self.delta_error), self.axis, self.segments, self.status,
        ]


def sweep_rows(net: Network, test: Dataset, grids, seed: int = 0) -> list[SweepRow]:
    """Baseline row followed by one row per (grid entry, s, k), ordered by s then k.

    Rates cover only the layers each row compresses. Rows that cannot be built
    (e.g. indivisible widths) carry the error in ``status``.
    """
    base_err = evaluate(net, test)
    rows = [SweepRow((), None, None, None, 1.0, 1.0, base_err, 0.0, status="baseline")]
    nan = float("nan")
    for g in grids:
        layers = tuple(sorted(set(g.layers)))
        for s in sorted(g.s_values):
            for k in sorted(g.k_values):
                params = {i: (g.segments(s, net.layers[i].shape[1]), k) for i in layers}
                segs = " ".join(f"{i}:{p[0]}" for i, p in params.items())
                bad = [i for i, p in params.items() if p[0] < 1]
                if bad:
                    msg = "; ".join(
                        f"layer {i}: width {net.layers[i].shape[1]} not divisible by {g.axis} {s}"
                        for i in bad
                    )
                    rows.append(SweepRow(layers, s, k, g.binary, nan, nan, nan, nan, g.axis, "", msg))
                    continue
                try:
                    model, accounts, _ = quantize_network(net, layers, params, g.binary, seed)
                    err = evaluate(model.to_network(), test)
                    acct = aggregate_rate([accounts[i] for i in layers])
                except (BinPQError, ValueError) as exc:
                    rows.append(SweepRow(layers, s, k, g.binary, nan, nan, nan, nan, g.axis, segs, str(exc)))
                    continue
                rows.append(
                    SweepRow(layers, s, k, g.binary, acct.formula_rate, acct.measured_rate,
                             err, err - base_err, g.axis, segs)
                )
    return rows


def best_rate(rows, max_loss: float, include_baseline: bool = False) -> float | None:
    """Largest measured rate among rows whose error rise is at most ``max_loss``."""
    ok = [
        r.measured_rate for r in rows
        if (r.ok or (include_baseline and r.is_baseline)) and r.delta_error <= max_loss + 1e-12
    ]
    return max(ok) if ok else None


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow(r.as_row())
    return buf.getvalue()
