"""Plot-data CSVs and a text summary from run, sweep or training outputs.

``report(dir)`` looks for what the CLI writes:

* ``trace.csv`` (+ ``summary.json``) from ``run``
* ``sweep.json`` from ``sweep``
* ``*.curve.csv`` next to a policy from ``train``

Every file found contributes its plot data; the result lands in
``<dir>/report`` unless another directory is given.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .engine import SimTrace

FIGURES = {
    "vehicle.csv": ("t", "d", "w", "u", "e"),
    "battery.csv": ("t", "c_surf", "V", "I"),
    "residuals.csv": ("t", "r_v_d", "r_v_w", "r_v_a", "r_v_norm", "r_b"),
    "u_rl.csv": ("t", "u_RL"),
}


class ReportError(RuntimeError):
    pass


def _write_csv(path: Path, header, rows):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    with path.open("w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, rows, fmt="%.9g", delimiter=",")


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def trace_report(trace: SimTrace, out: Path) -> list[str]:
    for name, cols in FIGURES.items():
        _write_csv(out / name, cols, np.column_stack([trace[c] for c in cols]))
    s = trace.summary
    lines = [f"n_rows={len(trace)}",
             f"min_d={_fmt(float(trace['d'].min()))}",
             f"max_abs_e={_fmt(float(np.abs(trace['e']).max()))}"]
    for key in ("unsafe_entry", "collision", "max_abs_e_post_transient",
                "frac_abs_e_le_1_post_transient", "saturation_fraction", "return",
                "defender_enabled"):
        if key in s:
            lines.append(f"{key}={_fmt(s[key])}")
    return lines


def sweep_report(data: dict, out: Path) -> list[str]:
    try:
        axis = data["axis"]
        cols = [data[k] for k in ("values", "min_d", "unsafe_entry", "saturation_fraction")]
    except KeyError as exc:
        raise ReportError(f"sweep.json is missing {exc}") from None
    if not cols[0] or len({len(c) for c in cols}) != 1:
        raise ReportError("sweep.json is partial: column lengths differ or are empty")
    rows = np.column_stack([np.asarray(c, dtype=float) for c in cols])
    _write_csv(out / f"sweep_{axis}.csv",
               ("value", "min_d", "unsafe_entry", "saturation_fraction"), rows)
    safe = [v for v, u in zip(cols[0], cols[2]) if not u]
    boundary = max(safe) if safe else None
    return [f"{axis}_safe={_fmt(boundary)}",
            f"{axis}_values={','.join(_fmt(float(v)) for v in cols[0])}"]


def curve_report(curve: np.ndarray, out: Path, stem: str) -> list[str]:
    ep = np.arange(1, curve.size + 1)
    w = min(100, curve.size)
    rolling = np.full(curve.size, np.nan)
    rolling[w - 1:] = np.convolve(curve, np.ones(w) / w, mode="valid")
    _write_csv(out / f"training_{stem}.csv", ("episode", "return", "rolling_mean"),
               np.column_stack([ep, curve, rolling]))
    return [f"training_episodes={curve.size}",
            f"training_first50_mean={_fmt(float(curve[:50].mean()))}",
            f"training_final100_mean={_fmt(float(curve[-100:].mean()))}",
            f"training_max_rolling_mean={_fmt(float(np.nanmax(rolling)))}"]


def report(in_dir, out_dir=None) -> Path:
    """Build the report; returns the output directory.

    Raises ReportError when the directory holds nothing reportable or an
    input is truncated.
    """
    src = Path(in_dir)
    if not src.is_dir():
        raise ReportError(f"{src} is not a directory")
    out = Path(out_dir) if out_dir is not None else src / "report"
    trace_file = src / "trace.csv"
    sweep_file = src / "sweep.json"
    curves = sorted(src.glob("*.curve.csv"))
    if not (trace_file.exists() or sweep_file.exists() or curves):
        raise ReportError(f"{src}: no trace.csv, sweep.json or training curve found")

    out.mkdir(parents=True, exist_ok=True)
    lines = []
    if trace_file.exists():
        try:
            trace = SimTrace.read(src)
        except (ValueError, OSError) as exc:
            raise ReportError(str(exc)) from None
        lines += trace_report(trace, out)
    if sweep_file.exists():
        try:
            data = json.loads(sweep_file.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ReportError(f"{sweep_file}: {exc}") from None
        lines += sweep_report(data, out)
    for path in curves:
        try:
            curve = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)[:, 1]
        except (ValueError, IndexError) as exc:
            raise ReportError(f"{path}: {exc}") from None
        if curve.size == 0:
            raise ReportError(f"{path}: empty training curve")
        lines += curve_report(curve, out, path.name[:-len(".curve.csv")])
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out
