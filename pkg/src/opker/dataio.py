"""Result and dataset persistence: CSV / JSONL records, plot data, a small
self-contained SVG writer, and the versioned dataset container.

Float formatting uses shortest round-trip repr so re-running with the same
seed produces byte-identical files.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import ConfigError

DATASET_FORMAT = "opker-dataset"
DATASET_VERSION = 1

SWEEP_CSV_COLUMNS = ("experiment_id", "M", "rep", "n", "cutoff", "var_err", "bias_err",
                     "total_err", "seed_path")


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def sweep_csv_text(result) -> str:
    lines = [",".join(SWEEP_CSV_COLUMNS)]
    for rec in result.records:
        row = (result.experiment_id, rec.m_samples, rec.rep, rec.n, rec.cutoff,
               rec.var_err, rec.bias_err, rec.total_err, rec.seed_path)
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_sweep_csv(result, path) -> Path:
    path = Path(path)
    try:
        path.write_text(sweep_csv_text(result))
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc
    return path


def parse_sweep_csv(path) -> list[dict]:
    text = Path(path).read_text().strip().splitlines()
    header = text[0].split(",")
    if tuple(header) != SWEEP_CSV_COLUMNS:
        raise ConfigError(f"unexpected CSV columns in {path}")
    rows = []
    for line in text[1:]:
        parts = line.split(",")
        rows.append({
            "experiment_id": parts[0],
            "M": int(parts[1]),
            "rep": int(parts[2]),
            "n": int(parts[3]),
            "cutoff": parts[4] == "1",
            "var_err": float(parts[5]),
            "bias_err": float(parts[6]),
            "total_err": float(parts[7]),
            "seed_path": parts[8],
        })
    return rows


def sweep_jsonl_text(result, version: str) -> str:
    cfg = result.config_echo
    head = {"record": "config", "experiment_id": result.experiment_id,
            "config": cfg, "config_sha256": config_hash(cfg), "software_version": version}
    lines = [json.dumps(head, sort_keys=True)]
    for rec in result.records:
        lines.append(json.dumps({
            "record": "cell", "M": rec.m_samples, "rep": rec.rep, "n": rec.n,
            "cutoff": bool(rec.cutoff), "var_err": rec.var_err, "bias_err": rec.bias_err,
            "total_err": rec.total_err, "seed_path": rec.seed_path}, sort_keys=True))
    summary = {"record": "summary", "slope": result.slope, "slope_stderr": result.slope_stderr,
               "theoretical_exponent": result.theoretical_exponent,
               "margin": result.margin, "passed": result.passed,
               "degenerate": result.degenerate,
               "flagged_m": list(result.flagged_m)}
    lines.append(json.dumps(summary, sort_keys=True))
    return "\n".join(lines) + "\n"


def write_sweep_jsonl(result, path, version: str) -> Path:
    path = Path(path)
    path.write_text(sweep_jsonl_text(result, version))
    return path


def write_plot_data(result, path) -> Path:
    """Two-column log10 points plus the fitted line value per kept M."""
    path = Path(path)
    lines = ["# log10_M log10_mean_total_err fit_value"]
    for stat in result.per_m:
        if stat.mean_total <= 0.0 or stat.m_samples in result.flagged_m:
            continue
        x = np.log10(stat.m_samples)
        y = np.log10(stat.mean_total)
        fit = result.fit_at(stat.m_samples)
        fit_txt = repr(float(np.log10(fit))) if fit is not None else "nan"
        lines.append(f"{x!r} {y!r} {fit_txt}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_sweep_svg(result, path, width: int = 640, height: int = 420) -> Path:
    """Self-contained scatter-plus-fit plot of the log-log sweep."""
    pts = [(np.log10(s.m_samples), np.log10(s.mean_total)) for s in result.per_m
           if s.mean_total > 0.0 and s.m_samples not in result.flagged_m]
    path = Path(path)
    if not pts:
        path.write_text('<svg xmlns="http://www.w3.org/2000/svg"/>\n')
        return path
    xs, ys = zip(*pts)
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x_pad = 0.05 * max(x1 - x0, 1e-9)
    y_pad = 0.10 * max(y1 - y0, 1e-9)
    x0, x1, y0, y1 = x0 - x_pad, x1 + x_pad, y0 - y_pad, y1 + y_pad
    margin = 56

    def sx(x):
        return margin + (x - x0) / (x1 - x0) * (width - 2 * margin)

    def sy(y):
        return height - margin - (y - y0) / (y1 - y0) * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="13">log10 M</text>',
        f'<text x="16" y="{height / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 16 {height / 2:.1f})">log10 mean squared error</text>',
    ]
    for x, y in pts:
        parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="4" fill="#1f77b4"/>')
        parts.append(f'<text x="{sx(x):.2f}" y="{height - margin + 16}" text-anchor="middle" '
                     f'font-size="10">{x:.2f}</text>')
    if result.slope is not None:
        fit_l = np.log10(result.fit_at(10 ** min(xs)))
        fit_r = np.log10(result.fit_at(10 ** max(xs)))
        parts.append(f'<line x1="{sx(min(xs)):.2f}" y1="{sy(fit_l):.2f}" '
                     f'x2="{sx(max(xs)):.2f}" y2="{sy(fit_r):.2f}" stroke="#d62728" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{width - margin}" y="{margin - 8}" text-anchor="end" '
                     f'font-size="12">slope {result.slope:.3f} '
                     f'(target {result.theoretical_exponent:.3f})</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")
    return path


# --------------------------------------------------------------------------
# Dataset container: a zip holding a JSON header and raw little-endian arrays.


def save_dataset(dataset, config_echo: dict, path) -> Path:
    """Write a self-describing dataset file (header JSON + float64 arrays)."""
    path = Path(path)
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "config": config_echo,
        "m_samples": dataset.m_samples,
        "n_grid": dataset.n_grid,
        "n_modes": dataset.ensemble.n_modes,
        "has_true_kernel": dataset.true_kernel is not None,
        "seed_path": dataset.seed_path,
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("header.json", json.dumps(header, sort_keys=True, indent=1))
        zf.writestr("input_coeffs.f64", _arr_bytes(dataset.input_coeffs))
        zf.writestr("outputs.f64", _arr_bytes(dataset.outputs))
        if dataset.true_kernel is not None:
            zf.writestr("true_kernel.f64", _arr_bytes(dataset.true_kernel.coeffs))
    return path


def load_dataset_file(path) -> tuple[dict, dict]:
    """Read the header and raw arrays back; model objects are rebuilt by the
    harness from the embedded config echo."""
    path = Path(path)
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
        if header.get("format") != DATASET_FORMAT:
            raise ConfigError(f"{path} is not an opker dataset file")
        if header.get("version") != DATASET_VERSION:
            raise ConfigError(f"unsupported dataset version {header.get('version')}")
        m, n_grid = header["m_samples"], header["n_grid"]
        arrays = {
            "input_coeffs": _bytes_arr(zf.read("input_coeffs.f64"), (m, header["n_modes"])),
            "outputs": _bytes_arr(zf.read("outputs.f64"), (m, n_grid)),
        }
        if header["has_true_kernel"]:
            arrays["true_kernel"] = _bytes_arr(zf.read("true_kernel.f64"), (-1,))
    return header, arrays


def _arr_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _bytes_arr(buf: bytes, shape) -> np.ndarray:
    return np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
