"""Estimate reports, power-law fitting, and deterministic CSV output.

Every quantitative experiment in this package produces an
:class:`EstimateReport`: a list of measured rows (one per parameter point)
plus an overall verdict.  Scaling claims are judged by fitting a power law
to log-log data; the fit deliberately excludes the lowest octave of the
abscissa, where preasymptotic transients live.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

PASS = "pass"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"

# R^2 gate below which a slope comparison cannot support a pass verdict.
FIT_R2_GATE = 0.9


def fmt(x) -> str:
    """Deterministic scalar formatting used in every CSV cell."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        if np.isnan(x):
            return "nan"
        return f"{float(x):.12g}"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


@dataclass
class PowerLawFit:
    slope: float
    intercept: float
    r2: float
    n_used: int
    x_used: np.ndarray
    y_used: np.ndarray

    @property
    def ok(self) -> bool:
        return self.n_used >= 2 and np.isfinite(self.slope)


def fit_power_law(x, y, drop_lowest_octave: bool = True) -> PowerLawFit:
    """Least-squares fit of log y against log x.

    Points with nonpositive x or y are discarded.  When
    ``drop_lowest_octave`` is set, abscissae below ``2 * min(x)`` are
    excluded (unless that would leave fewer than two points).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    if drop_lowest_octave and x.size >= 3:
        inner = x >= 2.0 * x.min() * (1 - 1e-12)
        if inner.sum() >= 2:
            x, y = x[inner], y[inner]
    if x.size < 2:
        return PowerLawFit(np.nan, np.nan, 0.0, int(x.size), x, y)
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    scale = float(x.size * (1.0 + np.mean(ly) ** 2))
    if ss_tot <= 1e-20 * scale:
        # constant data: a perfect fit unless the residual itself is junk
        r2 = 1.0 if ss_res <= 1e-18 * scale else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return PowerLawFit(float(slope), float(intercept), float(r2), int(x.size), x, y)


@dataclass
class EstimateReport:
    """Measured constants / fitted exponents with the prediction they test.

    ``rows`` is a list of dicts sharing the keys of ``columns``; one row per
    parameter point.  ``verdict`` is the aggregate over rows.
    """

    experiment: str
    params: dict = field(default_factory=dict)
    columns: tuple = ("quantity", "parameter", "measured", "predicted", "r2", "verdict", "note")
    rows: list = field(default_factory=list)
    verdict: str = INCONCLUSIVE
    provenance: dict = field(default_factory=dict)

    def add_row(self, quantity, parameter, measured, predicted=None, r2=None,
                verdict="", note=""):
        """Rows without a verdict are informational and do not affect the
        aggregate."""
        self.rows.append({
            "quantity": quantity,
            "parameter": parameter,
            "measured": measured,
            "predicted": "" if predicted is None else predicted,
            "r2": "" if r2 is None else r2,
            "verdict": verdict,
            "note": note,
        })

    def finalize(self) -> str:
        """Set the aggregate verdict: fail > inconclusive > pass."""
        verdicts = [r["verdict"] for r in self.rows if r["verdict"]]
        if any(v == FAIL for v in verdicts):
            self.verdict = FAIL
        elif any(v == INCONCLUSIVE for v in verdicts):
            self.verdict = INCONCLUSIVE
        elif verdicts:
            self.verdict = PASS
        else:
            self.verdict = INCONCLUSIVE
        return self.verdict

    def param_string(self) -> str:
        return ";".join(f"{k}={fmt(v)}" for k, v in self.params.items())

    def write_csv(self, path) -> None:
        lines = ["experiment,params," + ",".join(self.columns)]
        pstr = self.param_string()
        for row in self.rows:
            cells = [self.experiment, pstr] + [fmt(row[c]) for c in self.columns]
            lines.append(",".join(c.replace(",", ";") for c in cells))
        lines.append(f"# verdict,{self.verdict}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def write_table(path, header: list, rows: list) -> None:
    """Plain CSV writer with deterministic formatting."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(c).replace(",", ";") for c in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, config_hash: str, files: list, wall_time: float,
                   exit_code: int, extra: dict | None = None) -> None:
    import aewave

    payload = {
        "config_sha256": config_hash,
        "package": "aewave",
        "version": aewave.__version__,
        "numpy": np.__version__,
        "wall_time_s": round(wall_time, 3),
        "exit_code": exit_code,
        "files": {name: sha256_file(p) for name, p in files},
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def combine_exit_code(reports: list) -> int:
    """Map report verdicts to the CLI exit-code contract.

    0 all-pass, 2 any fail, 3 when the only non-pass verdicts are
    inconclusive.
    """
    verdicts = [r.verdict for r in reports]
    if any(v == FAIL for v in verdicts):
        return 2
    if any(v == INCONCLUSIVE for v in verdicts):
        return 3
    return 0
