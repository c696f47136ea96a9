"""Reading and writing panels, fit results and simulation outputs.

Panels are exchanged as long ("tidy") CSV with header
``subject_id,indicator_id,score,weight``; a missing (subject, indicator)
pair is simply an absent row.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import fields
from pathlib import Path

import numpy as np

from .exceptions import DataFormatError, InvalidInputError
from .model import FitResult, IndicatorPanel, WeightMatrix
from .sim import SimScenario, SimSummary

LONG_HEADER = ("subject_id", "indicator_id", "score", "weight")


def _parse_float(text: str, what: str, lineno: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"line {lineno}: {what} {text!r} is not a number") from None
    if not math.isfinite(value):
        raise DataFormatError(f"line {lineno}: {what} must be finite")
    return value


def load_long_csv(path) -> tuple[IndicatorPanel, WeightMatrix]:
    """Build a panel and aligned raw weights from a long CSV file.

    Indicators and subjects are ordered by first appearance.  Errors name the
    offending line numbers (the header is line 1).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != LONG_HEADER:
            raise DataFormatError(f"{path}: header must be {','.join(LONG_HEADER)}, got {','.join(header)}")
        subjects: dict[str, int] = {}
        indicators: dict[str, int] = {}
        seen: dict[tuple[str, str], int] = {}
        entries = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise DataFormatError(f"line {lineno}: expected 4 fields, got {len(row)}")
            sid, iid = row[0].strip(), row[1].strip()
            if not sid or not iid:
                raise DataFormatError(f"line {lineno}: empty subject or indicator id")
            key = (sid, iid)
            if key in seen:
                raise DataFormatError(
                    f"duplicate (subject, indicator) pair {key} on lines {seen[key]} and {lineno}"
                )
            seen[key] = lineno
            score = _parse_float(row[2], "score", lineno)
            weight = _parse_float(row[3], "weight", lineno)
            if weight < 0:
                raise DataFormatError(f"line {lineno}: weight must be nonnegative")
            subjects.setdefault(sid, len(subjects))
            indicators.setdefault(iid, len(indicators))
            entries.append((indicators[iid], subjects[sid], score, weight))
    if not entries:
        raise DataFormatError(f"{path}: no data rows")

    m, H = len(indicators), len(subjects)
    scores = np.zeros((m, H))
    weights = np.zeros((m, H))
    observed = np.zeros((m, H), dtype=bool)
    for j, h, score, weight in entries:
        scores[j, h] = score
        weights[j, h] = weight
        observed[j, h] = True
    try:
        panel = IndicatorPanel(scores, observed, list(indicators), list(subjects))
    except InvalidInputError as exc:
        raise DataFormatError(str(exc)) from exc
    return panel, WeightMatrix(weights)


def save_long_csv(path, panel: IndicatorPanel, weights: WeightMatrix) -> None:
    """Write observed entries subject by subject; floats round-trip exactly."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LONG_HEADER)
        for h, sid in enumerate(panel.subject_ids):
            for j, iid in enumerate(panel.indicator_names):
                if panel.observed[j, h]:
                    writer.writerow(
                        [sid, iid, repr(float(panel.scores[j, h])), repr(float(weights.weights[j, h]))]
                    )


def standardize_indicators(panel: IndicatorPanel):
    """Center and scale each indicator over its observed subjects.

    Uses the unweighted mean and the sample standard deviation (``ddof=1``).
    Returns the standardized panel and an ``(m, 2)`` array of ``(mean, sd)``.
    """
    transforms = np.empty((panel.m, 2))
    out = np.zeros_like(panel.scores)
    for j in range(panel.m):
        vals = panel.scores[j][panel.observed[j]]
        if vals.size < 2:
            raise InvalidInputError(
                f"indicator {panel.indicator_names[j]!r} needs at least 2 observed values"
            )
        mean = math.fsum(vals) / vals.size
        sd = math.sqrt(math.fsum((vals - mean) ** 2) / (vals.size - 1))
        if not sd > 0:
            raise InvalidInputError(f"indicator {panel.indicator_names[j]!r} has zero variance")
        transforms[j] = mean, sd
        out[j] = np.where(panel.observed[j], (panel.scores[j] - mean) / sd, 0.0)
    return (
        IndicatorPanel(out, panel.observed, panel.indicator_names, panel.subject_ids),
        transforms,
    )


def unstandardize(panel: IndicatorPanel, transforms) -> IndicatorPanel:
    """Map standardized scores back to the original scale."""
    transforms = np.asarray(transforms, dtype=float)
    raw = panel.scores * transforms[:, 1:2] + transforms[:, 0:1]
    return IndicatorPanel(raw, panel.observed, panel.indicator_names, panel.subject_ids)


# ---------------------------------------------------------------------------
# result files
# ---------------------------------------------------------------------------


def params_rows(panel: IndicatorPanel, fit: FitResult) -> list[dict]:
    p = fit.params
    return [
        {
            "indicator": name,
            "mu": float(p.mu[j]),
            "gamma": float(p.gamma[j]),
            "sigma2": float(p.sigma2[j]),
            "boundary": bool(fit.boundary_flags[j]),
        }
        for j, name in enumerate(panel.indicator_names)
    ]


def scores_rows(panel: IndicatorPanel, fit: FitResult) -> list[dict]:
    return [
        {"subject": sid, "alpha": float(fit.alpha[h]), "alpha_var": float(fit.alpha_var[h])}
        for h, sid in enumerate(panel.subject_ids)
    ]


def _cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows(path, rows: list[dict], fmt: str = "csv", columns=None) -> Path:
    """Write dict rows as CSV or JSON; returns the path written."""
    path = Path(path)
    if fmt == "json":
        path = path.with_suffix(".json")
        path.write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
        return path
    path = path.with_suffix(".csv")
    if columns is None:
        columns = []
        for row in rows:
            columns.extend(k for k in row if k not in columns)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) if c in row else "" for c in columns])
    return path


def read_params_csv(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [
            {
                "indicator": r["indicator"],
                "mu": float(r["mu"]),
                "gamma": float(r["gamma"]),
                "sigma2": float(r["sigma2"]),
                "boundary": r["boundary"] == "true",
            }
            for r in csv.DictReader(fh)
        ]


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_sim_outputs(out_dir, summary: SimSummary, fmt: str = "csv") -> tuple[Path, Path]:
    """One row per replication plus a JSON summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rec = write_rows(out_dir / "replications", summary.per_rep_records, fmt)
    return rec, write_json(out_dir / "summary.json", summary.to_dict())


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

_TUPLE_KEYS = {"gamma_shapes", "gamma_scales", "coeffs", "H_list"}


def parse_scenario(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, lists are comma-separated."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(f"scenario line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in _TUPLE_KEYS:
                parts = [p.strip() for p in value.split(",") if p.strip()]
                cast = int if key == "H_list" else float
                out[key] = tuple(cast(p) for p in parts)
            elif key in ("m", "H", "reps", "seed"):
                out[key] = int(value)
            elif key in ("rho", "weight_coeff"):
                out[key] = float(value)
            elif key == "weight_dist":
                out[key] = value
            elif key == "fitter":
                if value not in ("em", "marginal"):
                    raise DataFormatError(f"scenario line {lineno}: fitter must be em or marginal")
                out[key] = value
            else:
                raise DataFormatError(f"scenario line {lineno}: unknown key {key!r}")
        except ValueError:
            raise DataFormatError(f"scenario line {lineno}: bad value {value!r} for {key}") from None
    return out


def load_scenario(path) -> dict:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


def scenario_fields() -> list[str]:
    return [f.name for f in fields(SimScenario)]
