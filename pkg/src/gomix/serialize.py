"""File formats: datasets, fitted models, trace bundles, and reports.

Everything here is deterministic byte-for-byte given the same inputs.  Floats
are written with repr(), which Python guarantees to round-trip exactly, so a
value reloaded from any of these files compares equal to the value that was
written.  Pattern strings put the first item (first CSV column) first.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict

import numpy as np

from .data import Dataset
from .mcmc import ChainConfig, ChainOutput
from .model import GomParams
from .selection import CriteriaReport, CriterionRecord

__all__ = [
    "DataError",
    "read_json",
    "write_json",
    "write_dataset_csv",
    "read_dataset_csv",
    "write_pattern_counts_csv",
    "read_pattern_counts",
    "write_model_json",
    "read_model_json",
    "write_truth_json",
    "write_chain_outputs",
    "load_chain",
    "write_vem_outputs",
    "write_criteria_report",
    "read_criteria_report",
    "write_expected_observed_csv",
    "write_diagnostics_report",
]


class DataError(ValueError):
    """Malformed input data; carries the offending 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def _f(x):
    """Exact-round-trip float formatting for CSV cells."""
    return repr(float(x))


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(path, obj):
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, ensure_ascii=False)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
        fh.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _open_csv_writer(path):
    fh = open(path, "w", encoding="utf-8", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def write_dataset_csv(path, dataset):
    """Row-level CSV: one header of item labels, then one 0/1 row per person."""
    labels = dataset.item_labels or tuple(f"item{j + 1}" for j in range(dataset.j))
    fh, w = _open_csv_writer(path)
    with fh:
        w.writerow(labels)
        for row in dataset.x:
            w.writerow(int(v) for v in row)


def read_dataset_csv(path):
    """Parse a row-level CSV, failing with the 1-based line of any bad cell."""
    rows = []
    labels = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for lineno, cells in enumerate(reader, start=1):
            if not cells or (len(cells) == 1 and cells[0].strip() == ""):
                continue
            if lineno == 1:
                labels = tuple(c.strip() for c in cells)
                continue
            parsed = []
            for c in cells:
                c = c.strip()
                if c == "0":
                    parsed.append(0)
                elif c == "1":
                    parsed.append(1)
                else:
                    raise DataError(f"cell value {c!r} is not 0 or 1", line=lineno)
            if labels is not None and len(parsed) != len(labels):
                raise DataError(
                    f"row has {len(parsed)} cells, header has {len(labels)}",
                    line=lineno,
                )
            rows.append(parsed)
    if labels is None:
        raise DataError("empty dataset file")
    if not rows:
        raise DataError("dataset file has a header but no rows")
    return Dataset(np.array(rows, dtype=np.uint8), item_labels=labels)


def write_pattern_counts_csv(path, dataset):
    """Contingency-table CSV: pattern string and count, one line per pattern."""
    patterns, counts = dataset.pattern_table()
    fh, w = _open_csv_writer(path)
    with fh:
        w.writerow(["pattern", "count"])
        for row, cnt in zip(patterns, counts):
            w.writerow(["".join(str(int(v)) for v in row), int(cnt)])


def read_pattern_counts(path):
    """Read a pattern-count table into a row-level dataset.

    Accepts the package's own CSV layout and the whitespace-separated
    two-column layout of the public disability table (pattern then count),
    with or without a header line.
    """
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            tokens = [t for t in line.replace(",", " ").split() if t]
            if len(tokens) != 2:
                raise DataError(
                    f"expected a pattern and a count, got {len(tokens)} fields",
                    line=lineno,
                )
            pat, cnt = tokens
            if not set(pat) <= {"0", "1"}:
                if lineno == 1:
                    continue  # header line
                raise DataError(f"pattern {pat!r} is not a 0/1 string", line=lineno)
            try:
                count = int(cnt)
            except ValueError:
                raise DataError(f"count {cnt!r} is not an integer", line=lineno) from None
            if count < 0:
                raise DataError(f"count {count} is negative", line=lineno)
            if count > 0:
                pairs.append((pat, count))
    if not pairs:
        raise DataError("no pattern counts found")
    return Dataset.from_pattern_counts(pairs)


# ---------------------------------------------------------------------------
# Models and generation truth
# ---------------------------------------------------------------------------

def write_model_json(path, params, theta1=None):
    doc = {
        "k": params.k,
        "j": params.j,
        "lambda": params.lam,
        "alpha0": params.alpha0,
        "xi": params.xi,
    }
    if theta1 is not None:
        doc["theta1"] = float(theta1)
    write_json(path, doc)


def read_model_json(path):
    doc = read_json(path)
    params = GomParams(
        lam=np.array(doc["lambda"], dtype=float),
        alpha0=float(doc["alpha0"]),
        xi=np.array(doc["xi"], dtype=float),
    )
    theta1 = doc.get("theta1")
    return params, (None if theta1 is None else float(theta1))


def write_truth_json(path, truth):
    """Generation sidecar: true memberships and compartment flags."""
    write_json(path, {
        "seed": truth.seed,
        "stayer_weight": truth.stayer_weight,
        "g": truth.g,
        "stayer": truth.stayer.astype(int),
        "model": {
            "k": truth.params.k,
            "j": truth.params.j,
            "lambda": truth.params.lam,
            "alpha0": truth.params.alpha0,
            "xi": truth.params.xi,
        },
    })


# ---------------------------------------------------------------------------
# Chain trace bundles
# ---------------------------------------------------------------------------

def _config_doc(config):
    doc = asdict(config)
    if not isinstance(doc["init"], str):
        doc["init"] = "custom"
    return doc


def write_chain_outputs(out_dir, chain, method="mcmc", extras=None):
    """Write a chain as model.json + lambda.csv + hyper.csv (+ g_mean.csv).

    model.json holds the posterior means as the point estimate.  hyper.csv
    carries the scalar traces aligned with lambda.csv row for row; extended
    runs add the compartment columns.  summary.json echoes the settings so
    the bundle is replayable without the Python objects.
    """
    os.makedirs(out_dir, exist_ok=True)
    k, j = chain.lam.shape[1], chain.lam.shape[2]
    extended = chain.theta1 is not None

    fh, w = _open_csv_writer(os.path.join(out_dir, "lambda.csv"))
    with fh:
        w.writerow(["sweep"] + [f"lam_{kk}_{jj}" for kk in range(k) for jj in range(j)])
        for s in range(chain.n_draws):
            w.writerow([int(chain.kept_sweeps[s])] + [_f(v) for v in chain.lam[s].ravel()])

    fh, w = _open_csv_writer(os.path.join(out_dir, "hyper.csv"))
    with fh:
        header = (
            ["sweep", "alpha0"]
            + [f"xi_{kk}" for kk in range(k)]
            + ["loglik", "accepted_alpha0", "accepted_xi"]
        )
        if extended:
            header += ["theta1", "n2", "loglik_mixture"]
        w.writerow(header)
        for s in range(chain.n_draws):
            row = (
                [int(chain.kept_sweeps[s]), _f(chain.alpha0[s])]
                + [_f(v) for v in chain.xi[s]]
                + [
                    _f(chain.loglik[s]),
                    int(chain.accepted_alpha0[s]),
                    int(chain.accepted_xi[s]),
                ]
            )
            if extended:
                row += [
                    _f(chain.theta1[s]),
                    int(chain.n2[s]),
                    _f(chain.loglik_mixture[s]),
                ]
            w.writerow(row)

    if chain.g_mean is not None:
        fh, w = _open_csv_writer(os.path.join(out_dir, "g_mean.csv"))
        with fh:
            w.writerow([f"g_{kk}" for kk in range(k)])
            for row in chain.g_mean:
                w.writerow([_f(v) for v in row])

    point = GomParams.from_alpha(
        chain.lam.mean(axis=0), chain.alpha0.mean() * chain.xi.mean(axis=0)
    )
    theta1 = float(chain.theta1.mean()) if extended else None
    write_model_json(os.path.join(out_dir, "model.json"), point, theta1=theta1)

    summary = {
        "method": method,
        "config": _config_doc(chain.config),
        "n_draws": chain.n_draws,
        "accept_rate_alpha0": chain.accept_rate_alpha0,
        "accept_rate_xi": chain.accept_rate_xi,
        "guard_events": chain.guard_events,
        "extended": extended,
    }
    if extras:
        summary.update(extras)
    write_json(os.path.join(out_dir, "summary.json"), summary)


def _read_csv_columns(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    return header, rows


def load_chain(out_dir):
    """Rebuild a ChainOutput from a trace bundle for criteria replay.

    The initial parameters and final sampler state are not serialized; the
    loaded object carries everything the selection and diagnostics functions
    consume (traces, posterior g means, settings).
    """
    summary = read_json(os.path.join(out_dir, "summary.json"))
    cfg_doc = dict(summary["config"])
    cfg_doc["lambda_prior"] = tuple(cfg_doc["lambda_prior"])
    config = ChainConfig(**cfg_doc)

    header, rows = _read_csv_columns(os.path.join(out_dir, "lambda.csv"))
    k = config.k
    j = (len(header) - 1) // k
    s = len(rows)
    lam = np.empty((s, k, j))
    kept = np.empty(s, dtype=np.int64)
    for i, row in enumerate(rows):
        kept[i] = int(row[0])
        lam[i] = np.array([float(v) for v in row[1:]]).reshape(k, j)

    header, rows = _read_csv_columns(os.path.join(out_dir, "hyper.csv"))
    col = {name: idx for idx, name in enumerate(header)}
    alpha0 = np.array([float(r[col["alpha0"]]) for r in rows])
    xi = np.array([[float(r[col[f"xi_{kk}"]]) for kk in range(k)] for r in rows])
    loglik = np.array([float(r[col["loglik"]]) for r in rows])
    acc_a = np.array([int(r[col["accepted_alpha0"]]) for r in rows], dtype=np.uint8)
    acc_x = np.array([int(r[col["accepted_xi"]]) for r in rows], dtype=np.uint8)
    theta1 = n2 = llmix = None
    if summary.get("extended"):
        theta1 = np.array([float(r[col["theta1"]]) for r in rows])
        n2 = np.array([int(r[col["n2"]]) for r in rows], dtype=np.int64)
        llmix = np.array([float(r[col["loglik_mixture"]]) for r in rows])

    g_mean = None
    g_path = os.path.join(out_dir, "g_mean.csv")
    if os.path.exists(g_path):
        _, rows = _read_csv_columns(g_path)
        g_mean = np.array([[float(v) for v in r] for r in rows])

    return ChainOutput(
        config=config,
        lam=lam,
        alpha0=alpha0,
        xi=xi,
        loglik=loglik,
        accepted_alpha0=acc_a,
        accepted_xi=acc_x,
        accept_rate_alpha0=summary["accept_rate_alpha0"],
        accept_rate_xi=summary["accept_rate_xi"],
        kept_sweeps=kept,
        init_params=None,
        final_state=None,
        g_mean=g_mean,
        theta1=theta1,
        n2=n2,
        loglik_mixture=llmix,
        guard_events=summary.get("guard_events", {}),
    )


# ---------------------------------------------------------------------------
# Variational fits
# ---------------------------------------------------------------------------

def write_vem_outputs(out_dir, fit, extras=None):
    os.makedirs(out_dir, exist_ok=True)
    write_model_json(os.path.join(out_dir, "model.json"), fit.params)
    summary = {
        "method": "vem",
        "converged": fit.converged,
        "iterations": fit.iterations,
        "lower_bound": fit.lower_bound,
        "bound_trace": fit.bound_trace,
        "e_step_cap_events": fit.e_step_cap_events,
        "lambda_hold_events": fit.lambda_hold_events,
    }
    if extras:
        summary.update(extras)
    write_json(os.path.join(out_dir, "summary.json"), summary)

    fh, w = _open_csv_writer(os.path.join(out_dir, "gamma.csv"))
    with fh:
        k = fit.params.k
        w.writerow([f"gamma_{kk}" for kk in range(k)])
        for row in fit.state.gamma:
            w.writerow([_f(v) for v in row])


# ---------------------------------------------------------------------------
# Criteria and diagnostics reports
# ---------------------------------------------------------------------------

def write_criteria_report(out_dir, report, basename="criteria"):
    """Write a sweep report as lossless JSON plus a flat CSV view."""
    os.makedirs(out_dir, exist_ok=True)
    doc = {
        "seed": report.seed,
        "k_values": list(report.k_values),
        "methods": list(report.methods),
        "levels": list(report.levels),
        "records": [
            {
                "k": r.k,
                "method": r.method,
                "chi2_tr": {str(lvl): v for lvl, v in r.chi2_tr.items()},
                "fit_value": r.fit_value,
                "bic": r.bic,
                "bic_larger_is_preferable": r.bic_larger_is_preferable,
                "dic": r.dic,
                "p_d": r.p_d,
                "aicm": r.aicm,
                "converged": r.converged,
                "seed": r.seed,
                "expected": r.expected,
            }
            for r in report.records
        ],
    }
    json_path = os.path.join(out_dir, f"{basename}.json")
    write_json(json_path, doc)

    csv_path = os.path.join(out_dir, f"{basename}.csv")
    fh, w = _open_csv_writer(csv_path)
    with fh:
        chi2_cols = [f"chi2_ge{lvl}" for lvl in report.levels]
        w.writerow(
            ["k", "method"] + chi2_cols
            + ["fit_value", "bic", "dic", "p_d", "aicm", "converged", "seed"]
        )
        for r in report.records:
            w.writerow(
                [r.k, r.method]
                + [_f(r.chi2_tr[lvl]) for lvl in report.levels]
                + [
                    _f(r.fit_value),
                    "" if r.bic is None else _f(r.bic),
                    "" if r.dic is None else _f(r.dic),
                    "" if r.p_d is None else _f(r.p_d),
                    "" if r.aicm is None else _f(r.aicm),
                    "" if r.converged is None else int(r.converged),
                    "" if r.seed is None else int(r.seed),
                ]
            )
    return json_path, csv_path


def read_criteria_report(path):
    doc = read_json(path)
    records = tuple(
        CriterionRecord(
            k=int(r["k"]),
            method=r["method"],
            chi2_tr={int(lvl): float(v) for lvl, v in r["chi2_tr"].items()},
            fit_value=float(r["fit_value"]),
            bic=None if r["bic"] is None else float(r["bic"]),
            bic_larger_is_preferable=r["bic_larger_is_preferable"],
            dic=None if r["dic"] is None else float(r["dic"]),
            p_d=None if r["p_d"] is None else float(r["p_d"]),
            aicm=None if r["aicm"] is None else float(r["aicm"]),
            converged=r["converged"],
            seed=None if r["seed"] is None else int(r["seed"]),
            expected=r.get("expected"),
        )
        for r in doc["records"]
    )
    return CriteriaReport(
        records=records,
        k_values=tuple(int(k) for k in doc["k_values"]),
        methods=tuple(doc["methods"]),
        levels=tuple(int(lvl) for lvl in doc["levels"]),
        seed=int(doc["seed"]),
    )


def write_expected_observed_csv(path, rows):
    """Expected-vs-observed table; ``rows`` from expected_observed_rows()."""
    if not rows:
        raise ValueError("expected-vs-observed table has no rows")
    fh, w = _open_csv_writer(path)
    with fh:
        names = list(rows[0].keys())
        w.writerow(names)
        for row in rows:
            out = []
            for name in names:
                v = row[name]
                out.append(_f(v) if isinstance(v, float) else v)
            w.writerow(out)


def write_diagnostics_report(out_dir, report, basename="diagnostics"):
    os.makedirs(out_dir, exist_ok=True)
    doc = {
        "n_draws": report.n_draws,
        "parameters": report.parameters,
        "warnings": list(report.warnings),
        "separation": None,
    }
    if report.separation is not None:
        doc["separation"] = {
            "matrix": report.separation.matrix,
            "separated_pairs": report.separation.separated_pairs.astype(int),
            "min_separation": report.separation.min_separation,
            "separated": report.separation.separated,
        }
    json_path = os.path.join(out_dir, f"{basename}.json")
    write_json(json_path, doc)

    csv_path = os.path.join(out_dir, f"{basename}.csv")
    fh, w = _open_csv_writer(csv_path)
    with fh:
        w.writerow(["parameter", "geweke_z", "ess", "status"])
        for name, rec in report.parameters.items():
            w.writerow([
                name,
                "" if rec["geweke_z"] is None else _f(rec["geweke_z"]),
                "" if rec["ess"] is None else _f(rec["ess"]),
                rec["status"],
            ])
    return json_path, csv_path
