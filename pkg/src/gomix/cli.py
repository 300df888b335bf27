"""Command-line interface.

Subcommands: generate, fit, select, diagnose, check-representation.  Every
stochastic subcommand requires a seed and is byte-reproducible from (seed,
config, inputs), including select with --threads > 1.  A JSON config file
holds one flat section per subcommand; command-line flags win over config
values.  Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
abort (a state dump is written next to the outputs when available).
"""

from __future__ import annotations

import argparse
import os
import sys

from . import serialize
from .diagnostics import diagnose_chain
from .extended import run_extended_chain
from .mcmc import ChainConfig, NumericalAbortError, run_chain
from .representation import run_representation_check
from .selection import criteria_sweep
from .simulate import PRESETS
from .vem import fit_vem

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    """Bad flag/config combination detected after argument parsing."""


def _say(msg):
    print(msg, flush=True)


def _fail(msg):
    print(f"error: {msg}", file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# Config merging: CLI flags (not None) > config file section > defaults.
# ---------------------------------------------------------------------------

def _settings(args, section_defaults):
    merged = dict(section_defaults)
    if getattr(args, "config", None):
        try:
            doc = serialize.read_json(args.config)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except ValueError as err:
            raise UsageError(f"config file is not valid JSON: {err}") from None
        section = doc.get(args.command, {})
        if not isinstance(section, dict):
            raise UsageError(f"config section {args.command!r} must be an object")
        for key, val in section.items():
            if key not in merged:
                raise UsageError(
                    f"unknown config key {key!r} in section {args.command!r}"
                )
            merged[key] = val
    for key in section_defaults:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            merged[key] = flag_val
    return merged


def _require_seed(settings):
    if settings.get("seed") is None:
        raise UsageError("a seed is required; pass --seed or set it in the config")
    return int(settings["seed"])


def _out_dir(settings):
    out = settings.get("out_dir")
    if not out:
        raise UsageError("an output directory is required; pass --out-dir")
    os.makedirs(out, exist_ok=True)
    return out


def _read_data(settings):
    path = settings.get("data")
    if not path:
        raise UsageError("an input dataset is required; pass --data")
    if not os.path.exists(path):
        raise UsageError(f"dataset file not found: {path}")
    if settings.get("pattern_counts"):
        return serialize.read_pattern_counts(path)
    return serialize.read_dataset_csv(path)


def _parse_int_list(value, what):
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    try:
        return [int(tok) for tok in str(value).split(",") if tok.strip() != ""]
    except ValueError:
        raise UsageError(f"{what} must be a comma-separated list of integers") from None


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

_GENERATE_DEFAULTS = {
    "preset": None,
    "n": None,
    "stayer_weight": None,
    "seed": None,
    "out_dir": None,
}


def cmd_generate(args):
    st = _settings(args, _GENERATE_DEFAULTS)
    seed = _require_seed(st)
    out = _out_dir(st)
    name = st["preset"]
    if name not in PRESETS:
        raise UsageError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        )
    preset = PRESETS[name]
    n = preset.n if st["n"] is None else int(st["n"])
    if n < 1:
        raise UsageError("--n must be >= 1")
    sw = st["stayer_weight"]
    if sw is not None:
        sw = float(sw)
        if not 0.0 <= sw < 1.0:
            raise UsageError("--stayer-weight must lie in [0, 1)")
    dataset, truth = preset.generate(seed, n=n, stayer_weight=sw)
    serialize.write_dataset_csv(os.path.join(out, "data.csv"), dataset)
    serialize.write_pattern_counts_csv(os.path.join(out, "patterns.csv"), dataset)
    serialize.write_truth_json(os.path.join(out, "truth.json"), truth)
    serialize.write_model_json(os.path.join(out, "model.json"), preset.params)
    _say(f"generate: wrote {n} rows of {preset.params.j} items to {out}")
    return EXIT_OK


_FIT_DEFAULTS = {
    "data": None,
    "pattern_counts": None,
    "method": "mcmc",
    "k": None,
    "seed": None,
    "out_dir": None,
    "iterations": 20000,
    "burn_in": 10000,
    "thin": 10,
    "omega": 50.0,
    "eta": 100.0,
    "store_g": None,
    "theta1_init": None,
    "indicator_sampling": True,
    "bound_tol": 1e-6,
    "max_outer": 1000,
    "init": "latent-class",
}


def cmd_fit(args):
    st = _settings(args, _FIT_DEFAULTS)
    seed = _require_seed(st)
    out = _out_dir(st)
    method = st["method"]
    if method not in ("mcmc", "vem", "mcmc-extended"):
        raise UsageError("--method must be mcmc, vem, or mcmc-extended")
    if st["k"] is None:
        raise UsageError("--k is required")
    k = int(st["k"])
    if k < 1:
        raise UsageError("--k must be >= 1")
    data = _read_data(st)

    if method == "vem":
        fit = fit_vem(
            data, k, init=st["init"], seed=seed,
            bound_tol=float(st["bound_tol"]), max_outer=int(st["max_outer"]),
        )
        serialize.write_vem_outputs(out, fit, extras={"seed": seed, "k": k})
        _say(
            f"fit vem: K={k} converged={fit.converged} "
            f"bound={fit.lower_bound:.6f} after {fit.iterations} iterations"
        )
        if not fit.converged:
            _fail("variational fit did not converge within --max-outer iterations")
            return EXIT_NUMERIC
        return EXIT_OK

    config = ChainConfig(
        k=k,
        iterations=int(st["iterations"]),
        burn_in=int(st["burn_in"]),
        thin=int(st["thin"]),
        omega=float(st["omega"]),
        eta=float(st["eta"]),
        seed=seed,
        init=st["init"],
        store_g=bool(st["store_g"]),
    )
    if method == "mcmc":
        chain = run_chain(data, config)
    else:
        t1 = st["theta1_init"]
        chain = run_extended_chain(
            data, config,
            theta1_init=None if t1 is None else float(t1),
            indicator_sampling=bool(st["indicator_sampling"]),
        )
    serialize.write_chain_outputs(out, chain, method=method)
    report = diagnose_chain(chain)
    serialize.write_diagnostics_report(out, report)
    worst = report.worst_z()
    _say(
        f"fit {method}: K={k} kept {chain.n_draws} draws, "
        f"accept(alpha0)={chain.accept_rate_alpha0:.2f} "
        f"accept(xi)={chain.accept_rate_xi:.2f}, "
        f"worst |geweke z|={'n/a' if worst is None else f'{worst:.2f}'}"
    )
    for note in report.warnings:
        _say(f"  note: {note}")
    return EXIT_OK


_SELECT_DEFAULTS = {
    "data": None,
    "pattern_counts": None,
    "k_range": None,
    "methods": "mcmc,vem",
    "levels": "100,25,10",
    "seed": None,
    "threads": 1,
    "out_dir": None,
    "iterations": 20000,
    "burn_in": 10000,
    "thin": 10,
    "expected_draws": 5000,
}


def cmd_select(args):
    st = _settings(args, _SELECT_DEFAULTS)
    seed = _require_seed(st)
    out = _out_dir(st)
    if st["k_range"] is None:
        raise UsageError("--k-range is required (e.g. --k-range 2,3,4,5)")
    k_values = _parse_int_list(st["k_range"], "--k-range")
    if not k_values:
        raise UsageError("--k-range must contain at least one K")
    if any(k < 1 for k in k_values):
        raise UsageError("every K in --k-range must be >= 1")
    methods = [m.strip() for m in str(st["methods"]).split(",") if m.strip()]
    levels = _parse_int_list(st["levels"], "--levels")
    data = _read_data(st)

    report = criteria_sweep(
        data,
        k_values,
        methods=tuple(methods),
        seed=seed,
        chi2_levels=tuple(levels),
        expected_draws=int(st["expected_draws"]),
        threads=int(st["threads"]),
        iterations=int(st["iterations"]),
        burn_in=int(st["burn_in"]),
        thin=int(st["thin"]),
    )
    serialize.write_criteria_report(out, report)
    for level in report.levels:
        rows = _expected_observed_from_report(data, report, level)
        if not rows:
            _say(f"  no pattern observed >= {level} times; table skipped")
            continue
        serialize.write_expected_observed_csv(
            os.path.join(out, f"expected_observed_ge{level}.csv"), rows
        )
    _say(f"select: wrote criteria for K in {k_values} to {out}")
    for name, k in sorted(report.best().items()):
        _say(f"  {name}: K={k}")
    return EXIT_OK


def _expected_observed_from_report(data, report, level):
    from .selection import expected_observed_rows

    columns = {}
    for rec in report.records:
        if rec.expected is not None:
            columns[f"{rec.method}_k{rec.k}"] = rec.expected
    return expected_observed_rows(data, columns, level=level)


_DIAGNOSE_DEFAULTS = {
    "traces": None,
    "out_dir": None,
}


def cmd_diagnose(args):
    st = _settings(args, _DIAGNOSE_DEFAULTS)
    out = _out_dir(st)
    traces = st["traces"]
    if not traces:
        raise UsageError("a trace directory is required; pass --traces")
    if not os.path.isdir(traces):
        raise UsageError(f"trace directory not found: {traces}")
    chain = serialize.load_chain(traces)
    report = diagnose_chain(chain)
    serialize.write_diagnostics_report(out, report)
    worst = report.worst_z()
    _say(
        f"diagnose: {len(report.parameters)} parameters, "
        f"worst |geweke z|={'n/a' if worst is None else f'{worst:.2f}'}"
    )
    for note in report.warnings:
        _say(f"  note: {note}")
    return EXIT_OK


_CHECK_DEFAULTS = {
    "j": 3,
    "k": 2,
    "trials": 50,
    "draws": 100000,
    "seed": None,
    "quad_tol": 1e-8,
    "norm_tol": 1e-10,
    "out_dir": None,
}


def cmd_check_representation(args):
    st = _settings(args, _CHECK_DEFAULTS)
    seed = _require_seed(st)
    try:
        report = run_representation_check(
            j=int(st["j"]),
            k=int(st["k"]),
            trials=int(st["trials"]),
            draws=int(st["draws"]),
            seed=seed,
            quad_tol=float(st["quad_tol"]),
            norm_tol=float(st["norm_tol"]),
        )
    except ValueError as err:
        raise UsageError(str(err)) from None
    if st.get("out_dir"):
        out = _out_dir(st)
        serialize.write_json(os.path.join(out, "representation.json"), {
            "trials": report.trials,
            "j": report.j,
            "k": report.k,
            "draws": report.draws,
            "max_quad_abs_err": report.max_quad_abs_err,
            "max_mc_z": report.max_mc_z,
            "max_norm_err": report.max_norm_err,
            "failures": report.failures,
            "passed": report.passed,
        })
    _say(
        f"check-representation: {report.trials} trials at J={report.j}, K={report.k}; "
        f"max quadrature gap {report.max_quad_abs_err:.2e}, "
        f"max MC z {report.max_mc_z:.2f}, "
        f"max normalization error {report.max_norm_err:.2e}"
    )
    if not report.passed:
        for failure in report.failures:
            _say(f"  trial {failure['trial']}: " + "; ".join(failure["problems"]))
        _fail(f"{len(report.failures)} of {report.trials} trials failed")
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # Route argparse usage failures through our exit-code convention.
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="gomix", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None)
        p.add_argument("--out-dir", dest="out_dir", default=None)

    p = sub.add_parser("generate", help="write a preset dataset with its truth sidecar")
    common(p)
    p.add_argument("--preset", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--stayer-weight", dest="stayer_weight", type=float, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit one model by mcmc, vem, or mcmc-extended")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--pattern-counts", dest="pattern_counts",
                   action=argparse.BooleanOptionalAction, default=None,
                   help="treat --data as a pattern-count table")
    p.add_argument("--method", default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--omega", type=float, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--store-g", dest="store_g",
                   action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--theta1-init", dest="theta1_init", type=float, default=None)
    p.add_argument("--indicator-sampling", dest="indicator_sampling",
                   action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--bound-tol", dest="bound_tol", type=float, default=None)
    p.add_argument("--max-outer", dest="max_outer", type=int, default=None)
    p.add_argument("--init", default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="run the K-sweep and write criteria reports")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--pattern-counts", dest="pattern_counts",
                   action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--k-range", dest="k_range", default=None)
    p.add_argument("--methods", default=None)
    p.add_argument("--levels", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--expected-draws", dest="expected_draws", type=int, default=None)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("diagnose", help="diagnostics report from a saved trace bundle")
    common(p)
    p.add_argument("--traces", default=None)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser(
        "check-representation",
        help="randomized latent-class equivalence check of the marginal probabilities",
    )
    common(p)
    p.add_argument("--j", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--draws", type=int, default=None)
    p.add_argument("--quad-tol", dest="quad_tol", type=float, default=None)
    p.add_argument("--norm-tol", dest="norm_tol", type=float, default=None)
    p.set_defaults(func=cmd_check_representation)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        _fail(str(err))
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as err:
        _fail(str(err))
        return EXIT_USAGE
    except serialize.DataError as err:
        _fail(str(err))
        return EXIT_DATA
    except ValueError as err:
        # validation failures from the model/config layer are usage errors here
        _fail(str(err))
        return EXIT_USAGE
    except NumericalAbortError as err:
        _fail(str(err))
        out = getattr(args, "out_dir", None)
        if out:
            os.makedirs(out, exist_ok=True)
            dump_path = os.path.join(out, "abort_state.json")
            serialize.write_json(dump_path, err.dump)
            _fail(f"state dump written to {dump_path}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
