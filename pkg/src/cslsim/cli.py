"""Command-line front end.

Subcommands
-----------
run
    Monte Carlo ensemble plus deterministic ledger for one scenario
    config; writes the ensemble report JSON, series CSV, ledger CSV and
    a manifest.
ledger
    Deterministic ledger only; prints the conservation deviation and
    pass/fail against tolerance.
postulate
    Momentum-window collapse-compatibility analyses; writes a report
    JSON and scan CSVs.
verify
    Full acceptance suite at pinned seeds; one line per criterion.

Configs are single-scenario JSON documents, schema-validated before any
work starts: a bad config exits with status 2 and the offending field
path, and writes nothing.  Numerical failures exit with status 3.
Flags never override config values; they only choose the config file,
output directory, thread count and verbosity.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import run_ensemble
from .errors import (ConfigError, NonHermitianError, NumericalFailure,
                     RangeOverflowError, ZeroNormError)
from .ledger import build_ledger, conservation_check
from .postulate import (MomentumGrid, build_window_state, collapse_residual,
                        eq1_residual, gaussian_state, make_superposition,
                        moment_divergence_scan, tail_fit)
from .reports import (RunManifest, ensemble_report, write_csv, write_json,
                      write_ensemble_series_csv, write_ledger_csv)
from .scenarios import free_particle_grid, qubit_dephasing, random_dense, two_level_collapse
from .tolerances import QUADRATURE
from . import acceptance

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

DYNAMICAL_KINDS = ("two_level", "qubit_dephasing", "free_particle_grid",
                   "random_matrix")
ALL_KINDS = DYNAMICAL_KINDS + ("postulate_analysis",)


class _Section:
    """A config sub-object consumed field by field.

    Every getter removes the field it reads; :meth:`close` then rejects
    whatever is left, so unknown (usually misspelled) keys fail fast
    with their full dotted path.
    """

    def __init__(self, data, path: str):
        if not isinstance(data, dict):
            raise ConfigError(path or "config", "must be a JSON object")
        self._data = dict(data)
        self._path = path

    def key(self, name: str) -> str:
        return f"{self._path}.{name}" if self._path else name

    def _take(self, name: str, required: bool, default):
        if name in self._data:
            return self._data.pop(name)
        if required:
            raise ConfigError(self.key(name), "missing required field")
        return default

    _MISSING = object()

    def section(self, name: str, required: bool = True):
        raw = self._take(name, required, self._MISSING)
        if raw is self._MISSING:
            return None
        return _Section(raw, self.key(name))

    def number(self, name: str, *, required: bool = True, default=None,
               positive: bool = False) -> float:
        raw = self._take(name, required, self._MISSING)
        if raw is self._MISSING:
            return default
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(self.key(name), "must be a number")
        value = float(raw)
        if not math.isfinite(value):
            raise ConfigError(self.key(name), "must be finite")
        if positive and value <= 0.0:
            raise ConfigError(self.key(name), "must be positive")
        return value

    def integer(self, name: str, *, required: bool = True, default=None,
                minimum=None) -> int:
        raw = self._take(name, required, self._MISSING)
        if raw is self._MISSING:
            return default
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(self.key(name), "must be an integer")
        if minimum is not None and raw < minimum:
            raise ConfigError(self.key(name), f"must be >= {minimum}")
        return raw

    def string(self, name: str, *, choices=None, required: bool = True,
               default=None) -> str:
        raw = self._take(name, required, self._MISSING)
        if raw is self._MISSING:
            return default
        if not isinstance(raw, str):
            raise ConfigError(self.key(name), "must be a string")
        if choices is not None and raw not in choices:
            raise ConfigError(self.key(name),
                              f"must be one of {sorted(choices)}, got {raw!r}")
        return raw

    def number_pair(self, name: str, *, required: bool = True, default=None):
        raw = self._take(name, required, self._MISSING)
        if raw is self._MISSING:
            return default
        ok = (isinstance(raw, list) and len(raw) == 2
              and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                      for v in raw))
        if not ok:
            raise ConfigError(self.key(name), "must be a list of two numbers")
        return float(raw[0]), float(raw[1])

    def int_list(self, name: str, *, required: bool = True, default=None,
                 minimum=None):
        raw = self._take(name, required, self._MISSING)
        if raw is self._MISSING:
            return default
        ok = (isinstance(raw, list) and raw
              and all(isinstance(v, int) and not isinstance(v, bool) for v in raw))
        if not ok:
            raise ConfigError(self.key(name), "must be a non-empty list of integers")
        if minimum is not None and any(v < minimum for v in raw):
            raise ConfigError(self.key(name), f"entries must be >= {minimum}")
        return list(raw)

    def close(self) -> None:
        if self._data:
            name = sorted(self._data)[0]
            raise ConfigError(self.key(name), "unknown field")


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a JSON object")
    return data



def _nonnegative(sec: _Section, name: str) -> float:
    value = sec.number(name)
    if value < 0.0:
        raise ConfigError(sec.key(name), "must be non-negative")
    return value

def _grid_args(root: _Section) -> dict:
    grid = root.section("grid")
    out = {"t_end": grid.number("t_end", positive=True),
           "steps": grid.integer("steps", minimum=1)}
    grid.close()
    return out


def build_scenario(root: _Section, kind: str):
    """Construct the scenario a dynamical config describes.

    Returns (scenario, seeds) where seeds holds any construction seed.
    """
    params = root.section("params")
    grid = _grid_args(root)
    seeds = {}
    if kind == "two_level":
        weight = params.number("weight_upper")
        if not 0.0 < weight < 1.0:
            raise ConfigError(params.key("weight_upper"),
                              "must lie strictly between 0 and 1")
        scenario = two_level_collapse(
            weight_upper=weight,
            gap=params.number("gap", positive=True),
            lam=_nonnegative(params, "lam"),
            relative_phase=params.number("relative_phase", required=False, default=0.0),
            hbar=params.number("hbar", required=False, default=1.0, positive=True),
            **grid)
    elif kind == "qubit_dephasing":
        scenario = qubit_dephasing(
            omega=params.number("omega", positive=True),
            lam=_nonnegative(params, "lam"),
            hbar=params.number("hbar", required=False, default=1.0, positive=True),
            **grid)
    elif kind == "free_particle_grid":
        n_points = params.integer("n_points", minimum=2)
        if n_points & (n_points - 1) != 0:
            raise ConfigError(params.key("n_points"), "must be a power of two")
        scenario = free_particle_grid(
            n_points=n_points,
            dx=params.number("dx", positive=True),
            sigma0=params.number("sigma0", positive=True),
            lam=_nonnegative(params, "lam"),
            mass=params.number("mass", required=False, default=1.0, positive=True),
            hbar=params.number("hbar", required=False, default=1.0, positive=True),
            x0=params.number("x0", required=False, default=0.0),
            p0=params.number("p0", required=False, default=0.0),
            seam_margin=params.integer("seam_margin", required=False,
                                       default=10, minimum=1),
            **grid)
    elif kind == "random_matrix":
        seed = params.integer("seed")
        seeds["scenario_seed"] = seed
        scenario = random_dense(
            seed,
            dim=params.integer("dim", required=False, default=8, minimum=2),
            lam=_nonnegative(params, "lam"),
            hbar=params.number("hbar", required=False, default=1.0, positive=True),
            **grid)
    else:
        raise ConfigError("kind", f"unknown scenario kind {kind!r}")
    params.close()
    return scenario, seeds


def _hamiltonian_norm(scenario) -> float:
    if scenario.grid_info is not None:
        p = scenario.params
        return float(scenario.grid_info.kinetic_energies(p.hbar).max())
    if scenario.hamiltonian is None:
        return 0.0
    return float(np.abs(scenario.hamiltonian.spectrum().eigenvalues).max())


def _prefix(root: _Section, kind: str) -> str:
    out = root.section("output", required=False)
    if out is None:
        return kind
    prefix = out.string("prefix", required=False, default=kind)
    out.close()
    return prefix


def cmd_run(args) -> int:
    echo = load_config(args.config)
    root = _Section(echo, "")
    kind = root.string("kind", choices=ALL_KINDS)
    if kind == "postulate_analysis":
        raise ConfigError("kind",
                          "postulate_analysis configs run under the postulate subcommand")
    root.string("label", required=False, default="")
    prefix = _prefix(root, kind)
    ens = root.section("ensemble")
    n = ens.integer("n", minimum=1)
    mode = ens.string("mode", choices=("raw", "cooked"))
    master_seed = ens.integer("master_seed")
    ens.close()
    scenario, seeds = build_scenario(root, kind)
    root.close()
    seeds["master_seed"] = master_seed

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    timings = {}

    t0 = time.perf_counter()
    stats = run_ensemble(scenario, n, mode, master_seed,
                         record_series=True, threads=args.threads)
    timings["ensemble"] = time.perf_counter() - t0
    if args.verbose:
        print(f"ensemble: {stats.n_success}/{n} trajectories, "
              f"ESS {stats.effective_sample_size:.1f}, "
              f"{timings['ensemble']:.2f}s")

    t0 = time.perf_counter()
    ledger = build_ledger(scenario)
    timings["ledger"] = time.perf_counter() - t0
    if args.verbose:
        print(f"ledger: deviation {conservation_check(ledger):.3e}, "
              f"{timings['ledger']:.2f}s")

    manifest = RunManifest(config_echo=echo, code_version=__version__, seeds=seeds,
                           timings=timings)
    report = ensemble_report(stats, echo)
    path = write_json(out_dir / f"{prefix}_ensemble.json", report)
    manifest.add_output(out_dir, path)
    path = write_ensemble_series_csv(out_dir / f"{prefix}_series.csv", stats)
    manifest.add_output(out_dir, path)
    path = write_ledger_csv(out_dir / f"{prefix}_ledger.csv", ledger)
    manifest.add_output(out_dir, path)
    manifest.write(out_dir / f"{prefix}_manifest.json")
    print(f"wrote {len(manifest.outputs) + 1} files to {out_dir}")
    return EXIT_OK


def cmd_ledger(args) -> int:
    echo = load_config(args.config)
    root = _Section(echo, "")
    kind = root.string("kind", choices=ALL_KINDS)
    if kind == "postulate_analysis":
        raise ConfigError("kind",
                          "postulate_analysis configs run under the postulate subcommand")
    root.string("label", required=False, default="")
    prefix = _prefix(root, kind)
    root.section("ensemble", required=False)
    scenario, seeds = build_scenario(root, kind)
    root.close()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    timings = {}
    t0 = time.perf_counter()
    ledger = build_ledger(scenario)
    timings["ledger"] = time.perf_counter() - t0

    deviation = conservation_check(ledger)
    tolerance = QUADRATURE * max(_hamiltonian_norm(scenario), 1.0)
    passed = deviation <= tolerance
    summary = {
        "kind": kind,
        "max_deviation": deviation,
        "tolerance": tolerance,
        "passed": passed,
        "system_slope": float(np.polyfit(ledger.times, ledger.system, 1)[0]),
        "field_slope": float(np.polyfit(ledger.times, ledger.field, 1)[0]),
        "final_system": float(ledger.system[-1]),
        "final_field": float(ledger.field[-1]),
        "final_total": float(ledger.total[-1]),
    }
    manifest = RunManifest(config_echo=echo, code_version=__version__, seeds=seeds,
                           timings=timings)
    path = write_ledger_csv(out_dir / f"{prefix}_ledger.csv", ledger)
    manifest.add_output(out_dir, path)
    path = write_json(out_dir / f"{prefix}_ledger_summary.json", summary)
    manifest.add_output(out_dir, path)
    manifest.write(out_dir / f"{prefix}_manifest.json")
    print(f"conservation deviation {deviation:.3e} "
          f"(tolerance {tolerance:.3e}) -> {'pass' if passed else 'FAIL'}")
    if not passed:
        raise NumericalFailure(
            f"ledger total drifts by {deviation:.3e}, tolerance {tolerance:.3e}")
    return EXIT_OK


def _build_pair(pair: _Section, grid: MomentumGrid):
    """Return (state1, state2, weight1, inputs echo) for a pair spec."""
    kind = pair.string("type", choices=("windows", "gaussians"))
    weight1 = pair.number("weight1", required=False, default=0.5)
    if not 0.0 < weight1 < 1.0:
        raise ConfigError(pair.key("weight1"), "must lie strictly between 0 and 1")
    if kind == "windows":
        order = pair.integer("edge_order", required=False, default=0, minimum=0)
        w1 = pair.number_pair("window1")
        w2 = pair.number_pair("window2")
        c1 = pair.number("carrier1", required=False, default=0.0)
        c2 = pair.number("carrier2", required=False, default=0.0)
        pair.close()
        try:
            s1 = build_window_state(grid, w1[0], w1[1], order, c1)
            s2 = build_window_state(grid, w2[0], w2[1], order, c2)
        except ValueError as exc:
            raise ConfigError("params.pair", str(exc))
        inputs = {"type": kind, "edge_order": order, "window1": list(w1),
                  "window2": list(w2)}
    else:
        sigma = pair.number("sigma", positive=True)
        x1 = pair.number("center1")
        x2 = pair.number("center2")
        pair.close()
        s1 = gaussian_state(grid, sigma, x0=x1)
        s2 = gaussian_state(grid, sigma, x0=x2)
        inputs = {"type": kind, "sigma": sigma, "center1": x1, "center2": x2}
    inputs["weight1"] = weight1
    return s1, s2, weight1, inputs


def cmd_postulate(args) -> int:
    echo = load_config(args.config)
    root = _Section(echo, "")
    root.string("kind", choices=("postulate_analysis",))
    root.string("label", required=False, default="")
    prefix = _prefix(root, "postulate")
    params = root.section("params")

    gsec = params.section("grid")
    n_points = gsec.integer("n_points", minimum=256)
    p_min = gsec.number("p_min")
    p_max = gsec.number("p_max")
    gsec.close()
    try:
        grid = MomentumGrid(n_points, p_min, p_max)
    except ValueError as exc:
        raise ConfigError("params.grid", str(exc))

    s1, s2, weight1, inputs = _build_pair(params.section("pair"), grid)
    sup = make_superposition(math.sqrt(weight1), math.sqrt(1.0 - weight1), s1, s2)

    scans = params.section("scans", required=False)
    if scans is None:
        scans = _Section({}, "params.scans")
    count = scans.integer("count", required=False, default=100, minimum=1)
    b_max = scans.number("b_max", required=False, default=5.0, positive=True)
    a_max = scans.number("a_max", required=False, default=5.0, positive=True)
    mass = scans.number("mass", required=False, default=1.0, positive=True)
    scans.close()

    tail_sec = params.section("tail", required=False)
    tail_spec = None
    if tail_sec is not None:
        tail_spec = {"orders": tail_sec.int_list("edge_orders", minimum=0),
                     "window": tail_sec.number_pair("window")}
        tail_sec.close()

    moment_sec = params.section("moment", required=False)
    moment_spec = None
    if moment_sec is not None:
        order = moment_sec.integer("order", required=False, default=2, minimum=0)
        if order % 2 != 0:
            raise ConfigError(moment_sec.key("order"), "must be even")
        moment_spec = {"order": order,
                       "orders": moment_sec.int_list("edge_orders", minimum=0),
                       "window": moment_sec.number_pair("window"),
                       "doublings": moment_sec.integer("doublings", required=False,
                                                       default=4, minimum=1)}
        moment_sec.close()
    params.close()
    root.close()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    timings = {}
    t0 = time.perf_counter()

    b_values = np.linspace(b_max / count, b_max, count)
    a_values = np.linspace(a_max / count, a_max, count)
    res_p = np.array([collapse_residual(sup, "momentum", b) for b in b_values])
    res_e = np.array([collapse_residual(sup, "energy", a, mass=mass)
                      for a in a_values])
    worst = max(res_p.max(), res_e.max())
    if worst <= 1e-10:
        verdict = "conserving but non-localized"
    elif worst >= 1e-4:
        verdict = "generic violation"
    else:
        verdict = "inconclusive"
    report = {
        "inputs": inputs,
        "grid": {"n_points": n_points, "p_min": p_min, "p_max": p_max},
        "eq1_residual": eq1_residual(sup.phi1, sup.phi2),
        "scan_P": {"count": count, "b_max": b_max,
                   "max_residual": float(res_p.max())},
        "scan_E": {"count": count, "a_max": a_max, "mass": mass,
                   "max_residual": float(res_e.max())},
        "verdict": verdict,
    }

    manifest = RunManifest(config_echo=echo, code_version=__version__, seeds={},
                           timings=timings)
    path = write_csv(out_dir / f"{prefix}_scan_P.csv", ["b", "residual"],
                     [b_values, res_p])
    manifest.add_output(out_dir, path)
    path = write_csv(out_dir / f"{prefix}_scan_E.csv", ["a", "residual"],
                     [a_values, res_e])
    manifest.add_output(out_dir, path)

    if tail_spec is not None:
        lo, hi = tail_spec["window"]
        fits = []
        for order in tail_spec["orders"]:
            fit = tail_fit(build_window_state(grid, lo, hi, order))
            fits.append({"edge_order": order,
                         "exponent": fit.exponent if fit.is_polynomial else None,
                         "polynomial": fit.is_polynomial})
        report["tail_fits"] = fits

    if moment_spec is not None:
        lo, hi = moment_spec["window"]
        k = moment_spec["order"]
        outcomes = []
        for order in moment_spec["orders"]:
            scan = moment_divergence_scan(
                lambda g, n=order: build_window_state(g, lo, hi, n),
                k, grid, doublings=moment_spec["doublings"])
            outcomes.append({"edge_order": order, "moment_order": k,
                             "verdict": scan.verdict,
                             "ratios": [float(r) for r in scan.ratios]})
            path = write_csv(out_dir / f"{prefix}_moment_n{order}.csv",
                             ["domain", "moment"], [scan.orders, scan.values])
            manifest.add_output(out_dir, path)
        report["moment_scans"] = outcomes

    timings["analysis"] = time.perf_counter() - t0
    path = write_json(out_dir / f"{prefix}_report.json", report)
    manifest.add_output(out_dir, path)
    manifest.write(out_dir / f"{prefix}_manifest.json")
    print(f"verdict: {verdict} (worst residual {worst:.3e})")
    return EXIT_OK


def cmd_verify(args) -> int:
    print(f"acceptance suite, version {__version__}")
    results = acceptance.run_all(threads=args.threads, report=print)
    failed = [r for r in results if not r.passed]
    total = sum(r.seconds for r in results)
    if failed:
        print(f"{len(failed)} of {len(results)} criteria FAILED ({total:.1f}s)")
        return EXIT_FAILED_CHECK
    print(f"all {len(results)} criteria passed ({total:.1f}s)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cslsim",
        description="Collapse-dynamics simulator and verification harness")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config):
        if needs_config:
            p.add_argument("--config", required=True, help="scenario config JSON")
            p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for ensemble fan-out")
        p.add_argument("--verbose", action="store_true")

    p_run = sub.add_parser("run", help="Monte Carlo ensemble plus ledger")
    common(p_run, True)
    p_run.set_defaults(func=cmd_run)

    p_ledger = sub.add_parser("ledger", help="deterministic energy ledger")
    common(p_ledger, True)
    p_ledger.set_defaults(func=cmd_ledger)

    p_post = sub.add_parser("postulate", help="momentum-window analyses")
    common(p_post, True)
    p_post.set_defaults(func=cmd_postulate)

    p_verify = sub.add_parser("verify", help="run the acceptance suite")
    common(p_verify, False)
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, RangeOverflowError, ZeroNormError,
            NonHermitianError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
