"""Command-line harness: scenario files, experiment runs, CSV and manifest output.

Every command writes ``<out>.csv`` and ``<out>.manifest.json`` (``--out``
defaults to ``results``). Failures print a JSON object to stderr and exit
with status 1 (2 for usage errors).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import __version__
from .association import SCHEMES, counting_bounds, run_scheme
from .channel import budget_table
from .errors import IrsLocError, ParseError, ValidationError
from .estimator import monte_carlo
from .geometry import RadioParams, Scenario, random_scenario, roadside_scenario
from .polyblock import CrlbObjective, SolverConfig, solve_single

COMMANDS = ("crlb", "optimize-single", "associate", "simulate-mle", "sweep", "bounds", "stats")
AXES = ("power", "L", "M", "K", "r_e")
LAYOUTS = {"square": random_scenario, "road": roadside_scenario}
SWEEP_COLUMNS = ("axis", "value", "scheme", "n_slots", "max_crlb", "mse", "mse_se", "mc_crlb", "trials", "seed")
ACTIVE_THRESHOLD = 1e-3


# ---------------------------------------------------------------- scenario files

def _db(x: float) -> float:
    return 10.0 * math.log10(x)


def _from_db(x: float) -> float:
    return 10.0 ** (x / 10.0)


def _number(obj, key, path, default=None):
    if key not in obj:
        if default is None:
            raise ValidationError(path, "missing")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(path, f"expected a number, got {v!r}")
    return float(v)


def _points(raw, path):
    if not isinstance(raw, list):
        raise ValidationError(path, "expected a list of [x, y] pairs")
    out = []
    for i, p in enumerate(raw):
        if not (isinstance(p, (list, tuple)) and len(p) == 2):
            raise ValidationError(f"{path}[{i}]", f"expected [x, y], got {p!r}")
        out.append((_number({"v": p[0]}, "v", f"{path}[{i}]"), _number({"v": p[1]}, "v", f"{path}[{i}]")))
    return tuple(out)


def scenario_from_dict(data: dict) -> Scenario:
    """Build a Scenario from the JSON layout; dB fields become linear.

    Linear ``beta0`` / ``sigma_s2`` keys, when present, take precedence over
    their ``_db`` counterparts so written files reload exactly.
    """
    if not isinstance(data, dict):
        raise ParseError("scenario file must hold a JSON object")
    heights = data.get("heights", {})
    irs = data.get("irs", {})
    radio = data.get("radio", {})
    defaults = RadioParams()

    def level(key):
        if key in radio:
            return _number(radio, key, f"radio.{key}")
        if f"{key}_db" in radio:
            return _from_db(_number(radio, f"{key}_db", f"radio.{key}_db"))
        return getattr(defaults, key)

    params = RadioParams(
        beta0=level("beta0"),
        sigma_s2=level("sigma_s2"),
        p_tx=_number(radio, "p_tx_w", "radio.p_tx_w", defaults.p_tx),
        delta_T=_number(radio, "delta_T_s", "radio.delta_T_s", defaults.delta_T),
        delta_t=_number(radio, "delta_t_s", "radio.delta_t_s", defaults.delta_t),
        c0=_number(radio, "c0", "radio.c0", defaults.c0),
        d_min=_number(radio, "d_min_m", "radio.d_min_m", defaults.d_min),
    )
    size = []
    for key in ("L_x", "L_y"):
        v = irs.get(key, 40)
        if isinstance(v, bool) or not isinstance(v, int):
            raise ValidationError(f"irs.{key}", f"expected an integer, got {v!r}")
        size.append(v)
    return Scenario(
        bs_positions=_points(data.get("bs"), "bs"),
        target_priors=_points(data.get("targets"), "targets"),
        h_bs=_number(heights, "h_bs_m", "heights.h_bs_m", 5.0),
        h_irs=_number(heights, "h_irs_m", "heights.h_irs_m", 1.0),
        r_e=_number(data, "r_e_m", "r_e_m", 5.0),
        irs_size=tuple(size),
        radio=params,
        allow_coplanar=bool(heights.get("allow_coplanar", False)),
    )


def scenario_to_dict(scenario: Scenario) -> dict:
    r = scenario.radio
    return {
        "bs": [list(p) for p in scenario.bs_positions],
        "targets": [list(p) for p in scenario.target_priors],
        "heights": {"h_bs_m": scenario.h_bs, "h_irs_m": scenario.h_irs,
                    "allow_coplanar": scenario.allow_coplanar},
        "irs": {"L_x": scenario.irs_size[0], "L_y": scenario.irs_size[1]},
        "radio": {
            "beta0_db": _db(r.beta0), "beta0": r.beta0,
            "sigma_s2_db": _db(r.sigma_s2), "sigma_s2": r.sigma_s2,
            "p_tx_w": r.p_tx, "delta_T_s": r.delta_T, "delta_t_s": r.delta_t,
            "c0": r.c0, "d_min_m": r.d_min,
        },
        "r_e_m": scenario.r_e,
    }


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return scenario_from_dict(data)


def dump_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")


# ---------------------------------------------------------------- experiment spec

@dataclass
class ExperimentSpec:
    command: str
    scenario_path: str | None = None
    schemes: tuple[str, ...] = ("proposed",)
    sweep_axis: str | None = None
    sweep_values: tuple[float, ...] = ()
    trials: int = 0
    seed: int = 0
    out: str = "results"
    workers: int = 1
    random: int = 0
    K: int | None = None
    M: int | None = None
    target: int = 0
    count: int = 200
    layout: str = "square"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValidationError("command", f"unknown command {self.command!r}")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValidationError("scheme", f"unknown scheme {s!r}; choose from {', '.join(SCHEMES)}")
        if self.sweep_axis is not None and self.sweep_axis not in AXES:
            raise ValidationError("sweep.axis", f"unknown axis {self.sweep_axis!r}; choose from {', '.join(AXES)}")
        vals = self.sweep_values
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValidationError("sweep.values", "values must be strictly increasing")
        if self.layout not in LAYOUTS:
            raise ValidationError("layout", f"unknown layout {self.layout!r}; choose from {', '.join(LAYOUTS)}")
        if self.trials < 0:
            raise ValidationError("trials", "must be >= 0")


def parse_values(text: str) -> tuple[float, ...]:
    """``a,b,c`` or ``lo..hi`` (10 points) or ``lo..hi:n`` evenly spaced values."""
    text = text.strip()
    try:
        if ".." in text:
            lo, rest = text.split("..", 1)
            hi, _, n = rest.partition(":")
            n = int(n) if n else 10
            if n < 2:
                raise ValidationError("sweep.values", "a range needs at least 2 points")
            return tuple(float(v) for v in np.linspace(float(lo), float(hi), n))
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ParseError(f"cannot parse sweep values {text!r}") from exc


# ---------------------------------------------------------------- experiments

def _with_axis(scenario: Scenario, axis: str, value: float) -> Scenario:
    if axis == "power":
        return scenario.with_power(value)
    if axis == "r_e":
        return replace(scenario, r_e=value)
    n = int(round(value))
    if n != value or n < 1:
        raise ValidationError(f"sweep.{axis}", f"expected a positive integer, got {value!r}")
    if axis == "L":
        return replace(scenario, irs_size=(n, n))
    if axis == "M":
        if n > scenario.n_bs:
            raise ValidationError("sweep.M", f"scenario has only {scenario.n_bs} BSs")
        return scenario.subset(bs=range(n))
    if n > scenario.n_targets:
        raise ValidationError("sweep.K", f"scenario has only {scenario.n_targets} targets")
    return scenario.subset(targets=range(n))


def _random_bases(spec: ExperimentSpec, template: Scenario | None, K: int, M: int) -> list[Scenario]:
    kwargs = {}
    if template is not None:
        kwargs = dict(h_bs=template.h_bs, h_irs=template.h_irs, r_e=template.r_e,
                      irs_size=template.irs_size, radio=template.radio)
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.random)
    make = LAYOUTS[spec.layout]
    return [make(np.random.default_rng(s), K, M, **kwargs) for s in seeds]


def _sweep_task(args):
    scenarios, axis, value, scheme, trials, seed = args
    slots, crlbs, mses, ses, bounds = [], [], [], [], []
    for sc in scenarios:
        res = run_scheme(sc, scheme)
        slots.append(res.n_slots)
        crlbs.append(res.max_crlb)
        if trials:
            mc = monte_carlo(sc, res.plan, res.allocation, trials, seed)
            mses.append(mc.mse)
            ses.append(mc.mse_se)
            bounds.append(mc.crlb)
    row = {
        "axis": axis, "value": value, "scheme": scheme,
        "n_slots": float(np.mean(slots)), "max_crlb": float(np.mean(crlbs)),
        "mse": "", "mse_se": "", "mc_crlb": "", "trials": trials, "seed": seed,
    }
    if trials:
        row["mse"] = float(np.mean(mses))
        row["mse_se"] = float(math.sqrt(np.sum(np.square(ses))) / len(ses))
        row["mc_crlb"] = float(np.mean(bounds))
    return row


def _base_scenario(spec: ExperimentSpec) -> Scenario | None:
    return load_scenario(spec.scenario_path) if spec.scenario_path else None


def _require_scenario(spec: ExperimentSpec) -> Scenario:
    sc = _base_scenario(spec)
    if sc is None:
        raise ValidationError("scenario", "--scenario is required for this command")
    return sc


def _sweep_rows(spec: ExperimentSpec) -> list[dict]:
    axis = spec.sweep_axis or "power"
    template = _base_scenario(spec)
    values = spec.sweep_values
    if not values:
        if template is None:
            raise ValidationError("sweep.values", "no sweep values given")
        values = (template.radio.p_tx,) if axis == "power" else ()
    tasks = []
    for v in values:
        if spec.random:
            K = int(v) if axis == "K" else (spec.K or (template.n_targets if template else 10))
            M = int(v) if axis == "M" else (spec.M or (template.n_bs if template else 4))
            bases = _random_bases(spec, template, K, M)
            if axis not in ("K", "M"):
                bases = [_with_axis(b, axis, v) for b in bases]
        else:
            if template is None:
                raise ValidationError("scenario", "--scenario or --random is required")
            bases = [_with_axis(template, axis, v)]
        for scheme in spec.schemes:
            tasks.append((bases, axis, v, scheme, spec.trials, spec.seed))
    if spec.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            return list(pool.map(_sweep_task, tasks))
    return [_sweep_task(t) for t in tasks]


def stats_table(allocations: Sequence[Sequence[float]], threshold: float = ACTIVE_THRESHOLD) -> list[dict]:
    """Histogram of active-BS counts (1, 2, 3, 4, 5+) with the smallest active share per bin."""
    bins = {b: [] for b in ("1", "2", "3", "4", "5+")}
    for eta in allocations:
        eta = np.asarray(eta, dtype=float)
        active = eta[eta > threshold]
        n = active.size
        bins["5+" if n >= 5 else str(max(n, 1))].append(float(active.min()) if n else 0.0)
    total = max(len(allocations), 1)
    return [
        {"n_active": b, "count": len(v), "fraction": len(v) / total,
         "min_eta": min(v) if v else ""}
        for b, v in bins.items()
    ]


def _stats_rows(spec: ExperimentSpec) -> list[dict]:
    template = _base_scenario(spec)
    M = spec.M or 10
    spec = replace(spec, random=spec.count)
    config = SolverConfig()
    etas = []
    for sc in _random_bases(spec, template, 1, M):
        table = budget_table(sc)
        obj = CrlbObjective.single(table.gamma_tilde[0], table.azimuth[0], table.c0)
        etas.append(solve_single(obj, M, config).eta)
    return stats_table(etas, config.active_threshold)


def _crlb_rows(spec: ExperimentSpec) -> list[dict]:
    sc = _require_scenario(spec)
    rows = []
    for scheme in spec.schemes:
        res = run_scheme(sc, scheme)
        for k, v in enumerate(res.crlbs):
            rows.append({"scheme": scheme, "target": k, "crlb": v,
                         "degenerate": int(math.isinf(v)), "n_slots": res.n_slots})
    return rows


def _optimize_rows(spec: ExperimentSpec) -> list[dict]:
    sc = _require_scenario(spec)
    table = budget_table(sc)
    targets = range(sc.n_targets) if spec.options.get("all_targets") else [spec.target]
    rows = []
    for k in targets:
        if not 0 <= k < sc.n_targets:
            raise ValidationError("target", f"index {k} out of range")
        obj = CrlbObjective.single(table.gamma_tilde[k], table.azimuth[k], table.c0)
        res = solve_single(obj, sc.n_bs)
        for m, e in enumerate(res.eta):
            rows.append({"target": k, "bs": m, "eta": float(e), "crlb": res.value,
                         "converged": int(res.converged)})
    return rows


def _associate_rows(spec: ExperimentSpec) -> list[dict]:
    sc = _require_scenario(spec)
    rows = []
    for scheme in spec.schemes:
        res = run_scheme(sc, scheme)
        eta = res.allocation.eta
        for n, slot in enumerate(res.plan.slots()):
            for k, m in slot:
                rows.append({"scheme": scheme, "slot": n, "target": k, "bs": m,
                             "eta": float(eta[n]), "max_crlb": res.max_crlb})
    return rows


def _simulate_rows(spec: ExperimentSpec) -> list[dict]:
    sc = _require_scenario(spec)
    trials = spec.trials or 500
    return [
        _sweep_task(([sc], "power", sc.radio.p_tx, scheme, trials, spec.seed))
        for scheme in spec.schemes
    ]


def _bounds_rows(spec: ExperimentSpec) -> list[dict]:
    K, M = spec.K, spec.M
    if K is None or M is None:
        raise ValidationError("bounds", "K and M are required, e.g. `bounds K=10 M=4`")
    rows = []
    for mode in ("none", "full"):
        cb = counting_bounds(K, M, mode)
        rows.append({"K": K, "M": M, "interference": mode, "n_min": cb.n_min,
                     "k_max": cb.k_max})
    return rows


_RUNNERS = {
    "crlb": _crlb_rows,
    "optimize-single": _optimize_rows,
    "associate": _associate_rows,
    "simulate-mle": _simulate_rows,
    "sweep": _sweep_rows,
    "bounds": _bounds_rows,
    "stats": _stats_rows,
}


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()


def _config_hash(spec: ExperimentSpec) -> str:
    payload = asdict(spec)
    payload.pop("out")
    payload.pop("workers")
    if spec.scenario_path:
        payload["scenario"] = scenario_to_dict(load_scenario(spec.scenario_path))
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def run(spec: ExperimentSpec) -> tuple[int, list[dict]]:
    """Run one experiment and write ``<out>.csv`` plus ``<out>.manifest.json``."""
    rows = _RUNNERS[spec.command](spec)
    out = Path(spec.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    csv_path = out.with_name(out.name + ".csv")
    csv_path.write_text(rows_to_csv(rows))
    manifest = {
        "command": spec.command,
        "seed": spec.seed,
        "config_hash": _config_hash(spec),
        "spec": asdict(spec),
        "rows": len(rows),
        "csv": str(csv_path),
        "versions": {
            "irsloc": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    out.with_name(out.name + ".manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return 0, rows


# ---------------------------------------------------------------- argument parsing

def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="irsloc", description="IRS-aided localization experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("params", nargs="*", help="KEY=VALUE pairs, e.g. K=10 M=4 for `bounds`")
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--scheme", default="proposed", help="scheme name, comma list, or 'all'")
    p.add_argument("--sweep", nargs=2, metavar=("AXIS", "VALUES"),
                   help=f"axis in {{{', '.join(AXES)}}}; values 'a,b,c' or 'lo..hi[:n]'")
    p.add_argument("--trials", type=int, default=0, help="Monte Carlo trials per point (0 = CRLB only)")
    p.add_argument("--seed", type=int, help="master seed (falls back to $LOC_SEED, then 0)")
    p.add_argument("--out", default="results", help="output prefix for .csv and .manifest.json")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--random", type=int, default=0, help="average over this many random placements")
    p.add_argument("--target", type=int, default=0)
    p.add_argument("--count", type=int, default=200, help="placements for `stats`")
    p.add_argument("--layout", choices=tuple(LAYOUTS), default=None,
                   help="random placement: uniform squares or BSs beside a road (default: road for `stats`)")
    p.add_argument("-K", type=int)
    p.add_argument("-M", type=int)
    return p


def _parse_params(params: Sequence[str]) -> dict:
    out = {}
    for item in params:
        key, sep, value = item.partition("=")
        if not sep:
            raise ParseError(f"expected KEY=VALUE, got {item!r}")
        try:
            out[key] = int(value)
        except ValueError as exc:
            raise ParseError(f"{key} must be an integer, got {value!r}") from exc
    return out


def spec_from_args(argv: Sequence[str] | None = None) -> ExperimentSpec:
    args = _build_parser().parse_args(argv)
    params = _parse_params(args.params)
    seed = args.seed
    if seed is None:
        env = os.environ.get("LOC_SEED")
        try:
            seed = int(env) if env else 0
        except ValueError as exc:
            raise ParseError(f"LOC_SEED must be an integer, got {env!r}") from exc
    schemes = SCHEMES if args.scheme == "all" else tuple(s.strip() for s in args.scheme.split(","))
    axis, values = (None, ())
    if args.sweep:
        axis, values = args.sweep[0], parse_values(args.sweep[1])
    unknown = set(params) - {"K", "M"}
    if unknown:
        raise ParseError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
    return ExperimentSpec(
        command=args.command,
        scenario_path=args.scenario,
        schemes=schemes,
        sweep_axis=axis,
        sweep_values=values,
        trials=args.trials,
        seed=seed,
        out=args.out,
        workers=args.workers,
        random=args.random,
        K=params.get("K", args.K),
        M=params.get("M", args.M),
        target=args.target,
        count=args.count,
        layout=args.layout or ("road" if args.command == "stats" else "square"),
    )


def main(argv: Sequence[str] | None = None) -> int:
    try:
        spec = spec_from_args(argv)
        status, _ = run(spec)
        return status
    except (IrsLocError, ValueError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, ValidationError):
            err["path"] = exc.path
        print(json.dumps(err), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
