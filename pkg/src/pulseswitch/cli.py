"""Command-line entry point: ``pulseswitch <command> [options]``.

Every invocation writes one run directory holding the result files, a
``manifest.json`` with their SHA-256 digests and the resolved
configuration, and a separate ``timing.json``.  Result files depend only on
the configuration and seed.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 contract violation (e.g. data contradicting monotonicity).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bounding, oscillator
from .errors import (ConfigError, DomainError, EmptyFrontier, IntegrationError,
                     MonotoneViolation, NoBifurcationInRange, NoEquilibriumFound, NoEventsFired,
                     NoParameterOrder, NotNearMonotone, UpperBoundTooSmall)
from .models import Box, get_model
from .ode_core import IntegratorSettings, PulseInput
from .order import OrthantOrder, check_kamke_muller, infer_orthant
from .separatrix import (AlgSettings, bisection_separatrix, classify_switch, parse_grid,
                         random_sampling_separatrix, switch_pair)
from .steady import bifurcation_scan, find_steady_states

log = logging.getLogger("pulseswitch")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CONTRACT = 4

NUMERIC_ERRORS = (IntegrationError, DomainError, NoEquilibriumFound, NoBifurcationInRange,
                  UpperBoundTooSmall, EmptyFrontier, NoEventsFired)
CONTRACT_ERRORS = (MonotoneViolation, NotNearMonotone, NoParameterOrder)

COMMANDS = ("steady", "bifurcation", "check-monotone", "switch", "separatrix", "bound",
            "oscillate")


# ---------------------------------------------------------------------------
# configuration


def _parse_assign(items, what: str, problems: list) -> dict:
    out = {}
    for item in items or ():
        key, sep, val = item.partition("=")
        if not sep:
            problems.append(f"{what} {item!r} must look like name=value")
            continue
        out[key.strip()] = val.strip()
    return out


def _floats(text: str, what: str, problems: list) -> list[float] | None:
    try:
        return [float(v) for v in str(text).replace(":", ",").split(",") if v != ""]
    except ValueError:
        problems.append(f"{what} {text!r} is not a list of numbers")
        return None


def load_config(args: argparse.Namespace) -> dict:
    """Merge the JSON config file with command-line flags (flags win)."""
    cfg: dict = {}
    if args.params_file:
        try:
            cfg = json.loads(Path(args.params_file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.params_file}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
    cfg = dict(cfg)
    cfg["command"] = args.command
    for key, val in vars(args).items():
        if key in ("command", "params_file", "param", "verbose") or val is None:
            continue
        cfg[key] = val
    problems: list[str] = []
    if args.param:
        params = dict(cfg.get("params", {}))
        for k, v in _parse_assign(args.param, "--param", problems).items():
            try:
                params[k] = float(v)
            except ValueError:
                problems.append(f"--param {k} has non-numeric value {v!r}")
        cfg["params"] = params
    if isinstance(cfg.get("model"), dict):
        spec = cfg.pop("model")
        if "terms" in spec:
            cfg["model_spec"] = spec
            cfg["model"] = spec.get("name", "custom")
        else:
            cfg["model"] = spec.get("name")
            cfg["params"] = {**spec.get("params", {}), **cfg.get("params", {})}
            if "domain" in spec:
                cfg.setdefault("domain", spec["domain"])
    if "overrides" in cfg:
        cfg.setdefault("domain", cfg["overrides"])
    if problems:
        raise ConfigError(problems)
    return cfg


def resolve_model(cfg: dict, problems: list):
    name = cfg.get("model")
    if not name:
        problems.append("model is required (--model or config 'model')")
        return None
    try:
        model = get_model(cfg.get("model_spec") or name)
        params = cfg.get("params") or {}
        if params:
            model = model.with_params(**{k: float(v) for k, v in params.items()})
        if "domain" in cfg:
            d = cfg["domain"]
            model = model.with_domain(Box(tuple(d["lower"]), tuple(d["upper"])))
    except ConfigError as exc:
        problems.extend(exc.problems)
        return None
    except (KeyError, TypeError, ValueError) as exc:
        problems.append(f"invalid model configuration: {exc}")
        return None
    return model


def integrator_settings(model, cfg: dict, problems: list) -> IntegratorSettings | None:
    over = dict(cfg.get("integrator", {}))
    for key in ("rtol", "atol", "t_end"):
        if cfg.get(key) is not None:
            over[key] = cfg[key]
    if cfg.get("method"):
        over["method"] = cfg["method"]
    try:
        return IntegratorSettings.for_model(model, **over)
    except (TypeError, ValueError) as exc:
        problems.append(f"integrator: {exc}")
        return None


def alg_settings(model, cfg: dict, s: IntegratorSettings, problems: list) -> AlgSettings | None:
    kw = dict(cfg.get("algorithm_settings", {}))
    mapping = {"epsilon": "epsilon", "grid": "grid", "seed": "seed", "jobs": "jobs",
               "target_error": "target_error", "max_samples": "max_samples",
               "mu_up": "mu_up", "n_gr": "n_gr", "n_eps": "n_eps", "t_e": "t_e",
               "strict": "strict", "channel": "channel"}
    for src, dst in mapping.items():
        if cfg.get(src) is not None:
            kw[dst] = cfg[src]
    for key in ("beta", "box_beta", "tau_bounds"):
        if key in kw:
            kw[key] = tuple(kw[key])
    if "jobs" not in kw:
        kw["jobs"] = os.cpu_count() or 1
    if "grid" in kw:
        try:
            g = parse_grid(kw["grid"])
            kw.setdefault("tau_bounds", (float(g[0]), float(g[-1])) if g[-1] > g[0] else None)
        except ConfigError as exc:
            problems.extend(exc.problems)
            return None
    try:
        if model is None:
            # validate anyway so that every problem is reported in one go
            AlgSettings(integrator=s, **kw)
            return None
        return AlgSettings.for_model(model, integrator=s, **kw)
    except ConfigError as exc:
        problems.extend(exc.problems)
    except TypeError as exc:
        problems.append(f"algorithm settings: {exc}")
    return None


def _order(cfg: dict, model, problems: list) -> OrthantOrder | None:
    spec = cfg.get("order")
    if spec is None:
        return None
    try:
        if isinstance(spec, str):
            eps, _, delta = spec.partition("/")
            spec = {"eps": [int(v) for v in eps.split(",")],
                    "delta": [int(v) for v in delta.split(",")] if delta else [0] * model.n_inputs}
        o = OrthantOrder(tuple(spec["eps"]), tuple(spec["delta"]))
    except (KeyError, TypeError, ValueError) as exc:
        problems.append(f"order: {exc}")
        return None
    if len(o.state_signs) != model.dim or len(o.input_signs) != model.n_inputs:
        problems.append("order dimensions do not match the model")
        return None
    return o


def _require(cfg, keys, problems, positive=()):
    for k in keys:
        if cfg.get(k) is None:
            problems.append(f"--{k.replace('_', '-')} is required")
    for k in positive:
        v = cfg.get(k)
        if v is not None and not (isinstance(v, (int, float)) and v > 0):
            problems.append(f"{k} must be positive")


# ---------------------------------------------------------------------------
# output


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


class RunDir:
    """Collects result files; only the coordinating process writes."""

    def __init__(self, path: Path):
        self.path = path
        self.files: dict[str, str] = {}

    def write(self, name: str, text: str) -> None:
        self.path.mkdir(parents=True, exist_ok=True)
        (self.path / name).write_text(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()

    def finish(self, cfg: dict, status: str, elapsed: float) -> None:
        manifest = {"command": cfg["command"], "config": cfg, "status": status,
                    "files": dict(sorted(self.files.items()))}
        self.path.mkdir(parents=True, exist_ok=True)
        (self.path / "manifest.json").write_text(dumps(manifest))
        (self.path / "timing.json").write_text(dumps({"elapsed_s": elapsed}))


def default_out(cfg: dict) -> Path:
    return Path("runs") / f"{cfg['command']}-{cfg.get('model', 'none')}-seed{cfg.get('seed', 0)}"


# ---------------------------------------------------------------------------
# commands


def cmd_steady(cfg: dict, run: RunDir) -> dict:
    problems: list[str] = []
    model = resolve_model(cfg, problems)
    if problems:
        raise ConfigError(problems)
    u = cfg.get("mu") or 0.0
    u_vec = np.zeros(model.n_inputs)
    u_vec[int(cfg.get("channel") or 0)] = u
    eqs = find_steady_states(model, u_vec, n_starts=int(cfg.get("n_starts") or 64),
                             seed=int(cfg.get("seed") or 0))
    rows = ["kind," + ",".join(f"x{i + 1}" for i in range(model.dim)) + ",eigen_real_max"]
    for p in eqs:
        rows.append(",".join(["stable" if p.stable else "unstable"]
                             + [repr(float(v)) for v in p.state] + [repr(p.eigen_real_max)]))
    run.write("equilibria.csv", "\n".join(rows) + "\n")
    report = {"model": model.describe(), **eqs.to_dict()}
    run.write("equilibria.json", dumps(report))
    return {"n_equilibria": len(eqs), "n_stable": len(eqs.stable)}


def cmd_bifurcation(cfg: dict, run: RunDir) -> dict:
    problems: list[str] = []
    model = resolve_model(cfg, problems)
    rng = cfg.get("range") or [0.0, float(model.hints.get("mu_up", 10.0)) if model else 10.0]
    if len(rng) != 2 or not rng[1] > rng[0]:
        problems.append("--range needs two increasing values")
    tol = cfg.get("tol") or 1e-3
    if not tol > 0:
        problems.append("--tol must be positive")
    s = None
    if model is not None:
        over = {k: cfg[k] for k in ("rtol", "atol") if cfg.get(k) is not None}
        t_end = cfg.get("t_end") or max(2000.0, float(model.hints.get("t_end", 0.0)))
        s = IntegratorSettings.for_model(model, t_end=t_end, **over)
    if problems:
        raise ConfigError(problems)
    scan = bifurcation_scan(model, None, rng, tol=tol, n_grid=int(cfg.get("n_grid") or 61),
                            channel=int(cfg.get("channel") or 0), s=s)
    run.write("bifurcation.csv", scan.to_csv())
    run.write("bifurcation.json", dumps(scan.to_dict()))
    return {"mu_min_bracket": list(scan.mu_min_bracket)}


def cmd_check_monotone(cfg: dict, run: RunDir) -> dict:
    problems: list[str] = []
    model = resolve_model(cfg, problems)
    o = _order(cfg, model, problems) if model else None
    if problems:
        raise ConfigError(problems)
    u_hi = float(cfg.get("u_max") or model.hints.get("mu_up", 1.0))
    n = int(cfg.get("samples") or 2000)
    seed = int(cfg.get("seed") or 0)
    inferred = None
    if o is None:
        inferred = infer_orthant(model, None, (0.0, u_hi), n, seed)
        o = inferred or OrthantOrder.positive(model.dim, model.n_inputs)
    rep = check_kamke_muller(model, o, None, (0.0, u_hi), n, seed)
    out = rep.to_dict()
    out["inferred"] = inferred.to_dict() if inferred else None
    out["order_given"] = cfg.get("order") is not None
    run.write("monotone.json", dumps(out))
    return {"holds": rep.holds, "order": o.to_dict(), "inferred": out["inferred"]}


def cmd_switch(cfg: dict, run: RunDir) -> dict:
    problems: list[str] = []
    _require(cfg, ("mu", "tau"), problems)
    model = resolve_model(cfg, problems)
    c = {k: v for k, v in cfg.items() if k != "t_end"}
    if cfg.get("t_end") is not None:
        c["t_e"] = cfg["t_end"]
    s = integrator_settings(model, c, problems) if model else None
    a = alg_settings(model, c, s or IntegratorSettings(), problems)
    if problems:
        raise ConfigError(problems)
    try:
        pulse = PulseInput(cfg["mu"], cfg["tau"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    s0, s1 = switch_pair(model, a.channel)
    out = classify_switch(model, s0, s1, pulse, a)
    run.write("outcome.json", dumps({"mu": pulse.mu, "tau": pulse.tau, "s0": s0, "s1": s1,
                                     **out.to_dict()}))
    return {"outcome": out.tag}


def cmd_separatrix(cfg: dict, run: RunDir) -> dict:
    problems: list[str] = []
    algo = cfg.get("algorithm") or "bisect"
    if algo not in ("bisect", "sample"):
        problems.append("--algorithm must be 'bisect' or 'sample'")
    model = resolve_model(cfg, problems)
    s = integrator_settings(model, {k: v for k, v in cfg.items() if k != "t_end"}, problems) \
        if model else None
    c = dict(cfg)
    if c.get("t_end") is not None:
        c["t_e"] = c["t_end"]
    a = alg_settings(model, c, s or IntegratorSettings(), problems)
    if problems:
        raise ConfigError(problems)
    s0, s1 = switch_pair(model, a.channel)
    if algo == "bisect":
        a = replace(a, n_par=cfg.get("n_par") or a.jobs)
        est = bisection_separatrix(model, s0, s1, a)
    else:
        a = replace(a, n_par=cfg.get("n_par"))
        est = random_sampling_separatrix(model, s0, s1, a)
    run.write("separatrix.csv", est.to_csv())
    report = est.to_dict()
    report["settings"] = a.to_dict()
    report["s0"], report["s1"] = s0, s1
    run.write("separatrix.json", dumps(report))
    return {"algorithm": algo, "n_samples": est.n_samples,
            "relative_error": report.get("relative_error"),
            "sample_efficiency": report.get("sample_efficiency")}


def _bounding_pair(cfg: dict, model, problems: list):
    spec = cfg.get("bound", {})
    kind = spec.get("kind") or ("param" if cfg.get("param_box") or spec.get("param_box")
                                else "interval")
    if kind == "interval":
        offending = spec.get("offending") or []
        for item in cfg.get("offending") or []:
            vals = _floats(item, "--offending", problems)
            if vals and len(vals) == 2:
                offending.append((int(vals[0]), int(vals[1])))
            elif vals is not None:
                problems.append(f"--offending {item!r} needs two indices i,j")
        var_bounds = {int(k): tuple(v) for k, v in (spec.get("var_bounds") or {}).items()}
        for item in cfg.get("var_bounds") or []:
            vals = _floats(item, "--var-bounds", problems)
            if vals and len(vals) == 3:
                var_bounds[int(vals[0])] = (vals[1], vals[2])
            elif vals is not None:
                problems.append(f"--var-bounds {item!r} needs j:lo:hi")
        if problems:
            return None, None
        return model, lambda: bounding.build_interval_bounds(model, offending, var_bounds or None)
    box = {k: tuple(v) for k, v in (spec.get("param_box") or {}).items()}
    for k, v in _parse_assign(cfg.get("param_box"), "--param-box", problems).items():
        vals = _floats(v, "--param-box", problems)
        if vals and len(vals) == 2:
            box[k] = tuple(vals)
        elif vals is not None:
            problems.append(f"--param-box {k} needs lo:hi")
    split = dict(spec.get("split") or {})
    for k, v in _parse_assign(cfg.get("split"), "--split", problems).items():
        split[k] = v.split(",")
    family = model
    try:
        for name, inst in split.items():
            family = bounding.split_parameter(family, name, inst)
    except ValueError as exc:
        problems.append(f"split: {exc}")
    if not box:
        problems.append("parameter bounds need --param-box name=lo:hi entries")
    if problems:
        return None, None
    return family, lambda: bounding.build_param_bounds(family, box, spec.get("param_signs"))


def cmd_bound(cfg: dict, run: RunDir) -> dict:
    problems: list[str] = []
    model = resolve_model(cfg, problems)
    s = integrator_settings(model, {k: v for k, v in cfg.items() if k != "t_end"}, problems) \
        if model else None
    c = dict(cfg)
    if c.get("t_end") is not None:
        c["t_e"] = c["t_end"]
    a = alg_settings(model, c, s or IntegratorSettings(), problems)
    nominal, build = _bounding_pair(cfg, model, problems) if model else (None, None)
    if problems:
        raise ConfigError(problems)
    pair = build()
    ordering = bounding.check_field_ordering(pair, nominal, seed=a.seed)
    cond = bounding.check_ss_conditions(pair, nominal)
    grid = a.tau_grid()
    a = replace(a, n_par=cfg.get("n_par") or a.jobs)
    ests = []
    for m in (pair.lower, nominal, pair.upper):
        s0, s1 = switch_pair(m, a.channel, pair.order)
        ests.append(bisection_separatrix(m, s0, s1, a))
    cont = bounding.containment_test(*ests, grid)
    report = {"pair": pair.to_dict(), "field_ordering": ordering.to_dict(),
              "conditions": cond.to_dict(), "containment": cont.to_dict()}
    run.write("bound.json", dumps(report))
    run.write("containment.csv", cont.to_csv())
    for tag, est in zip(("lower", "nominal", "upper"), ests):
        run.write(f"separatrix_{tag}.csv", est.to_csv())
    if cond.condss_ok and cond.condss2_ok and ordering.ok and not cont.ok:
        raise MonotoneViolation("separatrix containment fails although its hypotheses hold",
                                [r.to_dict() for r in cont.violations])
    return {"field_ordering": ordering.ok, "condss": cond.condss_ok, "condss2": cond.condss2_ok,
            "containment_violations": len(cont.violations)}


def cmd_oscillate(cfg: dict, run: RunDir) -> dict:
    problems: list[str] = []
    _require(cfg, ("mu", "tau"), problems)
    model = resolve_model(cfg, problems)
    o = _order(cfg, model, problems) if model else None
    s = integrator_settings(model, {k: v for k, v in cfg.items() if k != "t_end"}, problems) \
        if model else None
    ecfg = None
    if not problems:
        try:
            ecfg = oscillator.EventControlConfig(float(cfg["mu"]), float(cfg["tau"]),
                                                 float(cfg.get("epsilon") or 0.5),
                                                 float(cfg.get("t_end") or 400.0), o)
        except ConfigError as exc:
            problems.extend(exc.problems)
    if problems:
        raise ConfigError(problems)
    res = oscillator.run_event_control(model, ecfg, s)
    run.write("trajectory.csv", res.to_csv())
    run.write("events.json", res.log.to_json())
    metric = oscillator.persistence_metric(res.trajectory, res.log, ecfg.tau)
    run.write("persistence.json", dumps({"config": ecfg.to_dict(), **metric}))
    return metric


HANDLERS = {
    "steady": cmd_steady,
    "bifurcation": cmd_bifurcation,
    "check-monotone": cmd_check_monotone,
    "switch": cmd_switch,
    "separatrix": cmd_separatrix,
    "bound": cmd_bound,
    "oscillate": cmd_oscillate,
}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model")
    common.add_argument("--params-file", help="JSON config; flags override its values")
    common.add_argument("--param", action="append", metavar="NAME=VALUE",
                        help="model parameter override (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--out", help="run directory")
    common.add_argument("--t-end", type=float)
    common.add_argument("--rtol", type=float)
    common.add_argument("--atol", type=float)
    common.add_argument("--method", choices=("auto", "dopri5", "trbdf2"))
    common.add_argument("--channel", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pulseswitch",
                                description="Switching separatrices of bistable systems.")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("steady", parents=[common], help="equilibria and their stability")
    q.add_argument("--mu", type=float, help="constant input level")
    q.add_argument("--n-starts", type=int)

    q = sub.add_parser("bifurcation", parents=[common], help="bracket the fold in mu")
    q.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"))
    q.add_argument("--tol", type=float)
    q.add_argument("--n-grid", type=int)

    q = sub.add_parser("check-monotone", parents=[common], help="Kamke-Mueller sign check")
    q.add_argument("--order", help="state signs and input signs, e.g. 0,1/0")
    q.add_argument("--samples", type=int)
    q.add_argument("--u-max", type=float)

    q = sub.add_parser("switch", parents=[common], help="classify one pulse")
    q.add_argument("--mu", type=float)
    q.add_argument("--tau", type=float)

    def separatrix_flags(q):
        q.add_argument("--grid", help="{log|lin}:<min>:<max>:<n>")
        q.add_argument("--epsilon", type=float)
        q.add_argument("--mu-up", type=float)
        q.add_argument("--n-par", type=int)

    q = sub.add_parser("separatrix", parents=[common], help="estimate the switching separatrix")
    q.add_argument("--algorithm", choices=("bisect", "sample"))
    separatrix_flags(q)
    q.add_argument("--target-error", type=float)
    q.add_argument("--max-samples", type=int)
    q.add_argument("--n-gr", type=int)
    q.add_argument("--n-eps", type=int)
    q.add_argument("--strict", action="store_true", default=None)

    q = sub.add_parser("bound", parents=[common], help="bounding systems and containment")
    separatrix_flags(q)
    q.add_argument("--offending", action="append", metavar="I,J",
                   help="0-based interaction x_j -> f_i to freeze (repeatable)")
    q.add_argument("--var-bounds", action="append", metavar="J:LO:HI")
    q.add_argument("--param-box", action="append", metavar="NAME=LO:HI")
    q.add_argument("--split", action="append", metavar="NAME=INST1,INST2,...")

    q = sub.add_parser("oscillate", parents=[common], help="event-triggered pulse control")
    q.add_argument("--mu", type=float)
    q.add_argument("--tau", type=float)
    q.add_argument("--epsilon", type=float, help="face margin of the switching box")
    q.add_argument("--order")
    return p


def _error_report(exc: Exception, code: int) -> dict:
    rep = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, ConfigError):
        rep["problems"] = exc.problems
    if isinstance(exc, MonotoneViolation):
        rep["witnesses"] = exc.witnesses
    return rep


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    cfg: dict = {"command": args.command}
    run = None
    code, status = 0, "ok"
    try:
        cfg = load_config(args)
        run = RunDir(Path(cfg.get("out") or default_out(cfg)))
        summary = HANDLERS[args.command](cfg, run)
        print(dumps({"status": "ok", "out": str(run.path), **summary}), end="")
    except ConfigError as exc:
        code, status = EXIT_CONFIG, "config_error"
        err = _error_report(exc, code)
    except CONTRACT_ERRORS as exc:
        code, status = EXIT_CONTRACT, "contract_violation"
        err = _error_report(exc, code)
    except NUMERIC_ERRORS as exc:
        code, status = EXIT_NUMERIC, "numerical_failure"
        err = _error_report(exc, code)
    if code:
        print(dumps(err), end="", file=sys.stderr)
        if run is not None:
            run.write("error.json", dumps(err))
    if run is not None:
        run.finish(cfg, status, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
