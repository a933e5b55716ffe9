"""Command-line front end: config handling, subcommands, manifests.

Exit codes: 0 success, 1 identity failure, 2 config error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import os
import platform
import re
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import curvature as cv
from . import reduction as rd
from . import sde
from .errors import ConfigError, FibrilError, PathFailureThreshold
from .geometry import frame, frame_identities
from .models import AdaptedPoint, get_model, load_user_model, sample_points, user_model, validate_model

EXIT_OK, EXIT_IDENTITY, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

DEFAULTS = {
    "model": None,
    "scales": {"mu2kappa": 1.0, "mass": 1.0},
    "process": "reduced",
    "t": 0.2,
    "dt": 1e-3,
    "paths": 1000,
    "seed": 0,
    "start": None,
    "end": None,
    "relation": "zero",
    "irrep": "trivial",
    "bandwidth": None,
    "ordered": "exp",
    "omit_d_factors": False,
    "points": 200,
    "grid": None,
    "point": None,
    "dump_every": 0,
    "backend": "auto",
    "workers": 1,
    "max_failure_fraction": None,
    "tolerances": {"identity": 1e-8, "closure": 1e-7, "j2_forms": 1e-9, "zero_sum": 1e-8,
                   "killing_sigma": 1e-10, "model": 1e-10},
    "out": None,
}

# a start on the gauge surface, away from the excluded origin
DEFAULT_START = {1: [1.0, 0.0, 0.5, 0.0], 3: [1.0, 0.0, 0.0, 0.0, 0.3, -0.2, 0.1]}
DEFAULT_END = {1: [1.1, 0.0, 0.4, 0.0], 3: [1.1, 0.0, 0.0, 0.0, 0.3, -0.2, 0.1]}

# keys that do not change any numeric output
_NOT_HASHED = ("out", "workers")


# ---------------------------------------------------------------- config

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 reads 1e-8 (no dot) as a string; accept every JSON float form
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9]+\.[0-9]*|\.[0-9]+|[0-9]+)(?:[eE][-+]?[0-9]+)?$|^[-+]?\.(?:inf|Inf|INF)$|^\.(?:nan|NaN|NAN)$"),
    list("-+0123456789."))


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.load(text, Loader=_Loader)
    except (yaml.YAMLError, ValueError) as e:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a mapping")
    return data


def build_config(file_cfg: dict, overrides: dict) -> dict:
    unknown = set(file_cfg) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = _merge(_merge(DEFAULTS, file_cfg), {k: v for k, v in overrides.items() if v is not None})
    if cfg["model"] is None:
        raise ConfigError("a model is required (--model or 'model:' in the config)")
    _check_config(cfg)
    return cfg


def _check_config(cfg):
    if cfg["process"] not in sde.KINDS:
        raise ConfigError(f"process must be one of {sde.KINDS}")
    if cfg["relation"] not in ("zero", "momentum"):
        raise ConfigError("relation must be 'zero' or 'momentum'")
    if cfg["ordered"] not in ("exp", "linear"):
        raise ConfigError("ordered must be 'exp' or 'linear'")
    for k in ("t", "dt"):
        if not (isinstance(cfg[k], (int, float)) and cfg[k] > 0):
            raise ConfigError(f"{k} must be a positive number")
    for k in ("paths", "points", "workers"):
        if not (isinstance(cfg[k], int) and cfg[k] >= 1):
            raise ConfigError(f"{k} must be a positive integer")
    if not (isinstance(cfg["seed"], int) and 0 <= cfg["seed"] < 2 ** 64):
        raise ConfigError("seed must be an integer in [0, 2^64)")


def canonical(cfg: dict) -> str:
    """Canonical serialization: sorted keys, compact separators, round-trip floats."""
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"), allow_nan=False)


def numeric_config(cfg: dict) -> dict:
    """The config fields that can change numbers (what the digest covers)."""
    return {k: v for k, v in cfg.items() if k not in _NOT_HASHED}


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(canonical(numeric_config(cfg)).encode()).hexdigest()


def dump_config(cfg: dict) -> str:
    return canonical(cfg)


def load_config_text(text: str) -> dict:
    return json.loads(text)


def make_model(spec):
    if isinstance(spec, str):
        if spec.endswith((".json", ".yaml", ".yml")):
            return load_user_model(spec)
        return get_model(spec)
    if isinstance(spec, dict):
        if "file" in spec:
            return load_user_model(spec["file"])
        if "base" in spec:
            return user_model(spec)
        params = {k: v for k, v in spec.items() if k != "name"}
        return get_model(spec.get("name"), **params)
    raise ConfigError("model must be a name, a parameter mapping or a user-model file")


def worker_count(cfg) -> int:
    env = os.environ.get("FIBRIL_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as e:
            raise ConfigError(f"FIBRIL_THREADS must be an integer, got {env!r}") from e
        if n < 1:
            raise ConfigError("FIBRIL_THREADS must be >= 1")
        return n
    return int(cfg["workers"])


# ---------------------------------------------------------------- output

def _num(x):
    """JSON-ready copy with round-trip floats; complex arrays become {re, im}."""
    if isinstance(x, dict):
        return {str(k): _num(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    if isinstance(x, np.ndarray):
        if np.iscomplexobj(x):
            return {"re": _num(x.real.tolist()), "im": _num(x.imag.tolist())}
        return _num(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, complex):
        return {"re": _num(x.real), "im": _num(x.imag)}
    return x


def _write(path, text):
    try:
        if path in (None, "-"):
            sys.stdout.write(text)
        else:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e


def write_json(path, obj):
    _write(path, json.dumps(_num(obj), sort_keys=True, indent=1) + "\n")


def run_manifest(cfg: dict, command: str, results: dict, timings: dict, outputs: list, extra=None) -> dict:
    """Manifest dict; written next to the first output as <out>.manifest.json."""
    man = {
        "tool": "fibril",
        "version": __version__,
        "command": command,
        "config": cfg,
        "config_digest": config_digest(cfg),
        "seeds": {"seed": int(cfg["seed"])},
        "timings": timings,
        "residuals": results,
        "outputs": outputs,
        "environment": {"python": platform.python_version(), "numpy": np.__version__,
                        "kernels": sde.BACKEND},
    }
    if extra:
        man.update(extra)
    return _num(man)


def manifest_path(out):
    return None if out in (None, "-") else str(out) + ".manifest.json"


# ---------------------------------------------------------------- identity suite

def verify_model(m, n_points: int = 200, seed: int = 0, tolerances: dict | None = None) -> dict:
    """Run every identity at n random adapted points; returns {name: (residual, tol, passed)}."""
    tol = _merge(DEFAULTS["tolerances"], tolerances or {})
    rep = validate_model(m, n_samples=n_points, seed=seed, tol=tol["model"])
    out = {f"model.{k}": (v, rep.tolerances[k]) for k, v in rep.residuals.items()}
    rng = np.random.default_rng(seed)
    Q, f, a = sample_points(m, n_points, rng)
    Qs, ft, _ = m.to_adapted(Q, f)
    p = AdaptedPoint(Qs, ft, a)
    F = frame(m, p)
    for k, v in frame_identities(m, F).items():
        out[f"geometry.{k}"] = (v, tol["identity"])
    out["curvature.closure"] = (cv.closure_residual(m, F), tol["closure"])
    jP, jV = cv.j2(m, F)
    sP, sV = cv.j2_sigma(m, F)
    out["curvature.j2_forms"] = (float(max(np.max(np.abs(jP - sP)), np.max(np.abs(jV - sV)))), tol["j2_forms"])
    s = cv.sigma_terms(m, F)
    out["curvature.zero_sum"] = (float(np.max(np.abs(2 * s["j1_sigma"]))), tol["zero_sum"])
    Kt = np.concatenate([F.K_P, F.K_V], -2)
    out["curvature.killing_sigma"] = (float(np.max(np.abs(np.einsum("...a,...ag->...g", s["grad"], Kt)))),
                                      tol["killing_sigma"])
    return {k: (float(v), float(t), bool(v <= t)) for k, (v, t) in out.items()}


def verify_all(cfg: dict) -> dict:
    m = make_model(cfg["model"])
    return verify_model(m, cfg["points"], cfg["seed"], cfg["tolerances"])


# ---------------------------------------------------------------- subcommands

def _scales(cfg):
    return sde.PhysicalScales(mu2kappa=float(cfg["scales"]["mu2kappa"]), mass=float(cfg["scales"]["mass"]))


def _start(cfg, m, key="start", table=DEFAULT_START):
    v = cfg[key]
    if v is None:
        if m.n_G not in table:
            raise ConfigError(f"{key} is required for model {m.name}")
        v = table[m.n_G]
    v = [float(x) for x in v]
    return v


def cmd_validate(cfg, args):
    m = make_model(cfg["model"])
    rep = validate_model(m, n_samples=cfg["points"], seed=cfg["seed"], tol=cfg["tolerances"]["model"])
    res = {k: {"residual": v, "tolerance": rep.tolerances[k], "passed": rep.passed[k]}
           for k, v in rep.residuals.items()}
    write_json(cfg["out"], {"model": m.name, "n_samples": rep.n_samples, "identities": res, "passed": rep.ok})
    return (EXIT_OK if rep.ok else EXIT_IDENTITY), {k: v["residual"] for k, v in res.items()}


def _read_point(path, m):
    data = load_config_file(path)
    if "Qstar" in data:
        Qs = np.asarray(data["Qstar"], float)
        ft = np.asarray(data.get("ftilde", np.zeros(m.n_V)), float)
        a = np.asarray(data.get("a", np.zeros(m.n_G)), float)
        return AdaptedPoint(Qs, ft, a).check(m)
    if "Q" in data:
        Qs, ft, a = m.to_adapted(np.asarray(data["Q"], float), np.asarray(data.get("f", np.zeros(m.n_V)), float))
        return AdaptedPoint(Qs, ft, a)
    raise ConfigError("point file needs Q (and f) or Qstar (and ftilde, a)")


def cmd_frame(cfg, args):
    m = make_model(cfg["model"])
    if not cfg["point"]:
        raise ConfigError("frame needs --point FILE")
    p = _read_point(cfg["point"], m)
    F = frame(m, p)
    out = {"model": m.name, "Qstar": p.Qstar, "ftilde": p.ftilde, "a": p.a}
    for name in F.__dataclass_fields__:
        if name in ("point", "jets"):
            continue
        out[name] = getattr(F, name)
    D = cv.drift_bundle(m, F)
    for name in D.__dataclass_fields__:
        out["drift." + name] = getattr(D, name)
    write_json(cfg["out"], out)
    return EXIT_OK, {}


def parse_grid(spec: str, m):
    """'q0=0.5:2:16,f0=-1:1:9,f1=0.3' -> coordinate arrays over the product grid.

    Coordinates q0.. and f0.. are ambient (Q, f); unlisted ones are 0."""
    if not spec:
        raise ConfigError("jacobian needs --grid SPEC")
    names = [f"q{i}" for i in range(m.n_P)] + [f"f{i}" for i in range(m.n_V)]
    axes = {n: np.array([0.0]) for n in names}
    for item in str(spec).split(","):
        if "=" not in item:
            raise ConfigError(f"grid item {item!r} is not name=lo:hi:n or name=value")
        k, v = (s.strip() for s in item.split("=", 1))
        if k not in axes:
            raise ConfigError(f"grid coordinate {k!r} not in {names}")
        parts = v.split(":")
        try:
            if len(parts) == 1:
                axes[k] = np.array([float(parts[0])])
            elif len(parts) == 3:
                axes[k] = np.linspace(float(parts[0]), float(parts[1]), int(parts[2]))
            else:
                raise ValueError
        except ValueError as e:
            raise ConfigError(f"bad grid range {item!r}") from e
    mesh = np.meshgrid(*[axes[n] for n in names], indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], -1)
    return names, pts


def cmd_jacobian(cfg, args):
    m = make_model(cfg["model"])
    names, pts = parse_grid(cfg["grid"], m)
    Q, f = pts[:, :m.n_P], pts[:, m.n_P:]
    if not np.all(m.in_chart(Q)):
        raise ConfigError("grid reaches the excluded origin of the chart")
    Qs, ft, _ = m.to_adapted(Q, f)
    F = frame(m, AdaptedPoint(Qs, ft, np.zeros((len(Q), m.n_G))))
    s = cv.sigma_terms(m, F)
    mu = _scales(cfg).mu2kappa
    J = mu * cv.jacobian_integrand(m, F)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = [f"Qstar{i}" for i in range(m.n_P)] + [f"ftilde{i}" for i in range(m.n_V)]
    w.writerow(names + cols + ["sigma", "lap_H", "grad_sq", "J"])
    sig = np.log(F.det_d)
    for i in range(len(pts)):
        row = list(pts[i]) + list(Qs[i]) + list(ft[i]) + [sig[i], s["lap_H"][i], s["grad_sq"][i], J[i]]
        w.writerow([repr(float(x)) for x in row])
    _write(cfg["out"], buf.getvalue())
    return EXIT_OK, {"J_min": float(J.min()), "J_max": float(J.max())}


def cmd_simulate(cfg, args):
    m = make_model(cfg["model"])
    kind = cfg["process"]
    start = _start(cfg, m)
    if kind == "adapted" and len(start) == m.n_P + m.n_V:
        start = start + [0.0] * m.n_G
    irrep = rd.parse_irrep(cfg["irrep"], m) if kind == "reduced" and cfg["irrep"] != "trivial" else None
    K = int(cfg["dump_every"] or 0)
    mff = cfg["max_failure_fraction"]
    ens = sde.simulate(m, _scales(cfg), kind, start, cfg["t"], cfg["dt"], cfg["paths"], cfg["seed"],
                       irrep=irrep, ordered=cfg["ordered"], record=K > 0, backend=cfg["backend"],
                       workers=worker_count(cfg),
                       max_failure_fraction=sde.MAX_FAILURE_FRACTION if mff is None else mff)
    lines = []
    fail_step = {i: s for i, s, _ in ens.failures}
    for i in range(ens.n_paths):
        rec = {"path": i, "failed": bool(ens.failed[i]), "final": ens.final[i],
               "log_girsanov": ens.log_girsanov[i], "log_girsanov_closed": ens.log_girsanov_closed[i],
               "potential_integral": ens.potential_integral[i]}
        if i in fail_step:
            rec["failure_step"] = fail_step[i]
        if ens.ordered_exp is not None:
            rec["ordered_exp"] = ens.ordered_exp[i]
        if K > 0:
            sel = np.arange(0, len(ens.times), K)
            rec["times"] = ens.times[sel]
            rec["states"] = ens.states[i, sel]
        lines.append(json.dumps(_num(rec), sort_keys=True))
    _write(cfg["out"], "\n".join(lines) + "\n")
    return EXIT_OK, {"excluded_fraction": ens.excluded_fraction, "backend": ens.backend}


def cmd_reduce(cfg, args):
    m = make_model(cfg["model"])
    sc = _scales(cfg)
    start, end = _start(cfg, m), _start(cfg, m, "end", DEFAULT_END)
    mff = rd.MAX_EXCLUDED if cfg["max_failure_fraction"] is None else cfg["max_failure_fraction"]
    digest = config_digest(cfg)
    kw = dict(bandwidth=cfg["bandwidth"], seed=cfg["seed"], digest=digest, backend=cfg["backend"],
              max_failure_fraction=mff)
    if cfg["relation"] == "zero":
        lhs, rhs, z = rd.greens_relation_zero_momentum(m, sc, start, end, cfg["t"], cfg["dt"], cfg["paths"],
                                                       omit_d_factors=cfg["omit_d_factors"], **kw)
    else:
        irrep = rd.parse_irrep(cfg["irrep"], m)
        lhs, rhs, z = rd.greens_relation_momentum(m, sc, irrep, start, end, cfg["t"], cfg["dt"], cfg["paths"],
                                                  ordered=cfg["ordered"], **kw)
    rep = {"relation": cfg["relation"], "irrep": cfg["irrep"], "lhs": lhs.as_dict(), "rhs": rhs.as_dict(),
           "z_score": z, "excluded_fraction": max(lhs.excluded_fraction, rhs.excluded_fraction),
           "bandwidth": lhs.meta.get("bandwidth"), "config": numeric_config(cfg), "config_digest": digest}
    write_json(cfg["out"], rep)
    return EXIT_OK, {"z_score": z}


def cmd_verify(cfg, args):
    res = verify_all(cfg)
    ok = all(p for _, _, p in res.values())
    failed = sorted(k for k, (_, _, p) in res.items() if not p)
    rep = {"model": cfg["model"], "points": cfg["points"], "passed": ok, "failed": failed,
           "identities": {k: {"residual": v, "tolerance": t, "passed": p} for k, (v, t, p) in res.items()}}
    write_json(cfg["out"], rep)
    if not ok:
        for k in failed:
            v, t, _ = res[k]
            print(f"FAIL {k}: residual {v:.3e} > {t:.1e}", file=sys.stderr)
    return (EXIT_OK if ok else EXIT_IDENTITY), {k: v for k, (v, _, _) in res.items()}


COMMANDS = {"validate": cmd_validate, "frame": cmd_frame, "jacobian": cmd_jacobian,
            "simulate": cmd_simulate, "reduce": cmd_reduce, "verify": cmd_verify}


# ---------------------------------------------------------------- argument parsing

def _floats(text):
    try:
        return [float(x) for x in str(text).replace(" ", "").split(",") if x]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fibril", description="Stochastic reduction on principal bundles.")
    ap.add_argument("--version", action="version", version=f"fibril {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file; flags override it")
    common.add_argument("--model", help="built-in model name or user-model file")
    common.add_argument("--metric", help="built-in metric variant (euclidean, warped, cylinder)")
    common.add_argument("--rep", help="planar-rotor fiber representation (rotation, trivial)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output file ('-' for stdout)")
    common.add_argument("--mu2kappa", type=float)
    common.add_argument("--mass", type=float)
    common.add_argument("--workers", type=int, help="worker threads (FIBRIL_THREADS overrides)")
    common.add_argument("--no-manifest", action="store_true", help="skip the manifest file")
    for name, helptext in [("validate", "check model invariants"), ("frame", "dump every frame field at a point"),
                           ("jacobian", "tabulate J over a grid"), ("simulate", "simulate a path ensemble"),
                           ("reduce", "test a Green's-function relation"), ("verify", "run the identity suite")]:
        p = sub.add_parser(name, parents=[common], help=helptext)
        if name in ("validate", "verify"):
            p.add_argument("--points", type=int)
        if name == "frame":
            p.add_argument("--point", help="JSON/YAML file with Q, f or Qstar, ftilde, a")
        if name == "jacobian":
            p.add_argument("--grid", help="e.g. q0=0.5:2:16,f0=-1:1:9")
        if name in ("simulate", "reduce"):
            p.add_argument("--t", type=float)
            p.add_argument("--dt", type=float)
            p.add_argument("--paths", type=int)
            p.add_argument("--from", dest="start", type=_floats, help="start state, comma-separated")
            p.add_argument("--irrep", help="trivial, so2:K or su2:1/2")
            p.add_argument("--ordered", choices=["exp", "linear"])
            p.add_argument("--backend", choices=["auto", "kernel", "generic"])
            p.add_argument("--max-failure-fraction", type=float)
        if name == "simulate":
            p.add_argument("--process", choices=list(sde.KINDS))
            p.add_argument("--dump-every", type=int)
        if name == "reduce":
            p.add_argument("--relation", choices=["zero", "momentum"])
            p.add_argument("--to", dest="end", type=_floats, help="end state, comma-separated")
            p.add_argument("--bandwidth", type=_floats)
            p.add_argument("--omit-d-factors", action="store_true", default=None)
    return ap


def _overrides(args) -> dict:
    a = vars(args)
    ov = {}
    for key in ("seed", "out", "workers", "points", "point", "grid", "t", "dt", "paths", "start", "end",
                "irrep", "ordered", "backend", "max_failure_fraction", "process", "dump_every", "relation",
                "bandwidth", "omit_d_factors"):
        if a.get(key) is not None:
            ov[key] = a[key]
    sc = {k: a[k] for k in ("mu2kappa", "mass") if a.get(k) is not None}
    if sc:
        ov["scales"] = sc
    if a.get("model") is not None or a.get("metric") is not None or a.get("rep") is not None:
        ov["model"] = a.get("model")
        extra = {k: a[k] for k in ("metric", "rep") if a.get(k) is not None}
        if extra:
            ov["model"] = {"name": a.get("model") or "planar-rotor", **extra}
    return ov


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    t0 = time.perf_counter()
    try:
        file_cfg = load_config_file(args.config)
        ov = _overrides(args)
        if isinstance(ov.get("model"), dict) and isinstance(file_cfg.get("model"), dict):
            ov["model"] = _merge(file_cfg["model"], ov["model"])
        cfg = build_config(file_cfg, ov)
        code, summary = COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"fibril: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PathFailureThreshold as e:
        print(f"fibril: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (FibrilError, OSError) as e:
        print(f"fibril: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    if not args.no_manifest and manifest_path(cfg["out"]):
        man = run_manifest(cfg, args.command, summary, {"total_s": time.perf_counter() - t0},
                           [cfg["out"]], {"exit_code": code})
        try:
            write_json(manifest_path(cfg["out"]), man)
        except OSError as e:
            print(f"fibril: {e}", file=sys.stderr)
            return EXIT_RUNTIME
    return code


if __name__ == "__main__":
    sys.exit(main())
