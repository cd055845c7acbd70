"""Command-line front end.

Each invocation runs one command and writes CSV/JSON artifacts plus a
``run_manifest.json`` into the output directory. Exit status: 0 when every
asserted property holds, 1 on a property failure, 2 on a configuration error,
3 on numerical nonconvergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import entropy as en
from . import lgeodesic as lg
from . import variation as va
from .errors import (
    ChartError,
    ConfigurationError,
    CoverageError,
    DomainError,
    IntegrationError,
    NonconvergenceError,
    PreconditionError,
    PropagationError,
    RFEntError,
    StencilError,
    TruncationError,
)
from .geometry import curvature as cv
from .geometry import load_model
from .geometry.models import ManifoldModel
from .quadrature import QuadratureScheme

COMMANDS = ("volume", "theta", "geodesic", "identities", "monotonicity", "rescale", "jacobi", "suite")
CONFIG_KEYS = {
    "command", "model", "t_values", "scheme", "tolerances", "out_dir", "seed", "jobs", "lambda", "V", "points",
    "theta_mesh",
}
DEFAULT_TOLERANCES = {
    "monotone_slack": 1e-6,
    "flat_rel": 1e-6,
    "bound": 1e-6,
    "identity": 1e-4,
    "kr": 1e-6,
    "gradient": 1e-4,
    "rescale": 1e-5,
    "jacobi": 1e-3,
    "gram": 1e-6,
}
NUMERICAL_ERRORS = (
    NonconvergenceError, IntegrationError, PropagationError, TruncationError, CoverageError, StencilError,
)


@dataclass
class ExperimentConfig:
    command: str
    model: dict
    t_values: list
    scheme: dict = field(default_factory=lambda: {"kind": "tensor-hermite", "order": 32})
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    out_dir: str = "."
    seed: int = 0
    jobs: int = 1
    lam: list = field(default_factory=lambda: [0.5, 2.0, 4.0])
    V: list | None = None
    points: list | None = None
    theta_mesh: int = 16

    def build_model(self):
        return load_model(self.model)

    def build_scheme(self):
        return QuadratureScheme.from_spec(dict(self.scheme, seed=self.seed))

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


def default_times(model):
    t_max = getattr(model, "t_max", math.inf)
    if math.isfinite(t_max):
        return [round(f * t_max, 12) for f in (0.1, 0.3, 0.6)]
    return [0.1, 0.5, 1.0, 2.0]


def _model_from_flags(name, dim, kappa):
    spec = {"family": name}
    if dim is not None:
        spec["dim"] = dim
    if kappa is not None:
        spec["kappa"] = kappa
    if name == "einstein" and kappa is None:
        raise ConfigurationError("--model einstein needs --kappa")
    if name in ("flat", "hyperbolic", "sphere", "einstein") and dim is None:
        spec["dim"] = 2
    return spec


def _parse_times(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse time list {text!r}") from exc


def parse_config(text, overrides=None):
    """Validate a JSON experiment description; ``overrides`` (from flags) win."""
    raw = json.loads(text) if isinstance(text, str) and text.strip() else dict(text or {})
    if not isinstance(raw, dict):
        raise ConfigurationError("configuration must be a JSON object")
    raw = dict(raw, **{k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(raw) - CONFIG_KEYS
    if unknown:
        raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
    if "model" not in raw:
        raise ConfigurationError("configuration needs a 'model'")
    command = raw.get("command", "suite")
    if command not in COMMANDS:
        raise ConfigurationError(f"unknown command {command!r}; expected one of {COMMANDS}")
    model_spec = raw["model"]
    if isinstance(model_spec, str):
        model_spec = json.loads(model_spec) if model_spec.strip().startswith("{") else _model_from_flags(
            model_spec, None, None)
    model_spec = dict(model_spec)
    dim = model_spec.get("dim")
    if dim is not None and (not isinstance(dim, int) or dim < 1):
        raise ConfigurationError(f"dimension must be a positive integer, got {dim!r}")
    model = load_model(model_spec)
    t_values = raw.get("t_values")
    t_values = default_times(model) if t_values is None else t_values
    if isinstance(t_values, (int, float, str)):
        t_values = _parse_times(t_values)
    t_values = [float(t) for t in t_values]
    t_max = getattr(model, "t_max", math.inf)
    bad = [t for t in t_values if not (0.0 < t < t_max)]
    if bad or not t_values:
        raise ConfigurationError(f"t_values must lie in (0, {t_max}); offending: {bad}")
    scheme = raw.get("scheme", {"kind": "tensor-hermite", "order": 32})
    if isinstance(scheme, str):
        scheme = {"kind": scheme}
    scheme = dict({"order": 32}, **scheme)
    QuadratureScheme.from_spec(scheme)
    tol = dict(DEFAULT_TOLERANCES)
    extra = set(raw.get("tolerances", {})) - set(tol)
    if extra:
        raise ConfigurationError(f"unknown tolerance keys: {sorted(extra)}")
    tol.update(raw.get("tolerances", {}))
    lam = raw.get("lambda", [0.5, 2.0, 4.0])
    lam = [float(x) for x in (lam if isinstance(lam, list) else [lam])]
    if any(x <= 0 for x in lam):
        raise ConfigurationError("rescaling factors must be positive")
    jobs = int(raw.get("jobs", 1))
    if jobs < 1:
        raise ConfigurationError("jobs must be at least 1")
    return ExperimentConfig(
        command=command, model=model_spec, t_values=t_values, scheme=scheme, tolerances=tol,
        out_dir=str(raw.get("out_dir", os.environ.get("RFENT_OUT_DIR", "."))), seed=int(raw.get("seed", 0)),
        jobs=jobs, lam=lam, V=raw.get("V"), points=raw.get("points"), theta_mesh=int(raw.get("theta_mesh", 16)),
    )


# --------------------------------------------------------------------------
# artifact writers


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _diag(check, inputs, lhs, rhs, residual, ok):
    return {"check": check, "inputs": inputs, "lhs": lhs, "rhs": rhs, "residual": residual, "pass": bool(ok)}


# --------------------------------------------------------------------------
# commands; each returns a list of (check name, passed)


def _analytic(model, command):
    if not isinstance(model, ManifoldModel):
        raise ConfigurationError(f"'{command}' needs geodesics, which are available on analytic models only")
    return model


def cmd_volume(cfg, model, out):
    _analytic(model, "volume")
    scheme = cfg.build_scheme()
    n = model.dim
    cap = en.rigidity_constant(n)
    rows, checks = [], []
    for t in cfg.t_values:
        est = en.weighted_volume(model, t, scheme, jobs=cfg.jobs)
        rows.append([t, est.value, est.error, est.omega_fraction, cap - est.value])
        checks.append((f"volume bound t={t:g}", est.value <= cap * (1 + cfg.tolerances["bound"])))
        if model.is_flat:
            rel = abs(est.value / cap - 1)
            checks.append((f"flat rigidity t={t:g}", rel <= cfg.tolerances["flat_rel"]))
    write_csv(out / "volume.csv", ["t", "Vtilde", "Vtilde_err", "omega_fraction", "bound_gap"], rows)
    return checks


def cmd_monotonicity(cfg, model, out):
    _analytic(model, "monotonicity")
    rep = en.monotonicity_report(model, cfg.t_values, cfg.build_scheme(), jobs=cfg.jobs)
    rep.write_csv(out / "entropy.csv")
    checks = [
        ("weighted volume non-increasing", rep.monotone_pass),
        ("nodewise density non-increasing", rep.nodewise_pass),
        ("weighted volume below (4 pi)^{n/2}", rep.bound_pass),
    ]
    if model.is_flat:
        rel = np.max(np.abs(rep.Vtilde / en.rigidity_constant(model.dim) - 1))
        checks.append(("flat rigidity", rel <= cfg.tolerances["flat_rel"]))
    return checks


def cmd_theta(cfg, model, out):
    _analytic(model, "theta")
    res = [en.theta_volume(model, t, cfg.theta_mesh) for t in cfg.t_values]
    write_csv(out / "theta.csv", ["t", "theta", "converged", "reason"],
              [[r.t, r.value, r.converged, r.reason] for r in res])
    conv = [r.value for r in res if r.converged]
    checks = [("theta non-increasing", en.non_increasing(conv, cfg.tolerances["monotone_slack"]))]
    if not math.isfinite(model.diameter):
        checks.append(("theta divergence reported on a noncompact model", not any(r.converged for r in res)))
    return checks


def _default_V(cfg, model):
    if cfg.V is not None:
        V = np.atleast_2d(np.asarray(cfg.V, dtype=float))
        if V.shape[1] != model.dim:
            raise ConfigurationError(f"V must have {model.dim} components")
        return V
    return np.array([np.linspace(0.5, -0.3, model.dim)])


def cmd_geodesic(cfg, model, out):
    _analytic(model, "geodesic")
    checks, diags = [], []
    for t in cfg.t_values:
        for j, V in enumerate(_default_V(cfg, model)):
            geod = lg.shoot(model, V, t)
            dg = lg.k_integral(geod, model)
            rows = []
            for k, (s, b, p) in enumerate(geod.samples):
                bundle = cv.curvature_at(model, b, s * s)
                speed = math.sqrt(float(p @ bundle.g @ p))
                hx = dg.HX_samples[k - 1] if k > 0 else math.nan
                rows.append([s, *b, speed, float(bundle.R), hx])
            header = ["s", *[f"x{i}" for i in range(model.dim)], "speed", "R", "HX"]
            write_csv(out / f"geodesic_t{t:g}_{j}.csv", header, rows)
            kr_tol = cfg.tolerances["kr"] * (1 + abs(geod.length))
            inputs = {"V": V, "t": t}
            diags.append(_diag("K relation", inputs, t**1.5, dg.K + geod.length / 2, dg.kr_residual,
                               dg.kr_residual <= kr_tol))
            grad_rel = dg.grad_identity_residual / max(1.0, float(np.linalg.norm(dg.grad_formula)))
            diags.append(_diag("gradient identity", inputs, dg.grad_fd, dg.grad_formula, grad_rel,
                               grad_rel <= cfg.tolerances["gradient"]))
            checks += [(f"K relation t={t:g} V#{j}", dg.kr_residual <= kr_tol),
                       (f"gradient identity t={t:g} V#{j}", grad_rel <= cfg.tolerances["gradient"])]
    write_json(out / "geodesic_diagnostics.json", diags)
    return checks


def _sample_points(cfg, model, count=4):
    if cfg.points is not None:
        return np.atleast_2d(np.asarray(cfg.points, dtype=float))
    rng = np.random.default_rng(cfg.seed)
    reach = 0.6 if math.isfinite(model.diameter) or model.family == "einstein" else 1.0
    pts = rng.uniform(-1.0, 1.0, size=(count, model.dim))
    pts *= reach / np.maximum(1.0, np.linalg.norm(pts, axis=1))[:, None]
    return pts


def cmd_identities(cfg, model, out):
    _analytic(model, "identities")
    table, checks = [], []
    for t in cfg.t_values:
        for y in _sample_points(cfg, model):
            res = en.identity_suite(model, y, t, tol=cfg.tolerances["identity"])
            for r in res.rows:
                table.append(dict(asdict(r), y=y, t=t))
            if res.skipped:
                table.append({"y": y, "t": t, "skipped": res.skipped})
            checks.append((f"identities y={np.round(y, 4).tolist()} t={t:g}", res.passed))
    write_json(out / "identities.json", table)
    return checks


def cmd_rescale(cfg, model, out):
    _analytic(model, "rescale")
    scheme = cfg.build_scheme()
    rows, checks = [], []
    for lam in cfg.lam:
        for t in cfg.t_values:
            r = en.rescale_check(model, lam, t, scheme, jobs=cfg.jobs)
            rows.append([lam, t, r.rescaled, r.original, r.difference, r.tolerance])
            checks.append((f"rescale lambda={lam:g} t={t:g}", r.difference <= cfg.tolerances["rescale"]))
    write_csv(out / "rescale.csv", ["lambda", "t", "rescaled", "original", "difference", "tolerance"], rows)
    return checks


def cmd_jacobi(cfg, model, out):
    _analytic(model, "jacobi")
    checks, diags, rows = [], [], []
    for t in cfg.t_values:
        for j, V in enumerate(_default_V(cfg, model)):
            geod = lg.shoot(model, V, t, with_k=False)
            jf = va.jacobi_propagate(geod)
            fd = va.jacobi_fd_oracle(model, V, t)
            rel = float(np.max(np.abs(jf.J[-1] - fd)) / max(np.max(np.abs(fd)), 1e-300))
            tf = va.transported_frame(geod)
            inputs = {"V": V, "t": t}
            diags.append(_diag("jacobi vs finite differences", inputs, jf.J[-1], fd, rel,
                               rel <= cfg.tolerances["jacobi"]))
            diags.append(_diag("gram law", inputs, tf.gram[-1], np.eye(model.dim), tf.gram_residual,
                               tf.gram_residual <= cfg.tolerances["gram"]))
            for k in range(len(jf.s)):
                rows.append([t, j, jf.s[k] ** 2, jf.detL[k], jf.dlog_detL_dt[k], jf.bound[k]])
            checks += [(f"jacobi oracle t={t:g} V#{j}", rel <= cfg.tolerances["jacobi"]),
                       (f"gram law t={t:g} V#{j}", tf.gram_residual <= cfg.tolerances["gram"])]
    write_csv(out / "jacobi_detL.csv", ["t_end", "V_index", "t", "detL", "dlog_detL_dt", "bound"], rows)
    write_json(out / "jacobi_diagnostics.json", diags)
    return checks


def cmd_suite(cfg, model, out):
    checks = []
    for name in ("volume", "monotonicity", "geodesic", "jacobi", "identities", "rescale", "theta"):
        sub = cfg
        if name == "rescale":
            sub = replace(cfg, t_values=[t for t in cfg.t_values if all(t / lam < model.t_max for lam in cfg.lam)])
            if not sub.t_values:
                continue
        if name in ("geodesic", "jacobi", "identities"):
            sub = replace(cfg, t_values=cfg.t_values[:1])
        checks += [(f"{name}: {c}", ok) for c, ok in COMMAND_TABLE[name](sub, model, out)]
    return checks


COMMAND_TABLE = {
    "volume": cmd_volume,
    "theta": cmd_theta,
    "geodesic": cmd_geodesic,
    "identities": cmd_identities,
    "monotonicity": cmd_monotonicity,
    "rescale": cmd_rescale,
    "jacobi": cmd_jacobi,
    "suite": cmd_suite,
}


def run(cfg):
    """Execute ``cfg``; returns the exit status."""
    start = time.perf_counter()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.build_model()
    status, failures, error = 0, [], None
    try:
        checks = COMMAND_TABLE[cfg.command](cfg, model, out)
        failures = [name for name, ok in checks if not ok]
        status = 1 if failures else 0
    except NUMERICAL_ERRORS as exc:
        status, error = 3, f"{type(exc).__name__}: {exc}"
    except (ConfigurationError, DomainError, ChartError, PreconditionError) as exc:
        status, error = 2, f"{type(exc).__name__}: {exc}"
    manifest = {
        "config": cfg.to_dict(),
        "status": status,
        "failures": failures,
        "error": error,
        "versions": {"rfent": __version__, "python": platform.python_version(), "numpy": np.__version__},
        "wall_time_s": time.perf_counter() - start,
    }
    write_json(out / "run_manifest.json", manifest)
    for name in failures:
        print(f"FAIL {name}", file=sys.stderr)
    if error:
        print(error, file=sys.stderr)
    return status


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment file; flags override its entries")
    common.add_argument("--model", help="flat, hyperbolic, sphere, einstein, cigar, warped, or a JSON model file")
    common.add_argument("--dim", type=int)
    common.add_argument("--kappa", type=float)
    common.add_argument("--t", dest="t_values", help="comma-separated times")
    common.add_argument("--quad", choices=["hermite", "radial", "mc"])
    common.add_argument("--order", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--out", dest="out_dir")
    common.add_argument("--tol-scale", type=float, default=1.0)
    common.add_argument("--lambda", dest="lam", help="comma-separated rescaling factors")
    parser = argparse.ArgumentParser(prog="rfent", description="Forward reduced volume experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def config_from_args(args):
    text = ""
    if args.config:
        text = Path(args.config).read_text()
    base = json.loads(text) if text.strip() else {}
    over = {"command": args.command}
    if args.model is not None:
        if Path(args.model).is_file():
            over["model"] = json.loads(Path(args.model).read_text())
        else:
            over["model"] = _model_from_flags(args.model, args.dim, args.kappa)
    elif "model" in base and (args.dim is not None or args.kappa is not None):
        m = dict(base["model"])
        if args.dim is not None:
            m["dim"] = args.dim
        if args.kappa is not None:
            m["kappa"] = args.kappa
        over["model"] = m
    if args.t_values is not None:
        over["t_values"] = _parse_times(args.t_values)
    if args.quad is not None or args.order is not None:
        scheme = dict(base.get("scheme", {}))
        if args.quad is not None:
            scheme["kind"] = args.quad
        if args.order is not None:
            scheme["order"] = args.order
        over["scheme"] = scheme
    for key in ("seed", "jobs", "out_dir"):
        if getattr(args, key) is not None:
            over[key] = getattr(args, key)
    if args.lam is not None:
        over["lambda"] = _parse_times(args.lam)
    cfg = parse_config(base, over)
    if args.tol_scale != 1.0:
        if not args.tol_scale > 0:
            raise ConfigurationError("--tol-scale must be positive")
        cfg.tolerances = {k: v * args.tol_scale for k, v in cfg.tolerances.items()}
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
    except (ConfigurationError, DomainError, json.JSONDecodeError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except RFEntError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
