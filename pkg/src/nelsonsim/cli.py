"""Command-line entry point: ``nelsonsim <subcommand> [--config FILE] [--key value ...]``.

Config files are plain ``key = value`` lines (``#`` starts a comment).
Flags override file values, which override the chosen preset.

Exit codes: 0 pass, 1 check failure, 2 usage error, 3 unknown config key,
4 constraint violation, 5 unreadable config file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import platform
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import scipy

from . import experiments as ex
from . import hamiltonians as hm
from . import integrals

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_UNKNOWN_KEY, EXIT_CONSTRAINT, EXIT_UNREADABLE = 0, 1, 2, 3, 4, 5

SUBCOMMANDS = ("integrals", "verify-gross", "verify-cancel", "verify-removal", "verify-energy", "verify-selfenergy", "verify-bounds", "sweep", "evolve")

INTEGRALS_SCHEMA = ("quantity", "mu", "K", "lambda_uv", "value", "error_estimate", "method")
SWEEP_SCHEMA = ("mu", "K", "eps", "lambda_uv", "t", "n_max", "deviation2", "invariant_drift", "loglog_slope")


class ConfigError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


@dataclass
class RunConfig:
    subcommand: str = "integrals"
    preset: str = "tiny"
    mu: float = 100.0
    lambda_uv: float = 16.0
    K: float = math.nan  # nan: K = min(mu^(1/3), lambda_uv)
    eps: float = math.nan  # nan: eps = min(1/mu, K)
    t: float = 0.1
    coupling: float = 1.0
    mus: tuple = (1e2, 1e3, 1e4)
    spacing: float = 4.0
    points: int = 9
    n_max: int = 2
    mode_hi: float = 16.0
    sigma_p: float = 4.0
    krylov_tol: float = 1e-11
    krylov_m: int = 80
    dense_cap: int = 2000
    invariant_tol: float = 1e-10
    ratio_cap: float = 10.0
    e0_tol: float = 1e-6
    output: str = "out"
    threads: int = 1
    seed: int = 0
    record_timing: bool = False

    def params(self, mu: float | None = None) -> hm.PhysParams:
        mu = self.mu if mu is None else mu
        if math.isnan(self.K) and math.isnan(self.eps):
            return hm.PhysParams.mu_scaling(mu, self.lambda_uv, self.t, self.coupling)
        K = min(mu ** (1 / 3), self.lambda_uv) if math.isnan(self.K) else self.K
        eps = min(1 / mu, K) if math.isnan(self.eps) else self.eps
        return hm.PhysParams(mu=mu, lambda_uv=self.lambda_uv, K=K, eps=eps, t=self.t, coupling=self.coupling)

    def toy(self) -> ex.ToySpec:
        return ex.ToySpec(spacing=self.spacing, points=self.points, n_max=self.n_max, mode_hi=self.mode_hi)

    def serialize(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    def digest(self) -> str:
        """Hash of everything that affects results (the output location does not)."""
        text = "".join(line for line in self.serialize().splitlines(True) if not line.startswith("output ="))
        return hashlib.sha256(text.encode()).hexdigest()


PRESETS = {
    "tiny": dict(spacing=4.0, points=5, n_max=2, mode_hi=8.0, lambda_uv=8.0, sigma_p=2.0),
    "desk": dict(spacing=4.0, points=9, n_max=2, mode_hi=16.0, lambda_uv=16.0, sigma_p=4.0),
    "full": dict(spacing=2.0, points=15, n_max=2, mode_hi=14.0, lambda_uv=14.0, sigma_p=3.0, mus=(1e2, 3e2, 1e3, 3e3, 1e4)),
}

HELP = {
    "preset": "tiny (seconds), desk (minutes) or full (hours)",
    "K": "dressing cutoff; unset means min(mu^(1/3), lambda_uv)",
    "eps": "infrared cutoff; unset means min(1/mu, K)",
    "mus": "comma-separated mu values for sweeps",
    "spacing": "lattice momentum spacing of the toy",
    "points": "odd number of lattice points per axis",
    "mode_hi": "largest boson momentum kept on the toy",
    "krylov_m": "Krylov subspace size",
    "ratio_cap": "declared cap for bounded-ratio checks",
    "threads": "BLAS thread cap",
    "record_timing": "write wall-clock runtimes into the CSV (breaks byte determinism)",
}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(name: str, raw: str):
    default = getattr(RunConfig, name)
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, tuple):
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {type(default).__name__}", EXIT_CONSTRAINT) from None
    return raw


def read_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror}", EXIT_UNREADABLE) from None
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        # several assignments may share a line when separated by commas and the value has none
        for part in _split_assignments(line):
            if "=" not in part:
                raise ConfigError(f"{path}:{n}: expected 'key = value', got {part!r}", EXIT_CONSTRAINT)
            k, v = part.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _split_assignments(line: str) -> list[str]:
    pieces = line.split(",")
    parts = []
    for p in pieces:
        if "=" in p or not parts:
            parts.append(p)
        else:
            parts[-1] += "," + p
    return [p.strip() for p in parts if p.strip()]


def _known() -> set:
    return {f.name for f in fields(RunConfig)}


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {cfg.subcommand!r}", EXIT_USAGE)
    if cfg.preset not in PRESETS:
        raise ConfigError(f"preset must be one of {sorted(PRESETS)}", EXIT_CONSTRAINT)
    if cfg.points < 1 or cfg.points % 2 == 0:
        raise ConfigError("points must be a positive odd integer", EXIT_CONSTRAINT)
    if cfg.n_max < 0 or cfg.threads < 1 or cfg.krylov_m < 2 or cfg.dense_cap < 1:
        raise ConfigError("n_max >= 0, threads >= 1, krylov_m >= 2 and dense_cap >= 1 are required", EXIT_CONSTRAINT)
    if not (cfg.spacing > 0 and cfg.mode_hi > 0 and cfg.krylov_tol > 0):
        raise ConfigError("spacing, mode_hi and krylov_tol must be positive", EXIT_CONSTRAINT)
    if not cfg.mus or any(m <= 0 for m in cfg.mus):
        raise ConfigError("mus must be a non-empty list of positive numbers", EXIT_CONSTRAINT)
    try:
        for mu in (cfg.mu, *cfg.mus):
            cfg.params(mu)
    except ValueError as e:
        raise ConfigError(f"invalid physical parameters: {e}", EXIT_CONSTRAINT) from None
    return cfg


def build_config(values: dict) -> RunConfig:
    unknown = set(values) - _known()
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}", EXIT_UNKNOWN_KEY)
    preset = values.get("preset", RunConfig.preset)
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {sorted(PRESETS)}", EXIT_CONSTRAINT)
    kw = dict(PRESETS[preset])
    for k, v in values.items():
        kw[k] = _coerce(k, v) if isinstance(v, str) else v
    return validate(RunConfig(**kw))


def parse_config(path=None, flags: dict | None = None) -> RunConfig:
    values = read_config_file(path) if path is not None else {}
    values.update(flags or {})
    return build_config(values)


def parse_serialized(text: str) -> RunConfig:
    values = {}
    for line in text.splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            values[k.strip()] = v.strip()
    return build_config(values)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _csv_value(v):
    return format(v, ".17g") if isinstance(v, float) else str(v)


def emit_report(records, schema, outdir, name: str, config: RunConfig | None = None, extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``name.csv`` (header ``schema``) and ``name.json`` metadata; returns both paths."""
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(schema)
        for r in records:
            row = r.row() if hasattr(r, "row") else r
            w.writerow([_csv_value(row[k]) for k in schema])
        csv_path = outdir / f"{name}.csv"
        csv_path.write_text(buf.getvalue())
        meta = {
            "name": name,
            "schema": list(schema),
            "rows": len(records),
            "versions": {"nelsonsim": _version(), "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()},
        }
        if config is not None:
            meta["config_hash"] = config.digest()
            meta["config"] = config.serialize()
        meta.update(extra or {})
        json_path = outdir / f"{name}.json"
        json_path.write_text(json.dumps(meta, indent=1, sort_keys=True, default=_json_default) + "\n")
    except OSError as e:
        raise OSError(f"failed writing report {name!r} to {outdir}: {e}") from e
    return csv_path, json_path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _version() -> str:
    from . import __version__

    return __version__


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _integrals(cfg: RunConfig) -> ex.Report:
    rep = ex.Report("integrals")
    p = cfg.params()
    e0 = integrals.e0_constant(tol=cfg.e0_tol)
    q = integrals.E_Lambda0_quadrature(p.mu, p.lambda_uv)
    closed = 8 * math.pi * p.mu * math.log1p(p.lambda_uv / p.mu)
    results = [
        ("E_Lambda0_quadrature", q),
        ("E_Lambda0_closed", integrals.ScalarResult(closed, 0.0, "closed_form")),
        ("E_Lambda", integrals.E_Lambda(p.mu, p.lambda_uv, e0.value)),
        ("E_K0", integrals.E_K0(p.mu, p.K)),
        ("e0", e0),
        ("V_K_L2_squared", integrals.V_K_L2_squared(p.mu, p.K)),
    ]
    results += zip(("norm_G", "norm_G_omega_half", "norm_B", "norm_kB"), integrals.form_factor_norms(p.mu, p.K))
    for name, r in results:
        rep.records.append({"quantity": name, "mu": p.mu, "K": p.K, "lambda_uv": p.lambda_uv, "value": r.value, "error_estimate": r.abs_error_estimate, "method": r.method})
    rep.check(abs(q.value - closed) <= 1e-8 * abs(closed), "E_Lambda0 quadrature disagrees with the closed form")
    rep.check(e0.value > 0 and e0.converged, "e0 did not converge to a positive value")
    rep.details["schema"] = INTEGRALS_SCHEMA
    return rep


def _sweep(cfg: RunConfig) -> ex.Report:
    rep = ex.sweep_theorem(cfg.mus, cfg.toy(), cfg.t, cfg.sigma_p, invariant_tol=cfg.invariant_tol, coupling=cfg.coupling)
    if cfg.preset == "tiny":
        # the tiny toy is a smoke run: report the trend without enforcing it
        rep.passed, rep.failures = True, []
    slope = rep.details["slope"]
    dev = [r for r in rep.records if r.observable == "deviation2"]
    drift = [r for r in rep.records if r.observable == "invariant_drift"]
    rep.records = [
        {"mu": d.mu, "K": d.K, "eps": d.eps, "lambda_uv": d.lambda_uv, "t": d.t, "n_max": d.n_max, "deviation2": d.value, "invariant_drift": v.value, "loglog_slope": slope}
        for d, v in zip(dev, drift)
    ]
    rep.details["schema"] = SWEEP_SCHEMA
    return rep


def _evolve(cfg: RunConfig) -> ex.Report:
    rep = ex.Report("evolve")
    p = cfg.params()
    lat, grid, basis = cfg.toy().build()
    phi = ex.gaussian_phi(lat, cfg.sigma_p)
    psi0 = ex.embed_vacuum(phi, basis)
    H = hm.assemble_HK(p, grid, basis)
    out, chk = ex.evolve_checked(H, psi0, p.t, basis, grid, tol=cfg.krylov_tol, m_max=cfg.krylov_m)
    from .propagator import SimState

    state = SimState(out, f"exp(-i t H_K) phi(x)Omega, t={p.t!r}", basis.fingerprint(), p.to_dict())
    Path(cfg.output).mkdir(parents=True, exist_ok=True)
    state.save(Path(cfg.output) / "state")
    for name, v in (("norm_drift", chk.norm_drift), ("energy_drift", chk.energy_drift), ("momentum_drift", chk.momentum_drift)):
        rep.records.append(ex.SweepRecord.at("evolve", name, v, p, n_max=cfg.n_max))
        rep.check(v <= cfg.invariant_tol, f"{name} {v:.2e} exceeds {cfg.invariant_tol:g}")
    rep.records.append(ex.SweepRecord.at("evolve", "vacuum_weight", float(np.linalg.norm(ex.vacuum_part(out, basis)) ** 2), p, n_max=cfg.n_max))
    return rep


def _energy(cfg: RunConfig) -> ex.Report:
    rep = ex.verify_energy_sandwich(cap=cfg.ratio_cap * 5)
    traj = ex.trajectory_bounds(cfg.mus, cfg.toy(), cfg.t, cfg.sigma_p)
    rep.records += traj.records
    return rep


def dispatch(cfg: RunConfig) -> int:
    runners = {
        "integrals": _integrals,
        "verify-gross": lambda c: ex.verify_gross_identity(n_max_list=(2, 3) if c.preset == "tiny" else (2, 3, 4)),
        "verify-cancel": lambda c: ex.verify_cancellation(c.mus, cap=c.ratio_cap),
        "verify-removal": lambda c: ex.verify_removal(c.mus, c.toy(), c.t, c.sigma_p, cap=c.ratio_cap, invariant_tol=c.invariant_tol),
        "verify-energy": _energy,
        "verify-selfenergy": lambda c: ex.verify_selfenergy_AA(c.mus),
        "verify-bounds": lambda c: ex.verify_operator_bounds(seed=c.seed, mus=c.mus),
        "sweep": _sweep,
        "evolve": _evolve,
    }
    _limit_threads(cfg.threads)
    rep = runners[cfg.subcommand](cfg)
    if not cfg.record_timing:
        for r in rep.records:
            if isinstance(r, ex.SweepRecord):
                r.runtime_s = 0.0
    extra = {"passed": rep.passed, "failures": rep.failures}
    if cfg.subcommand == "sweep":
        extra["slope"] = rep.details.get("slope")
    schema = rep.details.get("schema", ex.SweepRecord.HEADER)
    emit_report(rep.records, schema, cfg.output, cfg.subcommand.replace("-", "_"), cfg, extra)
    for f in rep.failures:
        print(f"FAIL {cfg.subcommand}: {f}", file=sys.stderr)
    print(f"{cfg.subcommand}: {'pass' if rep.passed else 'FAIL'} ({len(rep.records)} rows -> {cfg.output})")
    return EXIT_OK if rep.passed else EXIT_FAIL


def _limit_threads(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(n)


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nelsonsim", description="Renormalized Nelson model toy simulator.", formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="key = value config file")
    for f in fields(RunConfig):
        if f.name == "subcommand":
            continue
        ap.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None, metavar=f.name.upper(), help=f"{HELP.get(f.name, f.name)} (default: {_fmt(f.default)})")
    return ap


def main(argv=None) -> int:
    ap = make_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    flags = {k: v for k, v in vars(ns).items() if v is not None and k != "config"}
    try:
        cfg = parse_config(ns.config, flags)
    except ConfigError as e:
        print(f"nelsonsim: {e}", file=sys.stderr)
        return e.code
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
