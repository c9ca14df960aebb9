"""Command-line surface: config handling, dispatch and write-once outputs.

    python -m artifact <command> [-c config.yaml] [--set key.path=value ...]
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import os
import shutil
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from .bbmre import OffspringLaw, replicas
from .envgen import PotentialField, PotentialSpec, write_grid_csv
from .experiments import EXPERIMENTS, ConfigError, _manifest, dumps, fmt, nonlinearity_from, run_experiment
from .hitting import ETA_MAX, ETA_MIN
from .kppsolve import solve_kpp
from .lyapunov import build_profile, default_eta_grid
from .pamsolve import solve_pam
from .pdecore import GridConfig, InitialCondition, WindowBreachError

ENV_OUT = "RANDFRONT_OUT"
_GRID_KEYS = tuple(asdict(GridConfig()).keys())

DEFAULTS = {
    "potential": PotentialSpec.constant(1.0).to_dict(),
    "pam": {**asdict(GridConfig()), "T": 20.0, "a": 0.5,
            "ic": {"kind": "heaviside", "delta_prime": 0.5, "c_prime": 2.0}},
    "kpp": {**asdict(GridConfig()), "T": 20.0, "eps": 0.5, "nonlinearity": "logistic", "clamp_tol": 1e-6},
    "lyapunov": {"n_env": 8, "n_units": 100, "n_eta": 400, "eta_min": ETA_MIN, "eta_max": ETA_MAX,
                 "lag_cutoff": None, "n_v": 60},
    "bbmre": {"law": {2: 1.0}, "cap": 10**6, "reps": 10000, "x": [0.0, 1.0, 2.0], "t": [1.0, 2.0], "y": 0.0,
              "validate": True, "pde_dx": 0.02, "pde_dt": 0.001},
    "gen_env": {"x0": -10.0, "dx": 0.01, "n": 2001},
    "experiment": {"name": None, "overrides": {}},
    "verify": {"criteria": list(range(1, 15))},
    "output_dir": "out",
    "base_seed": 0,
}
_FREE_BLOCKS = {"experiment.overrides", "bbmre.law", "kpp.nonlinearity"}


class ParseError(ConfigError):
    pass


# -- config ------------------------------------------------------------------

def _merge(defaults: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    if not isinstance(over, dict):
        raise ConfigError(f"block {path.rstrip('.') or '<root>'} must be a mapping")
    for k, v in over.items():
        full = path + str(k)
        if k not in defaults:
            raise ConfigError(f"unknown key {full!r}")
        if isinstance(defaults[k], dict) and full not in _FREE_BLOCKS:
            out[k] = _merge(defaults[k], v, full + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _normalize(cfg: dict) -> dict:
    cfg["bbmre"]["law"] = {int(k): float(p) for k, p in cfg["bbmre"]["law"].items()}
    try:
        PotentialSpec.from_dict(cfg["potential"])
    except ValueError as e:
        raise ConfigError(f"potential: {e}") from None
    return cfg


def parse_config(text: str, name: str = "<config>") -> dict:
    """Parse YAML or JSON text into a full, validated config."""
    try:
        raw = yaml.safe_load(text) if text.strip() else {}
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ParseError(f"{name}: parse error{where}: {getattr(e, 'problem', e)}") from None
    return _normalize(_merge(DEFAULTS, raw or {}))


def load_config(path: str | None) -> dict:
    if path is None:
        return _normalize(copy.deepcopy(DEFAULTS))
    text = Path(path).read_text()
    if path.endswith(".json"):
        try:
            json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: parse error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return parse_config(text, path)


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)


def apply_override(cfg: dict, item: str, validate: bool = True) -> dict:
    """Apply one dot-path override such as pam.dx=0.025.

    With validate=False the cross-key checks are deferred, so that several
    overrides can move a block between consistent states together."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key.path=value")
    path, _, value = item.partition("=")
    keys = path.strip().split(".")
    node, ref = cfg, DEFAULTS
    for i, k in enumerate(keys[:-1]):
        prefix = ".".join(keys[: i + 1])
        if prefix in _FREE_BLOCKS:
            node = node.setdefault(k, {})
            ref = None
            continue
        if ref is not None and (k not in ref or not isinstance(ref[k], dict)):
            raise ConfigError(f"unknown key {path!r}")
        node = node[k]
        ref = ref[k] if ref is not None else None
    last = keys[-1]
    if ref is not None and last not in ref:
        raise ConfigError(f"unknown key {path!r}")
    try:
        node[last] = yaml.safe_load(value)
    except yaml.YAMLError as e:
        raise ParseError(f"override {item!r}: cannot parse value ({e})") from None
    return _normalize(cfg) if validate else cfg


# -- outputs -----------------------------------------------------------------

class OutputDir:
    """Write-once output directory, populated in a temp dir and moved into place."""

    def __init__(self, path: Path, overwrite: bool):
        self.path = Path(path)
        if self.path.exists() and not overwrite:
            raise FileExistsError(f"output {self.path} exists; rerun with --overwrite to replace it")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.path.name}.", dir=self.path.parent))

    def __truediv__(self, name: str) -> Path:
        return self.tmp / name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        if self.path.exists():
            shutil.rmtree(self.path)
        os.replace(self.tmp, self.path)
        return False


def _out_root(cfg: dict) -> Path:
    return Path(os.environ.get(ENV_OUT) or cfg["output_dir"])


def _grid(block: dict) -> GridConfig:
    return GridConfig(**{k: block[k] for k in _GRID_KEYS})


def _write_common(out: OutputDir, cfg: dict, name: str, seeds=()) -> None:
    (out / "config.yaml").write_text(dump_config(cfg))
    (out / "manifest.json").write_text(dumps(_manifest(name, cfg, list(seeds))))


def write_csv(path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(fmt(v) for v in r) + "\n")


# -- commands ----------------------------------------------------------------

def cmd_gen_env(cfg: dict, overwrite: bool = False) -> Path:
    spec = PotentialSpec.from_dict(cfg["potential"])
    field = PotentialField(spec)
    g = cfg["gen_env"]
    xs = g["x0"] + g["dx"] * np.arange(int(g["n"]))
    with OutputDir(_out_root(cfg) / "gen-env", overwrite) as out:
        write_grid_csv(out / "potential.csv", xs, field.evaluate(xs))
        (out / "spec.json").write_text(dumps(spec.to_dict()))
        _write_common(out, cfg, "gen-env", [spec.seed])
    return out.path


def cmd_profile(cfg: dict, overwrite: bool = False) -> Path:
    spec = PotentialSpec.from_dict(cfg["potential"])
    ly = cfg["lyapunov"]
    prof = build_profile(spec, n_env=ly["n_env"], n_units=ly["n_units"],
                         eta_grid=default_eta_grid(ly["n_eta"], ly["eta_min"], ly["eta_max"]),
                         n_v=ly["n_v"], lag_cutoff=ly["lag_cutoff"])
    with OutputDir(_out_root(cfg) / "profile", overwrite) as out:
        (out / "profile.json").write_text(dumps(_plain(prof.to_dict())))
        write_csv(out / "log_mgf.csv", ["eta", "L", "dL", "d2L", "L_se", "dL_se"],
                  zip(prof.eta_grid, prof.L_table, prof.dL_table, prof.d2L_table, prof.L_se, prof.dL_se))
        write_csv(out / "velocities.csv", ["v", "eta_bar", "legendre", "lambda", "sigma2", "sigma2_se"],
                  zip(prof.v_grid, prof.eta_bar_table, prof.legendre_table, prof.lambda_table,
                      prof.sigma2, prof.sigma2_se))
        _write_common(out, cfg, "profile", [spec.seed])
    return out.path


def _plain(d):
    from .experiments import _jsonable
    return _jsonable(d)


def cmd_solve(cfg: dict, which: str, overwrite: bool = False) -> Path:
    spec = PotentialSpec.from_dict(cfg["potential"])
    field = PotentialField(spec)
    if which == "pam":
        b = cfg["pam"]
        traj = solve_pam(field, InitialCondition(**b["ic"]), _grid(b), b["T"], a=b["a"])
        label = "m_bar"
    elif which == "kpp":
        b = cfg["kpp"]
        traj = solve_kpp(field, nonlinearity_from(b["nonlinearity"]), InitialCondition("heaviside"),
                         _grid(b), b["T"], eps=b["eps"], clamp_tol=b["clamp_tol"])
        label = "m"
    else:
        raise ConfigError(f"unknown solver {which!r}")
    with OutputDir(_out_root(cfg) / f"solve-{which}", overwrite) as out:
        traj.to_csv(out / "trajectory.csv")
        traj.front_trace.to_csv(out / "front.csv", label=label)
        if which == "pam":
            ft = traj.front_trace
            write_csv(out / "breakpoints.csv", ["x", "T_x"], zip(ft.bp_x, ft.bp_t))
        _write_common(out, cfg, f"solve-{which}", [spec.seed])
    return out.path


def cmd_bbmre(cfg: dict, overwrite: bool = False) -> Path:
    spec = PotentialSpec.from_dict(cfg["potential"])
    field = PotentialField(spec)
    b = cfg["bbmre"]
    law = OffspringLaw.from_dict(b["law"])
    rows, summaries = [], []
    T = max(b["t"])
    pam = kpp = None
    if b["validate"]:
        g = GridConfig(dx=b["pde_dx"], dt=b["pde_dt"], w_left=20.0, w_right=30.0, recenter=False)
        ic = InitialCondition("heaviside")
        pam = solve_pam(field, ic, g, T)
        kpp = solve_kpp(field, nonlinearity_from({"offspring": law.to_dict()}), ic, g, T)
    for i, t in enumerate(b["t"]):
        for j, x in enumerate(b["x"]):
            s = replicas(field, law, float(x), float(t), int(b["reps"]), seed=cfg["base_seed"] + 1000 * i + j,
                         cap=int(b["cap"]), y=float(b["y"]))
            ok = ~s.cap_hit
            c = s.count_leq[ok].astype(float)
            n = c.size
            w = float((c >= 1).mean())
            row = [x, t, n, int(s.cap_hit.sum()), w, math.sqrt(w * (1 - w) / n), float(c.mean()),
                   float(c.std(ddof=1) / math.sqrt(n))]
            if b["validate"] and b["y"] == 0.0:
                row += [float(kpp.u_at(t, x)), float(pam.u_at(t, x))]
            rows.append(row)
            summaries.append((f"replicas_x{x}_t{t}.csv", s))
    header = ["x", "t", "n_used", "n_cap_hit", "w_mc", "w_se", "mean_mc", "mean_se"]
    if b["validate"] and b["y"] == 0.0:
        header += ["w_pde", "u_pde"]
    with OutputDir(_out_root(cfg) / "bbmre", overwrite) as out:
        write_csv(out / "validation.csv", header, rows)
        for name, s in summaries:
            s.to_csv(out / name)
        _write_common(out, cfg, "bbmre", [cfg["base_seed"]])
    return out.path


def cmd_experiment(cfg: dict, name: str | None = None, jobs: int = 1, overwrite: bool = False) -> Path:
    name = name or cfg["experiment"]["name"]
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    rep = run_experiment(name, cfg["experiment"]["overrides"], jobs=jobs,
                         progress=lambda i, n: print(f"[{name}] {i}/{n}", file=sys.stderr))
    path = _out_root(cfg) / f"experiment-{name}"
    rep.write(path, overwrite=overwrite)
    for v in rep.verdicts:
        print(f"{'PASS' if v.passed else 'FAIL'} [{v.criterion}] {v.check}: {v.value} ({v.threshold})")
    return path


def cmd_verify(cfg: dict, jobs: int = 1) -> int:
    from .acceptance import run_all
    crit = [int(c) for c in cfg["verify"]["criteria"]]
    results = run_all(crit, jobs=jobs)
    return 0 if all(r.passed for r in results) else 1


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="artifact", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("-c", "--config", help="YAML or JSON config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dot-path override, e.g. pam.dx=0.025")
        sp.add_argument("--overwrite", action="store_true", help="replace an existing output directory")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for seed fan-outs")

    for name in ("gen-env", "profile", "solve-pam", "solve-kpp", "bbmre", "verify"):
        common(sub.add_parser(name))
    ex = sub.add_parser("experiment")
    ex.add_argument("name", choices=sorted(EXPERIMENTS))
    common(ex)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        for item in args.set:
            cfg = apply_override(cfg, item, validate=False)
        cfg = _normalize(cfg)
        if args.command == "gen-env":
            path = cmd_gen_env(cfg, args.overwrite)
        elif args.command == "profile":
            path = cmd_profile(cfg, args.overwrite)
        elif args.command in ("solve-pam", "solve-kpp"):
            path = cmd_solve(cfg, args.command.split("-")[1], args.overwrite)
        elif args.command == "bbmre":
            path = cmd_bbmre(cfg, args.overwrite)
        elif args.command == "experiment":
            path = cmd_experiment(cfg, args.name, args.jobs, args.overwrite)
        else:
            return cmd_verify(cfg, args.jobs)
    except (ConfigError, FileExistsError, WindowBreachError, ValueError, RuntimeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2 if isinstance(e, (ConfigError, FileExistsError, KeyError)) else 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
