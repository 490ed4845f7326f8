"""Run configuration: JSON schema, validation, defaults.

Schema (every unknown key is rejected; defaults in brackets):

    grid:      n_space (int >= 8, even), n_time (int >= 4, even)
    energy:    kind "constant" -> value (float > 0)
               kind "samples"  -> values (list of floats > 0)
    scheme:    eps (0 < eps < 1/4), a (>= 1.5), n_steps (int >= 0),
               b [1.5], lambda0 [5], l_v [null], lambda_v [null],
               eta [null], m_const [null],
               override_mode ["warn" | "fail"],
               overrides [[]]: list of {stage, lam, mu, ell [0.0],
                                        delta_bar [schedule value],
                                        l_v [1.0], lambda_v [1.0]}
    tolerance: scale [1.0]  (optional block)
    output:    dir (path), report ["report.json"],
               spectrum_csv ["spectrum.csv"], snapshots [false],
               figures [false], include_timing [false]

When eta and m_const are both given the calibration probe is skipped.
"""

import json
import os
from dataclasses import dataclass, field as dc_field

from .errors import ConfigError
from .fields import Grid4
from .iteration import ScheduleParameters
from .perturbation import EnergyProfile


def _require_mapping(obj, path):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    return obj


def _check_keys(obj, path, required, optional=()):
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(obj)
    if missing:
        raise ConfigError(f"{path}: missing keys {sorted(missing)}")


def _number(obj, path, lo=None, hi=None):
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ConfigError(f"{path}: expected a number")
    x = float(obj)
    if lo is not None and x < lo:
        raise ConfigError(f"{path}: must be >= {lo}, got {x}")
    if hi is not None and x > hi:
        raise ConfigError(f"{path}: must be <= {hi}, got {x}")
    return x


def _integer(obj, path, lo=None):
    if isinstance(obj, bool) or not isinstance(obj, int):
        raise ConfigError(f"{path}: expected an integer")
    if lo is not None and obj < lo:
        raise ConfigError(f"{path}: must be >= {lo}, got {obj}")
    return obj


@dataclass
class RunConfig:
    grid: Grid4
    energy: EnergyProfile
    schedule: ScheduleParameters
    overrides: dict
    lambda0: int
    l_v: float
    lambda_v: float
    eta: float
    m_const: float
    override_mode: str
    tolerance_scale: float
    output_dir: str
    report_name: str
    spectrum_csv_name: str
    write_snapshots: bool
    render_figures: bool
    include_timing: bool
    raw: dict = dc_field(default_factory=dict, repr=False)


def energy_from_block(block):
    """Energy profile from a config block (also reused on report documents)."""
    e = _require_mapping(block, "energy")
    kind = e.get("kind")
    if kind == "constant":
        _check_keys(e, "energy", required=("kind", "value"))
        return EnergyProfile(_number(e["value"], "energy.value", lo=1e-12))
    if kind == "samples":
        _check_keys(e, "energy", required=("kind", "values"))
        vals = e["values"]
        if not isinstance(vals, list) or len(vals) < 2:
            raise ConfigError("energy.values: expected a list of >= 2 numbers")
        return EnergyProfile([_number(x, "energy.values[]", lo=1e-12)
                              for x in vals])
    raise ConfigError(f"energy.kind: expected constant or samples, got {kind!r}")


def parse_config(doc):
    """Validate a parsed JSON document and build the run configuration."""
    _require_mapping(doc, "config")
    _check_keys(doc, "config", required=("grid", "energy", "scheme", "output"),
                optional=("tolerance",))

    g = _require_mapping(doc["grid"], "grid")
    _check_keys(g, "grid", required=("n_space", "n_time"))
    n_space = _integer(g["n_space"], "grid.n_space", lo=8)
    n_time = _integer(g["n_time"], "grid.n_time", lo=4)
    if n_space % 2 or n_time % 2:
        raise ConfigError("grid: axis sizes must be even")
    grid = Grid4(n_space, n_time)

    energy = energy_from_block(doc["energy"])

    s = _require_mapping(doc["scheme"], "scheme")
    _check_keys(s, "scheme", required=("eps", "a", "n_steps"),
                optional=("b", "lambda0", "l_v", "lambda_v", "eta",
                          "m_const", "override_mode", "overrides"))
    eps = _number(s["eps"], "scheme.eps", lo=1e-9, hi=0.2499999)
    a = _number(s["a"], "scheme.a", lo=1.5)
    n_steps = _integer(s["n_steps"], "scheme.n_steps", lo=0)
    b = _number(s.get("b", 1.5), "scheme.b", lo=1.5)
    schedule = ScheduleParameters(a=a, eps=eps, n_steps=n_steps, b=b)
    lambda0 = _integer(s.get("lambda0", 5), "scheme.lambda0", lo=1)
    l_v = s.get("l_v")
    if l_v is not None:
        l_v = _number(l_v, "scheme.l_v", lo=1e-12)
    lambda_v = s.get("lambda_v")
    if lambda_v is not None:
        lambda_v = _number(lambda_v, "scheme.lambda_v", lo=1e-12)
    eta = s.get("eta")
    if eta is not None:
        eta = _number(eta, "scheme.eta", lo=1e-12, hi=1.0)
    m_const = s.get("m_const")
    if m_const is not None:
        m_const = _number(m_const, "scheme.m_const", lo=1.0)
    override_mode = s.get("override_mode", "warn")
    if override_mode not in ("warn", "fail"):
        raise ConfigError("scheme.override_mode: expected warn or fail")
    overrides = {}
    ov_list = s.get("overrides", [])
    if not isinstance(ov_list, list):
        raise ConfigError("scheme.overrides: expected a list")
    for i, ov in enumerate(ov_list):
        path = f"scheme.overrides[{i}]"
        _require_mapping(ov, path)
        _check_keys(ov, path, required=("stage", "lam", "mu"),
                    optional=("ell", "delta_bar", "l_v", "lambda_v"))
        stage = _integer(ov["stage"], path + ".stage", lo=0)
        if stage in overrides:
            raise ConfigError(f"{path}: duplicate stage {stage}")
        entry = {"lam": _integer(ov["lam"], path + ".lam", lo=1),
                 "mu": _integer(ov["mu"], path + ".mu", lo=1)}
        if "ell" in ov:
            entry["ell"] = _number(ov["ell"], path + ".ell", lo=0.0)
        if "delta_bar" in ov:
            entry["delta_bar"] = _number(ov["delta_bar"],
                                         path + ".delta_bar", lo=1e-300)
        if "l_v" in ov:
            entry["l_v"] = _number(ov["l_v"], path + ".l_v", lo=1e-12)
        if "lambda_v" in ov:
            entry["lambda_v"] = _number(ov["lambda_v"],
                                        path + ".lambda_v", lo=1e-12)
        overrides[stage] = entry

    tol_scale = 1.0
    if "tolerance" in doc:
        t = _require_mapping(doc["tolerance"], "tolerance")
        _check_keys(t, "tolerance", required=(), optional=("scale",))
        tol_scale = _number(t.get("scale", 1.0), "tolerance.scale", lo=1e-6)

    o = _require_mapping(doc["output"], "output")
    _check_keys(o, "output", required=("dir",),
                optional=("report", "spectrum_csv", "snapshots", "figures",
                          "include_timing"))
    outdir = o["dir"]
    if not isinstance(outdir, str) or not outdir:
        raise ConfigError("output.dir: expected a non-empty path string")
    report_name = o.get("report", "report.json")
    csv_name = o.get("spectrum_csv", "spectrum.csv")
    for key, val in (("report", report_name), ("spectrum_csv", csv_name)):
        if not isinstance(val, str) or not val:
            raise ConfigError(f"output.{key}: expected a non-empty string")
    flags = {}
    for key in ("snapshots", "figures", "include_timing"):
        val = o.get(key, False)
        if not isinstance(val, bool):
            raise ConfigError(f"output.{key}: expected true or false")
        flags[key] = val

    return RunConfig(grid=grid, energy=energy, schedule=schedule,
                     overrides=overrides, lambda0=lambda0, l_v=l_v,
                     lambda_v=lambda_v, eta=eta, m_const=m_const,
                     override_mode=override_mode, tolerance_scale=tol_scale,
                     output_dir=outdir, report_name=report_name,
                     spectrum_csv_name=csv_name,
                     write_snapshots=flags["snapshots"],
                     render_figures=flags["figures"],
                     include_timing=flags["include_timing"],
                     raw=doc)


def load_config(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: "
            f"{exc.msg}")
    return parse_config(doc)
