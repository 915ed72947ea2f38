"""Experiment configuration: strict INI parsing and validation.

Sections: [experiment], [metric], [grid], [spectral], [output], plus one
section named after the experiment carrying its parameters.  Unknown
sections or keys are rejected so a config file is an exact provenance
record; the parsed object round-trips through dumps()/loads() losslessly.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

EXPERIMENTS = ("selftest", "mourre-check", "kss-scan", "kss-higher",
               "source-scan", "resolvent-scan", "equivalences",
               "lifespan-sweep", "sobolev-check")


class ConfigError(ValueError):
    pass


def _parse_float_list(s: str) -> tuple:
    try:
        return tuple(float(tok) for tok in s.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"cannot parse float list from {s!r}") from exc


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"cannot parse boolean from {s!r}")


_PARSERS = {
    "float": float,
    "int": int,
    "str": str,
    "bool": _parse_bool,
    "float_list": _parse_float_list,
}

# key -> (type name, default); defaults of None mean required
_COMMON_SCHEMA = {
    "experiment": {"name": ("str", None), "seed": ("int", 1234),
                   "threads": ("int", 1)},
    "metric": {"family": ("str", "flat"), "d": ("int", 3),
               "rho": ("float", 2.0), "amplitude": ("float", 0.0)},
    "grid": {"N": ("int", 16), "L": ("float", 18.0)},
    "spectral": {"mode": ("str", "dense"), "dense_cap": ("int", 5000)},
    "output": {"directory": ("str", "out"), "plot": ("bool", False),
               "dump_operators": ("bool", False),
               "snapshots": ("bool", False)},
}

_EXPERIMENT_SCHEMA = {
    "selftest": {},
    "mourre-check": {
        "lam_list": ("float_list", (4.0, 8.0, 16.0, 32.0, 64.0)),
        "window_lo": ("float", 0.7), "window_hi": ("float", 1.5),
        "slack": ("float", 0.2),
        "flat_reference": ("bool", True),
        "run_lap": ("bool", False),
        "lap_lambda": ("float", 16.0), "lap_mu": ("float", 1.0),
        "lap_window_lo": ("float", 0.88), "lap_window_hi": ("float", 1.18),
        "kato_t_max": ("float", 40.0), "kato_samples": ("int", 20),
    },
    "kss-scan": {
        "mu": ("float", 1.0),
        "T_list": ("float_list", (1.625, 3.25, 6.5, 13.0)),
        "data_sigma": ("float", 1.8), "data_radius": ("float", 5.0),
        "data_kind": ("str", "bump_u0"),
        "variant": ("str", "dtilde"), "slack": ("float", 0.15),
        "panels_per_unit": ("float", 64.0),
    },
    "kss-higher": {
        "mu": ("float", 1.0), "n_order": ("int", 1),
        "T_list": ("float_list", (1.625, 3.25, 6.5, 13.0)),
        "data_sigma": ("float", 1.8), "data_radius": ("float", 5.0),
        "data_kind": ("str", "bump_u0"),
        "panels_per_unit": ("float", 32.0),
    },
    "source-scan": {
        "mu": ("float", 1.0),
        "T_list": ("float_list", (1.625, 3.25, 6.5, 13.0)),
        "source_sigma": ("float", 1.8), "source_radius": ("float", 5.0),
        "source_omega": ("float", 0.7), "source_decay": ("float", 0.5),
        "slack": ("float", 0.3),
        "panels_per_unit": ("float", 64.0),
    },
    "resolvent-scan": {
        "which": ("str", "P"), "beta": ("float", 0.0),
        "gamma": ("float", 0.75),
        "lam_list": ("float_list", tuple(2.0 ** k for k in range(11))),
        "deriv": ("str", "none"),
    },
    "equivalences": {"mu": ("float", 1.1)},
    "lifespan-sweep": {
        "delta_list": ("float_list", (0.5, 0.25, 0.125, 0.0625)),
        "q_amplitude": ("float", 1.0),
        "t_max": ("float", 8.0), "t_start": ("float", 0.25),
        "blowup_factor": ("float", 1e3),
        "data_sigma": ("float", 1.0), "data_radius": ("float", 3.0),
        "data_kind": ("str", "bump_u1"),
        "m_order": ("int", 2), "n": ("float", 4.0),
        "samples_per_unit": ("float", 16.0), "k_bisect": ("int", 3),
        "contraction_delta": ("float", 0.1),
        "contraction_window": ("float", 4.0),
    },
    "sobolev-check": {
        "radii": ("float_list", (2.0, 4.0, 8.0)),
        "n_samples": ("int", 4),
    },
}


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    threads: int
    metric: dict
    grid: dict
    spectral: dict
    output: dict
    options: dict
    raw_text: str = field(default="", repr=False)

    def config_hash(self) -> str:
        return hashlib.sha256(self.raw_text.encode()).hexdigest()

    def dumps(self) -> str:
        """Canonical serialization; loads(dumps(c)) reproduces the values."""
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["experiment"] = {"name": self.experiment, "seed": str(self.seed),
                            "threads": str(self.threads)}
        for sec, data in (("metric", self.metric), ("grid", self.grid),
                          ("spectral", self.spectral), ("output", self.output)):
            cp[sec] = {k: _fmt_value(v) for k, v in data.items()}
        if self.options:
            cp[self.experiment] = {k: _fmt_value(v)
                                   for k, v in self.options.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return " ".join(f"{x:.12g}" for x in v)
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def _apply_schema(section: str, raw: dict, schema: dict) -> dict:
    out = {}
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
    for key, (typ, default) in schema.items():
        if key in raw:
            try:
                out[key] = _PARSERS[typ](raw[key])
            except (ValueError, ConfigError) as exc:
                raise ConfigError(
                    f"bad value for {key!r} in [{section}]: {raw[key]!r}") from exc
        elif default is None:
            raise ConfigError(f"missing required key {key!r} in [{section}]")
        else:
            out[key] = default
    return out


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; "
                          f"choose from {EXPERIMENTS}")
    from .metric import FAMILIES
    if cfg.metric["family"] not in FAMILIES:
        raise ConfigError(f"unknown metric family {cfg.metric['family']!r}")
    if cfg.metric["d"] not in (1, 2, 3):
        raise ConfigError("dimension d must be 1, 2 or 3")
    if cfg.metric["rho"] <= 0:
        raise ConfigError("decay rate rho must be positive")
    if cfg.grid["N"] < 3 or cfg.grid["L"] <= 0:
        raise ConfigError("grid needs N >= 3 and L > 0")
    opt = cfg.options
    name = cfg.experiment
    if name in ("kss-scan", "source-scan"):
        if not 0.0 < opt["mu"] <= 1.0:
            raise ConfigError("mu must lie in (0, 1] (weighted estimate "
                              "hypothesis)")
    if name == "kss-higher":
        if not 0.5 <= opt["mu"] <= 1.0:
            raise ConfigError("kss-higher needs 1/2 <= mu <= 1")
        if opt["n_order"] > 2:
            raise ConfigError("N_order <= 2 at desk scale")
    if name == "resolvent-scan":
        if opt["which"] not in ("P", "P0", "Ptilde"):
            raise ConfigError("which must be P, P0 or Ptilde")
        if opt["deriv"] not in ("none", "left", "right"):
            raise ConfigError("deriv must be none, left or right")
        if not 0.0 <= opt["gamma"] <= 1.0 or opt["beta"] < 0:
            raise ConfigError("need 0 <= gamma <= 1 and beta >= 0")
        _require_dyadic(opt["lam_list"])
    if name == "mourre-check":
        _require_dyadic(opt["lam_list"])
        if opt["window_lo"] <= 0 or opt["window_hi"] <= opt["window_lo"]:
            raise ConfigError("mourre window must satisfy 0 < lo < hi")
    if name == "lifespan-sweep":
        dl = sorted(opt["delta_list"], reverse=True)
        if len(dl) < 4 or dl[0] / dl[-1] < 8.0 * (1 - 1e-12):
            raise ConfigError("delta_list needs >= 4 values spanning >= 3 "
                              "octaves")
        if any(d <= 0 for d in dl):
            raise ConfigError("delta values must be positive")
    if name in ("kss-scan", "kss-higher", "source-scan"):
        ts = opt["T_list"]
        if len(ts) < 2 or any(t <= 0 for t in ts):
            raise ConfigError("T_list needs >= 2 positive values")


def _require_dyadic(lams) -> None:
    for lam in lams:
        k = np.round(np.log2(lam)) if lam > 0 else -1
        if lam <= 0 or abs(lam - 2.0 ** k) > 1e-9 * max(lam, 1.0):
            raise ConfigError(f"lambda list must be dyadic (powers of 2); "
                              f"got {lam:g}")


def loads(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    if "experiment" not in cp:
        raise ConfigError("missing [experiment] section")
    exp_block = _apply_schema("experiment", dict(cp["experiment"]),
                              _COMMON_SCHEMA["experiment"])
    name = exp_block["name"]
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}")
    known_sections = {"experiment", "metric", "grid", "spectral", "output",
                      name}
    for sec in cp.sections():
        if sec not in known_sections:
            raise ConfigError(f"unknown section [{sec}] for experiment {name}")
    blocks = {}
    for sec in ("metric", "grid", "spectral", "output"):
        raw = dict(cp[sec]) if sec in cp else {}
        blocks[sec] = _apply_schema(sec, raw, _COMMON_SCHEMA[sec])
    raw_opt = dict(cp[name]) if name in cp else {}
    options = _apply_schema(name, raw_opt, _EXPERIMENT_SCHEMA[name])
    cfg = ExperimentConfig(experiment=name, seed=exp_block["seed"],
                           threads=exp_block["threads"],
                           metric=blocks["metric"], grid=blocks["grid"],
                           spectral=blocks["spectral"],
                           output=blocks["output"], options=options,
                           raw_text=text)
    _validate(cfg)
    return cfg


def load(path) -> ExperimentConfig:
    with open(path, "r") as fh:
        return loads(fh.read())
