"""Scenario configuration: flat INI sections with units in the key names."""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass
from importlib import resources

from . import constants as K

SCHEMA = {
    "physics": {
        "g_over_2pi_hz": float, "kappa_over_2pi_hz": float, "gamma_over_2pi_hz": float,
        "gamma3_over_2pi_hz": float, "r_br": float, "wavelength_m": float, "waist_m": float,
        "round_trip_m": float, "temperature_k": float, "b_field_t": float, "dark_rate_per_s": float,
        "tau_3p0_s": float,
    },
    "cavity": {
        "opening_deg": float, "twist_deg": float, "trap_transverse_over_2pi_hz": float,
        "trap_axial_over_2pi_hz": float,
    },
    "sequence": {
        "n_sites": int, "rounds": int, "t_move_s": float, "t_init_s": float, "t_ent_mean_s": float,
        "p_suc": float, "spacing_m": float, "threshold": float,
    },
    "errors": {
        "shift_over_g": float, "dg_over_g": float, "dg_thermal": float, "t_pi_s": float,
        "crosstalk_ratio": float,
    },
    "numerics": {
        "grid_points": int, "kappa_points": int, "scan_points": int, "n_max": int, "tolerance": float,
        "seed": int, "mc_samples": int,
    },
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    values: dict  # {section: {key: value}}

    def __getitem__(self, section):
        return self.values[section]

    def get(self, section, key):
        return self.values[section][key]

    def replace(self, section, key, value) -> "ScenarioConfig":
        if key not in SCHEMA.get(section, {}):
            raise ConfigError(f"unknown key {section}.{key}")
        new = {s: dict(v) for s, v in self.values.items()}
        new[section][key] = SCHEMA[section][key](value)
        return ScenarioConfig(new)

    def dumps(self) -> str:
        out = io.StringIO()
        for sec, keys in SCHEMA.items():
            out.write(f"[{sec}]\n")
            for k in keys:
                v = self.values[sec][k]
                out.write(f"{k} = {v!r}\n")
            out.write("\n")
        return out.getvalue()

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    # -- typed views ---------------------------------------------------
    def module_params(self):
        from .spinphoton import ModuleParams

        p = self["physics"]
        return ModuleParams(g=K.TWO_PI * p["g_over_2pi_hz"], kappa=K.TWO_PI * p["kappa_over_2pi_hz"],
                            Gamma=K.TWO_PI * p["gamma_over_2pi_hz"], R_br=p["r_br"],
                            Gamma3=K.TWO_PI * p["gamma3_over_2pi_hz"], n_max=self["numerics"]["n_max"])

    def mode_properties(self):
        from .cavity import ModeProperties

        p = self["physics"]
        return ModeProperties(w0=p["waist_m"], wavelength=p["wavelength_m"], L=p["round_trip_m"])

    def sequence_params(self, m=None):
        from .sequence import SequenceParams

        s = self["sequence"]
        return SequenceParams(N=s["n_sites"], m=s["rounds"] if m is None else m, t_move=s["t_move_s"],
                              t_init=s["t_init_s"], P_suc=s["p_suc"], t_ent=s["t_ent_mean_s"])

    def trap_frequencies(self):
        c = self["cavity"]
        wt = K.TWO_PI * c["trap_transverse_over_2pi_hz"]
        return (wt, wt, K.TWO_PI * c["trap_axial_over_2pi_hz"])


def _parse(text: str, source: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    unknown_sec = [s for s in cp.sections() if s not in SCHEMA]
    if unknown_sec:
        raise ConfigError(f"{source}: unknown section(s) {unknown_sec}")
    values = {}
    for sec, keys in SCHEMA.items():
        if not cp.has_section(sec):
            raise ConfigError(f"{source}: missing section [{sec}]")
        extra = sorted(set(cp[sec]) - set(keys))
        if extra:
            raise ConfigError(f"{source}: unknown key(s) in [{sec}]: {', '.join(extra)}")
        missing = [k for k in keys if k not in cp[sec]]
        if missing:
            raise ConfigError(f"{source}: missing key(s) in [{sec}]: {', '.join(missing)}")
        values[sec] = {}
        for k, typ in keys.items():
            raw = cp[sec][k]
            try:
                values[sec][k] = typ(float(raw)) if typ is int and "e" in raw.lower() else typ(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: {sec}.{k} = {raw!r} is not {typ.__name__}") from exc
    return ScenarioConfig(values)


def default_text() -> str:
    return resources.files("cavnet").joinpath("data/default.ini").read_text()


def load_config(path=None) -> ScenarioConfig:
    """Parse a complete config file; None loads the packaged reference point."""
    if path is None:
        return _parse(default_text(), "default.ini")
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return _parse(text, str(path))


def loads(text: str) -> ScenarioConfig:
    return _parse(text, "<string>")
