"""
Scenario files: parsing, schema validation, overrides, hashing and builders.

A scenario is an INI file with the sections of the shipped defaults
(``oawm/data/defaults.ini``); JSON with the same nesting is accepted too.
Values are numbers, booleans, ``none``/``auto``, bare strings or bracketed
lists. Unknown sections or keys are rejected with their line number.
"""

from __future__ import annotations

import configparser
import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Schema violation; ``line`` is the 1-based source line when known."""

    def __init__(self, msg: str, source: str | None = None, line: int | None = None):
        where = ""
        if source:
            where = f"{source}:{line}: " if line else f"{source}: "
        super().__init__(where + msg)
        self.line = line


# --------------------------------------------------------------------------
# value parsing and types


def parse_value(text: str):
    """Literal from scenario text: number, bool, None, list or string."""
    s = text.strip()
    low = s.lower()
    if low in ("none", "null", "auto", ""):
        return None
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if s.startswith("[") and s.endswith("]"):
        inner = s[1:-1].strip()
        return [] if not inner else [parse_value(p) for p in inner.split(",")]
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s.strip("\"'")


def _num(v, name):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"{name} must be a number, got {v!r}")
    return float(v)


def T_float(v, name):
    x = _num(v, name)
    if math.isnan(x):
        raise ValueError(f"{name} must not be NaN")
    return x


def T_pos(v, name):
    x = T_float(v, name)
    if not x > 0:
        raise ValueError(f"{name} must be positive")
    return x


def T_int(v, name):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ValueError(f"{name} must be an integer, got {v!r}")
    return int(v)


def T_posint(v, name):
    x = T_int(v, name)
    if x < 1:
        raise ValueError(f"{name} must be >= 1")
    return x


def T_bool(v, name):
    if not isinstance(v, bool):
        raise ValueError(f"{name} must be true or false, got {v!r}")
    return v


def T_str(v, name):
    if not isinstance(v, str):
        raise ValueError(f"{name} must be a string, got {v!r}")
    return v


def T_opt(t):
    return lambda v, name: None if v is None else t(v, name)


def T_list(t):
    def check(v, name):
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            v = [v]
        if not isinstance(v, list):
            raise ValueError(f"{name} must be a list, got {v!r}")
        return [t(x, f"{name}[{i}]") for i, x in enumerate(v)]
    return check


def T_choice(*opts, none=None):
    """One of ``opts``; ``none``/``auto`` in the file maps to ``none``."""
    def check(v, name):
        if v is None and none is not None:
            return none
        if isinstance(v, bool) and str(v).lower() in opts:
            v = str(v).lower()
        if v not in opts:
            raise ValueError(f"{name} must be one of {list(opts)}, got {v!r}")
        return v
    return check


def T_scalar_or_list(v, name):
    return T_list(T_float)(v, name) if isinstance(v, list) else T_float(v, name)


def T_noise(v, name):
    from .frontend import NOISE_SOURCES

    if v is None:
        return "none"
    if isinstance(v, str):
        if v in ("all", "none"):
            return v
        v = [v]
    names = T_list(T_str)(v, name)
    bad = [n for n in names if n not in NOISE_SOURCES]
    if bad:
        raise ValueError(f"{name}: unknown noise sources {bad}; known: {list(NOISE_SOURCES)}")
    return names


SCHEMA: dict[str, dict[str, Callable]] = {
    "scenario": dict(schema_version=T_int, seed=T_int, name=T_str),
    "signal": dict(kind=T_choice("random", "cw", "qam"), power_dBm=T_opt(T_float),
                   bandwidth=T_opt(T_pos), center=T_float, cw_freq=T_float, cw_phase=T_float,
                   qam_symbol_rate=T_pos, qam_order=T_posint, rrc_rolloff=T_float,
                   duration=T_pos, sample_rate=T_pos, pilots=T_bool, pilot_rel_dB=T_float,
                   pilot_offsets=T_list(T_float), pilot_extra=T_list(T_float)),
    "comb": dict(N=T_posint, f_FSR=T_pos, tau_j_LO=T_float, OSNR_LO_dB=T_float, f_ref=T_float,
                 tone_ripple_dB=T_list(T_float), jitter_bandwidth=T_opt(T_pos)),
    "frontend": dict(S=T_pos, CMRR_dB=T_float, LOSPR_dB=T_float, G_dB=T_float, NF_dB=T_float,
                     R=T_pos, P_PD_dBm=T_float, T=T_pos, iq_phase_deg=T_scalar_or_list,
                     loss_dB=T_scalar_or_list, OSNR_sig_dB=T_float, dc_block=T_bool,
                     delay_error=T_list(T_float), noise=T_noise),
    "adc": dict(B=T_pos, f_s=T_pos, U_FS=T_opt(T_pos), headroom_sigma=T_opt(T_pos),
                peak_fill=T_opt(T_pos), n_bits=T_opt(T_posint), C1=T_pos, tau_j_ADC=T_float,
                clock_spur_dBc=T_float, clock_spur_freq=T_opt(T_pos)),
    "drift": dict(phi_F=T_list(T_float), tau_LO=T_float),
    "calibration": dict(f_ORW=T_pos, n_shots=T_posint, offset_step=T_float, duration=T_pos,
                        sample_rate=T_pos, f_FSR=T_opt(T_pos), snr_min_dB=T_float, guard=T_float,
                        noise=T_noise),
    "reconstruction": dict(drift=T_choice("estimate", "none", "true"),
                           weights_mode=T_choice("mrc", "equal"), taper_fraction=T_float,
                           or_bins=T_posint, or_rel_threshold=T_float, rcond_threshold=T_float,
                           record_noise=T_choice("auto", "equal", "full_scale", none="auto")),
    "budget": dict(N=T_posint, B_opt=T_pos, C1=T_pos, PAPR=T_pos, B_ref=T_pos, SNDR_cal_dB=T_float,
                   OSNR_sig_dB=T_float, OSNR_LO_dB=T_float, tau_j_ADC=T_float, tau_j_LO=T_float,
                   B_max=T_pos, N_list=T_list(T_posint), B_opt_list=T_list(T_pos), B_opt_min=T_pos,
                   B_opt_max=T_pos, B_opt_points=T_posint, N_max=T_posint,
                   mc_N=T_list(T_posint), mc_trials=T_posint, mc_perturbation_dB=T_float,
                   mc_B=T_pos, mc_f_FSR=T_pos, mc_duration=T_pos),
    "outputs": dict(csv=T_bool, waveform=T_bool, plot_script=T_bool),
}


# --------------------------------------------------------------------------
# reading


def _ini_lines(text: str) -> dict:
    """(section, key) -> line number for an INI text."""
    out, sec = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in ";#":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            sec = m.group(1).strip()
            out.setdefault((sec, None), i)
            continue
        key = re.split(r"[=:]", line, maxsplit=1)[0].strip()
        if sec is not None:
            out.setdefault((sec, key), i)
    return out


def _json_lines(text: str) -> dict:
    """Best-effort (section, key) -> line number for a two-level JSON text."""
    out, sec, depth = {}, None, 0
    for i, raw in enumerate(text.splitlines(), 1):
        for m in re.finditer(r'"([^"]+)"\s*:|[{}]', raw):
            tok = m.group(0)
            if tok == "{":
                depth += 1
            elif tok == "}":
                depth -= 1
            elif depth == 1:
                sec = m.group(1)
                out.setdefault((sec, None), i)
            elif depth == 2 and sec is not None:
                out.setdefault((sec, m.group(1)), i)
    return out


def read_raw(path) -> tuple[dict, dict, str]:
    """Parse a scenario file without validation; returns (raw, line_map, source)."""
    path = Path(path)
    text = path.read_text()
    src = str(path)
    if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid JSON: {exc.msg}", src, exc.lineno) from None
        if not isinstance(raw, dict) or not all(isinstance(v, dict) for v in raw.values()):
            raise ScenarioError("JSON scenario must map section names to objects", src)
        return raw, _json_lines(text), src
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"),
                                   strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text, source=src)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ScenarioError(str(exc).splitlines()[0], src, line) from None
    raw = {s: {k: parse_value(v) for k, v in cp[s].items()} for s in cp.sections()}
    return raw, _ini_lines(text), src


def defaults_path() -> Path:
    return Path(str(resources.files("oawm") / "data" / "defaults.ini"))


def _check_known(raw: dict, lines: dict, src: str):
    for sec, vals in raw.items():
        if sec not in SCHEMA:
            raise ScenarioError(f"unknown section [{sec}]", src, lines.get((sec, None)))
        for key in vals:
            if key not in SCHEMA[sec]:
                raise ScenarioError(f"unknown key '{key}' in [{sec}]", src, lines.get((sec, key)))


def _coerce(values: dict, lines: dict, src: str) -> dict:
    out = {}
    for sec, spec in SCHEMA.items():
        out[sec] = {}
        for key, typ in spec.items():
            if key not in values.get(sec, {}):
                raise ScenarioError(f"missing key '{key}' in [{sec}]", src)
            try:
                out[sec][key] = typ(values[sec][key], f"{sec}.{key}")
            except ValueError as exc:
                raise ScenarioError(str(exc), src, lines.get((sec, key))) from None
    return out


def parse_override(text: str) -> tuple[str, str, Any]:
    """``section.key=value`` -> (section, key, value)."""
    if "=" not in text:
        raise ScenarioError(f"override '{text}' must look like section.key=value")
    lhs, rhs = text.split("=", 1)
    parts = lhs.strip().split(".")
    if len(parts) != 2:
        raise ScenarioError(f"override '{text}': expected a dotted path section.key")
    return parts[0], parts[1], parse_value(rhs)


@dataclass(frozen=True)
class Scenario:
    """Validated scenario values (defaults merged with the file and overrides)."""

    values: dict
    source: str = "<defaults>"

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def seed(self) -> int:
        return int(self.values["scenario"]["seed"])

    def canonical_json(self) -> str:
        return json.dumps(self.values, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        """sha256 of the canonical JSON; independent of key order in the file."""
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_overrides(self, overrides: Iterable[str]) -> "Scenario":
        vals = copy.deepcopy(self.values)
        for text in overrides:
            sec, key, val = parse_override(text)
            if sec not in SCHEMA or key not in SCHEMA[sec]:
                raise ScenarioError(f"override '{text}': unknown key {sec}.{key}")
            vals[sec][key] = val
        return Scenario(_coerce(vals, {}, "--set"), self.source)

    def to_ini(self) -> str:
        lines = []
        for sec, vals in self.values.items():
            lines.append(f"[{sec}]")
            for k, v in vals.items():
                lines.append(f"{k} = {_fmt_ini(v)}")
            lines.append("")
        return "\n".join(lines)


def _fmt_ini(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return "[" + ", ".join(_fmt_ini(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf")
    return str(v)


def load_scenario(path=None, overrides: Iterable[str] = ()) -> Scenario:
    """Defaults, then the scenario file (if any), then ``section.key=value`` overrides."""
    base, blines, bsrc = read_raw(defaults_path())
    _check_known(base, blines, bsrc)
    merged = copy.deepcopy(base)
    lines, src = blines, bsrc
    if path is not None:
        raw, lines, src = read_raw(path)
        _check_known(raw, lines, src)
        for sec, vals in raw.items():
            merged.setdefault(sec, {}).update(vals)
    sc = Scenario(_coerce(merged, lines, src), src)
    if sc["scenario"]["schema_version"] != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {sc['scenario']['schema_version']}", src,
                            lines.get(("scenario", "schema_version")))
    overrides = list(overrides)
    return sc.with_overrides(overrides) if overrides else sc


# --------------------------------------------------------------------------
# builders


def _dbm(x):
    return 1e-3 * 10 ** (x / 10)


def build_frontend(sc: Scenario, f_FSR: float | None = None):
    from .frontend import FrontEndConfig

    c, f = sc["comb"], sc["frontend"]
    N = c["N"]
    fsr = c["f_FSR"] if f_FSR is None else f_FSR
    kw = dict(S=f["S"], CMRR_dB=f["CMRR_dB"], LOSPR_dB=f["LOSPR_dB"], G_dB=f["G_dB"],
              NF_dB=f["NF_dB"], R=f["R"], P_PD=_dbm(f["P_PD_dBm"]), T=f["T"],
              iq_phase_deg=_per_channel(f["iq_phase_deg"], N, "iq_phase_deg"),
              loss_dB=_per_channel(f["loss_dB"], N, "loss_dB"), OSNR_sig_dB=f["OSNR_sig_dB"],
              dc_block=f["dc_block"])
    fe = FrontEndConfig.evenly_delayed(N, fsr, **kw)
    if f["delay_error"]:
        err = np.asarray(f["delay_error"], dtype=float)
        if err.size != N:
            raise ScenarioError(f"frontend.delay_error needs {N} entries")
        fe = FrontEndConfig(**{**fe.__dict__, "delays": tuple(np.asarray(fe.delays) + err)})
    return fe


def _per_channel(v, N, name):
    if isinstance(v, list):
        if len(v) != N:
            raise ScenarioError(f"frontend.{name} needs {N} entries")
        return tuple(v)
    return v


def build_comb(sc: Scenario, fe, f_FSR: float | None = None):
    from .frontend import CombLO

    c = sc["comb"]
    N = c["N"]
    fsr = c["f_FSR"] if f_FSR is None else f_FSR
    amps = None
    if c["tone_ripple_dB"]:
        r = np.asarray(c["tone_ripple_dB"], dtype=float)
        if r.size != N:
            raise ScenarioError(f"comb.tone_ripple_dB needs {N} entries")
        a = 10 ** (r / 20)
        amps = tuple(a * np.sqrt(fe.P_LO_nominal / np.sum(a ** 2)))
    return CombLO.centered(N, fsr, fe.P_LO_nominal, tone_amplitudes=amps, tau_j_LO=c["tau_j_LO"],
                           OSNR_LO_dB=c["OSNR_LO_dB"], f_ref=c["f_ref"],
                           jitter_bandwidth=c["jitter_bandwidth"])


def build_adc(sc: Scenario):
    from .frontend import ADCConfig

    a = sc["adc"]
    return ADCConfig(B=a["B"], f_s=a["f_s"], U_FS=a["U_FS"], headroom_sigma=a["headroom_sigma"],
                     n_bits=a["n_bits"], C1=a["C1"], tau_j_ADC=a["tau_j_ADC"],
                     clock_spur_dBc=a["clock_spur_dBc"], clock_spur_freq=a["clock_spur_freq"],
                     peak_fill=a["peak_fill"])


def build_drift(sc: Scenario):
    from .types import DriftParams

    N = sc["comb"]["N"]
    phi = sc["drift"]["phi_F"] or [0.0] * N
    if len(phi) != N:
        raise ScenarioError(f"drift.phi_F needs {N} entries")
    return DriftParams(np.asarray(phi, dtype=float), sc["drift"]["tau_LO"])


def noise_toggles(value) -> tuple:
    from .frontend import NOISE_SOURCES

    if value == "all":
        return tuple(NOISE_SOURCES)
    if value == "none":
        return ()
    return tuple(value)


def signal_power(sc: Scenario, fe) -> float:
    p = sc["signal"]["power_dBm"]
    return fe.P_S_nominal if p is None else _dbm(p)


def pilot_set(sc: Scenario, comb, adc) -> np.ndarray:
    """Pilot frequencies: overlap-region centres plus cycled offsets, plus extras."""
    from .signalkit import pilot_frequencies

    s = sc["signal"]
    if not s["pilots"]:
        return np.zeros(0)
    df = 1 / s["duration"]
    base = np.asarray(pilot_frequencies(comb.f_mu, adc.B, False, df), dtype=float)
    offs = np.asarray(s["pilot_offsets"] or [0.0], dtype=float)
    base = base + offs[np.arange(base.size) % offs.size]
    out = np.concatenate([base, np.asarray(s["pilot_extra"], dtype=float)])
    return np.round(out / df) * df


def build_signal(sc: Scenario, fe, comb, adc):
    """Optical test waveform of the scenario (with pilots when enabled).

    Returns ``(waveform, info)``; ``info`` holds the pilot frequencies, the
    tone frequency (cw) or the transmitted symbols (qam).
    """
    from .signalkit import RandomSignalSpec, add_pilot_tones, gen_cw_tone, gen_qam_signal, \
        gen_random_test_signal

    s = sc["signal"]
    P = signal_power(sc, fe)
    T, fs = s["duration"], s["sample_rate"]
    info: dict = {}
    if s["kind"] == "random":
        bw = s["bandwidth"] or comb.M * comb.f_FSR
        w = gen_random_test_signal(RandomSignalSpec(P, bw, s["center"], sc.seed), T, fs)
    elif s["kind"] == "cw":
        df = 1 / T
        f0 = round(s["cw_freq"] / df) * df
        w = gen_cw_tone(f0, P, s["cw_phase"], T, fs)
        info["tone"] = f0
    else:
        n_sym = int(round(T * s["qam_symbol_rate"]))
        w, sym = gen_qam_signal(s["qam_symbol_rate"], s["qam_order"], s["rrc_rolloff"], n_sym,
                                sc.seed, fs, P)
        info["symbols"] = sym
    pil = pilot_set(sc, comb, adc)
    if pil.size:
        w = add_pilot_tones(w, pil, s["pilot_rel_dB"], None)
    info["pilots"] = pil
    return w, info


def build_budget_params(sc: Scenario, **kw):
    from .budget import BudgetParams

    f, b = sc["frontend"], sc["budget"]
    base = dict(N=b["N"], B_opt=b["B_opt"], S=f["S"], CMRR_dB=f["CMRR_dB"], LOSPR_dB=f["LOSPR_dB"],
                G_dB=f["G_dB"], NF_dB=f["NF_dB"], R=f["R"], P_PD=_dbm(f["P_PD_dBm"]), T=f["T"],
                C1=b["C1"], PAPR=b["PAPR"], tau_j_ADC=b["tau_j_ADC"], tau_j_LO=b["tau_j_LO"],
                OSNR_sig_dB=b["OSNR_sig_dB"], OSNR_LO_dB=b["OSNR_LO_dB"], B_ref=b["B_ref"],
                SNDR_cal_dB=b["SNDR_cal_dB"], B_max=b["B_max"])
    base.update(kw)
    return BudgetParams(**base)
