"""Experiment configuration: JSON schema, unit conversion and lineage hash.

Keys carry their unit as a suffix. ``_mhz`` and ``_khz`` are cyclic
frequencies and are converted to angular frequency (x 2 pi); times use
``_ns`` / ``_us``; rates use ``_hz``.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from .detection import NoiseConfig, TransmissionConfig, WindowConfig
from .errors import ConfigError, PhotonLabError
from .raman import ControlPulse, MemoryConfig, StorageProtocol
from .source import SourceConfig, WaveshapeParams, emission_distribution
from .timetags import RUN_KINDS

SCHEMA_VERSION = 1
TWO_PI = 2 * math.pi
NS, US, MHZ, KHZ = 1e-9, 1e-6, TWO_PI * 1e6, TWO_PI * 1e3

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_prob = {"type": "number", "minimum": 0, "maximum": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_PULSE = _obj({
    "shape": {"enum": ["square", "gaussian", "table"]},
    "peak_rabi_mhz": _nonneg,
    "t_start_ns": _num,
    "duration_ns": _pos,
    "power_scale": _nonneg,
    "edge_ns": _nonneg,
    "table_times_ns": {"type": "array", "items": _num},
    "table_rabi_mhz": {"type": "array", "items": _nonneg},
}, ["shape"])

SCHEMA = _obj({
    "schema_version": {"const": SCHEMA_VERSION},
    "description": {"type": "string"},
    "source": _obj({
        "probe_setting": _nonneg,
        "rabi_curve": _obj({"amplitude": _prob, "period": _pos, "offset": _num}, ["amplitude", "period"]),
        "g2_curve": _obj({"g2_min": _prob, "scale": _pos}, ["g2_min", "scale"]),
        "trial_period_us": _pos,
        "envelope": _obj({"rise_sigma_ns": _pos, "decay_tau_ns": _pos, "fwhm_ns": _pos, "peak_time_ns": _nonneg},
                         ["rise_sigma_ns", "decay_tau_ns", "fwhm_ns"]),
        "p_gen": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "g2_0": {"type": ["number", "null"], "minimum": 0, "maximum": 2},
        "notes": {"type": "object"},
    }, ["probe_setting", "rabi_curve", "g2_curve", "trial_period_us", "envelope"]),
    "memory": _obj({
        "d": _nonneg,
        "delta_mhz": _num,
        "gamma_mhz": _pos,
        "gamma_s_khz": _nonneg,
        "delta2_mhz": _num,
        "tau_mem_us": _pos,
        "osc_amplitude": {"type": "number", "minimum": 0, "maximum": 0.5},
        "osc_omega_khz": _nonneg,
        "nz": {"type": "integer", "minimum": 32},
        "dt_ns": _pos,
        "compensate_light_shift": {"type": "boolean"},
    }, ["d", "delta_mhz", "gamma_mhz"]),
    "protocol": _obj({
        "write": _PULSE,
        "read": _PULSE,
        "write_window_ns": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "storage_time_us": _nonneg,
        "read_span_us": _pos,
    }, ["write", "read"]),
    "detection": _obj({
        "stages": {"type": "array", "minItems": 1, "items": _obj({"name": {"type": "string"}, "transmission": _num},
                                                                   ["name", "transmission"])},
        "source_to_memory": _num,
        "detector_efficiency": _num,
        "dark_rate_hz": _nonneg,
        "filter_suppression_db": _nonneg,
        "efficiency_override": {"type": ["number", "null"]},
    }, ["stages", "detector_efficiency", "dark_rate_hz"]),
    "windows": _obj({
        "input_start_ns": _num,
        "input_width_ns": _num,
        "stored_start_ns": _num,
        "stored_width_ns": _num,
        "trial_period_us": _num,
    }, ["input_start_ns", "input_width_ns", "stored_start_ns", "stored_width_ns", "trial_period_us"]),
    "noise": _obj({"p_noise_per_trial": _num, "profile": {"enum": ["uniform"]}}, ["p_noise_per_trial"]),
    "run": _obj({
        "kind": {"enum": sorted(RUN_KINDS)},
        "n_trials": {"type": "integer", "minimum": 0},
        "master_seed": {"type": "integer", "minimum": 0},
    }),
    "figures": {"type": "object"},
}, ["schema_version", "source", "memory", "protocol", "detection", "windows", "noise"])


@dataclass(frozen=True)
class RunSettings:
    kind: str = "storage"
    n_trials: int = 100_000
    master_seed: int = 0


def _pulse(d: dict) -> ControlPulse:
    return ControlPulse(
        shape=d["shape"],
        peak_rabi=d.get("peak_rabi_mhz", 0.0) * MHZ,
        t_start=d.get("t_start_ns", 0.0) * NS,
        duration=d.get("duration_ns", 300.0) * NS,
        power_scale=d.get("power_scale", 1.0),
        edge=d.get("edge_ns", 10.0) * NS,
        table_times=tuple(x * NS for x in d.get("table_times_ns", ())),
        table_values=tuple(x * MHZ for x in d.get("table_rabi_mhz", ())),
    )


@dataclass
class ExperimentConfig:
    source: SourceConfig
    memory: MemoryConfig
    protocol: StorageProtocol
    detection: TransmissionConfig
    windows: WindowConfig
    noise: NoiseConfig
    run: RunSettings
    document: dict

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(doc, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config schema violation at {where}: {exc.message}") from None
        doc = copy.deepcopy(doc)
        try:
            cfg = cls._build(doc)
        except (ValueError, TypeError) as exc:
            if isinstance(exc, PhotonLabError):
                raise ConfigError(str(exc)) from exc
            raise ConfigError(f"invalid config value: {exc}") from exc
        cfg.validate()
        return cfg

    @classmethod
    def _build(cls, doc: dict) -> "ExperimentConfig":
        s, m, p, det, w, nz = (doc[k] for k in ("source", "memory", "protocol", "detection", "windows", "noise"))
        env = s["envelope"]
        source = SourceConfig(
            probe_setting=s["probe_setting"],
            rabi_amplitude=s["rabi_curve"]["amplitude"],
            rabi_period=s["rabi_curve"]["period"],
            rabi_offset=s["rabi_curve"].get("offset", 0.0),
            g2_min=s["g2_curve"]["g2_min"],
            g2_scale=s["g2_curve"]["scale"],
            trial_period=s["trial_period_us"] * US,
            envelope=WaveshapeParams(
                rise_sigma=env["rise_sigma_ns"] * NS,
                decay_tau=env["decay_tau_ns"] * NS,
                fwhm=env["fwhm_ns"] * NS,
                peak_time=env.get("peak_time_ns", 400.0) * NS,
            ),
            p_gen=s.get("p_gen"),
            g2_0=s.get("g2_0"),
            notes=s.get("notes", {}),
        )
        memory = MemoryConfig(
            d=m["d"],
            delta=m["delta_mhz"] * MHZ,
            gamma=m["gamma_mhz"] * MHZ,
            gamma_s=m.get("gamma_s_khz", 0.0) * KHZ,
            delta2=m.get("delta2_mhz", 0.0) * MHZ,
            tau_mem=m.get("tau_mem_us", 30.0) * US,
            osc_amplitude=m.get("osc_amplitude", 0.0),
            osc_omega=m.get("osc_omega_khz", 0.0) * KHZ,
            nz=m.get("nz", 64),
            dt=m.get("dt_ns", 0.5) * NS,
            compensate_light_shift=m.get("compensate_light_shift", True),
        )
        ww = p.get("write_window_ns", [100.0, 900.0])
        protocol = StorageProtocol(
            write=_pulse(p["write"]),
            read=_pulse(p["read"]),
            write_window=(ww[0] * NS, ww[1] * NS),
            storage_time=p.get("storage_time_us", 1.2) * US,
            read_span=p.get("read_span_us", 1.0) * US,
        )
        detection = TransmissionConfig(
            stages=tuple((st["name"], st["transmission"]) for st in det["stages"]),
            source_to_memory=det.get("source_to_memory", 0.22),
            detector_efficiency=det["detector_efficiency"],
            dark_rate=det["dark_rate_hz"],
            filter_suppression_db=det.get("filter_suppression_db", 43.4),
            efficiency_override=det.get("efficiency_override"),
        )
        windows = WindowConfig(
            input_start=w["input_start_ns"] * NS,
            input_width=w["input_width_ns"] * NS,
            stored_start=w["stored_start_ns"] * NS,
            stored_width=w["stored_width_ns"] * NS,
            trial_period=w["trial_period_us"] * US,
        )
        noise = NoiseConfig(p_noise_per_trial=nz["p_noise_per_trial"], profile=nz.get("profile", "uniform"))
        run = RunSettings(**doc.get("run", {}))
        return cls(source, memory, protocol, detection, windows, noise, run, doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        text = Path(path).read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(doc)

    @classmethod
    def builtin(cls, name: str = "calibrated") -> "ExperimentConfig":
        return cls.from_dict(builtin_document(name))

    def validate(self) -> None:
        """Cross-module checks that the schema cannot express."""
        if not math.isclose(self.source.trial_period, self.windows.trial_period, rel_tol=1e-12):
            raise ConfigError("source and window trial periods differ")
        op = self.source.operating_point()
        if op.p_gen > 0:
            try:
                emission_distribution(op.p_gen, op.g2_0)
            except PhotonLabError as exc:
                raise ConfigError(f"source operating point: {exc}") from exc
        w0, w1 = self.protocol.write_window
        if w0 < 0 or w1 > self.windows.trial_period or w1 <= w0:
            raise ConfigError("write window must be a non-empty interval inside the trial period")
        read_end = self.source.envelope.peak_time + self.protocol.storage_time + self.protocol.read_span
        if read_end > self.windows.trial_period:
            raise ConfigError(f"read-out ends at {read_end * 1e6:.3f} us, beyond the trial period")

    def with_changes(self, **sections) -> "ExperimentConfig":
        """Copy with selected JSON sections merged (shallow per section)."""
        doc = copy.deepcopy(self.document)
        for key, patch in sections.items():
            if isinstance(patch, dict) and isinstance(doc.get(key), dict):
                doc[key].update(patch)
            else:
                doc[key] = patch
        return ExperimentConfig.from_dict(doc)

    def to_json(self) -> str:
        return json.dumps(self.document, sort_keys=True, indent=2)

    def config_hash(self) -> bytes:
        """SHA-256 of the canonical JSON without the ``run`` and ``figures``
        sections, so the three runs of one experiment share a lineage."""
        doc = {k: v for k, v in self.document.items() if k not in ("run", "figures", "description")}
        canon = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
        return hashlib.sha256(canon.encode()).digest()


def builtin_document(name: str) -> dict:
    try:
        text = resources.files("photonlab.configs").joinpath(f"{name}.json").read_text()
    except FileNotFoundError:
        raise ConfigError(f"no built-in config named {name!r}") from None
    return json.loads(text)
