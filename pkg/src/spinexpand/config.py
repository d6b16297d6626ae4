"""YAML run configuration: loading, merging over the packaged defaults, and
validation with source line numbers."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .experiment import RelaxationParams, SequenceParams, expansion_duration
from .hamiltonian import SpinSystem, SpinSystemError, benzene_preset

EXPERIMENTS = ("thermal", "rho_a", "pseudopure", "expand", "measure", "logic_check", "spectrum")
STATES = ("thermal", "rho_a", "pseudopure", "expand", "measure")
MODES = ("ideal", "pulse_level")


class ConfigError(ValueError):
    """Unusable configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" | "warning"
    message: str
    line: int | None = None

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line else ""
        return f"{self.level}: {where}{self.message}"


@dataclass(frozen=True)
class SpectrumParams:
    state: str = "thermal"
    channel: str = "H1"
    method: str = "transition"
    broadening_hz: float = 5.0
    n_points: int = 8192
    dwell_s: float = 5e-5
    threshold_rel: float = 0.01


@dataclass(frozen=True)
class OutputParams:
    dir: str = "out"
    csv: bool = False
    plot: bool = False
    save_checkpoints: bool = False


@dataclass
class RunConfig:
    system: SpinSystem
    mode: str = "ideal"
    experiment: str = "expand"
    theta_deg: float = 90.0
    storage_time_s: float = 0.5
    sequence: SequenceParams = field(default_factory=SequenceParams)
    relaxation: RelaxationParams = field(default_factory=RelaxationParams)
    spectrum: SpectrumParams = field(default_factory=SpectrumParams)
    output: OutputParams = field(default_factory=OutputParams)
    seed: int = 0
    raw: dict = field(default_factory=dict)


def default_config_text() -> str:
    return resources.files("spinexpand").joinpath("data/default.yaml").read_text()


def _line_map(text: str) -> dict[tuple, int]:
    """1-based line of every mapping key, keyed by its path."""
    lines: dict[tuple, int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = (*path, k.value)
                lines[key] = k.start_mark.line + 1
                walk(v, key)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                lines[(*path, i)] = v.start_mark.line + 1
                walk(v, (*path, i))

    walk(yaml.compose(text, Loader=yaml.SafeLoader), ())
    return lines


def parse_yaml(text: str) -> tuple[dict, dict[tuple, int]]:
    try:
        data = yaml.safe_load(text)
        lines = _line_map(text) if data else {}
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigError(str(exc.problem or exc), mark.line + 1 if mark else None) from None
    except yaml.YAMLError as exc:
        raise ConfigError(str(exc)) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1)
    return data, lines


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_keys(raw: dict, defaults: dict, lines: dict, path: tuple, diags: list) -> None:
    for k, v in raw.items():
        key = (*path, k)
        if path == ("system",) or path[:2] == ("relaxation", "t2_by_order") or key == ("relaxation", "t2_by_order"):
            continue
        if k not in defaults:
            diags.append(Diagnostic("error", f"unknown key {'.'.join(map(str, key))}", lines.get(key)))
        elif isinstance(v, dict) and isinstance(defaults[k], dict):
            _check_keys(v, defaults[k], lines, key, diags)


def build_system(spec: dict) -> SpinSystem:
    preset = spec.get("preset", "benzene")
    if preset == "benzene":
        return benzene_preset(
            float(spec.get("b_ortho_hz", -560.0)),
            spec.get("b_ch_hz"),
            float(spec.get("j01_hz", 158.0)),
            spec.get("offsets_hz") or {},
        )
    if preset == "custom":
        for key in ("sites", "dipolar_hz", "jcoupling_hz"):
            if key not in spec:
                raise SpinSystemError(f"custom system needs {key!r}")
        return SpinSystem(tuple(spec["sites"]), np.asarray(spec["dipolar_hz"], dtype=float),
                          np.asarray(spec["jcoupling_hz"], dtype=float), name=spec.get("name", "custom"))
    raise SpinSystemError(f"unknown preset {preset!r}")


def validate_config(raw: dict, lines: dict | None = None) -> list[Diagnostic]:
    """Errors and warnings for a merged configuration mapping."""
    lines = lines or {}
    diags: list[Diagnostic] = []
    defaults, _ = parse_yaml(default_config_text())
    _check_keys(raw, defaults, lines, (), diags)

    def err(msg, *key):
        diags.append(Diagnostic("error", msg, lines.get(key)))

    sys = None
    try:
        sys = build_system(raw.get("system") or {})
    except (SpinSystemError, ValueError, TypeError) as exc:
        culprit = next((k for k in (raw.get("system") or {}) if str(k) in str(exc)), None)
        key = ("system", culprit) if culprit and ("system", culprit) in lines else ("system",)
        err(f"system: {exc}", *key)
    if raw.get("mode") not in MODES:
        err(f"mode must be one of {MODES}", "mode")
    if raw.get("experiment") not in EXPERIMENTS:
        err(f"experiment must be one of {EXPERIMENTS}", "experiment")
    try:
        theta = float(raw.get("theta_deg"))
        if not 0 <= theta < 360:
            err("theta_deg must lie in [0, 360)", "theta_deg")
    except (TypeError, ValueError):
        err("theta_deg must be a number", "theta_deg")
    try:
        if float(raw.get("storage_time_s")) < 0:
            err("storage_time_s must be >= 0", "storage_time_s")
    except (TypeError, ValueError):
        err("storage_time_s must be a number", "storage_time_s")
    seq = rel = None
    try:
        seq = SequenceParams(**(raw.get("sequence") or {}))
    except (TypeError, ValueError) as exc:
        err(f"sequence: {exc}", "sequence")
    try:
        rel = RelaxationParams(**(raw.get("relaxation") or {}))
    except (TypeError, ValueError) as exc:
        err(f"relaxation: {exc}", "relaxation")
    spec = raw.get("spectrum") or {}
    if spec.get("state") not in STATES:
        err(f"spectrum.state must be one of {STATES}", "spectrum", "state")
    if spec.get("method") not in ("transition", "fid"):
        err("spectrum.method must be 'transition' or 'fid'", "spectrum", "method")
    n = spec.get("n_points")
    if not isinstance(n, int) or n < 2 or n & (n - 1):
        err("spectrum.n_points must be a power of two", "spectrum", "n_points")
    for key in ("broadening_hz", "dwell_s"):
        if not isinstance(spec.get(key), (int, float)) or spec.get(key) <= 0:
            err(f"spectrum.{key} must be > 0", "spectrum", key)
    thr = spec.get("threshold_rel")
    if not isinstance(thr, (int, float)) or not 0 < thr < 1:
        err("spectrum.threshold_rel must lie in (0, 1)", "spectrum", "threshold_rel")
    if sys is not None and spec.get("channel") not in [s.value for s in sys.species_present]:
        err(f"spectrum.channel {spec.get('channel')!r} has no spins", "spectrum", "channel")

    if sys is not None and seq is not None and rel is not None:
        try:
            n_spins = sys.n_spins
            duration = expansion_duration(sys, seq)
            t2 = rel.t2(n_spins)
            if duration >= t2:
                diags.append(Diagnostic(
                    "warning",
                    f"expansion takes {duration * 1e3:.2f} ms, not shorter than the "
                    f"{n_spins}Q decoherence time {t2 * 1e3:.2f} ms",
                    lines.get(("relaxation", "t2_by_order")),
                ))
        except Exception as exc:  # noqa: BLE001 - reported, not raised
            err(f"cannot compute expansion duration: {exc}", "system")
    return diags


def config_from_raw(raw: dict, lines: dict | None = None) -> tuple[RunConfig, list[Diagnostic]]:
    """Validate a merged mapping and build the RunConfig.

    Raises ConfigError on the first error diagnostic.
    """
    diags = validate_config(raw, lines)
    errors = [d for d in diags if d.level == "error"]
    if errors:
        raise ConfigError(errors[0].message, errors[0].line)
    cfg = RunConfig(
        system=build_system(raw["system"]),
        mode=raw["mode"],
        experiment=raw["experiment"],
        theta_deg=float(raw["theta_deg"]),
        storage_time_s=float(raw["storage_time_s"]),
        sequence=SequenceParams(**raw["sequence"]),
        relaxation=RelaxationParams(**raw["relaxation"]),
        spectrum=SpectrumParams(**raw["spectrum"]),
        output=OutputParams(**raw["output"]),
        seed=int(raw.get("seed", 0)),
        raw=raw,
    )
    return cfg, diags


def config_from_text(text: str, overrides: dict | None = None) -> tuple[RunConfig, list[Diagnostic]]:
    """Defaults, then the YAML document ``text``, then ``overrides``."""
    base, _ = parse_yaml(default_config_text())
    user, lines = parse_yaml(text)
    raw = merge(base, user)
    if overrides:
        raw = merge(raw, overrides)
    return config_from_raw(raw, lines)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> tuple[RunConfig, list[Diagnostic]]:
    if path is None:
        return config_from_text("", overrides)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return config_from_text(text, overrides)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.raw, sort_keys=True, default_flow_style=False)
