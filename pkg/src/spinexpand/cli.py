"""Command-line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import logic
from .coherence import decompose, sigma_pairs
from .config import ConfigError, RunConfig, load_config
from .experiment import (
    ExperimentError,
    ExperimentResult,
    expand,
    expansion_duration,
    measure_model,
    prepare_pseudopure,
    prepare_rho_a,
    pure_part,
    thermal_state,
)
from .hamiltonian import Species, SpinSystemError, conditional_coupling_hz
from .pulses import NonConvergenceError, PulseProgramError
from .spectra import (
    SpectrumError,
    fid_spectrum,
    max_peaks,
    peak_report,
    plot_spectrum,
    transition_spectrum,
    write_csv,
)
from .spin_core import DensityMatrix, SpinAlgebraError

SUBCOMMANDS = {
    "thermal": "thermal",
    "rho-a": "rho_a",
    "pseudopure": "pseudopure",
    "expand": "expand",
    "measure": "measure",
    "spectrum": "spectrum",
    "logic-check": "logic_check",
    "peaks": "peaks",
}

NUMERICAL_ERRORS = (
    ExperimentError,
    NonConvergenceError,
    SpectrumError,
    SpinAlgebraError,
    np.linalg.LinAlgError,
    FloatingPointError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage problems are configuration errors (exit 1), not argparse's 2
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (merged over the defaults)")
    common.add_argument("--mode", choices=("ideal", "pulse_level"))
    common.add_argument("--theta", type=float, help="13C preparation angle in degrees")
    common.add_argument("--t", type=float, dest="storage_time", help="storage time in seconds (measure)")
    common.add_argument("--state", help="state whose spectrum is computed")
    common.add_argument("--channel", help="observed species, C13 or H1")
    common.add_argument("--out", help="output directory")
    common.add_argument("--csv", action="store_true", help="write spectra as CSV")
    common.add_argument("--plot", action="store_true", help="write spectra as SVG plots")
    common.add_argument("--save-checkpoints", action="store_true", help="save checkpoint matrices (.npz)")
    parser = _Parser(prog="spinexpand", description="Spin-state expansion simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    out: dict = {}
    if args.mode:
        out["mode"] = args.mode
    if args.theta is not None:
        out["theta_deg"] = args.theta
    if args.storage_time is not None:
        out["storage_time_s"] = args.storage_time
    spec = {}
    if args.state:
        spec["state"] = args.state.replace("-", "_")
    if args.channel:
        spec["channel"] = args.channel
    if spec:
        out["spectrum"] = spec
    output = {}
    if args.out:
        output["dir"] = args.out
    if args.csv:
        output["csv"] = True
    if args.plot:
        output["plot"] = True
    if args.save_checkpoints:
        output["save_checkpoints"] = True
    if output:
        out["output"] = output
    experiment = SUBCOMMANDS[args.command]
    if experiment != "peaks":
        out["experiment"] = experiment
    return out


# ---------------------------------------------------------------- reporting


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _histogram_lines(rho: DensityMatrix, cfg: RunConfig, channel: str, indent: str = "    ") -> list[str]:
    norms = decompose(rho, cfg.system, channel).norms()
    return [f"{indent}p={p:+d}: {n:.6e}" for p, n in norms.items() if n > 1e-12]


def _result_lines(res: ExperimentResult, cfg: RunConfig) -> list[str]:
    lines = [f"fidelity_vs_oracle: {_fmt(res.fidelity_vs_oracle)}"]
    for key in sorted(k for k in res.info if k != "mode"):
        val = res.info[key]
        if isinstance(val, float):
            val = f"{val:.6g}"
        elif isinstance(val, list):
            val = "; ".join(
                ", ".join(f"{k}={v:.3f}" if isinstance(v, float) else f"{k}={v}" for k, v in item.items())
                for item in val
            )
        lines.append(f"{key}: {val}")
    lines.append("checkpoints:")
    for label, rho in res.timeline:
        lines.append(f"  {label}: norm {np.linalg.norm(rho.data):.6e}")
        lines.append("    all-spin coherence orders:")
        lines += _histogram_lines(rho, cfg, "all", "      ")
    return lines


def _header(cfg: RunConfig, title: str) -> list[str]:
    sys_ = cfg.system
    return [
        f"# {title}",
        f"system: {sys_.name}, {sys_.n_spins} spins",
        f"mode: {cfg.mode}",
        f"conditional_coupling_hz: {conditional_coupling_hz(sys_):.4f}",
    ]


def _run_state(name: str, cfg: RunConfig) -> tuple[DensityMatrix, ExperimentResult | None]:
    sys_, seq = cfg.system, cfg.sequence
    if name == "thermal":
        return thermal_state(sys_), None
    if name == "rho_a":
        res = prepare_rho_a(sys_, cfg.mode, seq)
    elif name == "pseudopure":
        res = prepare_pseudopure(sys_, cfg.mode, seq)
    elif name in ("expand", "measure"):
        res = expand(sys_, np.deg2rad(cfg.theta_deg), cfg.mode, seq)
        if name == "measure":
            rho = measure_model(res.rho_final, cfg.storage_time_s, cfg.relaxation)
            res.timeline.append(("stored", rho))
            return rho, res
    else:
        raise ValueError(name)
    return res.rho_final, res


def _spectrum(rho: DensityMatrix, cfg: RunConfig, channel: str | None = None):
    sp = cfg.spectrum
    channel = channel or sp.channel
    if sp.method == "fid":
        return fid_spectrum(rho, cfg.system, channel, n_points=sp.n_points, dwell_s=sp.dwell_s,
                            broadening_hz=sp.broadening_hz, threshold_rel=sp.threshold_rel)
    return transition_spectrum(rho, cfg.system, channel, sp.broadening_hz, sp.n_points, sp.dwell_s,
                               sp.threshold_rel)


class _Outputs:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = Path(cfg.output.dir)
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        self.written.append(p)
        return p

    def spectra(self, rho: DensityMatrix, stem: str, channels, force_csv: bool = False) -> list[str]:
        lines = []
        for ch in channels:
            spec = _spectrum(rho, self.cfg, ch)
            lines.append(f"spectrum {ch}: {len(spec.peaks)} peaks")
            if self.cfg.output.csv or force_csv:
                write_csv(spec, self.path(f"{stem}_{ch}.csv"))
            if self.cfg.output.plot:
                plot_spectrum(spec, self.path(f"{stem}_{ch}.svg"), f"{stem} {ch}")
        return lines

    def checkpoints(self, res: ExperimentResult | None, stem: str) -> None:
        if res is None or not self.cfg.output.save_checkpoints:
            return
        arrays = {f"{i:02d}_{label}": rho.data for i, (label, rho) in enumerate(res.timeline)}
        np.savez(self.path(f"{stem}_checkpoints.npz"), **arrays)


def _channels(cfg: RunConfig) -> list[str]:
    return [s.value for s in cfg.system.species_present]


def cmd_experiment(cfg: RunConfig) -> list[str]:
    name = cfg.experiment
    lines = _header(cfg, name)
    out = _Outputs(cfg)
    rho, res = _run_state(name, cfg)
    if res is not None:
        lines += _result_lines(res, cfg)
    else:
        lines.append("all-spin coherence orders:")
        lines += _histogram_lines(rho, cfg, "all")
    if name == "expand":
        lines.append(f"expansion_duration_ms: {expansion_duration(cfg.system, cfg.sequence) * 1e3:.4f}")
    if name == "measure":
        lines += _measure_lines(rho, cfg)
    if cfg.output.csv or cfg.output.plot:
        lines += out.spectra(rho, name, _channels(cfg))
    out.checkpoints(res, name)
    return lines + [f"wrote: {p}" for p in out.written]


def _measure_lines(rho: DensityMatrix, cfg: RunConfig) -> list[str]:
    pure = pure_part(rho).data
    (u0, _), (_, d1) = sigma_pairs(cfg.system)[:2]
    off = pure.copy()
    np.fill_diagonal(off, 0)
    theta = np.deg2rad(cfg.theta_deg)
    return [
        f"storage_time_s: {cfg.storage_time_s:.6g}",
        f"t2_all_spin_s: {cfg.relaxation.t2(cfg.system.n_spins):.6g}",
        f"population_up_u: {pure[u0, u0].real:.6f} (|a|^2 = {np.cos(theta / 2) ** 2:.6f})",
        f"population_down_d: {pure[d1, d1].real:.6f} (|b|^2 = {np.sin(theta / 2) ** 2:.6f})",
        f"offdiagonal_norm: {np.linalg.norm(off):.6e}",
    ]


def cmd_spectrum(cfg: RunConfig, peaks_only: bool = False) -> list[str]:
    sp = cfg.spectrum
    lines = _header(cfg, "peaks" if peaks_only else "spectrum")
    rho, _ = _run_state(sp.state, cfg)
    spec = _spectrum(rho, cfg)
    lines += [f"state: {sp.state}", f"method: {sp.method}", f"points: {sp.n_points}",
              f"bin_hz: {spec.bin_hz:.6f}"]
    n_ch = len(cfg.system.sites_of(sp.channel))
    if peaks_only:
        kind = "dipolar" if sp.channel == Species.H1.value else "zz"
        lines.append(f"max_peaks({n_ch}, {kind}): {max_peaks(n_ch, kind)}")
    lines += peak_report(spec).splitlines()
    out = _Outputs(cfg)
    stem = f"spectrum_{sp.state}_{sp.channel}"
    if not peaks_only or cfg.output.csv:
        write_csv(spec, out.path(f"{stem}.csv"))
    if cfg.output.plot:
        plot_spectrum(spec, out.path(f"{stem}.svg"), f"{sp.state} {sp.channel}")
    return lines + [f"wrote: {p}" for p in out.written]


def cmd_logic(cfg: RunConfig) -> list[str]:
    n = len(cfg.system.sites_of(Species.H1))
    theta = np.deg2rad(cfg.theta_deg)
    a, b = np.cos(theta / 2), np.sin(theta / 2)
    state = logic.expand_chain(logic.initial_state(a, b, n))
    ghz = logic.ghz_state(a, b, n + 1)
    fid = abs(np.vdot(ghz, state.state)) ** 2
    lines = [
        "# logic_check",
        f"N: {n}",
        f"theta_deg: {cfg.theta_deg:.6g}",
        f"fidelity_vs_closed_form: {fid:.12f}",
        f"<M> = {logic.polarization_moment(state, 1):.6f} (expected {(n + 1) * (a * a - b * b):.6f})",
        f"<M^2> = {logic.polarization_moment(state, 2):.6f} (maximum (N+1)^2 = {(n + 1) ** 2})",
        "outcomes:",
    ]
    lines += [f"  M={m:+d}: {p:.6f}" for m, p in logic.outcome_distribution(state).items() if p > 1e-15]
    return lines


def run(cfg: RunConfig, command: str) -> list[str]:
    if command == "logic-check":
        return cmd_logic(cfg)
    if command == "spectrum":
        return cmd_spectrum(cfg)
    if command == "peaks":
        return cmd_spectrum(cfg, peaks_only=True)
    return cmd_experiment(cfg)


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg, diags = load_config(args.config, _overrides(args))
    except (UsageError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    for d in diags:
        print(str(d), file=sys.stderr)
    try:
        lines = run(cfg, args.command)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (SpinSystemError, PulseProgramError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    report = "\n".join(lines) + "\n"
    sys.stdout.write(report)
    if args.out or cfg.output.save_checkpoints:
        out = Path(cfg.output.dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"report_{args.command}.txt").write_text(report)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
