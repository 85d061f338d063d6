"""Command-line entry point: ``wireqc run|validate|compile``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure (or
diagnostics under ``--strict``).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import yaml

from wireqc import __version__
from wireqc.config import (
    ConfigError,
    LoadedConfig,
    ProgramConfig,
    SpecConfig,
    load_config,
    load_program,
)
from wireqc.errors import WireQCError
from wireqc.gates import calibration_rows, gate_times, transfer_sequence
from wireqc.memory import (
    SELF_MODE_SPAN,
    SelfModeParams,
    make_input_waveform,
    simulate_echo,
    simulate_storage,
    spectral_efficiency,
    time_grid,
)
from wireqc.model import (
    coherent_gate_frequency,
    ensemble_coupling,
    matched_atom_number,
    q_factor,
    resonant_frequency,
    twt_line_length,
    validate_spec,
)
from wireqc.scheduler import compile as compile_program
from wireqc.scheduler import timeline_rows, validate_timeline, TIMELINE_COLUMNS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("wireqc")


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence], meta: dict) -> Path:
    """CSV with a ``#`` metadata block; data rows are locale-free %.17g."""
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {k}: {v}" for k, v in meta.items()]
    lines.append(",".join(columns))
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_csv_rows(path: Path) -> list[str]:
    """Data lines (header and metadata removed) for comparisons."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    body = [l for l in lines if not l.startswith("#")]
    return body[1:]


def read_metadata(path: Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.startswith("# "):
            break
        key, _, value = line[2:].partition(": ")
        out[key] = value
    return out


class Context:
    def __init__(self, loaded: LoadedConfig, out: Path, threads: int):
        self.loaded = loaded
        self.out = out
        self.threads = max(1, threads)
        self.diagnostics: list = []
        self.files: list[Path] = []

    def meta(self, units: str, **extra) -> dict:
        meta = {
            "tool": f"wireqc {__version__}",
            "experiment": self.loaded.config.experiment,
            "config_sha256": self.loaded.sha256,
            "units": units,
        }
        meta.update(extra)
        meta["generated"] = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        return meta

    def write(self, name: str, columns, rows, units: str, **extra) -> None:
        self.files.append(write_csv(self.out / name, columns, rows, self.meta(units, **extra)))

    def map(self, fn: Callable, items: Sequence) -> list:
        if self.threads == 1:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def run_efficiency_surface(ctx: Context) -> None:
    p = ctx.loaded.params
    spec = ctx.loaded.spec
    qm = spec.memory_node()
    delta_in = qm.detuning_profile.width
    gamma1 = spec.port.gamma1
    gamma2 = p.gamma2_ratio * gamma1
    points = [(float(w), float(r)) for w in p.width_ratio.values() for r in p.gamma_ratio.values()]

    def point(pt):
        w, r = pt
        q = spectral_efficiency(w * delta_in, r * gamma1, gamma1, gamma2, delta_in)
        return (w, r, w * delta_in, r * gamma1, q)

    rows = sorted(ctx.map(point, points))
    ctx.write(
        "efficiency_surface.csv",
        ("width_ratio", "gamma_ratio", "delta_omega_rad_s", "Gamma_rad_s", "q_eff"),
        rows,
        "rad/s",
        input_spectrum="Lorentzian, delta_omega = half-width at half maximum",
        gamma2_rad_s=fmt(gamma2),
    )


def _echo_grid(p, spacing: float) -> np.ndarray:
    last = (p.modes - 1) * spacing
    if p.shape == "gaussian":
        return time_grid(-6 * p.width, last + 6 * p.width, p.step)
    return time_grid(-2 * p.step, last + 14 * p.width, p.step)


def run_memory_echo(ctx: Context) -> None:
    p = ctx.loaded.params
    spec = ctx.loaded.spec
    spacing = p.spacing if p.spacing is not None else 10 * p.width
    wf = make_input_waveform(p.modes, p.shape, spacing, p.width, _echo_grid(p, spacing), detuning=p.detuning, carrier=spec.omega0)
    stored, partial = simulate_storage(spec, wf)
    t_prime = stored.state.time if p.t_prime is None else p.t_prime
    res = simulate_echo(stored, spec, t_prime)
    ctx.diagnostics += res.diagnostics
    ctx.write(
        "echo_summary.csv",
        (
            "stored_fraction",
            "echo_efficiency",
            "echo_fidelity",
            "input_centroid_rad_s",
            "output_centroid_rad_s",
            "t_prime_s",
            "echo_peak_time_s",
            "expected_peak_time_s",
        ),
        [
            (
                res.stored_fraction,
                res.echo_efficiency,
                res.echo_fidelity,
                res.input_centroid,
                res.output_centroid,
                t_prime,
                res.echo_peak_time,
                res.expected_peak_time,
            )
        ],
        "s, rad/s",
    )
    ctx.write("input_waveform.csv", ("time_s", "re", "im"), zip(wf.grid, wf.envelope.real, wf.envelope.imag), "s")
    out = res.output
    ctx.write("output_waveform.csv", ("time_s", "re", "im"), zip(out.grid, out.envelope.real, out.envelope.imag), "s")


def run_gate_scaling(ctx: Context) -> None:
    p = ctx.loaded.params

    def delta_for(N):
        return p.fixed_detuning if p.fixed_detuning is not None else p.detuning_factor * p.g * math.sqrt(N)

    rows = ctx.map(lambda N: calibration_rows([N], p.g, delta_for, measure=p.measure)[0], list(p.atoms))
    rows.sort(key=lambda r: r["N"])
    cols = ("N", "delta_rad_s", "omega_c_formula", "omega_c_measured", "t_iswap_s", "leakage")
    ctx.write("gate_calibration.csv", cols, [[r[c] for c in cols] for r in rows], "rad/s, s")


def run_transfer(ctx: Context) -> None:
    p = ctx.loaded.params
    spec = ctx.loaded.spec
    qm = spec.memory_node()
    Gamma = ensemble_coupling(qm)
    window = SELF_MODE_SPAN / Gamma
    spacing = p.spacing if p.spacing is not None else window + 4 / Gamma
    target = spec.node(p.plan[0][1])
    shape = SelfModeParams(target.atom_count, target.coupling_g, Gamma, spec.port.gamma1)
    last = (p.modes - 1) * spacing
    grid = time_grid(-2 / Gamma, last + window + 2 / Gamma, p.step)
    wf = make_input_waveform(p.modes, "selfmode", spacing, 0.0, grid, self_mode=shape)
    nodes = [qm.node_id] + sorted({t for _, t in p.plan})
    t_prime = float(grid[-1])
    stored, partial = simulate_storage(spec, wf, until=t_prime, nodes=nodes)
    ctx.diagnostics += partial.diagnostics
    results = transfer_sequence(spec, stored, [tuple(x) for x in p.plan], t_prime=t_prime)
    rows = [(k, t, r.fidelity, r.self_mode_overlap, r.rephase_time) for (k, t), r in zip(p.plan, results)]
    ctx.write("transfer.csv", ("k", "target", "fidelity", "self_mode_overlap", "rephase_time_s"), rows, "s")


def _program_from(ctx: Context):
    prog = ctx.loaded.params.program
    if isinstance(prog, ProgramConfig):
        return prog.build()
    return load_program(ctx.loaded.path.parent / prog)


def run_compile(ctx: Context) -> None:
    spec = ctx.loaded.spec
    timeline = compile_program(_program_from(ctx), spec)
    ctx.diagnostics += validate_timeline(timeline, spec)
    ctx.write("timeline.csv", TIMELINE_COLUMNS, timeline_rows(timeline), "s, rad/s", assumptions="; ".join(timeline.metadata.get("assumptions", ())))


def run_design_report(ctx: Context) -> None:
    spec = ctx.loaded.spec
    p = ctx.loaded.params
    omega0 = resonant_frequency(spec.bus)
    qm = spec.memory_node()
    rows = [
        ("omega0", omega0, "rad/s"),
        ("nu0", omega0 / (2 * math.pi), "Hz"),
        ("q_factor", q_factor(spec.bus), "1"),
        ("line_length", twt_line_length(spec.bus, omega0), "m"),
        ("gamma1", spec.port.gamma1, "rad/s"),
        ("gamma2", spec.port.gamma2, "rad/s"),
        ("Gamma_memory", ensemble_coupling(qm), "rad/s"),
    ]
    if p.matching_g is not None:
        rows.append(("matched_atom_number", matched_atom_number(spec.port.gamma1, p.matching_g, qm.detuning_profile.width), "1"))
    for node in spec.processing_nodes:
        delta = node.detuning_profile.delta
        cal = gate_times(node.atom_count, node.coupling_g, delta)
        ctx.diagnostics += cal.diagnostics
        rows += [
            (f"omega_c_node{node.node_id}", coherent_gate_frequency(node.atom_count, node.coupling_g, delta), "rad/s"),
            (f"t_iswap_node{node.node_id}", cal.t_iswap, "s"),
            (f"inverse_omega_c_node{node.node_id}", cal.quoted_inverse, "s"),
        ]
    ctx.write("design_report.csv", ("quantity", "value", "unit"), rows, "per row")


RUNNERS = {
    "efficiency-surface": run_efficiency_surface,
    "memory-echo": run_memory_echo,
    "gate-scaling": run_gate_scaling,
    "transfer": run_transfer,
    "compile": run_compile,
    "design-report": run_design_report,
}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _write_warnings(out: Path, diagnostics: list) -> Path | None:
    if not diagnostics:
        return None
    out.mkdir(parents=True, exist_ok=True)
    path = out / "warnings.txt"
    lines = []
    for d in diagnostics:
        where = f" [node {d.node_id}]" if getattr(d, "node_id", None) is not None else ""
        lines.append(f"{d.code}{where}: {d.message}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def cmd_run(args) -> int:
    loaded = load_config(args.config)
    out = Path(args.out or loaded.config.output or "wireqc-out")
    ctx = Context(loaded, out, args.threads)
    RUNNERS[loaded.config.experiment](ctx)
    warn = _write_warnings(out, ctx.diagnostics)
    for f in ctx.files:
        print(f)
    if warn is not None:
        log.warning("%d diagnostic(s) written to %s", len(ctx.diagnostics), warn)
        if args.strict:
            return EXIT_RUNTIME
    return EXIT_OK


def cmd_validate(args) -> int:
    loaded = load_config(args.config)
    diags = validate_spec(loaded.spec, 0.0)
    for d in diags:
        print(f"{d.code}: {d.message}")
    if not diags:
        print("ok")
    return EXIT_RUNTIME if diags and args.strict else EXIT_OK


def _load_spec_only(path: Path):
    try:
        data = yaml.safe_load(Path(path).read_bytes())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if isinstance(data, dict) and "experiment" in data:
        return load_config(path).spec, hashlib.sha256(Path(path).read_bytes()).hexdigest()
    try:
        spec = SpecConfig.model_validate(data).build()
    except Exception as exc:  # pydantic and model validation errors alike
        raise ConfigError(f"{path}: {exc}") from exc
    return spec, hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_compile(args) -> int:
    spec, digest = _load_spec_only(args.spec)
    program = load_program(args.program)
    timeline = compile_program(program, spec)
    diags = validate_timeline(timeline, spec)
    meta = {
        "tool": f"wireqc {__version__}",
        "experiment": "compile",
        "config_sha256": digest,
        "units": "s, rad/s",
        "assumptions": "; ".join(timeline.metadata.get("assumptions", ())),
    }
    if args.out:
        out = Path(args.out)
        print(write_csv(out / "timeline.csv", TIMELINE_COLUMNS, timeline_rows(timeline), meta))
        _write_warnings(out, diags)
    else:
        sys.stdout.write(",".join(TIMELINE_COLUMNS) + "\n")
        for row in timeline_rows(timeline):
            sys.stdout.write(",".join(row) + "\n")
    for d in diags:
        log.warning("%s: %s", d.code, d.message)
    return EXIT_RUNTIME if diags and args.strict else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wireqc", description="Wire-circuit ensemble quantum computer simulator.")
    parser.add_argument("--version", action="version", version=f"wireqc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--strict", action="store_true", help="treat physics diagnostics as failures (exit 3)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")

    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("config")
    common(p_run)
    p_val = sub.add_parser("validate", help="parse a config and report physics diagnostics")
    p_val.add_argument("config")
    common(p_val)
    p_comp = sub.add_parser("compile", help="compile a program file into a control timeline")
    p_comp.add_argument("program")
    p_comp.add_argument("--spec", required=True, help="config or bare spec file")
    common(p_comp)
    return parser


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "compile": cmd_compile}


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except WireQCError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
