"""Command-line front end: parse, synth, verify, simulate, plot, export."""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frontend import ProgramError, dumps_cpds, load_input
from .poly import ExpressionError
from .sdp import SolverOptions, export_sdpa
from .sosbuild import DegreeError, ProgramStructureError, build, lower_to_sdp
from .synth import (CertificateFormatError, SynthOptions, format_report, load_certificate, run_hierarchy)
from .verify import (DEFAULT_CERT_TOL, DEFAULT_NUM_TOL, DEFAULT_PSD_TOL, CertificateBindingError,
                     check_certificate, emit_sublevel_grid, falsify, sample_initial, simulate)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INPUT = 2

logger = logging.getLogger("sosinv")


@dataclass
class RunConfig:
    command: str
    input: str | None = None
    certificate: str | None = None
    m_min: int | None = None
    m_max: int | None = None
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    psd_tol: float = DEFAULT_PSD_TOL
    cert_tol: float = DEFAULT_CERT_TOL
    num_tol: float = DEFAULT_NUM_TOL
    seed: int = 0
    trajectories: int = 100
    steps: int = 100
    grid: int = 400
    box: tuple = (-2.0, 2.0, -2.0, 2.0)
    out: str | None = None
    timestamp: bool = True
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        for name in ("gap_tol", "feas_tol", "psd_tol", "cert_tol", "num_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.m_min is not None and self.m_max is not None and self.m_min > self.m_max:
            raise ValueError(f"--degree-min {self.m_min} exceeds --degree-max {self.m_max}")
        if self.trajectories < 1 or self.steps < 0 or self.grid < 2:
            raise ValueError("--trajectories must be >= 1, --steps >= 0 and --grid >= 2")


# Keys accepted in a --config JSON file, mapped to RunConfig attributes.
_CONFIG_KEYS = {
    "degree_min": "m_min", "degree_max": "m_max", "gap_tol": "gap_tol", "feas_tol": "feas_tol",
    "psd_tol": "psd_tol", "cert_tol": "cert_tol", "num_tol": "num_tol", "seed": "seed",
    "trajectories": "trajectories", "steps": "steps", "grid": "grid", "box": "box", "out": "out",
    "no_timestamp": "timestamp",
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sosinv", description="Polynomial invariant synthesis for guarded loops.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with default option values (flags override)")
        p.add_argument("--out", help="output file, directory or prefix")
        p.add_argument("--no-timestamp", action="store_true", default=None,
                       help="omit the timestamp line and timings from written files")

    p = sub.add_parser("parse", help="write the canonical structured form of a program")
    p.add_argument("input")
    common(p)

    p = sub.add_parser("synth", help="run the hierarchy and write certificates and a report")
    p.add_argument("input")
    p.add_argument("--degree-min", type=int, help="first hierarchy step m (template degree 2m)")
    p.add_argument("--degree-max", type=int, help="last hierarchy step m")
    p.add_argument("--gap-tol", type=float)
    p.add_argument("--feas-tol", type=float)
    common(p)

    p = sub.add_parser("verify", help="check a certificate and search for counterexamples")
    p.add_argument("certificate")
    p.add_argument("input")
    p.add_argument("--cert-tol", type=float)
    p.add_argument("--psd-tol", type=float)
    p.add_argument("--num-tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--trajectories", type=int)
    p.add_argument("--steps", type=int)
    common(p)

    p = sub.add_parser("simulate", help="print sampled trajectories")
    p.add_argument("input")
    p.add_argument("--seed", type=int)
    p.add_argument("--trajectories", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--x0", type=float, nargs="+", help="start here instead of sampling")
    common(p)

    p = sub.add_parser("plot", help="sublevel grid files and an SVG picture")
    p.add_argument("certificate")
    p.add_argument("--input", dest="program", help="program to draw sampled trajectory dots from")
    p.add_argument("--box", type=float, nargs=4, metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    p.add_argument("--grid", type=int, help="grid resolution per axis")
    p.add_argument("--seed", type=int)
    p.add_argument("--trajectories", type=int)
    p.add_argument("--steps", type=int)
    common(p)

    p = sub.add_parser("export", help="write the SDP of one hierarchy step in SDPA sparse format")
    p.add_argument("input")
    p.add_argument("--degree", type=int, required=True, dest="degree_min", help="hierarchy step m")
    p.add_argument("--no-reduction", action="store_true", help="skip facial reduction")
    common(p)
    return ap


def _config(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(ns.command)
    if getattr(ns, "config", None):
        with open(ns.config, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
        for key, value in data.items():
            attr = _CONFIG_KEYS.get(key.replace("-", "_"))
            if attr is None:
                raise ValueError(f"unknown config key {key!r}")
            if attr == "timestamp":
                value = not value
            if attr == "box":
                value = tuple(float(v) for v in value)
            setattr(cfg, attr, value)
    flags = {
        "degree_min": "m_min", "degree_max": "m_max", "gap_tol": "gap_tol", "feas_tol": "feas_tol",
        "psd_tol": "psd_tol", "cert_tol": "cert_tol", "num_tol": "num_tol", "seed": "seed",
        "trajectories": "trajectories", "steps": "steps", "grid": "grid", "out": "out",
    }
    for flag, attr in flags.items():
        value = getattr(ns, flag, None)
        if value is not None:
            setattr(cfg, attr, value)
    if getattr(ns, "box", None):
        cfg.box = tuple(ns.box)
    if getattr(ns, "no_timestamp", None):
        cfg.timestamp = False
    cfg.input = getattr(ns, "input", None) or getattr(ns, "program", None)
    cfg.certificate = getattr(ns, "certificate", None)
    cfg.validate()
    return cfg


def _stamp(cfg: RunConfig) -> str:
    if not cfg.timestamp:
        return ""
    return "# generated " + _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds") + "\n"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_parse(cfg: RunConfig) -> int:
    c, prop = load_input(cfg.input)
    text = dumps_cpds(c, prop)
    if cfg.out:
        Path(cfg.out).write_text(text, encoding="utf-8")
        print(f"wrote {cfg.out} ({len(c.branches)} branches)")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(cfg: RunConfig) -> int:
    c, prop = load_input(cfg.input)
    opts = SynthOptions(solver=SolverOptions(gap_tol=cfg.gap_tol, feas_tol=cfg.feas_tol))
    report = run_hierarchy(c, prop, cfg.m_min, cfg.m_max, opts)
    out_dir = Path(cfg.out) if cfg.out else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(cfg.input).stem
    for step in report.steps:
        if step.certificate is not None:
            path = out_dir / f"{stem}.m{step.step}.cert.json"
            step.certificate.save(path)
    table = format_report(report, show_time=cfg.timestamp)
    (out_dir / f"{stem}.report.txt").write_text(_stamp(cfg) + table, encoding="utf-8")
    sys.stdout.write(format_report(report, show_time=True))
    for step in report.steps:
        if step.certificate is not None:
            cert = step.certificate
            verdict = "property certified" if cert.establishes_property else "property not established"
            print(f"step {step.step}: {verdict}; certificate {out_dir / f'{stem}.m{step.step}.cert.json'}")
    if not report.basis.certificates:
        for step in report.steps:
            print(f"step {step.step}: {step.outcome}: {step.message}", file=sys.stderr)
        print("error: no step produced a certificate", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    cert = load_certificate(cfg.certificate)
    c, prop = load_input(cfg.input)
    rep = check_certificate(cert, c, prop, cfg.cert_tol, cfg.psd_tol)
    print(rep.summary())
    if not rep.verified:
        return EXIT_FAIL
    fal = falsify(cert, c, prop, cfg.trajectories, cfg.steps, cfg.seed, cfg.num_tol)
    for w in fal.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if fal.refuted:
        cx = fal.counterexample
        print(f"COUNTEREXAMPLE: trajectory {cx.trajectory}, step {cx.step}, state {cx.state.tolist()}"
              f" (p - w = {cx.template_excess:.3e}, kappa - w = {cx.kappa_excess:.3e})")
        return EXIT_FAIL
    print(f"verified; no counterexample in {fal.states_checked} states")
    if prop.mode == "avoid":
        if cert.establishes_property:
            print("avoidance certified: bound is negative")
        else:
            print("avoidance not certified: bound is not negative")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, x0=None) -> int:
    c, prop = load_input(cfg.input)
    if x0 is not None:
        starts = np.array([x0], dtype=float)
    else:
        starts = sample_initial(c, cfg.trajectories, np.random.default_rng(cfg.seed))
    lines = [_stamp(cfg).rstrip("\n")] if cfg.timestamp else []
    lines.append("# trajectory step branch " + " ".join(c.variables or [f"x{i + 1}" for i in range(c.dim)])
                 + " kappa")
    for t, s in enumerate(starts):
        traj = simulate(c, s, cfg.steps)
        for w in traj.warnings:
            print(f"warning: trajectory {t}: {w}", file=sys.stderr)
        for k, x in enumerate(traj.points):
            br = str(traj.branch_trace[k] + 1) if k < len(traj.branch_trace) else "-"
            vals = " ".join("%.17g" % v for v in x)
            lines.append(f"{t} {k} {br} {vals} {prop.kappa.evaluate(x):.17g}")
    text = "\n".join(lines) + "\n"
    if cfg.out:
        Path(cfg.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_plot(cfg: RunConfig) -> int:
    cert = load_certificate(cfg.certificate)
    dots = None
    if cfg.input:
        c, prop = load_input(cfg.input)
        fal = falsify(cert, c, prop, cfg.trajectories, cfg.steps, cfg.seed, cfg.num_tol)
        dots = fal.samples
    prefix = cfg.out or Path(cfg.certificate).name.removesuffix(".json").removesuffix(".cert")
    grid = emit_sublevel_grid(cert, cfg.box, cfg.grid, prefix, dots)
    print(f"wrote {prefix}.grid, {prefix}.kappa.grid, {prefix}.svg "
          f"({int(grid.inside.sum())} of {grid.resolution ** 2} grid points inside)")
    return EXIT_OK


def cmd_export(cfg: RunConfig, reduce: bool = True) -> int:
    c, prop = load_input(cfg.input)
    sp = build(c, prop, cfg.m_min)
    low = lower_to_sdp(sp, facial_reduction=reduce)
    if low.inconsistent:
        print("error: the coefficient-matching equations are inconsistent; nothing to export", file=sys.stderr)
        return EXIT_FAIL
    text = export_sdpa(low)
    if cfg.out:
        Path(cfg.out).write_text(text, encoding="utf-8")
        print(f"wrote {cfg.out}: {low.num_rows} constraints, blocks {list(low.block_sizes)}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    ap = _parser()
    ns = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(ns)
        if ns.command == "parse":
            return cmd_parse(cfg)
        if ns.command == "synth":
            return cmd_synth(cfg)
        if ns.command == "verify":
            return cmd_verify(cfg)
        if ns.command == "simulate":
            return cmd_simulate(cfg, ns.x0)
        if ns.command == "plot":
            return cmd_plot(cfg)
        if ns.command == "export":
            return cmd_export(cfg, not ns.no_reduction)
    except ProgramError as exc:
        print(f"error: {cfg.input if 'cfg' in locals() else ''}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ExpressionError, CertificateFormatError, CertificateBindingError, DegreeError,
            ProgramStructureError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    ap.error(f"unknown command {ns.command}")
    return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
