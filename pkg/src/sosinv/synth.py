"""Template synthesis across hierarchy steps, and the certificate file format."""

from __future__ import annotations

import json
import logging
import math
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .frontend import Cpds, SublevelProperty, cpds_hash
from .poly import Polynomial
from .sdp import DUAL_INFEASIBLE, INFEASIBLE, OPTIMAL, SolverOptions, solve
from .sosbuild import SizeReport, build, lower_to_sdp, minimal_step, size_report

logger = logging.getLogger(__name__)

CERT_FORMAT = "sosinv-certificate"
CERT_VERSION = 1

CERTIFICATE = "certificate"
INFEASIBLE_STEP = "infeasible"
INCONCLUSIVE = "inconclusive"


class CertificateFormatError(ValueError):
    pass


@dataclass
class Multiplier:
    """A named SOS multiplier ``z' G z`` and the constraint polynomial it weights (if any)."""

    name: str
    role: str
    identity: str
    basis: tuple
    gram: np.ndarray
    multiplies: Polynomial | None = None

    def polynomial(self) -> Polynomial:
        dim = len(self.basis[0])
        terms: dict = {}
        for a, za in enumerate(self.basis):
            for b, zb in enumerate(self.basis):
                v = float(self.gram[a, b])
                if v != 0.0:
                    mono = tuple(x + y for x, y in zip(za, zb))
                    terms[mono] = terms.get(mono, 0.0) + v
        return Polynomial(dim, terms)


@dataclass
class Certificate:
    step: int
    dim: int
    variables: tuple
    template: Polynomial
    bound: float
    multipliers: dict
    kappa: Polynomial
    property_mode: str
    input_hash: str
    solver_stats: dict = field(default_factory=dict)

    @property
    def establishes_property(self) -> bool:
        """Bounded mode: any finite bound; avoidance mode: the bound must be negative."""
        if not math.isfinite(self.bound):
            return False
        return self.property_mode != "avoid" or self.bound < 0

    def sublevel_value(self, points) -> np.ndarray:
        """``p(x) - w``; the invariant region is where this is <= 0."""
        return np.asarray(self.template.evaluate(points)) - self.bound

    # -- serialisation --------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": CERT_FORMAT,
            "version": CERT_VERSION,
            "input_hash": self.input_hash,
            "step": self.step,
            "dimension": self.dim,
            "variables": list(self.variables),
            "property": {"kappa": self.kappa.to_text(), "mode": self.property_mode},
            "bound": self.bound,
            "template": self.template.to_text(),
            "multipliers": [
                {
                    "name": mul.name,
                    "role": mul.role,
                    "identity": mul.identity,
                    "multiplies": None if mul.multiplies is None else mul.multiplies.to_text(),
                    "basis": [list(z) for z in mul.basis],
                    "gram_lower": _lower_triangle(mul.gram),
                }
                for mul in self.multipliers.values()
            ],
            "solver_stats": self.solver_stats,
        }

    def dumps(self) -> str:
        return dumps_certificate(self)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())


def _lower_triangle(G: np.ndarray) -> list:
    n = G.shape[0]
    return [float(G[i, j]) for i in range(n) for j in range(i + 1)]


def _from_lower(values: list, n: int) -> np.ndarray:
    if len(values) != n * (n + 1) // 2:
        raise CertificateFormatError(f"Gram data has {len(values)} entries, expected {n * (n + 1) // 2}")
    G = np.zeros((n, n))
    k = 0
    for i in range(n):
        for j in range(i + 1):
            G[i, j] = G[j, i] = float(values[k])
            k += 1
    return G


_FLOAT_SLOT = re.compile(r'"@f:([^"]*)"')


def dumps_certificate(cert: Certificate) -> str:
    """JSON text with every floating value written as ``%.17g`` (bit-exact round trip)."""

    def mark(obj):
        if isinstance(obj, float):
            if not math.isfinite(obj):
                return repr(obj)
            return "@f:" + ("%.17g" % obj)
        if isinstance(obj, dict):
            return {k: mark(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [mark(v) for v in obj]
        return obj

    text = json.dumps(mark(cert.to_dict()), indent=1, sort_keys=False)
    return _FLOAT_SLOT.sub(lambda mt: mt.group(1), text) + "\n"


def loads_certificate(text: str) -> Certificate:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CertificateFormatError(f"not a certificate file: {exc}") from None
    return certificate_from_dict(data)


def load_certificate(path) -> Certificate:
    with open(path, encoding="utf-8") as fh:
        return loads_certificate(fh.read())


def certificate_from_dict(data: dict) -> Certificate:
    if not isinstance(data, dict) or data.get("format") != CERT_FORMAT:
        raise CertificateFormatError("missing or wrong 'format' field")
    try:
        dim = int(data["dimension"])
        variables = tuple(data["variables"])
        parse = lambda text: Polynomial.parse(text, dim)  # noqa: E731
        multipliers = {}
        for entry in data["multipliers"]:
            basis = tuple(tuple(int(e) for e in z) for z in entry["basis"])
            if any(len(z) != dim for z in basis) or not basis:
                raise CertificateFormatError(f"multiplier {entry['name']}: bad basis")
            gram = _from_lower(entry["gram_lower"], len(basis))
            mult = None if entry.get("multiplies") is None else parse(entry["multiplies"])
            multipliers[entry["name"]] = Multiplier(entry["name"], entry["role"], entry["identity"],
                                                    basis, gram, mult)
        return Certificate(
            step=int(data["step"]),
            dim=dim,
            variables=variables,
            template=parse(data["template"]),
            bound=float(data["bound"]),
            multipliers=multipliers,
            kappa=parse(data["property"]["kappa"]),
            property_mode=data["property"]["mode"],
            input_hash=data["input_hash"],
            solver_stats=data.get("solver_stats", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CertificateFormatError):
            raise
        raise CertificateFormatError(f"malformed certificate: {exc}") from None


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------


@dataclass
class SynthOptions:
    solver: SolverOptions = field(default_factory=SolverOptions)
    # closed-form limits checked before anything is built
    max_block_side: int = 300
    max_gram_variables: int = 400_000
    facial_reduction: bool = True


@dataclass
class StepResult:
    step: int
    outcome: str
    certificate: Certificate | None
    message: str
    sizes: SizeReport | None = None
    built_variables: int | None = None
    built_matrix_side: int | None = None
    reduced_block_sizes: tuple = ()
    sdp_rows: int | None = None
    seconds: float = 0.0

    @property
    def bound(self) -> float | None:
        return None if self.certificate is None else self.certificate.bound

    @property
    def establishes_property(self) -> bool:
        return self.certificate is not None and self.certificate.establishes_property


@dataclass
class TemplateBasis:
    """Certificates from several steps over the same program and property."""

    certificates: list

    def __post_init__(self):
        if self.certificates:
            h = {c.input_hash for c in self.certificates}
            if len(h) != 1:
                raise ValueError("template basis mixes certificates of different inputs")

    @property
    def templates(self) -> list:
        return [c.template for c in self.certificates]

    def contains(self, points) -> np.ndarray:
        """Membership in the intersection of all certified sublevel sets."""
        pts = np.asarray(points, dtype=float)
        inside = np.ones(pts.shape[:-1], dtype=bool)
        for cert in self.certificates:
            inside &= cert.sublevel_value(pts) <= 0
        return inside


@dataclass
class HierarchyReport:
    steps: list
    basis: TemplateBasis

    @property
    def bounds(self) -> list:
        return [(s.step, s.bound) for s in self.steps if s.certificate is not None]


def synthesize_step(c: Cpds, prop: SublevelProperty, m: int,
                    options: SynthOptions | None = None) -> StepResult:
    """Build, lower and solve step ``m``; classify the outcome.

    Structural errors (degree inconsistency, no branches) propagate.  Solver
    failures and oversized steps are reported as inconclusive, never as
    infeasible; only a Farkas certificate (or an inconsistent equality
    system) yields ``infeasible``.
    """
    opts = options or SynthOptions()
    t0 = time.perf_counter()
    sizes = size_report(c, prop, m)
    if max(sizes.block_sizes) > opts.max_block_side or sizes.gram_variables > opts.max_gram_variables:
        return StepResult(m, INCONCLUSIVE, None,
                          f"step too large for the dense solver (largest Gram block {max(sizes.block_sizes)},"
                          f" {sizes.gram_variables} Gram variables)", sizes, seconds=time.perf_counter() - t0)
    sp = build(c, prop, m)
    built_vars = sum(b.size * (b.size + 1) // 2 for b in sp.blocks) + sp.free_count
    built_side = sum(b.size for b in sp.blocks)
    low = lower_to_sdp(sp, facial_reduction=opts.facial_reduction)
    common = dict(sizes=sizes, built_variables=built_vars, built_matrix_side=built_side,
                  reduced_block_sizes=tuple(low.block_sizes), sdp_rows=low.num_rows)
    if low.inconsistent:
        return StepResult(m, INFEASIBLE_STEP, None, "coefficient-matching equations are inconsistent",
                          seconds=time.perf_counter() - t0, **common)
    if low.unbounded:
        return StepResult(m, INCONCLUSIVE, None, "the bound does not appear in any equation (unbounded below)",
                          seconds=time.perf_counter() - t0, **common)
    sol = solve(low, opts.solver)
    stats = {
        "status": sol.status,
        "iterations": sol.iterations,
        "relative_gap": sol.gap,
        "primal_infeasibility": sol.primal_infeasibility,
        "dual_infeasibility": sol.dual_infeasibility,
        "sdp_rows": low.num_rows,
        "sdp_block_sizes": list(low.block_sizes),
    }
    if sol.status == INFEASIBLE and sol.certificate_kind != DUAL_INFEASIBLE:
        return StepResult(m, INFEASIBLE_STEP, None, f"SDP infeasible ({sol.message})",
                          seconds=time.perf_counter() - t0, **common)
    if sol.status != OPTIMAL:
        return StepResult(m, INCONCLUSIVE, None, f"solver {sol.status}: {sol.message}",
                          seconds=time.perf_counter() - t0, **common)
    grams = low.expand(sol.primal_blocks)
    free = low.recover_free(grams)
    template = sp.template(free[1:])
    multipliers = {}
    for blk in sp.blocks:
        ident = sp.identities[blk.identity].name
        multipliers[blk.name] = Multiplier(blk.name, blk.role, ident, blk.basis, _sym(grams[blk.matrix_index]),
                                           blk.multiplies)
    cert = Certificate(
        step=m,
        dim=c.dim,
        variables=tuple(c.variables) or tuple(f"x{i + 1}" for i in range(c.dim)),
        template=template,
        bound=float(free[0]),
        multipliers=multipliers,
        kappa=prop.kappa,
        property_mode=prop.mode,
        input_hash=cpds_hash(c, prop),
        solver_stats=stats,
    )
    msg = f"w = {cert.bound:.9g}"
    if prop.mode == "avoid" and not cert.establishes_property:
        msg += " (not negative: avoidance not established at this step)"
    return StepResult(m, CERTIFICATE, cert, msg, seconds=time.perf_counter() - t0, **common)


def _sym(G: np.ndarray) -> np.ndarray:
    return 0.5 * (G + G.T)


def default_range(c: Cpds, prop: SublevelProperty) -> tuple:
    lo = minimal_step(c, prop)
    return lo, max(lo, 5)


def worker_count() -> int:
    raw = os.environ.get("SOSINV_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_hierarchy(c: Cpds, prop: SublevelProperty, m_min: int | None = None, m_max: int | None = None,
                  options: SynthOptions | None = None) -> HierarchyReport:
    """Run every step in ``m_min..m_max``; failures are recorded, not raised."""
    lo, hi = default_range(c, prop)
    m_min = lo if m_min is None else m_min
    m_max = hi if m_max is None else m_max
    if m_min > m_max:
        raise ValueError(f"empty step range {m_min}..{m_max}")

    def one(m: int) -> StepResult:
        try:
            return synthesize_step(c, prop, m, options)
        except ValueError as exc:
            return StepResult(m, INCONCLUSIVE, None, f"not run: {exc}")

    steps = list(range(m_min, m_max + 1))
    workers = min(worker_count(), len(steps))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, steps))
    else:
        results = [one(m) for m in steps]
    for r in results:
        logger.info("step %d: %s (%s)", r.step, r.outcome, r.message)
    basis = TemplateBasis([r.certificate for r in results if r.certificate is not None])
    return HierarchyReport(results, basis)


def format_report(report: HierarchyReport, show_time: bool = True) -> str:
    """Per-step table: outcome, bound, variable count, matrix side and time."""
    lines = [f"{'2m':>4} {'outcome':<13} {'bound w':>16} {'Nb. vars':>10} {'Mat. size':>10} {'Time':>10}  note"]
    for s in report.steps:
        bound = f"{s.bound:.9g}" if s.bound is not None else "-"
        nvars = str(s.built_variables) if s.built_variables is not None else (
            str(s.sizes.total_variables) if s.sizes else "-")
        side = str(s.built_matrix_side) if s.built_matrix_side is not None else (
            str(s.sizes.matrix_side) if s.sizes else "-")
        tm = f"{s.seconds:.2f}s" if show_time else "-"
        lines.append(f"{2 * s.step:>4} {s.outcome:<13} {bound:>16} {nvars:>10} {side:>10} {tm:>10}  {s.message}")
    return "\n".join(lines) + "\n"
