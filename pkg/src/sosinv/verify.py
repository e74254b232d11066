"""Independent certificate checking, trajectory simulation, falsification and plots.

The checker rebuilds every identity from the certificate's multipliers using
only polynomial arithmetic and a symmetric eigenvalue routine; it never looks
at the SOS program or solver state that produced the certificate.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frontend import Cpds, SublevelProperty, cpds_hash
from .poly import Polynomial

DEFAULT_CERT_TOL = 1e-6
DEFAULT_PSD_TOL = 1e-9
DEFAULT_NUM_TOL = 1e-7


class CertificateBindingError(ValueError):
    """The certificate was produced for a different program or property."""


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """States ``x_0 .. x_k`` of one run.

    ``exit_step`` is the index of the first state outside the loop guard (the
    run stops there).  ``frozen_step`` is the index of a state inside the loop
    guard that no branch accepts; the state would stay put forever, so the run
    stops there too.  ``branch_trace[k]`` is the branch used from ``x_k``.
    """

    points: np.ndarray
    exit_step: int | None
    branch_trace: list
    warnings: list = field(default_factory=list)
    frozen_step: int | None = None

    def __len__(self) -> int:
        return len(self.points)


def simulate(c: Cpds, x0, steps: int) -> Trajectory:
    """Run at most ``steps`` loop iterations from ``x0``.

    Guards are evaluated exactly as written (strict tests with ``<``, weak with
    ``<=``).  When several branches accept a state the lowest index wins and a
    warning is recorded.
    """
    x = np.asarray(x0, dtype=float).reshape(c.dim)
    warnings = []
    if not c.init.contains(x):
        warnings.append("initial state is outside the initial set")
    points = [x]
    trace: list = []
    exit_step = None
    frozen = None
    for k in range(steps):
        if not c.loop_guard.contains(x):
            exit_step = k
            break
        hits = c.branch_index(x)
        if not hits:
            warnings.append(f"step {k}: no branch accepts the state (guards do not cover the loop guard)")
            frozen = k
            break
        if len(hits) > 1:
            warnings.append(f"step {k}: branches {[h + 1 for h in hits]} overlap; using branch {hits[0] + 1}")
        i = hits[0]
        x = np.asarray(c.branches[i].apply(x), dtype=float)
        trace.append(i)
        points.append(x)
    else:
        if not c.loop_guard.contains(x):
            exit_step = steps
    return Trajectory(np.array(points), exit_step, trace, warnings, frozen)


def simulate_batch(c: Cpds, x0s, steps: int) -> tuple:
    """Vectorised runs.  Returns ``(visited, warnings)`` where ``visited`` has
    shape ``(steps + 1, n, d)`` with NaN rows once a run has stopped."""
    x = np.array(x0s, dtype=float).reshape(-1, c.dim)
    n = x.shape[0]
    visited = np.full((steps + 1, n, c.dim), np.nan)
    visited[0] = x
    active = np.ones(n, dtype=bool)
    warnings = []
    for k in range(steps):
        if not active.any():
            break
        inside = np.zeros(n, dtype=bool)
        inside[active] = np.atleast_1d(c.loop_guard.contains(x[active]))
        active &= inside
        if not active.any():
            break
        chosen = np.full(n, -1)
        count = np.zeros(n, dtype=int)
        for i, br in enumerate(c.branches):
            hit = np.zeros(n, dtype=bool)
            hit[active] = np.atleast_1d(br.guard.contains(x[active]))
            count += hit
            chosen = np.where(hit & (chosen < 0), i, chosen)
        if np.any(count[active] > 1):
            warnings.append(f"step {k}: {int(np.sum(count[active] > 1))} states accepted by several branches")
        lost = active & (chosen < 0)
        if lost.any():
            warnings.append(f"step {k}: {int(lost.sum())} states accepted by no branch")
            active &= ~lost
        nxt = x.copy()
        for i, br in enumerate(c.branches):
            sel = active & (chosen == i)
            if sel.any():
                nxt[sel] = br.apply(x[sel])
        x = nxt
        visited[k + 1, active] = x[active]
    return visited, warnings


def sample_initial(c: Cpds, n: int, rng: np.random.Generator, box=None, max_tries: int = 200) -> np.ndarray:
    """Uniform samples from the initial set (rejection sampling inside a box)."""
    region = box if box is not None else c.init_box
    if region is None:
        region = [(-10.0, 10.0)] * c.dim
    lo = np.array([a for a, _ in region], dtype=float)
    hi = np.array([b for _, b in region], dtype=float)
    out = []
    have = 0
    for _ in range(max_tries):
        cand = lo + (hi - lo) * rng.random((max(n, 64), c.dim))
        keep = cand[np.atleast_1d(c.init.contains(cand))]
        out.append(keep)
        have += len(keep)
        if have >= n:
            break
    pts = np.concatenate(out)[:n] if out else np.zeros((0, c.dim))
    if len(pts) < n:
        raise ValueError("could not sample the initial set; give a bounding box")
    return pts


# ---------------------------------------------------------------------------
# Certificate checking
# ---------------------------------------------------------------------------

_NAME_RE = re.compile(r"^(sigma0|psi|sigma_in\[(\d+)\]|sigma_branch\[(\d+)\]|mu\[(\d+)\]\[(\d+)\]|gamma\[(\d+)\]\[(\d+)\])$")


@dataclass
class IdentityCheck:
    name: str
    residual: float
    tolerance: float
    scale: float
    worst_monomial: tuple | None

    @property
    def ok(self) -> bool:
        return self.residual <= self.tolerance


@dataclass
class CheckReport:
    verified: bool
    identities: list
    min_eigenvalues: dict
    problems: list

    @property
    def max_residual(self) -> float:
        return max((i.residual for i in self.identities), default=0.0)

    @property
    def failing_identities(self) -> list:
        return [i.name for i in self.identities if not i.ok]

    def summary(self) -> str:
        lines = ["verified" if self.verified else "REJECTED"]
        for ic in self.identities:
            flag = "ok" if ic.ok else "FAIL"
            lines.append(f"  identity {ic.name:<12} residual {ic.residual:.3e} (tol {ic.tolerance:.3e}) {flag}")
        worst = min(self.min_eigenvalues.items(), key=lambda kv: kv[1], default=None)
        if worst is not None:
            lines.append(f"  smallest Gram eigenvalue {worst[1]:.3e} ({worst[0]})")
        lines += [f"  problem: {p}" for p in self.problems]
        return "\n".join(lines)


def _constraint_for(name: str, c: Cpds):
    """``(identity name, constraint polynomial or None)`` for a multiplier name."""
    mt = _NAME_RE.match(name)
    if mt is None:
        raise ValueError(f"unknown multiplier name {name!r}")
    if name == "sigma0":
        return "init", None
    if name == "psi":
        return "property", None
    if mt.group(2):
        return "init", c.init.polynomials[int(mt.group(2)) - 1]
    if mt.group(3):
        return f"branch[{int(mt.group(3))}]", None
    if mt.group(4):
        i, j = int(mt.group(4)), int(mt.group(5))
        return f"branch[{i}]", c.branches[i - 1].guard.polynomials[j - 1]
    i, j = int(mt.group(6)), int(mt.group(7))
    return f"branch[{i}]", c.loop_guard.polynomials[j - 1]


def _gram_polynomial(basis, G: np.ndarray, dim: int) -> Polynomial:
    terms: dict = {}
    for a, za in enumerate(basis):
        for b, zb in enumerate(basis):
            v = float(G[a, b])
            if v != 0.0:
                mono = tuple(x + y for x, y in zip(za, zb))
                terms[mono] = terms.get(mono, 0.0) + v
    return Polynomial(dim, terms)


def identity_budget(name: str, m: int, c: Cpds) -> int:
    if name.startswith("branch["):
        i = int(name[7:-1]) - 1
        return 2 * m * max(c.branches[i].update_degree(), 1)
    return 2 * m


def check_certificate(cert, c: Cpds, prop: SublevelProperty, cert_tol: float = DEFAULT_CERT_TOL,
                      psd_tol: float = DEFAULT_PSD_TOL) -> CheckReport:
    """Re-derive every identity from the certificate and test it coefficient-wise.

    Identities (all constraint polynomials read as ``r <= 0``)::

        init:       w - p + sum_j sigma_in[j] r_j          - sigma0          == 0
        branch[i]:  p - p(T_i) + sum_j mu[i][j] g_ij
                               + sum_j gamma[i][j] l_j     - sigma_branch[i] == 0
        property:   p - kappa                              - psi             == 0

    The tolerance for an identity is ``cert_tol`` times the largest
    coefficient magnitude among its summands (at least one).
    """
    if cert.input_hash != cpds_hash(c, prop):
        raise CertificateBindingError("certificate was produced for a different program or property")
    if cert.dim != c.dim:
        raise CertificateBindingError("certificate dimension does not match the program")
    d = c.dim
    m = cert.step
    p = cert.template
    problems = []
    if p.degree() > 2 * m:
        problems.append(f"template degree {p.degree()} exceeds {2 * m}")
    if not math.isfinite(cert.bound):
        problems.append("bound is not finite")

    w = Polynomial.constant(d, cert.bound)
    parts: dict = {"init": [w, -p], "property": [p, -prop.kappa]}
    for i, br in enumerate(c.branches):
        parts[f"branch[{i + 1}]"] = [p, -p.compose(br.update)]

    eigs = {}
    for name, mul in cert.multipliers.items():
        try:
            ident, r = _constraint_for(name, c)
        except (ValueError, IndexError):
            problems.append(f"multiplier {name!r} does not correspond to any constraint")
            continue
        G = np.asarray(mul.gram, dtype=float)
        if G.shape != (len(mul.basis), len(mul.basis)):
            problems.append(f"{name}: Gram shape {G.shape} does not match its basis")
            continue
        if not np.allclose(G, G.T, rtol=0, atol=0):
            problems.append(f"{name}: Gram matrix is not symmetric")
        eigs[name] = float(np.linalg.eigvalsh(0.5 * (G + G.T))[0]) if len(G) else 0.0
        if eigs[name] < -psd_tol:
            problems.append(f"{name}: Gram matrix has eigenvalue {eigs[name]:.3e} < -{psd_tol:g}")
        s = _gram_polynomial(mul.basis, G, d)
        term = -s if r is None else s * r
        budget = identity_budget(ident, m, c)
        if term.degree() > budget:
            problems.append(f"{name}: degree {term.degree()} exceeds the budget {budget} of {ident}")
        parts[ident].append(term)

    checks = []
    for ident, summands in parts.items():
        total = Polynomial.zero(d)
        for s in summands:
            total = total + s
        scale = max([1.0] + [s.max_abs_coefficient() for s in summands])
        worst = None
        residual = 0.0
        for mono, coef in total.items():
            if abs(coef) > residual:
                residual, worst = abs(coef), mono
        checks.append(IdentityCheck(ident, residual, cert_tol * scale, scale, worst))
    verified = not problems and all(ic.ok for ic in checks)
    return CheckReport(verified, checks, eigs, problems)


# ---------------------------------------------------------------------------
# Falsification
# ---------------------------------------------------------------------------


@dataclass
class Counterexample:
    trajectory: int
    step: int
    state: np.ndarray
    template_excess: float
    kappa_excess: float


@dataclass
class FalsifyResult:
    counterexample: Counterexample | None
    states_checked: int
    samples: np.ndarray
    warnings: list
    kappa_negative: bool

    @property
    def refuted(self) -> bool:
        return self.counterexample is not None


def falsify(cert, c: Cpds, prop: SublevelProperty, n_traj: int = 100, steps: int = 100, seed: int = 0,
            num_tol: float = DEFAULT_NUM_TOL, box=None) -> FalsifyResult:
    """Sample initial states, run the loop and look for a visited state with
    ``p(x) > w + num_tol`` or ``kappa(x) > w + num_tol``.

    Trajectories are ordered by the seed-derived sample order, so the first
    counterexample reported is reproducible.
    """
    rng = np.random.default_rng(seed)
    x0 = sample_initial(c, n_traj, rng, box)
    visited, warnings = simulate_batch(c, x0, steps)
    flat = visited.reshape(-1, c.dim)
    ok = ~np.isnan(flat).any(axis=1)
    pts = flat[ok]
    pv = np.asarray(cert.template.evaluate(pts)) - cert.bound
    kv = np.asarray(prop.kappa.evaluate(pts)) - cert.bound
    bad = np.flatnonzero((pv > num_tol) | (kv > num_tol) | ~np.isfinite(pv) | ~np.isfinite(kv))
    cex = None
    if bad.size:
        idx = np.flatnonzero(ok)[bad]
        # first by trajectory, then by step
        steps_of, traj_of = np.divmod(idx, n_traj)
        order = np.lexsort((steps_of, traj_of))[0]
        j = bad[order]
        cex = Counterexample(int(traj_of[order]), int(steps_of[order]), pts[j], float(pv[j]), float(kv[j]))
    kappa_negative = bool(np.all(np.asarray(prop.kappa.evaluate(pts)) < 0)) if len(pts) else True
    return FalsifyResult(cex, int(len(pts)), visited, warnings, kappa_negative)


# ---------------------------------------------------------------------------
# Grids and pictures
# ---------------------------------------------------------------------------


@dataclass
class SublevelGrid:
    box: tuple  # (xmin, xmax, ymin, ymax)
    resolution: int
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray  # p(x) - w, indexed [row = y index, column = x index]
    kappa: np.ndarray

    @property
    def inside(self) -> np.ndarray:
        return self.values <= 0

    def header(self) -> str:
        xmin, xmax, ymin, ymax = self.box
        return f"# {xmin:.17g} {xmax:.17g} {ymin:.17g} {ymax:.17g} {self.resolution}"


def sublevel_grid(cert, box, resolution: int, kappa: Polynomial | None = None) -> SublevelGrid:
    """Sample ``p - w`` on a ``resolution x resolution`` grid of points
    (endpoints included); rows run from ``ymin`` up to ``ymax``."""
    if cert.dim != 2:
        raise ValueError(f"grids are two-dimensional only (certificate has dimension {cert.dim})")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    xmin, xmax, ymin, ymax = (float(v) for v in box)
    if not (xmin < xmax and ymin < ymax):
        raise ValueError("empty plot box")
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymin, ymax, resolution)
    X, Y = np.meshgrid(xs, ys)
    pts = np.stack([X, Y], axis=-1)
    vals = np.asarray(cert.template.evaluate(pts)) - cert.bound
    kap = np.asarray((kappa or cert.kappa).evaluate(pts))
    return SublevelGrid((xmin, xmax, ymin, ymax), resolution, xs, ys, vals, kap)


def _write_matrix(path: Path, header: str, M: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in M:
            fh.write(" ".join("%.17g" % v for v in row) + "\n")


def read_grid(path) -> tuple:
    """Inverse of the grid writer: ``(box, resolution, values)``."""
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        if not head or head[0] != "#" or len(head) != 6:
            raise ValueError("grid file must start with '# xmin xmax ymin ymax resolution'")
        box = tuple(float(v) for v in head[1:5])
        res = int(head[5])
        M = np.loadtxt(fh, ndmin=2)
    if M.shape != (res, res):
        raise ValueError(f"grid has shape {M.shape}, expected {(res, res)}")
    return box, res, M


def svg_picture(grid: SublevelGrid, dots=None, size: int = 480) -> str:
    """Static SVG: sublevel cells shaded, the ``kappa > 0`` region hatched in
    red, optional trajectory dots in black."""
    xmin, xmax, ymin, ymax = grid.box
    n = grid.resolution
    sx = size / (xmax - xmin)
    sy = size / (ymax - ymin)
    cw = size / n
    ch = size / n

    def px(x):
        return (x - xmin) * sx

    def py(y):
        return size - (y - ymin) * sy

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect x="0" y="0" width="{size}" height="{size}" fill="white" stroke="black"/>']
    for r in range(n):
        y_top = size - (r + 1) * ch
        c0 = None
        for col in range(n + 1):
            on = col < n and grid.values[r, col] <= 0
            if on and c0 is None:
                c0 = col
            if not on and c0 is not None:
                out.append(f'<rect x="{c0 * cw:.3f}" y="{y_top:.3f}" width="{(col - c0) * cw:.3f}" '
                           f'height="{ch:.3f}" fill="#9ecae1" stroke="none"/>')
                c0 = None
    for r in range(n):
        for col in range(n):
            if grid.kappa[r, col] > 0:
                out.append(f'<rect x="{col * cw:.3f}" y="{size - (r + 1) * ch:.3f}" width="{cw:.3f}" '
                           f'height="{ch:.3f}" fill="#e34a33" fill-opacity="0.25" stroke="none"/>')
    if dots is not None:
        for x, y in np.asarray(dots).reshape(-1, 2):
            if np.isfinite(x) and np.isfinite(y) and xmin <= x <= xmax and ymin <= y <= ymax:
                out.append(f'<circle cx="{px(x):.3f}" cy="{py(y):.3f}" r="1.5" fill="black"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_sublevel_grid(cert, box, resolution: int, out_prefix, dots=None,
                       kappa: Polynomial | None = None) -> SublevelGrid:
    """Write ``<prefix>.grid`` (values of ``p - w``), ``<prefix>.kappa.grid``
    (values of kappa) and ``<prefix>.svg``."""
    grid = sublevel_grid(cert, box, resolution, kappa)
    prefix = Path(out_prefix)
    _write_matrix(prefix.with_name(prefix.name + ".grid"), grid.header(), grid.values)
    _write_matrix(prefix.with_name(prefix.name + ".kappa.grid"), grid.header(), grid.kappa)
    prefix.with_name(prefix.name + ".svg").write_text(svg_picture(grid, dots), encoding="utf-8")
    return grid
