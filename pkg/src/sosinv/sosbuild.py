"""Assemble the SOS program for one hierarchy step and lower it to a standard-form SDP.

At step ``m`` the unknowns are a template polynomial ``p`` of degree ``<= 2m``,
a scalar bound ``w`` and a family of SOS multipliers, linked by three kinds of
polynomial identities:

* initial condition:   ``w - p + sum_j s_j r_j^in = s_0``
* branch ``i``:        ``p - p o T^i + sum_j u_j^i r_j^i + sum_j g_j^i r_j^0 = s^i``
* property:            ``p - kappa = s_psi``

Every SOS multiplier is a Gram form ``z(x)' G z(x)`` with ``G`` PSD.  Matching
coefficients monomial by monomial turns each identity into linear equations
over the Gram entries, the template coefficients and ``w``; the objective is
to minimise ``w``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.optimize import linprog

from .frontend import Cpds, SublevelProperty
from .poly import PowerTable, Polynomial, basis_size, monomial_basis
from .sdp import SdpProblem

W_VAR = 0  # free-variable index of the bound; template coefficients follow


class DegreeError(ValueError):
    """The step is too small for the property or guard degrees."""


class ProgramStructureError(ValueError):
    pass


@dataclass(frozen=True)
class GramBlock:
    """One SOS multiplier: ``z' G z`` (times ``multiplies`` when it weights a constraint)."""

    name: str
    role: str
    identity: int
    basis: tuple
    multiplies: Polynomial | None
    matrix_index: int
    budget: int

    @property
    def size(self) -> int:
        return len(self.basis)

    def polynomial(self, gram: np.ndarray) -> Polynomial:
        """The polynomial ``z' G z`` (without the constraint factor)."""
        dim = len(self.basis[0])
        terms: dict = {}
        n = len(self.basis)
        for a in range(n):
            for b in range(n):
                v = gram[a, b]
                if v == 0.0:
                    continue
                mono = tuple(x + y for x, y in zip(self.basis[a], self.basis[b]))
                terms[mono] = terms.get(mono, 0.0) + v
        return Polynomial(dim, terms)


@dataclass(frozen=True)
class Identity:
    name: str
    kind: str  # "init", "branch", "property"
    branch: int | None = None


@dataclass
class EqualityRow:
    """``sum gram + sum free == rhs`` for one monomial of one identity."""

    identity: int
    monomial: tuple
    gram: dict
    free: dict
    rhs: float


@dataclass
class SosProgram:
    step: int
    dim: int
    template_basis: tuple
    identities: list
    blocks: list
    equalities: list
    objective: dict = field(default_factory=lambda: {W_VAR: 1.0})
    kappa: Polynomial | None = None

    @property
    def template_coeff_count(self) -> int:
        return len(self.template_basis)

    @property
    def free_count(self) -> int:
        return 1 + len(self.template_basis)

    def free_name(self, k: int) -> str:
        if k == W_VAR:
            return "w"
        return "p[" + ",".join(map(str, self.template_basis[k - 1])) + "]"

    def template(self, coeffs) -> Polynomial:
        return Polynomial(self.dim, dict(zip(self.template_basis, (float(c) for c in coeffs))))

    def row_residuals(self, free_values: np.ndarray, grams: list) -> np.ndarray:
        """Residual of every equality row at a given assignment."""
        out = np.empty(len(self.equalities))
        for k, row in enumerate(self.equalities):
            total = sum(c * free_values[v] for v, c in row.free.items())
            for (blk, a, b), c in row.gram.items():
                G = grams[blk]
                total += c * (G[a, a] if a == b else 2.0 * G[a, b])
            out[k] = total - row.rhs
        return out

    def identity_polynomials(self, w: float, p: Polynomial, grams: list, cpds: Cpds) -> list:
        """Rebuild every identity symbolically as ``lhs - rhs`` (zero when satisfied)."""
        out = []
        for idx, ident in enumerate(self.identities):
            if ident.kind == "init":
                expr = Polynomial.constant(self.dim, w) - p
            elif ident.kind == "branch":
                expr = p - p.compose(cpds.branches[ident.branch].update)
            else:
                expr = p - self.kappa
            for blk in self.blocks:
                if blk.identity != idx:
                    continue
                poly = blk.polynomial(grams[blk.matrix_index])
                if blk.multiplies is None:
                    expr = expr - poly
                else:
                    expr = expr + poly * blk.multiplies
            out.append(expr)
        return out


def branch_budget(m: int, update_degree: int) -> int:
    """Degree budget of a branch identity; constant updates count as degree one."""
    return 2 * m * max(update_degree, 1)


def _guard_degrees(c: Cpds) -> list:
    polys = list(c.init.polynomials) + list(c.loop_guard.polynomials)
    for br in c.branches:
        polys += list(br.guard.polynomials)
    return [q.degree() for q in polys]


def check_step(c: Cpds, prop: SublevelProperty, m: int) -> None:
    if m < 1:
        raise DegreeError(f"hierarchy step must be >= 1 (got {m})")
    if not c.branches:
        raise ProgramStructureError("the program has no branches")
    if prop.kappa.degree() > 2 * m:
        raise DegreeError(f"step m={m} is too small for a property of degree {prop.kappa.degree()}")
    worst = max(_guard_degrees(c), default=0)
    if worst > 2 * m:
        raise DegreeError(f"step m={m} is too small for a guard of degree {worst}")


def minimal_step(c: Cpds, prop: SublevelProperty) -> int:
    top = max([prop.kappa.degree()] + _guard_degrees(c))
    return max(1, math.ceil(top / 2))


def _trivially_true(r: Polynomial) -> bool:
    """A constant test ``c <= 0`` with ``c < 0``: its SOS multiplier would only
    duplicate the slack block of the same identity, so it is omitted."""
    return r.is_constant() and r.constant_term() < 0


@dataclass(frozen=True)
class BlockPlan:
    name: str
    role: str
    identity: int
    half_degree: int
    multiplies: Polynomial | None
    budget: int


def plan_blocks(c: Cpds, prop: SublevelProperty, m: int) -> tuple:
    """Identities and Gram-block shapes at step ``m`` (no coefficients built)."""
    check_step(c, prop, m)
    identities = [Identity("init", "init")]
    plans = [BlockPlan("sigma0", "sigma0", 0, m, None, 2 * m)]
    for j, r in enumerate(c.init.polynomials):
        if _trivially_true(r):
            continue
        plans.append(BlockPlan(f"sigma_in[{j + 1}]", "sigma_in", 0, (2 * m - r.degree()) // 2, r, 2 * m))
    for i, br in enumerate(c.branches):
        idx = len(identities)
        identities.append(Identity(f"branch[{i + 1}]", "branch", i))
        budget = branch_budget(m, br.update_degree())
        plans.append(BlockPlan(f"sigma_branch[{i + 1}]", "sigma_branch", idx, budget // 2, None, budget))
        for j, r in enumerate(br.guard.polynomials):
            if not _trivially_true(r):
                plans.append(BlockPlan(f"mu[{i + 1}][{j + 1}]", "mu", idx, (budget - r.degree()) // 2, r, budget))
        for j, r in enumerate(c.loop_guard.polynomials):
            if not _trivially_true(r):
                plans.append(BlockPlan(f"gamma[{i + 1}][{j + 1}]", "gamma", idx, (budget - r.degree()) // 2, r, budget))
    idx = len(identities)
    identities.append(Identity("property", "property"))
    plans.append(BlockPlan("psi", "psi", idx, m, None, 2 * m))
    return identities, plans


@dataclass(frozen=True)
class SizeReport:
    """Closed-form size bookkeeping for one step (no program is built)."""

    step: int
    template_coeffs: int
    block_sizes: tuple
    gram_variables: int
    rows: int

    @property
    def matrix_side(self) -> int:
        return sum(self.block_sizes)

    @property
    def total_variables(self) -> int:
        return self.gram_variables + self.template_coeffs + 1


def size_report(c: Cpds, prop: SublevelProperty, m: int) -> SizeReport:
    """Sizes from binomial counts only: block side C(d+k, d), rows C(d+budget, d) per identity."""
    identities, plans = plan_blocks(c, prop, m)
    d = c.dim
    sizes = tuple(basis_size(d, pl.half_degree) for pl in plans)
    budgets = {}
    for pl in plans:
        budgets[pl.identity] = max(budgets.get(pl.identity, 0), pl.budget)
    rows = sum(basis_size(d, bgt) for bgt in budgets.values())
    return SizeReport(m, basis_size(d, 2 * m), sizes, sum(n * (n + 1) // 2 for n in sizes), rows)


def build(c: Cpds, prop: SublevelProperty, m: int) -> SosProgram:
    """Emit the coefficient-matching equalities for step ``m`` (deterministic)."""
    identities, plans = plan_blocks(c, prop, m)
    d = c.dim
    template_basis = tuple(monomial_basis(d, 2 * m))
    blocks = []
    for k, pl in enumerate(plans):
        basis = tuple(monomial_basis(d, pl.half_degree))
        for z in basis:
            if 2 * sum(z) + (pl.multiplies.degree() if pl.multiplies is not None else 0) > pl.budget:
                raise AssertionError(f"basis monomial {z} exceeds the budget of {pl.name}")
        blocks.append(GramBlock(pl.name, pl.role, pl.identity, basis, pl.multiplies, k, pl.budget))

    rows: dict = {}  # (identity, monomial) -> EqualityRow

    def row(ident: int, mono: tuple) -> EqualityRow:
        key = (ident, mono)
        r = rows.get(key)
        if r is None:
            r = rows[key] = EqualityRow(ident, mono, {}, {}, 0.0)
        return r

    def add_free(ident, mono, var, coeff):
        if coeff != 0.0:
            r = row(ident, mono)
            r.free[var] = r.free.get(var, 0.0) + coeff

    # every monomial up to the identity's budget gets a row, even if it only reads 0 = 0
    for idx, ident in enumerate(identities):
        top = max(pl.budget for pl in plans if pl.identity == idx)
        for mono in monomial_basis(d, top):
            row(idx, mono)

    zero = (0,) * d
    prop_idx = len(identities) - 1
    add_free(0, zero, W_VAR, 1.0)
    for k, beta in enumerate(template_basis):
        var = k + 1
        add_free(0, beta, var, -1.0)
        add_free(prop_idx, beta, var, 1.0)
    for mono, coeff in prop.kappa.terms.items():
        row(prop_idx, mono).rhs += coeff

    for idx, ident in enumerate(identities):
        if ident.kind != "branch":
            continue
        update = c.branches[ident.branch].update
        table = PowerTable(update, 2 * m)
        for k, beta in enumerate(template_basis):
            var = k + 1
            add_free(idx, beta, var, 1.0)
            for mono, coeff in table[beta].terms.items():
                add_free(idx, mono, var, -coeff)

    for blk in blocks:
        sign = -1.0 if blk.multiplies is None else 1.0
        factor = {zero: 1.0} if blk.multiplies is None else blk.multiplies.terms
        exps = np.array(blk.basis, dtype=np.int64).reshape(len(blk.basis), d)
        ia, ib = np.triu_indices(len(blk.basis))
        pair_sum = exps[ia] + exps[ib]
        for gmono, gcoeff in factor.items():
            shifted = pair_sum + np.array(gmono, dtype=np.int64)
            val = sign * gcoeff
            for a, b, mono in zip(ia.tolist(), ib.tolist(), map(tuple, shifted.tolist())):
                r = row(blk.identity, mono)
                key = (blk.matrix_index, a, b)
                r.gram[key] = r.gram.get(key, 0.0) + val

    ordered = sorted(rows.values(), key=lambda r: (r.identity, sum(r.monomial), tuple(-e for e in r.monomial)))
    for r in ordered:
        r.gram = {k: v for k, v in r.gram.items() if v != 0.0}
        r.free = {k: v for k, v in r.free.items() if v != 0.0}
    return SosProgram(m, d, template_basis, identities, blocks, ordered, {W_VAR: 1.0}, prop.kappa)


# ---------------------------------------------------------------------------
# Lowering: eliminate the free scalars, keep only PSD blocks
# ---------------------------------------------------------------------------


@dataclass
class Substitution:
    """``free[var] = (rhs - sum others - gram) / pivot`` recorded at elimination time."""

    var: int
    pivot: float
    free: dict
    gram: dict
    rhs: float


@dataclass
class LoweredSdp(SdpProblem):
    """An SDP over the Gram blocks only, plus what is needed to recover the free scalars."""

    substitutions: list = field(default_factory=list)
    free_count: int = 0
    unconstrained: dict = field(default_factory=dict)
    inconsistent: bool = False
    unbounded: bool = False
    dropped_rows: int = 0
    full_sizes: list = field(default_factory=list)
    block_map: list = field(default_factory=list)

    def expand(self, blocks: list) -> list:
        """Full-size Gram matrices (pruned rows and columns are zero)."""
        out = []
        for n, (idx, kept) in zip(self.full_sizes, self.block_map):
            G = np.zeros((n, n))
            if idx is not None:
                sel = np.array(kept)
                G[np.ix_(sel, sel)] = blocks[idx]
            out.append(G)
        return out

    def recover_free(self, blocks: list) -> np.ndarray:
        """Free scalars from full-size Gram matrices (see ``expand``)."""
        values = np.zeros(self.free_count)
        for var, val in self.unconstrained.items():
            values[var] = val
        for sub in reversed(self.substitutions):
            total = sub.rhs - sum(c * values[v] for v, c in sub.free.items())
            for (blk, a, b), c in sub.gram.items():
                G = blocks[blk]
                total -= c * (G[a, a] if a == b else 2.0 * G[a, b])
            values[sub.var] = total / sub.pivot
        return values


def lower_to_sdp(sp: SosProgram, zero_tol: float = 1e-12, facial_reduction: bool = True) -> LoweredSdp:
    """Eliminate ``w`` and the template coefficients by sparse Gaussian elimination.

    Each free scalar is pivoted on the sparsest live row that contains it with
    a well-sized coefficient; the resulting substitutions are replayed in
    reverse to recover the scalars after the SDP is solved.

    Gram basis elements that every feasible point must leave at zero are then
    removed (see ``_prune_forced_zeros`` and ``_reduce_faces``), so that the
    SDP handed to the interior-point solver has a strictly feasible point far
    more often.
    """
    live = [dict(gram=dict(r.gram), free=dict(r.free), rhs=float(r.rhs)) for r in sp.equalities]
    objective = dict(gram={}, free=dict(sp.objective), rhs=0.0)  # value = free + gram + const
    obj_const = 0.0
    holders: dict = {}
    for k, r in enumerate(live):
        for v in r["free"]:
            holders.setdefault(v, set()).add(k)
    removed: set = set()
    substitutions = []
    unconstrained = {}
    unbounded = False

    order = list(range(1, sp.free_count)) + [W_VAR]
    for var in order:
        cands = sorted(k for k in holders.get(var, ()) if k not in removed and var in live[k]["free"])
        if not cands:
            if abs(objective["free"].get(var, 0.0)) > zero_tol:
                unbounded = True
            unconstrained[var] = 0.0
            objective["free"].pop(var, None)
            continue
        big = max(abs(live[k]["free"][var]) for k in cands)
        cands = [k for k in cands if abs(live[k]["free"][var]) >= 0.1 * big]
        k0 = min(cands, key=lambda k: (len(live[k]["gram"]) + len(live[k]["free"]), k))
        prow = live[k0]
        removed.add(k0)
        pivot = prow["free"][var]
        others = {v: c for v, c in prow["free"].items() if v != var}
        substitutions.append(Substitution(var, pivot, others, dict(prow["gram"]), prow["rhs"]))
        targets = sorted(k for k in holders[var] if k not in removed and var in live[k]["free"])
        for k in targets:
            _eliminate(live[k], prow, var, pivot, zero_tol)
            for v in others:
                holders.setdefault(v, set()).add(k)
        if var in objective["free"]:
            f = objective["free"][var] / pivot
            # objective += f * (rhs - others - gram) - f*pivot*var   (var removed)
            obj_const += f * prow["rhs"]
            _eliminate(objective, prow, var, pivot, zero_tol, track_rhs=False)
        for k in list(holders[var]):
            if k not in removed and var in live[k]["free"]:
                raise AssertionError("elimination left a pivot variable behind")

    full_sizes = [blk.size for blk in sp.blocks]
    pending, pending_rhs = [], []
    inconsistent = False
    dropped = 0
    scale_ref = max([1.0] + [abs(r.rhs) for r in sp.equalities])
    for k, r in enumerate(live):
        if k in removed:
            continue
        if r["free"]:
            raise AssertionError("free variable survived elimination")
        pending.append({key: v for key, v in r["gram"].items() if abs(v) > zero_tol})
        pending_rhs.append(r["rhs"])

    keep = _prune_forced_zeros(full_sizes, pending, pending_rhs, zero_tol)
    if facial_reduction:
        keep = _reduce_faces(keep, pending, pending_rhs)
    block_map = []
    sizes = []
    for b, kept in enumerate(keep):
        if kept:
            block_map.append((len(sizes), tuple(kept)))
            sizes.append(len(kept))
        else:
            block_map.append((None, ()))
    local = [{old: new for new, old in enumerate(kept)} for kept in keep]

    def reindex(func: dict) -> dict:
        out = {}
        for (b, i, j), v in func.items():
            if i in local[b] and j in local[b]:
                out[(block_map[b][0], local[b][i], local[b][j])] = v
        return out

    rows, rhs = [], []
    for gram, value in zip(pending, pending_rhs):
        gram = reindex(gram)
        if not gram:
            dropped += 1
            if abs(value) > 1e-9 * scale_ref:
                inconsistent = True
            continue
        norm = max(abs(v) for v in gram.values())
        rows.append({key: v / norm for key, v in gram.items()})
        rhs.append(value / norm)
    objective_gram = reindex({key: v for key, v in objective["gram"].items() if abs(v) > zero_tol})
    return LoweredSdp(
        block_sizes=sizes,
        rows=rows,
        rhs=np.array(rhs, dtype=float),
        objective=objective_gram,
        offset=obj_const,
        substitutions=substitutions,
        free_count=sp.free_count,
        unconstrained=unconstrained,
        inconsistent=inconsistent,
        unbounded=unbounded,
        dropped_rows=dropped,
        full_sizes=full_sizes,
        block_map=block_map,
    )


def _prune_forced_zeros(sizes: list, rows: list, rhs: list, zero_tol: float) -> list:
    """Basis elements whose Gram diagonal is forced to zero, removed iteratively.

    A row that reads ``sum c_k G_kk = 0`` with all ``c_k`` of one sign forces
    each of those diagonals to vanish, and a PSD matrix with a zero diagonal
    entry has the whole row and column zero.  Dropping such basis elements
    restores a strictly feasible interior without changing the feasible set.
    """
    keep = [set(range(n)) for n in sizes]
    changed = True
    while changed:
        changed = False
        for gram, value in zip(rows, rhs):
            if abs(value) > zero_tol:
                continue
            live = [(key, v) for key, v in gram.items() if key[1] in keep[key[0]] and key[2] in keep[key[0]]]
            if not live or any(i != j for (_, i, j), _ in live):
                continue
            signs = {v > 0 for _, v in live}
            if len(signs) == 1:
                for (b, i, _), _ in live:
                    keep[b].discard(i)
                changed = True
    return [sorted(k) for k in keep]


def _reduce_faces(keep: list, rows: list, rhs: list, max_rounds: int = 200) -> list:
    """Partial facial reduction over the cone of nonnegative diagonal matrices.

    Looks for a combination ``y`` of the equality rows with ``b'y = 0`` whose
    matrix ``sum_k y_k A_k`` is diagonal and nonnegative.  Every feasible X
    then satisfies ``<sum y_k A_k, X> = 0``, so each diagonal entry with a
    positive weight vanishes, and with it the row and column of that basis
    element.  Each round is one LP; rounds repeat until no certificate exists.
    The certificate is re-checked in floating point before anything is pruned.
    """
    keep = [set(k) for k in keep]
    m = len(rows)
    rhs_arr = np.asarray(rhs, dtype=float)
    for _ in range(max_rounds):
        diag: dict = {}
        offd: dict = {}
        for k, row in enumerate(rows):
            for (b, i, j), v in row.items():
                if i in keep[b] and j in keep[b]:
                    (diag if i == j else offd).setdefault((b, i, j), []).append((k, v))
        if not diag:
            break
        dkeys = sorted(diag)
        okeys = sorted(offd)
        nz = len(dkeys)
        ri, ci, vals = [], [], []
        r = 0
        for key in okeys:
            for k, v in offd[key]:
                ri.append(r); ci.append(k); vals.append(v)
            r += 1
        for t, key in enumerate(dkeys):
            for k, v in diag[key]:
                ri.append(r); ci.append(k); vals.append(v)
            ri.append(r); ci.append(m + t); vals.append(-1.0)
            r += 1
        for k in range(m):
            if rhs_arr[k] != 0.0:
                ri.append(r); ci.append(k); vals.append(rhs_arr[k])
        r += 1
        A_eq = sps.csr_matrix((vals, (ri, ci)), shape=(r, m + nz))
        cost = np.concatenate([np.zeros(m), -np.ones(nz)])
        bounds = [(None, None)] * m + [(0.0, 1.0)] * nz
        res = linprog(cost, A_eq=A_eq, b_eq=np.zeros(r), bounds=bounds, method="highs")
        if res.status != 0 or res.x is None or -res.fun < 1e-6:
            break
        y = res.x[:m]
        # recompute the certificate exactly from y and make sure it really is one
        Z: dict = {}
        for k in np.flatnonzero(y):
            for (b, i, j), v in rows[k].items():
                if i in keep[b] and j in keep[b]:
                    Z[(b, i, j)] = Z.get((b, i, j), 0.0) + v * y[k]
        scale = max(1.0, float(np.abs(y).max()))
        off = max([abs(v) for (b, i, j), v in Z.items() if i != j] + [0.0])
        neg = min([v for (b, i, j), v in Z.items() if i == j] + [0.0])
        if off > 1e-10 * scale or neg < -1e-10 * scale or abs(float(rhs_arr @ y)) > 1e-10 * scale:
            break
        hit = [(b, i) for (b, i, j), v in Z.items() if i == j and v > 1e-7 * scale]
        if not hit:
            break
        for b, i in hit:
            keep[b].discard(i)
    return [sorted(k) for k in keep]


def _eliminate(target: dict, prow: dict, var: int, pivot: float, zero_tol: float,
               track_rhs: bool = True) -> None:
    """Subtract a multiple of the pivot row from ``target`` so that ``var`` vanishes."""
    f = target["free"].pop(var) / pivot
    for v, c in prow["free"].items():
        if v == var:
            continue
        nv = target["free"].get(v, 0.0) - f * c
        if abs(nv) <= zero_tol:
            target["free"].pop(v, None)
        else:
            target["free"][v] = nv
    tg = target["gram"]
    for key, c in prow["gram"].items():
        nv = tg.get(key, 0.0) - f * c
        if abs(nv) <= zero_tol:
            tg.pop(key, None)
        else:
            tg[key] = nv
    if track_rhs:
        target["rhs"] -= f * prow["rhs"]
