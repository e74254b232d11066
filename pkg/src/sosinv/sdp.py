"""Dense primal-dual interior-point solver for standard-form SDPs, plus SDPA I/O.

Problem form (minimisation)::

    minimise   <C, X> + offset
    subject to <A_k, X> = b_k,   k = 1..m
               X = diag(X_1, ..., X_B),  X_j PSD (or elementwise >= 0 for
               diagonal blocks)

Its dual is ``maximise b'y + offset  s.t.  S = C - sum_k y_k A_k  PSD``.

Data matrices are given entry-wise in the SDPA convention: an entry
``(block, i, j, v)`` with ``i <= j`` sets both ``(i, j)`` and ``(j, i)`` of a
symmetric matrix to ``v``.  Indices are 0-based in memory and 1-based on disk.

The method is an infeasible-start path-following scheme with Nesterov-Todd
scaling and Mehrotra's predictor-corrector; the Schur complement is formed
densely and factored by Cholesky.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible-certificate"
NUMERICAL_FAILURE = "numerical-failure"
ITERATION_LIMIT = "iteration-limit"

PRIMAL_INFEASIBLE = "primal-infeasible"
DUAL_INFEASIBLE = "dual-infeasible"


class SdpFormatError(ValueError):
    pass


@dataclass
class SdpProblem:
    """Standard-form SDP.

    ``block_sizes`` holds positive sizes for dense symmetric blocks and
    negative sizes for diagonal (LP) blocks, as in SDPA.  ``rows[k]`` and
    ``objective`` map ``(block, i, j)`` with ``i <= j`` to a value.
    """

    block_sizes: list
    rows: list
    rhs: np.ndarray
    objective: dict = field(default_factory=dict)
    offset: float = 0.0

    def __post_init__(self):
        self.block_sizes = [int(s) for s in self.block_sizes]
        self.rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        if len(self.rows) != len(self.rhs):
            raise ValueError("rows and right-hand side differ in length")
        for k, row in enumerate(self.rows):
            self._check_functional(row, f"row {k}")
        self._check_functional(self.objective, "objective")

    def _check_functional(self, func: dict, what: str) -> None:
        for (blk, i, j) in func:
            if not 0 <= blk < len(self.block_sizes):
                raise ValueError(f"{what} touches undeclared block {blk}")
            n = abs(self.block_sizes[blk])
            if not (0 <= i <= j < n):
                raise ValueError(f"{what}: entry ({i}, {j}) is not upper-triangular in a block of size {n}")
            if self.block_sizes[blk] < 0 and i != j:
                raise ValueError(f"{what}: off-diagonal entry in diagonal block {blk}")

    @property
    def num_rows(self) -> int:
        return len(self.rows)

    @property
    def matrix_side(self) -> int:
        return sum(abs(s) for s in self.block_sizes)

    @property
    def num_scalar_variables(self) -> int:
        """Distinct entries of the block-diagonal variable."""
        return sum(s * (s + 1) // 2 if s > 0 else -s for s in self.block_sizes)

    def evaluate_rows(self, blocks: list) -> np.ndarray:
        return np.array([_apply(row, blocks) for row in self.rows])

    def objective_value(self, blocks: list) -> float:
        return _apply(self.objective, blocks) + self.offset


def _apply(func: dict, blocks: list) -> float:
    total = 0.0
    for (blk, i, j), v in func.items():
        X = blocks[blk]
        if X.ndim == 1:
            total += v * X[i]
        else:
            total += v * (X[i, j] if i == j else 2.0 * X[i, j])
    return total


@dataclass
class SolverOptions:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    psd_tol: float = 1e-9
    infeas_tol: float = 1e-8
    # complementarity must stay above this fraction of its initial value times
    # the relative remaining infeasibility
    neighborhood: float = 1e-3
    max_iter: int = 200
    # refuse problems whose dense Schur complement would not fit
    max_rows: int = 6000
    max_block: int = 1200


@dataclass
class IterationRecord:
    iteration: int
    primal_objective: float
    dual_objective: float
    complementarity: float
    primal_infeasibility: float
    dual_infeasibility: float
    step_primal: float
    step_dual: float
    sigma: float


@dataclass
class SdpSolution:
    status: str
    primal_blocks: list
    dual_vector: np.ndarray
    dual_blocks: list
    primal_objective: float
    dual_objective: float
    gap: float
    primal_infeasibility: float
    dual_infeasibility: float
    iterations: int
    history: list = field(default_factory=list)
    message: str = ""
    certificate_kind: str = ""
    solve_time: float = 0.0

    @property
    def residuals(self) -> tuple:
        return (self.primal_infeasibility, self.dual_infeasibility)

    def min_eigenvalue(self) -> float:
        vals = []
        for X in self.primal_blocks:
            if X.size == 0:
                continue
            vals.append(X.min() if X.ndim == 1 else np.linalg.eigvalsh(X)[0])
        return min(vals) if vals else 0.0


# ---------------------------------------------------------------------------
# Block kernels
# ---------------------------------------------------------------------------


class _DenseBlock:
    """One PSD block: data in full symmetric vec form, NT scaling helpers."""

    def __init__(self, n: int, A: sps.csr_matrix, C: np.ndarray):
        self.n = n
        self.A = A  # (m, n*n), both triangles filled
        self.C = C
        rows = np.flatnonzero(np.diff(A.indptr))
        self.rows = rows
        self.A_rows = A[rows].tocsr()
        # padded pair lists for the batched W A_r W products, grouped by length
        lens = np.diff(self.A_rows.indptr)
        order = np.argsort(lens, kind="stable")
        self.chunks = []
        budget = 6_000_000  # doubles per chunk
        start = 0
        while start < len(order):
            k = max(int(lens[order[start]]), 1)
            stop = start
            while stop < len(order):
                k_new = max(int(lens[order[stop]]), k)
                if (stop - start + 1) * max(n * k_new * 2, n * n) > budget and stop > start:
                    break
                k = k_new
                stop += 1
            idx = order[start:stop]
            K = max(int(lens[idx].max()), 1)
            a_pad = np.zeros((len(idx), K), dtype=np.int64)
            b_pad = np.zeros((len(idx), K), dtype=np.int64)
            v_pad = np.zeros((len(idx), K))
            for t, r in enumerate(idx):
                lo, hi = self.A_rows.indptr[r], self.A_rows.indptr[r + 1]
                cols = self.A_rows.indices[lo:hi]
                a_pad[t, :hi - lo] = cols // n
                b_pad[t, :hi - lo] = cols % n
                v_pad[t, :hi - lo] = self.A_rows.data[lo:hi]
            self.chunks.append((idx, a_pad, b_pad, v_pad))
            start = stop

    def op(self, X: np.ndarray) -> np.ndarray:
        return self.A @ X.ravel()

    def adj(self, y: np.ndarray) -> np.ndarray:
        return (self.A.T @ y).reshape(self.n, self.n)

    def initial(self, scale: float) -> np.ndarray:
        return scale * np.eye(self.n)

    def scaling(self, X: np.ndarray, S: np.ndarray) -> dict:
        Lx = np.linalg.cholesky(X)
        Ls = np.linalg.cholesky(S)
        U, d, Vt = np.linalg.svd(Ls.T @ Lx)
        V = Vt.T
        G = Lx @ V / np.sqrt(d)
        Ginv = (np.sqrt(d)[:, None] * V.T) @ sla.solve_triangular(Lx, np.eye(self.n), lower=True)
        return {"G": G, "Ginv": Ginv, "W": G @ G.T, "d": d}

    def schur(self, sc: dict, m: int, M: np.ndarray) -> None:
        W = sc["W"]
        n = self.n
        rows = self.rows
        for idx, a_pad, b_pad, v_pad in self.chunks:
            Wa = np.transpose(W[:, a_pad], (1, 0, 2)) * v_pad[:, None, :]  # (R, n, K)
            Wb = W[b_pad, :]  # (R, K, n)
            WAW = np.matmul(Wa, Wb).reshape(len(idx), n * n)
            block = (self.A_rows @ WAW.T)  # (r_b, R)
            M[np.ix_(rows, rows[idx])] += block

    def wmw(self, sc: dict, R: np.ndarray) -> np.ndarray:
        W = sc["W"]
        return W @ R @ W

    def to_scaled(self, sc: dict, dX: np.ndarray, dS: np.ndarray) -> tuple:
        Gi = sc["Ginv"]
        G = sc["G"]
        return Gi @ dX @ Gi.T, G.T @ dS @ G

    def complementarity_rhs(self, sc: dict, target: float, dXs=None, dSs=None) -> np.ndarray:
        d = sc["d"]
        R = -np.diag(d * d)
        R[np.diag_indices(self.n)] += target
        if dXs is not None:
            P = dXs @ dSs
            R -= 0.5 * (P + P.T)
        Z = 2.0 * R / (d[:, None] + d[None, :])
        G = sc["G"]
        return G @ Z @ G.T

    def max_step(self, sc: dict, dXs: np.ndarray, dSs: np.ndarray) -> tuple:
        rd = 1.0 / np.sqrt(sc["d"])
        ex = np.linalg.eigvalsh(_sym(rd[:, None] * dXs * rd[None, :]))[0]
        es = np.linalg.eigvalsh(_sym(rd[:, None] * dSs * rd[None, :]))[0]
        return (-1.0 / ex if ex < 0 else math.inf), (-1.0 / es if es < 0 else math.inf)

    @staticmethod
    def inner(X: np.ndarray, S: np.ndarray) -> float:
        return float(np.sum(X * S))

    @staticmethod
    def norm(R: np.ndarray) -> float:
        return float(np.linalg.norm(R))


class _DiagBlock:
    """Nonnegative orthant block (SDPA negative block size)."""

    def __init__(self, n: int, A: sps.csr_matrix, C: np.ndarray):
        self.n = n
        self.A = A  # (m, n)
        self.C = C

    def op(self, x):
        return self.A @ x

    def adj(self, y):
        return self.A.T @ y

    def initial(self, scale):
        return scale * np.ones(self.n)

    def scaling(self, x, s):
        if np.any(x <= 0) or np.any(s <= 0):
            raise np.linalg.LinAlgError("diagonal block left the interior")
        w = np.sqrt(x / s)
        return {"W": w, "d": np.sqrt(x * s)}

    def schur(self, sc, m, M):
        w2 = sc["W"] ** 2
        contrib = (self.A.multiply(w2[None, :]) @ self.A.T)
        M += contrib.toarray() if sps.issparse(contrib) else contrib

    def wmw(self, sc, r):
        return sc["W"] ** 2 * r

    def to_scaled(self, sc, dx, ds):
        return dx / sc["W"], ds * sc["W"]

    def complementarity_rhs(self, sc, target, dxs=None, dss=None):
        d = sc["d"]
        r = target - d * d
        if dxs is not None:
            r = r - dxs * dss
        z = r / d
        return sc["W"] * z

    def max_step(self, sc, dxs, dss):
        d = sc["d"]
        ex = np.min(dxs / d) if self.n else 0.0
        es = np.min(dss / d) if self.n else 0.0
        return (-1.0 / ex if ex < 0 else math.inf), (-1.0 / es if es < 0 else math.inf)

    @staticmethod
    def inner(x, s):
        return float(x @ s)

    @staticmethod
    def norm(r):
        return float(np.linalg.norm(r))


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def _compile(problem: SdpProblem) -> list:
    m = problem.num_rows
    per_block = [([], [], []) for _ in problem.block_sizes]
    for k, row in enumerate(problem.rows):
        for (blk, i, j), v in row.items():
            r, c, vals = per_block[blk]
            n = abs(problem.block_sizes[blk])
            if problem.block_sizes[blk] < 0:
                r.append(k); c.append(i); vals.append(v)
            else:
                r.append(k); c.append(i * n + j); vals.append(v)
                if i != j:
                    r.append(k); c.append(j * n + i); vals.append(v)
    blocks = []
    for blk, size in enumerate(problem.block_sizes):
        n = abs(size)
        r, c, vals = per_block[blk]
        if size < 0:
            A = sps.csr_matrix((vals, (r, c)), shape=(m, n))
            C = np.zeros(n)
            for (b2, i, j), v in problem.objective.items():
                if b2 == blk:
                    C[i] += v
            blocks.append(_DiagBlock(n, A, C))
        else:
            A = sps.csr_matrix((vals, (r, c)), shape=(m, n * n))
            A.sum_duplicates()
            C = np.zeros((n, n))
            for (b2, i, j), v in problem.objective.items():
                if b2 == blk:
                    C[i, j] += v
                    if i != j:
                        C[j, i] += v
            blocks.append(_DenseBlock(n, A, C))
    return blocks


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


def solve(problem: SdpProblem, options: SolverOptions | None = None) -> SdpSolution:
    """Solve ``problem``; deterministic for identical inputs and options."""
    opts = options or SolverOptions()
    t0 = time.perf_counter()
    m = problem.num_rows
    b = problem.rhs
    if m > opts.max_rows or any(abs(s) > opts.max_block for s in problem.block_sizes):
        return _failure(problem, NUMERICAL_FAILURE,
                        f"problem too large for the dense solver ({m} rows, largest block"
                        f" {max((abs(s) for s in problem.block_sizes), default=0)})", t0)
    blocks = _compile(problem)
    if not blocks:
        if m == 0:
            # nothing left to optimise: the objective is its constant part
            return SdpSolution(OPTIMAL, [], np.zeros(0), [], problem.offset, problem.offset, 0.0,
                               0.0, 0.0, 0, [], "no variables", solve_time=time.perf_counter() - t0)
        return _failure(problem, NUMERICAL_FAILURE, "constraints without variables", t0)

    def op(Xs):
        out = np.zeros(m)
        for blk, X in zip(blocks, Xs):
            out += blk.op(X)
        return out

    def adj(y):
        return [blk.adj(y) for blk in blocks]

    def inner(As, Bs):
        return sum(blk.inner(A_, B_) for blk, A_, B_ in zip(blocks, As, Bs))

    def norm(Rs):
        return math.sqrt(sum(blk.norm(R) ** 2 for blk, R in zip(blocks, Rs)))

    n_total = sum(blk.n for blk in blocks)
    normb = float(np.linalg.norm(b))
    normC = norm([blk.C for blk in blocks])
    # row norms for the starting-point heuristic
    row_norms = np.zeros(m)
    for blk in blocks:
        row_norms += np.asarray(blk.A.multiply(blk.A).sum(axis=1)).ravel()
    row_norms = np.sqrt(row_norms)
    n_sqrt = math.sqrt(max(blk.n for blk in blocks))
    xi = max(10.0, n_sqrt, float(np.max(n_sqrt * (1 + np.abs(b)) / (1 + row_norms))) if m else 10.0)
    eta = max(10.0, n_sqrt, normC, float(row_norms.max()) if m else 0.0)
    Xs = [blk.initial(xi) for blk in blocks]
    Ss = [blk.initial(eta) for blk in blocks]
    y = np.zeros(m)

    history: list = []
    alpha_p = alpha_d = 0.0
    status, message, kind = ITERATION_LIMIT, "iteration limit reached", ""
    best = None
    stall = 0
    for it in range(opts.max_iter + 1):
        rp = b - op(Xs)
        ATy = adj(y)
        Rd = [blk.C - S - A_ for blk, S, A_ in zip(blocks, Ss, ATy)]
        pobj = inner([blk.C for blk in blocks], Xs) + problem.offset
        dobj = float(b @ y) + problem.offset
        comp = inner(Xs, Ss)
        mu = comp / n_total
        pinf = float(np.linalg.norm(rp)) / (1.0 + normb)
        dinf = norm(Rd) / (1.0 + normC)
        relgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        if it == 0:
            comp0, pinf0, dinf0 = comp, pinf, dinf
        history.append(IterationRecord(it, pobj, dobj, comp, pinf, dinf, alpha_p, alpha_d,
                                       history[-1].sigma if history else 1.0))
        merit = max(pinf, dinf, relgap)
        if best is None or merit < best[0]:
            best = (merit, [X.copy() for X in Xs], y.copy(), [S.copy() for S in Ss])
        if relgap <= opts.gap_tol and pinf <= opts.feas_tol and dinf <= opts.feas_tol:
            status, message = OPTIMAL, "converged"
            break
        # Farkas rays: b'y > 0 with A'y <= 0 (primal infeasible), or
        # A(X) = 0, X >= 0 with <C, X> < 0 (dual infeasible)
        by = float(b @ y)
        if by > 0:
            ray = norm([A_ + S for A_, S in zip(ATy, Ss)]) / by
            if ray <= opts.infeas_tol:
                status, kind = INFEASIBLE, PRIMAL_INFEASIBLE
                message = f"primal infeasible: |A'y + S| / b'y = {ray:.2e}"
                break
        cx = pobj - problem.offset
        if cx < 0:
            ray = float(np.linalg.norm(op(Xs))) / -cx
            if ray <= opts.infeas_tol:
                status, kind = INFEASIBLE, DUAL_INFEASIBLE
                message = f"dual infeasible: |A(X)| / -<C,X> = {ray:.2e}"
                break
        if it == opts.max_iter:
            break
        try:
            scs = [blk.scaling(X, S) for blk, X, S in zip(blocks, Xs, Ss)]
            M = np.zeros((m, m))
            for blk, sc in zip(blocks, scs):
                blk.schur(sc, m, M)
            M = 0.5 * (M + M.T)
            factor = _factor(M)
        except (np.linalg.LinAlgError, ValueError) as exc:
            status, message = NUMERICAL_FAILURE, f"factorisation breakdown: {exc}"
            break
        WRdW = [blk.wmw(sc, R) for blk, sc, R in zip(blocks, scs, Rd)]
        A_WRdW = op(WRdW)

        def direction(Rc):
            rhs = rp - op(Rc) + A_WRdW
            dy = factor.solve(rhs)
            best_res = math.inf
            for _ in range(4):
                dS = [R - A_ for R, A_ in zip(Rd, adj(dy))]
                dX = [Rc_ - blk.wmw(sc, dS_) for blk, sc, Rc_, dS_ in zip(blocks, scs, Rc, dS)]
                # iterative refinement against the exact operator: A(dX) must equal rp
                res = rp - op(dX)
                res_norm = float(np.linalg.norm(res))
                if res_norm >= 0.5 * best_res or res_norm <= 1e-15 * (1.0 + normb):
                    break
                best_res = res_norm
                dy = dy + factor.solve(res)
            return dX, dy, dS

        # predictor
        Rc = [blk.complementarity_rhs(sc, 0.0) for blk, sc in zip(blocks, scs)]
        dX, dy, dS = direction(Rc)
        scaled = [blk.to_scaled(sc, a, b_) for blk, sc, a, b_ in zip(blocks, scs, dX, dS)]
        ap, ad = _steps(blocks, scs, scaled)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = inner([X + ap * d_ for X, d_ in zip(Xs, dX)],
                       [S + ad * d_ for S, d_ in zip(Ss, dS)]) / n_total
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
        # corrector
        Rc = [blk.complementarity_rhs(sc, sigma * mu, sx, ss)
              for blk, sc, (sx, ss) in zip(blocks, scs, scaled)]
        dX, dy, dS = direction(Rc)
        scaled = [blk.to_scaled(sc, a, b_) for blk, sc, a, b_ in zip(blocks, scs, dX, dS)]
        ap, ad = _steps(blocks, scs, scaled)
        gamma = 0.9 + 0.09 * min(alpha_p, alpha_d)
        alpha_p = min(1.0, gamma * ap)
        alpha_d = min(1.0, gamma * ad)
        # keep complementarity from outrunning the infeasibilities: an iterate
        # that reaches the boundary before it is feasible can no longer move
        xs = inner(Xs, Ss)
        xd = inner(Xs, dS)
        dxs = inner(dX, Ss)
        dxd = inner(dX, dS)
        for _ in range(30):
            comp_new = xs + alpha_d * xd + alpha_p * dxs + alpha_p * alpha_d * dxd
            lag = max((1.0 - alpha_p) * pinf / pinf0 if pinf0 > 0 else 0.0,
                      (1.0 - alpha_d) * dinf / dinf0 if dinf0 > 0 else 0.0)
            if comp_new >= opts.neighborhood * comp0 * lag:
                break
            alpha_p *= 0.9
            alpha_d *= 0.9
        history[-1].sigma = sigma
        if alpha_p < 1e-10 and alpha_d < 1e-10:
            stall += 1
            if stall >= 3:
                status, message = NUMERICAL_FAILURE, "step lengths collapsed"
                break
        else:
            stall = 0
        Xs = [X + alpha_p * d_ for X, d_ in zip(Xs, dX)]
        y = y + alpha_d * dy
        Ss = [S + alpha_d * d_ for S, d_ in zip(Ss, dS)]
        Xs = [_symmetrize(X) for X in Xs]
        Ss = [_symmetrize(S) for S in Ss]
        if not all(np.all(np.isfinite(X)) for X in Xs) or not np.all(np.isfinite(y)):
            status, message = NUMERICAL_FAILURE, "non-finite iterate"
            break

    if status in (NUMERICAL_FAILURE, ITERATION_LIMIT) and best is not None:
        _, Xs, y, Ss = best
    rp = b - op(Xs)
    Rd = [blk.C - S - A_ for blk, S, A_ in zip(blocks, Ss, adj(y))]
    pobj = inner([blk.C for blk in blocks], Xs) + problem.offset
    dobj = float(b @ y) + problem.offset
    sol = SdpSolution(
        status=status,
        primal_blocks=Xs,
        dual_vector=y,
        dual_blocks=Ss,
        primal_objective=pobj,
        dual_objective=dobj,
        gap=abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj)),
        primal_infeasibility=float(np.linalg.norm(rp)) / (1.0 + normb),
        dual_infeasibility=norm(Rd) / (1.0 + normC),
        iterations=len(history) - 1,
        history=history,
        message=message,
        certificate_kind=kind,
        solve_time=time.perf_counter() - t0,
    )
    if sol.status == OPTIMAL and sol.min_eigenvalue() < -opts.psd_tol:
        sol.status, sol.message = NUMERICAL_FAILURE, "primal iterate lost semidefiniteness"
    logger.debug("sdp %s after %d iterations: %s", sol.status, sol.iterations, sol.message)
    return sol


def _symmetrize(X: np.ndarray) -> np.ndarray:
    return X if X.ndim == 1 else _sym(X)


def _steps(blocks, scs, scaled) -> tuple:
    ap = ad = math.inf
    for blk, sc, (sx, ss) in zip(blocks, scs, scaled):
        a, d_ = blk.max_step(sc, sx, ss)
        ap, ad = min(ap, a), min(ad, d_)
    return ap, ad


class _SchurFactor:
    """Cholesky of the Schur complement after symmetric diagonal equilibration.

    Rows belonging to blocks whose iterate collapses towards zero have tiny
    diagonals next to rows of well-centred blocks; scaling to a unit diagonal
    first keeps the factorisation (and any small diagonal lift) meaningful for
    every row.
    """

    def __init__(self, M: np.ndarray):
        diag = np.diag(M).copy()
        if np.any(~np.isfinite(diag)) or np.any(diag <= 0):
            raise np.linalg.LinAlgError("Schur complement has a non-positive diagonal")
        self.scale = 1.0 / np.sqrt(diag)
        Ms = M * self.scale[:, None] * self.scale[None, :]
        self.lift = 0.0
        for eps in (0.0, 1e-14, 1e-12, 1e-10, 1e-8):
            try:
                self.factor = sla.cho_factor(Ms + eps * np.eye(len(M)) if eps else Ms,
                                             lower=True, check_finite=False)
                self.lift = eps
                return
            except np.linalg.LinAlgError:
                continue
        raise np.linalg.LinAlgError("Schur complement is not positive definite")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.scale * sla.cho_solve(self.factor, self.scale * rhs)


def _factor(M: np.ndarray) -> _SchurFactor:
    return _SchurFactor(M)


def _failure(problem: SdpProblem, status: str, message: str, t0: float) -> SdpSolution:
    blocks = [np.zeros(-s) if s < 0 else np.zeros((s, s)) for s in problem.block_sizes]
    return SdpSolution(status, blocks, np.zeros(problem.num_rows), blocks, math.nan, math.nan,
                       math.inf, math.inf, math.inf, 0, [], message,
                       solve_time=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# SDPA sparse format
# ---------------------------------------------------------------------------
#
# The problem above is SDPA's dual form  max <F0, Y>  s.t. <F_k, Y> = c_k  with
# F0 = -C, F_k = A_k, c = b; the optimal values therefore differ in sign (and by
# ``offset``, which SDPA cannot carry and is written as a comment).


def _fmt(v: float) -> str:
    return "%.17g" % v


def export_sdpa(problem: SdpProblem) -> str:
    lines = [f'"sosinv SDP; objective offset {_fmt(problem.offset)}"']
    lines.append(str(problem.num_rows))
    lines.append(str(len(problem.block_sizes)))
    lines.append(" ".join(str(s) for s in problem.block_sizes))
    if problem.num_rows:
        lines.append(" ".join(_fmt(v) for v in problem.rhs))
    for (blk, i, j), v in sorted(problem.objective.items()):
        if v != 0.0:
            lines.append(f"0 {blk + 1} {i + 1} {j + 1} {_fmt(-v)}")
    for k, row in enumerate(problem.rows):
        for (blk, i, j), v in sorted(row.items()):
            if v != 0.0:
                lines.append(f"{k + 1} {blk + 1} {i + 1} {j + 1} {_fmt(v)}")
    return "\n".join(lines) + "\n"


def parse_sdpa(text: str) -> SdpProblem:
    """Read SDPA sparse text; malformed input raises ``SdpFormatError``."""
    try:
        return _parse_sdpa(text)
    except SdpFormatError:
        raise
    except (ValueError, IndexError) as exc:
        raise SdpFormatError(f"invalid SDPA data: {exc}") from None


def _parse_sdpa(text: str) -> SdpProblem:
    offset = 0.0
    body = []
    for raw in text.splitlines():
        line = raw.strip()
        if line.startswith('"') or line.startswith("*"):
            if "objective offset" in line:
                try:
                    offset = float(line.split("objective offset", 1)[1].strip().strip('"'))
                except ValueError:
                    pass
            continue
        if line:
            body.append(line)
    tokens_iter = iter(body)
    try:
        m = int(_clean(next(tokens_iter)).split()[0])
        nblocks = int(_clean(next(tokens_iter)).split()[0])
        sizes = []
        while len(sizes) < nblocks:
            sizes += [int(float(t)) for t in _clean(next(tokens_iter)).split()]
        c = []
        while len(c) < m:
            c += [float(t) for t in _clean(next(tokens_iter)).split()]
    except StopIteration:
        raise SdpFormatError("truncated SDPA header") from None
    rows = [dict() for _ in range(m)]
    objective: dict = {}
    for line in tokens_iter:
        parts = _clean(line).split()
        if len(parts) != 5:
            raise SdpFormatError(f"bad entry line {line!r}")
        k, blk, i, j = (int(p) for p in parts[:4])
        v = float(parts[4])
        if not 0 <= k <= m or min(blk, i, j) < 1:
            raise SdpFormatError(f"entry index out of range in {line!r}")
        i, j = min(i, j), max(i, j)
        key = (blk - 1, i - 1, j - 1)
        if k == 0:
            objective[key] = objective.get(key, 0.0) - v
        else:
            rows[k - 1][key] = rows[k - 1].get(key, 0.0) + v
    return SdpProblem(sizes[:nblocks], rows, np.array(c[:m]), objective, offset)


def _clean(line: str) -> str:
    for ch in ",{}()":
        line = line.replace(ch, " ")
    return line
