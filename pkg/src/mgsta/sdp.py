"""Standard-form semidefinite programs built from :class:`AffineMatrixExpr` lists.

A :class:`ConicProblem` is::

    minimize    c' y
    subject to  F0_b + sum_j y_j Fj_b  >= 0      for every block b

Negative-definite expressions are negated, strict inequalities are shifted by
the expression margin, and each block is equilibrated by a diagonal congruence
(which preserves definiteness) before it reaches a backend.

Backends take a problem and return ``(y, status, info)``; ``cvxopt`` is the
default, ``clarabel`` is available as a second opinion. The environment
variable ``MGSTA_SDP_BACKEND`` selects the default.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import BackendFailure, LayoutMismatch, MissingVariable
from .lmi import PD, AffineMatrixExpr, eval_expr

log = logging.getLogger(__name__)


class Status(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    NUMERICAL_TROUBLE = "numerical_trouble"


@dataclass(frozen=True)
class SolverSettings:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iterations: int = 200
    backend: str | None = None

    def __post_init__(self):
        if not (self.feas_tol > 0 and self.gap_tol > 0 and self.max_iterations > 0):
            raise ValueError("solver tolerances and iteration cap must be positive")


@dataclass
class ConicBlock:
    F0: np.ndarray
    F: dict[int, np.ndarray]
    name: str = ""
    sign: float = 1.0
    margin: float = 0.0
    # diagonal congruence applied to (F0, F); original = diag(1/d) @ scaled @ diag(1/d)
    d: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.F0.shape[0]

    def value(self, y: np.ndarray) -> np.ndarray:
        out = self.F0.copy()
        for j, Fj in self.F.items():
            out += y[j] * Fj
        return out


@dataclass
class ConicProblem:
    c: np.ndarray
    blocks: list[ConicBlock]
    nvar: int
    names: list[str] = field(default_factory=list)

    def block_sizes(self) -> list[int]:
        return [b.size for b in self.blocks]


@dataclass
class ConicSolution:
    assignment: np.ndarray
    objective_value: float
    status: Status
    block_min_eig: list[float]
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def _equilibrate(F0, F):
    """Diagonal congruence giving rows of comparable size, then unit Frobenius norm."""
    mats = [F0] + list(F.values())
    row = np.sqrt(sum((M**2).sum(axis=1) for M in mats))
    row[row == 0] = 1.0
    d = 1.0 / np.sqrt(row)
    D = np.outer(d, d)
    F0s = F0 * D
    Fs = {j: M * D for j, M in F.items()}
    fro = np.sqrt(np.linalg.norm(F0s) ** 2 + sum(np.linalg.norm(M) ** 2 for M in Fs.values()))
    if fro > 0:
        s = 1.0 / np.sqrt(fro)
        d = d * s
        F0s = F0s * s * s
        Fs = {j: M * s * s for j, M in Fs.items()}
    return F0s, Fs, d


def translate(
    exprs: Sequence[AffineMatrixExpr],
    objective_index: int | None = None,
    floors: Sequence[AffineMatrixExpr] = (),
    floor_eps: float = 0.0,
    scale: bool = True,
    strict: bool = True,
) -> ConicProblem:
    """Build the standard-form problem.

    ``exprs`` keep their strictness margin; ``floors`` are positivity
    requirements shifted by the absolute ``floor_eps`` instead.
    """
    if not exprs:
        raise LayoutMismatch("no expressions to translate")
    nvar = exprs[0].nvar
    for e in list(exprs) + list(floors):
        if e.nvar != nvar:
            raise LayoutMismatch(f"expression {e.name!r} has nvar={e.nvar}, expected {nvar}")
    c = np.zeros(nvar)
    if objective_index is not None:
        if not 0 <= objective_index < nvar:
            raise LayoutMismatch(f"objective index {objective_index} out of range")
        c[objective_index] = 1.0
    blocks = []
    items = [(e, e.margin() if strict else 0.0) for e in exprs]
    items += [(e, floor_eps) for e in floors]
    for e, margin in items:
        sign = 1.0 if e.sense is PD else -1.0
        F0 = sign * e.const - margin * np.eye(e.size)
        F = {j: sign * M for j, M in e.coeffs.items()}
        d = None
        if scale:
            F0, F, d = _equilibrate(F0, F)
        blocks.append(ConicBlock(F0, F, e.name, sign, margin, d))
    return ConicProblem(c, blocks, nvar, [b.name for b in blocks])


# backends
#
# A backend takes (problem, settings, **attempt) and returns (y, raw, info)
# where raw is "optimal", "infeasible" or "unknown" and info may carry "gap".


def _solve_cvxopt(problem: ConicProblem, settings: SolverSettings, feastol=None, colscale=False):
    from cvxopt import matrix, solvers

    Gs, hs = [], []
    for b in problem.blocks:
        k = b.size
        G = np.zeros((k * k, problem.nvar))
        for j, Fj in b.F.items():
            G[:, j] = -Fj.ravel(order="F")
        Gs.append(G)
        hs.append(matrix(b.F0))
    s = np.ones(problem.nvar)
    if colscale:
        norms = np.sqrt(sum((G**2).sum(axis=0) for G in Gs))
        s = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
    opts = {
        "show_progress": False,
        "maxiters": settings.max_iterations,
        "abstol": settings.gap_tol,
        "reltol": settings.gap_tol,
        "feastol": feastol or settings.feas_tol,
    }
    try:
        sol = solvers.sdp(matrix(problem.c * s), Gs=[matrix(G * s) for G in Gs], hs=hs, options=opts)
    except (ValueError, ArithmeticError) as exc:
        raise BackendFailure(f"cvxopt: {exc}") from exc
    raw = {"optimal": "optimal", "primal infeasible": "infeasible"}.get(sol["status"], "unknown")
    y = None if sol["x"] is None else np.array(sol["x"]).ravel() * s
    info = {
        "backend": "cvxopt",
        "raw_status": sol["status"],
        "gap": sol.get("gap"),
        "iterations": sol.get("iterations"),
    }
    return y, raw, info


def _svec_rows(k: int):
    rows, cols = [], []
    for j in range(k):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    rows, cols = np.array(rows), np.array(cols)
    w = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return rows, cols, w


def _solve_clarabel(problem: ConicProblem, settings: SolverSettings, feastol=None, colscale=False):
    import clarabel
    from scipy import sparse

    A_parts, b_parts, cones = [], [], []
    for blk in problem.blocks:
        rows, cols, w = _svec_rows(blk.size)
        A = np.zeros((len(rows), problem.nvar))
        for j, Fj in blk.F.items():
            A[:, j] = -w * Fj[rows, cols]
        A_parts.append(A)
        b_parts.append(w * blk.F0[rows, cols])
        if blk.size == 1:
            cones.append(clarabel.NonnegativeConeT(1))
        else:
            cones.append(clarabel.PSDTriangleConeT(blk.size))
    A = np.vstack(A_parts)
    scl = np.ones(problem.nvar)
    if colscale:
        norms = np.linalg.norm(A, axis=0)
        scl = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
    P = sparse.csc_matrix((problem.nvar, problem.nvar))
    st = clarabel.DefaultSettings()
    st.verbose = False
    st.max_iter = settings.max_iterations
    st.tol_gap_abs = settings.gap_tol
    st.tol_gap_rel = settings.gap_tol
    st.tol_feas = feastol or settings.feas_tol
    try:
        solver = clarabel.DefaultSolver(
            P, problem.c * scl, sparse.csc_matrix(A * scl), np.concatenate(b_parts), cones, st
        )
        sol = solver.solve()
    except Exception as exc:  # clarabel surfaces Rust panics as plain exceptions
        raise BackendFailure(f"clarabel: {exc}") from exc
    raw_status = str(sol.status)
    if raw_status == "Solved":
        raw = "optimal"
    elif "PrimalInfeasible" in raw_status:
        raw = "infeasible"
    else:
        raw = "unknown"
    y = np.array(sol.x) * scl if sol.x is not None and len(sol.x) else None
    gap = None
    if y is not None:
        gap = abs(sol.obj_val - sol.obj_val_dual)
    return y, raw, {"backend": "clarabel", "raw_status": raw_status, "gap": gap, "iterations": sol.iterations}


BACKENDS: dict[str, Callable] = {"cvxopt": _solve_cvxopt, "clarabel": _solve_clarabel}

# Interior-point codes stall on some of these badly scaled problems; each
# attempt changes the backend feasibility tolerance or the variable scaling.
ATTEMPTS = (
    {"feastol": 1e-7, "colscale": False},
    {"feastol": 1e-7, "colscale": True},
    {"feastol": 1e-6, "colscale": True},
)


def default_backend() -> str:
    return os.environ.get("MGSTA_SDP_BACKEND", "cvxopt").lower()


def block_min_eigs(problem: ConicProblem, y: np.ndarray, scaled: bool = False) -> list[float]:
    """Minimum eigenvalue of every block, margins included.

    ``scaled=True`` reports the equilibrated block (dimensionless units).
    """
    out = []
    for b in problem.blocks:
        M = b.value(y)
        if b.d is not None and not scaled:
            M = M / np.outer(b.d, b.d)
        out.append(float(np.linalg.eigvalsh(M).min()))
    return out


def solve(problem: ConicProblem, settings: SolverSettings | None = None) -> ConicSolution:
    """Solve ``problem`` and classify the outcome independently of the backend.

    OPTIMAL needs every equilibrated block to have minimum eigenvalue
    ``>= -feas_tol`` at the returned point and a relative duality gap
    ``<= gap_tol`` when the backend reports one. A verified point whose gap is
    not certified is NUMERICAL_TROUBLE (still a valid upper bound).
    INFEASIBLE is an infeasibility certificate, or no attempt producing any
    verified point.
    """
    settings = settings or SolverSettings()
    name = (settings.backend or default_backend()).lower()
    try:
        backend = BACKENDS[name]
    except KeyError:
        raise BackendFailure(f"unknown backend {name!r}; choose from {sorted(BACKENDS)}") from None
    attempts = []
    best = None
    for attempt in ATTEMPTS:
        try:
            y, raw, info = backend(problem, settings, **attempt)
        except BackendFailure as exc:
            attempts.append({"attempt": attempt, "error": str(exc)})
            continue
        info = dict(info, attempt=attempt)
        attempts.append(info)
        if raw == "infeasible":
            return ConicSolution(
                np.full(problem.nvar, np.nan), np.inf, Status.INFEASIBLE, [], {**info, "attempts": attempts}
            )
        if y is None or not np.all(np.isfinite(y)):
            continue
        scaled = block_min_eigs(problem, y, scaled=True)
        worst = min(scaled)
        obj = float(problem.c @ y)
        gap = info.get("gap")
        rel_gap = None if gap is None else abs(gap) / max(1.0, abs(obj))
        info.update(worst_scaled_eig=worst, relative_gap=rel_gap)
        if worst < -settings.feas_tol:
            continue
        if rel_gap is None or rel_gap <= settings.gap_tol:
            eigs = block_min_eigs(problem, y)
            return ConicSolution(y, obj, Status.OPTIMAL, eigs, {**info, "attempts": attempts})
        if best is None or obj < best[1]:
            best = (y, obj, info)
    if best is not None:
        y, obj, info = best
        return ConicSolution(
            y, obj, Status.NUMERICAL_TROUBLE, block_min_eigs(problem, y), {**info, "attempts": attempts}
        )
    return ConicSolution(
        np.full(problem.nvar, np.nan),
        np.inf,
        Status.INFEASIBLE,
        [],
        {"backend": name, "reason": "repeated progress failure", "attempts": attempts},
    )


@dataclass(frozen=True)
class ExprCheck:
    name: str
    sense: str
    min_eig: float
    max_eig: float
    margin: float
    passed: bool


def verify_solution(exprs: Sequence[AffineMatrixExpr], assignment, tol: float = 0.0) -> list[ExprCheck]:
    """Eigenvalue check of each expression at ``assignment`` (no solver trust).

    ``margin`` is the distance to the wrong sign: the smallest eigenvalue for
    positive-definite expressions and minus the largest for negative-definite
    ones. An expression passes when ``margin >= -tol``.
    """
    out = []
    for e in exprs:
        try:
            M = eval_expr(e, assignment)
        except MissingVariable:
            raise
        w = np.linalg.eigvalsh(0.5 * (M + M.T))
        margin = w[0] if e.sense is PD else -w[-1]
        out.append(ExprCheck(e.name, e.sense.value, float(w[0]), float(w[-1]), float(margin), bool(margin >= -tol)))
    return out


def dump_problem(problem: ConicProblem, path) -> None:
    """Write the problem in SDPA sparse format (objective sign as given, blocks unscaled).

    SDPA reads ``sum_j y_j F_j - F_0 >= 0``, so our constant term is negated.
    """
    lines = [
        f'"mgsta conic problem: {problem.nvar} variables, {len(problem.blocks)} blocks"',
        str(problem.nvar),
        str(len(problem.blocks)),
        " ".join(str(b.size) for b in problem.blocks),
        " ".join(repr(float(v)) for v in problem.c),
    ]
    for bi, b in enumerate(problem.blocks, start=1):
        inv = 1.0 if b.d is None else 1.0 / np.outer(b.d, b.d)
        mats = [(0, -b.F0 * inv)] + [(j + 1, Fj * inv) for j, Fj in sorted(b.F.items())]
        for mi, M in mats:
            ii, jj = np.nonzero(np.triu(M))
            for i, j in zip(ii, jj):
                lines.append(f"{mi} {bi} {i + 1} {j + 1} {M[i, j]!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
