"""Gain synthesis: the inner convex program at fixed (alpha, rho) and the outer 2-D search."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import lmi, sdp
from .errors import (
    AllInfeasible,
    Infeasible,
    InvalidParams,
    NonzeroInitialDisturbance,
    SingularBK2,
    SingularMatrix,
)
from .model import DesignConfig, PolytopicPlant

log = logging.getLogger(__name__)

VERIFY_TOL = 1e-6
BK2_COND_LIMIT = 1e12
SEARCH_SETTINGS = sdp.SolverSettings(max_iterations=100)


@dataclass
class SynthesisResult:
    theta: float
    Q: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    W: np.ndarray
    zd: np.ndarray
    K0: np.ndarray
    K1: np.ndarray
    K2: np.ndarray
    delta: float
    delta_per_vertex: np.ndarray
    bk2_condition: np.ndarray
    alpha: float
    rho: float
    gamma: float
    omega: float
    status: str
    checks: list = field(default_factory=list)
    solve_seconds: float = 0.0

    @property
    def K(self) -> np.ndarray:
        return np.hstack([self.K1, self.K2])

    @property
    def S(self) -> np.ndarray:
        return np.linalg.inv(self.Q)

    @property
    def P(self) -> np.ndarray:
        return np.linalg.inv(self.X)

    @property
    def worst_margin(self) -> float:
        return min((c.margin for c in self.checks), default=float("nan"))

    def gains(self) -> dict:
        return {"K0": self.K0, "K1": self.K1, "K2": self.K2, "alpha": self.alpha}

    def to_dict(self) -> dict:
        mats = ("Q", "X", "Y", "W", "zd", "K0", "K1", "K2", "delta_per_vertex", "bk2_condition")
        out = {k: np.asarray(getattr(self, k)).tolist() for k in mats}
        out.update(
            theta=self.theta, delta=self.delta, alpha=self.alpha, rho=self.rho, gamma=self.gamma,
            omega=self.omega, status=self.status, solve_seconds=self.solve_seconds,
            checks=[
                {"name": c.name, "sense": c.sense, "min_eig": c.min_eig, "max_eig": c.max_eig,
                 "margin": c.margin, "passed": c.passed}
                for c in self.checks
            ],
        )
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisResult":
        checks = [sdp.ExprCheck(**c) for c in d.get("checks", [])]
        arr = {k: np.array(d[k], float) for k in ("Q", "X", "Y", "W", "zd", "K0", "K1", "K2")}
        return cls(
            theta=float(d["theta"]), delta=float(d["delta"]),
            delta_per_vertex=np.array(d.get("delta_per_vertex", []), float),
            bk2_condition=np.array(d.get("bk2_condition", []), float),
            alpha=float(d["alpha"]), rho=float(d["rho"]), gamma=float(d["gamma"]), omega=float(d["omega"]),
            status=d.get("status", "optimal"), checks=checks, solve_seconds=float(d.get("solve_seconds", 0.0)),
            **arr,
        )


def save_result(result: SynthesisResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=2)


def load_result(path) -> SynthesisResult:
    with open(path) as fh:
        return SynthesisResult.from_dict(json.load(fh))


def initial_scaled_state(config: DesignConfig) -> np.ndarray:
    """R(sigma0) x0 with x0 = [sigma0; eta0] (valid when f(0) = 0)."""
    return lmi.R_sigma_x(config.sigma0, config.eta0, config.alpha)


def assemble(plant: PolytopicPlant, config: DesignConfig, layout: lmi.VariableLayout | None = None):
    """All inner-problem expressions in a fixed order: 65, 66, 67 per vertex, then 68 and 72."""
    config.validate_for(plant)
    L = layout or lmi.VariableLayout.for_plant(plant)
    a, rho, g = config.alpha, config.rho, config.gamma
    exprs = [lmi.build_lmi65(plant, i, a, rho, g, L) for i in range(plant.N)]
    exprs += [lmi.build_lmi66(plant, i, a, rho, config.H, config.J, L) for i in range(plant.N)]
    exprs += [lmi.build_lmi67(plant, i, rho, a, L.index("kappa"), config.H, config.J, L) for i in range(plant.N)]
    exprs += list(lmi.build_lmi68(config.zeta0, initial_scaled_state(config), L))
    exprs.append(lmi.build_lmi72(config.omega, L))
    exprs[: 3 * plant.N] = [
        dataclasses.replace(e, name=f"{e.name}[{i % plant.N}]") for i, e in enumerate(exprs[: 3 * plant.N])
    ]
    return exprs, L


def recover_gains(Q, X, Y, W, n: int):
    """K0 = W Q^-1 and [K1 K2] = Y X^-1 via Cholesky solves."""
    try:
        cq = np.linalg.cholesky(Q)
        cx = np.linalg.cholesky(X)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix("Q or X is not positive definite") from exc

    def right_solve(Mfac, R):
        # R M^-1 = (M^-1 R')' using M = L L'
        tmp = np.linalg.solve(Mfac, R.T)
        return np.linalg.solve(Mfac.T, tmp).T

    K0 = right_solve(cq, W)
    K = right_solve(cx, Y)
    return K0, K[:, :n], K[:, n:]


def compute_delta(plant_or_B, K2, gamma: float):
    """Admissible bound on |f'|: delta_i = 1 / (|(B_i K2)^-1| gamma) per vertex.

    Returns ``(delta_min, per_vertex, condition_numbers)``.
    """
    if isinstance(plant_or_B, PolytopicPlant):
        Bs = [v.B for v in plant_or_B.vertices]
    else:
        Bs = [np.atleast_2d(np.asarray(b, float)) for b in plant_or_B]
    K2 = np.atleast_2d(np.asarray(K2, float))
    if not gamma > 0:
        raise InvalidParams("gamma must be positive")
    deltas, conds = [], []
    for i, B in enumerate(Bs):
        M = B @ K2
        s = np.linalg.svd(M, compute_uv=False)
        cond = s[0] / s[-1] if s[-1] > 0 else np.inf
        if not np.isfinite(cond) or cond > BK2_COND_LIMIT:
            raise SingularBK2(i)
        # |M^-1|_2 = 1 / s_min
        deltas.append(s[-1] / gamma)
        conds.append(cond)
    deltas = np.array(deltas)
    return float(deltas.min()), deltas, np.array(conds)


def solve_inner(
    plant: PolytopicPlant,
    config: DesignConfig,
    settings: sdp.SolverSettings | None = None,
    f0=None,
    verify_tol: float = VERIFY_TOL,
) -> SynthesisResult:
    """Minimise theta over the vertex LMIs at fixed (alpha, rho).

    ``f0`` is the disturbance at t = 0 when known; a nonzero value is rejected
    because the initial-condition bound assumes it vanishes.
    """
    if f0 is not None and np.linalg.norm(np.asarray(f0, float)) > 0:
        raise NonzeroInitialDisturbance("the initial-condition bound requires f(0) = 0")
    t0 = time.perf_counter()
    exprs, L = assemble(plant, config)
    problem = sdp.translate(exprs + lmi.floor_exprs(L), L.theta)
    sol = sdp.solve(problem, settings)
    if sol.status is sdp.Status.INFEASIBLE:
        raise Infeasible(config.alpha, config.rho, sol.info.get("reason") or sol.info.get("raw_status", ""))
    checks = sdp.verify_solution(exprs, sol.assignment, tol=verify_tol)
    bad = [c.name for c in checks if not c.passed]
    if bad:
        raise Infeasible(config.alpha, config.rho, f"certificate check failed for {bad}")
    v = L.unpack(sol.assignment)
    K0, K1, K2 = recover_gains(v["Q"], v["X"], v["Y"], v["W"], plant.n)
    delta, per_vertex, conds = compute_delta(plant, K2, config.gamma)
    return SynthesisResult(
        theta=v["theta"], Q=v["Q"], X=v["X"], Y=v["Y"], W=v["W"], zd=v["zd"],
        K0=K0, K1=K1, K2=K2, delta=delta, delta_per_vertex=per_vertex, bk2_condition=conds,
        alpha=config.alpha, rho=config.rho, gamma=config.gamma, omega=config.omega,
        status=sol.status.value, checks=checks, solve_seconds=time.perf_counter() - t0,
    )


# outer search


@dataclass(frozen=True)
class SearchGrid:
    alpha_range: tuple[float, float] = (1.0, 100.0)
    rho_range: tuple[float, float] = (0.1, 10.0)
    n_alpha: int = 8
    n_rho: int = 8
    refine_passes: int = 3
    log_tol: float = 0.01

    def __post_init__(self):
        (a0, a1), (r0, r1) = self.alpha_range, self.rho_range
        if not (0 < a0 <= a1 and 0 < r0 <= r1 and self.n_alpha >= 1 and self.n_rho >= 1):
            raise InvalidParams("grid ranges must be positive and ordered with at least one point per axis")
        if self.refine_passes < 0 or not self.log_tol > 0:
            raise InvalidParams("refine_passes must be >= 0 and log_tol > 0")

    def alphas(self) -> np.ndarray:
        return np.geomspace(*self.alpha_range, self.n_alpha)

    def rhos(self) -> np.ndarray:
        return np.geomspace(*self.rho_range, self.n_rho)

    def points(self) -> list[tuple[float, float]]:
        return [(float(a), float(r)) for a in self.alphas() for r in self.rhos()]

    @classmethod
    def single(cls, alpha: float, rho: float) -> "SearchGrid":
        return cls((alpha, alpha), (rho, rho), 1, 1, 0)


@dataclass(frozen=True)
class LandscapeRow:
    alpha: float
    rho: float
    theta: float
    status: str
    stage: str


def _evaluate(args):
    plant, config, settings = args
    try:
        res = solve_inner(plant, config, settings)
        return res, res.status
    except Infeasible:
        return None, "infeasible"
    except SingularMatrix as exc:
        return None, f"singular: {exc}"


class _Evaluator:
    """Memoised objective theta(alpha, rho) with +inf for infeasible points."""

    def __init__(self, plant, config, settings, workers):
        self.plant, self.config, self.settings, self.workers = plant, config, settings, workers
        self.cache: dict[tuple[float, float], tuple[SynthesisResult | None, str]] = {}
        self.rows: list[LandscapeRow] = []

    @staticmethod
    def key(a, r):
        return (float(f"{a:.12g}"), float(f"{r:.12g}"))

    def _record(self, key, out, stage):
        self.cache[key] = out
        res, status = out
        self.rows.append(LandscapeRow(key[0], key[1], res.theta if res else math.inf, status, stage))

    def many(self, points, stage):
        todo = [self.key(a, r) for a, r in points if self.key(a, r) not in self.cache]
        todo = list(dict.fromkeys(todo))
        jobs = [(self.plant, self.config.replace(alpha=a, rho=r), self.settings) for a, r in todo]
        if self.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=self.workers) as ex:
                outs = list(ex.map(_evaluate, jobs))
        else:
            outs = [_evaluate(j) for j in jobs]
        for key, out in zip(todo, outs):
            self._record(key, out, stage)
            log.info("%s alpha=%.5g rho=%.5g -> %s", stage, key[0], key[1], out[1])

    def theta(self, a, r, stage="refine") -> float:
        k = self.key(a, r)
        if k not in self.cache:
            self.many([(a, r)], stage)
        res = self.cache[k][0]
        return res.theta if res else math.inf

    def best(self):
        feas = [(res.theta, k) for k, (res, _) in self.cache.items() if res is not None]
        if not feas:
            return None
        return self.cache[min(feas)[1]][0]


_INVPHI = (math.sqrt(5) - 1) / 2


def _golden(fun, lo, hi, tol):
    """Golden-section minimisation on [lo, hi] (log coordinates); returns best (x, f) seen."""
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fun(c), fun(d)
    seen = [(fc, c), (fd, d)]
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fun(c)
            seen.append((fc, c))
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fun(d)
            seen.append((fd, d))
    f, x = min(seen)
    return x, f


def outer_search(
    plant: PolytopicPlant,
    config: DesignConfig,
    grid: SearchGrid | None = None,
    settings: sdp.SolverSettings | None = None,
    workers: int = 1,
):
    """Coarse log grid over (alpha, rho), then coordinate descent with golden sections.

    Returns ``(best, landscape)`` where ``landscape`` lists every evaluated
    point in a deterministic order (grid first, then refinement order).
    """
    grid = grid or SearchGrid()
    ev = _Evaluator(plant, config, settings or SEARCH_SETTINGS, workers)
    ev.many(grid.points(), "grid")
    best = ev.best()
    if best is None:
        raise AllInfeasible(f"no feasible point among {len(ev.rows)} grid points")
    # the bracket on each axis spans one grid spacing either side of the incumbent
    spans = []
    for (lo, hi), npts in ((grid.alpha_range, grid.n_alpha), (grid.rho_range, grid.n_rho)):
        spans.append(math.log(hi / lo) / max(npts - 1, 1) if npts > 1 else 0.0)
    a, r, th = best.alpha, best.rho, best.theta
    for p in range(grid.refine_passes):
        prev = th
        for axis in (0, 1):
            span = spans[axis] / (2**p)
            if span <= grid.log_tol:
                continue
            lo_lim, hi_lim = (grid.alpha_range, grid.rho_range)[axis]
            centre = math.log(a if axis == 0 else r)
            lo = max(centre - span, math.log(lo_lim))
            hi = min(centre + span, math.log(hi_lim))
            if axis == 0:
                x, f = _golden(lambda s: ev.theta(math.exp(s), r, f"refine{p + 1}"), lo, hi, grid.log_tol)
                if f < th:
                    a, th = math.exp(x), f
            else:
                x, f = _golden(lambda s: ev.theta(a, math.exp(s), f"refine{p + 1}"), lo, hi, grid.log_tol)
                if f < th:
                    r, th = math.exp(x), f
        if prev - th <= 1e-3 * prev:
            break
    best = ev.best()
    return best, ev.rows


def export_landscape(rows: Sequence[LandscapeRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "rho", "theta", "status", "stage"])
        for row in rows:
            w.writerow([repr(row.alpha), repr(row.rho), repr(row.theta), row.status, row.stage])
