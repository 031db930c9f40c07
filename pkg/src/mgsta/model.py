"""Uncertain regular-form plant and its polytopic uncertainty set.

The plant is::

    zeta' = A zeta + E sigma
    sigma' = C zeta + D sigma + B u + f(t)

with ``(A, E, C, D, B)`` ranging over the convex hull of a finite vertex list.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyVertexList, InvalidScalar, NotInSimplex

log = logging.getLogger(__name__)

RANK_RTOL = 1e-9
SIMPLEX_TOL = 1e-12


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # a flat list is read as a single row; scalar-dimension plants use [[x]]
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionMismatch(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class VertexMatrices:
    A: np.ndarray
    E: np.ndarray
    C: np.ndarray
    D: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        for name in "AECDB":
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))

    @property
    def dims(self) -> tuple[int, int, int]:
        """(r, n, m) implied by this vertex; raises on inconsistent shapes."""
        r = self.A.shape[0]
        n = self.D.shape[0]
        m = self.B.shape[1]
        expected = {"A": (r, r), "E": (r, n), "C": (n, r), "D": (n, n), "B": (n, m)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionMismatch(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}"
                )
        return r, n, m

    def as_tuple(self):
        return self.A, self.E, self.C, self.D, self.B


@dataclass(frozen=True)
class PolytopicPlant:
    vertices: tuple[VertexMatrices, ...]
    r: int
    n: int
    m: int

    @property
    def N(self) -> int:
        return len(self.vertices)

    def __len__(self):
        return len(self.vertices)

    def __getitem__(self, i) -> VertexMatrices:
        return self.vertices[i]

    def __iter__(self):
        return iter(self.vertices)


def make_polytope(vertex_list: Sequence) -> PolytopicPlant:
    """Validate a vertex list and wrap it as a :class:`PolytopicPlant`.

    Each entry is a :class:`VertexMatrices`, a mapping with keys ``A, E, C, D, B``
    or a 5-tuple in that order.
    """
    if vertex_list is None or len(vertex_list) == 0:
        raise EmptyVertexList("polytope needs at least one vertex")
    vertices = []
    for item in vertex_list:
        if isinstance(item, VertexMatrices):
            v = item
        elif isinstance(item, dict):
            v = VertexMatrices(**{k: item[k] for k in "AECDB"})
        else:
            v = VertexMatrices(*item)
        vertices.append(v)
    dims = vertices[0].dims
    for i, v in enumerate(vertices[1:], start=1):
        if v.dims != dims:
            raise DimensionMismatch(f"vertex {i} has dims {v.dims}, vertex 0 has {dims}")
    r, n, m = dims
    if m < n:
        raise DimensionMismatch(f"need m >= n for a full-row-rank B (n={n}, m={m})")
    return PolytopicPlant(tuple(vertices), r, n, m)


def combine(plant: PolytopicPlant, lam) -> VertexMatrices:
    """Convex combination of the vertex matrices with weights ``lam``."""
    lam = np.asarray(lam, dtype=float).ravel()
    if lam.shape != (plant.N,):
        raise NotInSimplex(f"expected {plant.N} weights, got {lam.shape}")
    if np.any(lam < 0) or abs(lam.sum() - 1.0) > SIMPLEX_TOL:
        raise NotInSimplex("weights must be nonnegative and sum to one")
    mats = []
    for name in "AECDB":
        stack = np.stack([getattr(v, name) for v in plant.vertices])
        mats.append(np.tensordot(lam, stack, axes=1))
    return VertexMatrices(*mats)


@dataclass(frozen=True)
class AssumptionReport:
    hurwitz: tuple[bool, ...]
    spectral_abscissa: tuple[float, ...]
    full_rank: tuple[bool, ...]
    min_singular_value: tuple[float, ...]
    common_lyapunov: bool | None = None
    warnings: tuple[str, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(self.hurwitz) and all(self.full_rank)


def _common_lyapunov(As: Sequence[np.ndarray]) -> bool:
    """Search S >= I with A_i^T S + S A_i <= -I for every vertex."""
    from cvxopt import matrix, solvers

    r = As[0].shape[0]
    pairs = [(i, j) for i in range(r) for j in range(i, r)]

    def basis(i, j):
        Eij = np.zeros((r, r))
        Eij[i, j] = Eij[j, i] = 1.0
        return Eij

    Gs, hs = [], []
    # S - I >= 0  ->  h - G y >= 0 with h = -I, G_k = -E_k
    Gs.append(matrix(np.column_stack([-basis(i, j).ravel() for i, j in pairs])))
    hs.append(matrix(-np.eye(r)))
    for A in As:
        cols = [(A.T @ basis(i, j) + basis(i, j) @ A).ravel() for i, j in pairs]
        Gs.append(matrix(np.column_stack(cols)))
        hs.append(matrix(-np.eye(r)))
    c = matrix(np.array([1.0 if i == j else 0.0 for i, j in pairs]))
    opts = {"show_progress": False, "maxiters": 100}
    try:
        sol = solvers.sdp(c, Gs=Gs, hs=hs, options=opts)
    except (ValueError, ArithmeticError):
        return False
    if sol["status"] != "optimal":
        return False
    y = np.array(sol["x"]).ravel()
    S = sum(v * basis(i, j) for v, (i, j) in zip(y, pairs))
    ok = np.linalg.eigvalsh(S).min() > 0
    for A in As:
        ok &= np.linalg.eigvalsh(A.T @ S + S @ A).max() < 0
    return bool(ok)


def check_assumptions(plant: PolytopicPlant, common_lyapunov: bool = True) -> AssumptionReport:
    """Vertex Hurwitz and rank tests, plus an optional common-Lyapunov certificate.

    Vertex Hurwitz stability is only necessary for every A in the hull to be
    Hurwitz. The common quadratic Lyapunov matrix, when found, is sufficient.
    Its absence is reported as a warning, never as a failure.
    """
    hurwitz, absc, rank_ok, smin = [], [], [], []
    for v in plant.vertices:
        a = float(np.linalg.eigvals(v.A).real.max())
        absc.append(a)
        hurwitz.append(a < 0)
        s = np.linalg.svd(v.B, compute_uv=False)
        smin.append(float(s[-1]) if len(s) == plant.n else 0.0)
        rank_ok.append(len(s) == plant.n and s[-1] > RANK_RTOL * max(s[0], np.finfo(float).tiny))
    notes = []
    cert = None
    if common_lyapunov and all(hurwitz):
        cert = _common_lyapunov([v.A for v in plant.vertices])
        if not cert:
            msg = "no common quadratic Lyapunov matrix found for the A vertices"
            notes.append(msg)
            warnings.warn(msg, stacklevel=2)
    return AssumptionReport(
        tuple(hurwitz), tuple(absc), tuple(rank_ok), tuple(smin), cert, tuple(notes)
    )


@dataclass(frozen=True)
class DesignConfig:
    """Design scalars, cost weights and the initial condition of the error system."""

    gamma: float
    alpha: float
    rho: float
    omega: float
    H: np.ndarray
    J: np.ndarray
    zeta0: np.ndarray
    sigma0: np.ndarray
    eta0: np.ndarray

    def __post_init__(self):
        for name in ("gamma", "alpha", "rho", "omega"):
            val = float(getattr(self, name))
            if not (val > 0 and np.isfinite(val)):
                raise InvalidScalar(f"{name} must be positive, got {val}")
            object.__setattr__(self, name, val)
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        J = np.atleast_2d(np.asarray(self.J, dtype=float))
        if H.shape[0] != J.shape[0]:
            raise DimensionMismatch(f"H has {H.shape[0]} rows but J has {J.shape[0]}")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "J", J)
        for name in ("zeta0", "sigma0", "eta0"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).ravel())

    @property
    def q(self) -> int:
        return self.H.shape[0]

    def validate_for(self, plant: PolytopicPlant) -> None:
        if self.H.shape[1] != plant.r or self.J.shape[1] != plant.m:
            raise DimensionMismatch(
                f"H must be q x {plant.r} and J q x {plant.m}, got {self.H.shape}, {self.J.shape}"
            )
        if self.zeta0.shape != (plant.r,):
            raise DimensionMismatch(f"zeta0 must have length {plant.r}")
        if self.sigma0.shape != (plant.n,) or self.eta0.shape != (plant.n,):
            raise DimensionMismatch(f"sigma0 and eta0 must have length {plant.n}")

    def replace(self, **changes) -> "DesignConfig":
        from dataclasses import replace

        return replace(self, **changes)
