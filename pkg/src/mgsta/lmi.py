"""Affine symmetric-matrix expressions for the gain-synthesis LMIs.

Decision variables are laid out as one flat vector (see :class:`VariableLayout`)::

    Q (sym r x r) | X (sym 2n x 2n) | Y (m x 2n) | W (m x r) | mu beta pi kappa | theta

Symmetric matrices are parameterised by their upper triangle; an off-diagonal
scalar enters both mirrored positions with coefficient one, so evaluating the
layout reproduces the symmetric matrix exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .errors import DimensionMismatch, InvalidScalar, LayoutMismatch, MissingVariable
from .model import PolytopicPlant, VertexMatrices

SYM_RTOL = 1e-14
MARGIN_REL = 1e-8


class Sense(Enum):
    NEGATIVE_DEFINITE = "nd"
    POSITIVE_DEFINITE = "pd"


ND = Sense.NEGATIVE_DEFINITE
PD = Sense.POSITIVE_DEFINITE


def _sym_pairs(k: int):
    return [(i, j) for i in range(k) for j in range(i, k)]


@dataclass(frozen=True)
class VariableLayout:
    r: int
    n: int
    m: int
    slices: dict = field(init=False, repr=False, compare=False)

    ZD_NAMES = ("mu", "beta", "pi", "kappa")

    def __post_init__(self):
        r, n, m = self.r, self.n, self.m
        sizes = [
            ("Q", r * (r + 1) // 2),
            ("X", n * (2 * n + 1)),
            ("Y", 2 * n * m),
            ("W", m * r),
            ("mu", 1),
            ("beta", 1),
            ("pi", 1),
            ("kappa", 1),
            ("theta", 1),
        ]
        slices, start = {}, 0
        for name, size in sizes:
            slices[name] = slice(start, start + size)
            start += size
        object.__setattr__(self, "slices", slices)

    @classmethod
    def for_plant(cls, plant: PolytopicPlant) -> "VariableLayout":
        return cls(plant.r, plant.n, plant.m)

    @property
    def size(self) -> int:
        return self.slices["theta"].stop

    def index(self, name: str) -> int:
        """Index of a scalar variable (mu, beta, pi, kappa, theta)."""
        s = self.slices[name]
        if s.stop - s.start != 1:
            raise KeyError(f"{name} is not a scalar variable")
        return s.start

    @property
    def theta(self) -> int:
        return self.index("theta")

    @property
    def zd_indices(self) -> tuple[int, int, int, int]:
        return tuple(self.index(k) for k in self.ZD_NAMES)

    def sym_indices(self, name: str) -> list[tuple[int, int, int]]:
        """(flat index, row, col) for the upper triangle of Q or X."""
        k = self.r if name == "Q" else 2 * self.n
        base = self.slices[name].start
        return [(base + p, i, j) for p, (i, j) in enumerate(_sym_pairs(k))]

    def pack(self, Q, X, Y, W, zd, theta) -> np.ndarray:
        y = np.zeros(self.size)
        Q, X = np.asarray(Q, float), np.asarray(X, float)
        for idx, i, j in self.sym_indices("Q"):
            y[idx] = Q[i, j]
        for idx, i, j in self.sym_indices("X"):
            y[idx] = X[i, j]
        y[self.slices["Y"]] = np.asarray(Y, float).ravel()
        y[self.slices["W"]] = np.asarray(W, float).ravel()
        y[[self.index(k) for k in self.ZD_NAMES]] = np.asarray(zd, float).ravel()
        y[self.theta] = theta
        return y

    def unpack(self, y) -> dict:
        y = np.asarray(y, float)
        if y.shape != (self.size,):
            raise LayoutMismatch(f"expected {self.size} values, got {y.shape}")
        r, n, m = self.r, self.n, self.m
        Q = np.zeros((r, r))
        X = np.zeros((2 * n, 2 * n))
        for idx, i, j in self.sym_indices("Q"):
            Q[i, j] = Q[j, i] = y[idx]
        for idx, i, j in self.sym_indices("X"):
            X[i, j] = X[j, i] = y[idx]
        return {
            "Q": Q,
            "X": X,
            "Y": y[self.slices["Y"]].reshape(m, 2 * n),
            "W": y[self.slices["W"]].reshape(m, r),
            "zd": y[[self.index(k) for k in self.ZD_NAMES]].copy(),
            "theta": float(y[self.theta]),
        }


class Affine:
    """Matrix-valued affine function stored as a coefficient tensor.

    ``coef[0]`` is the constant term and ``coef[1 + j]`` multiplies variable ``j``.
    Only used while assembling expressions.
    """

    __slots__ = ("coef",)
    # let ndarray @ Affine dispatch to __rmatmul__
    __array_ufunc__ = None

    def __init__(self, coef: np.ndarray):
        self.coef = coef

    @property
    def shape(self):
        return self.coef.shape[1:]

    @classmethod
    def const(cls, nvar: int, M) -> "Affine":
        M = np.atleast_2d(np.asarray(M, float))
        coef = np.zeros((nvar + 1,) + M.shape)
        coef[0] = M
        return cls(coef)

    @classmethod
    def zeros(cls, nvar: int, rows: int, cols: int) -> "Affine":
        return cls(np.zeros((nvar + 1, rows, cols)))

    def __add__(self, other):
        if isinstance(other, Affine):
            return Affine(self.coef + other.coef)
        out = self.coef.copy()
        out[0] += other
        return Affine(out)

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.coef)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, s: float):
        return Affine(self.coef * float(s))

    __rmul__ = __mul__

    def __truediv__(self, s: float):
        return Affine(self.coef / float(s))

    def __matmul__(self, M):
        return Affine(self.coef @ np.asarray(M, float))

    def __rmatmul__(self, M):
        return Affine(np.einsum("ij,kjl->kil", np.asarray(M, float), self.coef))

    @property
    def T(self):
        return Affine(self.coef.transpose(0, 2, 1))


def affine_block(rows) -> Affine:
    """``np.block`` for :class:`Affine` entries (all entries must be Affine)."""
    return Affine(np.concatenate([np.concatenate([b.coef for b in row], axis=2) for row in rows], axis=1))


class VariableSet:
    """Affine views of the layout's matrix variables."""

    def __init__(self, layout: VariableLayout):
        self.layout = layout
        nv = layout.size
        r, n, m = layout.r, layout.n, layout.m
        self.nvar = nv

        def sym(name, k):
            a = Affine.zeros(nv, k, k)
            for idx, i, j in layout.sym_indices(name):
                a.coef[1 + idx, i, j] = 1.0
                a.coef[1 + idx, j, i] = 1.0
            return a

        def full(name, rows, cols):
            a = Affine.zeros(nv, rows, cols)
            base = layout.slices[name].start
            for p in range(rows * cols):
                a.coef[1 + base + p, p // cols, p % cols] = 1.0
            return a

        def scalar_eye(name, k):
            a = Affine.zeros(nv, k, k)
            a.coef[1 + layout.index(name)] = np.eye(k)
            return a

        self.Q = sym("Q", r)
        self.X = sym("X", 2 * n)
        self.Y = full("Y", m, 2 * n)
        self.W = full("W", m, r)
        self.theta = scalar_eye("theta", 1)
        self.mu, self.beta, self.pi, self.kappa = (scalar_eye(k, n) for k in VariableLayout.ZD_NAMES)

    def const(self, M) -> Affine:
        return Affine.const(self.nvar, M)

    def zeros(self, rows, cols) -> Affine:
        return Affine.zeros(self.nvar, rows, cols)

    def Zd(self) -> Affine:
        z = self.zeros(self.layout.n, self.layout.n)
        return affine_block(
            [
                [self.mu, z, z, z],
                [z, self.beta, z, z],
                [z, z, self.pi, z],
                [z, z, z, self.kappa],
            ]
        )


@dataclass(frozen=True)
class AffineMatrixExpr:
    """Symmetric ``const + sum_j y_j coeffs[j]`` with a definiteness requirement."""

    const: np.ndarray
    coeffs: Mapping[int, np.ndarray]
    sense: Sense
    nvar: int
    name: str = ""

    @property
    def size(self) -> int:
        return self.const.shape[0]

    @classmethod
    def from_affine(cls, aff: Affine, sense: Sense, name: str = "") -> "AffineMatrixExpr":
        coef = aff.coef
        rows, cols = coef.shape[1:]
        if rows != cols:
            raise DimensionMismatch(f"expression {name!r} is not square: {rows}x{cols}")
        scale = max(np.abs(coef).max(), 1.0)
        asym = np.abs(coef - coef.transpose(0, 2, 1)).max()
        if asym > SYM_RTOL * scale:
            raise DimensionMismatch(f"expression {name!r} is not symmetric (residual {asym:.3g})")
        coef = 0.5 * (coef + coef.transpose(0, 2, 1))
        nz = np.flatnonzero(np.abs(coef[1:]).reshape(coef.shape[0] - 1, -1).max(axis=1) > 0)
        coeffs = {int(j): coef[1 + j].copy() for j in nz}
        return cls(coef[0].copy(), coeffs, sense, coef.shape[0] - 1, name)

    def scale(self) -> float:
        """Largest Frobenius norm among the constant and coefficient matrices."""
        norms = [np.linalg.norm(self.const)] + [np.linalg.norm(c) for c in self.coeffs.values()]
        return float(max(norms))

    def margin(self) -> float:
        """Strictness margin used when the expression is handed to a solver."""
        return MARGIN_REL * (1.0 + self.scale())

    def dump(self) -> str:
        lines = [f"expr {self.name or '?'} size={self.size} sense={self.sense.value} nvar={self.nvar}"]
        lines.append(f"  const nnz={int(np.count_nonzero(self.const))}")
        for j, c in sorted(self.coeffs.items()):
            lines.append(f"  var {j} nnz={int(np.count_nonzero(c))}")
        return "\n".join(lines)


def eval_expr(expr: AffineMatrixExpr, assignment) -> np.ndarray:
    """Dense value of ``expr`` at ``assignment`` (array of length nvar or a mapping)."""
    if isinstance(assignment, Mapping):
        get = assignment.__getitem__
        missing = [j for j in expr.coeffs if j not in assignment]
    else:
        values = np.asarray(assignment, float).ravel()
        missing = [j for j in expr.coeffs if j >= values.shape[0]]
        get = values.__getitem__
    if missing:
        raise MissingVariable(f"assignment lacks variables {missing}")
    out = expr.const.copy()
    for j, c in expr.coeffs.items():
        out += get(j) * c
    return out


# structural matrices of the nonlinear subsystem


@dataclass(frozen=True)
class StructuralMatrices:
    A0: np.ndarray
    E0: np.ndarray
    F0: np.ndarray
    G0: np.ndarray

    def B0(self, B) -> np.ndarray:
        B = np.asarray(B, float)
        return np.vstack([B, np.zeros_like(B)])

    def stack(self) -> np.ndarray:
        """[E0^T; F0^T; G0; G0], the 4n x 2n matrix weighted by Z_d."""
        return np.vstack([self.E0.T, self.F0.T, self.G0, self.G0])


def structural(n: int) -> StructuralMatrices:
    I, Z = np.eye(n), np.zeros((n, n))
    return StructuralMatrices(
        A0=np.block([[Z, Z], [I, Z]]),
        E0=np.vstack([0.5 * I, Z]),
        F0=np.vstack([Z, I]),
        G0=np.hstack([I, Z]),
    )


def c_sigma(sigma, alpha: float, sigma_reg: float = 0.0) -> float:
    """c(sigma) = 1/sqrt(|sigma|) + alpha; ``inf`` at sigma = 0 unless regularised."""
    s = float(np.linalg.norm(sigma))
    s = max(s, sigma_reg)
    if s == 0.0:
        return np.inf
    return 1.0 / np.sqrt(s) + alpha


def R_sigma_x(sigma, z, alpha: float) -> np.ndarray:
    """R(sigma) x for x = [sigma; z].

    At sigma = 0 the product c(sigma) sigma vanishes, so the first block is set to
    zero (equivalently R(0) = diag(alpha I, I) acting on a zero sigma).
    """
    sigma = np.asarray(sigma, float)
    z = np.asarray(z, float)
    if not np.any(sigma):
        return np.concatenate([np.zeros_like(sigma), z])
    return np.concatenate([c_sigma(sigma, alpha) * sigma, z])


# builders


def _vertex(plant: PolytopicPlant, vertex) -> VertexMatrices:
    if isinstance(vertex, VertexMatrices):
        return vertex
    return plant.vertices[vertex]


def _positive(**scalars):
    for name, val in scalars.items():
        if not (np.isfinite(val) and val > 0):
            raise InvalidScalar(f"{name} must be positive, got {val}")


def _check_layout(plant: PolytopicPlant, layout: VariableLayout):
    if (layout.r, layout.n, layout.m) != (plant.r, plant.n, plant.m):
        raise LayoutMismatch(
            f"layout dims {(layout.r, layout.n, layout.m)} vs plant {(plant.r, plant.n, plant.m)}"
        )


def _check_cost(plant, H, J):
    H = np.atleast_2d(np.asarray(H, float))
    J = np.atleast_2d(np.asarray(J, float))
    if H.shape[0] != J.shape[0] or H.shape[1] != plant.r or J.shape[1] != plant.m:
        raise DimensionMismatch(f"H {H.shape} / J {J.shape} inconsistent with r={plant.r}, m={plant.m}")
    return H, J


def build_lmi65(plant, vertex_i, alpha, rho, gamma, layout) -> AffineMatrixExpr:
    """Nonlinear-subsystem decrease condition at one vertex (size 6n, negative definite)."""
    _positive(alpha=alpha, rho=rho, gamma=gamma)
    _check_layout(plant, layout)
    v = _vertex(plant, vertex_i)
    n = plant.n
    s = structural(n)
    vs = VariableSet(layout)
    X, Y = vs.X, vs.Y
    Zd = vs.Zd()
    B0 = s.B0(v.B)
    St = s.stack()
    top = s.A0 @ X + B0 @ Y
    top = top + top.T + rho * X + St.T @ Zd @ St
    off = affine_block(
        [
            [v.B @ Y],
            [(s.G0 @ X) / gamma],
            [(v.D @ s.G0 @ X) / alpha],
            [vs.zeros(n, 2 * n)],
        ]
    )
    M = affine_block([[top, off.T], [off, -Zd]])
    return AffineMatrixExpr.from_affine(M, ND, "lmi65")


def build_lmi66(plant, vertex_i, alpha, rho, H, J, layout) -> AffineMatrixExpr:
    """Linear-subsystem decrease with performance output (size r + 2n + q, negative definite)."""
    _positive(alpha=alpha, rho=rho)
    _check_layout(plant, layout)
    H, J = _check_cost(plant, H, J)
    v = _vertex(plant, vertex_i)
    r, n, q = plant.r, plant.n, H.shape[0]
    s = structural(n)
    vs = VariableSet(layout)
    Q, X, W = vs.Q, vs.X, vs.W
    tl = v.A @ Q
    tl = tl + tl.T + rho * Q
    mid = (X @ (s.G0.T @ v.E.T)) / alpha
    low = H @ Q + J @ W
    M = affine_block(
        [
            [tl, mid.T, low.T],
            [mid, -rho * X, vs.zeros(2 * n, q)],
            [low, vs.zeros(q, 2 * n), vs.const(-np.eye(q))],
        ]
    )
    return AffineMatrixExpr.from_affine(M, ND, "lmi66")


def build_lmi67(plant, vertex_i, rho, alpha, kappa_index, H, J, layout) -> AffineMatrixExpr:
    """Coupling/performance condition (size r + n + q, positive definite)."""
    _positive(alpha=alpha, rho=rho)
    _check_layout(plant, layout)
    if kappa_index is not None and kappa_index != layout.index("kappa"):
        raise LayoutMismatch(f"kappa index {kappa_index} does not match layout")
    H, J = _check_cost(plant, H, J)
    v = _vertex(plant, vertex_i)
    n, q = plant.n, H.shape[0]
    vs = VariableSet(layout)
    Q, W = vs.Q, vs.W
    mid = v.C @ Q + v.B @ W
    low = H @ Q + J @ W
    M = affine_block(
        [
            [rho * Q, mid.T, low.T],
            [mid, vs.kappa, vs.zeros(n, q)],
            [low, vs.zeros(q, n), vs.const(alpha * np.eye(q))],
        ]
    )
    return AffineMatrixExpr.from_affine(M, PD, "lmi67")


def build_lmi68(zeta0, x0_scaled, layout) -> tuple[AffineMatrixExpr, AffineMatrixExpr]:
    """Initial-condition bounds theta >= zeta0' Q^-1 zeta0 and theta >= x0s' X^-1 x0s."""
    zeta0 = np.asarray(zeta0, float).reshape(-1, 1)
    x0s = np.asarray(x0_scaled, float).reshape(-1, 1)
    if zeta0.shape[0] != layout.r or x0s.shape[0] != 2 * layout.n:
        raise DimensionMismatch("initial condition sizes do not match the layout")
    vs = VariableSet(layout)
    out = []
    for vec, mat, tag in ((zeta0, vs.Q, "lmi68_zeta"), (x0s, vs.X, "lmi68_x")):
        c = vs.const(vec)
        M = affine_block([[vs.theta, c.T], [c, mat]])
        out.append(AffineMatrixExpr.from_affine(M, PD, tag))
    return out[0], out[1]


def build_lmi72(omega, layout) -> AffineMatrixExpr:
    """Gain-magnitude bound [[omega I, Y], [Y', X]] > 0 (size m + 2n)."""
    _positive(omega=omega)
    vs = VariableSet(layout)
    M = affine_block([[vs.const(omega * np.eye(layout.m)), vs.Y], [vs.Y.T, vs.X]])
    return AffineMatrixExpr.from_affine(M, PD, "lmi72")


def floor_exprs(layout: VariableLayout) -> list[AffineMatrixExpr]:
    """Implicit positivity requirements Q > 0, X > 0 and Z_d > 0."""
    vs = VariableSet(layout)
    out = [
        AffineMatrixExpr.from_affine(vs.Q, PD, "floor_Q"),
        AffineMatrixExpr.from_affine(vs.X, PD, "floor_X"),
    ]
    for name in VariableLayout.ZD_NAMES:
        a = Affine.zeros(layout.size, 1, 1)
        a.coef[1 + layout.index(name)] = 1.0
        out.append(AffineMatrixExpr.from_affine(a, PD, f"floor_{name}"))
    return out
