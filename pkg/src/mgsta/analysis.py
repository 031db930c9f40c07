"""Numerical checks of the analysis-side matrix inequalities for fixed gains.

Every check returns an eigenvalue margin: the distance of the evaluated
matrix to the wrong sign (``-lambda_max`` for negative-definite forms,
``lambda_min`` for positive-definite ones). Positive means pass. Scaled
margins are taken after a congruence that gives the matrix a unit diagonal,
which makes them independent of the units of the state components.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidScalar, NonstrictMargins, SingularZd
from .lmi import c_sigma, structural
from .model import PolytopicPlant, VertexMatrices, combine


@dataclass(frozen=True)
class Certificates:
    S: np.ndarray
    P: np.ndarray
    zd: np.ndarray
    alpha: float
    rho: float
    gamma: float

    def __post_init__(self):
        for name in ("S", "P"):
            M = np.asarray(getattr(self, name), float)
            M = 0.5 * (M + M.T)
            try:
                np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                raise InvalidScalar(f"{name} must be positive definite") from None
            object.__setattr__(self, name, M)
        object.__setattr__(self, "zd", np.asarray(self.zd, float).ravel())
        if not (self.alpha > 0 and self.rho > 0 and self.gamma > 0):
            raise InvalidScalar("alpha, rho and gamma must be positive")

    @classmethod
    def from_result(cls, res) -> "Certificates":
        return cls(np.linalg.inv(res.Q), np.linalg.inv(res.X), res.zd, res.alpha, res.rho, res.gamma)

    @property
    def kappa(self) -> float:
        return float(self.zd[3])


@dataclass(frozen=True)
class Margin:
    value: float
    scaled: float

    @property
    def passed(self) -> bool:
        return self.value > 0


def _unit_diagonal(M):
    """Congruence by diag(|M_ii|^-1/2); definiteness is unchanged."""
    dg = np.abs(np.diag(M))
    floor = max(dg.max(), 1.0) * 1e-300
    d = 1.0 / np.sqrt(np.maximum(dg, floor))
    return M * np.outer(d, d)


def _nd_margin(M) -> Margin:
    M = 0.5 * (M + M.T)
    w = np.linalg.eigvalsh(M)[-1]
    ws = np.linalg.eigvalsh(_unit_diagonal(M))[-1]
    return Margin(float(-w), float(-ws))


def _pd_margin(M) -> Margin:
    M = 0.5 * (M + M.T)
    w = np.linalg.eigvalsh(M)[0]
    ws = np.linalg.eigvalsh(_unit_diagonal(M))[0]
    return Margin(float(w), float(ws))


def _dims(v: VertexMatrices, S, P):
    r, n, m = v.dims
    if np.shape(S) != (r, r) or np.shape(P) != (2 * n, 2 * n):
        raise DimensionMismatch(f"S must be {r}x{r} and P {2 * n}x{2 * n}")
    return r, n, m


def lemma1_matrix(v: VertexMatrices, S, P, alpha, rho) -> np.ndarray:
    r, n, _ = _dims(v, S, P)
    G0 = structural(n).G0
    off = (G0.T @ v.E.T @ S) / alpha
    return np.block([[v.A.T @ S + S @ v.A + rho * S, off.T], [off, -rho * P]])


def verify_lemma1(v: VertexMatrices, S, P, alpha, rho) -> Margin:
    """Linear-subsystem decrease condition; passes when negative definite."""
    return _nd_margin(lemma1_matrix(v, S, P, alpha, rho))


def zd_matrix(zd, n: int) -> np.ndarray:
    zd = np.asarray(zd, float).ravel()
    if zd.shape != (4,):
        raise DimensionMismatch("zd must hold (mu, beta, pi, kappa)")
    return np.kron(np.diag(zd), np.eye(n))


def lemma2_matrix(v: VertexMatrices, K, P, zd, alpha, rho, gamma) -> np.ndarray:
    """``A_K'P + P A_K + P St' Zd St P + L' Zd^-1 L + rho P`` with ``L = [BK; G0/gamma; D G0/alpha; 0]``."""
    r, n, m = v.dims
    K = np.atleast_2d(np.asarray(K, float))
    if K.shape != (m, 2 * n) or np.shape(P) != (2 * n, 2 * n):
        raise DimensionMismatch("K must be m x 2n and P 2n x 2n")
    zd = np.asarray(zd, float).ravel()
    if np.any(zd <= 0):
        raise SingularZd("Z_d must be positive definite")
    s = structural(n)
    AK = s.A0 + s.B0(v.B) @ K
    St = s.stack()
    Zd = zd_matrix(zd, n)
    L = np.vstack([v.B @ K, s.G0 / gamma, v.D @ s.G0 / alpha, np.zeros((n, 2 * n))])
    Zinv = zd_matrix(1.0 / zd, n)
    return AK.T @ P + P @ AK + P @ St.T @ Zd @ St @ P + L.T @ Zinv @ L + rho * P


def coupling_matrix(v: VertexMatrices, K0, S, rho, kappa) -> np.ndarray:
    n = v.D.shape[0]
    C0 = v.C + v.B @ np.asarray(K0, float)
    return np.block([[rho * S, C0.T], [C0, kappa * np.eye(n)]])


def verify_lemma2(v: VertexMatrices, K0, K, P, S, zd, alpha, rho, gamma, kappa=None) -> tuple[Margin, Margin]:
    """(nonlinear-subsystem form, coupling form); pass when both margins are positive."""
    kappa = float(np.asarray(zd).ravel()[3]) if kappa is None else kappa
    m43 = _nd_margin(lemma2_matrix(v, K, P, zd, alpha, rho, gamma))
    m44 = _pd_margin(coupling_matrix(v, K0, S, rho, kappa))
    return m43, m44


def performance_matrices(v: VertexMatrices, cert: Certificates, K0, H, J, kappa=None):
    """Decrease-with-output form (negative definite) and coupling-with-output form (positive definite)."""
    S, P = cert.S, cert.P
    r, n, m = _dims(v, S, P)
    H = np.atleast_2d(np.asarray(H, float))
    J = np.atleast_2d(np.asarray(J, float))
    if H.shape[1] != r or J.shape != (H.shape[0], m):
        raise DimensionMismatch("H must be q x r and J q x m")
    q = H.shape[0]
    kappa = cert.kappa if kappa is None else kappa
    K0 = np.asarray(K0, float)
    Hc = H + J @ K0
    top = lemma1_matrix(v, S, P, cert.alpha, cert.rho)
    row = np.hstack([Hc, np.zeros((q, 2 * n))])
    M58 = np.block([[top, row.T], [row, -np.eye(q)]])
    C0 = v.C + v.B @ K0
    M59 = np.block(
        [
            [cert.rho * S, C0.T, Hc.T],
            [C0, kappa * np.eye(n), np.zeros((n, q))],
            [Hc, np.zeros((q, n)), cert.alpha * np.eye(q)],
        ]
    )
    return M58, M59


def verify_performance(v: VertexMatrices, cert: Certificates, K0, H, J, kappa=None) -> tuple[Margin, Margin]:
    M58, M59 = performance_matrices(v, cert, K0, H, J, kappa)
    return _nd_margin(M58), _pd_margin(M59)


# Lyapunov functions


def R_matrix(sigma, alpha: float, n: int | None = None) -> np.ndarray:
    """diag(c(sigma) I, I); at sigma = 0 the convention c := alpha is used."""
    sigma = np.asarray(sigma, float).ravel()
    n = len(sigma) if n is None else n
    c = alpha if not np.any(sigma) else c_sigma(sigma, alpha)
    return np.diag(np.r_[np.full(n, c), np.ones(n)])


def lyapunov_nu(zeta, sigma, z, S, P, alpha):
    """(v, V, nu) with v = zeta' S zeta, V = (R x)' P (R x), x = [sigma; z], nu = max(v, V)."""
    zeta = np.asarray(zeta, float)
    sigma = np.asarray(sigma, float)
    x = np.r_[sigma, np.asarray(z, float)]
    Rx = R_matrix(sigma, alpha) @ x
    v = float(zeta @ S @ zeta)
    V = float(Rx @ P @ Rx)
    return v, V, max(v, V)


# projector helpers


def pi_sigma(sigma) -> np.ndarray:
    s = np.asarray(sigma, float).ravel()
    nrm = np.linalg.norm(s)
    if nrm == 0:
        raise ValueError("projector undefined at sigma = 0")
    u = s / nrm
    return np.outer(u, u)


def rho_sigma(sigma, alpha: float) -> float:
    """1 / (c(sigma) sqrt|sigma|), which lies in (0, 1) for sigma != 0."""
    nrm = float(np.linalg.norm(sigma))
    return 1.0 / (c_sigma(sigma, alpha) * math.sqrt(nrm))


def gamma_sigma(sigma, alpha: float) -> np.ndarray:
    """G0' - rho_sigma E0 Pi_sigma (2n x n)."""
    s = structural(len(np.ravel(sigma)))
    return s.G0.T - rho_sigma(sigma, alpha) * s.E0 @ pi_sigma(sigma)


def disturbance_bound_chain(sigma, alpha: float, gamma: float) -> tuple[float, float, float]:
    """Three terms of the disturbance chain for x whose sigma-part is ``sigma``.

    Returns ``(c^-2 gamma^-2, rho_sigma^4 gamma^-2 |G0 R x|^2, gamma^-2 |G0 R x|^2)``;
    the first two agree and the third dominates.
    """
    c = c_sigma(sigma, alpha)
    g0rx = c * float(np.linalg.norm(sigma))
    rs = rho_sigma(sigma, alpha)
    return 1.0 / (c * c * gamma * gamma), rs**4 * g0rx**2 / gamma**2, g0rx**2 / gamma**2


# constants


@dataclass(frozen=True)
class StabilityConstants:
    eps_L: float
    eps_N: float
    theta_N: float
    nu_star: float

    @property
    def reach_rate(self) -> float:
        return 2.0 / self.eps_N

    def reach_time_bound(self, nu0: float) -> float:
        """(2/eps_N)(sqrt(nu0) - sqrt(nu*)), zero when already inside."""
        return max(0.0, self.reach_rate * (math.sqrt(nu0) - math.sqrt(self.nu_star)))


def stability_constants(cert: Certificates, margins: dict) -> StabilityConstants:
    """Conservative rates from the worst verified margins.

    ``margins`` needs ``"lemma2"`` (worst -lambda_max of the nonlinear form)
    and ``"performance"`` (worst -lambda_max of the decrease-with-output form).
    """
    m_n = float(margins["lemma2"])
    m_l = float(margins["performance"])
    if not (m_n > 0 and m_l > 0):
        raise NonstrictMargins(f"margins must be strictly positive, got {m_n}, {m_l}")
    big = max(np.linalg.eigvalsh(cert.S)[-1], np.linalg.eigvalsh(cert.P)[-1], 1.0)
    eps_L = m_l / big
    eps_N = m_n
    return StabilityConstants(
        eps_L=eps_L, eps_N=eps_N, theta_N=float(np.linalg.eigvalsh(cert.P)[-1]), nu_star=(eps_N / eps_L) ** 2
    )


# reports


@dataclass
class ReportRow:
    point: str
    inequality: str
    margin: float
    scaled_margin: float
    passed: bool


@dataclass
class VerificationReport:
    rows: list[ReportRow] = field(default_factory=list)
    delta_per_vertex: np.ndarray | None = None
    delta: float | None = None

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def worst(self, inequality: str) -> ReportRow:
        rows = [r for r in self.rows if r.inequality == inequality]
        return min(rows, key=lambda r: r.margin)

    def min_scaled(self) -> float:
        return min(r.scaled_margin for r in self.rows)

    def export_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point", "inequality", "margin", "scaled_margin", "pass"])
            for r in self.rows:
                w.writerow([r.point, r.inequality, repr(r.margin), repr(r.scaled_margin), int(r.passed)])


def random_simplex(N: int, count: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(N), size=count)


def verify_all(
    plant: PolytopicPlant,
    cert: Certificates,
    K0,
    K,
    H,
    J,
    samples: int = 16,
    seed: int = 0,
    min_scaled: float = 0.0,
) -> VerificationReport:
    """Every analysis form at all vertices and at ``samples`` random convex combinations.

    A row passes when its scaled margin exceeds ``min_scaled``.
    """
    points = [(f"vertex {i}", v) for i, v in enumerate(plant.vertices)]
    for k, lam in enumerate(random_simplex(plant.N, samples, seed)):
        lam = lam / lam.sum()
        points.append((f"sample {k}", combine(plant, lam)))
    rep = VerificationReport()
    K = np.atleast_2d(np.asarray(K, float))
    for label, v in points:
        m30 = verify_lemma1(v, cert.S, cert.P, cert.alpha, cert.rho)
        m43, m44 = verify_lemma2(v, K0, K, cert.P, cert.S, cert.zd, cert.alpha, cert.rho, cert.gamma)
        m58, m59 = verify_performance(v, cert, K0, H, J)
        for name, m in (("lemma1", m30), ("lemma2", m43), ("coupling", m44), ("performance", m58), ("performance_coupling", m59)):
            rep.rows.append(ReportRow(label, name, m.value, m.scaled, m.value > 0 and m.scaled > min_scaled))
    return rep
