from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import InvalidParams, NonFinite, StepTooLarge
from ..model import VertexMatrices
from . import _accel, _kernel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-4
    horizon: float = 30.0
    sigma_reg: float = 1e-12
    record_stride: int = 100

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon > self.dt and self.sigma_reg > 0):
            raise InvalidParams("need dt > 0, horizon > dt and sigma_reg > 0")
        if int(self.record_stride) < 1:
            raise InvalidParams("record_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


class DisturbanceSpec:
    """Matched disturbance f(t) with its derivative and a declared bound on |f'|."""

    delta_declared: float | None = None

    def f_and_fdot(self, t: float, w: np.ndarray | None = None):
        raise NotImplementedError


@dataclass
class LinearExosystem(DisturbanceSpec):
    """``w' = Aw w + Bw s(t)``, ``f = Cw w + Dw s(t)`` with sinusoidal sources.

    Each source is ``amp sin(freq t + phase) + offset``. A pure sinusoid is an
    exosystem with no state (``Aw`` is 0x0).
    """

    Aw: np.ndarray
    Bw: np.ndarray
    Cw: np.ndarray
    Dw: np.ndarray
    amp: np.ndarray
    freq: np.ndarray
    phase: np.ndarray
    offset: np.ndarray
    w0: np.ndarray
    delta_declared: float | None = None

    def __post_init__(self):
        for name in ("Aw", "Bw", "Cw", "Dw"):
            setattr(self, name, np.ascontiguousarray(np.atleast_2d(np.asarray(getattr(self, name), float))))
        for name in ("amp", "freq", "phase", "offset", "w0"):
            setattr(self, name, np.ascontiguousarray(np.asarray(getattr(self, name), float).ravel()))
        p, k = len(self.w0), len(self.amp)
        if p == 0:
            self.Aw = np.zeros((0, 0))
            self.Bw = np.zeros((0, k))
            self.Cw = np.zeros((self.Dw.shape[0], 0))
        shapes_ok = (
            self.Aw.shape == (p, p)
            and self.Bw.shape == (p, k)
            and self.Cw.shape[1] == p
            and self.Dw.shape == (self.Cw.shape[0], k)
            and all(len(getattr(self, a)) == k for a in ("freq", "phase", "offset"))
        )
        if not shapes_ok:
            raise InvalidParams("inconsistent exosystem dimensions")

    @classmethod
    def sinusoid(cls, amp, freq, phase=None, offset=None, delta_declared=None):
        """``f_i(t) = amp_i sin(freq_i t + phase_i) + offset_i`` (no state)."""
        amp = np.atleast_1d(np.asarray(amp, float))
        k = len(amp)
        freq = np.broadcast_to(np.asarray(freq, float), (k,))
        phase = np.zeros(k) if phase is None else np.broadcast_to(np.asarray(phase, float), (k,))
        offset = np.zeros(k) if offset is None else np.broadcast_to(np.asarray(offset, float), (k,))
        return cls(
            Aw=np.zeros((0, 0)), Bw=np.zeros((0, k)), Cw=np.zeros((k, 0)), Dw=np.eye(k),
            amp=amp, freq=freq, phase=phase, offset=offset, w0=np.zeros(0), delta_declared=delta_declared,
        )

    @classmethod
    def zero(cls, n: int):
        return cls.sinusoid(np.zeros(n), np.zeros(n))

    @property
    def n_states(self) -> int:
        return len(self.w0)

    @property
    def n_out(self) -> int:
        return self.Dw.shape[0]

    def sources(self, t):
        return self.amp * np.sin(self.freq * t + self.phase) + self.offset

    def source_rates(self, t):
        return self.amp * self.freq * np.cos(self.freq * t + self.phase)

    def evaluate(self, t: float, w: np.ndarray):
        s = self.sources(t)
        f = self.Cw @ w + self.Dw @ s
        fdot = self.Cw @ (self.Aw @ w + self.Bw @ s) + self.Dw @ self.source_rates(t)
        return f, fdot

    def f_and_fdot(self, t, w=None):
        return self.evaluate(t, self.w0 if w is None else w)

    def output_series(self, t: np.ndarray, W: np.ndarray) -> np.ndarray:
        S = self.amp * np.sin(np.outer(t, self.freq) + self.phase) + self.offset
        return W @ self.Cw.T + S @ self.Dw.T


@dataclass
class CallableDisturbance(DisturbanceSpec):
    """Arbitrary ``func(t) -> (f, fdot)``; integrated on the numpy path only."""

    func: Callable[[float], tuple[np.ndarray, np.ndarray]]
    delta_declared: float | None = None

    def f_and_fdot(self, t, w=None):
        f, fd = self.func(t)
        return np.atleast_1d(np.asarray(f, float)), np.atleast_1d(np.asarray(fd, float))


@dataclass
class TrajectoryRecord:
    t: np.ndarray
    zeta: np.ndarray
    sigma: np.ndarray
    eta: np.ndarray
    w: np.ndarray
    u: np.ndarray
    xi: np.ndarray
    f: np.ndarray
    z: np.ndarray
    zbar: np.ndarray
    u_st: np.ndarray
    cost: np.ndarray
    v: np.ndarray | None = None
    V: np.ndarray | None = None
    nu: np.ndarray | None = None
    fdot_max: float = 0.0
    delta_declared: float | None = None
    failure: str | None = None
    t_s: float | None = None
    dt: float = 0.0
    backend: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def compliant(self) -> bool:
        """Measured |f'| stayed within the declared bound (vacuous if none declared)."""
        if self.delta_declared is None:
            return True
        return self.fdot_max <= self.delta_declared

    def columns(self) -> tuple[list[str], np.ndarray]:
        def names(prefix, arr):
            return [f"{prefix}_{i + 1}" for i in range(arr.shape[1])]

        header = ["t"]
        cols = [self.t[:, None]]
        for prefix, arr in (("zeta", self.zeta), ("sigma", self.sigma), ("eta", self.eta), ("u", self.u), ("xi", self.xi)):
            header += names(prefix, arr)
            cols.append(arr)
        for name in ("v", "V", "nu"):
            arr = getattr(self, name)
            header.append(name)
            cols.append((np.full(len(self.t), np.nan) if arr is None else arr)[:, None])
        header.append("cost_integral")
        cols.append(self.cost[:, None])
        return header, np.hstack(cols)


def c_of_sigma(sigma, alpha: float, sigma_reg: float) -> float:
    return 1.0 / np.sqrt(max(float(np.linalg.norm(sigma)), sigma_reg)) + alpha


def control_law(zeta, sigma, eta, K0, K1, K2, alpha, sigma_reg=1e-12):
    """``u = K0 zeta + c(sigma) K1 sigma + K2 eta`` with a floored |sigma| inside c."""
    c = c_of_sigma(sigma, alpha, sigma_reg)
    return np.asarray(K0) @ zeta + c * (np.asarray(K1) @ sigma) + np.asarray(K2) @ eta


def _gains(gains):
    if isinstance(gains, dict):
        return (np.asarray(gains["K0"], float), np.asarray(gains["K1"], float), np.asarray(gains["K2"], float), float(gains["alpha"]))
    return (np.asarray(gains.K0, float), np.asarray(gains.K1, float), np.asarray(gains.K2, float), float(gains.alpha))


def rhs(state, t, plant_instance: VertexMatrices, gains, disturbance: DisturbanceSpec, sigma_reg=1e-12):
    """Closed-loop vector field for ``state = [zeta; sigma; eta; w]``.

    ``w`` holds exosystem states for a :class:`LinearExosystem` and is empty
    otherwise.
    """
    A, E, C, D, B = plant_instance.as_tuple()
    K0, K1, K2, alpha = _gains(gains)
    r, n = A.shape[0], D.shape[0]
    x = np.asarray(state, float)
    if not np.all(np.isfinite(x)):
        raise NonFinite("state has non-finite entries")
    zeta, sigma, eta, w = x[:r], x[r : r + n], x[r + n : r + 2 * n], x[r + 2 * n :]
    c = c_of_sigma(sigma, alpha, sigma_reg)
    u = K0 @ zeta + c * (K1 @ sigma) + K2 @ eta
    if isinstance(disturbance, LinearExosystem):
        s = disturbance.sources(t)
        f = disturbance.Cw @ w + disturbance.Dw @ s
        dw = disturbance.Aw @ w + disturbance.Bw @ s
    else:
        f, _ = disturbance.f_and_fdot(t)
        dw = np.zeros(0)
    return np.concatenate([A @ zeta + E @ sigma, C @ zeta + D @ sigma + B @ u + f, c * c * sigma, dw])


def _integrate_callable(x0, plant, gains, dist, cfg, Hc):
    """Numpy RK4 for callable disturbances; mirrors the compiled kernel."""
    n_steps, h, stride = cfg.n_steps, cfg.dt, cfg.record_stride
    out = np.zeros((n_steps // stride + 1, len(x0)))
    cost = np.zeros(n_steps // stride + 1)
    r = plant.A.shape[0]
    x = x0.copy()
    out[0] = x
    g_prev = float(np.sum((Hc @ x[:r]) ** 2))
    acc, rec = 0.0, 1
    fmax = float(np.linalg.norm(dist.f_and_fdot(0.0)[1]))

    def F(t, y):
        return rhs(y, t, plant, gains, dist, cfg.sigma_reg)

    for k in range(n_steps):
        t = k * h
        k1 = F(t, x)
        k2 = F(t + h / 2, x + h / 2 * k1)
        k3 = F(t + h / 2, x + h / 2 * k2)
        k4 = F(t + h, x + h * k3)
        xn = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(xn)):
            return _kernel.NONFINITE, rec, fmax, k, out, cost
        if np.linalg.norm(xn) > _kernel.GROWTH_LIMIT * max(np.linalg.norm(x), 1.0):
            return _kernel.TOO_LARGE, rec, fmax, k, out, cost
        x = xn
        g = float(np.sum((Hc @ x[:r]) ** 2))
        acc += 0.5 * h * (g_prev + g)
        g_prev = g
        fmax = max(fmax, float(np.linalg.norm(dist.f_and_fdot(t + h)[1])))
        if (k + 1) % stride == 0:
            out[rec] = x
            cost[rec] = acc
            rec += 1
    return _kernel.OK, rec, fmax, n_steps, out, cost


def simulate(
    plant_instance: VertexMatrices,
    gains,
    disturbance: DisturbanceSpec,
    sim_config: SimConfig | None = None,
    *,
    zeta0,
    sigma0,
    eta0=None,
    H=None,
    J=None,
    certificates=None,
    backend: str | None = None,
    on_blowup: str = "raise",
    tol_sigma: float = 1e-3,
    tol_zbar: float = 1e-2,
) -> TrajectoryRecord:
    """Integrate the closed loop with fixed-step RK4 and post-process the samples.

    ``certificates`` (anything with ``S`` and ``P``) enables the Lyapunov
    traces ``v``, ``V`` and ``nu``. ``on_blowup="truncate"`` returns the record
    up to the last good sample with ``failure`` set instead of raising.
    """
    cfg = sim_config or SimConfig()
    A, E, C, D, B = plant_instance.as_tuple()
    K0, K1, K2, alpha = _gains(gains)
    r, n, m = A.shape[0], D.shape[0], B.shape[1]
    H = np.zeros((0, r)) if H is None else np.atleast_2d(np.asarray(H, float))
    J = np.zeros((H.shape[0], m)) if J is None else np.atleast_2d(np.asarray(J, float))
    Hc = np.ascontiguousarray(H + J @ K0)
    eta0 = np.zeros(n) if eta0 is None else np.asarray(eta0, float)
    if isinstance(disturbance, LinearExosystem):
        w0 = disturbance.w0
    else:
        w0 = np.zeros(0)
    x0 = np.concatenate([np.asarray(zeta0, float), np.asarray(sigma0, float), eta0, w0])
    n_rec = cfg.n_steps // cfg.record_stride + 1

    if isinstance(disturbance, LinearExosystem):
        backend = backend or _accel.default_backend()
        integrate = _kernel.get_integrator(backend)
        out_x = np.zeros((n_rec, len(x0)))
        out_cost = np.zeros(n_rec)
        d = disturbance
        status, n_ok, fmax, k_fail = integrate(
            x0, *(np.ascontiguousarray(M) for M in (A, E, C, D, B, K0, K1, K2)), alpha, cfg.sigma_reg,
            d.Aw, d.Bw, d.Cw, d.Dw, d.amp, d.freq, d.phase, d.offset,
            Hc, cfg.dt, cfg.n_steps, cfg.record_stride, out_x, out_cost,
        )
    else:
        backend = "numpy"
        status, n_ok, fmax, k_fail, out_x, out_cost = _integrate_callable(
            x0, plant_instance, gains, disturbance, cfg, Hc
        )

    failure = None
    if status != _kernel.OK:
        kind = NonFinite if status == _kernel.NONFINITE else StepTooLarge
        msg = f"{kind.__name__} at t = {k_fail * cfg.dt:.6g}"
        if on_blowup == "raise":
            raise kind(msg)
        log.warning("simulation stopped: %s", msg)
        failure = msg
    X = out_x[:n_ok]
    t = np.arange(n_ok) * cfg.dt * cfg.record_stride
    rec = _postprocess(t, X, out_cost[:n_ok], plant_instance, (K0, K1, K2, alpha), disturbance, cfg, Hc, certificates)
    rec.fdot_max = float(fmax)
    rec.delta_declared = disturbance.delta_declared
    rec.failure = failure
    rec.dt = cfg.dt
    rec.backend = backend
    rec.extra["sigma_reg"] = cfg.sigma_reg
    rec.t_s = detect_sliding(rec, tol_sigma, tol_zbar) if failure is None else None
    return rec


def _postprocess(t, X, cost, plant, gains, dist, cfg, Hc, certificates) -> TrajectoryRecord:
    A, E, C, D, B = plant.as_tuple()
    K0, K1, K2, alpha = gains
    r, n = A.shape[0], D.shape[0]
    zeta, sigma, eta, W = X[:, :r], X[:, r : r + n], X[:, r + n : r + 2 * n], X[:, r + 2 * n :]
    norms = np.maximum(np.linalg.norm(sigma, axis=1), cfg.sigma_reg)
    c = 1.0 / np.sqrt(norms) + alpha
    u = zeta @ K0.T + c[:, None] * (sigma @ K1.T) + eta @ K2.T
    if isinstance(dist, LinearExosystem):
        f = dist.output_series(t, W)
    else:
        f = np.array([dist.f_and_fdot(tt)[0] for tt in t]).reshape(len(t), n)
    BK2 = B @ K2
    try:
        Minv = np.linalg.inv(BK2)
    except np.linalg.LinAlgError:
        Minv = np.full((n, n), np.nan)
    C0 = C + B @ K0
    z = eta + f @ Minv.T
    zbar = z + zeta @ (Minv @ C0).T
    Rx = np.hstack([c[:, None] * sigma, z])
    u_st = Rx @ np.hstack([K1, K2]).T
    rec = TrajectoryRecord(
        t=t, zeta=zeta, sigma=sigma, eta=eta, w=W, u=u, xi=zeta @ Hc.T, f=f, z=z, zbar=zbar,
        u_st=u_st, cost=cost,
    )
    if certificates is not None:
        S, P = np.asarray(certificates.S), np.asarray(certificates.P)
        rec.v = np.einsum("ij,jk,ik->i", zeta, S, zeta)
        rec.V = np.einsum("ij,jk,ik->i", Rx, P, Rx)
        rec.nu = np.maximum(rec.v, rec.V)
    return rec


def detect_sliding(record: TrajectoryRecord, tol_sigma: float = 1e-3, tol_zbar: float = 1e-2):
    """Earliest sample time after which |sigma| <= tol_sigma and |zbar| <= tol_zbar hold to the end."""
    if len(record.t) == 0:
        return None
    ok = (np.linalg.norm(record.sigma, axis=1) <= tol_sigma) & (np.linalg.norm(record.zbar, axis=1) <= tol_zbar)
    if not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    return float(record.t[0] if len(bad) == 0 else record.t[bad[-1] + 1])


@dataclass(frozen=True)
class CostCheck:
    passed: bool
    cost: float
    theta: float
    ratio: float
    max_u_st_sq: float
    u_st_bound: float | None
    u_st_passed: bool


def check_cost_bound(record: TrajectoryRecord, theta: float, omega: float | None = None) -> CostCheck:
    """Compare the recorded cost integral with ``theta`` and, given ``omega``, ``max |u_ST|^2`` with ``omega*theta``."""
    total = float(record.cost[-1]) if len(record.cost) else 0.0
    usq = float(np.max(np.sum(record.u_st**2, axis=1))) if len(record.t) else 0.0
    bound = None if omega is None else omega * theta
    return CostCheck(
        passed=total <= theta,
        cost=total,
        theta=float(theta),
        ratio=total / theta,
        max_u_st_sq=usq,
        u_st_bound=bound,
        u_st_passed=bound is None or usq <= bound,
    )


@dataclass(frozen=True)
class MonotonicityCheck:
    passed: bool
    worst_excess: float
    violations: int
    checked: int
    floor: float


def check_nu_monotone(record: TrajectoryRecord, theta_N: float, window: int = 5, floor_factor: float = 10.0) -> MonotonicityCheck:
    """Sampled analogue of a decreasing max-type Lyapunov function.

    An increase between consecutive samples is tolerated up to
    ``10 dt L_k + floor`` where ``L_k`` is the largest |d nu/dt| seen within
    ``window`` samples and ``floor = floor_factor * theta_N * dt^2`` covers the
    O(dt) sliding layer of the fixed-step scheme (|R x| = O(dt) there).
    Samples inside ``|sigma| <= 10 sigma_reg`` are skipped.
    """
    if record.nu is None:
        raise ValueError("record has no Lyapunov trace; simulate with certificates")
    nu = record.nu
    if len(nu) < 2:
        return MonotonicityCheck(True, 0.0, 0, 0, 0.0)
    dts = np.diff(record.t)
    rate = np.abs(np.diff(nu)) / dts
    k = len(rate)
    L = np.array([rate[max(0, i - window) : min(k, i + window + 1)].max() for i in range(k)])
    floor = floor_factor * theta_N * record.dt**2
    slack = 10.0 * record.dt * L + floor
    reg = record.extra.get("sigma_reg", 0.0)
    keep = np.linalg.norm(record.sigma[:-1], axis=1) > 10.0 * reg
    excess = (np.diff(nu) - slack)[keep]
    bad = int(np.sum(excess > 0))
    return MonotonicityCheck(bad == 0, float(excess.max()) if len(excess) else 0.0, bad, int(keep.sum()), float(floor))


def export_csv(record: TrajectoryRecord, path, header_comment: str | None = None) -> None:
    header, data = record.columns()
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in data:
            writer.writerow([repr(float(v)) for v in row])
