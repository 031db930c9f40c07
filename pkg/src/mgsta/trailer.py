"""Chain-of-three-trailers fault-tolerant tracking benchmark.

Two active trailers (masses m1, m2) are driven by three redundant actuators
through the mixer ``S_a``; a passive trailer (mass m3) is coupled to both by
springs and dampers. Actuator 1 may fail completely (F1 in [0, 1]) and m2, m3
are uncertain, giving an 8-vertex polytope in tracking-error coordinates::

    zeta  = [e_y1, e_y2, e_p1, e_p2]      e_y = q_a - q_d,   e_p = (q_p - q_pd, qdot_p - qdot_pd)
    sigma = -Gamma zeta + e_v             e_v = qdot_a - qdot_d

The exogenous part (reference model, passive-trailer desired motion, external
force) is a linear exosystem driven by sinusoids, so the whole closed loop can
be integrated by the compiled kernel in :mod:`mgsta.sim`.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import InvalidParams, NonzeroInitialDisturbance
from .model import DesignConfig, PolytopicPlant, VertexMatrices, make_polytope
from .sim import LinearExosystem, SimConfig, TrajectoryRecord, detect_sliding, simulate

log = logging.getLogger(__name__)

# printed design of the benchmark (alpha ~ 11, rho ~ 2.1)
REFERENCE_K0 = np.array(
    [
        [26.0754, -33.4036, -29.2428, -23.2136],
        [35.1140, -50.1011, -13.8645, -19.8209],
    ]
)
REFERENCE_K1 = np.array([[-49.5226, -52.2890], [-5.8613, -49.4501]])
REFERENCE_K2 = np.array([[-109.3804, -72.3834], [14.8000, -115.8515]])
REFERENCE_THETA = 583.2724
REFERENCE_DELTA = 7.8489
FDOT_BOUND = 6.0

S_A = np.array([[1.0, -1.0, 0.0], [0.0, 1.0, -1.0]])


@dataclass(frozen=True)
class TrailerParams:
    m1: float = 1.0
    m2_range: tuple[float, float] = (2.0, 3.0)
    m3_range: tuple[float, float] = (2.0, 3.0)
    k13: float = 30.0
    k32: float = 45.0
    b13: float = 15.0
    b32: float = 30.0
    F1_range: tuple[float, float] = (0.0, 1.0)
    F2: float = 1.0
    F3: float = 1.0
    gamma_e1: float = 2.0
    gamma_e2: float = 4.0

    def __post_init__(self):
        positive = [self.m1, self.k13, self.k32, self.b13, self.b32, self.gamma_e1, self.gamma_e2]
        positive += list(self.m2_range) + list(self.m3_range)
        if not all(np.isfinite(v) and v > 0 for v in positive):
            raise InvalidParams("masses, stiffnesses, dampings and surface slopes must be positive")
        faults = list(self.F1_range) + [self.F2, self.F3]
        if not all(0.0 <= f <= 1.0 for f in faults):
            raise InvalidParams("fault indices must lie in [0, 1]")
        for name in ("m2_range", "m3_range", "F1_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise InvalidParams(f"{name} must be (low, high)")

    @classmethod
    def from_dict(cls, d: dict) -> "TrailerParams":
        d = dict(d)
        for k in ("m2_range", "m3_range", "F1_range"):
            if k in d:
                d[k] = tuple(float(v) for v in d[k])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrailerVertex:
    """Physical parameters of one polytope vertex."""

    F1: float
    m2: float
    m3: float

    def label(self) -> str:
        return f"F1={self.F1:g},m2={self.m2:g},m3={self.m3:g}"


def vertex_parameters(params: TrailerParams) -> list[TrailerVertex]:
    """Enumerate vertices in the order F1 (outer), m2, m3 (inner)."""
    return [
        TrailerVertex(F1, m2, m3)
        for F1, m2, m3 in itertools.product(params.F1_range, params.m2_range, params.m3_range)
    ]


def physical_matrices(p: TrailerParams, v: TrailerVertex):
    """A11, A12, A21, A22 and the mixed input matrix B of the trailer dynamics."""
    m1, m2, m3 = p.m1, v.m2, v.m3
    k13, k32, b13, b32 = p.k13, p.k32, p.b13, p.b32
    A11 = np.array(
        [
            [0, 0, 0, 0],
            [0, 0, 0, 0],
            [0, 0, 0, 1],
            [k13 / m3, k32 / m3, -(k13 + k32) / m3, -(b13 + b32) / m3],
        ],
        dtype=float,
    )
    A12 = np.array([[1, 0], [0, 1], [0, 0], [b13 / m3, b32 / m3]], dtype=float)
    A21 = np.array(
        [
            [-k13 / m1, 0, k13 / m1, b13 / m1],
            [0, -k32 / m2, k32 / m2, b32 / m2],
        ]
    )
    A22 = np.diag([-b13 / m1, -b32 / m2])
    B = mixed_input_matrix(p, v)
    return A11, A12, A21, A22, B


def mixed_input_matrix(p: TrailerParams, v: TrailerVertex) -> np.ndarray:
    """B = M^-1 S_a diag(F) S_a^T, the input matrix after the mixer."""
    F = np.diag([v.F1, p.F2, p.F3])
    return np.diag([1.0 / p.m1, 1.0 / v.m2]) @ S_A @ F @ S_A.T


def error_matrices(p: TrailerParams, v: TrailerVertex) -> VertexMatrices:
    g1, g2 = p.gamma_e1, p.gamma_e2
    m1, m2, m3 = p.m1, v.m2, v.m3
    k13, k32, b13, b32 = p.k13, p.k32, p.b13, p.b32
    A = np.array(
        [
            [-g1, 0, 0, 0],
            [0, -g2, 0, 0],
            [0, 0, 0, 1],
            [(k13 - g1 * b13) / m3, (k32 - g2 * b32) / m3, -(k13 + k32) / m3, -(b13 + b32) / m3],
        ]
    )
    E = np.array([[1, 0], [0, 1], [0, 0], [b13 / m3, b32 / m3]], dtype=float)
    C = np.array(
        [
            [-(g1**2) - k13 / m1 + g1 * b13 / m1, 0, k13 / m1, b13 / m1],
            [0, -(g2**2) - k32 / m2 + g2 * b32 / m2, k32 / m2, b32 / m2],
        ]
    )
    D = np.diag([g1 - b13 / m1, g2 - b32 / m2])
    return VertexMatrices(A, E, C, D, mixed_input_matrix(p, v))


def build_trailer_polytope(params: TrailerParams | None = None) -> PolytopicPlant:
    params = params or TrailerParams()
    return make_polytope([error_matrices(params, v) for v in vertex_parameters(params)])


def surface_matrix(p: TrailerParams) -> np.ndarray:
    """Gamma in sigma = -Gamma zeta + e_v."""
    return np.array([[-p.gamma_e1, 0, 0, 0], [0, -p.gamma_e2, 0, 0]], dtype=float)


# reference model 125/(s+5)^3 per channel, realised as a chain with states
# (q_d, qdot_d, qddot_d) so that the third derivative is available for f'(t)
REF_POLE = 5.0
REF_AMPLITUDES = (0.10, 0.06)
REF_FREQUENCIES = (0.5, 1.0)


def reference_chain(pole: float = REF_POLE) -> tuple[np.ndarray, np.ndarray]:
    """Companion realisation of pole^3/(s+pole)^3 with states (y, y', y'')."""
    a0, a1, a2 = pole**3, 3 * pole**2, 3 * pole
    Ar = np.array([[0, 1, 0], [0, 0, 1], [-a0, -a1, -a2]], dtype=float)
    Br = np.array([0, 0, a0], dtype=float)
    return Ar, Br


def reference_signals(t, amplitudes=REF_AMPLITUDES, frequencies=REF_FREQUENCIES, pole=REF_POLE, r_func=None):
    """q_d, qdot_d, qddot_d on a time grid, integrated with the reference chain.

    ``r_func(t) -> (2,)`` overrides the sinusoidal input. Integration is RK4 on
    the supplied grid starting from the zero state.
    """
    t = np.asarray(t, float)
    Ar, Br = reference_chain(pole)
    if r_func is None:
        amps, freqs = np.asarray(amplitudes), np.asarray(frequencies)

        def r_func(tt):
            return amps * np.sin(freqs * tt)

    nch = len(np.atleast_1d(r_func(0.0)))
    x = np.zeros((nch, 3))
    out = np.zeros((len(t), nch, 3))

    def deriv(tt, xx):
        return xx @ Ar.T + np.outer(np.atleast_1d(r_func(tt)), Br)

    for k in range(1, len(t)):
        h = t[k] - t[k - 1]
        tt = t[k - 1]
        k1 = deriv(tt, x)
        k2 = deriv(tt + h / 2, x + h / 2 * k1)
        k3 = deriv(tt + h / 2, x + h / 2 * k2)
        k4 = deriv(tt + h, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k] = x
    return out[:, :, 0], out[:, :, 1], out[:, :, 2]


def frequency_gain(freq: float, pole: float = REF_POLE) -> float:
    """|pole^3 / (j freq + pole)^3|, the steady-state amplitude ratio."""
    return abs(pole**3 / (1j * freq + pole) ** 3)


def assemble_disturbance(
    params: TrailerParams,
    vertex: TrailerVertex,
    fd_amplitude: float = 1.0,
    reference_amplitudes=REF_AMPLITUDES,
    reference_frequencies=REF_FREQUENCIES,
    damping_feedthrough: bool = True,
    delta_declared: float | None = FDOT_BOUND,
) -> LinearExosystem:
    """Matched disturbance of the error system as a sinusoid-driven exosystem.

    Exosystem state: ``[q_d1, qd_d1, qdd_d1, q_d2, qd_d2, qdd_d2, q_pd, qd_pd]``;
    sources: the two reference sinusoids and ``cos t - 1`` (external force on
    both active trailers). The output is::

        f = A21 [q_d; q_pd; qd_pd] + A22 qdot_d - qddot_d + f_d

    ``damping_feedthrough=False`` drops the ``A22 qdot_d`` term, which the
    error-coordinate change of variables produces but a shorter form omits.
    """
    _, _, A21, A22, _ = physical_matrices(params, vertex)
    m3 = vertex.m3
    k13, k32, b13, b32 = params.k13, params.k32, params.b13, params.b32
    Ar, Br = reference_chain()
    Aw = np.zeros((8, 8))
    Bw = np.zeros((8, 3))
    for ch in range(2):
        s = slice(3 * ch, 3 * ch + 3)
        Aw[s, s] = Ar
        Bw[s, ch] = Br
    # passive-trailer desired motion driven by q_d and qdot_d
    Aw[6, 7] = 1.0
    Aw[7, 6] = -(k13 + k32) / m3
    Aw[7, 7] = -(b13 + b32) / m3
    Aw[7, 0] = k13 / m3
    Aw[7, 3] = k32 / m3
    Aw[7, 1] = b13 / m3
    Aw[7, 4] = b32 / m3
    Cw = np.zeros((2, 8))
    # A21 acts on [q_d1, q_d2, q_pd, qd_pd]
    Cw[:, 0] += A21[:, 0]
    Cw[:, 3] += A21[:, 1]
    Cw[:, 6] += A21[:, 2]
    Cw[:, 7] += A21[:, 3]
    if damping_feedthrough:
        Cw[:, 1] += A22[:, 0]
        Cw[:, 4] += A22[:, 1]
    Cw[0, 2] -= 1.0
    Cw[1, 5] -= 1.0
    Dw = np.zeros((2, 3))
    Dw[:, 2] = 1.0
    amps = np.array([reference_amplitudes[0], reference_amplitudes[1], fd_amplitude], dtype=float)
    freqs = np.array([reference_frequencies[0], reference_frequencies[1], 1.0], dtype=float)
    phases = np.array([0.0, 0.0, np.pi / 2])
    offsets = np.array([0.0, 0.0, -fd_amplitude])
    dist = LinearExosystem(
        Aw=Aw, Bw=Bw, Cw=Cw, Dw=Dw, amp=amps, freq=freqs, phase=phases, offset=offsets,
        w0=np.zeros(8), delta_declared=delta_declared,
    )
    f0, _ = dist.evaluate(0.0, dist.w0)
    if np.linalg.norm(f0) > 1e-12:
        raise NonzeroInitialDisturbance(f"f(0) = {f0} must vanish")
    return dist


# initial condition of the benchmark (physical coordinates)
QA0 = np.array([0.04, -0.06])
QDA0 = np.array([-0.03, 0.04])


def initial_error_state(params: TrailerParams, qa0=QA0, qda0=QDA0, qp0=0.0, qdp0=0.0):
    """(zeta0, sigma0, eta0) from physical initial states with a resting reference."""
    e_y = np.asarray(qa0, float)  # q_d(0) = 0
    e_p = np.array([qp0, qdp0], float)  # q_pd(0) = qdot_pd(0) = 0
    zeta0 = np.concatenate([e_y, e_p])
    sigma0 = -surface_matrix(params) @ zeta0 + np.asarray(qda0, float)
    return zeta0, sigma0, np.zeros(2)


def cost_matrices(r: int = 4, m: int = 2):
    H = np.vstack([np.eye(r), np.zeros((m, r))])
    J = np.vstack([np.zeros((r, m)), np.eye(m)])
    return H, J


def default_design(params: TrailerParams | None = None, alpha=11.0, rho=2.1, gamma=4.0, omega=50.0) -> DesignConfig:
    params = params or TrailerParams()
    zeta0, sigma0, eta0 = initial_error_state(params)
    H, J = cost_matrices()
    return DesignConfig(
        gamma=gamma, alpha=alpha, rho=rho, omega=omega, H=H, J=J, zeta0=zeta0, sigma0=sigma0, eta0=eta0
    )


# physical-coordinate simulation, used to cross-check the error-system model


def simulate_physical(params, vertex, gains, sim_config: SimConfig, disturbance: LinearExosystem | None = None):
    """Integrate trailers, reference, passive-desired motion and controller in physical coordinates.

    The controller measures tracking errors (it needs q_pd only through
    ``e_p``, exactly like the error-coordinate model). Returns ``(t, zeta,
    sigma)`` mapped to error coordinates at every step.
    """
    K0, K1, K2, alpha = gains["K0"], gains["K1"], gains["K2"], gains["alpha"]
    A11, A12, A21, A22, B = physical_matrices(params, vertex)
    dist = disturbance or assemble_disturbance(params, vertex)
    Gam = surface_matrix(params)
    reg = sim_config.sigma_reg

    def errors(x):
        zt, qad, eta, w = x[:4], x[4:6], x[6:8], x[8:]
        qd = w[[0, 3]]
        qdd = w[[1, 4]]
        e_y = zt[:2] - qd
        e_p = zt[2:] - w[6:8]
        e_v = qad - qdd
        zeta = np.concatenate([e_y, e_p])
        sigma = -Gam @ zeta + e_v
        return zeta, sigma, eta

    def rhs(t, x):
        zt, qad, eta, w = x[:4], x[4:6], x[6:8], x[8:]
        zeta, sigma, _ = errors(x)
        ns = max(np.linalg.norm(sigma), reg)
        c = 1.0 / np.sqrt(ns) + alpha
        u = K0 @ zeta + c * (K1 @ sigma) + K2 @ eta
        src = dist.sources(t)
        fd = dist.Dw @ src  # only the external force enters the physical plant
        dzt = A11 @ zt + A12 @ qad
        dqad = A21 @ zt + A22 @ qad + B @ u + fd
        deta = c * c * sigma
        dw = dist.Aw @ w + dist.Bw @ src
        return np.concatenate([dzt, dqad, deta, dw])

    zeta0, sigma0, eta0 = initial_error_state(params)
    x = np.concatenate([np.concatenate([QA0, [0.0, 0.0]]), QDA0, eta0, dist.w0])
    n_steps = int(round(sim_config.horizon / sim_config.dt))
    h = sim_config.dt
    ts, zs, ss = [0.0], [errors(x)[0]], [errors(x)[1]]
    for k in range(n_steps):
        t = k * h
        k1 = rhs(t, x)
        k2 = rhs(t + h / 2, x + h / 2 * k1)
        k3 = rhs(t + h / 2, x + h / 2 * k2)
        k4 = rhs(t + h, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if (k + 1) % sim_config.record_stride == 0:
            zeta, sigma, _ = errors(x)
            ts.append((k + 1) * h)
            zs.append(zeta)
            ss.append(sigma)
    return np.array(ts), np.array(zs), np.array(ss)


@dataclass
class ScenarioConfig:
    params: TrailerParams = field(default_factory=TrailerParams)
    horizon: float = 30.0
    dt: float = 1e-4
    record_stride: int = 100
    sigma_reg: float = 1e-12
    gamma: float = 4.0
    omega: float = 50.0
    alpha: float = 11.0
    rho: float = 2.1
    fd_amplitude: float = 1.0
    damping_feedthrough: bool = True
    tol_sigma: float = 1e-3
    tol_zbar: float = 1e-2
    vertices: list[int] | None = None
    output_dir: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "params" in d and isinstance(d["params"], dict):
            d["params"] = TrailerParams.from_dict(d["params"])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidParams(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["params"] = self.params.to_dict()
        return out

    def sim_config(self) -> SimConfig:
        return SimConfig(dt=self.dt, horizon=self.horizon, sigma_reg=self.sigma_reg, record_stride=self.record_stride)


@dataclass
class VertexRun:
    index: int
    vertex: TrailerVertex
    record: TrajectoryRecord
    t_s: float | None
    max_u: float
    u0: float
    u0_peak: float
    cost: float
    final_tracking_error: float
    max_fdot: float
    error: str | None = None

    def summary_row(self) -> dict:
        return {
            "vertex": self.index,
            "F1": self.vertex.F1,
            "m2": self.vertex.m2,
            "m3": self.vertex.m3,
            "t_s": "" if self.t_s is None else f"{self.t_s:.6f}",
            "max_u": f"{self.max_u:.6g}",
            "u0": f"{self.u0:.6g}",
            "u0_peak": f"{self.u0_peak:.6g}",
            "cost_integral": f"{self.cost:.6g}",
            "final_tracking_error": f"{self.final_tracking_error:.6g}",
            "max_fdot": f"{self.max_fdot:.6g}",
            "status": self.error or "ok",
        }


def default_gains(alpha: float = 11.0) -> dict:
    return {"K0": REFERENCE_K0, "K1": REFERENCE_K1, "K2": REFERENCE_K2, "alpha": alpha}


def run_vertex(index, scenario: ScenarioConfig, gains: dict, certificates=None) -> VertexRun:
    params = scenario.params
    vertices = vertex_parameters(params)
    v = vertices[index]
    plant_v = error_matrices(params, v)
    dist = assemble_disturbance(
        params, v, fd_amplitude=scenario.fd_amplitude, damping_feedthrough=scenario.damping_feedthrough
    )
    zeta0, sigma0, eta0 = initial_error_state(params)
    H, J = cost_matrices()
    rec = simulate(
        plant_v,
        gains,
        dist,
        scenario.sim_config(),
        zeta0=zeta0,
        sigma0=sigma0,
        eta0=eta0,
        H=H,
        J=J,
        certificates=certificates,
        on_blowup="truncate",
    )
    t_s = detect_sliding(rec, scenario.tol_sigma, scenario.tol_zbar)
    unorm = np.linalg.norm(rec.u, axis=1)
    track = np.linalg.norm(rec.zeta[-1, :2]) if len(rec.t) else np.nan
    return VertexRun(
        index=index,
        vertex=v,
        record=rec,
        t_s=t_s,
        max_u=float(unorm.max()) if len(unorm) else np.nan,
        u0=float(unorm[0]) if len(unorm) else np.nan,
        u0_peak=float(np.abs(rec.u[0]).max()) if len(unorm) else np.nan,
        cost=float(rec.cost[-1]) if len(rec.t) else np.nan,
        final_tracking_error=float(track),
        max_fdot=rec.fdot_max,
        error=rec.failure,
    )


def run_benchmark(scenario: ScenarioConfig | None = None, gains: dict | None = None, certificates=None, threads: int = 1):
    """Simulate every requested vertex; returns ``(runs, summary_rows)``."""
    scenario = scenario or ScenarioConfig()
    gains = gains or default_gains(scenario.alpha)
    indices = scenario.vertices if scenario.vertices is not None else list(range(8))
    if threads > 1 and len(indices) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as ex:
            runs = list(ex.map(lambda i: run_vertex(i, scenario, gains, certificates), indices))
    else:
        runs = [run_vertex(i, scenario, gains, certificates) for i in indices]
    runs.sort(key=lambda r: r.index)
    return runs, [r.summary_row() for r in runs]


def with_overrides(scenario: ScenarioConfig, **kw) -> ScenarioConfig:
    return replace(scenario, **kw)


# file outputs

SUMMARY_FIELDS = ["vertex", "F1", "m2", "m3", "t_s", "max_u", "u0", "u0_peak", "cost_integral", "final_tracking_error", "max_fdot", "status"]


def vertex_filename(index: int) -> str:
    return f"vertex_{index}.csv"


def write_outputs(runs, outdir, header_comment: str | None = None, gnuplot: bool = True) -> list[str]:
    """Write one trajectory CSV per vertex, ``summary.csv`` and optionally ``plot.gp``.

    Returns the list of written paths.
    """
    import csv
    import os

    from .sim import export_csv

    os.makedirs(outdir, exist_ok=True)
    written = []
    for run in runs:
        path = os.path.join(outdir, vertex_filename(run.index))
        export_csv(run.record, path, header_comment)
        written.append(path)
    path = os.path.join(outdir, "summary.csv")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        for run in runs:
            w.writerow(run.summary_row())
    written.append(path)
    if gnuplot and runs:
        path = os.path.join(outdir, "plot.gp")
        with open(path, "w") as fh:
            fh.write(gnuplot_script([vertex_filename(r.index) for r in runs]))
        written.append(path)
    return written


def gnuplot_script(files) -> str:
    """Script plotting sigma and u of every vertex file (columns by header name)."""
    lines = [
        "set datafile separator ','",
        "set datafile commentschars '#'",
        "set key autotitle columnhead",
        "set terminal pngcairo size 1200,800",
        "set output 'trailer.png'",
        "set multiplot layout 2,1",
        "set ylabel 'sigma'",
    ]
    sig = ", ".join(f"'{f}' using 't':'sigma_{i}' with lines title '{f} sigma_{i}'" for f in files for i in (1, 2))
    lines.append(f"plot {sig}")
    lines.append("set ylabel 'u'")
    us = ", ".join(f"'{f}' using 't':'u_{i}' with lines title '{f} u_{i}'" for f in files for i in (1, 2))
    lines.append(f"plot {us}")
    lines.append("unset multiplot")
    return "\n".join(lines) + "\n"
