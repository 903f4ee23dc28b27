"""Otto-cycle dynamics of the spin engine coupled to the motional flywheel.

The Hamiltonian is diagonal in the spin, so the composite density matrix
splits into the conditional oscillator blocks ``rho_uu``, ``rho_dd`` and the
coherence ``rho_ud``.  Pump dissipators only move population between the
diagonal blocks and damp the coherence; the coherence block is carried only
when the initial state has one.

Integration runs in the interaction picture of ``H_HO + hbar omega_z sigma_z / 2``:
the remaining generator is the standing-wave term alone, whose norm is of
order ``Delta_S`` rather than ``dim * omega_t``.  A fixed-step classical RK4
is used, with the pump gating evaluated once per step.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import AMU, CA40_ION_MASS_AMU, HBAR
from .hilbert import (
    FockSpace,
    Operator,
    QuantumState,
    ladder_ops,
    position_op,
    product_state,
    spin_ops,
    spin_state,
    thermal_state,
    zero_point_length,
)

TWO_PI = 2.0 * math.pi
MODELS = ("finite_rate", "instant_reset")


class TruncationError(RuntimeError):
    """Population reached the top of the Fock truncation."""


@dataclass(frozen=True)
class EngineConfig:
    """Physical and numerical engine parameters, all SI (angular frequencies in rad/s).

    ``pump_rate`` is the total rate ``gamma_up + gamma_down`` while a pump
    pulse is on; ``None`` selects 20 / pulse duration and 0 disables pumping.  ``schedule_offset``
    shifts the pump schedule by a fraction of the trap period.
    """

    omega_t: float = TWO_PI * 1.4e6
    omega_z: float = TWO_PI * 13e6
    delta_S: float = TWO_PI * 2.73e6
    k_SW: float = TWO_PI / 280e-9
    mass: float = CA40_ION_MASS_AMU * AMU
    s_hot: float = -0.084
    s_cold: float = -0.656
    pump_rate: float | None = None
    pulse_fraction: float = 0.4
    model: str = "finite_rate"
    linearized: bool = False
    dim: int = 128
    extra_heating_rate: float = 0.0
    steps_per_period: int = 400
    schedule_offset: float = 0.0

    def __post_init__(self):
        for name in ("omega_t", "omega_z", "k_SW", "mass"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        # delta_S = 0 is the decoupled limit, kept for checks
        if self.delta_S < 0:
            raise ValueError("delta_S must be nonnegative")
        if not -1.0 <= self.s_cold <= self.s_hot <= 0.0:
            raise ValueError(
                f"need -1 <= s_cold <= s_hot <= 0, got s_cold={self.s_cold}, s_hot={self.s_hot}"
            )
        if not 0.0 < self.pulse_fraction <= 1.0:
            raise ValueError("pulse_fraction must lie in (0, 1]")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.pump_rate is not None and self.pump_rate < 0:
            raise ValueError("pump_rate must be nonnegative (0 switches pumping off)")
        if self.extra_heating_rate < 0:
            raise ValueError("extra_heating_rate must be nonnegative")
        if self.steps_per_period < 4 or self.steps_per_period % 2:
            raise ValueError("steps_per_period must be an even integer >= 4")
        FockSpace(self.dim)

    @property
    def period(self) -> float:
        return TWO_PI / self.omega_t

    @property
    def x_zpf(self) -> float:
        return zero_point_length(self.mass, self.omega_t)

    @property
    def eta(self) -> float:
        """Lamb-Dicke parameter k_SW x_zpf."""
        return self.k_SW * self.x_zpf

    @property
    def pulse_duration(self) -> float:
        return self.pulse_fraction * self.period / 2.0

    @property
    def total_pump_rate(self) -> float:
        return self.pump_rate if self.pump_rate is not None else 20.0 / self.pulse_duration

    @property
    def dt(self) -> float:
        return self.period / self.steps_per_period


@dataclass
class Trajectory:
    """Snapshots of an engine run.

    ``observables`` maps names to arrays with one entry per time in
    ``times``: ``a`` (complex <a>), ``x``, ``n``, ``n2``, ``sz``, ``trace``,
    ``mineig``, ``ergotropy`` (of the flywheel, in quanta).  Full composite
    states are kept for ``state_times`` only.
    """

    times: np.ndarray
    observables: dict
    states: list = field(default_factory=list)
    state_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    config: EngineConfig | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        for k, v in self.observables.items():
            if len(v) != len(self.times):
                raise ValueError(f"observable {k!r} has {len(v)} entries for {len(self.times)} times")

    def __len__(self):
        return len(self.times)

    def state_at(self, t: float) -> QuantumState:
        if not self.states:
            raise LookupError("trajectory holds no stored states")
        i = int(np.argmin(np.abs(self.state_times - t)))
        return self.states[i]

    def flywheel_state_at(self, t: float) -> QuantumState:
        from .hilbert import partial_trace

        return partial_trace(self.state_at(t), "fock")


def sine_of_position(cfg: EngineConfig, linearized: bool = False) -> np.ndarray:
    """Matrix of sin(k_SW x) on the Fock space (or its first-order expansion)."""
    a, adag, _ = ladder_ops(cfg.dim)
    if linearized:
        return cfg.eta * (a.matrix + adag.matrix)
    kx = cfg.eta * (a.matrix + adag.matrix)
    lam, vecs = np.linalg.eigh(kx)
    return (vecs * np.sin(lam)) @ vecs.conj().T


def build_hamiltonian(cfg: EngineConfig, linearized: bool | None = None) -> Operator:
    """Coupled spin-oscillator Hamiltonian in joules on Fock (x) spin.

    The full model applies the sine to the eigenvalues of the truncated
    position operator.
    """
    if linearized is None:
        linearized = cfg.linearized
    _, _, n = ladder_ops(cfg.dim)
    sz = spin_ops()[0].matrix
    d = cfg.dim
    h_ho = HBAR * cfg.omega_t * (n.matrix + 0.5 * np.eye(d))
    sw = cfg.omega_z * np.eye(d) + cfg.delta_S * sine_of_position(cfg, linearized)
    h = np.kron(h_ho, np.eye(2)) + HBAR * np.kron(sw, sz) / 2.0
    h = 0.5 * (h + h.conj().T)
    return Operator(h, "composite", hermitian=True)


def force_operator(cfg: EngineConfig) -> Operator:
    """-dH/dx = -hbar k_SW Delta_S cos(k_SW x) sigma_z / 2 on the composite space."""
    x = position_op(cfg.dim, cfg.x_zpf).matrix
    lam, vecs = np.linalg.eigh(cfg.k_SW * x)
    cos_kx = (vecs * np.cos(lam)) @ vecs.conj().T
    sz = spin_ops()[0].matrix
    f = -HBAR * cfg.k_SW * cfg.delta_S * np.kron(cos_kx, sz) / 2.0
    return Operator(0.5 * (f + f.conj().T), "composite", hermitian=True)


def pump_rates(s_eq: float, total_rate: float):
    """Split a total pump rate into (gamma_up, gamma_down) with stationary <sigma_z> = s_eq."""
    if not -1.0 <= s_eq <= 0.0:
        raise ValueError(f"equilibrium polarization must lie in [-1, 0], got {s_eq}")
    if not total_rate > 0:
        raise ValueError("total pump rate must be positive")
    gamma_up = 0.5 * total_rate * (1.0 + s_eq)
    gamma_down = 0.5 * total_rate * (1.0 - s_eq)
    return gamma_up, gamma_down


def pump_phase(cfg: EngineConfig, t: float):
    """Which bath is coupled at time ``t``: "hot", "cold" or None.

    Half-period ``m`` (counted from ``schedule_offset``) opens with a pulse of
    length ``pulse_fraction * T / 2``; even ``m`` are hot, odd ``m`` cold.
    """
    half = cfg.period / 2.0
    u = t / half - 2.0 * cfg.schedule_offset
    m = math.floor(u + 1e-9)
    if u - m < cfg.pulse_fraction - 1e-9:
        return "hot" if m % 2 == 0 else "cold"
    return None


def default_initial_state(cfg: EngineConfig, nbar: float = 0.0) -> QuantumState:
    """Flywheel thermal (ground by default) times the cold-bath spin mixture."""
    return product_state(thermal_state(nbar, cfg.dim), spin_state(cfg.s_cold))


def _split_blocks(rho: np.ndarray):
    r = rho.reshape(rho.shape[0] // 2, 2, rho.shape[0] // 2, 2)
    return r[:, 0, :, 0].copy(), r[:, 1, :, 1].copy(), r[:, 0, :, 1].copy()


def _join_blocks(ru, rd, rc):
    d = ru.shape[0]
    r = np.zeros((d, 2, d, 2), dtype=complex)
    r[:, 0, :, 0] = ru
    r[:, 1, :, 1] = rd
    if rc is not None:
        r[:, 0, :, 1] = rc
        r[:, 1, :, 0] = rc.conj().T
    return r.reshape(2 * d, 2 * d)


class _Integrator:
    def __init__(self, cfg: EngineConfig):
        self.cfg = cfg
        d = cfg.dim
        self.v = 0.5 * cfg.delta_S * sine_of_position(cfg, cfg.linearized)
        self.mdiff = np.subtract.outer(np.arange(d), np.arange(d)).astype(float)
        a, adag, n = ladder_ops(d)
        self.a = a.matrix
        self.adag = adag.matrix
        self.num = np.diag(n.matrix).real
        self.heat = cfg.extra_heating_rate
        # diagonal of a^dag a + a a^dag, with the truncated top level
        self.heat_diag = np.diag(self.adag @ self.a).real + np.diag(self.a @ self.adag).real

    def frame_phase(self, t):
        # elementwise exp(i omega_t t (m - n)); diagonal phase factors as an outer product
        e = np.exp(1j * self.cfg.omega_t * t * np.arange(self.cfg.dim))
        return np.outer(e, e.conj())

    def _heating(self, x):
        a, ad, aad = self.a, self.adag, self.heat_diag
        return self.heat * (a @ x @ ad + ad @ x @ a - 0.5 * (aad[:, None] * x + x * aad[None, :]))

    def rhs(self, vi, gu, gd, ru, rd, rc):
        xu = vi @ ru
        xd = vi @ rd
        dru = -1j * (xu - xu.conj().T)
        drd = 1j * (xd - xd.conj().T)
        if gu or gd:
            transfer = gu * rd - gd * ru
            dru += transfer
            drd -= transfer
        drc = None
        if rc is not None:
            drc = -1j * (vi @ rc + rc @ vi) - 0.5 * (gu + gd) * rc
        if self.heat:
            dru += self._heating(ru)
            drd += self._heating(rd)
            if rc is not None:
                drc += self._heating(rc)
        return dru, drd, drc

    def step(self, t, dt, gu, gd, ru, rd, rc):
        v = self.v
        v0 = v * self.frame_phase(t)
        vh = v * self.frame_phase(t + 0.5 * dt)
        v1 = v * self.frame_phase(t + dt)
        has_c = rc is not None

        def add(y, k, h):
            return tuple(None if yi is None else yi + h * ki for yi, ki in zip(y, k))

        y = (ru, rd, rc)
        k1 = self.rhs(v0, gu, gd, *y)
        k2 = self.rhs(vh, gu, gd, *add(y, k1, 0.5 * dt))
        k3 = self.rhs(vh, gu, gd, *add(y, k2, 0.5 * dt))
        k4 = self.rhs(v1, gu, gd, *add(y, k3, dt))
        out = []
        for i in range(3 if has_c else 2):
            out.append(y[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        if not has_c:
            out.append(None)
        return tuple(out)


def _observe(integ: _Integrator, t, ru, rd, rc, cfg):
    phase = integ.frame_phase(t).conj()
    fu = ru * phase
    fd = rd * phase
    rho_f = fu + fd
    d = cfg.dim
    diag = np.diag(rho_f).real
    sq = np.sqrt(np.arange(1, d))
    a_mean = complex(np.sum(sq * np.diagonal(rho_f, offset=-1)))
    n_mean = float(np.dot(integ.num, diag))
    n2 = float(np.dot(integ.num**2, diag))
    trace = float(np.trace(ru).real + np.trace(rd).real)
    sz = float(np.trace(ru).real - np.trace(rd).real)
    if rc is None:
        mineig = float(min(np.linalg.eigvalsh(fu)[0], np.linalg.eigvalsh(fd)[0]))
    else:
        mineig = float(np.linalg.eigvalsh(_join_blocks(fu, fd, rc * phase))[0])
    p = np.linalg.eigvalsh(0.5 * (rho_f + rho_f.conj().T))[::-1]
    ergo = n_mean - float(np.dot(np.arange(d), p))
    top = float(diag[-2:].sum())
    return {
        "a": a_mean,
        "x": 2.0 * cfg.x_zpf * a_mean.real,
        "n": n_mean,
        "n2": n2,
        "sz": sz,
        "trace": trace,
        "mineig": mineig,
        "ergotropy": ergo,
        "top": top,
    }


def _lab_state(integ, t, ru, rd, rc, cfg) -> QuantumState:
    phase = integ.frame_phase(t).conj()
    lab_c = None if rc is None else rc * phase * np.exp(-1j * cfg.omega_z * t)
    rho = _join_blocks(ru * phase, rd * phase, lab_c)
    return QuantumState(0.5 * (rho + rho.conj().T), "composite", check=False)


def _reset(ru, rd, s_eq):
    rho_f = ru + rd
    return 0.5 * (1.0 + s_eq) * rho_f, 0.5 * (1.0 - s_eq) * rho_f, None


def run_engine(
    cfg: EngineConfig,
    t_end: float,
    snapshot_every: float | None = None,
    initial: QuantumState | None = None,
    store_states="all",
    truncation_limit: float = 1e-4,
) -> Trajectory:
    """Integrate the Otto-cycle master equation from t = 0 to ``t_end``.

    Snapshot and state-storage times are rounded to the integrator grid.
    ``store_states`` is "all", "none", or a sequence of times at which the
    full composite state is kept.

    Raises
    ------
    TruncationError
        If the population of the two highest Fock levels exceeds
        ``truncation_limit`` at a snapshot.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    dt = cfg.dt
    n_steps = int(round(t_end / dt))
    if snapshot_every is None:
        snapshot_every = cfg.period / 20.0
    stride = max(1, int(round(snapshot_every / dt)))
    snap_steps = list(range(0, n_steps + 1, stride))
    if snap_steps[-1] != n_steps:
        snap_steps.append(n_steps)
    if isinstance(store_states, str):
        if store_states == "all":
            keep = set(snap_steps)
        elif store_states == "none":
            keep = set()
        else:
            raise ValueError(f"store_states must be 'all', 'none' or a list of times, got {store_states!r}")
    else:
        keep = {min(n_steps, int(round(t / dt))) for t in store_states}
    snap_set = set(snap_steps) | keep

    if initial is None:
        initial = default_initial_state(cfg)
    rho0 = np.asarray(initial)
    if rho0.shape != (2 * cfg.dim, 2 * cfg.dim):
        raise ValueError(f"initial state must be {2 * cfg.dim}x{2 * cfg.dim}, got {rho0.shape}")
    ru, rd, rc = _split_blocks(np.array(rho0, dtype=complex))
    if np.max(np.abs(rc), initial=0.0) == 0.0:
        rc = None

    integ = _Integrator(cfg)
    rate = cfg.total_pump_rate
    gh = pump_rates(cfg.s_hot, rate) if rate > 0 else (0.0, 0.0)
    gc = pump_rates(cfg.s_cold, rate) if rate > 0 else (0.0, 0.0)
    half_steps = cfg.steps_per_period // 2
    offset_steps = int(round(cfg.schedule_offset * cfg.steps_per_period))
    reset = cfg.model == "instant_reset"

    times, records, states, state_times = [], [], [], []
    for k in range(n_steps + 1):
        t = k * dt
        if reset and (k - offset_steps) % half_steps == 0 and k < n_steps:
            m = (k - offset_steps) // half_steps
            ru, rd, rc = _reset(ru, rd, cfg.s_hot if m % 2 == 0 else cfg.s_cold)
        if k in snap_set:
            if k in snap_steps:
                obs = _observe(integ, t, ru, rd, rc, cfg)
                if obs["top"] > truncation_limit:
                    raise TruncationError(
                        f"population {obs['top']:.3g} in the top two Fock levels at "
                        f"t = {t * 1e6:.3f} us exceeds {truncation_limit:g}; increase dim (now {cfg.dim})"
                    )
                times.append(t)
                records.append(obs)
            if k in keep:
                states.append(_lab_state(integ, t, ru, rd, rc, cfg))
                state_times.append(t)
        if k == n_steps:
            break
        if reset:
            gu = gd = 0.0
        else:
            phase = pump_phase(cfg, t + 0.5 * dt)
            gu, gd = {"hot": gh, "cold": gc, None: (0.0, 0.0)}[phase]
        ru, rd, rc = integ.step(t, dt, gu, gd, ru, rd, rc)

    observables = {
        key: np.array([r[key] for r in records], dtype=complex if key == "a" else float)
        for key in records[0]
        if key != "top"
    }
    return Trajectory(np.array(times), observables, states, np.array(state_times), cfg)


def cycle_average(traj: Trajectory, omega_t: float) -> Trajectory:
    """Centered sliding average of every observable over one trap period.

    Each window is integrated with the trapezoid rule over the snapshots
    inside it; windows are cut at the ends of the trajectory.
    """
    t = traj.times
    if t[-1] - t[0] < TWO_PI / omega_t * (1 - 1e-9):
        raise ValueError("trajectory shorter than one trap period")
    half = 0.5 * TWO_PI / omega_t
    eps = 1e-9 * half
    out = {}
    for key, vals in traj.observables.items():
        vals = np.asarray(vals)
        avg = np.empty_like(vals)
        for i, ti in enumerate(t):
            sel = (t >= ti - half - eps) & (t <= ti + half + eps)
            ts, vs = t[sel], vals[sel]
            if len(ts) == 1:
                avg[i] = vs[0]
            else:
                avg[i] = np.trapezoid(vs, ts) / (ts[-1] - ts[0])
        out[key] = avg
    return Trajectory(t.copy(), out, traj.states, traj.state_times, traj.config)


TRAJECTORY_COLUMNS = ("t", "re_a", "im_a", "n", "n2", "sz", "trace", "mineig", "ergotropy")


def write_trajectory_csv(traj: Trajectory, path, meta: dict | None = None) -> None:
    """CSV with ``# key=value`` header lines followed by the column row."""
    obs = traj.observables
    lines = [f"# {k}={v}" for k, v in (meta or {}).items()]
    lines.append(",".join(TRAJECTORY_COLUMNS))
    for i, t in enumerate(traj.times):
        a = obs["a"][i]
        row = (t, a.real, a.imag) + tuple(obs[k][i] for k in TRAJECTORY_COLUMNS[3:])
        lines.append(",".join(repr(float(v)) for v in row))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_trajectory_csv(path):
    """Return ``(meta, columns)`` where ``columns`` maps names to float arrays."""
    meta, rows, header = {}, [], None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
        elif header is None:
            header = line.split(",")
        elif line:
            rows.append([float(x) for x in line.split(",")])
    data = np.array(rows).reshape(-1, len(header))
    return meta, {h: data[:, j] for j, h in enumerate(header)}


def trajectory_from_columns(columns: dict, cfg: EngineConfig | None = None) -> Trajectory:
    """Rebuild a state-free Trajectory from ``read_trajectory_csv`` columns."""
    obs = {k: np.asarray(columns[k]) for k in TRAJECTORY_COLUMNS[3:]}
    obs["a"] = columns["re_a"] + 1j * columns["im_a"]
    if cfg is not None:
        obs["x"] = 2.0 * cfg.x_zpf * obs["a"].real
    return Trajectory(columns["t"], obs, config=cfg)


# Snapshot archive, all fields little-endian:
#   0   8 bytes  magic b"SFWSNAP\0"
#   8   uint16   format version (1)
#   10  uint16   reserved, 0
#   12  uint32   Fock dimension d
#   16  uint32   number of snapshots N
#   20  uint32   length L of the config-hash string
#   24  L bytes  ASCII config hash
#   then N records of: float64 time [s], d*d complex128 flywheel density matrix, row-major
SNAPSHOT_MAGIC = b"SFWSNAP\0"
SNAPSHOT_VERSION = 1
_SNAP_HEADER = struct.Struct("<8sHHIII")


def write_snapshot_archive(path, times, states, config_hash: str = "") -> None:
    states = [np.asarray(s, dtype="<c16") for s in states]
    if len(states) != len(times):
        raise ValueError("one time per state required")
    d = states[0].shape[0] if states else 0
    h = config_hash.encode("ascii")
    chunks = [_SNAP_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, 0, d, len(states), len(h)), h]
    for t, s in zip(times, states):
        if s.shape != (d, d):
            raise ValueError("all snapshots must share one dimension")
        chunks.append(struct.pack("<d", float(t)))
        chunks.append(np.ascontiguousarray(s).tobytes())
    _atomic_write_bytes(path, b"".join(chunks))


def read_snapshot_archive(path):
    """Return ``(times, states, config_hash)``; states are Fock-space QuantumStates."""
    buf = Path(path).read_bytes()
    magic, version, _, d, n, hl = _SNAP_HEADER.unpack_from(buf, 0)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a snapshot archive")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported archive version {version}")
    pos = _SNAP_HEADER.size
    config_hash = buf[pos : pos + hl].decode("ascii")
    pos += hl
    times, states = [], []
    block = 16 * d * d
    for _ in range(n):
        (t,) = struct.unpack_from("<d", buf, pos)
        pos += 8
        m = np.frombuffer(buf, dtype="<c16", count=d * d, offset=pos).reshape(d, d)
        pos += block
        times.append(t)
        states.append(QuantumState(m.astype(complex), "fock", check=False))
    if pos != len(buf):
        raise ValueError(f"{path}: trailing bytes in snapshot archive")
    return np.array(times), states, config_hash


def _atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def _atomic_write_text(path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


__all__ = [
    "EngineConfig",
    "Trajectory",
    "TruncationError",
    "build_hamiltonian",
    "cycle_average",
    "default_initial_state",
    "force_operator",
    "pump_phase",
    "pump_rates",
    "read_snapshot_archive",
    "read_trajectory_csv",
    "run_engine",
    "write_snapshot_archive",
    "write_trajectory_csv",
]
