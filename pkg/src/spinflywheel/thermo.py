"""Flywheel energetics: energy, ergotropy, fluctuations and bath temperatures.

Energies are referenced to the oscillator zero point,
``E = Tr[H_HO rho] - hbar omega_t / 2``; with this reference the DSTS
energy equals its ergotropy plus ``hbar omega_t nbar`` exactly.  Variances
do not depend on the reference.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .constants import HBAR, KB
from .dstsfit import DstsParams, FitResult, gaussian_moments
from .hilbert import QuantumState

TWO_PI = 2.0 * math.pi


def ergotropy_dsts(params: DstsParams, omega_t: float = 1.0, hbar: float = HBAR) -> float:
    """Closed-form DSTS ergotropy; pass ``hbar=1, omega_t=1`` for quanta."""
    r = params.zeta_abs
    return hbar * omega_t * (abs(params.beta) ** 2 + math.sinh(r) ** 2 * (2.0 * params.nbar + 1.0))


def energy_dsts(params: DstsParams, omega_t: float = 1.0, hbar: float = HBAR) -> float:
    return ergotropy_dsts(params, omega_t, hbar) + hbar * omega_t * params.nbar


def variance_dsts(params: DstsParams) -> float:
    """Number variance of a DSTS, in quanta squared.

    With ``b = a - beta`` Gaussian and zero mean, N = <b+ b> and M = <b b>:
    Var n = |beta|^2 (2N + 1) + 2 Re(beta*^2 M) + N (N + 1) + |M|^2.
    """
    n_fl, m_fl = gaussian_moments(params)
    b = params.beta
    return (
        abs(b) ** 2 * (2.0 * n_fl + 1.0)
        + 2.0 * (b.conjugate() ** 2 * m_fl).real
        + n_fl * (n_fl + 1.0)
        + abs(m_fl) ** 2
    )


def _matrix(x) -> np.ndarray:
    return np.asarray(x, dtype=complex)


def _check_hermitian(m, what):
    if np.max(np.abs(m - m.conj().T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(m))):
        raise ValueError(f"{what} is not Hermitian")


def passive_state(state, hamiltonian) -> QuantumState:
    """Pair descending state populations with ascending energy eigenvectors.

    Ties in either spectrum are broken by index with a stable sort.
    """
    rho, h = _matrix(state), _matrix(hamiltonian)
    _check_hermitian(rho, "state")
    _check_hermitian(h, "hamiltonian")
    p = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    p = p[np.argsort(-p, kind="stable")]
    e, vecs = np.linalg.eigh(0.5 * (h + h.conj().T))
    order = np.argsort(e, kind="stable")
    v = vecs[:, order]
    space = state.space if isinstance(state, QuantumState) else "fock"
    return QuantumState((v * p) @ v.conj().T, space, check=False)


def ergotropy_generic(state, hamiltonian) -> float:
    """Tr[H rho] minus the energy of the passive state, in the units of ``hamiltonian``."""
    rho, h = _matrix(state), _matrix(hamiltonian)
    _check_hermitian(rho, "state")
    _check_hermitian(h, "hamiltonian")
    p = np.sort(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)))[::-1]
    e = np.sort(np.linalg.eigvalsh(0.5 * (h + h.conj().T)))
    return float(np.trace(h @ rho).real - np.dot(p, e))


def energy_variance(state, hamiltonian) -> float:
    rho, h = _matrix(state), _matrix(hamiltonian)
    _check_hermitian(rho, "state")
    _check_hermitian(h, "hamiltonian")
    mean = np.trace(h @ rho).real
    hs = h - mean * np.eye(h.shape[0])
    return float(np.trace(hs @ hs @ rho).real)


def oscillator_hamiltonian(dim: int, omega_t: float = 1.0, hbar: float = 1.0) -> np.ndarray:
    """hbar omega_t (n + 1/2); defaults give quanta."""
    return hbar * omega_t * np.diag(np.arange(dim) + 0.5).astype(complex)


def displacement_limit(beta_abs):
    """Relative energy fluctuation |beta| / (|beta|^2 + 1/2) of a coherent state."""
    b = np.asarray(beta_abs, dtype=float)
    if np.any(b < 0):
        raise ValueError("|beta| must be nonnegative")
    out = b / (b**2 + 0.5)
    return float(out) if out.ndim == 0 else out


def temperature_from_polarization(s: float, omega_z_eff: float = TWO_PI * 13e6) -> float:
    """Invert <sigma_z> = -tanh(hbar omega_z / 2 k_B T); returns kelvin."""
    if s == -1.0:
        raise ValueError("full polarization s = -1 corresponds to T = 0, which is unreachable")
    if not -1.0 < s < 0.0:
        raise ValueError(f"polarization must lie in (-1, 0), got {s}")
    return HBAR * omega_z_eff / (2.0 * KB * math.atanh(-s))


def polarization_from_temperature(T: float, omega_z_eff: float = TWO_PI * 13e6) -> float:
    if not T > 0:
        raise ValueError("temperature must be positive")
    return -math.tanh(HBAR * omega_z_eff / (2.0 * KB * T))


@dataclass(frozen=True)
class ThermoReport:
    t_HE: float
    energy_quanta: float
    ergotropy_quanta: float
    delta_E_over_E: float
    nbar: float
    beta_abs: float
    zeta_abs: float
    source: str
    rms_residual: float = float("nan")

    def __post_init__(self):
        if self.ergotropy_quanta > self.energy_quanta + 1e-9:
            raise ValueError("ergotropy exceeds energy")
        if self.delta_E_over_E < 0:
            raise ValueError("negative relative fluctuation")

    @property
    def work_fraction(self) -> float:
        return self.ergotropy_quanta / self.energy_quanta if self.energy_quanta > 0 else 0.0

    @property
    def displacement_limit(self) -> float:
        return displacement_limit(self.beta_abs)


def _ratio(num, den):
    return num / den if den > 0 else 0.0


def report_from_fit(fit: FitResult, t_HE: float = 0.0) -> ThermoReport:
    p = fit.params
    e = energy_dsts(p, 1.0, 1.0)
    w = ergotropy_dsts(p, 1.0, 1.0)
    de = math.sqrt(max(variance_dsts(p), 0.0))
    return ThermoReport(t_HE, e, w, _ratio(de, e), p.nbar, abs(p.beta), p.zeta_abs, "fit", fit.rms_residual)


def report_from_state(state, t_HE: float = 0.0) -> ThermoReport:
    """Generic trace formulas on a flywheel state; nbar is the thermal share E - W."""
    rho = _matrix(state)
    h = oscillator_hamiltonian(rho.shape[0])
    e = float(np.trace(h @ rho).real) - 0.5
    w = min(ergotropy_generic(rho, h), e)
    var = max(energy_variance(rho, h), 0.0)
    n = np.arange(1, rho.shape[0])
    a_mean = complex(np.sum(np.sqrt(n) * np.diagonal(rho, offset=-1)))
    return ThermoReport(t_HE, e, w, _ratio(math.sqrt(var), e), max(e - w, 0.0), abs(a_mean), float("nan"), "simulation")


def report_from_trajectory(traj, t_HE: float, omega_t: float | None = None, averaged: bool = True) -> ThermoReport:
    """Report at ``t_HE`` from per-snapshot observables, cycle-averaged by default."""
    from .engine import cycle_average

    if omega_t is None:
        omega_t = traj.config.omega_t
    src = cycle_average(traj, omega_t) if averaged else traj
    i = int(np.argmin(np.abs(src.times - t_HE)))
    o = src.observables
    e, w = float(o["n"][i]), float(o["ergotropy"][i])
    w = min(w, e)
    # variance from the instantaneous snapshot: averaging <n^2> and <n> separately
    # would add the intra-cycle oscillation of <n>
    # (same for |<a>|: the complex mean rotates at omega_t and averages out)
    raw = traj.observables
    var = max(float(raw["n2"][i]) - float(raw["n"][i]) ** 2, 0.0)
    return ThermoReport(
        float(traj.times[i]), e, w, _ratio(math.sqrt(var), e), max(e - w, 0.0), abs(raw["a"][i]), float("nan"), "simulation"
    )


def report(source, omega_t: float = 1.0, t_HE: float = 0.0) -> ThermoReport:
    """Dispatch on the source type: FitResult, Trajectory or flywheel state."""
    if isinstance(source, FitResult):
        return report_from_fit(source, t_HE)
    if hasattr(source, "observables"):
        return report_from_trajectory(source, t_HE, omega_t)
    return report_from_state(source, t_HE)


REPORT_COLUMNS = tuple(f.name for f in fields(ThermoReport))


def write_report_csv(rows, path, meta: dict | None = None) -> None:
    lines = [f"# {k}={v}" for k, v in (meta or {}).items()]
    lines.append(",".join(REPORT_COLUMNS))
    for r in rows:
        d = asdict(r)
        lines.append(",".join(d[c] if isinstance(d[c], str) else repr(float(d[c])) for c in REPORT_COLUMNS))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def read_report_csv(path) -> list:
    rows, header = [], None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#") or not line:
            continue
        if header is None:
            header = line.split(",")
            continue
        vals = line.split(",")
        kw = {h: (v if h == "source" else float(v)) for h, v in zip(header, vals)}
        rows.append(ThermoReport(**kw))
    return rows
