"""Displaced squeezed thermal states and RMS fitting of their Q functions.

Two model paths exist.  The Fock path builds ``D(beta) S(zeta) rho_th S^+ D^+``
in a truncated basis and evaluates Q directly; the Gaussian path uses the
closed-form Q function of the same state and is what the optimizer calls.
"""

from __future__ import annotations

import cmath
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .hilbert import QuantumState, TruncationWarning, displacement_op, squeeze_op, thermal_state
from .tomography import QDataSet, q_moments, q_values

TWO_PI = 2.0 * math.pi
PARAM_TOL = 1e-6
MAX_ITER = 2000
ZETA_ZERO = 1e-3


class PoorlyConstrainedWarning(UserWarning):
    """Converged fit starts disagree more than the parameter tolerance allows."""


class FitConvergenceError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class DstsParams:
    beta: complex = 0j
    zeta: complex = 0j
    nbar: float = 0.0

    def __post_init__(self):
        if self.nbar < 0:
            raise ValueError(f"nbar must be nonnegative, got {self.nbar}")
        object.__setattr__(self, "beta", complex(self.beta))
        object.__setattr__(self, "zeta", complex(self.zeta))
        object.__setattr__(self, "nbar", float(self.nbar))

    @classmethod
    def from_polar(cls, beta, zeta_abs, zeta_arg, nbar):
        return cls(complex(beta), zeta_abs * cmath.exp(1j * zeta_arg), nbar)

    @classmethod
    def from_vector(cls, x):
        """Map (Re beta, Im beta, |zeta|, arg zeta, nbar) to parameters.

        Negative ``nbar`` is reflected; negative ``|zeta|`` is reflected with
        ``arg zeta`` shifted by pi (the same squeeze operator).
        """
        br, bi, r, phi, nb = (float(v) for v in x)
        if r < 0:
            r, phi = -r, phi + math.pi
        return cls(complex(br, bi), r * cmath.exp(1j * phi), abs(nb))

    @property
    def zeta_abs(self) -> float:
        return abs(self.zeta)

    @property
    def zeta_arg(self) -> float:
        """arg zeta in [0, 2 pi); 0 when zeta vanishes."""
        if self.zeta == 0:
            return 0.0
        return cmath.phase(self.zeta) % TWO_PI

    def vector(self) -> np.ndarray:
        return np.array([self.beta.real, self.beta.imag, self.zeta_abs, self.zeta_arg, self.nbar])

    def mean_number(self) -> float:
        return abs(self.beta) ** 2 + (2.0 * self.nbar + 1.0) * math.sinh(self.zeta_abs) ** 2 + self.nbar


def gaussian_moments(params: DstsParams):
    """Return ``(N, M)`` = (<b^+ b>, <b b>) of the fluctuation ``b = a - beta``."""
    r, phi, nb = params.zeta_abs, params.zeta_arg, params.nbar
    n_fluct = (2.0 * nb + 1.0) * math.sinh(r) ** 2 + nb
    m_fluct = -(2.0 * nb + 1.0) * cmath.exp(1j * phi) * math.sinh(r) * math.cosh(r)
    return n_fluct, m_fluct


def q_covariance(params: DstsParams) -> np.ndarray:
    """Covariance of the Q function in (Re alpha, Im alpha)."""
    r, phi, nb = params.zeta_abs, params.zeta_arg, params.nbar
    c, s = math.cos(phi / 2.0), math.sin(phi / 2.0)
    rot = np.array([[c, -s], [s, c]])
    wigner = (2.0 * nb + 1.0) / 4.0 * rot @ np.diag([math.exp(-2 * r), math.exp(2 * r)]) @ rot.T
    return wigner + 0.25 * np.eye(2)


def _check_truncation(params: DstsParams, dim: int):
    if params.mean_number() >= dim / 4:
        warnings.warn(
            f"<n> = {params.mean_number():.3g} is not below dim/4 = {dim / 4:g}",
            TruncationWarning,
            stacklevel=3,
        )


def dsts_state(params: DstsParams, space=64) -> QuantumState:
    d = space.dim if hasattr(space, "dim") else int(space)
    _check_truncation(params, d)
    rho = np.asarray(thermal_state(params.nbar, d))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        u = displacement_op(params.beta, d).matrix @ squeeze_op(params.zeta, d).matrix
    rho = u @ rho @ u.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return QuantumState(rho / np.trace(rho).real)


def model_q_gaussian(params: DstsParams, alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=complex)
    cov = q_covariance(params)
    inv = np.linalg.inv(cov)
    du = alpha.real - params.beta.real
    dv = alpha.imag - params.beta.imag
    quad = inv[0, 0] * du * du + 2.0 * inv[0, 1] * du * dv + inv[1, 1] * dv * dv
    return np.exp(-0.5 * quad) / (TWO_PI * math.sqrt(np.linalg.det(cov)))


def model_q(params: DstsParams, alpha, method: str = "gaussian", dim: int = 64):
    """Q function of the DSTS at ``alpha`` (scalar or array)."""
    scalar = np.ndim(alpha) == 0
    if method == "gaussian":
        out = model_q_gaussian(params, alpha)
    elif method == "fock":
        out = q_values(dsts_state(params, dim), alpha)
    else:
        raise ValueError(f"method must be 'gaussian' or 'fock', got {method!r}")
    return float(out) if scalar else out


def rms_residual(params: DstsParams, data: QDataSet, method: str = "gaussian", dim: int = 64) -> float:
    diff = data.values - model_q(params, data.grid.alpha, method, dim)
    return float(np.sqrt(np.mean(diff**2)))


def init_from_moments(data: QDataSet) -> DstsParams:
    """Moment-based starting point for the fit.

    Excess occupancy ``m2 - 1 - |m1|^2`` goes 80 % to ``nbar`` and 20 % to
    squeezing; the squeeze axis comes from the second angular harmonic of
    the data about its centroid.
    """
    m1, m2 = q_moments(data)
    excess = max(m2 - 1.0 - abs(m1) ** 2, 0.0)
    nbar = 0.8 * excess
    sinh2 = 0.2 * excess / (2.0 * nbar + 1.0)
    r = math.asinh(math.sqrt(sinh2))
    w = data.values * data.grid.areas
    harmonic = complex(np.sum((data.grid.alpha - m1) ** 2 * w))
    phi = cmath.phase(-harmonic) % TWO_PI if abs(harmonic) > 0 else 0.0
    return DstsParams(m1, r * cmath.exp(1j * phi), nbar)


@dataclass(frozen=True)
class FitResult:
    params: DstsParams
    rms_residual: float
    iterations: int
    multistart_spread: float
    n_starts: int = 1
    dim: int = 64
    seed: int = 0
    zeta_indeterminate: bool = False

    def record(self, **extra) -> dict:
        p = self.params
        rec = {
            "beta_re": p.beta.real,
            "beta_im": p.beta.imag,
            "zeta_abs": p.zeta_abs,
            "zeta_arg": p.zeta_arg,
            "nbar": p.nbar,
            "rms_residual": self.rms_residual,
            "iterations": self.iterations,
            "multistart_spread": self.multistart_spread,
            "n_starts": self.n_starts,
            "dim": self.dim,
            "seed": self.seed,
            "zeta_indeterminate": self.zeta_indeterminate,
        }
        rec.update(extra)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "FitResult":
        params = DstsParams.from_polar(
            complex(rec["beta_re"], rec["beta_im"]), rec["zeta_abs"], rec["zeta_arg"], rec["nbar"]
        )
        return cls(
            params,
            rec["rms_residual"],
            rec["iterations"],
            rec["multistart_spread"],
            rec["n_starts"],
            rec["dim"],
            rec["seed"],
            rec["zeta_indeterminate"],
        )


def _canonical(params: DstsParams):
    if params.zeta_abs < ZETA_ZERO:
        return DstsParams(params.beta, params.zeta_abs, params.nbar), True
    return params, False


def _param_distance(p: DstsParams, q: DstsParams) -> float:
    return float(
        np.linalg.norm(
            [p.beta.real - q.beta.real, p.beta.imag - q.beta.imag, abs(p.zeta - q.zeta), p.nbar - q.nbar]
        )
    )


def _simplex(x0):
    steps = np.array([0.1, 0.1, 0.05, 0.3, 0.1])
    simplex = np.tile(x0, (6, 1))
    for i in range(5):
        simplex[i + 1, i] += steps[i]
    return simplex


def fit(data: QDataSet, dim: int = 64, n_starts: int = 4, seed: int = 0) -> FitResult:
    """Fit (beta, zeta, nbar) by minimizing the RMS Q-function residual.

    Each start runs a Nelder-Mead simplex (iteration cap 2000, parameter
    tolerance 1e-6).  Start 0 is the moment estimate; the others are random
    perturbations seeded by ``seed``.  The lowest residual wins, ties going
    to the lowest start index.

    Raises
    ------
    FitConvergenceError
        If no start converges; ``.best`` carries the best unconverged result.
    """
    if len(data.grid) < 30:
        raise ValueError(f"need at least 30 data points, got {len(data.grid)}")
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    alpha = data.grid.alpha
    meas = data.values

    def objective(x):
        diff = meas - model_q_gaussian(DstsParams.from_vector(x), alpha)
        return math.sqrt(float(np.mean(diff * diff)))

    p0 = init_from_moments(data)
    rng = np.random.default_rng(seed)
    starts = [p0.vector()]
    for _ in range(n_starts - 1):
        x = p0.vector().copy()
        x[0:2] += rng.normal(0.0, 0.2, 2)
        x[2] = abs(x[2] + rng.uniform(0.0, 0.2))
        x[3] = rng.uniform(0.0, TWO_PI)
        x[4] = x[4] * rng.uniform(0.5, 1.5) + rng.uniform(0.0, 0.1)
        starts.append(x)

    results = []
    for x0 in starts:
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={
                "maxiter": MAX_ITER,
                "maxfev": 4 * MAX_ITER,
                "xatol": PARAM_TOL,
                "fatol": 1e-14,
                "initial_simplex": _simplex(x0),
            },
        )
        results.append(res)

    order = sorted(range(len(results)), key=lambda i: (results[i].fun, i))
    converged = [i for i in order if results[i].success]
    if not converged:
        best = results[order[0]]
        params, indet = _canonical(DstsParams.from_vector(best.x))
        partial = FitResult(params, objective(params.vector()), int(best.nit), float("nan"), n_starts, dim, seed, indet)
        raise FitConvergenceError(f"no fit start converged within {MAX_ITER} iterations", partial)

    best = results[converged[0]]
    params, indet = _canonical(DstsParams.from_vector(best.x))
    # starts that reached the winning basin
    same = [
        DstsParams.from_vector(results[i].x)
        for i in converged
        if results[i].fun <= best.fun * (1.0 + 1e-3) + 1e-12
    ]
    spread = max((_param_distance(p, q) for p in same for q in same), default=0.0)
    if spread > 10 * PARAM_TOL:
        warnings.warn(
            f"fit poorly constrained: converged starts differ by {spread:.2g}",
            PoorlyConstrainedWarning,
            stacklevel=2,
        )
    _check_truncation(params, dim)
    return FitResult(params, objective(params.vector()), int(best.nit), spread, n_starts, dim, seed, indet)


def write_fit_log(records, path) -> None:
    """One JSON object per line, keys sorted."""
    path = Path(path)
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def append_fit_record(record: dict, path) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_fit_log(path) -> list:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
