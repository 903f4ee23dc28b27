"""Independent reference computations used by the tests.

None of these reuse package code paths: they are closed forms, brute-force
sums or classical ODE integrations.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import gammaln

HBAR = 1.054571817e-34
KB = 1.380649e-23


def coherent_coeffs(alpha: complex, dim: int) -> np.ndarray:
    """exp(-|a|^2/2) a^n / sqrt(n!) via log-gamma."""
    n = np.arange(dim)
    mag = np.exp(-0.5 * abs(alpha) ** 2 + n * np.log(abs(alpha) + 1e-300) - 0.5 * gammaln(n + 1))
    if alpha == 0:
        mag = (n == 0).astype(float)
    return mag * np.exp(1j * np.angle(alpha) * n)


def thermal_diag(nbar: float, dim: int) -> np.ndarray:
    n = np.arange(dim)
    return nbar**n / (nbar + 1.0) ** (n + 1)


def q_thermal(nbar: float, alpha) -> np.ndarray:
    return np.exp(-np.abs(alpha) ** 2 / (nbar + 1.0)) / (math.pi * (nbar + 1.0))


def q_displaced_thermal(beta: complex, nbar: float, alpha) -> np.ndarray:
    return q_thermal(nbar, np.asarray(alpha) - beta)


def sqrt_number_matrix(dim: int) -> np.ndarray:
    """Lowering operator assembled element by element."""
    a = np.zeros((dim, dim), dtype=complex)
    for k in range(1, dim):
        a[k - 1, k] = math.sqrt(k)
    return a


def square_wave_drive(cfg, t_end: float, n_eval: int = 2001):
    """Classical square-wave-driven oscillator in the rotating frame.

    Integrates d(alpha)/dt = -i eta (Delta_S / 2) s(t) exp(i omega_t t) with
    s(t) = s_hot on even half-periods and s_cold on odd ones, one half-period
    per solver call so the discontinuities sit on segment boundaries.
    Returns (t, |alpha(t)|).
    """
    w = cfg.omega_t
    g = cfg.eta * cfg.delta_S / 2.0
    half = math.pi / w

    def rhs(t, y, s):
        z = -1j * g * s * np.exp(1j * w * t)
        return [z.real, z.imag]

    ts, amps = [0.0], [0.0]
    y = np.zeros(2)
    m = 0
    t0 = 0.0
    while t0 < t_end - 1e-15:
        t1 = min(t0 + half, t_end)
        s = cfg.s_hot if m % 2 == 0 else cfg.s_cold
        sol = solve_ivp(rhs, (t0, t1), y, args=(s,), rtol=1e-11, atol=1e-13, dense_output=True)
        grid = np.linspace(t0, t1, max(3, n_eval // 50))[1:]
        vals = sol.sol(grid)
        ts.extend(grid)
        amps.extend(np.hypot(vals[0], vals[1]))
        y = sol.y[:, -1]
        t0 = t1
        m += 1
    return np.array(ts), np.array(amps)


def two_level_stationary(gamma_up: float, gamma_down: float) -> float:
    """<sigma_z> fixed point of the rate equation for the up population."""
    p_up = gamma_up / (gamma_up + gamma_down)
    return 2.0 * p_up - 1.0
