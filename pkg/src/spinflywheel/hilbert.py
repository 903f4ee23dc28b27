"""Truncated Fock space and spin-1/2 linear algebra.

Composite states live on Fock (x) spin with the spin index running fastest,
so ``embed(A, "fock") == kron(A, I2)``.  The spin basis is ordered
(up, down) and ``sigma_z = diag(+1, -1)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

SPACES = ("fock", "spin", "composite")

HERMITIAN_TOL = 1e-12
STATE_HERMITIAN_TOL = 1e-10
STATE_TRACE_TOL = 1e-8
STATE_EIG_TOL = 1e-8


class TruncationWarning(UserWarning):
    """A requested operator or state is not well resolved by the Fock cutoff."""


class DimensionError(ValueError):
    pass


def _frozen(m) -> np.ndarray:
    m = np.array(m, dtype=complex)
    m.setflags(write=False)
    return m


@dataclass(frozen=True)
class FockSpace:
    dim: int

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 2:
            raise ValueError(f"Fock dimension must be an integer >= 2, got {self.dim}")


@dataclass(frozen=True, eq=False)
class Operator:
    """Square complex matrix tagged with the space it acts on.

    If ``hermitian`` is set the matrix is checked against its adjoint.
    """

    matrix: np.ndarray
    space: str = "fock"
    hermitian: bool = False

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"operator matrix must be square, got {m.shape}")
        if self.space not in SPACES:
            raise ValueError(f"unknown space tag {self.space!r}")
        if self.hermitian and np.max(np.abs(m - m.conj().T), initial=0.0) >= HERMITIAN_TOL * max(
            1.0, np.max(np.abs(m))
        ):
            raise ValueError("operator flagged Hermitian is not Hermitian")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dag(self) -> "Operator":
        return Operator(self.matrix.conj().T, self.space, self.hermitian)

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            return Operator(self.matrix @ other.matrix, self.space)
        return self.matrix @ np.asarray(other)


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Density matrix: Hermitian, unit trace, positive semidefinite.

    Validation uses the tolerances of the module constants; pass
    ``check=False`` to skip it for intermediate objects.
    """

    rho: np.ndarray
    space: str = "fock"
    check: bool = True

    def __post_init__(self):
        rho = _frozen(self.rho)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise DimensionError(f"density matrix must be square, got {rho.shape}")
        if self.space not in SPACES:
            raise ValueError(f"unknown space tag {self.space!r}")
        object.__setattr__(self, "rho", rho)
        if self.check:
            herm = np.max(np.abs(rho - rho.conj().T))
            if herm > STATE_HERMITIAN_TOL:
                raise ValueError(f"density matrix not Hermitian (max deviation {herm:.3g})")
            tr = np.trace(rho).real
            if abs(tr - 1.0) > STATE_TRACE_TOL:
                raise ValueError(f"density matrix trace {tr!r} differs from 1")
            mineig = self.min_eigenvalue()
            if mineig < -STATE_EIG_TOL:
                raise ValueError(f"density matrix has negative eigenvalue {mineig:.3g}")

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.rho)[0])

    def purity(self) -> float:
        return float(np.real(np.vdot(self.rho.conj().T, self.rho)))

    def expect(self, op) -> complex:
        return complex(np.trace(np.asarray(op) @ self.rho))

    def __array__(self, dtype=None, copy=None):
        return self.rho if dtype is None else self.rho.astype(dtype)


def _dim(space) -> int:
    return space.dim if isinstance(space, FockSpace) else FockSpace(int(space)).dim


def ladder_ops(space):
    """Return ``(a, adag, n)`` on the truncated Fock space.

    ``a|k> = sqrt(k)|k-1>``; ``adag`` is the exact adjoint of the truncated
    ``a``, so ``[a, adag]`` equals the identity except in the last diagonal
    entry, which is ``1 - dim``.  ``n`` is stored with exact integer
    entries; ``adag @ a`` reproduces it up to the rounding of sqrt(k)^2.
    """
    d = _dim(space)
    a = np.diag(np.sqrt(np.arange(1, d, dtype=float)), k=1).astype(complex)
    adag = a.conj().T
    n = np.diag(np.arange(d, dtype=float)).astype(complex)
    return Operator(a), Operator(adag), Operator(n, hermitian=True)


def number_op(space) -> Operator:
    return ladder_ops(space)[2]


def zero_point_length(mass: float, omega_t: float) -> float:
    """Ground-state spread sqrt(hbar / (2 m omega_t)) in metres."""
    from .constants import HBAR

    return float(np.sqrt(HBAR / (2.0 * mass * omega_t)))


def position_op(space, x_zpf: float) -> Operator:
    if x_zpf <= 0:
        raise ValueError("x_zpf must be positive")
    a, adag, _ = ladder_ops(space)
    return Operator(x_zpf * (a.matrix + adag.matrix), hermitian=True)


def displacement_op(alpha: complex, space) -> Operator:
    """D(alpha) = exp(alpha adag - alpha* a) by exponentiating the truncated generator."""
    d = _dim(space)
    alpha = complex(alpha)
    if alpha == 0:
        return Operator(np.eye(d))
    if abs(alpha) ** 2 > d / 4:
        warnings.warn(
            f"|alpha|^2 = {abs(alpha) ** 2:.3g} exceeds dim/4 = {d / 4:g}",
            TruncationWarning,
            stacklevel=2,
        )
    a, adag, _ = ladder_ops(d)
    gen = alpha * adag.matrix - np.conj(alpha) * a.matrix
    return Operator(expm(gen))


def squeeze_op(zeta: complex, space) -> Operator:
    """S(zeta) = exp((zeta* a^2 - zeta adag^2) / 2)."""
    d = _dim(space)
    zeta = complex(zeta)
    if zeta == 0:
        return Operator(np.eye(d))
    if abs(zeta) > 1.5:
        warnings.warn(f"|zeta| = {abs(zeta):.3g} > 1.5", TruncationWarning, stacklevel=2)
    a, adag, _ = ladder_ops(d)
    a2 = a.matrix @ a.matrix
    gen = 0.5 * (np.conj(zeta) * a2 - zeta * (adag.matrix @ adag.matrix))
    return Operator(expm(gen))


def thermal_populations(nbar: float, dim: int) -> np.ndarray:
    """Bose-Einstein occupation probabilities, renormalized after truncation."""
    if nbar < 0:
        raise ValueError(f"mean occupancy must be nonnegative, got {nbar}")
    if nbar == 0:
        p = np.zeros(dim)
        p[0] = 1.0
        return p
    q = nbar / (nbar + 1.0)
    p = q ** np.arange(dim) / (nbar + 1.0)
    tail = q**dim
    if tail > 1e-6:
        warnings.warn(
            f"thermal tail mass {tail:.2g} beyond dim={dim} (nbar={nbar:g})",
            TruncationWarning,
            stacklevel=3,
        )
    return p / p.sum()


def thermal_state(nbar: float, space) -> QuantumState:
    d = _dim(space)
    return QuantumState(np.diag(thermal_populations(nbar, d)))


def fock_state(k: int, space) -> QuantumState:
    d = _dim(space)
    rho = np.zeros((d, d))
    rho[k, k] = 1.0
    return QuantumState(rho)


def coherent_vector(alpha, dim: int) -> np.ndarray:
    """Analytic coherent-state amplitudes exp(-|alpha|^2/2) alpha^n / sqrt(n!).

    ``alpha`` may be an array; the result then has shape ``alpha.shape + (dim,)``.
    The recurrence c_n = c_{n-1} alpha / sqrt(n) avoids factorial overflow.
    """
    alpha = np.asarray(alpha, dtype=complex)
    out = np.empty(alpha.shape + (dim,), dtype=complex)
    out[..., 0] = np.exp(-0.5 * np.abs(alpha) ** 2)
    inv_sqrt = 1.0 / np.sqrt(np.arange(1, dim))
    for k in range(1, dim):
        out[..., k] = out[..., k - 1] * alpha * inv_sqrt[k - 1]
    return out


def coherent_state(alpha: complex, space) -> QuantumState:
    d = _dim(space)
    v = coherent_vector(alpha, d)
    v = v / np.linalg.norm(v)
    return QuantumState(np.outer(v, v.conj()))


def spin_ops():
    """Return ``(sigma_z, sigma_plus, sigma_minus)`` in the (up, down) basis."""
    sz = np.diag([1.0, -1.0]).astype(complex)
    sp = np.array([[0, 1], [0, 0]], dtype=complex)  # |up><down|
    return Operator(sz, "spin", hermitian=True), Operator(sp, "spin"), Operator(sp.T.copy(), "spin")


def spin_state(s_z: float) -> QuantumState:
    """Diagonal spin state with polarization <sigma_z> = s_z."""
    if not -1.0 <= s_z <= 1.0:
        raise ValueError(f"polarization must lie in [-1, 1], got {s_z}")
    return QuantumState(np.diag([(1 + s_z) / 2, (1 - s_z) / 2]), "spin")


def embed(op, which: str, other_dim: int, spin_dim: int = 2) -> Operator:
    """Lift a Fock or spin operator to the composite space.

    ``other_dim`` is the dimension of the factor that is *not* given: the
    Fock dimension when embedding a spin operator, ignored otherwise.
    """
    m = np.asarray(op)
    if which == "fock":
        return Operator(np.kron(m, np.eye(spin_dim)), "composite")
    if which == "spin":
        if m.shape != (spin_dim, spin_dim):
            raise DimensionError(f"spin operator must be {spin_dim}x{spin_dim}, got {m.shape}")
        return Operator(np.kron(np.eye(other_dim), m), "composite")
    raise ValueError(f"which must be 'fock' or 'spin', got {which!r}")


def product_state(fock: QuantumState, spin: QuantumState) -> QuantumState:
    return QuantumState(np.kron(np.asarray(fock), np.asarray(spin)), "composite")


def partial_trace(state, keep: str, spin_dim: int = 2) -> QuantumState:
    rho = np.asarray(state)
    d = rho.shape[0]
    if d % spin_dim:
        raise DimensionError(f"composite dimension {d} not divisible by spin dimension {spin_dim}")
    nf = d // spin_dim
    r = rho.reshape(nf, spin_dim, nf, spin_dim)
    if keep == "fock":
        red = np.einsum("isjs->ij", r)
        space = "fock"
    elif keep == "spin":
        red = np.einsum("iaib->ab", r)
        space = "spin"
    else:
        raise ValueError(f"keep must be 'fock' or 'spin', got {keep!r}")
    red = 0.5 * (red + red.conj().T)
    return QuantumState(red, space, check=isinstance(state, QuantumState) and state.check)
