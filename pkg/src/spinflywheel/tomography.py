"""Husimi-Q evaluation, polar phase-space scans and shot-noise emulation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .hilbert import coherent_vector


class CoverageError(ValueError):
    """The scanned grid does not cover the support of the Q function."""


@dataclass(frozen=True)
class QGrid:
    """Polar sample points: origin plus rings of equally spaced angles.

    Each point owns a cell: the origin the disk of radius ``dr / 2``, ring
    points their angular sector of the band ``[r - dr/2, r + dr/2]``.
    """

    r: np.ndarray
    theta: np.ndarray
    ring: np.ndarray
    r_max: float
    dr: float
    base_angles: int

    def __post_init__(self):
        for name in ("r", "theta", "ring"):
            arr = np.asarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.r)

    @property
    def n_rings(self) -> int:
        return int(self.ring.max())

    @property
    def alpha(self) -> np.ndarray:
        return self.r * np.exp(1j * self.theta)

    @property
    def areas(self) -> np.ndarray:
        counts = np.bincount(self.ring)
        band = 2.0 * np.pi * self.r * self.dr
        out = band / counts[self.ring]
        out[self.ring == 0] = np.pi * (self.dr / 2.0) ** 2
        return out

    def ring_counts(self) -> np.ndarray:
        return np.bincount(self.ring)


def polar_grid(r_max: float, n_rings: int, base_angles: int = 8) -> QGrid:
    """Rings at ``j * r_max / n_rings`` carrying ``max(base_angles, round(base_angles * j))`` angles."""
    if not r_max > 0:
        raise ValueError("r_max must be positive")
    if n_rings < 1:
        raise ValueError("need at least one ring")
    if base_angles < 4:
        raise ValueError("base_angles must be >= 4")
    dr = r_max / n_rings
    r, th, ring = [0.0], [0.0], [0]
    for j in range(1, n_rings + 1):
        m = max(base_angles, int(round(base_angles * j)))
        r.extend([j * dr] * m)
        th.extend(2.0 * np.pi * np.arange(m) / m)
        ring.extend([j] * m)
    return QGrid(np.array(r), np.array(th), np.array(ring), float(r_max), float(dr), int(base_angles))


@dataclass(frozen=True)
class QDataSet:
    grid: QGrid
    values: np.ndarray
    shots: np.ndarray
    raw: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        shots = np.asarray(self.shots, dtype=np.int64)
        if vals.shape != (len(self.grid),) or shots.shape != vals.shape:
            raise ValueError("one value and one shot count per grid point required")
        vals.setflags(write=False)
        shots.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "shots", shots)


def q_values(state, alpha) -> np.ndarray:
    """Husimi Q = <alpha|rho|alpha> / pi for an array of phase-space points."""
    rho = np.asarray(state)
    alpha = np.asarray(alpha, dtype=complex)
    c = coherent_vector(alpha.ravel(), rho.shape[0])
    q = np.sum((c.conj() @ rho) * c, axis=1).real / np.pi
    return np.clip(q, 0.0, 1.0 / np.pi).reshape(alpha.shape)


def q_value(state, alpha: complex) -> float:
    return float(q_values(state, np.array([alpha]))[0])


def noiseless_dataset(state, grid: QGrid) -> QDataSet:
    """Exact Q values on the grid, flagged as already rescaled."""
    q = q_values(state, grid.alpha)
    return QDataSet(grid, q, np.zeros(len(grid), dtype=np.int64), raw=False, meta={"c": 0.0, "s": 1.0})


def _seed_key(seed) -> tuple:
    """Normalize an int or sequence of ints to a SeedSequence entropy tuple."""
    return tuple(int(x) for x in np.atleast_1d(seed))


def sample_shots(state, grid: QGrid, shots_per_point: int = 1000, readout=(0.0, 0.0), seed=0) -> QDataSet:
    """Emulate binary ground-state detection after each displacement kick.

    ``readout = (p_dark_given_n0, p_bright_given_not_n0)``.  Each point gets
    its own generator spawned from ``seed`` so results do not depend on the
    evaluation order.  Values are detected fractions divided by pi.
    """
    if shots_per_point < 1:
        raise ValueError("shots_per_point must be >= 1")
    e0, e1 = readout
    if not (0.0 <= e0 <= 1.0 and 0.0 <= e1 <= 1.0):
        raise ValueError("readout probabilities must lie in [0, 1]")
    p_true = np.pi * q_values(state, grid.alpha)
    p_eff = np.clip(p_true * (1.0 - e0) + (1.0 - p_true) * e1, 0.0, 1.0)
    seed = _seed_key(seed)
    children = np.random.SeedSequence(seed).spawn(len(grid))
    counts = np.array(
        [np.random.default_rng(ch).binomial(shots_per_point, p) for ch, p in zip(children, p_eff)]
    )
    shots = np.full(len(grid), shots_per_point, dtype=np.int64)
    meta = {"seed": seed, "readout": tuple(readout)}
    return QDataSet(grid, counts / shots_per_point / np.pi, shots, raw=True, meta=meta)


def integrate_q(data: QDataSet) -> float:
    return float(np.sum(data.values * data.grid.areas))


def q_moments(data: QDataSet):
    """Return ``(m1, m2)``: the Q-weighted means of ``alpha`` and ``|alpha|^2``.

    Antinormal ordering makes these estimators of ``<a>`` and ``<n> + 1``.
    """
    w = data.values * data.grid.areas
    al = data.grid.alpha
    return complex(np.sum(al * w)), float(np.sum(np.abs(al) ** 2 * w))


def rescale_raw(data: QDataSet, coverage: float = 0.2) -> QDataSet:
    """Subtract the outermost-ring mean and normalize the quadrature integral to one.

    Raises CoverageError when the outer ring still carries more than
    ``coverage`` times the peak value.
    """
    grid = data.grid
    outer = grid.ring == grid.n_rings
    c = float(np.mean(data.values[outer]))
    peak = float(np.max(data.values))
    if peak <= 0 or c >= coverage * peak:
        raise CoverageError(
            f"outer ring mean {c:.3g} is not below {coverage:g} x peak {peak:.3g}; increase r_max"
        )
    shifted = data.values - c
    s = float(np.sum(shifted * grid.areas))
    if not s > 0:
        raise CoverageError("shifted Q data integrates to a nonpositive value")
    meta = dict(data.meta, c=c, s=s)
    return replace(data, values=shifted / s, raw=False, meta=meta)


def adapted_radius(m2: float, margin: float = 3.0) -> float:
    """Scan radius sqrt(m2) + margin used for the default grid."""
    return math.sqrt(max(m2, 0.0)) + margin


def write_dataset_csv(data: QDataSet, path, meta: dict | None = None) -> None:
    g = data.grid
    head = {
        "r_max": repr(g.r_max),
        "dr": repr(g.dr),
        "n_rings": g.n_rings,
        "base_angles": g.base_angles,
        "raw": int(data.raw),
    }
    if "seed" in data.meta:
        head["seed"] = " ".join(str(x) for x in _seed_key(data.meta["seed"]))
    for k in ("c", "s"):
        if k in data.meta:
            head[k] = repr(float(data.meta[k]))
    head.update(meta or {})
    lines = [f"# {k}={v}" for k, v in head.items()]
    lines.append("r,theta,value,shots")
    for r, th, v, n in zip(g.r, g.theta, data.values, data.shots):
        lines.append(f"{float(r)!r},{float(th)!r},{float(v)!r},{int(n)}")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def read_dataset_csv(path):
    """Return ``(dataset, header)``; the grid is rebuilt from the header scheme."""
    head, rows = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            head[k] = v
        elif line.startswith("r,"):
            continue
        elif line:
            rows.append(line.split(","))
    grid = polar_grid(float(head["r_max"]), int(head["n_rings"]), int(head["base_angles"]))
    r = np.array([float(x[0]) for x in rows])
    th = np.array([float(x[1]) for x in rows])
    if len(r) != len(grid) or not (np.allclose(r, grid.r) and np.allclose(th, grid.theta)):
        raise ValueError(f"{path}: point list does not match the declared grid scheme")
    values = np.array([float(x[2]) for x in rows])
    shots = np.array([int(x[3]) for x in rows])
    meta = {}
    if "seed" in head:
        meta["seed"] = tuple(int(x) for x in head["seed"].split())
    for k in ("c", "s"):
        if k in head:
            meta[k] = float(head[k])
    return QDataSet(grid, values, shots, raw=bool(int(head["raw"])), meta=meta), head


def scan(state, n_rings=16, base_angles=6, shots_per_point=1000, readout=(0.0, 0.0), seed=0, r_max=None):
    """Raw scan on a grid whose radius is set by a coarse pilot scan.

    The pilot (8 rings, same shot count, seed offset) starts at radius 4 and
    doubles until the outer ring is below the coverage threshold; its
    second moment then fixes ``r_max = sqrt(m2) + 3``.
    """
    if r_max is None:
        r_pilot = 4.0
        while True:
            pilot = sample_shots(state, polar_grid(r_pilot, 8, base_angles), shots_per_point, readout, seed=_seed_key(seed) + (1,))
            try:
                _, m2 = q_moments(rescale_raw(pilot))
                break
            except CoverageError:
                r_pilot *= 2.0
                if r_pilot > np.sqrt(np.asarray(state).shape[0]) * 2:
                    raise
        r_max = adapted_radius(m2)
    return sample_shots(state, polar_grid(r_max, n_rings, base_angles), shots_per_point, readout, seed)
