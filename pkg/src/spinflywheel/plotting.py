"""Figure rendering for tomography data and flywheel energetics.

Uses the object-oriented Agg API so nothing touches global pyplot state;
safe to call from worker processes.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.tri import Triangulation

from . import __version__
from .dstsfit import model_q_gaussian

RC = {
    "font.size": 9,
    "axes.labelsize": 10,
    "axes.linewidth": 0.8,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "lines.linewidth": 1.4,
    "lines.markersize": 4,
}


def figure_size(width=3.4, ratio=None):
    """Figure size in inches; height defaults to the golden ratio."""
    if ratio is None:
        ratio = (math.sqrt(5) - 1.0) / 2.0
    return (width, width * ratio)


def _save(fig, path, stamp=""):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    FigureCanvasAgg(fig)
    fig.savefig(tmp, format="png", dpi=150, metadata={"Software": f"spinflywheel {__version__}", "Comment": stamp})
    tmp.replace(path)


def plot_q_heatmap(data, path, params=None, title=None, stamp=""):
    """Q data in the alpha plane, with the 1/e^2 contour of a fitted DSTS if given."""
    import matplotlib as mpl

    with mpl.rc_context(RC):
        fig = Figure(figsize=(3.6, 3.2))
        ax = fig.add_subplot(111)
        al = data.grid.alpha
        tri = Triangulation(al.real, al.imag)
        pc = ax.tripcolor(tri, data.values, shading="gouraud", cmap="viridis")
        fig.colorbar(pc, ax=ax, label=r"$Q(\alpha)$")
        if params is not None:
            lim = data.grid.r_max
            xs = np.linspace(-lim, lim, 241)
            xx, yy = np.meshgrid(xs, xs)
            q = model_q_gaussian(params, xx + 1j * yy)
            ax.contour(xx, yy, q, levels=[q.max() * math.exp(-2.0)], colors="k", linewidths=1.0)
        ax.set_aspect("equal")
        ax.set_xlabel(r"Re $\alpha$")
        ax.set_ylabel(r"Im $\alpha$")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        _save(fig, path, stamp)


def plot_energetics(fit_rows, path, sim=None, stamp=""):
    """Two panels: (a) energy and ergotropy, (b) relative fluctuations with the displacement limit.

    ``fit_rows`` are ThermoReports from fits; ``sim`` is an optional dict with
    arrays ``t``, ``energy``, ``ergotropy``, ``dE_over_E`` (times in seconds).
    """
    import matplotlib as mpl

    from .thermo import displacement_limit

    t = np.array([r.t_HE for r in fit_rows]) * 1e6
    e = np.array([r.energy_quanta for r in fit_rows])
    w = np.array([r.ergotropy_quanta for r in fit_rows])
    de = np.array([r.delta_E_over_E for r in fit_rows])
    beta = np.array([r.beta_abs for r in fit_rows])

    with mpl.rc_context(RC):
        fig = Figure(figsize=figure_size(3.6, 1.4))
        ax1, ax2 = fig.subplots(2, 1, sharex=True)
        if sim is not None:
            ts = np.asarray(sim["t"]) * 1e6
            ax1.plot(ts, sim["energy"], color="C0", alpha=0.6, label="E (master eq.)")
            ax1.plot(ts, sim["ergotropy"], color="C1", alpha=0.6, label="W (master eq.)")
            sel = ts > 0.5
            ax2.plot(ts[sel], np.asarray(sim["dE_over_E"])[sel], color="C2", alpha=0.6, label="master eq.")
        ax1.plot(t, e, "o", color="C0", label="E (fit)")
        ax1.plot(t, w, "s", color="C1", label="W (fit)")
        ax1.set_ylabel(r"energy ($\hbar\omega_t$)")
        ax1.legend(loc="upper left")
        ax1.text(0.97, 0.08, "(a)", transform=ax1.transAxes, ha="right")

        ax2.plot(t, de, "o", color="C2", label=r"$\Delta E/E$ (fit)")
        ax2.plot(t, displacement_limit(beta), "--", color="k", label="displacement limit")
        ax2.set_xlabel(r"$t_{HE}$ ($\mu$s)")
        ax2.set_ylabel(r"$\Delta E / E$")
        ax2.legend(loc="upper right")
        ax2.text(0.03, 0.08, "(b)", transform=ax2.transAxes)
        fig.tight_layout()
        _save(fig, path, stamp)
