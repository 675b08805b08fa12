"""Figure rendering for run directories (PNG files via the Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .grid import SpinorField  # noqa: E402


def density_map(field: SpinorField, path, clusters=(), predicted=None, title: str = "") -> Path:
    """Density image with detected cluster centroids (o) and predicted positions (x)."""
    g = field.grid
    rho = field.density()
    ext = [g.x[0], g.x[-1] + g.dx, g.z[0], g.z[-1] + g.dz]
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    im = ax.imshow(rho.T, origin="lower", extent=ext, cmap="magma", aspect="equal")
    fig.colorbar(im, ax=ax, label=r"$|\psi|^2$")
    if len(clusters):
        ax.plot([c["x"] for c in clusters], [c["z"] for c in clusters], "o", mfc="none", mec="c", ms=9)
    if predicted is not None and len(predicted):
        pr = np.asarray(predicted)
        ax.plot(pr[:, 0], pr[:, 1], "x", color="w", ms=6)
    ax.set_xlabel(r"$x\ [1/\kappa]$")
    ax.set_ylabel(r"$z\ [1/\kappa]$")
    ax.set_title(title or f"t = {field.time:.4g}")
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def trajectory(series, path, fit=None, beam=None, title: str = "") -> Path:
    """Centre-of-mass track, optional fitted circle and beam displacement track."""
    com = np.array([r["com"] for r in series])
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(com[:, 0], com[:, 1], "-", lw=1.5, label="centre of mass")
    if beam is not None:
        b = np.asarray(beam)
        ax.plot(b[:, 0], b[:, 1], "--", lw=1, color="gray", label="beam displacement")
    if fit is not None:
        th = np.linspace(0, 2 * np.pi, 361)
        cx, cz = fit["center"]
        r = fit["radius"]
        ax.plot(cx + r * np.cos(th), cz + r * np.sin(th), ":", color="C3", label=f"fit r = {r:.3g}")
    ax.set_aspect("equal")
    ax.set_xlabel(r"$x\ [1/\kappa]$")
    ax.set_ylabel(r"$z\ [1/\kappa]$")
    ax.legend(loc="best", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def sweep_plot(rows, xkey: str, ykeys, path, logx: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.6))
    x = [r[xkey] for r in rows]
    for k in ykeys:
        ax.plot(x, [r.get(k) for r in rows], "o-", label=k)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xkey)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
