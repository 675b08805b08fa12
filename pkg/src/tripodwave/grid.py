"""Periodic 2D grid, four-component spinor fields and basic observables."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

MAX_DX = 0.35
MIN_POINTS = 64


class GridError(ValueError):
    pass


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """``nx`` x ``nz`` points on [-lx/2, lx/2) x [-lz/2, lz/2), periodic."""

    nx: int
    nz: int
    lx: float
    lz: float

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dz(self) -> float:
        return self.lz / self.nz

    @property
    def cell_area(self) -> float:
        return self.dx * self.dz

    @property
    def x(self) -> np.ndarray:
        return -0.5 * self.lx + self.dx * np.arange(self.nx)

    @property
    def z(self) -> np.ndarray:
        return -0.5 * self.lz + self.dz * np.arange(self.nz)

    @property
    def kx(self) -> np.ndarray:
        return 2 * np.pi * sfft.fftfreq(self.nx, d=self.dx)

    @property
    def kz(self) -> np.ndarray:
        return 2 * np.pi * sfft.fftfreq(self.nz, d=self.dz)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.nz)

    def mesh(self):
        return np.meshgrid(self.x, self.z, indexing="ij")

    def kmesh(self):
        return np.meshgrid(self.kx, self.kz, indexing="ij")

    def validate(self, max_dx: float = MAX_DX) -> "GridSpec":
        for name, n in (("nx", self.nx), ("nz", self.nz)):
            if not _is_pow2(n) or n < MIN_POINTS:
                raise GridError(f"{name}={n} must be a power of two >= {MIN_POINTS}")
        if self.lx <= 0 or self.lz <= 0:
            raise GridError("domain extents must be positive")
        worst = max(self.dx, self.dz)
        if worst > max_dx:
            raise GridError(f"grid spacing {worst:.4g} exceeds the resolution bound dx <= {max_dx}")
        return self

    def as_dict(self) -> dict:
        return {"nx": self.nx, "nz": self.nz, "lx": self.lx, "lz": self.lz}


@dataclass
class SpinorField:
    """Bare four-component wavefunction psi[n, ix, iz] on a grid."""

    grid: GridSpec
    psi: np.ndarray
    time: float = 0.0
    displacement: tuple[float, float] = (0.0, 0.0)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=np.complex128)
        if self.psi.shape != (4,) + self.grid.shape:
            raise GridError(f"field shape {self.psi.shape} does not match grid {self.grid.shape}")

    def density(self) -> np.ndarray:
        return np.sum(self.psi.real**2 + self.psi.imag**2, axis=0)

    def norm2(self) -> float:
        return float(np.sum(self.density())) * self.grid.cell_area

    def copy(self) -> "SpinorField":
        return SpinorField(self.grid, self.psi.copy(), self.time, tuple(self.displacement), dict(self.meta))

    def inner(self, other: "SpinorField") -> complex:
        """<self|other> integrated over the grid and summed over components."""
        return complex(np.vdot(self.psi, other.psi)) * self.grid.cell_area


def gaussian_packet(grid: GridSpec, center=(0.0, 0.0), sigma: float = 5.0, k0=(0.0, 0.0),
                    internal=(0, 1, 0, 0), margin: float = 5.0) -> SpinorField:
    """Normalized Gaussian packet times a fixed internal spinor.

    The amplitude envelope is exp(-|r - center|^2 / (4 sigma^2)), so sigma is
    the rms width of the density along each axis.
    """
    if sigma < 3 * max(grid.dx, grid.dz):
        raise GridError(f"sigma={sigma} is under-resolved (needs >= 3 grid spacings)")
    cx, cz = map(float, center)
    for c, lo, hi, axis in ((cx, grid.x[0], -grid.x[0], "x"), (cz, grid.z[0], -grid.z[0], "z")):
        if c - margin * sigma < lo or c + margin * sigma > hi:
            raise GridError(
                f"packet at {axis}={c} with sigma={sigma} is within {margin} sigma of the boundary "
                f"[{lo:.3g}, {hi:.3g}]"
            )
    spin = np.asarray(internal, dtype=complex)
    if spin.shape != (4,) or not np.all(np.isfinite(spin)) or np.linalg.norm(spin) == 0:
        raise GridError("internal state must be a nonzero 4-vector")
    spin = spin / np.linalg.norm(spin)
    x, z = grid.mesh()
    env = np.exp(-((x - cx) ** 2 + (z - cz) ** 2) / (4 * sigma**2) + 1j * (k0[0] * x + k0[1] * z))
    psi = spin[:, None, None] * env[None]
    f = SpinorField(grid, psi)
    f.psi /= math.sqrt(f.norm2())
    return f


def spectral(psi: np.ndarray, workers=None) -> np.ndarray:
    return sfft.fft2(psi, axes=(-2, -1), workers=workers)


def inverse_spectral(psi_k: np.ndarray, workers=None) -> np.ndarray:
    return sfft.ifft2(psi_k, axes=(-2, -1), workers=workers)


def observables(f: SpinorField, mass: float = 1.0, hbar: float = 1.0) -> dict:
    """Norm, centre of mass, mean momentum and kinetic energy.

    ``norm`` is the integrated probability sum |psi|^2 dx dz. ``drift_energy``
    is |<p>|^2 / 2m, the kinetic energy of the centre-of-mass motion.
    """
    rho = f.density()
    total = float(np.sum(rho))
    if total == 0 or not math.isfinite(total):
        raise GridError("observables of a zero or non-finite field are undefined")
    x, z = f.grid.x, f.grid.z
    com = (float(np.sum(rho.sum(axis=1) * x) / total), float(np.sum(rho.sum(axis=0) * z) / total))
    pk = spectral(f.psi)
    wk = np.sum(pk.real**2 + pk.imag**2, axis=0)
    wtot = float(np.sum(wk))
    kx, kz = f.grid.kx, f.grid.kz
    px = hbar * float(np.sum(wk.sum(axis=1) * kx) / wtot)
    pz = hbar * float(np.sum(wk.sum(axis=0) * kz) / wtot)
    k2 = float(np.sum(wk.sum(axis=1) * kx**2) + np.sum(wk.sum(axis=0) * kz**2)) / wtot
    return {
        "norm": total * f.grid.cell_area,
        "center_of_mass": com,
        "momentum_mean": (px, pz),
        "kinetic_energy": hbar**2 * k2 / (2 * mass),
        "drift_energy": (px**2 + pz**2) / (2 * mass),
    }


def boundary_density(f: SpinorField, band: int = 5) -> float:
    """Largest density inside a ``band``-cell frame at the domain edge, relative to the peak."""
    rho = f.density()
    edge = np.zeros_like(rho, dtype=bool)
    edge[:band, :] = edge[-band:, :] = True
    edge[:, :band] = edge[:, -band:] = True
    return float(rho[edge].max() / rho.max())


# -- snapshot files ---------------------------------------------------------

SNAPSHOT_UNITS = {"length": "1/kappa", "time": "m/(hbar kappa^2)", "psi": "kappa (normalized on the grid)"}


def save_snapshot(f: SpinorField, path, extra: dict | None = None) -> Path:
    """Write ``path`` (raw little-endian complex128) and ``path.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(f.psi, dtype="<c16").tobytes())
    meta = dict(f.grid.as_dict())
    meta.update({
        "time": f.time,
        "displacement": list(map(float, f.displacement)),
        "units": SNAPSHOT_UNITS,
    })
    meta.update(f.meta)
    if extra:
        meta.update(extra)
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


class SnapshotError(ValueError):
    pass


def load_snapshot(path) -> SpinorField:
    path = Path(path)
    try:
        meta = json.loads(sidecar_path(path).read_text())
        grid = GridSpec(int(meta["nx"]), int(meta["nz"]), float(meta["lx"]), float(meta["lz"]))
        time = float(meta["time"])
        disp = tuple(float(v) for v in meta["displacement"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise SnapshotError(f"unreadable snapshot sidecar for {path}: {exc}") from exc
    raw = path.read_bytes()
    expected = 4 * grid.nx * grid.nz * 16
    if len(raw) != expected:
        raise SnapshotError(f"{path}: {len(raw)} bytes, expected {expected}")
    psi = np.frombuffer(raw, dtype="<c16").reshape((4,) + grid.shape).astype(np.complex128)
    if len(disp) != 2:
        raise SnapshotError(f"{path}: displacement must have two entries")
    extra = {k: v for k, v in meta.items() if k not in ("nx", "nz", "lx", "lz", "time", "displacement", "units")}
    return SpinorField(grid, psi, time, disp, extra)


def write_density_csv(f: SpinorField, path, stride: int = 1) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x, z = f.grid.mesh()
    rho = f.density()
    s = slice(None, None, max(1, int(stride)))
    table = np.column_stack([x[s, s].ravel(), z[s, s].ravel(), rho[s, s].ravel()])
    np.savetxt(path, table, delimiter=",", header="x,z,rho", comments="", fmt="%.10g")
    return path
