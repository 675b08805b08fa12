"""Tripod-scheme internal structure: Rabi fields, dark states and the exact
internal propagator.

Natural units throughout: hbar = m = kappa = 1 unless a ``PhysicalParams``
says otherwise. Positions are passed as ``(x, z)`` pairs whose entries may be
scalars or broadcastable arrays; spinors carry the internal index first,
shape ``(4, ...)``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

SQRT2 = math.sqrt(2.0)
MAGIC_COS_XI = SQRT2 - 1.0


class DegenerateFrameError(ValueError):
    """Raised when the dark frame is undefined (no laser coupling)."""


@dataclass(frozen=True)
class PhysicalParams:
    """Model constants.

    ``kappa``, ``kappa_prime`` and ``v_s`` are derived from ``k_r`` and
    ``xi``; pass ``PhysicalParams.natural()`` for the usual hbar = m = kappa
    = 1 choice with cos(xi) = sqrt(2) - 1.
    """

    mass: float = 1.0
    k_r: float = 1.0 / MAGIC_COS_XI
    xi: float = math.acos(MAGIC_COS_XI)
    omega0: float = 100.0
    hbar: float = 1.0

    @classmethod
    def natural(cls, omega0: float = 100.0) -> "PhysicalParams":
        return cls(omega0=omega0)

    @property
    def kappa(self) -> float:
        return self.k_r * math.cos(self.xi)

    @property
    def kappa_prime(self) -> float:
        return self.k_r * (1.0 - math.cos(self.xi))

    @property
    def v_s(self) -> float:
        return self.hbar * self.k_r**2 * math.sin(self.xi) ** 2 / (2.0 * self.mass)

    @property
    def velocity_unit(self) -> float:
        """hbar*kappa/m, the branch group speed."""
        return self.hbar * self.kappa / self.mass

    def beam_wavevectors(self) -> np.ndarray:
        """Wavevectors (x, z) of the three Rabi phases, one row per beam."""
        k = self.k_r
        return np.array([[-k, 0.0], [k, 0.0], [0.0, k]])

    def rabi_magnitudes(self) -> np.ndarray:
        s, c = math.sin(self.xi), math.cos(self.xi)
        return self.omega0 * np.array([s / SQRT2, s / SQRT2, c])

    def envelope_wavevectors(self) -> np.ndarray:
        """Carrier wavevector of each bare component of the dark states.

        Component n of D1/D2 oscillates as exp(i K_n . r); factoring these
        out makes the internal Hamiltonian position independent.
        """
        k0 = np.array([0.0, self.kappa])
        return np.vstack([k0, k0 - self.beam_wavevectors()])

    def as_dict(self) -> dict:
        return {
            "mass": self.mass,
            "k_r": self.k_r,
            "xi": self.xi,
            "omega0": self.omega0,
            "hbar": self.hbar,
            "kappa": self.kappa,
            "kappa_prime": self.kappa_prime,
            "v_s": self.v_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhysicalParams":
        keys = ("mass", "k_r", "xi", "omega0", "hbar")
        return cls(**{k: float(d[k]) for k in keys if k in d})


@dataclass(frozen=True)
class Units:
    """SI scales for the natural units (display only)."""

    mass_kg: float = 1e-25
    kappa_per_m: float = 1e6
    hbar_si: float = 1.054571817e-34

    @property
    def length_m(self) -> float:
        return 1.0 / self.kappa_per_m

    @property
    def time_s(self) -> float:
        return self.mass_kg / (self.hbar_si * self.kappa_per_m**2)

    @property
    def velocity_m_per_s(self) -> float:
        return self.hbar_si * self.kappa_per_m / self.mass_kg

    def to_si(self, value: float, kind: str) -> float:
        scale = {"length": self.length_m, "time": self.time_s, "velocity": self.velocity_m_per_s}
        return value * scale[kind]


@dataclass(frozen=True)
class DarkFrame:
    d1: np.ndarray
    d2: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.stack([self.d1, self.d2])


def _xz(v):
    return np.asarray(v[0], dtype=float), np.asarray(v[1], dtype=float)


def _beam_phases(r, d, p: PhysicalParams):
    x, z = _xz(r)
    dx, dz = _xz(d)
    x, z = x - dx, z - dz
    return np.exp(-1j * p.k_r * x), np.exp(1j * p.k_r * x), np.exp(1j * p.k_r * z)


def rabi_vector(r, d, p: PhysicalParams):
    """Rabi couplings (Omega_1, Omega_2, Omega_3) of the beams displaced by d."""
    a = p.rabi_magnitudes()
    return tuple(an * w for an, w in zip(a, _beam_phases(r, d, p)))


def internal_hamiltonian(r, d, p: PhysicalParams) -> np.ndarray:
    """4x4 internal Hamiltonian (shape ``(..., 4, 4)`` for array positions)."""
    om = np.broadcast_arrays(*rabi_vector(r, d, p))
    h = np.zeros(om[0].shape + (4, 4), dtype=complex)
    for n, o in enumerate(om, start=1):
        h[..., 0, n] = o
        h[..., n, 0] = np.conj(o)
    h[..., 3, 3] += p.v_s
    return h


def dark_states(r, d, p: PhysicalParams) -> DarkFrame:
    """The two null eigenvectors of the internal Hamiltonian at (r - d)."""
    if p.omega0 == 0:
        raise DegenerateFrameError("omega0 = 0: every internal state is dark")
    x, z = _xz(r)
    dx, dz = _xz(d)
    x, z = np.broadcast_arrays(x - dx, z - dz)
    kr, kp = p.k_r, p.kappa_prime
    t1 = np.exp(1j * kr * (x + z) - 1j * kp * z)
    t2 = np.exp(-1j * kr * (x - z) - 1j * kp * z)
    t3 = np.exp(-1j * kp * z)
    c, s = math.cos(p.xi), math.sin(p.xi)
    zero = np.zeros_like(t1)
    d1 = np.stack([zero, t1 / SQRT2, -t2 / SQRT2, zero])
    d2 = np.stack([zero, c * t1 / SQRT2, c * t2 / SQRT2, -s * t3])
    return DarkFrame(d1, d2)


@functools.lru_cache(maxsize=64)
def _bright_block_propagator(omega0: float, xi: float, v_s: float, dt: float) -> np.ndarray:
    # Rephased basis (|0>, |A>, |3~>) where the coupled block is real and constant.
    s, c = math.sin(xi), math.cos(xi)
    m = np.array([[0.0, omega0 * s, omega0 * c], [omega0 * s, 0.0, 0.0], [omega0 * c, 0.0, v_s]])
    w, v = np.linalg.eigh(m)
    return (v * np.exp(-1j * w * dt)) @ v.T


def internal_step(s: np.ndarray, r, d, dt: float, p: PhysicalParams) -> np.ndarray:
    """Exact exp(-i (H_RWA + V_s|3><3|) dt / hbar) applied to spinor(s) ``s``.

    The dark vector (|1~> - |2~>)/sqrt(2) is an exact null vector of the full
    internal Hamiltonian, so the propagator reduces to a constant 3x3 block
    in a position-dependent rephased basis. No sub-splitting of V_s is
    involved.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    s = np.asarray(s, dtype=complex)
    w1, w2, w3 = _beam_phases(r, d, p)
    e = _bright_block_propagator(p.omega0, p.xi, p.v_s, dt / p.hbar)
    qa = (w1 * s[1] + w2 * s[2]) / SQRT2
    qd = (w1 * s[1] - w2 * s[2]) / SQRT2
    qb = w3 * s[3]
    q0 = s[0]
    n0 = e[0, 0] * q0 + e[0, 1] * qa + e[0, 2] * qb
    na = e[1, 0] * q0 + e[1, 1] * qa + e[1, 2] * qb
    nb = e[2, 0] * q0 + e[2, 1] * qa + e[2, 2] * qb
    out = np.empty((4,) + np.broadcast(n0, na, nb, qd).shape, dtype=complex)
    out[0] = n0
    out[1] = np.conj(w1) * (na + qd) / SQRT2
    out[2] = np.conj(w2) * (na - qd) / SQRT2
    out[3] = np.conj(w3) * nb
    return out


def internal_step_matrix(d, dt: float, p: PhysicalParams) -> np.ndarray:
    """Internal propagator at r = 0 as a 4x4 matrix.

    In the envelope representation (carriers exp(i K_n r) factored out) this
    one matrix is the internal step at every grid point.
    """
    return internal_step(np.eye(4, dtype=complex), (0.0, 0.0), d, dt, p)


def dark_amplitudes(psi: np.ndarray, frame: DarkFrame):
    """Per-point overlaps <D_j|psi> for a spinor array ``psi`` of shape (4, ...)."""
    c1 = np.einsum("n...,n...->...", np.conj(frame.d1), psi)
    c2 = np.einsum("n...,n...->...", np.conj(frame.d2), psi)
    return c1, c2


def embed_dark(c1, c2, frame: DarkFrame) -> np.ndarray:
    return frame.d1 * c1 + frame.d2 * c2


def dark_projection(field, d, p: PhysicalParams):
    """Dark-state amplitude fields (c1, c2) and the bright population.

    The bright population is the fraction of the field's probability outside
    the local dark subspace, clipped to [0, 1].
    """
    x, z = field.grid.mesh()
    frame = dark_states((x, z), d, p)
    c1, c2 = dark_amplitudes(field.psi, frame)
    dark = float(np.sum(np.abs(c1) ** 2 + np.abs(c2) ** 2)) * field.grid.cell_area
    bright = 1.0 - dark / field.norm2()
    return c1, c2, float(min(max(bright, 0.0), 1.0))


def field_from_dark(grid, c1, c2, d, p: PhysicalParams, time: float = 0.0):
    """Inverse of :func:`dark_projection` for a two-component amplitude field."""
    from .grid import SpinorField

    frame = dark_states(grid.mesh(), d, p)
    return SpinorField(grid, embed_dark(c1, c2, frame), time=time, displacement=tuple(map(float, d)))
