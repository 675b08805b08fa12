"""Dark-subspace predictions: gauge evolution, branch trees, the adiabatic
circle and the group-velocity identities.

Spinors here are two-component dark amplitudes (c1, c2). Lengths are in
1/kappa and velocities in hbar*kappa/m unless a ``kappa`` argument says
otherwise.
"""
from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .paths import Arc, BeamPath, Line

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)

MERGE_TOL = 1e-9
UNIT_TOL = 1e-9


class OracleError(ValueError):
    pass


def dark_state2(c1, c2) -> np.ndarray:
    v = np.array([c1, c2], dtype=complex)
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise OracleError("dark spinor must be nonzero and finite")
    return v / n


def wrap_phase(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if w.ndim == 0 else w


def _unit(n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    if n.shape != (2,) or abs(np.linalg.norm(n) - 1.0) > UNIT_TOL:
        raise OracleError(f"direction {n} is not a unit vector in the x-z plane")
    return n


def gauge_matrix(n, kappa: float = 1.0) -> np.ndarray:
    """kappa (n_x sigma_x + n_z sigma_z)."""
    nx, nz = _unit(n)
    return kappa * (nx * SX + nz * SZ)


def _su2_exp(theta, n_x, n_z) -> np.ndarray:
    # exp(i theta (n_x sx + n_z sz)) for a unit (n_x, n_z).
    c, s = math.cos(theta), math.sin(theta)
    return c * I2 + 1j * s * (n_x * SX + n_z * SZ)


def segment_evolve(s, n, length: float, kappa: float = 1.0) -> np.ndarray:
    """exp(i G(n) L) s for a straight displacement of length L along n."""
    if length < 0:
        raise OracleError("segment length must be non-negative")
    nx, nz = _unit(n)
    return _su2_exp(kappa * length, nx, nz) @ np.asarray(s, dtype=complex)


def eigenspinors(n):
    """(+1, -1) eigenvectors of n_x sigma_x + n_z sigma_z, real gauge."""
    nx, nz = _unit(n)
    a = math.atan2(nx, nz)
    plus = np.array([math.cos(a / 2), math.sin(a / 2)], dtype=complex)
    minus = np.array([-math.sin(a / 2), math.cos(a / 2)], dtype=complex)
    return plus, minus


def g_plus(phi: float) -> np.ndarray:
    """Upper-branch spinor for a displacement heading at angle phi from x."""
    e = cmath.exp(1j * phi)
    return 0.5 * np.array([1 - 1j * e, -1j + e])


def g_minus(phi: float) -> np.ndarray:
    e = cmath.exp(1j * phi)
    return 0.5 * np.array([1 + 1j * e, -1j - e])


@dataclass(frozen=True)
class Branch:
    """One sub-wavepacket of the branch tree.

    ``spread`` accumulates the effective dispersion time tensor: the branch
    envelope evolves as exp(-i k.B.k/2) in Fourier space.
    """

    spinor: np.ndarray
    amplitude: complex
    position: np.ndarray
    velocity: np.ndarray
    spread: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))

    @property
    def weight(self) -> float:
        return abs(self.amplitude) ** 2

    @property
    def phase(self) -> float:
        return wrap_phase(cmath.phase(self.amplitude))

    def as_dict(self) -> dict:
        return {
            "c1_re": float(self.spinor[0].real), "c1_im": float(self.spinor[0].imag),
            "c2_re": float(self.spinor[1].real), "c2_im": float(self.spinor[1].imag),
            "amplitude_re": float(self.amplitude.real), "amplitude_im": float(self.amplitude.imag),
            "x": float(self.position[0]), "z": float(self.position[1]),
            "vx": float(self.velocity[0]), "vz": float(self.velocity[1]),
            "weight": self.weight, "phase": self.phase,
            "spread": np.asarray(self.spread, dtype=float).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Branch":
        return cls(
            spinor=np.array([complex(d["c1_re"], d["c1_im"]), complex(d["c2_re"], d["c2_im"])]),
            amplitude=complex(d["amplitude_re"], d["amplitude_im"]),
            position=np.array([d["x"], d["z"]], dtype=float),
            velocity=np.array([d["vx"], d["vz"]], dtype=float),
            spread=np.array(d.get("spread", np.zeros((2, 2))), dtype=float),
        )


@dataclass(frozen=True)
class BranchSet:
    branches: tuple
    time: float = 0.0
    kappa: float = 1.0
    hbar: float = 1.0
    mass: float = 1.0
    origin: tuple = (0.0, 0.0)

    @property
    def phi_d(self) -> float:
        """Common dynamical phase -(hbar kappa^2 / 2m) t, not wrapped."""
        return -self.hbar * self.kappa**2 * self.time / (2 * self.mass)

    @property
    def total_weight(self) -> float:
        return float(sum(b.weight for b in self.branches))

    def __len__(self):
        return len(self.branches)

    def positions(self, absolute: bool = True) -> np.ndarray:
        off = np.asarray(self.origin) if absolute else 0.0
        return np.array([b.position + off for b in self.branches]).reshape(-1, 2)

    def weights(self) -> np.ndarray:
        return np.array([b.weight for b in self.branches])

    def to_json(self, **extra) -> str:
        doc = {"time": self.time, "phi_d": self.phi_d, "kappa": self.kappa, "origin": list(self.origin),
               "branches": [b.as_dict() for b in self.branches]}
        doc.update(extra)
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "BranchSet":
        d = json.loads(text)
        return cls(tuple(Branch.from_dict(b) for b in d["branches"]), float(d["time"]),
                   float(d.get("kappa", 1.0)), origin=tuple(d.get("origin", (0.0, 0.0))))


def transverse_factor(sign: int, v_d: float, kappa: float = 1.0) -> float:
    """Inverse effective mass across the motion for a locked branch, 1 - s kappa / v_d."""
    if v_d <= 0:
        raise OracleError("locked-branch dispersion needs a moving beam (v_d > 0)")
    return 1.0 - sign * kappa / v_d


def branch_split(b: Branch, n, length: float = 0.0, duration: float = 0.0, kappa: float = 1.0,
                 hbar: float = 1.0, mass: float = 1.0, min_weight: float = 1e-24) -> list[Branch]:
    """Split ``b`` onto the eigenstates of sigma.n and fly each along the segment.

    The eigenvalue-s part keeps the normalized projection of the parent
    spinor, moves at s (hbar kappa / m) n for ``duration`` and picks up
    exp(i s kappa L). Parts below ``min_weight`` are dropped.
    """
    n = _unit(n)
    out = []
    nn = np.outer(n, n)
    for sign, e in zip((1, -1), eigenspinors(n)):
        ov = np.vdot(e, b.spinor)
        if abs(ov) ** 2 * b.weight < min_weight:
            continue
        spin = e * (ov / abs(ov))
        vel = sign * hbar * kappa / mass * n
        spread = np.array(b.spread, dtype=float)
        if duration > 0:
            mu = transverse_factor(sign, length / duration, kappa) if length > 0 else 1.0
            spread = spread + duration * hbar / mass * (nn + mu * (np.eye(2) - nn))
        out.append(Branch(spin, b.amplitude * abs(ov) * cmath.exp(1j * sign * kappa * length),
                          b.position + vel * duration, vel, spread))
    return out


def merge_branches(branches, tol: float = MERGE_TOL) -> list[Branch]:
    """Coherently combine branches with equal position and parallel spinors."""
    merged: list[Branch] = []
    for b in branches:
        for i, m in enumerate(merged):
            if np.linalg.norm(m.position - b.position) >= tol:
                continue
            ov = np.vdot(m.spinor, b.spinor)
            if abs(abs(ov) - 1.0) < tol:
                wa, wb = m.weight, b.weight
                spread = (wa * m.spread + wb * b.spread) / (wa + wb) if wa + wb > 0 else m.spread
                merged[i] = replace(m, amplitude=m.amplitude + b.amplitude * ov, spread=spread)
                break
        else:
            merged.append(b)
    return merged


def predict_lattice(path: BeamPath, s0, kappa: float = 1.0, hbar: float = 1.0, mass: float = 1.0,
                    origin=(0.0, 0.0), upto: float | None = None) -> BranchSet:
    """Branch tree for a polygonal beam path, optionally stopped at ``upto``.

    ``upto`` must fall on a corner (or the end) of the path.
    """
    if not path.is_polygonal:
        raise OracleError(f"path {path.name!r} is not polygonal; lattice prediction needs straight segments")
    t_stop = path.duration if upto is None else float(upto)
    s0 = dark_state2(*s0)
    branches = [Branch(s0, 1.0 + 0j, np.zeros(2), np.zeros(2))]
    t = 0.0
    for seg in path.segments:
        if t >= t_stop - 1e-9:
            break
        if t + seg.duration > t_stop + 1e-9:
            raise OracleError(f"upto={t_stop} falls inside a segment; pick a corner time")
        if seg.speed <= 0:
            raise OracleError("lattice prediction needs moving segments")
        new = []
        for b in branches:
            new.extend(branch_split(b, seg.direction, seg.length, seg.duration, kappa, hbar, mass))
        branches = merge_branches(new)
        t += seg.duration
    return BranchSet(tuple(branches), t, kappa, hbar, mass, tuple(map(float, origin)))


# -- circular displacement --------------------------------------------------

def _arc_of(path: BeamPath) -> Arc:
    arcs = [s for s in path.segments if isinstance(s, Arc)]
    if not arcs:
        raise OracleError(f"path {path.name!r} has no arc segment")
    return arcs[0]


def circle_evolve_ode(s0, r_L: float, v_d: float, sweep: float, steps: int | None = None,
                      heading0: float = math.pi / 2, kappa: float = 1.0, samples: int = 0,
                      tol: float = 1e-10):
    """Integrate i dc/dt = -kappa v_d (n(t) . sigma) c along a circular path.

    The heading turns as phi(t) = heading0 + sign(sweep) (v_d / r_L) t.
    Fourth-order Magnus (two Gauss points); every step is exactly unitary.
    With ``steps=None`` the step count doubles until the result moves by
    less than ``tol``. With ``samples > 0`` also returns the times and
    states at ``samples + 1`` evenly spaced instants.
    """
    s0 = np.asarray(s0, dtype=complex)
    if r_L <= 0 or v_d <= 0:
        raise OracleError("circle needs r_L > 0 and v_d > 0")
    if sweep == 0:
        if samples:
            return s0.copy(), np.zeros(samples + 1), np.repeat(s0[None], samples + 1, axis=0)
        return s0.copy()
    omega = math.copysign(v_d / r_L, sweep)
    T = abs(sweep) * r_L / v_d
    a = kappa * v_d

    def run(n):
        h = T / n
        g1, g2 = 0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6
        c = s0.copy()
        keep = []
        marks = {round(j * n / samples) for j in range(samples + 1)} if samples else set()
        for i in range(n):
            if i in marks:
                keep.append((i * h, c.copy()))
            t0 = i * h
            p1, p2 = heading0 + omega * (t0 + g1 * h), heading0 + omega * (t0 + g2 * h)
            # -iH = i a (n.sigma); Magnus: h/2 (A1 + A2) + sqrt(3) h^2 / 12 [A2, A1].
            # [n2.sigma, n1.sigma] = 2i (n2 x n1)_y sigma_y with components (x, z).
            vx = 0.5 * h * a * (math.cos(p1) + math.cos(p2))
            vz = 0.5 * h * a * (math.sin(p1) + math.sin(p2))
            cross = math.cos(p2) * math.sin(p1) - math.sin(p2) * math.cos(p1)
            vy = math.sqrt(3) * h * h * a * a * cross / 6
            # Omega = i (vx sx + vy sy + vz sz); exp is an SU(2) rotation.
            th = math.sqrt(vx * vx + vy * vy + vz * vz)
            if th == 0:
                continue
            u = math.cos(th) * I2 + 1j * math.sin(th) / th * (vx * SX + vy * SY + vz * SZ)
            c = u @ c
        if samples:
            keep.append((n * h, c.copy()))
        return c, keep

    if steps is None:
        n = max(64, int(8 * a * T / 1.0) // 8 + 64, int(64 * abs(sweep)))
        c, keep = run(n)
        while True:
            n *= 2
            c2, keep2 = run(n)
            if np.linalg.norm(c2 - c) < tol or n > 2**24:
                c, keep = c2, keep2
                break
            c, keep = c2, keep2
    else:
        c, keep = run(int(steps))
    if samples:
        t = np.array([k[0] for k in keep])
        states = np.array([k[1] for k in keep])
        return c, t, states
    return c


def adiabatic_solution(phi_start: float, phi_end: float):
    """g+(phi_end) and the geometric phase -(phi_end - phi_start)/2."""
    return g_plus(phi_end), -(phi_end - phi_start) / 2.0


def berry_connection(phi: float, h: float = 1e-6) -> float:
    """A(phi) = i <g+|d g+/d phi>, evaluated by central difference."""
    d = (g_plus(phi + h) - g_plus(phi - h)) / (2 * h)
    return float(np.real(1j * np.vdot(g_plus(phi), d)))


@dataclass
class LoopReport:
    r_L: float
    v_d: float
    sweep: float
    final_overlap: float
    min_overlap: float
    geometric_phase: float
    dynamical_phase: float
    adiabatic_beta: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def adiabatic_loop(r_L: float, v_d: float, sweep: float = -2 * math.pi, heading0: float = math.pi / 2,
                   kappa: float = 1.0, samples: int = 400, steps: int | None = None) -> LoopReport:
    """Follow g+ around an arc and split the final phase into dynamical and geometric parts.

    ``min_overlap`` (the adiabatic-following fidelity) is the smallest
    |<g+(phi(t))|c(t)>| seen along the path; ``final_overlap`` is the value
    at the end.
    """
    s0 = g_plus(heading0)
    c, t, states = circle_evolve_ode(s0, r_L, v_d, sweep, steps=steps, heading0=heading0, kappa=kappa,
                                     samples=samples)
    omega = math.copysign(v_d / r_L, sweep)
    ov = np.array([abs(np.vdot(g_plus(heading0 + omega * ti), si)) for ti, si in zip(t, states)])
    T = abs(sweep) * r_L / v_d
    phi_end = heading0 + sweep
    dyn = kappa * v_d * T
    total = cmath.phase(np.vdot(g_plus(phi_end), c))
    geo = wrap_phase(total - dyn)
    _, beta = adiabatic_solution(heading0, phi_end)
    return LoopReport(r_L, v_d, sweep, float(abs(np.vdot(g_plus(phi_end), c))), float(ov.min()),
                      geo, dyn, beta)


def circle_trajectory(path: BeamPath, times, kappa: float = 1.0, hbar: float = 1.0, mass: float = 1.0,
                      sign: int = 1, origin=(0.0, 0.0)) -> np.ndarray:
    """Adiabatic centre-of-mass track of the locked branch: r' = s (hbar kappa/m) n(t)."""
    times = np.asarray(times, dtype=float)
    bounds = list(path.starts)
    scale = sign * hbar * kappa / mass
    return np.array([np.asarray(origin, dtype=float) + scale * _track_offset(path, t, bounds) for t in times])


def _track_offset(path: BeamPath, t: float, bounds) -> np.ndarray:
    off = np.zeros(2)
    for seg, t0 in zip(path.segments, bounds):
        if t <= t0:
            break
        dt = min(t, t0 + seg.duration) - t0
        if isinstance(seg, Line):
            off += dt * np.asarray(seg.direction) * (1.0 if seg.speed > 0 else 0.0)
        else:
            h0 = seg.heading(0.0)
            w = seg.omega
            off += np.array([math.sin(h0 + w * dt) - math.sin(h0), -(math.cos(h0 + w * dt) - math.cos(h0))]) / w
    return off


def dance_radius(r_L: float, v_d: float, kappa: float = 1.0, hbar: float = 1.0, mass: float = 1.0) -> float:
    return r_L * hbar * kappa / mass / v_d


# -- frame equivalence ------------------------------------------------------

def _cstep(f, x, h=1e-30):
    # Complex-step derivative; exact to rounding for analytic f.
    return f(complex(x, h)).imag / h


def group_velocity_identities(v_d: float, k0: float, kappa: float = 1.0, hbar: float = 1.0,
                              mass: float = 1.0, tol: float = 1e-12) -> dict:
    """Branch group velocities from the lab-frame gauge phases and from laser-frame energies.

    Lab frame: boost with the atom so its wavevector vanishes; the beams
    then move at v~ = v_d - hbar k0 / m and the branch frequencies are
    -/+ v~ kappa. Laser frame: E+- = hbar^2 (k +- kappa)^2 / 2m at
    k = k0 - m v_d / hbar, then add v_d back.
    """
    boost = hbar * k0 / mass

    def vt(k):
        return v_d - hbar * k / mass

    lab = (boost + _cstep(lambda k: -vt(k) * kappa, k0), boost + _cstep(lambda k: vt(k) * kappa, k0))
    kl = k0 - mass * v_d / hbar
    laser = tuple(_cstep(lambda k, s=s: hbar * (k + s * kappa) ** 2 / (2 * mass), kl) + v_d for s in (1, -1))
    dev = max(abs(a - b) for a, b in zip(lab, laser))
    return {
        "v_d": v_d, "k0": k0,
        "lab": lab, "laser": laser,
        "relative": (lab[0] - boost, lab[1] - boost),
        "max_deviation": dev, "agree": bool(dev <= tol * max(1.0, abs(v_d), abs(boost), kappa)),
    }
