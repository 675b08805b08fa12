"""Split-operator evolution of the four-component field under moving beams.

Each bare component is stored as an envelope times its dark-state carrier,
psi_n = exp(i K_n . r) phi_n. The carriers absorb every spatial phase of the
Rabi fields, so the internal step is one 4x4 matrix per time step and the
kinetic step becomes exp(-i hbar |k + K_n|^2 dt / 2m) per component. The
transformation is exact; it only removes the need to resolve the laser
wavelength on the grid.

Strang order is kinetic(dt/2) . internal(dt) . kinetic(dt/2), with the
internal step evaluated at the displacement d(t + dt/2). The state is kept
in spectral space between steps, synchronized at every step boundary.
"""
from __future__ import annotations

import json
import math
import time as _time
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from . import model
from .grid import GridSpec, SpinorField, load_snapshot, save_snapshot
from .paths import BeamPath, displacement_at


class PreconditionError(ValueError):
    """Run configuration violates a numerical precondition."""


class NumericalBlowup(RuntimeError):
    pass


class ResumeError(ValueError):
    pass


def check_preconditions(grid: GridSpec, p: model.PhysicalParams, dt: float, max_dx: float | None = None):
    if not (dt > 0 and math.isfinite(dt)):
        raise PreconditionError(f"dt={dt} must be positive and finite")
    if p.omega0 > 0 and dt > 0.5 / p.omega0:
        raise PreconditionError(f"dt={dt} violates dt <= 0.5/omega0 = {0.5 / p.omega0:.4g}")
    try:
        if max_dx is None:
            grid.validate()
        else:
            grid.validate(max_dx)
    except ValueError as exc:
        raise PreconditionError(str(exc)) from exc


class Evolution:
    """Stateful propagator. One controller at a time; not thread-safe."""

    def __init__(self, field: SpinorField, path: BeamPath, params: model.PhysicalParams, dt: float,
                 workers: int | None = None, check_norm: bool = True, step: int = 0,
                 max_dx: float | None = None):
        check_preconditions(field.grid, params, dt, max_dx)
        if check_norm and abs(field.norm2() - 1.0) > 1e-6:
            raise PreconditionError(f"initial field norm {field.norm2():.8f} is not 1")
        self.grid = field.grid
        self.path = path
        self.params = params
        self.dt = float(dt)
        self.t0 = float(field.time) - step * self.dt
        self.step_index = int(step)
        self.workers = workers
        self.last_displacement = tuple(field.displacement)

        kvec = params.envelope_wavevectors()
        x, z = self.grid.mesh()
        kx, kz = self.grid.kmesh()
        self._carrier = np.exp(1j * (kvec[:, 0, None, None] * x + kvec[:, 1, None, None] * z))
        k2 = (kx[None] + kvec[:, 0, None, None]) ** 2 + (kz[None] + kvec[:, 1, None, None]) ** 2
        self._half_kinetic = np.exp(-1j * params.hbar * k2 * self.dt / (4 * params.mass))
        self._k2 = k2
        phi = np.conj(self._carrier) * field.psi
        self._phi_k = sfft.fft2(phi, axes=(1, 2), workers=workers)

    @property
    def time(self) -> float:
        return self.t0 + self.step_index * self.dt

    def envelope(self) -> np.ndarray:
        return sfft.ifft2(self._phi_k, axes=(1, 2), workers=self.workers)

    @property
    def field(self) -> SpinorField:
        psi = self._carrier * self.envelope()
        d = tuple(map(float, displacement_at(self.path, min(self.time, self.path.duration))))
        return SpinorField(self.grid, psi, self.time, d)

    def step(self, n: int = 1):
        p, w = self.params, self.workers
        shape = self._phi_k.shape
        for _ in range(n):
            tm = self.t0 + (self.step_index + 0.5) * self.dt
            u = model.internal_step_matrix(displacement_at(self.path, tm), self.dt, p)
            self._phi_k *= self._half_kinetic
            phi = sfft.ifft2(self._phi_k, axes=(1, 2), workers=w, overwrite_x=True)
            phi = (u @ phi.reshape(4, -1)).reshape(shape)
            self._phi_k = sfft.fft2(phi, axes=(1, 2), workers=w, overwrite_x=True)
            self._phi_k *= self._half_kinetic
            self.step_index += 1

    def norm2(self) -> float:
        # Parseval on the unnormalized forward transform.
        a = self._phi_k
        return float(np.sum(a.real**2 + a.imag**2)) * self.grid.cell_area / (self.grid.nx * self.grid.nz)

    def check_finite(self):
        n = self.norm2()
        if not math.isfinite(n):
            raise NumericalBlowup(f"non-finite field at step {self.step_index} (t={self.time:.6g})")
        return n

    def energy(self) -> float:
        """<T> + <H_internal> at the current (synchronized) state, beams at d(t)."""
        p = self.params
        a = self._phi_k
        wk = a.real**2 + a.imag**2
        norm = float(np.sum(wk))
        kinetic = p.hbar**2 * float(np.sum(wk * self._k2)) / (2 * p.mass) / norm
        phi = self.envelope()
        d = displacement_at(self.path, min(self.time, self.path.duration))
        h = model.internal_hamiltonian((0.0, 0.0), d, p)
        hphi = (h @ phi.reshape(4, -1))
        internal = float(np.real(np.vdot(phi.reshape(4, -1), hphi))) * self.grid.nx * self.grid.nz / norm
        return kinetic + internal

    # -- checkpoints --------------------------------------------------------

    def save_checkpoint(self, path, extra: dict | None = None) -> Path:
        meta = {
            "step": self.step_index,
            "dt": self.dt,
            "t0": self.t0,
            "params": self.params.as_dict(),
            "path_name": self.path.name,
            "path_duration": self.path.duration,
        }
        if extra:
            meta.update(extra)
        return save_snapshot(self.field, path, extra={"checkpoint": meta})

    @classmethod
    def resume(cls, snapshot, path: BeamPath, params: model.PhysicalParams, dt: float,
               workers: int | None = None, expect: dict | None = None,
               max_dx: float | None = None) -> "Evolution":
        """Continue a run from a checkpoint written by :meth:`save_checkpoint`.

        Refuses when dt, physical parameters, path or any entry of ``expect``
        differ from the recorded metadata.
        """
        f = load_snapshot(snapshot)
        meta = f.meta.get("checkpoint")
        if not isinstance(meta, dict):
            raise ResumeError(f"{snapshot} carries no checkpoint metadata")
        try:
            if float(meta["dt"]) != float(dt):
                raise ResumeError(f"checkpoint dt={meta['dt']} but resume requested dt={dt}")
            stored = model.PhysicalParams.from_dict(meta["params"])
            if stored != params:
                raise ResumeError("physical parameters differ from the checkpoint")
            if meta["path_name"] != path.name or abs(float(meta["path_duration"]) - path.duration) > 1e-12:
                raise ResumeError("beam path differs from the checkpoint")
            for k, v in (expect or {}).items():
                if meta.get(k) != v:
                    raise ResumeError(f"checkpoint {k}={meta.get(k)!r} but expected {v!r}")
            step = int(meta["step"])
        except (KeyError, TypeError) as exc:
            raise ResumeError(f"malformed checkpoint metadata: {exc}") from exc
        f.meta = {}
        ev = cls(f, path, params, dt, workers=workers, check_norm=False, step=step, max_dx=max_dx)
        ev.t0 = float(meta["t0"])
        return ev


def evolve(field: SpinorField, path: BeamPath, params: model.PhysicalParams, dt: float, t_end: float,
           observers=(), every: int = 0, workers: int | None = None, check_every: int = 1000,
           record=None, max_dx: float | None = None):
    """Run from ``field.time`` to ``t_end``.

    Observers are called as ``obs(t, field)`` every ``every`` steps (0: only at
    the end). Returns the final field and a time series of dicts with
    ``t``, ``norm``, ``com`` and ``displacement`` at every observation;
    ``record(ev)`` may add more keys.
    """
    ev = Evolution(field, path, params, dt, workers=workers, max_dx=max_dx)
    n_total = int(round((t_end - field.time) / dt))
    if n_total < 0 or abs(field.time + n_total * dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise PreconditionError(f"t_end={t_end} is not reachable in whole steps of dt={dt}")
    if t_end > path.duration + 1e-9:
        raise PreconditionError(f"t_end={t_end} runs past the path duration {path.duration}")
    series = []

    def observe():
        f = ev.field
        rho = f.density()
        total = rho.sum()
        com = (float(rho.sum(axis=1) @ f.grid.x / total), float(rho.sum(axis=0) @ f.grid.z / total))
        row = {"t": ev.time, "norm": float(total) * f.grid.cell_area, "com": com,
               "displacement": tuple(map(float, f.displacement))}
        if record is not None:
            row.update(record(ev, f))
        series.append(row)
        for obs in observers:
            obs(ev.time, f)

    if every:
        observe()
    done = 0
    chunk = every if every else n_total
    while done < n_total:
        n = min(chunk, n_total - done)
        # Step in blocks so the finiteness check runs at least every check_every steps.
        while n > 0:
            m = min(n, check_every)
            ev.step(m)
            ev.check_finite()
            n -= m
            done += m
        if every:
            observe()
    if not every:
        observe()
    return ev.field, series
