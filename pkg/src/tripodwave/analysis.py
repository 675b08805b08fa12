"""Observables extracted from simulated fields: clusters, weights, phases,
trajectory fits and comparison with the branch-tree prediction."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from . import model
from .grid import GridSpec, SpinorField, boundary_density
from .oracle import Branch, BranchSet, wrap_phase

MIN_CLUSTER_WEIGHT = 0.005


class FitError(ValueError):
    pass


@dataclass
class Cluster:
    x: float
    z: float
    weight: float
    raw_weight: float
    peak: float

    @property
    def centroid(self) -> tuple[float, float]:
        return (self.x, self.z)

    def as_dict(self) -> dict:
        return {"x": self.x, "z": self.z, "weight": self.weight, "raw_weight": self.raw_weight, "peak": self.peak}


def _axes(grid_or_axes, shape):
    if isinstance(grid_or_axes, GridSpec):
        return grid_or_axes.x, grid_or_axes.z
    if grid_or_axes is None:
        return np.arange(shape[0], dtype=float), np.arange(shape[1], dtype=float)
    x, z = grid_or_axes
    return np.asarray(x, dtype=float), np.asarray(z, dtype=float)


def detect_subpackets(density, grid=None, threshold_frac: float = 0.05, min_weight: float = MIN_CLUSTER_WEIGHT,
                      method: str = "label", smooth: float = 0.0) -> list[Cluster]:
    """Find sub-wavepackets in a density map.

    ``method="label"`` labels 4-connected regions above ``threshold_frac``
    of the maximum. ``method="watershed"`` seeds one basin per local
    maximum above the threshold and grows basins over the whole
    super-threshold region, which separates packets whose tails touch.
    ``smooth`` (in length units) low-pass filters the map first, which
    removes interference fringes between overlapping packets.

    Weights are fractions of the total density (``raw_weight``) and of the
    kept clusters (``weight``). Clusters with raw weight below
    ``min_weight`` are dropped.
    """
    if not 0 < threshold_frac < 1:
        raise ValueError("threshold_frac must lie in (0, 1)")
    rho = np.asarray(density, dtype=float)
    x, z = _axes(grid, rho.shape)
    total = float(rho.sum())
    if total <= 0 or not math.isfinite(total):
        return []
    work = rho
    if smooth > 0:
        dx = x[1] - x[0] if len(x) > 1 else 1.0
        dz = z[1] - z[0] if len(z) > 1 else 1.0
        work = ndimage.gaussian_filter(rho, (smooth / dx, smooth / dz), mode="wrap")
    mask = work > threshold_frac * work.max()
    if method == "label":
        labels, n = ndimage.label(mask)
    elif method == "watershed":
        from skimage.segmentation import watershed

        peaks = (work == ndimage.maximum_filter(work, size=3, mode="wrap")) & mask
        markers, n = ndimage.label(peaks)
        labels = watershed(-work, markers, mask=mask)
    else:
        raise ValueError(f"unknown method {method!r}")
    if n == 0:
        return []
    idx = np.arange(1, n + 1)
    w = ndimage.sum_labels(rho, labels, idx)
    mx = ndimage.sum_labels(rho * x[:, None], labels, idx)
    mz = ndimage.sum_labels(rho * z[None, :], labels, idx)
    pk = ndimage.maximum(rho, labels, idx)
    keep = [i for i in range(n) if w[i] / total >= min_weight]
    kept = float(sum(w[i] for i in keep))
    out = [Cluster(float(mx[i] / w[i]), float(mz[i] / w[i]), float(w[i] / kept), float(w[i] / total),
                   float(pk[i] / rho.max())) for i in keep]
    out.sort(key=lambda c: (round(c.x, 6), round(c.z, 6)))
    return out


# -- templates from the branch tree ------------------------------------------

def branch_envelope(grid: GridSpec, branch: Branch, sigma: float, origin=(0.0, 0.0)) -> np.ndarray:
    """Unit-norm scalar envelope of a branch: initial Gaussian, displaced and dispersed.

    In Fourier space the envelope is exp(-sigma^2 k^2 - i k.B.k/2) with B
    the branch spread tensor; its real-space form is used directly.
    """
    x, z = grid.mesh()
    rx = x - origin[0] - branch.position[0]
    rz = z - origin[1] - branch.position[1]
    m = 2 * sigma**2 * np.eye(2) + 1j * np.asarray(branch.spread, dtype=float)
    mi = np.linalg.inv(m)
    q = mi[0, 0] * rx * rx + 2 * mi[0, 1] * rx * rz + mi[1, 1] * rz * rz
    pref = 2 * sigma**2 / math.sqrt(2 * math.pi * sigma**2) / np.sqrt(complex(np.linalg.det(m)))
    return pref * np.exp(-0.5 * q)


def oracle_dark_field(grid: GridSpec, prediction: BranchSet, sigma: float):
    """(c1, c2) dark amplitudes of the field predicted by the branch tree."""
    c1 = np.zeros(grid.shape, dtype=complex)
    c2 = np.zeros(grid.shape, dtype=complex)
    for b in prediction.branches:
        g = b.amplitude * branch_envelope(grid, b, sigma, prediction.origin)
        c1 += b.spinor[0] * g
        c2 += b.spinor[1] * g
    return c1, c2


def oracle_field(grid: GridSpec, prediction: BranchSet, sigma: float, d, p: model.PhysicalParams,
                 include_phi_d: bool = False) -> SpinorField:
    """Bare four-component field synthesized from a branch set."""
    c1, c2 = oracle_dark_field(grid, prediction, sigma)
    if include_phi_d:
        ph = np.exp(1j * prediction.phi_d)
        c1, c2 = c1 * ph, c2 * ph
    return model.field_from_dark(grid, c1, c2, d, p, time=prediction.time)


def _dark_fields(field: SpinorField, d, p):
    c1, c2, _ = model.dark_projection(field, d, p)
    return c1, c2


def branch_overlaps(field: SpinorField, prediction: BranchSet, sigma: float, d, p: model.PhysicalParams,
                    dark=None) -> np.ndarray:
    """<T_b|field> for unit-amplitude templates T_b of every branch."""
    c1, c2 = dark if dark is not None else _dark_fields(field, d, p)
    da = field.grid.cell_area
    out = []
    for b in prediction.branches:
        g = branch_envelope(field.grid, b, sigma, prediction.origin)
        t1, t2 = b.spinor[0] * g, b.spinor[1] * g
        out.append((np.vdot(t1, c1) + np.vdot(t2, c2)) * da)
    return np.array(out)


@dataclass
class PhaseReport:
    phases: np.ndarray
    expected: np.ndarray
    reliable: np.ndarray
    reference: int
    overlaps: np.ndarray

    @property
    def errors(self) -> np.ndarray:
        return wrap_phase(self.phases - self.expected)


def relative_phases(field: SpinorField, prediction: BranchSet, sigma: float, d, p: model.PhysicalParams,
                    reference: int | None = None, dark=None) -> PhaseReport:
    """Branch phases measured relative to a reference branch (largest weight by default).

    Overlaps below a tenth of the expected branch amplitude are flagged
    unreliable. Both measured and expected phases are wrapped to (-pi, pi].
    """
    ov = branch_overlaps(field, prediction, sigma, d, p, dark=dark)
    amps = np.array([b.amplitude for b in prediction.branches])
    if reference is None:
        w = np.abs(amps) ** 2
        reference = int(np.flatnonzero(w >= w.max() - 1e-12)[0])
    ph = wrap_phase(np.angle(ov) - np.angle(ov[reference]))
    ex = wrap_phase(np.angle(amps) - np.angle(amps[reference]))
    reliable = np.abs(ov) >= 0.1 * np.abs(amps)
    return PhaseReport(np.atleast_1d(ph), np.atleast_1d(ex), reliable, reference, ov)


def expected_clusters(prediction: BranchSet, tol: float = 1e-6):
    """Distinct branch positions with summed weights (coincident branches form one spatial cluster)."""
    pos, wts = [], []
    for b, r in zip(prediction.branches, prediction.positions()):
        for i, q in enumerate(pos):
            if np.linalg.norm(q - r) < tol:
                wts[i] += b.weight
                break
        else:
            pos.append(np.array(r))
            wts.append(b.weight)
    return np.array(pos).reshape(-1, 2), np.array(wts)


def match_clusters(clusters, positions):
    """Optimal one-to-one assignment between detected clusters and predicted positions."""
    if not clusters or len(positions) == 0:
        return np.array([], dtype=int), np.array([], dtype=int)
    cpos = np.array([c.centroid for c in clusters])
    cost = np.linalg.norm(cpos[:, None, :] - positions[None, :, :], axis=-1)
    return linear_sum_assignment(cost)


def internal_fidelity(field: SpinorField, reference: SpinorField) -> float:
    """|<reference|field>|^2 for normalized fields."""
    ov = reference.inner(field)
    return float(abs(ov) ** 2 / (reference.norm2() * field.norm2()))


def detection_density(field: SpinorField, d, p: model.PhysicalParams, kind: str = "total") -> np.ndarray:
    """Map used for cluster detection: |psi|^2 ("total") or the dark-subspace part ("dark").

    The dark map drops bright-state leakage, which moves off at recoil speed
    and can wrap through the periodic boundary on long runs.
    """
    if kind == "total":
        return field.density()
    if kind == "dark":
        c1, c2, _ = model.dark_projection(field, d, p)
        return np.abs(c1) ** 2 + np.abs(c2) ** 2
    raise ValueError(f"unknown detection density {kind!r}")


def compare_to_oracle(field: SpinorField, prediction: BranchSet, sigma: float, d, p: model.PhysicalParams,
                      threshold_frac: float = 0.05, method: str = "label", smooth: float = 0.0,
                      clusters=None, density: str = "total") -> dict:
    """Cluster count, position, weight and phase agreement plus the overlap fidelity."""
    if clusters is None:
        clusters = detect_subpackets(detection_density(field, d, p, density), field.grid, threshold_frac,
                                     method=method, smooth=smooth)
    pos, wts = expected_clusters(prediction)
    rows, cols = match_clusters(clusters, pos)
    dpos = [np.linalg.norm(np.array(clusters[i].centroid) - pos[j]) for i, j in zip(rows, cols)]
    dw = [clusters[i].weight - wts[j] for i, j in zip(rows, cols)]
    dark = _dark_fields(field, d, p)
    ph = relative_phases(field, prediction, sigma, d, p, dark=dark)
    err = ph.errors[ph.reliable]
    ref = oracle_field(field.grid, prediction, sigma, d, p)
    return {
        "cluster_count": len(clusters),
        "expected_count": len(pos),
        "cluster_count_match": len(clusters) == len(pos),
        "position_rms": float(np.sqrt(np.mean(np.square(dpos)))) if dpos else float("nan"),
        "position_max": float(np.max(dpos)) if dpos else float("nan"),
        "weight_rms": float(np.sqrt(np.mean(np.square(dw)))) if dw else float("nan"),
        "weight_max": float(np.max(np.abs(dw))) if dw else float("nan"),
        "phase_rms": float(np.sqrt(np.mean(np.square(err)))) if len(err) else float("nan"),
        "phase_max": float(np.max(np.abs(err))) if len(err) else float("nan"),
        "internal_fidelity": internal_fidelity(field, ref),
        "phases": ph.phases.tolist(),
        "expected_phases": ph.expected.tolist(),
        "phase_reliable": ph.reliable.tolist(),
    }


# -- trajectories -------------------------------------------------------------

@dataclass
class CircleFit:
    center: tuple[float, float]
    radius: float
    rms_residual: float
    span: float

    def as_dict(self) -> dict:
        return {"center": list(self.center), "radius": self.radius, "rms_residual": self.rms_residual,
                "span": self.span}


def fit_circle(points, min_points: int = 8) -> CircleFit:
    """Algebraic least-squares circle through 2D points.

    ``span`` is the angular coverage of the points about the fitted centre
    (radians).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < min_points:
        raise FitError(f"circle fit needs at least {min_points} points")
    mean = pts.mean(axis=0)
    q = pts - mean
    scale = np.sqrt(np.mean(np.sum(q**2, axis=1)))
    if scale == 0:
        raise FitError("all points coincide")
    q = q / scale
    a = np.column_stack([q, np.ones(len(q))])
    b = np.sum(q**2, axis=1)
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[-1] < 1e-9 * sv[0]:
        raise FitError("points are degenerate (collinear); no unique circle")
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    c = sol[:2] / 2
    r2 = sol[2] + c @ c
    # Nearly collinear data gives a huge, ill-determined radius.
    if r2 <= 0 or np.sqrt(r2) > 1e8:
        raise FitError("points are degenerate (collinear); no unique circle")
    r = float(np.sqrt(r2)) * scale
    center = c * scale + mean
    res = np.linalg.norm(pts - center, axis=1) - r
    ang = np.unwrap(np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0]))
    return CircleFit((float(center[0]), float(center[1])), r, float(np.sqrt(np.mean(res**2))),
                     float(abs(ang[-1] - ang[0]) if len(ang) > 1 else 0.0))


def heading_of(times, points) -> float:
    """Direction (radians from x) of a least-squares straight-line fit r(t) = r0 + v t."""
    t = np.asarray(times, dtype=float)
    pts = np.asarray(points, dtype=float)
    if len(t) < 2:
        raise FitError("need at least two samples for a heading")
    v = np.polyfit(t, pts, 1)[0]
    return float(math.atan2(v[1], v[0]))


def angle_difference(a: float, b: float) -> float:
    return abs(wrap_phase(a - b))


# -- summary ------------------------------------------------------------------

def summarize(scenario: str, field: SpinorField, p: model.PhysicalParams, prediction: BranchSet | None = None,
              sigma: float | None = None, threshold_frac: float = 0.05, method: str = "label",
              smooth: float = 0.0, fit: CircleFit | None = None, extra: dict | None = None,
              density: str = "total") -> dict:
    """Summary record for one snapshot."""
    d = field.displacement
    clusters = detect_subpackets(detection_density(field, d, p, density), field.grid, threshold_frac,
                                 method=method, smooth=smooth)
    _, _, bright = model.dark_projection(field, d, p)
    rows = [dict(c.as_dict(), phase=None) for c in clusters]
    out = {
        "scenario": scenario,
        "time": field.time,
        "displacement": list(map(float, d)),
        "clusters": rows,
        "fit": fit.as_dict() if fit is not None else None,
        "fidelity": None,
        "bright_population": bright,
        "boundary_density": boundary_density(field),
        "norm": field.norm2(),
    }
    if prediction is not None and sigma is not None:
        cmp = compare_to_oracle(field, prediction, sigma, d, p, clusters=clusters)
        out["fidelity"] = cmp["internal_fidelity"]
        out["comparison"] = cmp
        # Attach measured branch phases to the nearest detected cluster.
        pos, _ = expected_clusters(prediction)
        r, c = match_clusters(clusters, pos)
        bpos = prediction.positions()
        for i, j in zip(r, c):
            k = int(np.argmin(np.linalg.norm(bpos - pos[j], axis=1)))
            rows[i]["phase"] = cmp["phases"][k]
    if extra:
        out.update(extra)
    return out
