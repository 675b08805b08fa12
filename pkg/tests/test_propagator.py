import json
import math

import numpy as np
import pytest

from tripodwave import analysis as A
from tripodwave import model, paths, propagator
from tripodwave import oracle as O
from tripodwave.grid import GridSpec, gaussian_packet, observables
from tripodwave.propagator import Evolution, NumericalBlowup, PreconditionError, ResumeError


def dark_packet(g, p, sigma=2.0, spin=(1, 0), center=(0.0, 0.0), d=(0.0, 0.0)):
    env = gaussian_packet(g, center, sigma, internal=(1, 0, 0, 0)).psi[0]
    f = model.field_from_dark(g, spin[0] * env, spin[1] * env, d, p)
    f.psi /= math.sqrt(f.norm2())
    return f


def small_line(omega0=100.0, n=64, lx=40.0):
    p = model.PhysicalParams.natural(omega0)
    g = GridSpec(n, n, lx, lx)
    return p, g, paths.polygon([((1, 0), 5.0, 8.0)], name="line"), dark_packet(g, p)


def test_preconditions():
    p = model.PhysicalParams.natural()
    g = GridSpec(64, 64, 20.0, 20.0)
    with pytest.raises(PreconditionError, match="0.5/omega0"):
        propagator.check_preconditions(g, p, 0.01)
    with pytest.raises(PreconditionError, match="positive"):
        propagator.check_preconditions(g, p, -1e-3)
    with pytest.raises(PreconditionError, match="resolution bound"):
        propagator.check_preconditions(GridSpec(64, 64, 80.0, 80.0), p, 1e-3)
    propagator.check_preconditions(GridSpec(64, 64, 80.0, 80.0), p, 1e-3, max_dx=1.3)


def test_rejects_unnormalized_field():
    p, g, path, f = small_line()
    f.psi *= 2
    with pytest.raises(PreconditionError, match="norm"):
        Evolution(f, path, p, 5e-3, max_dx=1.0)


def test_nan_detection_reports_step():
    p, g, path, f = small_line()
    ev = Evolution(f, path, p, 5e-3, max_dx=1.0)
    ev.step(3)
    ev._phi_k[0, 0, 0] = np.nan
    with pytest.raises(NumericalBlowup, match="step 3"):
        ev.check_finite()


def test_evolve_rejects_unreachable_end():
    p, g, path, f = small_line()
    with pytest.raises(PreconditionError, match="whole steps"):
        propagator.evolve(f, path, p, 3e-3, 0.01, max_dx=1.0)
    with pytest.raises(PreconditionError, match="past the path"):
        propagator.evolve(f, path, p, 5e-3, 9.0, max_dx=1.0)


def test_step_is_unitary():
    p, g, path, f = small_line()
    ev = Evolution(f, path, p, 5e-3, max_dx=1.0)
    ev.step(400)
    assert abs(ev.norm2() - 1.0) < 1e-12
    assert ev.field.norm2() == pytest.approx(ev.norm2(), abs=1e-13)


def test_observers_and_series():
    p, g, path, f = small_line()
    seen = []
    out, series = propagator.evolve(f, path, p, 5e-3, 1.0, observers=[lambda t, fl: seen.append(t)], every=50,
                                    max_dx=1.0, record=lambda ev, fl: {"bright": model.dark_projection(
                                        fl, fl.displacement, p)[2]})
    assert len(series) == 5 and len(seen) == 5
    assert series[-1]["t"] == pytest.approx(1.0)
    assert series[-1]["displacement"] == pytest.approx((5.0, 0.0))
    assert "bright" in series[0]


def test_worker_count_independent():
    p, g, path, f = small_line()
    a, _ = propagator.evolve(f, path, p, 5e-3, 0.5, workers=1, max_dx=1.0)
    b, _ = propagator.evolve(f, path, p, 5e-3, 0.5, workers=4, max_dx=1.0)
    assert np.max(np.abs(a.psi - b.psi)) <= 1e-13 * np.max(np.abs(a.psi))


def test_checkpoint_resume_matches(tmp_path):
    p, g, path, f = small_line()
    ev = Evolution(f, path, p, 5e-3, max_dx=1.0)
    ev.step(100)
    snap = ev.save_checkpoint(tmp_path / "c.bin")
    ev.step(100)
    back = Evolution.resume(snap, path, p, 5e-3, max_dx=1.0)
    back.step(100)
    assert back.step_index == 200 and back.time == pytest.approx(1.0)
    assert np.max(np.abs(back.field.psi - ev.field.psi)) < 1e-12


def test_resume_refusals(tmp_path):
    p, g, path, f = small_line()
    ev = Evolution(f, path, p, 5e-3, max_dx=1.0)
    ev.step(10)
    snap = ev.save_checkpoint(tmp_path / "c.bin")
    with pytest.raises(ResumeError, match="dt"):
        Evolution.resume(snap, path, p, 2.5e-3, max_dx=1.0)
    with pytest.raises(ResumeError, match="parameters"):
        Evolution.resume(snap, path, model.PhysicalParams.natural(200.0), 5e-3, max_dx=1.0)
    with pytest.raises(ResumeError, match="path"):
        Evolution.resume(snap, paths.square(40, 5), p, 5e-3, max_dx=1.0)
    side = tmp_path / "c.bin.json"
    meta = json.loads(side.read_text())
    meta.pop("checkpoint")
    side.write_text(json.dumps(meta))
    with pytest.raises(ResumeError):
        Evolution.resume(snap, path, p, 5e-3, max_dx=1.0)
    side.write_text("garbage")
    with pytest.raises(ValueError):
        Evolution.resume(snap, path, p, 5e-3, max_dx=1.0)


def test_free_gaussian_width():
    # Omega0 = 0: bare level |0> is a free particle.
    p = model.PhysicalParams.natural(0.0)
    g = GridSpec(128, 128, 64.0, 64.0)
    sigma = 2.0
    f = gaussian_packet(g, (0, 0), sigma, internal=(1, 0, 0, 0))
    out, _ = propagator.evolve(f, paths.rest(10.0), p, 0.01, 10.0, max_dx=1.0)
    x, _ = g.mesh()
    w = math.sqrt(np.sum(out.density() * x**2) * g.cell_area)
    assert w == pytest.approx(sigma * math.sqrt(1 + (10.0 / (2 * sigma**2)) ** 2), rel=1e-3)


def test_static_sigma_y_dark_state_is_stationary():
    p = model.PhysicalParams.natural()
    g = GridSpec(64, 64, 40.0, 40.0)
    f = dark_packet(g, p, sigma=3.0, spin=(1 / math.sqrt(2), 1j / math.sqrt(2)))
    out, _ = propagator.evolve(f, paths.rest(5.0), p, 5e-3, 5.0, max_dx=1.0)
    com = observables(out)["center_of_mass"]
    # Residual drift comes from the finite momentum spread of the packet.
    assert np.allclose(com, (0, 0), atol=1e-3)
    assert model.dark_projection(out, (0, 0), p)[2] < 1e-3


def test_coarse_grid_gives_same_envelope():
    # Carriers are factored out, so grids that only resolve the envelope agree with fine ones.
    outs = {}
    for n in (64, 256):
        p, g, path, f = small_line(n=n)
        outs[n], _ = propagator.evolve(f, path, p, 5e-3, 2.0, max_dx=1.0)
    assert np.max(np.abs(outs[256].psi[:, ::4, ::4] - outs[64].psi)) < 1e-10


def test_finite_gap_phase_offset_scales_inverse_square():
    # The branch phase offset from the large-gap limit falls as 1 / omega0^2.
    offsets = {}
    for om, dt in ((100.0, 5e-3), (200.0, 2.5e-3)):
        p, g, path, f = small_line(om)
        out, _ = propagator.evolve(f, path, p, dt, 8.0, max_dx=1.0)
        pred = O.predict_lattice(path, (1, 0))
        rep = A.relative_phases(out, pred, 2.0, out.displacement, p)
        offsets[om] = float(np.max(np.abs(rep.errors)))
    ratio = offsets[100.0] / offsets[200.0]
    assert 3.5 < ratio < 4.5
