import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tripodwave import grid as G
from tripodwave import model
from tripodwave.grid import GridError, GridSpec, SnapshotError


def test_grid_axes():
    g = GridSpec(128, 64, 80.0, 40.0)
    assert g.dx == 0.625 and g.dz == 0.625
    assert g.x[0] == -40.0 and g.x[-1] == pytest.approx(40 - 0.625)
    assert np.allclose(g.kx, 2 * np.pi * np.fft.fftfreq(128, 0.625))


@pytest.mark.parametrize("nx,nz,msg", [(100, 128, "power of two"), (32, 32, "power of two")])
def test_grid_rejects_bad_sizes(nx, nz, msg):
    with pytest.raises(GridError, match=msg):
        GridSpec(nx, nz, 20.0, 20.0).validate()


def test_grid_rejects_coarse_spacing():
    with pytest.raises(GridError, match="0.35"):
        GridSpec(64, 64, 80.0, 80.0).validate()
    GridSpec(64, 64, 80.0, 80.0).validate(max_dx=1.3)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(2.0, 4.0), st.floats(-2, 2), st.floats(-2, 2))
def test_packet_normalized_and_centred(cx, cz, sigma, kx, kz):
    g = GridSpec(128, 128, 64.0, 64.0)
    f = G.gaussian_packet(g, (cx, cz), sigma, (kx, kz), (0, 1, 0, 0))
    assert f.norm2() == pytest.approx(1.0, abs=1e-12)
    obs = G.observables(f)
    assert abs(obs["center_of_mass"][0] - cx) < g.dx / 10
    assert abs(obs["center_of_mass"][1] - cz) < g.dz / 10


def test_packet_momentum():
    g = GridSpec(128, 128, 100.0, 100.0)
    f = G.gaussian_packet(g, (0, 0), 8.0, (0.5, 0.0))
    px, pz = G.observables(f)["momentum_mean"]
    assert px == pytest.approx(0.5, abs=1e-6) and abs(pz) < 1e-6


def test_packet_kinetic_energy():
    # exp(-r^2 / 4 sigma^2) amplitude: <k_x^2> = 1 / (4 sigma^2), i.e. 1 / (8 sigma^2) energy per axis.
    g = GridSpec(128, 128, 64.0, 64.0)
    sigma = 3.0
    obs = G.observables(G.gaussian_packet(g, (0, 0), sigma))
    assert obs["kinetic_energy"] == pytest.approx(2 / (8 * sigma**2), rel=1e-8)
    assert obs["momentum_mean"] == pytest.approx((0, 0), abs=1e-12)


def test_packet_rejections():
    g = GridSpec(64, 64, 40.0, 40.0)
    with pytest.raises(GridError, match="boundary"):
        G.gaussian_packet(g, (15.0, 0.0), 2.0)
    with pytest.raises(GridError, match="under-resolved"):
        G.gaussian_packet(g, (0, 0), 1.0)
    with pytest.raises(GridError):
        G.gaussian_packet(g, (0, 0), 2.5, internal=(0, 0, 0, 0))


def test_dark_packet_drift_energy():
    # A D1 packet with zero envelope momentum drifts at hbar kappa / m: energy (hbar kappa)^2 / 2m.
    p = model.PhysicalParams.natural()
    g = GridSpec(256, 256, 80.0, 80.0)
    env = G.gaussian_packet(g, (0, 0), 6.0, internal=(1, 0, 0, 0)).psi[0]
    f = model.field_from_dark(g, env, np.zeros_like(env), (0, 0), p)
    obs = G.observables(f)
    assert obs["momentum_mean"][1] == pytest.approx(p.kappa, rel=1e-9)
    assert obs["drift_energy"] == pytest.approx(p.kappa**2 / 2, rel=1e-9)


def test_observables_phase_invariant(rng):
    g = GridSpec(64, 64, 30.0, 30.0)
    f = G.gaussian_packet(g, (0.5, -1), 2.5, (0.3, -0.7), (1, 2j, 0, 1))
    h = f.copy()
    h.psi *= np.exp(1.234j)
    a, b = G.observables(f), G.observables(h)
    for k in a:
        assert np.allclose(a[k], b[k], rtol=1e-13, atol=1e-14)


def test_observables_zero_field():
    g = GridSpec(64, 64, 30.0, 30.0)
    with pytest.raises(GridError):
        G.observables(G.SpinorField(g, np.zeros((4, 64, 64))))


def test_spectral_round_trip(rng):
    psi = rng.normal(size=(4, 64, 128)) + 1j * rng.normal(size=(4, 64, 128))
    back = G.inverse_spectral(G.spectral(psi))
    assert np.linalg.norm(back - psi) / np.linalg.norm(psi) < 1e-12


def test_spectral_worker_independent(rng):
    psi = rng.normal(size=(4, 128, 128)) + 1j * rng.normal(size=(4, 128, 128))
    a = G.spectral(psi, workers=1)
    b = G.spectral(psi, workers=4)
    assert np.max(np.abs(a - b)) <= 1e-13 * np.max(np.abs(a))


def test_field_shape_checked():
    with pytest.raises(GridError):
        G.SpinorField(GridSpec(64, 64, 1.0, 1.0), np.zeros((4, 32, 64)))


def test_snapshot_round_trip(tmp_path):
    g = GridSpec(64, 64, 30.0, 30.0)
    f = G.gaussian_packet(g, (0.5, 0), 2.5, (0.2, 0), (1, 1j, 0, 0))
    f.time, f.displacement = 2.5, (1.0, -3.0)
    path = G.save_snapshot(f, tmp_path / "s.bin", extra={"tag": "x"})
    meta = json.loads((tmp_path / "s.bin.json").read_text())
    assert meta["units"]["length"] == "1/kappa" and meta["nx"] == 64
    raw = np.frombuffer(path.read_bytes(), dtype="<f8")
    assert raw[0] == f.psi[0, 0, 0].real and raw[1] == f.psi[0, 0, 0].imag
    h = G.load_snapshot(path)
    assert np.array_equal(h.psi, f.psi)
    assert h.time == 2.5 and h.displacement == (1.0, -3.0) and h.meta["tag"] == "x"


def test_snapshot_corruption(tmp_path):
    g = GridSpec(64, 64, 30.0, 30.0)
    path = G.save_snapshot(G.gaussian_packet(g, (0, 0), 3.0), tmp_path / "s.bin")
    side = tmp_path / "s.bin.json"
    side.write_text("{not json")
    with pytest.raises(SnapshotError):
        G.load_snapshot(path)
    side.write_text(json.dumps({"nx": 64, "nz": 32, "lx": 30, "lz": 30, "time": 0, "displacement": [0, 0]}))
    with pytest.raises(SnapshotError, match="bytes"):
        G.load_snapshot(path)


def test_density_csv(tmp_path):
    g = GridSpec(64, 64, 30.0, 30.0)
    f = G.gaussian_packet(g, (0, 0), 3.0)
    path = G.write_density_csv(f, tmp_path / "rho.csv", stride=2)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,z,rho"
    assert len(lines) == 1 + 32 * 32
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data[:, 2].sum() * (2 * g.dx) ** 2 == pytest.approx(1.0, rel=1e-3)


def test_boundary_density():
    g = GridSpec(64, 64, 40.0, 40.0)
    f = G.gaussian_packet(g, (0, 0), 2.0)
    assert G.boundary_density(f) < 1e-10
    assert math.isfinite(G.boundary_density(f))
