import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from tripodwave import model
from tripodwave.grid import GridSpec, SpinorField

SQ2 = math.sqrt(2.0)
coord = st.floats(-50, 50, allow_nan=False)


def test_natural_parameters(p):
    assert p.kappa == pytest.approx(1.0, abs=1e-12)
    assert p.kappa_prime == pytest.approx(SQ2 * p.kappa, abs=1e-12)
    assert p.v_s == pytest.approx((SQ2 + 1) * p.hbar * p.kappa**2 / p.mass, abs=1e-12)
    assert p.k_r == pytest.approx(SQ2 + 1, abs=1e-12)


def test_params_round_trip(p):
    assert model.PhysicalParams.from_dict(p.as_dict()) == p


def test_rabi_at_origin(p):
    o = model.rabi_vector((0.0, 0.0), (0.0, 0.0), p)
    s, c = math.sin(p.xi), math.cos(p.xi)
    assert np.allclose(o, [100 * s / SQ2, 100 * s / SQ2, 100 * c], atol=1e-12)


@given(coord, coord, coord, coord)
def test_rabi_total_magnitude(x, z, dx, dz):
    p = model.PhysicalParams.natural()
    o = model.rabi_vector((x, z), (dx, dz), p)
    assert sum(abs(v) ** 2 for v in o) == pytest.approx(p.omega0**2, rel=1e-13)


@given(coord, coord, st.floats(-20, 20))
def test_rabi_translation(x, z, delta):
    p = model.PhysicalParams.natural()
    shifted = model.rabi_vector((x, z), (delta, 0.0), p)[0]
    base = model.rabi_vector((x, z), (0.0, 0.0), p)[0]
    assert abs(shifted - base * np.exp(1j * p.k_r * delta)) < 1e-9


def test_hamiltonian_structure(p):
    h = model.internal_hamiltonian((0.3, -1.2), (2.0, 0.5), p)
    assert np.allclose(h, h.conj().T)
    o = model.rabi_vector((0.3, -1.2), (2.0, 0.5), p)
    assert np.allclose(h[0, 1:], o)
    assert h[3, 3] == pytest.approx(p.v_s)
    h0 = h.copy()
    h0[3, 3] -= p.v_s
    w = np.sort(np.linalg.eigvalsh(h0))
    assert np.allclose(w, [-100, 0, 0, 100], atol=1e-10)


def test_hamiltonian_without_coupling():
    p = model.PhysicalParams(omega0=0.0)
    h = model.internal_hamiltonian((1.0, 2.0), (0.0, 0.0), p)
    assert np.allclose(h, np.diag([0, 0, 0, p.v_s]))


def test_dark_state_at_origin(p):
    f = model.dark_states((0.0, 0.0), (0.0, 0.0), p)
    assert np.allclose(f.d1, [0, 1 / SQ2, -1 / SQ2, 0])
    c, s = math.cos(p.xi), math.sin(p.xi)
    assert np.allclose(f.d2, [0, c / SQ2, c / SQ2, -s])


@given(coord, coord, coord, coord)
def test_dark_states_orthonormal_and_null(x, z, dx, dz):
    p = model.PhysicalParams.natural()
    f = model.dark_states((x, z), (dx, dz), p)
    g = np.array([[np.vdot(a, b) for b in (f.d1, f.d2)] for a in (f.d1, f.d2)])
    assert np.allclose(g, np.eye(2), atol=1e-12)
    h = model.internal_hamiltonian((x, z), (dx, dz), p)
    h[3, 3] -= p.v_s
    for d in (f.d1, f.d2):
        assert np.linalg.norm(h @ d) <= 1e-12 * p.omega0


def test_dark_states_need_coupling():
    with pytest.raises(model.DegenerateFrameError):
        model.dark_states((0, 0), (0, 0), model.PhysicalParams(omega0=0.0))


@given(coord, coord, coord, coord, st.floats(1e-4, 0.05))
def test_internal_step_matches_expm(x, z, dx, dz, dt):
    p = model.PhysicalParams.natural()
    h = model.internal_hamiltonian((x, z), (dx, dz), p)
    u = expm(-1j * h * dt)
    got = model.internal_step(np.eye(4, dtype=complex), (x, z), (dx, dz), dt, p)
    assert np.max(np.abs(got - u)) < 1e-10


def test_internal_step_keeps_d1(p, rng):
    r, d = (1.7, -0.4), (3.0, 2.0)
    f = model.dark_states(r, d, p)
    out = model.internal_step(f.d1, r, d, 0.01, p)
    assert np.allclose(out, f.d1, atol=1e-13)


def test_internal_step_unitary(p, rng):
    for _ in range(20):
        s = rng.normal(size=4) + 1j * rng.normal(size=4)
        out = model.internal_step(s, tuple(rng.normal(size=2)), tuple(rng.normal(size=2)), 0.003, p)
        assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(s), rel=1e-14)


def test_half_rabi_cycle_without_shift():
    # With v_s switched off |0> performs a full sign flip after dt = pi / Omega0.
    p = model.PhysicalParams(k_r=model.PhysicalParams().k_r, xi=0.0, omega0=50.0)
    s = np.array([1, 0, 0, 0], dtype=complex)
    out = model.internal_step(s, (0.2, 0.1), (0.0, 0.0), math.pi / p.omega0, p)
    assert np.allclose(out, -s, atol=1e-12)


def test_internal_step_rejects_bad_dt(p):
    with pytest.raises(ValueError):
        model.internal_step(np.ones(4), (0, 0), (0, 0), 0.0, p)


def test_envelope_step_matrix_is_position_independent(p):
    # Carrier-stripped step is the same matrix everywhere.
    kv = p.envelope_wavevectors()
    d = (0.7, -1.1)
    u0 = model.internal_step_matrix(d, 0.004, p)
    for r in [(0.3, 0.9), (-5.0, 2.2)]:
        car = np.exp(1j * (kv[:, 0] * r[0] + kv[:, 1] * r[1]))
        full = model.internal_step(np.diag(car), r, d, 0.004, p)
        assert np.allclose(np.conj(car)[:, None] * full, u0, atol=1e-12)


def test_dark_projection_round_trip(p, rng):
    g = GridSpec(64, 64, 20.0, 20.0)
    c1 = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    c2 = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    f = model.field_from_dark(g, c1, c2, (1.5, -2.0), p)
    b1, b2, bright = model.dark_projection(f, (1.5, -2.0), p)
    assert np.max(np.abs(b1 - c1)) < 1e-12 and np.max(np.abs(b2 - c2)) < 1e-12
    assert bright < 1e-12


def test_bright_population_limits(p):
    g = GridSpec(64, 64, 20.0, 20.0)
    psi = np.zeros((4,) + g.shape, dtype=complex)
    psi[0] = 1.0 / math.sqrt(400.0)
    assert model.dark_projection(SpinorField(g, psi), (0, 0), p)[2] == pytest.approx(1.0)
    f = model.field_from_dark(g, np.full(g.shape, 0.05 + 0j), np.zeros(g.shape, complex), (0, 0), p)
    assert model.dark_projection(f, (0, 0), p)[2] < 1e-10


def test_units_display_only():
    u = model.Units()
    assert u.to_si(2.0, "length") == pytest.approx(2e-6)
    assert u.velocity_m_per_s == pytest.approx(1.054571817e-34 * 1e6 / 1e-25)
