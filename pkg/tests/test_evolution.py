import math

import numpy as np
import pytest

from fastwave.craig_wayne import build_basis_matrix, change_basis
from fastwave.evolution import (
    FloquetFrame, Trajectory, band_width, complexify, decomplexify,
    floquet_residual, integrate, pair_state, resonant_drive, sigma4_exponential,
    sobolev_trace,
)
from fastwave.harmonics import Lattice, TorusFunction
from fastwave.kam import KamParameters, init_state, kam_iterate
from fastwave.magnus import magnus_transform
from fastwave.schrodinger import assemble_lq, eigensolve_blocks


def xcoeffs(J, entries):
    c = np.zeros(2 * J + 1, dtype=complex)
    for j, v in entries.items():
        c[j + J] = v
    return c


J = 10
LAT = Lattice(1, 4, J)
QC = xcoeffs(J, {0: 1.0, 1: 0.5, -1: 0.5})
SD = eigensolve_blocks(assemble_lq(QC, J), q=QC)
VTOY = TorusFunction.from_modes(LAT, {(1, 1): 0.25, (1, -1): 0.25,
                                      (-1, 1): 0.25, (-1, -1): 0.25},
                                reality=True)


def test_complexify_round_trip():
    # real wave-equation data: coefficients with the conj-flip symmetry
    rng = np.random.default_rng(0)

    def real_coeffs():
        c = rng.standard_normal(2 * J + 1) + 1j * rng.standard_normal(2 * J + 1)
        return 0.5 * (c + np.conj(c[::-1]))

    u0, ut = real_coeffs(), real_coeffs()
    phi = complexify(u0, ut, SD)
    phibar = np.conj(phi[::-1])     # coefficients of the conjugate function
    u_back, ut_back = decomplexify(phi, phibar, SD)
    assert np.max(np.abs(u_back - u0)) < 1e-12
    assert np.max(np.abs(ut_back - ut)) < 1e-12


def test_complexify_eigenfunction():
    # u0 = psi_n, u0_t = 0: phi = lambda_n^{1/2} psi_n
    n = 3
    psi_n = SD.psi[:, SD.idx(n)]
    phi = complexify(psi_n, np.zeros_like(psi_n), SD)
    want = SD.lam[SD.idx(n)] ** 0.5 * psi_n
    assert np.max(np.abs(phi - want)) < 1e-10
    assert np.max(np.abs(complexify(0 * psi_n, 0 * psi_n, SD))) == 0.0


def test_free_evolution_exact_rotation():
    rng = np.random.default_rng(1)
    pe = rng.standard_normal(2 * J + 1) + 1j * rng.standard_normal(2 * J + 1)
    state = pair_state(pe, SD)
    T, dt = 0.5, 0.0009
    traj = integrate(SD, None, np.array([100.0]), state, T, dt, LAT)
    lam = SD.lam
    want0 = state[0] * np.exp(-1j * lam * traj.times[-1])
    assert np.max(np.abs(traj.states[-1][0] - want0)) < 1e-12
    # energy conserved exactly for the free flow
    n0 = np.linalg.norm(traj.states[0])
    assert abs(np.linalg.norm(traj.states[-1]) - n0) < 1e-12 * n0


def test_dt_guard():
    state = np.zeros((2, 2 * J + 1), dtype=complex)
    with pytest.raises(ValueError):
        integrate(SD, VTOY, np.array([1000.0]), state, 1.0, 0.01, LAT)


def test_richardson_order_two():
    # dt-halving on a driven run: global error ratio ~ 4
    rng = np.random.default_rng(2)
    pe = rng.standard_normal(2 * J + 1) + 1j * rng.standard_normal(2 * J + 1)
    state = pair_state(pe, SD)
    omega = np.array([40.0])
    T = 0.4
    sols = {}
    for dt in (2e-3, 1e-3, 5e-4):
        traj = integrate(SD, VTOY, omega, state, T, dt, LAT,
                         store_every=10 ** 9)
        sols[dt] = traj.states[-1]
    e1 = np.linalg.norm(sols[2e-3] - sols[5e-4])
    e2 = np.linalg.norm(sols[1e-3] - sols[5e-4])
    # with the reference at dt/4: e1/e2 ~ (4 - 1)/(1 - 1/4) / ... ~ 5
    ratio = e1 / e2
    assert 3.0 < ratio < 7.0


def test_reality_preserved():
    rng = np.random.default_rng(3)
    u0 = np.conj((rng.standard_normal(2 * J + 1) + 1j * rng.standard_normal(2 * J + 1))[::-1])
    u0 = 0.5 * (u0 + np.conj(u0[::-1]))          # real-valued u0
    ut = np.zeros_like(u0)
    phi = complexify(u0, ut, SD)
    state = pair_state(phi, SD)
    traj = integrate(SD, VTOY, np.array([50.0]), state, 0.5, 1e-3, LAT,
                     store_every=100)
    # the pairing phi1 = K conj(phi0) is preserved exactly by the splitting
    K = SD.conjugation_matrix()
    for k in range(len(traj.times)):
        s = traj.states[k]
        assert np.max(np.abs(s[1] - K @ np.conj(s[0]))) < 1e-11


def test_propagator_cocycle():
    rng = np.random.default_rng(4)
    pe = rng.standard_normal(2 * J + 1) + 1j * rng.standard_normal(2 * J + 1)
    state = pair_state(pe, SD)
    omega = np.array([50.0])
    dt = 5e-4
    a = integrate(SD, VTOY, omega, state, 0.3, dt, LAT, store_every=10 ** 9)
    b = integrate(SD, VTOY, omega, a.states[-1], 0.2, dt, LAT, t0=0.3,
                  store_every=10 ** 9)
    c = integrate(SD, VTOY, omega, state, 0.5, dt, LAT, store_every=10 ** 9)
    assert np.linalg.norm(b.states[-1] - c.states[-1]) < 1e-9 * np.linalg.norm(state)


def test_sobolev_trace_free():
    rng = np.random.default_rng(5)
    pe = rng.standard_normal(2 * J + 1) + 1j * rng.standard_normal(2 * J + 1)
    state = pair_state(pe, SD)
    traj = integrate(SD, None, np.array([60.0]), state, 0.4, 1e-3, LAT,
                     store_every=40)
    sup, ratios = sobolev_trace(traj, 1.0)
    # v = 0: the H^r norms oscillate only through the basis mixing of the
    # pair components; for the free flow each eigen coefficient has constant
    # modulus, so the exp-basis H^r norms stay within a tight band
    assert abs(sup - 1.0) < 0.05
    assert band_width(traj, 0.0) < 1e-10


def magnus_kam_frame(M=800.0, gamma=0.5, p_max=3):
    params = KamParameters(tau=2.6, gamma=gamma, alpha=0.5, N0=2.1, tau0=1.0,
                           gamma0=gamma ** 0.125)
    omega = np.array([1.37 * M])
    out = magnus_transform(QC, VTOY, omega, M, params.gamma0, params.tau0,
                           SD, with_symbols=False)
    basis = build_basis_matrix(SD)
    state = init_state(out, SD, basis, params, LAT)
    final, gens = kam_iterate(state, p_max=p_max, collect_generators=True)
    Y_eig = change_basis(out.Y_mat, basis)
    frame = FloquetFrame(Y_eig, gens, final)
    return frame, out, final, omega


def test_floquet_residual_v_zero():
    params = KamParameters(tau=2.6, gamma=0.5, alpha=0.5, N0=2.1, tau0=1.0,
                           gamma0=0.9)
    vz = TorusFunction.zero(LAT)
    omega = np.array([800.0])
    out = magnus_transform(QC, vz, omega, 700.0, params.gamma0, params.tau0,
                           SD, with_symbols=False)
    basis = build_basis_matrix(SD)
    state = init_state(out, SD, basis, params, LAT)
    final, gens = kam_iterate(state, p_max=2, collect_generators=True)
    Y_eig = change_basis(out.Y_mat, basis)
    frame = FloquetFrame(Y_eig, gens, final)
    dt = 1e-4
    res = floquet_residual(frame, SD, None, omega, [(0.3, 0.0)], dt, LAT,
                           n_probes=2)
    assert res < 10 * (dt ** 2 * 0.3) + 1e-10


def test_floquet_residual_within_budget():
    frame, out, final, omega = magnus_kam_frame()
    dt = 8e-5
    delta_final = final.history[-1]["delta_s0"]
    res = floquet_residual(frame, SD, VTOY, omega, [(0.25, 0.0), (0.4, 0.15)],
                           dt, LAT, n_probes=2)
    budget = 10.0 * (delta_final + dt ** 2 * 0.4)
    assert res < max(budget, 1e-6)


def test_floquet_residual_decreases_with_depth():
    results = []
    for p_max in (0, 1, 2):
        frame, out, final, omega = magnus_kam_frame(p_max=p_max)
        res = floquet_residual(frame, SD, VTOY, omega, [(0.3, 0.0)], 8e-5,
                               LAT, n_probes=2)
        results.append(res)
    assert results[1] < results[0]
    assert results[2] <= results[1] * 1.5 + 1e-8


def test_sigma4_exponential_inverse():
    rng = np.random.default_rng(6)
    Y = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    Y = 0.5 * (Y + Y.conj().T)
    K = np.eye(5)[::-1].astype(complex)
    Y = 0.5 * (Y + K @ np.conj(Y) @ np.conj(K))    # conj-real structure
    E = sigma4_exponential(Y, K)
    Em = sigma4_exponential(-Y, K)
    assert np.max(np.abs(E @ Em - np.eye(10))) < 1e-12


def test_resonant_drive_grows():
    # engineered resonance: the Sobolev ratio exits the band, monotone trend
    v, omega = resonant_drive(LAT, SD, 2, 1, amplitude=0.8)
    phi = SD.psi[:, SD.idx(2)].copy()
    state = pair_state(phi, SD)
    dt = 5e-4
    traj = integrate(SD, v, omega, state, 12.0, dt, LAT, store_every=2000)
    sup, ratios = sobolev_trace(traj, 0.0)
    assert sup > 1.5
    # growth trend: the running maximum increases over the horizon
    running = np.maximum.accumulate(ratios)
    assert running[-1] > running[len(running) // 3] > running[2]
