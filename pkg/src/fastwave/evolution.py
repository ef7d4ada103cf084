"""Time propagation of the driven system and Floquet verification.

The first-order form i phi_t = H(t) phi with H = B sigma3 + W(omega t) sigma4
is integrated in the eigenbasis of B by Strang splitting: the free rotation
e^{-i dt B sigma3} is exact (diagonal), and the kick e^{-i dt W sigma4} is
exact as well because W sigma4 is nilpotent (sigma4^2 = 0), so the only error
is the order-2 splitting error in dt.

The Floquet factorization U(t, tau) = T(omega t)^{-1} e^{-i(t-tau)H_inf}
T(omega tau) is assembled from the Magnus generator (e^{iY sigma4} = 1 + iY
sigma4 exactly) and the dense exponentials of the KAM generators, and its
residual is compared against the budget delta^(p_final) + dt^2 T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .harmonics import Lattice
from .opmatrix import BlockOperator, OperatorPair
from .schrodinger import SpectralData, spectral_power


@dataclass
class Trajectory:
    """Two-component states (phi, phibar-slot) in eigen coordinates."""

    times: np.ndarray
    states: np.ndarray              # (n_t, 2, D)
    sd: SpectralData
    dt: float

    def exp_components(self, k: int) -> np.ndarray:
        """State k converted to exponential-basis coefficients (2, D)."""
        return np.stack([self.sd.psi @ self.states[k, 0],
                         self.sd.psi @ self.states[k, 1]])

    def sobolev_norms(self, r: float) -> np.ndarray:
        """||phi(t)||_{H^r_x} of the two-component state at each time."""
        J = self.sd.J
        w = np.maximum(1.0, np.abs(np.arange(-J, J + 1))).astype(float) ** r
        out = np.empty(len(self.times))
        for k in range(len(self.times)):
            e = self.exp_components(k)
            out[k] = math.sqrt(float(np.sum(w ** 2 * (np.abs(e[0]) ** 2
                                                      + np.abs(e[1]) ** 2))))
        return out


def complexify(u0: np.ndarray, u0_t: np.ndarray, sd: SpectralData):
    """phi = B^{1/2} u + i B^{-1/2} u_t (exponential-basis coefficients)."""
    Bh = spectral_power(sd, 0.25)
    Bmh = spectral_power(sd, -0.25)
    phi = Bh @ np.asarray(u0, dtype=complex) + 1j * (Bmh @ np.asarray(u0_t, dtype=complex))
    return phi


def decomplexify(phi: np.ndarray, phibar: np.ndarray, sd: SpectralData):
    """Inverse map: u = B^{-1/2}(phi + phibar)/2, u_t = B^{1/2}(phi - phibar)/(2i)."""
    Bh = spectral_power(sd, 0.25)
    Bmh = spectral_power(sd, -0.25)
    u = Bmh @ (phi + phibar) / 2.0
    ut = Bh @ (phi - phibar) / (2.0 * 1j)
    return u, ut


def pair_state(phi_exp: np.ndarray, sd: SpectralData) -> np.ndarray:
    """(phi, conj-partner) eigen-coordinate state from exp coefficients."""
    phibar = np.conj(phi_exp[::-1])
    coords = sd.psi.conj().T
    return np.stack([coords @ phi_exp, coords @ phibar])


class KickOperator:
    """W(phi) sigma4 with W = (1/2) B^{-1/2} V(phi) B^{-1/2} in eigen coords."""

    def __init__(self, v, sd: SpectralData, lattice: Lattice):
        from .craig_wayne import build_basis_matrix, change_basis
        from .magnus import multiplication_operator
        basis = build_basis_matrix(sd)
        Bmh = spectral_power(sd, -0.25)
        W = BlockOperator(lattice, {ell: 0.5 * (Bmh @ m @ Bmh)
                                    for ell, m in multiplication_operator(v).mats.items()})
        We = change_basis(W, basis)
        self.mats = We.mats
        self.K = We.K

    def at_angle(self, phi_angle: np.ndarray) -> np.ndarray:
        W = None
        for ell, m in self.mats.items():
            ph = np.exp(1j * float(np.dot(ell, phi_angle)))
            W = ph * m if W is None else W + ph * m
        return W


def _kick_conj(K, W):
    """conj-op of W at fixed angle: K conj(W) conj(K)."""
    return K @ np.conj(W) @ np.conj(K)


def integrate(sd: SpectralData, v, omega, state0: np.ndarray, T: float,
              dt: float, lattice: Lattice | None = None, t0: float = 0.0,
              store_every: int = 1) -> Trajectory:
    """Strang splitting: half rotation, exact kick at the midpoint, half rotation.

    state0: (2, D) eigen coordinates.  dt must resolve the driving and the
    spectral radius: dt <= 0.1 / max(|omega|, lambda_max).
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    lam = sd.lam
    lam_max = float(np.nanmax(lam))
    if dt > 0.1 / max(float(np.linalg.norm(omega)), lam_max):
        raise ValueError("dt too coarse for the driving/spectral scales")
    n_steps = int(round(T / dt))
    lattice = lattice or getattr(v, "lattice", None)
    kick = KickOperator(v, sd, lattice) if v is not None and np.max(np.abs(v.coeffs)) > 0 else None
    half = np.exp(-0.5j * dt * lam)
    state = np.array(state0, dtype=complex)
    times = [t0]
    states = [np.array(state)]
    t = t0
    for k in range(n_steps):
        state[0] *= half
        state[1] *= np.conj(half)
        if kick is not None:
            state = _apply_kick(kick, state, omega * (t + 0.5 * dt), dt)
        state[0] *= half
        state[1] *= np.conj(half)
        t += dt
        if (k + 1) % store_every == 0 or k == n_steps - 1:
            times.append(t)
            states.append(np.array(state))
    return Trajectory(times=np.asarray(times), states=np.asarray(states),
                      sd=sd, dt=dt)


def _apply_kick(kick: KickOperator, state, phi_angle, dt):
    W = kick.at_angle(np.atleast_1d(phi_angle))
    Wb = _kick_conj(kick.K, W)
    s = state[0] + state[1]
    out = np.array(state)
    out[0] -= 1j * dt * (W @ s)
    out[1] += 1j * dt * (Wb @ s)
    return out


def sobolev_trace(traj: Trajectory, r: float):
    """(sup_t ratio, full ratio series) of ||phi(t)||_{H^r} / ||phi(0)||_{H^r}."""
    norms = traj.sobolev_norms(r)
    base = norms[0]
    if base == 0:
        raise ValueError("zero initial state")
    ratios = norms / base
    return float(np.max(ratios)), ratios


def band_width(traj: Trajectory, r: float) -> float:
    """Measured half-width c with sup_t ratio within [1 - c, 1 + c]."""
    _, ratios = sobolev_trace(traj, r)
    return float(np.max(np.abs(ratios - 1.0)))


# -- Floquet assembly ----------------------------------------------------------


def sigma4_exponential(Ymat: np.ndarray, K: np.ndarray) -> np.ndarray:
    """e^{i Y sigma4} = 1 + i Y sigma4 exactly (sigma4 nilpotent); Y real."""
    D = Ymat.shape[0]
    Yb = K @ np.conj(Ymat) @ np.conj(K)
    top = np.concatenate([np.eye(D) + 1j * Ymat, 1j * Ymat], axis=1)
    bot = np.concatenate([-1j * Yb, np.eye(D) - 1j * Yb], axis=1)
    return np.concatenate([top, bot], axis=0)


def pair_at_angle(P: OperatorPair, phi_angle) -> np.ndarray:
    """The 2x2-of-operators family of P evaluated at a fixed angle."""
    lat = P.Ad.lattice
    D = 2 * lat.J + 1
    Ad = np.zeros((D, D), dtype=complex)
    Ao = np.zeros((D, D), dtype=complex)
    phi_angle = np.atleast_1d(phi_angle)
    for ell, m in P.Ad.mats.items():
        Ad += m * np.exp(1j * float(np.dot(ell, phi_angle)))
    for ell, m in P.Ao.mats.items():
        Ao += m * np.exp(1j * float(np.dot(ell, phi_angle)))
    K = P.Ad.K
    Kc = np.conj(K)
    top = np.concatenate([Ad, Ao], axis=1)
    bot = np.concatenate([-K @ np.conj(Ao) @ Kc, -K @ np.conj(Ad) @ Kc], axis=1)
    return np.concatenate([top, bot], axis=0)


class FloquetFrame:
    """T(phi) = e^{iX^(P-1)(phi)} ... e^{iX^(0)(phi)} e^{iY(phi) sigma4}.

    Conjugates the original (Magnus-frame input) flow to the final constant
    block-diagonal flow: psi_final(t) = T(omega t) psi(t).
    """

    def __init__(self, Y_eigen: BlockOperator, generators, final_state):
        self.Y = Y_eigen
        self.gens = generators
        self.final_state = final_state
        lam_blocks = final_state.H0_matrix()
        self.H_inf = lam_blocks

    def Y_at(self, phi_angle) -> np.ndarray:
        D = 2 * self.final_state.lattice.J + 1
        Y = np.zeros((D, D), dtype=complex)
        for ell, m in self.Y.mats.items():
            Y += m * np.exp(1j * float(np.dot(ell, np.atleast_1d(phi_angle))))
        return Y

    def frame(self, phi_angle) -> np.ndarray:
        out = sigma4_exponential(self.Y_at(phi_angle), self.Y.K)
        for X in self.gens:
            out = scipy.linalg.expm(1j * pair_at_angle(X, phi_angle)) @ out
        return out

    def reduced_propagator(self, t: float, tau: float) -> np.ndarray:
        D = self.H_inf.shape[0]
        rot = scipy.linalg.expm(-1j * (t - tau) * np.kron(np.diag([1.0, -1.0]),
                                                          self.H_inf))
        return rot

    def propagator(self, t: float, tau: float, omega) -> np.ndarray:
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        Tt = self.frame(omega * t)
        Tt0 = self.frame(omega * tau)
        return np.linalg.solve(Tt, self.reduced_propagator(t, tau) @ Tt0)


def floquet_residual(frame: FloquetFrame, sd: SpectralData, v, omega,
                     t_tau_pairs, dt: float, lattice: Lattice,
                     n_probes: int = 4, rng=None) -> float:
    """max over (t, tau) and probes of |U_num(t,tau) p - U_floquet(t,tau) p| / |p|."""
    rng = rng or np.random.default_rng(0)
    D = 2 * sd.J + 1
    worst = 0.0
    for (t, tau) in t_tau_pairs:
        U = frame.propagator(t, tau, omega)
        # snap the step so the horizon is hit exactly
        n_steps = max(1, int(math.ceil((t - tau) / dt)))
        dt_run = (t - tau) / n_steps
        for _ in range(n_probes):
            pe = rng.standard_normal(D) + 1j * rng.standard_normal(D)
            state = pair_state(pe, sd)
            traj = integrate(sd, v, omega, state, t - tau, dt_run, lattice,
                             t0=tau, store_every=n_steps)
            got = traj.states[-1].reshape(-1)
            want = U @ state.reshape(-1)
            worst = max(worst, float(np.linalg.norm(got - want)
                                     / np.linalg.norm(state)))
    return worst


def resonant_drive(lattice: Lattice, sd: SpectralData, n: int, m: int,
                   amplitude: float = 0.5):
    """A single-harmonic driving resonant with the lam_n + lam_m gap.

    Returns (v, omega) with omega[0] = lam_n + lam_m: the plus-type divisor
    omega.l + mu_n + mu_m vanishes at l = -1, pumping that pair of modes.
    """
    from .harmonics import TorusFunction
    lam = sd.lam
    om = float(lam[sd.idx(n)] + lam[sd.idx(m)])
    # drive the x-mode connecting e_n and e_{-m}: j-transfer n + m
    v = TorusFunction.from_modes(
        lattice, {(1, n + m): amplitude / 2, (-1, -(n + m)): amplitude / 2},
        reality=True)
    return v, np.array([om])
