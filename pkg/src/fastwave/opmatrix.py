"""Block-matrix operator algebra with s-decay norms.

Linear operators A(phi) on functions of (phi, x) are stored as matrix-valued
Fourier coefficients {l -> A(l)}, where A(l) is a dense (2J+1)^2 matrix over
the space index (rows = output mode, columns = input mode) and l is the
angle-mode transfer: (A u)^(l_out) = sum_l A(l) u^(l_out - l).

The space index is partitioned into blocks [n] = {-n, n} ([0] = {0}); the
2x2 (or rectangular, for n = 0) blocks A_[n]^[n'](l) are views into A(l).
The s-decay norm weighs the worst block at each distance |n - n'|:

    |A|_s^2 = sum_{l, h} <l,h>^(2s) sup_{|n-n'|=h} ||A_[n]^[n'](l)||_HS^2 .

Operator pairs (A^d, A^o) model the 2x2 matrices-of-operators
[[A^d, A^o], [-conj(A^o), -conj(A^d)]]; the conjugate operator
conj(A) psi = conj(A conj(psi)) is basis aware: a conjugation matrix K with
conj(psi_j) = sum_k K[k, j] psi_k is attached to each operator (K = the
index flip in the exponential basis).
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .harmonics import Lattice


# -- helpers ---------------------------------------------------------------


@lru_cache(maxsize=None)
def _ell_list(nu, L):
    from .harmonics import _ell_range
    return [tuple(int(x) for x in row) for row in _ell_range(nu, L)]


def _ell_norm(ell) -> float:
    return math.sqrt(sum(float(c) ** 2 for c in ell))


@lru_cache(maxsize=None)
def _jbracket(J):
    return np.maximum(1.0, np.abs(np.arange(-J, J + 1)).astype(float))


def block_slice(J: int, n: int):
    """Scalar indices of block [n] in (-J..J) offset coordinates."""
    if n == 0:
        return np.array([J])
    return np.array([J - n, J + n])


def _hs_block_tensor(mat: np.ndarray, J: int) -> np.ndarray:
    """(J+1, J+1) array of ||A_[n]^[n']||_HS^2 for one l-coefficient."""
    P = np.abs(mat) ** 2
    pp = P[J:, J:]
    pm = P[J:, J::-1]
    mp = P[J::-1, J:]
    mm = P[J::-1, J::-1]
    out = pp + pm + mp + mm
    out[0, :] *= 0.5
    out[:, 0] *= 0.5
    return out


class BlockOperator:
    """phi-quasi-periodic operator as {angle transfer l -> (2J+1)^2 matrix}."""

    __slots__ = ("lattice", "mats", "K", "_grid")

    def __init__(self, lattice: Lattice, mats: dict, K: np.ndarray | None = None):
        self.lattice = lattice
        D = 2 * lattice.J + 1
        self.mats = {}
        for ell, m in mats.items():
            m = np.asarray(m, dtype=complex)
            if m.shape != (D, D):
                raise ValueError("matrix coefficient has wrong shape")
            self.mats[tuple(int(c) for c in ell)] = m
        self.K = K if K is not None else flip_conjugation(lattice.J)
        self._grid = None

    # -- constructors ---------------------------------------------------

    @classmethod
    def zero(cls, lattice: Lattice, K=None) -> "BlockOperator":
        return cls(lattice, {}, K)

    @classmethod
    def identity(cls, lattice: Lattice, K=None) -> "BlockOperator":
        D = 2 * lattice.J + 1
        return cls(lattice, {(0,) * lattice.nu: np.eye(D, dtype=complex)}, K)

    @classmethod
    def from_blocks(cls, lattice: Lattice, blocks: dict, K=None) -> "BlockOperator":
        """Build from {(l, n, n') -> block array} entries."""
        D = 2 * lattice.J + 1
        mats = {}
        for (ell, n, n_in), blk in blocks.items():
            ell = tuple(int(c) for c in (ell if isinstance(ell, tuple) else (ell,)))
            m = mats.setdefault(ell, np.zeros((D, D), dtype=complex))
            rows = block_slice(lattice.J, n)
            cols = block_slice(lattice.J, n_in)
            m[np.ix_(rows, cols)] = np.asarray(blk, dtype=complex).reshape(len(rows), len(cols))
        return cls(lattice, mats, K)

    @classmethod
    def time_independent(cls, lattice: Lattice, mat: np.ndarray, K=None) -> "BlockOperator":
        return cls(lattice, {(0,) * lattice.nu: mat}, K)

    def with_K(self, K: np.ndarray) -> "BlockOperator":
        return BlockOperator(self.lattice, self.mats, K)

    # -- accessors --------------------------------------------------------

    def mat(self, ell) -> np.ndarray:
        if np.isscalar(ell):
            ell = (ell,)
        D = 2 * self.lattice.J + 1
        return self.mats.get(tuple(int(c) for c in ell), np.zeros((D, D), dtype=complex))

    def block(self, ell, n: int, n_in: int) -> np.ndarray:
        m = self.mat(ell)
        rows = block_slice(self.lattice.J, n)
        cols = block_slice(self.lattice.J, n_in)
        return m[np.ix_(rows, cols)]

    def norm_max(self) -> float:
        return max((np.max(np.abs(m)) for m in self.mats.values()), default=0.0)

    def prune(self, tol: float = 0.0) -> "BlockOperator":
        return BlockOperator(self.lattice,
                             {l: m for l, m in self.mats.items() if np.max(np.abs(m)) > tol},
                             self.K)

    # -- linear structure -------------------------------------------------

    def _binary(self, other, f):
        keys = set(self.mats) | set(other.mats)
        return BlockOperator(self.lattice,
                             {k: f(self.mat(k), other.mat(k)) for k in keys}, self.K)

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b)

    def __mul__(self, scalar):
        return BlockOperator(self.lattice,
                             {k: m * scalar for k, m in self.mats.items()}, self.K)

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    # -- products ----------------------------------------------------------

    def _phi_grid(self):
        """Operator family sampled on a phi grid resolving products (4L+1 pts/axis)."""
        if self._grid is None:
            lat = self.lattice
            P = 4 * lat.L + 2
            D = 2 * lat.J + 1
            buf = np.zeros((P,) * lat.nu + (D, D), dtype=complex)
            for ell, m in self.mats.items():
                buf[tuple(c % P for c in ell)] = m
            self._grid = np.fft.ifftn(buf, axes=tuple(range(lat.nu))) * P ** lat.nu
        return self._grid

    @classmethod
    def _from_phi_grid(cls, lattice, grid, K):
        P = grid.shape[0]
        spec = np.fft.fftn(grid, axes=tuple(range(lattice.nu))) / P ** lattice.nu
        mats = {}
        for ell in _ell_list(lattice.nu, lattice.L):
            m = spec[tuple(c % P for c in ell)]
            if np.max(np.abs(m)) > 0.0:
                mats[ell] = np.ascontiguousarray(m)
        return cls(lattice, mats, K)

    def __matmul__(self, other: "BlockOperator") -> "BlockOperator":
        if self.lattice != other.lattice:
            raise ValueError("lattice mismatch")
        n_pairs = len(self.mats) * len(other.mats)
        if n_pairs == 0:
            return BlockOperator.zero(self.lattice, self.K)
        if n_pairs <= 64:
            out = {}
            L = self.lattice.L
            for la, ma in self.mats.items():
                for lb, mb in other.mats.items():
                    ll = tuple(a + b for a, b in zip(la, lb))
                    if max(abs(c) for c in ll) > L:
                        continue
                    if ll in out:
                        out[ll] = out[ll] + ma @ mb
                    else:
                        out[ll] = ma @ mb
            return BlockOperator(self.lattice, out, self.K)
        prod = np.matmul(self._phi_grid(), other._phi_grid())
        return self._from_phi_grid(self.lattice, prod, self.K)

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        """Action on a function given by coefficients of shape lattice.shape."""
        lat = self.lattice
        out = np.zeros(lat.shape, dtype=complex)
        for ell, m in self.mats.items():
            shifted = _shift_ell(coeffs, ell, lat)
            out += np.tensordot(shifted, m, axes=([lat.nu], [1]))
        return out

    # -- adjoint, conjugate, weights -----------------------------------------

    def adjoint(self) -> "BlockOperator":
        return BlockOperator(self.lattice,
                             {tuple(-c for c in k): m.conj().T for k, m in self.mats.items()},
                             self.K)

    def conj_op(self) -> "BlockOperator":
        """conj(A): psi -> conj(A conj(psi)), i.e. A(l) -> K conj(A(-l)) conj(K)."""
        Kc = np.conj(self.K)
        return BlockOperator(self.lattice,
                             {tuple(-c for c in k): self.K @ np.conj(m) @ Kc
                              for k, m in self.mats.items()},
                             self.K)

    def weight(self, left: float = 0.0, right: float = 0.0) -> "BlockOperator":
        """<D>^left A <D>^right (blockwise <n>, <n'> scalings)."""
        w = _jbracket(self.lattice.J)
        wl = w ** left if left else None
        wr = w ** right if right else None
        out = {}
        for k, m in self.mats.items():
            mm = m
            if wl is not None:
                mm = wl[:, None] * mm
            if wr is not None:
                mm = mm * wr[None, :]
            out[k] = mm
        return BlockOperator(self.lattice, out, self.K)

    def omega_dphi(self, omega: np.ndarray) -> "BlockOperator":
        """omega . d_phi A: multiply A(l) by i (omega . l)."""
        return BlockOperator(self.lattice,
                             {k: (1j * float(np.dot(omega, k))) * m
                              for k, m in self.mats.items()}, self.K)

    def to_dense(self) -> np.ndarray:
        """Full matrix over the extended (l, j) mode lattice (oracle use)."""
        lat = self.lattice
        ells = _ell_list(lat.nu, lat.L)
        pos = {e: i for i, e in enumerate(ells)}
        D = 2 * lat.J + 1
        n = len(ells) * D
        out = np.zeros((n, n), dtype=complex)
        for lin_in, ell_in in enumerate(ells):
            for ell, m in self.mats.items():
                ell_out = tuple(a + b for a, b in zip(ell, ell_in))
                if ell_out in pos:
                    i = pos[ell_out]
                    out[i * D:(i + 1) * D, lin_in * D:(lin_in + 1) * D] = m
        return out


def _shift_ell(coeffs, ell, lat):
    """coeffs(l - ell) with zero fill outside the box."""
    out = np.zeros_like(coeffs)
    src = []
    dst = []
    n = 2 * lat.L + 1
    for c in ell:
        if c >= 0:
            dst.append(slice(c, n))
            src.append(slice(0, n - c))
        else:
            dst.append(slice(0, n + c))
            src.append(slice(-c, n))
    src.append(slice(None))
    dst.append(slice(None))
    out[tuple(dst)] = coeffs[tuple(src)]
    return out


def flip_conjugation(J: int) -> np.ndarray:
    """K of the exponential basis: conj(e_j) = e_{-j}."""
    return np.eye(2 * J + 1)[::-1].astype(complex)


# -- norms ------------------------------------------------------------------


def s_decay_norm(A: BlockOperator, s: float) -> float:
    J = A.lattice.J
    total = 0.0
    for ell, m in A.mats.items():
        hs2 = _hs_block_tensor(m, J)
        ln = _ell_norm(ell)
        # sup over |n-n'| = h, then weight <l,h>^{2s}
        sup_h = np.zeros(J + 1)
        for h in range(J + 1):
            d = np.diagonal(hs2, offset=h)
            if h > 0:
                d = np.concatenate([d, np.diagonal(hs2, offset=-h)])
            sup_h[h] = np.max(d)
        w = np.maximum(1.0, np.maximum(ln, np.arange(J + 1.0)))
        total += float(np.sum(w ** (2.0 * s) * sup_h))
    return math.sqrt(total)


def _pair_norm_terms(alpha: float, beta: float):
    """Canonical list of (left, right, component) weight descriptors."""
    terms = [(alpha, 0.0, "d"), (0.0, alpha, "d"), (beta, 0.0, "o"), (0.0, beta, "o")]
    for sig in sorted({alpha, -alpha, beta, -beta, 0.0}):
        terms.append((sig, -sig, "d"))
        terms.append((sig, -sig, "o"))
    return terms


def pair_norm(P: "OperatorPair", s: float, alpha=None, beta=None) -> float:
    """The M_s(alpha, beta) norm: 4 one-sided terms + one per distinct sigma."""
    alpha = P.alpha if alpha is None else alpha
    beta = P.beta if beta is None else beta
    total = 0.0
    for left, right, comp in _pair_norm_terms(alpha, beta):
        op = P.Ad if comp == "d" else P.Ao
        total += s_decay_norm(op.weight(left, right), s)
    return total


def weight_conjugate(A: BlockOperator, sigma: float) -> BlockOperator:
    """<D>^sigma A <D>^{-sigma}: blockwise <n>^sigma A_[n]^[n'] <n'>^{-sigma}."""
    return A.weight(sigma, -sigma)


def norm_audit(P: "OperatorPair", s: float, alpha=None, beta=None) -> dict:
    """Class-membership certificate: every weighted norm of the pair, JSON-ready."""
    alpha = P.alpha if alpha is None else alpha
    beta = P.beta if beta is None else beta
    out = {"s": s, "alpha": alpha, "beta": beta,
           "structure_defect": P.structure_defect()}
    for i, (left, right, comp) in enumerate(_pair_norm_terms(alpha, beta)):
        op = P.Ad if comp == "d" else P.Ao
        out[f"term{i}:{comp}:D^{left:g}.A.D^{right:g}"] = s_decay_norm(
            op.weight(left, right), s)
    out["total"] = pair_norm(P, s, alpha, beta)
    return out


def project_modes(A: BlockOperator, N: float):
    """(Pi_N A, Pi_N^perp A): split the angle modes at |l| <= N."""
    low, high = {}, {}
    for ell, m in A.mats.items():
        (low if _ell_norm(ell) <= N else high)[ell] = m
    return (BlockOperator(A.lattice, low, A.K), BlockOperator(A.lattice, high, A.K))


# -- operator pairs ----------------------------------------------------------


class OperatorPair:
    """(A^d, A^o) with decay weights; the off-diagonal entries are implied."""

    __slots__ = ("Ad", "Ao", "alpha", "beta")

    def __init__(self, Ad: BlockOperator, Ao: BlockOperator, alpha: float, beta: float):
        if Ad.lattice != Ao.lattice:
            raise ValueError("lattice mismatch")
        self.Ad = Ad
        self.Ao = Ao
        self.alpha = float(alpha)
        self.beta = float(beta)

    @classmethod
    def zero(cls, lattice: Lattice, alpha=0.0, beta=0.0, K=None) -> "OperatorPair":
        return cls(BlockOperator.zero(lattice, K), BlockOperator.zero(lattice, K), alpha, beta)

    def __add__(self, other):
        return OperatorPair(self.Ad + other.Ad, self.Ao + other.Ao, self.alpha, self.beta)

    def __sub__(self, other):
        return OperatorPair(self.Ad - other.Ad, self.Ao - other.Ao, self.alpha, self.beta)

    def __mul__(self, scalar):
        return OperatorPair(self.Ad * scalar, self.Ao * scalar, self.alpha, self.beta)

    __rmul__ = __mul__

    def norm_max(self) -> float:
        return max(self.Ad.norm_max(), self.Ao.norm_max())

    def structure_defect(self) -> float:
        """max deviation from [A^d]* = A^d, [A^o]* = conj(A^o)."""
        dd = (self.Ad.adjoint() - self.Ad).norm_max()
        oo = (self.Ao.adjoint() - self.Ao.conj_op()).norm_max()
        return max(dd, oo)

    def omega_dphi(self, omega):
        return OperatorPair(self.Ad.omega_dphi(omega), self.Ao.omega_dphi(omega),
                            self.alpha, self.beta)

    def project(self, N: float):
        lo_d, hi_d = project_modes(self.Ad, N)
        lo_o, hi_o = project_modes(self.Ao, N)
        return (OperatorPair(lo_d, lo_o, self.alpha, self.beta),
                OperatorPair(hi_d, hi_o, self.alpha, self.beta))

    def to_dense(self) -> np.ndarray:
        """The full 2x2 matrix-of-operators over the extended lattice."""
        Ad, Ao = self.Ad.to_dense(), self.Ao.to_dense()
        Kd = _dense_conj_mat(self.Ad)
        top = np.concatenate([Ad, Ao], axis=1)
        bot = np.concatenate([-_dense_conj(Ao, Kd), -_dense_conj(Ad, Kd)], axis=1)
        return np.concatenate([top, bot], axis=0)


def _dense_conj_mat(A: BlockOperator) -> np.ndarray:
    lat = A.lattice
    ells = _ell_list(lat.nu, lat.L)
    pos = {e: i for i, e in enumerate(ells)}
    D = 2 * lat.J + 1
    n = len(ells) * D
    K = np.zeros((n, n), dtype=complex)
    for i, ell in enumerate(ells):
        j = pos[tuple(-c for c in ell)]
        K[j * D:(j + 1) * D, i * D:(i + 1) * D] = A.K
    return K


def _dense_conj(M: np.ndarray, K: np.ndarray) -> np.ndarray:
    return K @ np.conj(M) @ np.conj(K)


def ad(X: OperatorPair, V: OperatorPair) -> OperatorPair:
    """ad_X(V) = i[X, V] on operator pairs (component formulas of the 2x2 algebra)."""
    Xd, Xo, Vd, Vo = X.Ad, X.Ao, V.Ad, V.Ao
    Wd = Xd @ Vd - Vd @ Xd - (Xo @ Vo.conj_op() - Vo @ Xo.conj_op())
    Wo = Xd @ Vo + Vo @ Xd.conj_op() - (Xo @ Vd.conj_op() + Vd @ Xo)
    return OperatorPair(1j * Wd, 1j * Wo, max(X.alpha, V.alpha), max(X.alpha, V.alpha))


class LieSeriesDiverged(RuntimeError):
    pass


def lie_conjugate(X: OperatorPair, V: OperatorPair, tol: float = 1e-14,
                  n_max: int = 30):
    """e^{iX} V e^{-iX} = sum_n ad_X^n(V)/n!, truncated at increment < tol.

    Returns (conjugated pair, difference pair = result - V).
    """
    term = V
    diff = OperatorPair.zero(V.Ad.lattice, V.alpha, V.beta, V.Ad.K)
    scale = max(V.norm_max(), 1e-300)
    prev_inc = None
    for n in range(1, n_max + 1):
        term = ad(X, term) * (1.0 / n)
        inc = term.norm_max()
        diff = diff + term
        if inc < tol * (1.0 + scale):
            break
        if prev_inc is not None and inc > 4.0 * prev_inc and inc > scale:
            raise LieSeriesDiverged("Lie series increments growing: generator too large")
        prev_inc = inc
    else:
        if inc > math.sqrt(tol) * (1.0 + scale):
            raise LieSeriesDiverged("Lie series did not settle within n_max terms")
    return V + diff, diff


def lie_sum_xdot(X: OperatorPair, Xdot: OperatorPair, tol: float = 1e-14,
                 n_max: int = 30) -> OperatorPair:
    """int_0^1 e^{i s X} Xdot e^{-i s X} ds = sum_n ad_X^n(Xdot)/(n+1)!."""
    result = Xdot
    term = Xdot
    for n in range(1, n_max + 1):
        term = ad(X, term) * (1.0 / (n + 1))
        result = result + term
        if term.norm_max() < tol * (1.0 + Xdot.norm_max()):
            break
    return result


# -- finite block-space operators ---------------------------------------------


def left_right_ops(A: np.ndarray, B: np.ndarray):
    """M_L(A): X -> AX and M_R(B): X -> XB on row-major vectorized blocks."""
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    B = np.atleast_2d(np.asarray(B, dtype=complex))
    ML = np.kron(A, np.eye(B.shape[0]))
    MR = np.kron(np.eye(A.shape[0]), B.T)
    return ML, MR


def block_inverse_norm(G: np.ndarray, hermitian: bool | None = None) -> float:
    """||G^{-1}|| = 1/min|eig| (self-adjoint) with singular-value fallback."""
    G = np.asarray(G, dtype=complex)
    if hermitian is None:
        hermitian = np.max(np.abs(G - G.conj().T)) <= 1e-12 * max(1.0, np.max(np.abs(G)))
    if hermitian:
        ev = np.linalg.eigvalsh(G)
        m = np.min(np.abs(ev))
    else:
        m = np.min(np.linalg.svd(G, compute_uv=False))
    if m == 0.0:
        raise np.linalg.LinAlgError("singular block operator")
    return float(1.0 / m)
