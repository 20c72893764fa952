"""Two-species bosonic configuration interaction over fixed orbitals.

Each species gets a number-conserving Fock space built on d orthonormal
single-particle functions (by default the lowest eigenstates of its static
trap; a different reference frequency can be chosen to widen the basis for
strongly displaced dynamics).  The state is a complex coefficient tensor over
the bath x impurity occupation bases, so interspecies entanglement and
fragmentation come out of the wavefunction itself rather than an ansatz.

The orbitals never move: convergence is bought with basis size, which keeps
the equations of motion linear and lets every result be checked against the
exact two-boson grid solver.  Two-body contact integrals are grid quadratures
of orbital products (the on-diagonal 1/dx regularization of the delta).

Hamiltonian pieces, with a(t) the trap displacement of the impurities:

    H(t) = H_bath + H_imp + H_BI
           - M w^2 a(t) * Xhat_imp + 0.5 M w^2 a(t)^2 * N_imp

where the last two terms come from expanding the shifted trap.  The c-number
term only dephases globally but is kept so that energy bookkeeping matches
the shifted-trap potential exactly.

Sector operators have two interchangeable realizations: sparse matrices in
the occupation basis (general N, moderate d), and for exactly two particles a
dense symmetric-matrix form whose contact term is applied through the grid,
which stays affordable for the several-hundred-orbital bases needed by
large-amplitude driving.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal, svd
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, eigsh

from . import grid as gridops
from .errors import ConvergenceError, StepSizeError
from .model import BATH, HBAR, IMPURITY, GridSpec, MixtureModel

#: above this orbital count a two-particle sector switches to the dense
#: pair-matrix realization (the d^4 contact tensor stops being practical)
PAIR_PATH_MIN_D = 40

ORTHONORMALITY_TOL = 1e-10


# ---------------------------------------------------------------------------
# orbital bases
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OrbitalBasis:
    """d orthonormal real functions on the grid, columns of ``functions``."""

    label: str
    functions: np.ndarray        # (n, d), sum(phi_p phi_q) dx = delta_pq
    grid: GridSpec
    reference_freq: float

    @property
    def size(self) -> int:
        return self.functions.shape[1]

    def __post_init__(self) -> None:
        gram = (self.functions.T * self.grid.dx) @ self.functions
        defect = np.max(np.abs(gram - np.eye(self.size)))
        if defect > ORTHONORMALITY_TOL:
            raise ValueError(f"orbitals not orthonormal (defect {defect:.2e})")

    def parities(self) -> np.ndarray | None:
        """Per-orbital parity signs, or None on an asymmetric grid."""
        g = self.grid
        if abs(g.x_min + g.x_max) > 1e-12 * g.length:
            return None
        overlaps = np.einsum("jp,jp->p", self.functions, self.functions[::-1]) * g.dx
        if np.min(np.abs(overlaps)) < 0.99:
            return None
        return np.sign(overlaps)


def trap_orbitals(model: MixtureModel, label: str, d: int,
                  basis_freq: float | None = None) -> OrbitalBasis:
    """Lowest d eigenstates of T + (M/2) freq^2 x^2 on the model grid.

    ``basis_freq`` defaults to the species trap frequency; a lower value
    yields spatially wider orbitals that cover large trap displacements with
    fewer functions.
    """
    sp_ = model.species(label)
    freq = sp_.trap_freq if basis_freq is None else basis_freq
    g = model.grid
    if d < 1 or d > g.n:
        raise ValueError(f"orbital count d={d} outside 1..{g.n}")
    x = g.nodes()
    _, vecs = gridops.single_particle_states(g, sp_.mass, 0.5 * sp_.mass * freq**2 * x**2)
    return OrbitalBasis(label, np.ascontiguousarray(vecs[:, :d]), g, freq)


# ---------------------------------------------------------------------------
# occupation bases
# ---------------------------------------------------------------------------

def enumerate_occupations(n_particles: int, n_orbitals: int) -> np.ndarray:
    """All occupation vectors with the given total, in ascending lexicographic order."""
    out: list[tuple[int, ...]] = []

    def rec(prefix: list[int], remaining: int, slots: int) -> None:
        if slots == 1:
            out.append(tuple(prefix + [remaining]))
            return
        for occ in range(remaining + 1):
            rec(prefix + [occ], remaining - occ, slots - 1)

    rec([], n_particles, n_orbitals)
    return np.array(out, dtype=np.int64)


class FockSpace:
    """Bosonic number-conserving occupation basis for one species."""

    def __init__(self, label: str, n_particles: int, n_orbitals: int) -> None:
        if n_particles < 0 or n_orbitals < 1:
            raise ValueError("need n_particles >= 0 and n_orbitals >= 1")
        self.label = label
        self.n_particles = n_particles
        self.n_orbitals = n_orbitals
        self.occupations = enumerate_occupations(n_particles, n_orbitals)
        self.dim = self.occupations.shape[0]
        expected = math.comb(n_particles + n_orbitals - 1, n_orbitals - 1)
        if self.dim != expected:
            raise AssertionError("occupation enumeration is inconsistent")
        self._index = {tuple(o): i for i, o in enumerate(self.occupations)}

    def index(self, occupation) -> int:
        return self._index[tuple(int(v) for v in occupation)]

    def one_body_matrix(self, h: np.ndarray) -> sp.csr_matrix:
        """Second-quantized sum h[p,q] a+_p a_q as a sparse matrix."""
        d = self.n_orbitals
        occ = self.occupations
        rows: list[np.ndarray] = []
        cols: list[np.ndarray] = []
        vals: list[np.ndarray] = []
        diag = occ.astype(float) @ np.diagonal(h)
        rows.append(np.arange(self.dim))
        cols.append(np.arange(self.dim))
        vals.append(diag)
        for q in range(d):
            src = np.nonzero(occ[:, q] > 0)[0]
            if src.size == 0:
                continue
            for p in range(d):
                if p == q or h[p, q] == 0.0:
                    continue
                shifted = occ[src].copy()
                shifted[:, q] -= 1
                shifted[:, p] += 1
                dst = np.array([self._index[tuple(o)] for o in shifted])
                amp = np.sqrt(occ[src, q] * (occ[src, p] + 1.0)) * h[p, q]
                rows.append(dst)
                cols.append(src)
                vals.append(amp)
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.dim, self.dim))

    def transition_ops(self) -> list[list[sp.csr_matrix]]:
        """All a+_p a_q as sparse matrices (for one-body reduced densities)."""
        d = self.n_orbitals
        ops: list[list[sp.csr_matrix]] = []
        for p in range(d):
            row = []
            for q in range(d):
                h = np.zeros((d, d))
                h[p, q] = 1.0
                row.append(self.one_body_matrix(h))
            ops.append(row)
        return ops

    def two_body_matrix(self, w: np.ndarray) -> sp.csr_matrix:
        """(1/2) sum W[p,q,r,s] a+_p a+_q a_s a_r for a fully symmetric W."""
        d = self.n_orbitals
        occ = self.occupations
        rows: list[int] = []
        cols: list[int] = []
        vals: list[float] = []
        pairs = [(p, q) for p in range(d) for q in range(p, d)]
        for m in range(self.dim):
            l = occ[m]
            for r, s_ in pairs:
                if r == s_:
                    if l[r] < 2:
                        continue
                    amp_ann = math.sqrt(l[r] * (l[r] - 1))
                else:
                    if l[r] < 1 or l[s_] < 1:
                        continue
                    amp_ann = math.sqrt(l[r] * l[s_])
                inter = l.copy()
                inter[r] -= 1
                inter[s_] -= 1
                for p, q in pairs:
                    wval = w[p, q, r, s_]
                    if wval == 0.0:
                        continue
                    if p == q:
                        amp_cre = math.sqrt((inter[p] + 1) * (inter[p] + 2))
                    else:
                        amp_cre = math.sqrt((inter[p] + 1) * (inter[q] + 1))
                    target = inter.copy()
                    target[p] += 1
                    target[q] += 1
                    coeff = 0.5 * (2 - (p == q)) * (2 - (r == s_)) * wval
                    rows.append(self._index[tuple(target)])
                    cols.append(m)
                    vals.append(coeff * amp_ann * amp_cre)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim))

    def pair_annihilation_tables(self) -> tuple["FockSpace", list[tuple[int, int, np.ndarray, np.ndarray, np.ndarray]]]:
        """Maps a_r a_s into the (N-2)-particle space, for two-body densities."""
        if self.n_particles < 2:
            raise ValueError("pair annihilation needs at least two particles")
        lower = FockSpace(self.label, self.n_particles - 2, self.n_orbitals)
        occ = self.occupations
        tables = []
        for r in range(self.n_orbitals):
            for s_ in range(r, self.n_orbitals):
                if r == s_:
                    src = np.nonzero(occ[:, r] > 1)[0]
                    amp = np.sqrt(occ[src, r] * (occ[src, r] - 1.0))
                else:
                    src = np.nonzero((occ[:, r] > 0) & (occ[:, s_] > 0))[0]
                    amp = np.sqrt(occ[src, r] * occ[src, s_] * 1.0)
                if src.size == 0:
                    tables.append((r, s_, src, src, amp))
                    continue
                shifted = occ[src].copy()
                shifted[:, r] -= 1
                shifted[:, s_] -= 1
                dst = np.array([lower._index[tuple(o)] for o in shifted])
                tables.append((r, s_, src, dst, amp))
        return lower, tables


# ---------------------------------------------------------------------------
# sector operators
# ---------------------------------------------------------------------------

def orbital_matrices(basis: OrbitalBasis, mass: float,
                     trap_freq: float) -> tuple[np.ndarray, np.ndarray]:
    """(h1, x) of the static species Hamiltonian in the orbital basis."""
    g = basis.grid
    x = g.nodes()
    phi = basis.functions
    h_grid = gridops.kinetic_matrix(g, mass) + np.diag(0.5 * mass * trap_freq**2 * x**2)
    h1 = (phi.T * g.dx) @ (h_grid @ phi)
    xmat = (phi.T * (x * g.dx)) @ phi
    return 0.5 * (h1 + h1.T), 0.5 * (xmat + xmat.T)


def contact_tensor(basis: OrbitalBasis, g_contact: float) -> np.ndarray:
    """W[p,q,r,s] = g * dx * sum_j phi_p phi_q phi_r phi_s, fully symmetric."""
    phi = basis.functions
    d = basis.size
    if d**4 > 4e7:
        raise MemoryError(
            f"dense contact tensor for d={d} is impractical; "
            "use the two-particle pair path instead")
    prod = np.einsum("jp,jq->jpq", phi, phi).reshape(phi.shape[0], d * d)
    w = g_contact * basis.grid.dx * (prod.T @ prod)
    return w.reshape(d, d, d, d)


class SparseSector:
    """Occupation-basis sparse operators of one species."""

    def __init__(self, space: FockSpace, basis: OrbitalBasis, mass: float,
                 trap_freq: float, g_contact: float) -> None:
        self.space = space
        self.basis = basis
        self.dim = space.dim
        h1, xmat = orbital_matrices(basis, mass, trap_freq)
        self.h1_orb = h1
        self.x_orb = xmat
        self.h_static = space.one_body_matrix(h1)
        if g_contact != 0.0 and space.n_particles >= 2:
            self.h_static = (self.h_static
                             + space.two_body_matrix(contact_tensor(basis, g_contact))).tocsr()
        self.x_fock = space.one_body_matrix(xmat) if space.n_particles > 0 else None
        self._trans: list[list[sp.csr_matrix]] | None = None

    def apply(self, theta: np.ndarray, f: float, axis: int) -> np.ndarray:
        """(h_static + f * Xhat) acting on one tensor axis."""
        if axis == 0:
            out = self.h_static @ theta
            if f != 0.0 and self.x_fock is not None:
                out += f * (self.x_fock @ theta)
            return out
        out = theta @ self.h_static.T
        if f != 0.0 and self.x_fock is not None:
            out += f * (theta @ self.x_fock.T)
        return out

    def transition(self, p: int, q: int) -> sp.csr_matrix:
        if self._trans is None:
            self._trans = self.space.transition_ops()
        return self._trans[p][q]

    def rho1_orbital(self, theta: np.ndarray, axis: int) -> np.ndarray:
        """One-body reduced density <a+_p a_q> in the orbital basis."""
        d = self.space.n_orbitals
        rho = np.zeros((d, d), dtype=complex)
        for p in range(d):
            for q in range(d):
                op = self.transition(p, q)
                if axis == 0:
                    rho[p, q] = np.vdot(theta, op @ theta)
                else:
                    rho[p, q] = np.vdot(theta, theta @ op.T)
        return rho


class PairSector:
    """Two-particle sector in dense symmetric-matrix form.

    The coefficient vector over pair occupations maps to a symmetric matrix
    S with psi(x1,x2) = sum_pq S_pq phi_p(x1) phi_q(x2); one-body parts act
    as h S + S h and the contact term is projected through the grid diagonal,
    so no d^4 tensor is ever formed.
    """

    def __init__(self, space: FockSpace, basis: OrbitalBasis, mass: float,
                 trap_freq: float, g_contact: float) -> None:
        if space.n_particles != 2:
            raise ValueError("pair path requires exactly two particles")
        self.space = space
        self.basis = basis
        self.dim = space.dim
        d = space.n_orbitals
        h1, xmat = orbital_matrices(basis, mass, trap_freq)
        self.h1_orb = h1
        self.x_orb = xmat
        self.h1c = h1.astype(complex)
        self.xc = xmat.astype(complex)
        self.gdx = g_contact * basis.grid.dx
        self.phic = np.ascontiguousarray(basis.functions.astype(complex))
        # fock index -> orbital pair (p <= q), amplitude sqrt(2) off-diagonal
        occ = space.occupations
        p_idx = np.zeros(space.dim, dtype=np.int64)
        q_idx = np.zeros(space.dim, dtype=np.int64)
        for m in range(space.dim):
            where = np.nonzero(occ[m])[0]
            p_idx[m], q_idx[m] = (where[0], where[0]) if where.size == 1 else where
        self._p, self._q = p_idx, q_idx
        self._scale = np.where(p_idx == q_idx, 1.0, 1.0 / math.sqrt(2.0))
        self._d = d

    def to_matrix(self, vec: np.ndarray) -> np.ndarray:
        s = np.zeros((self._d, self._d), dtype=complex)
        s[self._p, self._q] = vec * self._scale
        s[self._q, self._p] = vec * self._scale
        return s

    def from_matrix(self, s: np.ndarray) -> np.ndarray:
        return s[self._p, self._q] / self._scale

    def _apply_matrix(self, s: np.ndarray, f: float) -> np.ndarray:
        h = self.h1c if f == 0.0 else self.h1c + f * self.xc
        out = h @ s
        out += out.T.copy() if False else s @ h  # noqa: E501  (symmetric h; S h == (h S^T)^T)
        if self.gdx != 0.0:
            g1 = self.phic @ s
            v = np.einsum("jq,jq->j", g1, self.phic)
            out += self.gdx * ((self.phic.T * v) @ self.phic)
        return out

    def apply(self, theta: np.ndarray, f: float, axis: int) -> np.ndarray:
        moved = theta if axis == 0 else theta.T
        out = np.empty_like(moved)
        for col in range(moved.shape[1]):
            out[:, col] = self.from_matrix(self._apply_matrix(self.to_matrix(moved[:, col]), f))
        return out if axis == 0 else out.T

    def rho1_orbital(self, theta: np.ndarray, axis: int) -> np.ndarray:
        moved = theta if axis == 0 else theta.T
        d = self._d
        rho = np.zeros((d, d), dtype=complex)
        for col in range(moved.shape[1]):
            s = self.to_matrix(moved[:, col])
            rho += 2.0 * (s @ s.conj().T)
        return rho.T.conj() if axis == 1 else rho


def _make_sector(space: FockSpace, basis: OrbitalBasis, mass: float,
                 trap_freq: float, g_contact: float):
    if space.n_particles == 2 and space.n_orbitals > PAIR_PATH_MIN_D:
        return PairSector(space, basis, mass, trap_freq, g_contact)
    return SparseSector(space, basis, mass, trap_freq, g_contact)


# ---------------------------------------------------------------------------
# the coupled Hamiltonian and states
# ---------------------------------------------------------------------------

@dataclass
class CIState:
    tensor: np.ndarray           # (dim_bath, dim_imp) complex
    t: float
    basis_bath: OrbitalBasis
    basis_imp: OrbitalBasis
    space_bath: FockSpace
    space_imp: FockSpace

    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.tensor) ** 2))

    def basis(self, label: str) -> OrbitalBasis:
        return self.basis_bath if label == BATH else self.basis_imp

    def space(self, label: str) -> FockSpace:
        return self.space_bath if label == BATH else self.space_imp

    def schmidt_values(self) -> np.ndarray:
        """Squared singular values of the coefficient tensor, descending."""
        s = svd(self.tensor, compute_uv=False)
        lam = s**2
        return np.sort(lam)[::-1]

    def copy(self) -> CIState:
        return CIState(self.tensor.copy(), self.t, self.basis_bath,
                       self.basis_imp, self.space_bath, self.space_imp)


class CIHamiltonian:
    """Action of the driven two-species Hamiltonian on coefficient tensors."""

    def __init__(self, model: MixtureModel, basis_bath: OrbitalBasis,
                 basis_imp: OrbitalBasis) -> None:
        self.model = model
        nb, ni = model.bath.count, model.impurity.count
        self.space_bath = FockSpace(BATH, nb, basis_bath.size)
        self.space_imp = FockSpace(IMPURITY, ni, basis_imp.size)
        self.bath = _make_sector(self.space_bath, basis_bath, model.bath.mass,
                                 model.bath.trap_freq, model.bath.g_intra)
        self.imp = _make_sector(self.space_imp, basis_imp, model.impurity.mass,
                                model.impurity.trap_freq, model.impurity.g_intra)
        self.basis_bath = basis_bath
        self.basis_imp = basis_imp
        self.h_bi = self._build_interspecies() if (
            model.g_bi != 0.0 and nb > 0 and ni > 0) else None

    def _build_interspecies(self) -> sp.csr_matrix:
        if not (isinstance(self.bath, SparseSector) and isinstance(self.imp, SparseSector)):
            raise MemoryError(
                "interspecies coupling requires occupation-basis sectors "
                "(reduce the orbital counts)")
        model = self.model
        phi_b = self.basis_bath.functions
        phi_i = self.basis_imp.functions
        db, di = self.basis_bath.size, self.basis_imp.size
        prod_b = np.einsum("jp,jq->jpq", phi_b, phi_b).reshape(phi_b.shape[0], db * db)
        prod_i = np.einsum("jr,js->jrs", phi_i, phi_i).reshape(phi_i.shape[0], di * di)
        # K[(pq),(rs)] = g_bi * dx * sum_j (phi_b_p phi_b_q)(j) (phi_i_r phi_i_s)(j)
        kappa = model.g_bi * self.basis_bath.grid.dx * (prod_b.T @ prod_i)
        total = None
        for pq in range(db * db):
            p, q = divmod(pq, db)
            if q < p:
                continue
            eb = self.bath.transition(p, q)
            for rs in range(di * di):
                r, s_ = divmod(rs, di)
                if s_ < r:
                    continue
                kval = kappa[pq, rs]
                if kval == 0.0:
                    continue
                ei = self.imp.transition(r, s_)
                weight = kval * (2.0 - (p == q)) * (2.0 - (r == s_)) * 0.5
                # (E_pq + E_qp) x (E_rs + E_sr) built from the upper triangles;
                # hermiticity of the density operators gives the 0.5 weights
                block = sp.kron(eb + eb.T, ei + ei.T) * weight
                total = block if total is None else total + block
        if total is None:
            dim = self.space_bath.dim * self.space_imp.dim
            return sp.csr_matrix((dim, dim))
        return total.tocsr()

    # -- time-dependent pieces ---------------------------------------------

    def drive_coefficient(self, t: float) -> float:
        sp_ = self.model.impurity
        a = self.model.driving.offset(t)
        return -sp_.mass * sp_.trap_freq**2 * a

    def drive_scalar(self, t: float) -> float:
        sp_ = self.model.impurity
        a = self.model.driving.offset(t)
        return 0.5 * sp_.mass * sp_.trap_freq**2 * a**2 * sp_.count

    def apply(self, theta: np.ndarray, t: float) -> np.ndarray:
        f = self.drive_coefficient(t)
        out = self.bath.apply(theta, 0.0, axis=0)
        out += self.imp.apply(theta, f, axis=1)
        out += self.drive_scalar(t) * theta
        if self.h_bi is not None:
            out += (self.h_bi @ theta.reshape(-1)).reshape(theta.shape)
        return out

    def prepared(self, t: float):
        """Fixed-time closure over flattened vectors (for Krylov loops)."""
        shape = (self.space_bath.dim, self.space_imp.dim)

        def apply_flat(vec: np.ndarray) -> np.ndarray:
            return self.apply(vec.reshape(shape), t).ravel()

        return apply_flat

    def expectation(self, state: CIState, t: float) -> float:
        return float(np.real(np.vdot(state.tensor, self.apply(state.tensor, t))))

    def energy_terms(self, state: CIState, t: float) -> dict[str, float]:
        """bath / imp / inter split; imp includes the instantaneous drive terms."""
        theta = state.tensor
        e_bath = float(np.real(np.vdot(theta, self.bath.apply(theta, 0.0, axis=0))))
        f = self.drive_coefficient(t)
        e_imp = float(np.real(np.vdot(theta, self.imp.apply(theta, f, axis=1))))
        e_imp += self.drive_scalar(t)
        e_inter = 0.0
        if self.h_bi is not None:
            e_inter = float(np.real(np.vdot(
                theta.reshape(-1), self.h_bi @ theta.reshape(-1))))
        return {"bath": e_bath, "imp": e_imp, "inter": e_inter,
                "total": e_bath + e_imp + e_inter}

    def make_state(self, tensor: np.ndarray, t: float) -> CIState:
        return CIState(tensor, t, self.basis_bath, self.basis_imp,
                       self.space_bath, self.space_imp)


def build_hamiltonian(model: MixtureModel, basis_bath: OrbitalBasis,
                      basis_imp: OrbitalBasis) -> CIHamiltonian:
    return CIHamiltonian(model, basis_bath, basis_imp)


# ---------------------------------------------------------------------------
# ground state
# ---------------------------------------------------------------------------

def _state_parities(ham: CIHamiltonian) -> np.ndarray | None:
    pb = ham.basis_bath.parities()
    pi = ham.basis_imp.parities()
    if pb is None or pi is None:
        return None
    odd_b = (ham.space_bath.occupations[:, pb < 0].sum(axis=1)) % 2
    odd_i = (ham.space_imp.occupations[:, pi < 0].sum(axis=1)) % 2
    sign_b = 1.0 - 2.0 * odd_b
    sign_i = 1.0 - 2.0 * odd_i
    return np.outer(sign_b, sign_i)


def ci_ground_state(model: MixtureModel, basis_bath: OrbitalBasis,
                    basis_imp: OrbitalBasis, tolerance: float = 1e-10,
                    hamiltonian: CIHamiltonian | None = None) -> CIState:
    """Lowest eigenvector of the static Hamiltonian (driving inactive).

    Restarted Lanczos on the operator action; accidental degeneracies are
    resolved toward even parity.  The residual ||H psi - E psi|| must reach
    ``tolerance``.
    """
    ham = hamiltonian if hamiltonian is not None else CIHamiltonian(
        model, basis_bath, basis_imp)
    if ham.model.driving.is_active(0.0) and ham.model.driving.offset(0.0) != 0.0:
        raise ValueError("ground state is defined for an undisplaced trap")
    dim = ham.space_bath.dim * ham.space_imp.dim
    apply_flat = ham.prepared(t=0.0) if ham.model.driving.mode == "none" else \
        ham.prepared(t=-1.0)
    # at t <= 0 the displacement is zero in every mode, so this is the static H

    if dim == 1:
        tensor = np.ones((1, 1), dtype=complex)
        return ham.make_state(tensor, 0.0)

    op = LinearOperator((dim, dim), matvec=apply_flat, dtype=float)
    v0 = np.zeros(dim)
    v0[ham.space_imp.dim * (ham.space_bath.dim - 1) + ham.space_imp.dim - 1] = 1.0
    k = 2 if dim >= 3 else 1
    try:
        vals, vecs = eigsh(op, k=k, which="SA", v0=v0,
                           tol=min(tolerance, 1e-10), maxiter=max(4000, 40 * dim))
    except (ArpackError, ArpackNoConvergence) as exc:
        raise ConvergenceError(f"ci ground-state iteration failed: {exc}") from exc
    vec = vecs[:, 0]
    if k == 2 and vals[1] - vals[0] < 1e-10 * max(1.0, abs(vals[0])):
        parities = _state_parities(ham)
        if parities is not None:
            flat = parities.ravel()
            cands = [vecs[:, 0], vecs[:, 1]]
            scores = [float(np.dot(c**2, flat)) for c in cands]
            vec = cands[int(np.argmax(scores))]
    resid = np.linalg.norm(apply_flat(vec) - float(np.dot(vec, apply_flat(vec))) * vec)
    if resid > max(tolerance * 10, 1e-8):
        raise ConvergenceError(f"ci ground-state residual {resid:.2e}")
    tensor = vec.reshape(ham.space_bath.dim, ham.space_imp.dim).astype(complex)
    tensor /= np.linalg.norm(tensor)
    # deterministic global sign
    lead = np.argmax(np.abs(tensor))
    if np.real(tensor.ravel()[lead]) < 0:
        tensor = -tensor
    return ham.make_state(tensor, 0.0)


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------

def _lanczos_expm_step(apply_flat, vec: np.ndarray, dt: float, tol: float,
                       m_max: int) -> np.ndarray | None:
    """exp(-i H dt) vec by Lanczos; None if m_max is hit before convergence."""
    beta0 = np.linalg.norm(vec)
    basis = np.empty((m_max, vec.size), dtype=complex)
    basis[0] = vec / beta0
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max - 1)
    m_used = 0
    converged = False
    for k in range(m_max):
        hv = apply_flat(basis[k])
        alpha[k] = float(np.real(np.vdot(basis[k], hv)))
        hv -= alpha[k] * basis[k]
        if k:
            hv -= beta[k - 1] * basis[k - 1]
        bnorm = float(np.linalg.norm(hv))
        m_used = k + 1
        if k >= 2 or bnorm < 1e-14:
            evals, evecs = eigh_tridiagonal(alpha[:m_used], beta[:m_used - 1])
            small = evecs @ (np.exp(-1j * evals * dt / HBAR) * evecs[0, :])
            if bnorm * abs(small[-1]) < tol or bnorm < 1e-14:
                converged = True
                break
        if k + 1 < m_max:
            beta[k] = bnorm
            basis[k + 1] = hv / bnorm
    if not converged:
        return None
    evals, evecs = eigh_tridiagonal(alpha[:m_used], beta[:m_used - 1])
    small = evecs @ (np.exp(-1j * evals * dt / HBAR) * evecs[0, :])
    return beta0 * (small @ basis[:m_used])


def ci_propagate(state: CIState, model: MixtureModel, t0: float, t1: float,
                 dt: float, krylov_tol: float = 1e-10, m_max: int = 48,
                 record_every: int | None = None, observer=None,
                 hamiltonian: CIHamiltonian | None = None) -> list[CIState]:
    """Midpoint-Hamiltonian short-time stepping with Krylov exponentials.

    Each step applies exp(-i H(t_mid) dt); a step whose Krylov iteration
    fails to converge within ``m_max`` is retried with halved dt down to a
    floor of dt/2^12 before giving up.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    ham = hamiltonian if hamiltonian is not None else CIHamiltonian(
        model, state.basis_bath, state.basis_imp)
    n_steps = int(round((t1 - t0) / dt))
    if abs(n_steps * dt - (t1 - t0)) > 1e-9 * max(1.0, abs(t1 - t0)):
        raise ValueError("(t1 - t0) must be an integer number of dt steps")
    shape = (ham.space_bath.dim, ham.space_imp.dim)
    vec = state.tensor.astype(complex).ravel()
    dt_floor = dt / 2**12
    records: list[CIState] = []

    def emit(t: float) -> None:
        snap = ham.make_state(vec.reshape(shape).copy(), t)
        if observer is not None:
            observer(snap)
        else:
            records.append(snap)

    def advance(t_start: float, span: float) -> None:
        nonlocal vec
        if span < dt_floor:
            raise StepSizeError(
                f"Krylov step at t={t_start:.4f} failed above the dt floor")
        apply_flat = ham.prepared(t_start + 0.5 * span)
        result = _lanczos_expm_step(apply_flat, vec, span, krylov_tol, m_max)
        if result is None:
            advance(t_start, 0.5 * span)
            advance(t_start + 0.5 * span, 0.5 * span)
        else:
            vec = result

    for step in range(n_steps):
        advance(t0 + step * dt, dt)
        if record_every is not None and (step + 1) % record_every == 0:
            emit(t0 + (step + 1) * dt)

    final = ham.make_state(vec.reshape(shape), t0 + n_steps * dt)
    if observer is not None:
        return [final]
    if not records or records[-1].t < final.t - 1e-12:
        records.append(final)
    return records
