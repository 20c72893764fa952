"""Coupled mean-field (product-state) dynamics of the bath/impurity mixture.

The two condensate fields obey

    i d/dt psi_B = [T + V_B + g_BB (N_B-1)|psi_B|^2 + g_BI N_I |psi_I|^2] psi_B
    i d/dt psi_I = [T + V_I(t) + g_II (N_I-1)|psi_I|^2 + g_BI N_B |psi_B|^2] psi_I

with each field normalized to one and densities rho = N |psi|^2.  The
intraspecies factor (N-1) is exact for a product permanent and matters for
two impurities.  Propagation is Strang splitting: half potential step at the
midpoint time, full spectral kinetic step, half potential step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import grid as gridops
from .errors import ConvergenceError, StepSizeError
from .model import BATH, HBAR, IMPURITY, GridSpec, MixtureModel, trap_potential

#: per-step norm drift that triggers step rejection
NORM_DRIFT_LIMIT = 1e-10


@dataclass
class MFState:
    """Normalized condensate fields on the grid nodes at time t."""

    psi_bath: np.ndarray
    psi_imp: np.ndarray
    t: float
    grid: GridSpec

    def field(self, label: str) -> np.ndarray:
        return self.psi_bath if label == BATH else self.psi_imp

    def density(self, label: str, model: MixtureModel) -> np.ndarray:
        return model.species(label).count * np.abs(self.field(label)) ** 2

    def norm_squared(self, label: str) -> float:
        return gridops.norm_squared(self.grid, self.field(label))

    def copy(self) -> MFState:
        return MFState(self.psi_bath.copy(), self.psi_imp.copy(), self.t, self.grid)


def _interaction_potentials(model: MixtureModel, rho_b: np.ndarray,
                            rho_i: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    nb, ni = model.bath.count, model.impurity.count
    vb = model.bath.g_intra * (nb - 1) * rho_b + model.g_bi * ni * rho_i
    vi = model.impurity.g_intra * (ni - 1) * rho_i + model.g_bi * nb * rho_b
    return vb, vi


def mf_ground_state(model: MixtureModel, tolerance: float = 1e-10,
                    tau: float = 0.02, max_steps: int = 400_000) -> MFState:
    """Imaginary-time relaxation to a stationary point of the coupled equations.

    Driving is ignored (the relaxed state is the t = 0 ground state, where the
    trap displacement vanishes).  Convergence is the max-norm change of both
    fields per unit imaginary time dropping below ``tolerance``.
    """
    g = model.grid
    x = g.nodes()
    lam_b = gridops.kinetic_eigenvalues(g, model.bath.mass)
    lam_i = gridops.kinetic_eigenvalues(g, model.impurity.mass)
    kin_b = np.exp(-lam_b * tau / HBAR)
    kin_i = np.exp(-lam_i * tau / HBAR)
    vtrap_b = 0.5 * model.bath.mass * model.bath.trap_freq**2 * x**2
    vtrap_i = 0.5 * model.impurity.mass * model.impurity.trap_freq**2 * x**2

    width = max(model.bath.trap_freq, 0.05)
    psi_b = np.exp(-0.5 * model.bath.mass * width * x**2)
    psi_b /= np.sqrt(gridops.norm_squared(g, psi_b))
    psi_i = psi_b.copy()

    for _ in range(max_steps):
        rho_b, rho_i = np.abs(psi_b) ** 2, np.abs(psi_i) ** 2
        vint_b, vint_i = _interaction_potentials(model, rho_b, rho_i)
        vb = vtrap_b + vint_b
        vi = vtrap_i + vint_i
        new_b = np.exp(-0.5 * vb * tau) * psi_b
        new_b = gridops.sine_transform(kin_b * gridops.sine_transform(new_b))
        new_b = np.exp(-0.5 * vb * tau) * new_b
        new_i = np.exp(-0.5 * vi * tau) * psi_i
        new_i = gridops.sine_transform(kin_i * gridops.sine_transform(new_i))
        new_i = np.exp(-0.5 * vi * tau) * new_i
        new_b /= np.sqrt(gridops.norm_squared(g, new_b))
        new_i /= np.sqrt(gridops.norm_squared(g, new_i))
        delta = max(np.max(np.abs(new_b - psi_b)), np.max(np.abs(new_i - psi_i))) / tau
        psi_b, psi_i = new_b, new_i
        if delta < tolerance:
            return MFState(psi_b.astype(complex), psi_i.astype(complex), 0.0, g)
    raise ConvergenceError(
        f"imaginary-time relaxation stalled (last delta {delta:.2e}, "
        f"tolerance {tolerance:.2e})"
    )


def mf_propagate(state: MFState, model: MixtureModel, t0: float, t1: float,
                 dt: float, record_every: int | None = None,
                 observer: Callable[[MFState], None] | None = None) -> list[MFState]:
    """Real-time Strang propagation from t0 to t1.

    Returns recorded states every ``record_every`` steps plus the final state;
    with an ``observer`` callback, recorded states are passed to it instead of
    being accumulated (the returned list then holds only the final state).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = state.grid
    x = g.nodes()
    n_steps = int(round((t1 - t0) / dt))
    if abs(n_steps * dt - (t1 - t0)) > 1e-9 * max(1.0, abs(t1 - t0)):
        raise ValueError("(t1 - t0) must be an integer number of dt steps")
    lam_b = gridops.kinetic_eigenvalues(g, model.bath.mass)
    lam_i = gridops.kinetic_eigenvalues(g, model.impurity.mass)
    kin_b = np.exp(-1j * lam_b * dt / HBAR)
    kin_i = np.exp(-1j * lam_i * dt / HBAR)

    psi_b = state.psi_bath.astype(complex)
    psi_i = state.psi_imp.astype(complex)
    records: list[MFState] = []

    def emit(t: float) -> None:
        snap = MFState(psi_b.copy(), psi_i.copy(), t, g)
        if observer is not None:
            observer(snap)
        else:
            records.append(snap)

    for step in range(n_steps):
        t_mid = t0 + (step + 0.5) * dt
        vb_tr = trap_potential(model, BATH, x, t_mid)
        vi_tr = trap_potential(model, IMPURITY, x, t_mid)
        vint_b, vint_i = _interaction_potentials(
            model, np.abs(psi_b) ** 2, np.abs(psi_i) ** 2)
        psi_b = np.exp(-0.5j * (vb_tr + vint_b) * dt / HBAR) * psi_b
        psi_i = np.exp(-0.5j * (vi_tr + vint_i) * dt / HBAR) * psi_i
        psi_b = gridops.sine_transform(kin_b * gridops.sine_transform(psi_b))
        psi_i = gridops.sine_transform(kin_i * gridops.sine_transform(psi_i))
        vint_b, vint_i = _interaction_potentials(
            model, np.abs(psi_b) ** 2, np.abs(psi_i) ** 2)
        psi_b = np.exp(-0.5j * (vb_tr + vint_b) * dt / HBAR) * psi_b
        psi_i = np.exp(-0.5j * (vi_tr + vint_i) * dt / HBAR) * psi_i

        drift = max(abs(gridops.norm_squared(g, psi_b) - 1.0),
                    abs(gridops.norm_squared(g, psi_i) - 1.0))
        if drift > NORM_DRIFT_LIMIT:
            raise StepSizeError(
                f"norm drift {drift:.2e} at t={t0 + (step + 1) * dt:.4f} "
                f"exceeds {NORM_DRIFT_LIMIT:.0e}; reduce dt"
            )
        if record_every is not None and (step + 1) % record_every == 0:
            emit(t0 + (step + 1) * dt)

    final = MFState(psi_b, psi_i, t0 + n_steps * dt, g)
    if observer is not None:
        return [final]
    if not records or records[-1].t < final.t - 1e-12:
        records.append(final)
    return records


def mf_energy_terms(state: MFState, model: MixtureModel, t: float) -> dict[str, float]:
    """Mean-field energy functional split into per-term contributions.

    Keys: kin_<s>, pot_<s>, intra_<s> for s in {bath, imp}, inter, total.
    """
    g = state.grid
    x = g.nodes()
    dx = g.dx
    out: dict[str, float] = {}
    densities = {}
    for label, short in ((BATH, "bath"), (IMPURITY, "imp")):
        sp = model.species(label)
        psi = state.field(label)
        tpsi = gridops.apply_kinetic(g, sp.mass, psi)
        kin = sp.count * float(np.real(np.vdot(psi, tpsi)) * dx)
        rho = np.abs(psi) ** 2
        pot = sp.count * float(np.sum(trap_potential(model, label, x, t) * rho) * dx)
        intra = 0.5 * sp.g_intra * sp.count * (sp.count - 1) * float(np.sum(rho**2) * dx)
        out[f"kin_{short}"] = kin
        out[f"pot_{short}"] = pot
        out[f"intra_{short}"] = intra
        densities[short] = rho
    out["inter"] = (model.g_bi * model.bath.count * model.impurity.count
                    * float(np.sum(densities["bath"] * densities["imp"]) * dx))
    out["total"] = (out["kin_bath"] + out["pot_bath"] + out["intra_bath"]
                    + out["kin_imp"] + out["pot_imp"] + out["intra_imp"]
                    + out["inter"])
    return out
