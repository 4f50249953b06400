"""Conditioned dynamics under continuous cavity photon-number measurement.

Two bosonic modes (cavity photon, mechanical phonon), rates in units of
omega_m, time in units of 1/omega_m, hbar = 1. The conditioned state follows
the Ito stochastic master equation

    drho = -i[H, rho] dt + kappa D[a] rho dt + gamma D[b] rho dt
           + sum_n D[C_n] rho dt + sum_n M[C_n] rho dW_n,    C_n = sqrt(eta) P_n,

where P_n projects the cavity onto Fock level n, D is the Lindblad
dissipator and M the measurement superoperator

    D[A] rho = A rho A+ - (A+ A rho + rho A+ A) / 2
    M[A] rho = A rho + rho A+ - Tr[(A + A+) rho] rho.

Integration is Euler-Maruyama with n_substeps inner steps per control step.
Two safeguards run inside each substep: an optional Milstein compensator
(the projector noise is commutative, so no Levy areas are required) and a
positivity floor, both needed because the bare Euler increment leaves the
state cone by O(dW^2) at the default step sizes. Each substep ends with
re-symmetrization and trace renormalization; a trace deviation beyond 10%
raises IntegrationBlowupError.

Deterministic mode (rng=None) drops every noise term, which reduces the
update to the unconditional Lindblad-plus-measurement-dephasing equation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from optomech.errors import IntegrationBlowupError
from optomech.fock import FockSpace, annihilation, number_operator

ACTION_BOUND = 5.0


@dataclass(frozen=True)
class PhysicsParams:
    """Rates and integration controls, all in units of omega_m."""

    omega_m: float = 1.0
    kappa: float = 0.01
    gamma: float | None = None  # None resolves to 0.01 * kappa
    g0: float = 0.2
    eta: float = 1.0
    dt: float = 0.01
    n_substeps: int = 10
    milstein: bool = True

    def __post_init__(self):
        if self.gamma is None:
            object.__setattr__(self, "gamma", 0.01 * self.kappa)
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.kappa < 0 or self.gamma < 0:
            raise ValueError("decay rates must be non-negative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_substeps < 1:
            raise ValueError("n_substeps must be at least 1")

    @classmethod
    def linear(cls, **kw) -> "PhysicsParams":
        kw.setdefault("kappa", 0.01)
        kw.setdefault("eta", 1.0)
        return cls(**kw)

    @classmethod
    def nonlinear(cls, **kw) -> "PhysicsParams":
        kw.setdefault("kappa", 0.1)
        kw.setdefault("g0", 0.2)
        kw.setdefault("eta", 0.1)
        return cls(**kw)


def linear_hamiltonian_parts(space: FockSpace, params: PhysicsParams):
    """Static part and coupling part of the beam-splitter Hamiltonian.

    H(g) = omega_m (da+ da + b+ b) + g (da+ b + b+ da), with da the cavity
    fluctuation operator in the linearized regime.
    """
    a = annihilation(space, "cavity")
    b = annihilation(space, "mech")
    h0 = params.omega_m * (number_operator(space, "cavity") + number_operator(space, "mech"))
    hc = a.conj().T @ b + b.conj().T @ a
    return h0, hc


def linear_hamiltonian(space: FockSpace, params: PhysicsParams, g: float) -> np.ndarray:
    h0, hc = linear_hamiltonian_parts(space, params)
    return h0 + g * hc


def nonlinear_hamiltonian_parts(space: FockSpace, params: PhysicsParams):
    """Pieces of H(delta, alpha) = -delta a+a + omega_m b+b + g0 (b+ + b) a+a + alpha (a+ + a).

    Returns (n_a, h_static, h_drive) so that H = h_static - delta n_a + alpha h_drive.
    """
    a = annihilation(space, "cavity")
    b = annihilation(space, "mech")
    n_a = number_operator(space, "cavity")
    h_static = params.omega_m * number_operator(space, "mech") + params.g0 * (
        (b.conj().T + b) @ n_a
    )
    h_drive = a.conj().T + a
    return n_a, h_static, h_drive


def nonlinear_hamiltonian(
    space: FockSpace, params: PhysicsParams, delta: float, alpha: float
) -> np.ndarray:
    n_a, h_static, h_drive = nonlinear_hamiltonian_parts(space, params)
    return h_static - delta * n_a + alpha * h_drive


def lindblad_dissipator(a_op: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """D[A] rho = A rho A+ - (A+A rho + rho A+A) / 2. Batch-aware in rho."""
    ad = a_op.conj().T
    ada = ad @ a_op
    return a_op @ rho @ ad - 0.5 * (ada @ rho + rho @ ada)


def measurement_superop(a_op: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """M[A] rho = A rho + rho A+ - Tr[(A + A+) rho] rho. Batch-aware in rho."""
    ad = a_op.conj().T
    mean = np.einsum("ij,...ji->...", a_op + ad, rho)
    return a_op @ rho + rho @ ad - mean[..., None, None] * rho


class SmeStepper:
    """Vectorized Euler-Maruyama stepper over stacked states (B, d, d).

    Exploits the diagonal structure of the cavity projectors and the
    shift structure of the loss operators, so one substep costs two dense
    matmuls (the commutator) plus elementwise work.
    """

    def __init__(self, space: FockSpace, params: PhysicsParams):
        self.space = space
        self.params = params
        nc, nm = space.cutoff_cavity, space.cutoff_mech
        cav = space.cavity_levels
        mech = space.mech_levels
        self.cav_levels = cav
        # same-cavity-level mask: sum_n P_n rho P_n = rho o S
        self.same_cav = (cav[:, None] == cav[None, :]).astype(float)
        self.n_cav = cav.astype(float)
        self.n_mech = mech.astype(float)
        # sqrt weights for the shift dissipators a rho a+ and b rho b+
        ws = np.sqrt(np.arange(1.0, nc))
        self.w_cav = ws[:, None] * ws[None, :]
        wm = np.sqrt(np.arange(1.0, nm))
        self.w_mech = wm[:, None] * wm[None, :]
        self._anti_cav = 0.5 * (self.n_cav[:, None] + self.n_cav[None, :])
        self._anti_mech = 0.5 * (self.n_mech[:, None] + self.n_mech[None, :])
        self._jitter = 1e-12 * np.eye(space.dim)

    def cavity_probs(self, rho: np.ndarray) -> np.ndarray:
        diag = np.einsum("...ii->...i", rho).real
        return diag.reshape(diag.shape[:-1] + (self.space.cutoff_cavity, -1)).sum(-1)

    def _loss_terms(self, rho: np.ndarray) -> np.ndarray:
        p = self.params
        nc, nm = self.space.cutoff_cavity, self.space.cutoff_mech
        b = rho.shape[0]
        out = rho * (-p.kappa * self._anti_cav - p.gamma * self._anti_mech)
        r4 = rho.reshape(b, nc, nm, nc, nm)
        o4 = out.reshape(b, nc, nm, nc, nm)
        if p.kappa:
            o4[:, : nc - 1, :, : nc - 1, :] += (
                p.kappa * self.w_cav[None, :, None, :, None] * r4[:, 1:, :, 1:, :]
            )
        if p.gamma:
            o4[:, :, : nm - 1, :, : nm - 1] += (
                p.gamma * self.w_mech[None, None, :, None, :] * r4[:, :, 1:, :, 1:]
            )
        return out

    def drift(self, rho: np.ndarray, h: np.ndarray) -> np.ndarray:
        out = -1j * (h @ rho - rho @ h)
        out += self._loss_terms(rho)
        if self.params.eta:
            out += self.params.eta * (rho * self.same_cav - rho)
        return out

    def _noise(self, rho, probs, dw):
        wi = dw[:, self.cav_levels]
        pbar = np.einsum("bn,bn->b", probs, dw)
        term = (wi[:, :, None] + wi[:, None, :] - 2.0 * pbar[:, None, None]) * rho
        return np.sqrt(self.params.eta) * term

    def _milstein(self, rho, probs, dw, dt_s):
        # 0.5 * sum_nm Db_m[b_n] (dW_n dW_m - delta_nm dt) for b_n = M[C_n] rho,
        # reduced to elementwise masks because the projectors are orthogonal.
        g = dw * dw - dt_s
        pbar = np.einsum("bn,bn->b", probs, dw)
        q = pbar[:, None] * dw - dt_s * probs
        gi = g[:, self.cav_levels]
        qi = q[:, self.cav_levels]
        wi = dw[:, self.cav_levels]
        elem = (
            gi[:, :, None]
            + gi[:, None, :]
            - 4.0 * (qi[:, :, None] + qi[:, None, :])
            + 2.0 * wi[:, :, None] * wi[:, None, :]
            - 2.0 * dt_s * self.same_cav
        )
        scal = -4.0 * np.einsum("bn,bn->b", g, probs) + 8.0 * pbar**2 - 8.0 * dt_s * (probs**2).sum(1)
        return 0.5 * self.params.eta * (elem * rho + scal[:, None, None] * rho)

    def _cleanup(self, rho: np.ndarray) -> np.ndarray:
        # Mandated per-substep hygiene: hermitize, renormalize trace, keep the
        # state on the PSD cone. A renormalization factor off by more than 10%
        # (trace drift or clipped negative mass) signals a blown-up step.
        rho = 0.5 * (rho + rho.conj().swapaxes(-1, -2))
        tr = np.einsum("...ii->...", rho).real
        if not np.all(np.isfinite(rho)) or np.any(np.abs(tr - 1.0) > 0.1):
            raise IntegrationBlowupError(
                "trace renormalization factor deviates from 1 by more than 10%; "
                "the integration blew up, use a smaller dt or more substeps"
            )
        rho = rho / tr[..., None, None]
        try:
            np.linalg.cholesky(rho + self._jitter)
        except np.linalg.LinAlgError:
            w, v = np.linalg.eigh(rho)
            w = np.clip(w, 0.0, None)
            mass = w.sum(axis=-1)
            if np.any(np.abs(mass - 1.0) > 0.1):
                raise IntegrationBlowupError(
                    "positivity projection removed more than 10% of the trace; "
                    "the integration blew up, use a smaller dt or more substeps"
                )
            w /= mass[..., None]
            rho = np.einsum("...ik,...k,...jk->...ij", v, w, v.conj())
        return rho

    def step(
        self,
        rho: np.ndarray,
        h: np.ndarray,
        rng: np.random.Generator | None,
        dws: np.ndarray | None = None,
    ):
        """One control step of length dt; returns (rho', dW) with dW summed
        over substeps (shape (B, cutoff_cavity)), the same increments a
        photocurrent reading must consume. Pre-drawn substep increments can
        be injected through dws for tests."""
        p = self.params
        dt_s = p.dt / p.n_substeps
        b = rho.shape[0]
        nc = self.space.cutoff_cavity
        if dws is None and rng is not None and p.eta > 0:
            dws = rng.normal(0.0, np.sqrt(dt_s), size=(p.n_substeps, b, nc))
        for k in range(p.n_substeps):
            inc = dt_s * self.drift(rho, h)
            if dws is not None:
                probs = self.cavity_probs(rho)
                inc = inc + self._noise(rho, probs, dws[k])
                if p.milstein:
                    inc = inc + self._milstein(rho, probs, dws[k], dt_s)
            rho = self._cleanup(rho + inc)
        dw_total = dws.sum(axis=0) if dws is not None else np.zeros((b, nc))
        return rho, dw_total


@lru_cache(maxsize=64)
def _stepper(space: FockSpace, params: PhysicsParams) -> SmeStepper:
    return SmeStepper(space, params)


def sme_step(
    space: FockSpace,
    params: PhysicsParams,
    rho: np.ndarray,
    h: np.ndarray,
    rng: np.random.Generator | None = None,
):
    """Advance one control step of length params.dt.

    rho may be a single (d, d) state or a stack (B, d, d). Returns
    (rho', dW) where dW collects the Wiener increments per cavity Fock
    level, summed over substeps. rng=None integrates deterministically
    (unconditional equation).
    """
    rho = np.asarray(rho, dtype=complex)
    single = rho.ndim == 2
    if single:
        rho = rho[None]
    if rho.shape[-1] != space.dim:
        raise ValueError(f"rho dimension {rho.shape[-1]} does not match space dim {space.dim}")
    out, dw = _stepper(space, params).step(rho, np.asarray(h, dtype=complex), rng)
    if single:
        return out[0], dw[0]
    return out, dw


def run_trajectory(
    space: FockSpace,
    params: PhysicsParams,
    rho0: np.ndarray,
    hamiltonians,
    rng: np.random.Generator | int | None = None,
):
    """Integrate a single trajectory under a per-step Hamiltonian sequence.

    Returns (states, dws): states has length len(hamiltonians) + 1 and
    starts with rho0; dws holds the per-step summed Wiener increments.
    An empty Hamiltonian sequence returns the initial state only.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(rng))))
    rho = np.asarray(rho0, dtype=complex)
    states = [rho.copy()]
    dws = []
    for h in hamiltonians:
        rho, dw = sme_step(space, params, rho, h, rng)
        states.append(rho)
        dws.append(dw)
    return np.array(states), np.array(dws) if dws else np.zeros((0, space.cutoff_cavity))
