"""Truncated two-mode Fock space: operators, states and index bookkeeping.

The composite Hilbert space is cavity (photon) tensor mechanical (phonon),
with the row-major basis convention

    i = n_cavity * cutoff_mech + n_mech

used everywhere in the package. Operators are dense complex matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

MODES = ("cavity", "mech")


def destroy(cutoff: int) -> np.ndarray:
    """Single-mode annihilation operator, <n-1|a|n> = sqrt(n)."""
    return np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), k=1).astype(complex)


@dataclass(frozen=True)
class FockSpace:
    """Bipartite truncated Fock space for one cavity and one mechanical mode."""

    cutoff_cavity: int
    cutoff_mech: int

    def __post_init__(self):
        if self.cutoff_cavity < 2 or self.cutoff_mech < 2:
            raise ValueError("Fock cutoffs must be at least 2")

    @property
    def dim(self) -> int:
        return self.cutoff_cavity * self.cutoff_mech

    def cutoff(self, mode: str) -> int:
        if mode == "cavity":
            return self.cutoff_cavity
        if mode == "mech":
            return self.cutoff_mech
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")

    def basis_index(self, n_cavity: int, n_mech: int) -> int:
        if not (0 <= n_cavity < self.cutoff_cavity and 0 <= n_mech < self.cutoff_mech):
            raise ValueError(
                f"basis state ({n_cavity},{n_mech}) outside cutoffs "
                f"({self.cutoff_cavity},{self.cutoff_mech})"
            )
        return n_cavity * self.cutoff_mech + n_mech

    # Per-basis-state occupation numbers, used by the fast integrator path.
    @cached_property
    def cavity_levels(self) -> np.ndarray:
        return np.repeat(np.arange(self.cutoff_cavity), self.cutoff_mech)

    @cached_property
    def mech_levels(self) -> np.ndarray:
        return np.tile(np.arange(self.cutoff_mech), self.cutoff_cavity)


def annihilation(space: FockSpace, mode: str) -> np.ndarray:
    """Annihilation operator of one mode embedded in the composite space."""
    if mode == "cavity":
        return np.kron(destroy(space.cutoff_cavity), np.eye(space.cutoff_mech))
    if mode == "mech":
        return np.kron(np.eye(space.cutoff_cavity), destroy(space.cutoff_mech))
    raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")


def number_operator(space: FockSpace, mode: str) -> np.ndarray:
    a = annihilation(space, mode)
    return a.conj().T @ a


def fock_projector(space: FockSpace, mode: str, n: int) -> np.ndarray:
    """Projector |n><n| of one mode, identity on the other."""
    cutoff = space.cutoff(mode)
    if not 0 <= n < cutoff:
        raise ValueError(f"Fock level {n} outside cutoff {cutoff} for mode {mode!r}")
    ket = np.zeros(cutoff)
    ket[n] = 1.0
    proj = np.outer(ket, ket).astype(complex)
    if mode == "cavity":
        return np.kron(proj, np.eye(space.cutoff_mech))
    return np.kron(np.eye(space.cutoff_cavity), proj)


def fock_ket(space: FockSpace, n_cavity: int, n_mech: int) -> np.ndarray:
    ket = np.zeros(space.dim, dtype=complex)
    ket[space.basis_index(n_cavity, n_mech)] = 1.0
    return ket


def ket_to_density(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    norm = np.linalg.norm(psi)
    if norm == 0:
        raise ValueError("cannot normalize the zero vector")
    psi = psi / norm
    return np.outer(psi, psi.conj())


def expectation(op: np.ndarray, rho: np.ndarray, imag_tol: float = 1e-9):
    """Tr[op rho] for a Hermitian observable, returned as a real number.

    Accepts a stacked rho of shape (..., d, d); returns matching real values.
    """
    op = np.asarray(op)
    rho = np.asarray(rho)
    if op.shape[-1] != rho.shape[-1] or rho.shape[-1] != rho.shape[-2]:
        raise ValueError(f"dimension mismatch: op {op.shape} vs rho {rho.shape}")
    val = np.einsum("ij,...ji->...", op, rho)
    if np.any(np.abs(val.imag) > imag_tol):
        raise AssertionError(
            f"expectation has imaginary part {np.max(np.abs(val.imag)):.3e} > {imag_tol}"
        )
    return val.real if val.ndim else float(val.real)


def partial_transpose(space: FockSpace, rho: np.ndarray, mode: str = "cavity") -> np.ndarray:
    """Partial transpose over one subsystem. Accepts stacked rho (..., d, d)."""
    rho = np.asarray(rho)
    if rho.shape[-1] != space.dim or rho.shape[-2] != space.dim:
        raise ValueError(f"rho shape {rho.shape} does not match space dim {space.dim}")
    nc, nm = space.cutoff_cavity, space.cutoff_mech
    batch = rho.shape[:-2]
    r4 = rho.reshape(batch + (nc, nm, nc, nm))
    k = len(batch)
    if mode == "cavity":
        r4 = r4.swapaxes(k, k + 2)
    elif mode == "mech":
        r4 = r4.swapaxes(k + 1, k + 3)
    else:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    return r4.reshape(batch + (space.dim, space.dim))


def mode_populations(space: FockSpace, rho: np.ndarray, mode: str) -> np.ndarray:
    """Diagonal Fock populations of one mode, shape (..., cutoff). Batch-aware."""
    rho = np.asarray(rho)
    if rho.shape[-1] != space.dim or rho.shape[-2] != space.dim:
        raise ValueError(f"rho shape {rho.shape} does not match space dim {space.dim}")
    diag = np.einsum("...ii->...i", rho).real
    d2 = diag.reshape(diag.shape[:-1] + (space.cutoff_cavity, space.cutoff_mech))
    if mode == "cavity":
        return d2.sum(axis=-1)
    if mode == "mech":
        return d2.sum(axis=-2)
    raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")


def check_density_matrix(rho: np.ndarray, atol: float = 1e-8) -> None:
    """Validate hermiticity, unit trace and positivity up to tolerance."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density matrix must be square, got shape {rho.shape}")
    if not np.allclose(rho, rho.conj().T, atol=atol):
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(rho)
    if abs(tr - 1.0) > atol:
        raise ValueError(f"density matrix trace {tr} differs from 1")
    if np.linalg.eigvalsh(rho).min() < -atol:
        raise ValueError("density matrix has a negative eigenvalue beyond tolerance")
