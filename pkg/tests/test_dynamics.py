import numpy as np
import pytest

from conftest import bell_density, random_density
from optomech.dynamics import (
    PhysicsParams,
    SmeStepper,
    linear_hamiltonian,
    lindblad_dissipator,
    measurement_superop,
    nonlinear_hamiltonian,
    run_trajectory,
    sme_step,
)
from optomech.errors import IntegrationBlowupError
from optomech.fock import (
    FockSpace,
    annihilation,
    fock_ket,
    fock_projector,
    ket_to_density,
    number_operator,
)


def lossless_params(**kw):
    return PhysicsParams.linear(kappa=0.0, gamma=0.0, eta=0.0, **kw)


class TestHamiltonians:
    def test_linear_diagonal(self, linear_space):
        h = linear_hamiltonian(linear_space, PhysicsParams.linear(), g=0.0)
        assert np.allclose(h, np.diag([0.0, 1.0, 1.0, 2.0]))

    def test_linear_coupling_element(self, linear_space):
        h = linear_hamiltonian(linear_space, PhysicsParams.linear(), g=1.0)
        i01 = linear_space.basis_index(0, 1)
        i10 = linear_space.basis_index(1, 0)
        assert h[i01, i10] == pytest.approx(1.0)
        assert np.allclose(h, h.conj().T)

    def test_nonlinear_elements(self):
        space = FockSpace(4, 4)
        params = PhysicsParams.nonlinear(g0=0.0)
        h = nonlinear_hamiltonian(space, params, delta=0.0, alpha=0.0)
        assert np.allclose(h, np.diag(params.omega_m * space.mech_levels))

        params = PhysicsParams.nonlinear(g0=0.2)
        h = nonlinear_hamiltonian(space, params, delta=0.0, alpha=0.0)
        assert h[space.basis_index(1, 0), space.basis_index(1, 1)] == pytest.approx(0.2)

        h = nonlinear_hamiltonian(space, params, delta=0.0, alpha=0.7)
        assert h[space.basis_index(0, 0), space.basis_index(1, 0)] == pytest.approx(0.7)

        h = nonlinear_hamiltonian(space, params, delta=1.5, alpha=0.0)
        assert h[space.basis_index(2, 0), space.basis_index(2, 0)] == pytest.approx(-3.0)


class TestSuperoperators:
    def test_dissipator_vacuum(self, linear_space):
        a = annihilation(linear_space, "cavity")
        vac = ket_to_density(fock_ket(linear_space, 0, 0))
        assert np.allclose(lindblad_dissipator(a, vac), 0.0)

    def test_dissipator_single_photon(self, linear_space):
        # D[a] |10><10| = |00><00| - |10><10|, derived by hand
        a = annihilation(linear_space, "cavity")
        rho = ket_to_density(fock_ket(linear_space, 1, 0))
        expected = ket_to_density(fock_ket(linear_space, 0, 0)) - rho
        assert np.allclose(lindblad_dissipator(a, rho), expected, atol=1e-14)

    def test_superoperators_trace_free(self):
        space = FockSpace(3, 3)
        rng = np.random.default_rng(3)
        a = annihilation(space, "cavity")
        p1 = fock_projector(space, "cavity", 1)
        for _ in range(10):
            rho = random_density(rng, space.dim)
            assert abs(np.trace(lindblad_dissipator(a, rho))) < 1e-12
            assert abs(np.trace(measurement_superop(np.sqrt(0.4) * p1, rho))) < 1e-12

    def test_measurement_superop_eigenstate_fixed_point(self, linear_space):
        rho = ket_to_density(fock_ket(linear_space, 1, 0))
        for n in range(2):
            c = np.sqrt(0.5) * fock_projector(linear_space, "cavity", n)
            assert np.allclose(measurement_superop(c, rho), 0.0, atol=1e-14)

    def test_measurement_superop_bell_oracle(self, linear_space):
        # Independent elementwise evaluation of M[sqrt(eta) P_1] on the Bell
        # state: with <P_1> = 1/2, M rho = P rho + rho P - rho, scaled sqrt(eta).
        eta = 0.36
        rho = bell_density(linear_space)
        p1 = fock_projector(linear_space, "cavity", 1)
        expected = np.zeros((4, 4), dtype=complex)
        for i in range(4):
            for j in range(4):
                acc = 0.0
                for k in range(4):
                    acc += p1[i, k] * rho[k, j] + rho[i, k] * p1[k, j]
                expected[i, j] = np.sqrt(eta) * (acc - 1.0 * rho[i, j])
        got = measurement_superop(np.sqrt(eta) * p1, rho)
        assert np.allclose(got, expected, atol=1e-14)


class TestStepperEquivalence:
    """The structured fast path must match the generic superoperator form."""

    def _naive_em_substep(self, space, params, rho, h, dw):
        a = annihilation(space, "cavity")
        b = annihilation(space, "mech")
        dt_s = params.dt / params.n_substeps
        drift = -1j * (h @ rho - rho @ h)
        drift += params.kappa * lindblad_dissipator(a, rho)
        drift += params.gamma * lindblad_dissipator(b, rho)
        out = rho + dt_s * drift
        for n in range(space.cutoff_cavity):
            c = np.sqrt(params.eta) * fock_projector(space, "cavity", n)
            out += dt_s * lindblad_dissipator(c, rho)
            out += dw[n] * measurement_superop(c, rho)
        out = 0.5 * (out + out.conj().T)
        return out / np.trace(out).real

    def test_fast_path_matches_naive(self):
        space = FockSpace(3, 4)
        params = PhysicsParams(kappa=0.3, gamma=0.05, eta=0.6, dt=0.01, n_substeps=1, milstein=False)
        stepper = SmeStepper(space, params)
        rng = np.random.default_rng(5)
        eye = np.eye(space.dim) / space.dim
        for _ in range(5):
            # keep the state well inside the cone so neither route clips
            rho = 0.5 * random_density(rng, space.dim) + 0.5 * eye
            h = random_density(rng, space.dim) * space.dim  # any Hermitian works
            dw = rng.normal(0.0, np.sqrt(params.dt), size=space.cutoff_cavity)
            expected = self._naive_em_substep(space, params, rho, h, dw)
            got, dw_out = stepper.step(rho[None].copy(), h, rng=None, dws=dw[None, None])
            assert np.allclose(got[0], expected, atol=1e-12)
            assert np.allclose(dw_out[0], dw)

    def test_milstein_matches_brute_force(self):
        # Brute-force Db_m[b_n] from the affine structure of M[C] rho:
        # Db_m[sigma] = sqrt(eta) (M_m sigma + sigma M_m - 2 Tr[M_m sigma] rho
        #                          - 2 Tr[M_m rho] sigma)
        space = FockSpace(3, 3)
        eta, dt_s = 0.7, 1e-3
        params = PhysicsParams(kappa=0.0, gamma=0.0, eta=eta, dt=dt_s, n_substeps=1)
        stepper = SmeStepper(space, params)
        rng = np.random.default_rng(9)
        masks = [fock_projector(space, "cavity", n) for n in range(3)]
        for _ in range(5):
            rho = random_density(rng, space.dim)
            dw = rng.normal(0.0, np.sqrt(dt_s), size=3)
            bs = [measurement_superop(np.sqrt(eta) * m, rho) for m in masks]
            ps = [np.trace(m @ rho).real for m in masks]
            expected = np.zeros_like(rho)
            for n in range(3):
                for m in range(3):
                    g = dw[n] * dw[m] - (dt_s if n == m else 0.0)
                    deriv = np.sqrt(eta) * (
                        masks[m] @ bs[n]
                        + bs[n] @ masks[m]
                        - 2.0 * np.trace(masks[m] @ bs[n]) * rho
                        - 2.0 * ps[m] * bs[n]
                    )
                    expected += 0.5 * g * deriv
            probs = stepper.cavity_probs(rho[None])
            got = stepper._milstein(rho[None], probs, dw[None], dt_s)[0]
            assert np.allclose(got, expected, atol=1e-13)


class TestOracles:
    def test_lossless_swap(self, linear_space):
        # <n_p>(t) = cos^2(G t) for the pure swap; one period is pi / G
        g = 1.0
        params = lossless_params(dt=0.001)
        h = linear_hamiltonian(linear_space, params, g)
        steps = int(round(np.pi / g / params.dt))
        rho0 = ket_to_density(fock_ket(linear_space, 1, 0))
        states, _ = run_trajectory(linear_space, params, rho0, [h] * steps)
        t = params.dt * np.arange(steps + 1)
        n_p = np.einsum("ij,tji->t", number_operator(linear_space, "cavity"), states).real
        assert np.max(np.abs(n_p - np.cos(g * t) ** 2)) < 1e-3

        # state fidelity with cos(Gt)|10> - i sin(Gt)|01> above 1 - 1e-4
        psi = (
            np.cos(g * t)[:, None] * fock_ket(linear_space, 1, 0)[None, :]
            - 1j * np.sin(g * t)[:, None] * fock_ket(linear_space, 0, 1)[None, :]
        )
        fid = np.einsum("ti,tij,tj->t", psi.conj(), states, psi).real
        assert fid.min() > 1 - 1e-4

    def test_damped_cavity_decay(self, linear_space):
        kappa = 0.1
        params = PhysicsParams.linear(kappa=kappa, gamma=0.0, eta=0.0, dt=0.01)
        h = linear_hamiltonian(linear_space, params, g=0.0)
        steps = 1000
        rho0 = ket_to_density(fock_ket(linear_space, 1, 0))
        states, _ = run_trajectory(linear_space, params, rho0, [h] * steps)
        t = params.dt * np.arange(steps + 1)
        n_p = np.einsum("ij,tji->t", number_operator(linear_space, "cavity"), states).real
        assert np.max(np.abs(n_p - np.exp(-kappa * t))) < 1e-4

    def test_deterministic_mode_matches_unconditional(self):
        # rng=None must integrate the unconditional Lindblad-plus-dephasing
        # equation, built here from the generic superoperators.
        space = FockSpace(3, 3)
        params = PhysicsParams(kappa=0.2, gamma=0.02, eta=0.5, dt=0.01, n_substeps=4)
        h = nonlinear_hamiltonian(space, PhysicsParams.nonlinear(), delta=0.8, alpha=1.1)
        a = annihilation(space, "cavity")
        b = annihilation(space, "mech")
        rng = np.random.default_rng(13)
        rho = 0.5 * random_density(rng, space.dim) + 0.5 * np.eye(space.dim) / space.dim
        ref = rho.copy()
        dt_s = params.dt / params.n_substeps
        for _ in range(3 * params.n_substeps):
            drift = -1j * (h @ ref - ref @ h)
            drift += params.kappa * lindblad_dissipator(a, ref)
            drift += params.gamma * lindblad_dissipator(b, ref)
            for n in range(space.cutoff_cavity):
                c = np.sqrt(params.eta) * fock_projector(space, "cavity", n)
                drift += lindblad_dissipator(c, ref)
            ref = ref + dt_s * drift
            ref = 0.5 * (ref + ref.conj().T)
            ref = ref / np.trace(ref).real
        got = rho.copy()
        for _ in range(3):
            got, _ = sme_step(space, params, got, h, rng=None)
        assert np.allclose(got, ref, atol=1e-12)
        assert abs(np.trace(got).real - 1.0) < 1e-10

    def test_trajectory_ensemble_matches_unconditional(self, linear_space):
        # 200 trajectories, fixed seed: batch mean of <n_p>(t) within 3
        # standard errors of the deterministic unconditional solution.
        n_traj, steps = 200, 100
        params = PhysicsParams.linear(eta=0.3, dt=0.01)
        h = linear_hamiltonian(linear_space, params, g=1.0)
        n_op = number_operator(linear_space, "cavity")
        rho0 = ket_to_density(fock_ket(linear_space, 1, 0))

        batch = np.broadcast_to(rho0, (n_traj, 4, 4)).copy()
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(2024)))
        ref = rho0.copy()
        max_z = 0.0
        for _ in range(steps):
            batch, _ = sme_step(linear_space, params, batch, h, rng)
            ref, _ = sme_step(linear_space, params, ref, h, rng=None)
            vals = np.einsum("ij,bji->b", n_op, batch).real
            se = vals.std(ddof=1) / np.sqrt(n_traj)
            z = abs(vals.mean() - np.einsum("ij,ji->", n_op, ref).real) / max(se, 1e-12)
            max_z = max(max_z, z)
        assert max_z < 3.0

    def test_positivity_throughout_noisy_run(self, linear_space):
        params = PhysicsParams.linear(eta=1.0)
        h = linear_hamiltonian(linear_space, params, g=1.0)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(77)))
        rho = bell_density(linear_space)
        for _ in range(300):
            rho, _ = sme_step(linear_space, params, rho, h, rng)
            assert np.linalg.eigvalsh(rho).min() >= -1e-8
            assert abs(np.trace(rho).real - 1.0) < 1e-10


class TestRunTrajectory:
    def test_zero_length(self, linear_space):
        params = PhysicsParams.linear()
        rho0 = bell_density(linear_space)
        states, dws = run_trajectory(linear_space, params, rho0, [])
        assert states.shape == (1, 4, 4)
        assert np.allclose(states[0], rho0)
        assert dws.shape == (0, 2)

    def test_seeded_determinism(self, linear_space):
        params = PhysicsParams.linear(eta=0.4)
        h = linear_hamiltonian(linear_space, params, g=0.5)
        rho0 = ket_to_density(fock_ket(linear_space, 1, 0))
        s1, d1 = run_trajectory(linear_space, params, rho0, [h] * 50, rng=42)
        s2, d2 = run_trajectory(linear_space, params, rho0, [h] * 50, rng=42)
        assert np.array_equal(s1, s2)
        assert np.array_equal(d1, d2)

    def test_blowup_on_pathological_dt(self, linear_space):
        params = PhysicsParams(kappa=10.0, gamma=0.0, eta=0.0, dt=10.0, n_substeps=1)
        h = linear_hamiltonian(linear_space, params, g=1.0)
        rho0 = bell_density(linear_space)
        with pytest.raises(IntegrationBlowupError):
            run_trajectory(linear_space, params, rho0, [h] * 100)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            PhysicsParams(eta=1.5)
        with pytest.raises(ValueError):
            PhysicsParams(dt=-0.01)
        assert PhysicsParams(kappa=0.5).gamma == pytest.approx(0.005)
