"""Pilot transmission, MMSE channel estimation, and error statistics."""

import numpy as np
import pytest

from cfmimo.channel import (
    LargeScaleFading,
    PilotAssignment,
    assign_pilots,
    dft_pilot_book,
    mmse_estimate,
    received_data,
    sample_channel,
    transmit_pilots,
)
from cfmimo.modem import build_constellation, modulate


def make_lsf(beta):
    beta = np.asarray(beta, dtype=float)
    return LargeScaleFading(beta=beta, shadow_db=np.zeros_like(beta))


class TestPilotBook:
    @pytest.mark.parametrize("tau", [1, 2, 3, 7, 30, 60])
    def test_orthogonality_and_norm(self, tau):
        book = dft_pilot_book(tau)
        gram = book.phi @ book.phi.conj().T
        assert np.allclose(gram, tau * np.eye(tau), atol=1e-10)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            dft_pilot_book(0)


class TestAssignPilots:
    def test_iid_indices_in_range(self):
        a = assign_pilots(100, 7, np.random.default_rng(0), mode="iid")
        assert np.all((a.t >= 0) & (a.t < 7))

    def test_balanced_cohort_sizes(self):
        a = assign_pilots(60, 30, np.random.default_rng(1), mode="balanced")
        sizes = [len(c) for c in a.cohorts]
        assert sum(sizes) == 60
        assert max(sizes) - min(sizes) <= 1

    def test_single_pilot_single_cohort(self):
        a = assign_pilots(8, 1, np.random.default_rng(2))
        assert sorted(a.cohorts[0].tolist()) == list(range(8))

    def test_balanced_full_pilots_gives_singletons(self):
        a = assign_pilots(6, 6, np.random.default_rng(3), mode="balanced")
        assert all(len(c) == 1 for c in a.cohorts)

    def test_cohorts_partition_ue_set(self):
        a = assign_pilots(31, 5, np.random.default_rng(4), mode="iid")
        flat = np.concatenate(a.cohorts)
        assert sorted(flat.tolist()) == list(range(31))
        for j, cohort in enumerate(a.cohorts):
            assert np.all(a.t[cohort] == j)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            assign_pilots(4, 2, np.random.default_rng(0), mode="bogus")

    def test_inconsistent_assignment_rejected(self):
        with pytest.raises(ValueError):
            PilotAssignment(t=np.array([0, 0]), cohorts=(np.array([0]),))


class TestSampleChannel:
    def test_zero_scale_gives_zero_channel(self):
        lsf = make_lsf(np.zeros((2, 3)))
        H = sample_channel(lsf, np.random.default_rng(0))
        assert np.all(H == 0)

    def test_second_moment(self):
        lsf = make_lsf(np.full((100_000, 1), 4.0))
        H = sample_channel(lsf, np.random.default_rng(5))
        assert np.mean(np.abs(H) ** 2) == pytest.approx(4.0, rel=0.03)

    def test_deterministic(self):
        lsf = make_lsf(np.ones((4, 4)))
        a = sample_channel(lsf, np.random.default_rng(9))
        b = sample_channel(lsf, np.random.default_rng(9))
        assert np.array_equal(a, b)


class TestTransmitPilots:
    def test_noiseless_single_user(self):
        book = dft_pilot_book(1)
        a = assign_pilots(1, 1, np.random.default_rng(0))
        H = np.array([[1.0 + 0j]])
        Z = transmit_pilots(H, a, book, p=1.0, sigma2=0.0, rng=np.random.default_rng(0))
        assert np.allclose(Z, np.array([[1.0 + 0j]]))

    def test_received_energy_matches_expansion(self):
        # E||z_l||^2 expanded over cohorts: p*tau*sum_i beta_{l,i} + tau*sigma2
        rng = np.random.default_rng(6)
        L, K, tau, p, sigma2 = 3, 6, 3, 2.0, 0.5
        beta = rng.uniform(0.2, 2.0, size=(L, K))
        lsf = make_lsf(beta)
        book = dft_pilot_book(tau)
        a = assign_pilots(K, tau, rng, mode="balanced")

        expected = np.zeros(L)
        for j, cohort in enumerate(a.cohorts):
            for i in cohort:
                expected += p * tau * beta[:, i]
        expected += tau * sigma2

        acc = np.zeros(L)
        n = 10_000
        for _ in range(n):
            H = sample_channel(lsf, rng)
            Z = transmit_pilots(H, a, book, p, sigma2, rng)
            acc += np.sum(np.abs(Z) ** 2, axis=1)
        assert np.allclose(acc / n, expected, rtol=0.03)

    def test_zero_channel_gives_pure_noise(self):
        book = dft_pilot_book(4)
        a = assign_pilots(3, 4, np.random.default_rng(1))
        H = np.zeros((2000, 3), dtype=complex)
        Z = transmit_pilots(H, a, book, p=5.0, sigma2=0.25, rng=np.random.default_rng(2))
        assert np.var(Z) == pytest.approx(0.25, rel=0.05)


class TestMmseEstimate:
    def run_estimate(self, beta, t, p, sigma2, rng, tau=None):
        lsf = make_lsf(beta)
        if tau is None:
            tau = int(np.max(t)) + 1
        cohorts = tuple(np.flatnonzero(np.asarray(t) == j) for j in range(tau))
        a = PilotAssignment(t=np.asarray(t), cohorts=cohorts)
        book = dft_pilot_book(tau)
        H = sample_channel(lsf, rng)
        Z = transmit_pilots(H, a, book, p, sigma2, rng)
        return mmse_estimate(Z, H, lsf, a, book, p, sigma2)

    def test_noiseless_single_user_is_exact(self):
        real = self.run_estimate(
            beta=[[2.0]], t=[0], p=1.0, sigma2=0.0, rng=np.random.default_rng(0)
        )
        assert np.allclose(real.Hhat, real.H, atol=1e-12)
        assert real.alpha[0, 0] == pytest.approx(2.0, rel=1e-12)
        assert real.C[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_alpha_closed_form_singleton(self):
        # p=1, tau=2, beta=1, own cohort, sigma2=0.1 -> alpha = 2/2.1
        real = self.run_estimate(
            beta=[[1.0, 1.0]], t=[0, 1], p=1.0, sigma2=0.1, rng=np.random.default_rng(1)
        )
        assert real.alpha[0, 0] == pytest.approx(2.0 / 2.1, rel=1e-12)
        assert real.C[0, 0] == pytest.approx(1.0 - 2.0 / 2.1, rel=1e-12)

    def test_alpha_closed_form_contaminated(self):
        # two UEs with beta=1 share one of two pilots -> alpha = 2/4.1
        real = self.run_estimate(
            beta=[[1.0, 1.0]], t=[0, 0], p=1.0, sigma2=0.1, rng=np.random.default_rng(2), tau=2
        )
        assert real.alpha[0, 0] == pytest.approx(2.0 / 4.1, rel=1e-12)
        assert real.alpha[0, 1] == pytest.approx(2.0 / 4.1, rel=1e-12)

    def test_error_statistics_identities(self):
        rng = np.random.default_rng(3)
        beta = rng.uniform(0.1, 3.0, size=(5, 8))
        real = self.run_estimate(beta, rng.integers(0, 3, 8), p=2.0, sigma2=0.4, rng=rng)
        assert np.array_equal(real.C, beta - real.alpha)  # exact by construction
        assert np.allclose(real.alpha + real.C, beta, rtol=1e-14)
        assert np.array_equal(real.D, real.C.sum(axis=1))
        assert np.all(real.alpha >= 0) and np.all(real.C >= 0) and np.all(real.D >= 0)

    def test_projection_equals_expanded_form(self):
        # same noise realization fed through both computation paths
        rng = np.random.default_rng(4)
        L, K, tau, p, sigma2 = 4, 6, 3, 1.7, 0.3
        beta = rng.uniform(0.1, 2.0, size=(L, K))
        lsf = make_lsf(beta)
        book = dft_pilot_book(tau)
        a = assign_pilots(K, tau, rng, mode="balanced")
        H = sample_channel(lsf, rng)
        V = (rng.standard_normal((L, tau)) + 1j * rng.standard_normal((L, tau))) * np.sqrt(
            sigma2 / 2
        )
        Z = np.sqrt(p) * H @ book.phi[a.t] + V

        real = mmse_estimate(Z, H, lsf, a, book, p, sigma2)

        expanded = np.zeros((L, K), dtype=complex)
        for k in range(K):
            cohort = a.cohorts[a.t[k]]
            coef = np.sqrt(p * tau) * beta[:, k] / (sigma2 + p * tau * beta[:, cohort].sum(axis=1))
            v_proj = V @ book.phi[a.t[k]].conj() / np.sqrt(tau)
            expanded[:, k] = coef * (np.sqrt(p * tau) * H[:, cohort].sum(axis=1) + v_proj)
        assert np.allclose(real.Hhat, expanded, atol=1e-12)

    def test_estimator_consistency_and_orthogonality(self):
        # Var(hhat) -> alpha, Var(h - hhat) -> C, corr(hhat, eps) -> 0
        rng = np.random.default_rng(5)
        beta = np.array([[1.5, 0.7, 0.9]])
        t = [0, 0, 1]
        n = 20_000
        hh = np.zeros((n, 3), dtype=complex)
        ee = np.zeros((n, 3), dtype=complex)
        for i in range(n):
            real = self.run_estimate(beta, t, p=1.2, sigma2=0.2, rng=rng)
            hh[i] = real.Hhat[0]
            ee[i] = real.H[0] - real.Hhat[0]
        real = self.run_estimate(beta, t, p=1.2, sigma2=0.2, rng=rng)
        assert np.allclose(np.mean(np.abs(hh) ** 2, axis=0), real.alpha[0], rtol=0.05)
        assert np.allclose(np.mean(np.abs(ee) ** 2, axis=0), real.C[0], rtol=0.05)
        corr = np.abs(np.mean(hh * ee.conj(), axis=0)) / np.sqrt(
            np.mean(np.abs(hh) ** 2, axis=0) * np.mean(np.abs(ee) ** 2, axis=0)
        )
        assert np.all(corr < 0.03)


class TestReceivedData:
    def test_noiseless_single_user(self):
        H = (np.arange(4) + 1j * np.arange(4)).reshape(4, 1)
        y = received_data(H, np.array([1.0 + 0j]), 0.0, np.random.default_rng(0))
        assert np.array_equal(y, H[:, 0])

    def test_zero_symbols_give_pure_noise(self):
        H = np.ones((3000, 2), dtype=complex)
        y = received_data(H, np.zeros(2, dtype=complex), 0.36, np.random.default_rng(1))
        assert np.var(y) == pytest.approx(0.36, rel=0.1)

    def test_effective_noise_covariance(self):
        # Cov(y - Hhat x) has diagonal D + sigma2 per the estimate-error model
        rng = np.random.default_rng(6)
        L, K, tau, p, sigma2 = 4, 4, 2, 3.0, 0.5
        beta = rng.uniform(0.3, 1.5, size=(L, K))
        lsf = make_lsf(beta)
        book = dft_pilot_book(tau)
        c = build_constellation(4)
        n = 10_000
        w2 = np.zeros(L)
        D = None
        for i in range(n):
            a = assign_pilots(K, tau, rng, mode="balanced")
            H = sample_channel(lsf, rng)
            Z = transmit_pilots(H, a, book, p, sigma2, rng)
            real = mmse_estimate(Z, H, lsf, a, book, p, sigma2)
            x = modulate(rng.integers(0, 2, size=2 * K), c)
            y = received_data(H, x, sigma2, rng)
            w = y - real.Hhat @ x
            w2 += np.abs(w) ** 2
            D = real.D if D is None else D + real.D
        assert np.allclose(w2 / n, D / n + sigma2, rtol=0.05)
