"""Tests for the strengthened-eavesdropper key rate."""

import dataclasses
import math

import numpy as np
import pytest

from cvqkd.errors import NumericalConsistencyError
from cvqkd.keyrate import (
    holevo_bound,
    key_rate_for_totals,
    mutual_information,
    secret_key_rate,
)
from cvqkd.protocol import (
    ChannelTotals,
    ProtocolParams,
    build_network_covariance,
    collapse_channel,
    point_to_point_params,
)


def _params(spec):
    """ProtocolParams from a golden-file parameter block."""
    data = dict(spec)
    if "epsilon_tot" in data:
        data["epsilon_segments"] = (data.pop("epsilon_tot"),)
    return ProtocolParams(**data)


class TestGoldenValues:
    """Comparison against independently computed values."""

    def test_default_link(self, golden):
        expected = golden["defaults"]
        report = secret_key_rate(_params(expected["params"]))
        assert report.mutual_information_bits == pytest.approx(
            expected["mutual_information_bits"], rel=1e-9
        )
        assert report.holevo_bits == pytest.approx(expected["holevo_bits"], rel=1e-9)
        assert report.key_rate_bits == pytest.approx(expected["key_rate_bits"], rel=1e-8)
        assert report.key_rate_clamped == report.key_rate_bits
        np.testing.assert_allclose(report.nus_joint, expected["nus_joint"], rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(report.nus_conditional, expected["nus_conditional"], rtol=1e-9)
        assert report.entropy_joint_bits == pytest.approx(expected["entropy_joint_bits"], rel=1e-9)
        assert report.entropy_conditional_bits == pytest.approx(
            expected["entropy_conditional_bits"], rel=1e-9
        )

    def test_lossless_link(self, golden):
        """T = 1, eps = 0, eta_d = 1: K = beta * 1/2 log2 V."""
        expected = golden["lossless"]
        report = secret_key_rate(_params(expected["params"]))
        assert report.key_rate_bits == pytest.approx(0.956 * 0.5 * math.log2(5.0), abs=1e-9)
        assert report.key_rate_bits == pytest.approx(expected["key_rate_bits"], abs=1e-9)
        assert report.holevo_bits == pytest.approx(0.0, abs=1e-9)
        assert report.mutual_information_bits == pytest.approx(
            expected["mutual_information_bits"], abs=1e-9
        )

    def test_far_link_is_positive(self, golden):
        """A positive key survives 30 km with 64 ONUs."""
        report = secret_key_rate(ProtocolParams(distance_km=30.0, n_onus=64))
        assert report.key_rate_clamped > 0
        assert report.key_rate_bits == pytest.approx(golden["far_link"]["key_rate_bits"], rel=1e-6)

    def test_detector_variants(self, golden):
        untrusted = secret_key_rate(ProtocolParams(trusted_detector=False))
        perfect = secret_key_rate(ProtocolParams(eta_d=1.0))
        assert untrusted.key_rate_bits == pytest.approx(
            golden["untrusted_detector"]["key_rate_bits"], rel=1e-8
        )
        assert perfect.key_rate_bits == pytest.approx(
            golden["perfect_detector"]["key_rate_bits"], rel=1e-8
        )

    def test_negative_rate_is_clamped(self, golden):
        report = secret_key_rate(_params(golden["below_threshold"]["params"]))
        assert report.key_rate_bits == pytest.approx(
            golden["below_threshold"]["key_rate_bits"], rel=1e-5
        )
        assert report.key_rate_clamped == 0.0


class TestKeyRateProperties:
    """Physicality and monotonicity of the rate."""

    @pytest.mark.parametrize("distance_km", [0.0, 10.0, 30.0])
    @pytest.mark.parametrize("n_onus", [1, 4, 64])
    @pytest.mark.parametrize("epsilon", [0.0, 0.05, 0.2])
    def test_information_terms_are_non_negative(self, distance_km, n_onus, epsilon):
        params = ProtocolParams(distance_km=distance_km, n_onus=n_onus).with_excess_noise(epsilon)
        report = secret_key_rate(params)
        assert report.mutual_information_bits >= 0
        assert report.holevo_bits >= 0
        assert min(report.nus_joint) >= 1 - 1e-9
        assert min(report.nus_conditional) >= 1 - 1e-9

    def test_decreasing_in_excess_noise(self):
        rates = [
            secret_key_rate(ProtocolParams().with_excess_noise(eps)).key_rate_bits
            for eps in np.linspace(0.0, 0.3, 13)
        ]
        assert all(b < a for a, b in zip(rates, rates[1:]))

    def test_trusted_detector_never_hurts(self):
        """Handing the detector loss to Eve can only lower the rate."""
        for distance_km in (0.0, 10.0, 30.0):
            params = ProtocolParams(distance_km=distance_km)
            trusted = secret_key_rate(params).key_rate_bits
            untrusted = secret_key_rate(dataclasses.replace(params, trusted_detector=False))
            assert untrusted.key_rate_bits <= trusted + 1e-12

    def test_detector_variants_agree_for_perfect_detector(self):
        params = ProtocolParams(eta_d=1.0)
        untrusted = ProtocolParams(eta_d=1.0, trusted_detector=False)
        assert secret_key_rate(untrusted).key_rate_bits == pytest.approx(
            secret_key_rate(params).key_rate_bits, abs=1e-9
        )

    def test_quadratures_agree(self):
        """The p quadrature gives the same rate as x."""
        for params in (ProtocolParams(), ProtocolParams(distance_km=25.0, n_onus=32)):
            gamma = build_network_covariance(params)
            report = secret_key_rate(params)
            info_p = mutual_information(gamma, quadrature="p")
            chi_p = holevo_bound(gamma, quadrature="p")
            assert info_p == pytest.approx(report.mutual_information_bits, rel=1e-9)
            assert chi_p == pytest.approx(report.holevo_bits, rel=1e-9)
            assert params.beta * info_p - chi_p == pytest.approx(report.key_rate_bits, abs=1e-12)

    def test_splitter_never_helps(self):
        """Removing the splitter never lowers the clamped rate, across random links."""
        rng = np.random.default_rng(2024)
        positive = 0
        for _ in range(50):
            params = ProtocolParams(
                V=float(rng.uniform(2.0, 10.0)),
                beta=float(rng.uniform(0.92, 1.0)),
                eta_d=float(rng.uniform(0.3, 1.0)),
                eta_e=float(rng.uniform(0.8, 1.0)),
                distance_km=float(rng.uniform(0.0, 30.0)),
                n_onus=int(rng.integers(1, 65)),
                epsilon_segments=(float(rng.uniform(0.0, 0.1)),),
                trusted_detector=bool(rng.integers(0, 2)),
            )
            downstream = secret_key_rate(params).key_rate_clamped
            reference = secret_key_rate(point_to_point_params(params)).key_rate_clamped
            assert reference >= downstream - 1e-12
            positive += downstream > 0
        assert positive >= 5


class TestComponents:
    """The building blocks of the rate."""

    def test_components_match_report(self):
        params = ProtocolParams()
        gamma = build_network_covariance(params)
        report = secret_key_rate(params)
        assert mutual_information(gamma) == pytest.approx(report.mutual_information_bits)
        assert holevo_bound(gamma) == pytest.approx(report.holevo_bits)

    def test_key_rate_for_totals(self):
        """Evaluating from totals reproduces the modelled rate."""
        params = ProtocolParams(distance_km=20.0, n_onus=16)
        direct = secret_key_rate(params)
        from_totals = key_rate_for_totals(params, collapse_channel(params))
        assert from_totals.key_rate_bits == direct.key_rate_bits

    def test_report_serialization(self):
        data = secret_key_rate(ProtocolParams()).to_dict()
        assert set(data) >= {"key_rate_bits", "holevo_bits", "nus_joint", "T_tot", "epsilon_tot"}
        assert isinstance(data["nus_joint"], list)

    def test_totals_are_used_as_given(self):
        """Only T_tot and eps_tot matter, not how they were composed."""
        params = ProtocolParams()
        totals = ChannelTotals(0.1, 0.02)
        via_fiber = ProtocolParams(distance_km=50.0, n_onus=1, eta_e=1.0).with_excess_noise(0.02)
        assert key_rate_for_totals(params, totals).key_rate_bits == pytest.approx(
            secret_key_rate(via_fiber).key_rate_bits, rel=1e-12
        )


class TestConsistencyChecks:
    """Negative Holevo bounds beyond round-off are reported, not returned."""

    @pytest.fixture
    def negative_chi(self, monkeypatch):
        import cvqkd.keyrate as keyrate

        monkeypatch.setattr(keyrate, "_holevo_terms", lambda *args: (1.0, 1.0 + 1e-6, (), ()))

    def test_holevo_bound(self, negative_chi):
        with pytest.raises(NumericalConsistencyError, match="Holevo bound"):
            holevo_bound(build_network_covariance(ProtocolParams()))

    def test_key_rate(self, negative_chi):
        with pytest.raises(NumericalConsistencyError, match="Holevo bound"):
            secret_key_rate(ProtocolParams())

    def test_round_off_is_tolerated(self, monkeypatch):
        import cvqkd.keyrate as keyrate

        monkeypatch.setattr(keyrate, "_holevo_terms", lambda *args: (1.0, 1.0 + 1e-12, (), ()))
        chi = holevo_bound(build_network_covariance(ProtocolParams()))
        assert chi == pytest.approx(-1e-12, abs=1e-15)
