import numpy as np
import pytest

from aqpt.channels import (
    ChannelKind,
    ChannelSpec,
    _canonical_waveplate,
    channel_summary,
    fit_waveplate,
    make_channel,
    parse_channel_spec,
    waveplate_chi,
    waveplate_jones,
)
from aqpt.errors import NotAWaveplateError, ValidationError
from aqpt.quantum_core import (
    ChiMatrix,
    average_transmittance,
    process_distance,
    project_psd,
    purity,
)


class TestChannelSpec:
    def test_parse_every_kind(self):
        assert parse_channel_spec("identity").kind is ChannelKind.IDENTITY
        assert parse_channel_spec("waveplate:45,1.5707963").params == (45.0, 1.5707963)
        assert parse_channel_spec("depol:0.5").params == (0.5,)
        assert parse_channel_spec("polarizer:0,0.8").params == (0.0, 0.8)
        assert parse_channel_spec("filter:0.5").params == (0.5,)

    def test_lcwp_defaults(self):
        spec = parse_channel_spec("lcwp:1.2,0.3")
        assert spec.params == (1.2, 0.3, 64.0, 0.0)
        assert parse_channel_spec("lcwp:1.2,0.3,16").params == (1.2, 0.3, 16.0, 0.0)

    def test_mmf_alias(self):
        assert parse_channel_spec("mmf") == ChannelSpec.depolarizing(1.0)

    def test_label_round_trip(self):
        labels = ("identity", "waveplate:30,1.0", "lcwp:1.5,0.2,8,10", "filter:0.25")
        for text in labels:
            spec = parse_channel_spec(text)
            assert parse_channel_spec(spec.label()) == spec

    @pytest.mark.parametrize(
        "text",
        [
            "",
            "unknown",
            "waveplate:45",
            "depol:1.5",
            "depol:abc",
            "filter:-0.1",
            "polarizer:0,2",
            "lcwp:1,0.2,0",
            "identity:1",
            "depol:nan",
        ],
    )
    def test_invalid_specs(self, text):
        with pytest.raises(ValidationError):
            parse_channel_spec(text)

    def test_trace_preserving_flag(self):
        assert ChannelSpec.waveplate(0, 1).trace_preserving
        assert not ChannelSpec.polarizer(0, 1).trace_preserving
        assert not ChannelSpec.neutral_filter(1.0).trace_preserving


class TestMakeChannel:
    def test_identity(self):
        chi = make_channel(ChannelSpec.identity())
        assert purity(chi) == pytest.approx(1.0)
        assert chi.trace_preserving

    def test_full_depolarizer(self):
        chi = make_channel(ChannelSpec.depolarizing(1.0))
        np.testing.assert_array_equal(chi.mat, np.eye(4) / 2.0)
        assert purity(chi) == pytest.approx(0.25)

    def test_half_depolarizer_purity(self):
        chi = make_channel(ChannelSpec.depolarizing(0.5))
        # eigenvalues of χ/2: 0.625 once, 0.125 three times
        assert purity(chi) == pytest.approx(0.625**2 + 3 * 0.125**2)

    def test_waveplate_is_unitary_rank_one(self):
        chi = make_channel(ChannelSpec.waveplate(30.0, 1.1))
        assert np.linalg.matrix_rank(chi.mat, tol=1e-9) == 1
        assert purity(chi) == pytest.approx(1.0)
        u = waveplate_jones(30.0, 1.1)
        np.testing.assert_allclose(u.conj().T @ u, np.eye(2), atol=1e-15)

    def test_zero_retardance_waveplate_is_identity(self):
        identity = make_channel(ChannelSpec.identity())
        assert process_distance(waveplate_chi(17.0, 0.0), identity) == pytest.approx(
            0.0, abs=1e-9
        )

    def test_lcwp_without_spread_is_the_waveplate(self):
        lcwp = make_channel(ChannelSpec.partial_depolarizer(1.3, 0.0, theta_deg=20.0))
        np.testing.assert_array_equal(lcwp.mat, waveplate_chi(20.0, 1.3).mat)

    def test_lcwp_purity_decreases_with_spread(self):
        narrow = purity(make_channel(ChannelSpec.partial_depolarizer(1.0, 0.2)))
        wide = purity(make_channel(ChannelSpec.partial_depolarizer(1.0, 1.0)))
        assert 1.0 > narrow > wide
        assert make_channel(ChannelSpec.partial_depolarizer(1.0, 1.0)).trace_preserving

    def test_polarizer(self):
        chi = make_channel(ChannelSpec.polarizer(0.0, 0.8))
        assert not chi.trace_preserving
        assert average_transmittance(chi) == pytest.approx(0.4)

    def test_neutral_filter(self):
        chi = make_channel(ChannelSpec.neutral_filter(0.5))
        assert average_transmittance(chi) == pytest.approx(0.5)
        assert purity(chi) == pytest.approx(1.0)


class TestFitWaveplate:
    def test_exact_quarter_wave_plate(self):
        fit = fit_waveplate(waveplate_chi(45.0, np.pi / 2))
        assert fit.theta_deg == pytest.approx(45.0, abs=1e-3)
        assert fit.delta == pytest.approx(np.pi / 2, abs=1e-4)
        assert fit.residual < 1e-8

    def test_canonical_representative(self):
        """(θ + 90°, 2π − δ) describes the same plate."""
        fit = fit_waveplate(waveplate_chi(30.0 + 90.0, 2 * np.pi - 1.2))
        assert fit.theta_deg == pytest.approx(30.0, abs=1e-3)
        assert fit.delta == pytest.approx(1.2, abs=1e-4)

    def test_canonicalization_ranges(self):
        assert _canonical_waveplate(200.0, 1.0) == pytest.approx((20.0, 1.0))
        expected = (100.0, 2 * np.pi - 5.0)
        assert _canonical_waveplate(10.0, 5.0) == pytest.approx(expected)

    def test_noisy_reconstruction(self):
        rng = np.random.default_rng(0)
        chi = waveplate_chi(48.4, 1.452).mat
        noise = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        noisy = project_psd(chi + 0.0005 * (noise + noise.conj().T))
        noisy = 2.0 * noisy / np.trace(noisy).real
        fit = fit_waveplate(ChiMatrix(noisy))
        assert fit.theta_deg == pytest.approx(48.4, abs=1.0)
        assert fit.delta == pytest.approx(1.452, abs=0.02)

    def test_depolarizer_is_not_a_waveplate(self):
        with pytest.raises(NotAWaveplateError):
            fit_waveplate(make_channel(ChannelSpec.depolarizing(1.0)))

    def test_deterministic_default(self):
        chi = waveplate_chi(10.0, 0.7)
        assert fit_waveplate(chi) == fit_waveplate(chi)


def test_channel_summary():
    summary = channel_summary(make_channel(ChannelSpec.neutral_filter(0.5)))
    assert summary["transmittance"] == pytest.approx(0.5)
    assert summary["loss"] == pytest.approx(0.5)
    assert summary["rank"] == 1
    assert summary["trace_preserving"] is False
