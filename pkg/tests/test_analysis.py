"""Tests for the parameter studies."""

import csv
import io
import json

import numpy as np
import pytest

from cvqkd.analysis import (
    SweepGrid,
    SweepResult,
    compare_point_to_point,
    default_grid,
    keyrate_grid,
    optimal_modulation_variance,
    optimum_grid,
    params_for_fiber_loss,
    tolerable_excess_noise,
    tolerance_grid,
)
from cvqkd.errors import BracketError, ConfigError, DomainError
from cvqkd.keyrate import secret_key_rate
from cvqkd.protocol import ProtocolParams, collapse_channel

SMALL_GRID = SweepGrid(distances_km=(0.0, 10.0, 20.0, 30.0), onu_counts=(2, 8, 32, 64))


def _rows(csv_text):
    return list(csv.reader(io.StringIO(csv_text)))


class TestSweepGrid:
    """Grid validation and cell enumeration."""

    def test_cells_are_distance_major(self):
        grid = SweepGrid((1.0, 2.0), (4, 8))
        assert grid.cells() == [(1.0, 4), (1.0, 8), (2.0, 4), (2.0, 8)]
        assert grid.params_for(2.0, 8).n_onus == 8

    @pytest.mark.parametrize(
        "distances, onus, message",
        [
            ((), (2,), "must not be empty"),
            ((10.0, 5.0), (2,), "strictly increasing"),
            ((1.0,), (4, 4), "strictly increasing"),
            ((-1.0,), (2,), "distances_km must be >= 0"),
            ((1.0,), (0, 2), "onu_counts must be >= 1"),
        ],
    )
    def test_rejects_invalid_axes(self, distances, onus, message):
        with pytest.raises(ConfigError, match=message):
            SweepGrid(distances, onus)

    def test_default_grid(self):
        grid = default_grid()
        assert grid.distances_km[0] == 0.0 and grid.distances_km[-1] == 30.0
        assert len(grid.distances_km) == 31
        assert grid.onu_counts == tuple(range(2, 65))


class TestKeyrateGrid:
    """Key rate over distance and ONU count."""

    def test_far_corner_is_positive(self):
        result = keyrate_grid(SweepGrid((30.0,), (64,)), threads=1)
        assert result.rows[0]["key_rate_clamped"] > 0
        assert result.rows[0]["error"] == ""

    def test_lossless_cell(self):
        base = ProtocolParams(eta_d=1.0, eta_e=1.0).with_excess_noise(0.0)
        result = keyrate_grid(SweepGrid((0.0,), (1,), base), threads=1)
        assert result.rows[0]["key_rate"] == pytest.approx(1.10988162935616, abs=1e-9)

    def test_cells_match_standalone_evaluation(self):
        """Each cell equals an independent evaluation of its parameters."""
        grid = SweepGrid((5.0, 25.0), (4, 16))
        result = keyrate_grid(grid, threads=1)
        for row in result.rows:
            params = ProtocolParams(distance_km=row["distance_km"], n_onus=row["n_onus"])
            assert row["key_rate"] == secret_key_rate(params).key_rate_bits

    def test_monotone_along_both_axes(self):
        result = keyrate_grid(SMALL_GRID, threads=1)
        rates = result.as_matrix("key_rate", "distance_km", "n_onus")
        assert rates.shape == (4, 4)
        assert np.all(np.diff(rates, axis=0) <= 0)
        assert np.all(np.diff(rates, axis=1) <= 0)
        assert np.all(result.as_matrix("key_rate_clamped", "distance_km", "n_onus") >= 0)

    def test_full_default_grid(self):
        """The full default grid keeps a positive rate out to 30 km and 64 ONUs."""
        result = keyrate_grid(default_grid(), threads=1)
        rates = result.as_matrix("key_rate", "distance_km", "n_onus")
        clamped = result.as_matrix("key_rate_clamped", "distance_km", "n_onus")
        assert rates.shape == (31, 63)
        assert len(result.to_csv_text().splitlines()) == 1 + 31 * 63
        assert np.all(clamped >= 0)
        assert clamped[-1, -1] > 0
        assert np.all(np.diff(rates, axis=0) <= 0)
        assert np.all(np.diff(rates, axis=1) <= 0)
        assert not result.failed_cells

    def test_parallel_matches_serial(self):
        serial = keyrate_grid(SMALL_GRID, threads=1)
        parallel = keyrate_grid(SMALL_GRID, threads=2)
        assert parallel.to_csv_text() == serial.to_csv_text()
        assert parallel.to_json_text() == serial.to_json_text()

    def test_env_threads(self, monkeypatch):
        monkeypatch.setenv("CVQKD_THREADS", "1")
        assert keyrate_grid(SMALL_GRID).to_csv_text() == keyrate_grid(SMALL_GRID, 1).to_csv_text()

    def test_cell_errors_carry_coordinates(self, monkeypatch):
        """A failing cell keeps its coordinates and message; others are unaffected."""
        import cvqkd.analysis as analysis

        original = analysis.secret_key_rate

        def flaky(params):
            if params.n_onus == 8:
                raise DomainError("synthetic failure")
            return original(params)

        monkeypatch.setattr(analysis, "secret_key_rate", flaky)
        result = keyrate_grid(SweepGrid((10.0,), (4, 8)), threads=1)
        failed = result.failed_cells
        assert len(failed) == 1
        assert (failed[0]["distance_km"], failed[0]["n_onus"]) == (10.0, 8)
        assert "DomainError: synthetic failure" in failed[0]["error"]
        assert failed[0]["key_rate"] is None
        assert result.rows[0]["key_rate"] > 0


class TestSerialization:
    """CSV and JSON forms of a result."""

    def test_csv_layout(self):
        result = keyrate_grid(SweepGrid((10.0,), (4,)), threads=1)
        text = result.to_csv_text()
        assert "\r" not in text
        header, row = _rows(text)
        assert header == [
            "distance_km [km]",
            "n_onus [count]",
            "key_rate [bits/symbol]",
            "key_rate_clamped [bits/symbol]",
            "flags [-]",
            "error [-]",
        ]
        assert row[:2] == ["10", "4"]
        assert row[2] == f"{secret_key_rate(ProtocolParams()).key_rate_bits:.12g}"

    def test_deterministic(self):
        first = keyrate_grid(SMALL_GRID, threads=1)
        second = keyrate_grid(SMALL_GRID, threads=1)
        assert first.to_csv_text() == second.to_csv_text()
        assert first.to_json_text() == second.to_json_text()

    def test_json_metadata(self):
        result = keyrate_grid(SweepGrid((10.0,), (4,)), threads=1)
        document = json.loads(result.to_json_text(config={"command": "sweep"}))
        metadata = document["metadata"]
        assert metadata["kind"] == "keyrate"
        assert len(metadata["params_hash"]) == 16
        assert metadata["params"]["V"] == 5.0
        assert metadata["inputs"] == {"distances_km": [10.0], "onu_counts": [4]}
        assert document["config"] == {"command": "sweep"}
        assert [c["name"] for c in document["columns"]][:2] == ["distance_km", "n_onus"]

    def test_params_hash_tracks_inputs(self):
        a = keyrate_grid(SweepGrid((10.0,), (4,)), threads=1).metadata["params_hash"]
        b = keyrate_grid(SweepGrid((10.0,), (8,)), threads=1).metadata["params_hash"]
        assert a != b

    def test_slice_and_column(self):
        result = keyrate_grid(SMALL_GRID, threads=1)
        profile = result.slice("distance_km", 30.0)
        assert profile.column("n_onus") == [2, 8, 32, 64]
        assert result.axis_values("distance_km") == [0.0, 10.0, 20.0, 30.0]
        with pytest.raises(KeyError):
            result.column("missing")

    def test_write(self, tmp_path):
        result = keyrate_grid(SweepGrid((10.0,), (4,)), threads=1)
        csv_path, json_path = tmp_path / "out.csv", tmp_path / "out.json"
        result.write(csv_path=str(csv_path), json_path=str(json_path))
        assert csv_path.read_text(encoding="utf-8") == result.to_csv_text()
        assert json.loads(json_path.read_text(encoding="utf-8"))["metadata"]["kind"] == "keyrate"


class TestTolerableExcessNoise:
    """Root of the key rate in the excess noise."""

    def test_golden_values(self, golden):
        for case in golden["tolerable_excess_noise"]:
            params = ProtocolParams(distance_km=case["distance_km"], n_onus=case["n_onus"])
            result = tolerable_excess_noise(params)
            assert not result.below_threshold
            assert result.epsilon_tol == pytest.approx(case["epsilon_tol"], abs=1e-7)

    def test_root_residual(self):
        """The rate vanishes at the returned noise level."""
        params = ProtocolParams(distance_km=30.0, n_onus=64)
        result = tolerable_excess_noise(params)
        assert result.epsilon_tol > 0
        assert abs(result.residual_bits) <= 1e-6
        rate = secret_key_rate(params.with_excess_noise(result.epsilon_tol)).key_rate_bits
        assert abs(rate) <= 1e-6

    def test_below_threshold(self):
        result = tolerable_excess_noise(ProtocolParams(beta=0.5))
        assert result.below_threshold
        assert result.epsilon_tol == 0.0

    def test_bracket_too_small(self):
        with pytest.raises(BracketError, match="widen the bracket"):
            tolerable_excess_noise(ProtocolParams(), eps_max=0.05)

    def test_grid_is_monotone(self):
        grid = SweepGrid((0.0, 15.0, 30.0), (2, 16, 64))
        result = tolerance_grid(grid, threads=1)
        values = result.as_matrix("tolerable_excess_noise", "distance_km", "n_onus")
        assert np.all(values > 0)
        assert np.all(np.diff(values, axis=0) <= 0)
        assert np.all(np.diff(values, axis=1) <= 0)

    def test_grid_flags_below_threshold(self):
        grid = SweepGrid((10.0,), (4,), ProtocolParams(beta=0.5))
        row = tolerance_grid(grid, threads=1).rows[0]
        assert row["flags"] == "below_threshold"
        assert row["tolerable_excess_noise"] == 0.0

    def test_grid_records_bracket_errors(self):
        row = tolerance_grid(SweepGrid((10.0,), (4,)), eps_max=0.05, threads=1).rows[0]
        assert row["error"].startswith("BracketError")


class TestComparePointToPoint:
    """Downstream rate against the splitter-free link."""

    def test_golden_ratio(self, golden):
        expected = golden["compare"]
        result = compare_point_to_point(expected["fiber_loss_db"], [1, expected["n_onus"]])
        row = result.rows[1]
        assert row["key_rate_downstream"] == pytest.approx(
            expected["key_rate_downstream"], rel=1e-8
        )
        assert row["key_rate_point_to_point"] == pytest.approx(
            expected["key_rate_point_to_point"], rel=1e-8
        )
        assert row["ratio"] == pytest.approx(expected["ratio"], rel=1e-8)

    @pytest.mark.parametrize("loss", [4.0, 8.0, 10.0, 12.0])
    def test_never_exceeds_point_to_point(self, loss):
        result = compare_point_to_point(loss, [1, 2, 4, 8, 16, 32, 64])
        ratios = result.column("ratio")
        assert ratios[0] == pytest.approx(100.0, abs=1e-9)
        assert all(r <= 100.0 for r in ratios)
        assert all(b <= a for a, b in zip(ratios, ratios[1:]))

    def test_total_loss_includes_splitter(self):
        result = compare_point_to_point(8.0, [16])
        expected = 8.0 + 10 * np.log10(16) - 10 * np.log10(0.99)
        assert result.rows[0]["total_loss_db"] == pytest.approx(expected)

    def test_explicit_splitter_base(self):
        """The downstream side always splits 1:n, whatever eta_odn the base carries."""
        base = ProtocolParams(splitter_model="explicit", eta_odn=0.9)
        result = compare_point_to_point(8.0, [1, 2, 64], base)
        ratios = result.column("ratio")
        assert ratios[0] == pytest.approx(100.0, abs=1e-9)
        assert ratios[0] > ratios[1] > ratios[2]
        losses = result.column("total_loss_db")
        assert losses[1] - losses[0] == pytest.approx(10 * np.log10(2))
        assert losses[2] - losses[0] == pytest.approx(10 * np.log10(64))
        assert ratios == compare_point_to_point(8.0, [1, 2, 64]).column("ratio")

    def test_fiber_loss_to_distance(self):
        assert params_for_fiber_loss(ProtocolParams(), 8.0).distance_km == pytest.approx(40.0)
        lossless_fiber = ProtocolParams(alpha_db_per_km=0.0)
        params = params_for_fiber_loss(lossless_fiber, 8.0)
        assert collapse_channel(params).T_tot == pytest.approx(10 ** -0.8 * 0.25 * 0.99)
        with pytest.raises(DomainError):
            params_for_fiber_loss(ProtocolParams(), -1.0)

    def test_ratio_absent_without_reference_rate(self):
        noisy = ProtocolParams().with_excess_noise(0.5)
        result = compare_point_to_point(4.0, [1, 2], noisy)
        assert result.column("ratio") == [None, None]
        assert result.rows[0]["flags"] == "ratio_undefined"

    def test_concat(self):
        parts = [compare_point_to_point(loss, [1, 4]) for loss in (4.0, 8.0)]
        merged = SweepResult.concat(parts)
        assert merged.axis_values("fiber_loss_db") == [4.0, 8.0]
        assert len(merged.rows) == 4


class TestOptimalModulationVariance:
    """Maximization of the key rate over the modulation variance."""

    def test_golden_optimum(self, golden):
        case = golden["optimal_modulation_variance"][0]
        params = ProtocolParams(distance_km=case["distance_km"], n_onus=case["n_onus"])
        result = optimal_modulation_variance(params)
        assert not result.fallback
        assert result.v_mod == pytest.approx(case["v_mod"], abs=2e-3)
        assert result.key_rate == pytest.approx(case["key_rate_bits"], rel=1e-6)

    def test_plateau(self, golden):
        """Beyond a handful of ONUs the optimum settles near 4.2 SNU."""
        case = golden["optimal_modulation_variance"][1]
        params = ProtocolParams(distance_km=case["distance_km"], n_onus=case["n_onus"])
        result = optimal_modulation_variance(params)
        assert result.v_mod == pytest.approx(4.2, abs=0.3)
        assert result.v_mod == pytest.approx(case["v_mod"], abs=2e-3)

    def test_local_optimality(self):
        params = ProtocolParams(distance_km=20.0, n_onus=32)
        result = optimal_modulation_variance(params)
        for factor in (0.95, 1.05):
            neighbour = secret_key_rate(params.with_modulation_variance(result.v_mod * factor))
            assert result.key_rate >= neighbour.key_rate_bits

    def test_invalid_bracket(self):
        with pytest.raises(ConfigError, match="bracket"):
            optimal_modulation_variance(ProtocolParams(), bracket=(5.0, 1.0))

    def test_edge_of_bracket_is_flagged(self):
        result = optimal_modulation_variance(ProtocolParams(), bracket=(0.5, 2.0))
        assert result.at_bracket_edge
        assert result.v_mod == pytest.approx(2.0)

    def test_multiple_peaks_fall_back_to_grid(self, monkeypatch):
        import cvqkd.analysis as analysis

        def two_peaks(params):
            v = params.V_mod
            value = np.exp(-((np.log(v) - 0.0) ** 2)) + 0.8 * np.exp(-((np.log(v) - 3.0) ** 2))

            class Report:
                key_rate_bits = float(value)

            return Report()

        monkeypatch.setattr(analysis, "secret_key_rate", two_peaks)
        result = optimal_modulation_variance(ProtocolParams())
        assert result.fallback
        assert "fine_grid_fallback" in result.flags
        assert result.v_mod == pytest.approx(1.0, rel=0.01)

    def test_plateau_grid(self):
        """
        The 3.9-4.5 SNU band holds from 16 ONUs on.

        At 8 ONUs the optimum still drifts with distance: about 5.02, 4.79,
        4.49 and 4.31 SNU at 5, 10, 20 and 30 km.
        """
        grid = SweepGrid((5.0, 10.0, 20.0, 30.0), (16, 32, 64))
        result = optimum_grid(grid, threads=1)
        values = result.column("optimal_modulation_variance")
        assert all(3.9 <= v <= 4.5 for v in values)
        assert all(flags == "" for flags in result.column("flags"))

    def test_eight_onus_short_link_above_band(self):
        result = optimal_modulation_variance(ProtocolParams(distance_km=5.0, n_onus=8))
        assert 4.5 < result.v_mod < 5.5
