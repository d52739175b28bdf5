import csv
import math

import numpy as np
import pytest

from sqtunnel.eigensolver import (
    GridSpec, Level, Parity, default_grid, energy_expectation, even_condition, ground_wavenumber,
    numerov_bound_state, numerov_levels, odd_condition, solve_square_levels, spectrum_pair,
    square_bound_state,
)
from sqtunnel.errors import GridTooSmallError, MatchingError, NoDoubletError, OrderingError
from sqtunnel.potentials import RosenMorseDouble, SquareDoubleWell
from sqtunnel.units import UnitSystem

U = UnitSystem.dimensionless()


def _clipped(well):
    """Square well defined on the wall points too, with the mean value on the barrier edges."""
    h = 0.5 * well.d
    return lambda x: np.where(np.abs(x) < h, well.V0, np.where(np.abs(x) == h, 0.5 * well.V0, 0.0))


class TestSquareLevels:
    def test_ground_root_bracket_and_residual(self, square_well):
        k = ground_wavenumber(square_well)
        assert math.pi / 4 < k < math.pi / 2
        assert abs(even_condition(k, square_well, U)) < 1e-12
        assert k == pytest.approx(1.2216594115691932, rel=1e-12)

    def test_doublet_ordering(self, square_well):
        lv = solve_square_levels(square_well)
        assert lv.k_even < lv.k_odd < math.sqrt(2 * square_well.V0)
        assert abs(odd_condition(lv.k_odd, square_well, U)) < 1e-12

    def test_high_barrier_limit(self):
        lv = solve_square_levels(SquareDoubleWell(6.0, 2.0, 400.0))
        assert lv.k_even == pytest.approx(math.pi / 2, rel=0.03)
        # the splitting is far below double precision here
        assert abs(lv.k_odd - lv.k_even) < 1e-12

    def test_splitting_asymptote(self):
        # dk / (4 k exp(-kappa d) / (L kappa)) rises towards 1 as the barrier grows
        ratios = []
        for V0 in (5.0, 10.0, 20.0, 50.0):
            w = SquareDoubleWell(6.0, 2.0, V0)
            lv = solve_square_levels(w)
            kap = math.sqrt(2 * V0 - lv.k_even**2)
            ratios.append((lv.k_odd - lv.k_even) * w.L * kap / (4 * lv.k_even * math.exp(-kap * w.d)))
        assert np.all(np.diff(ratios) > 0) and 0.9 < ratios[-1] < 1.0

    def test_no_doublet(self):
        with pytest.raises(NoDoubletError):
            solve_square_levels(SquareDoubleWell(6.0, 2.0, 0.05))

    @pytest.mark.parametrize("parity, level", [("even", 0), ("odd", 1)])
    def test_numerov_agrees_with_matching(self, square_well, parity, level):
        lv = solve_square_levels(square_well)
        k = lv.k_even if parity == "even" else lv.k_odd
        st = numerov_bound_state(_clipped(square_well), U, level, GridSpec(-3.0, 3.0, 6001), hard_walls=True)
        assert st.energy == pytest.approx(0.5 * k * k, rel=1e-6)


class TestSquareState:
    def test_shape(self, square_state, square_well):
        x, psi = square_state.grid, square_state.psi
        assert psi[0] == psi[-1] == 0.0
        assert np.trapezoid(psi**2, x) == pytest.approx(1.0, rel=1e-12)
        assert square_state.nodes == 0 and square_state.parity is Parity.EVEN
        np.testing.assert_allclose(psi, psi[::-1], atol=1e-12)
        # maxima sit in the wells, the cosh branch has its minimum at the origin
        assert abs(x[np.argmax(psi)]) > 0.5 * square_well.d
        assert psi[x.size // 2] == psi[np.abs(x) < 1].min()

    def test_odd_state_has_one_node(self, square_well):
        st = square_bound_state(square_well, solve_square_levels(square_well).k_odd, "odd")
        assert st.nodes == 1 and st.parity is Parity.ODD

    def test_mismatched_k_rejected(self, square_well):
        with pytest.raises(MatchingError) as info:
            square_bound_state(square_well, 0.9, "even")
        assert info.value.jump > 0

    def test_energy_expectation(self, square_state, square_well):
        # first order in h because of the step in V
        fine = square_bound_state(square_well, square_state.wavenumber, "even", n_points=48001)
        assert energy_expectation(square_state) == pytest.approx(square_state.energy, rel=5e-4)
        assert energy_expectation(fine) == pytest.approx(square_state.energy, rel=1.5e-4)

    def test_csv(self, square_state, tmp_path):
        path = tmp_path / "state.csv"
        square_state.to_csv(path, header="# demo\n")
        lines = path.read_text().splitlines()
        assert lines[0] == "# demo"
        rows = list(csv.DictReader(lines[1:]))
        assert len(rows) == square_state.grid.size
        assert rows[0]["V"] == "nan" and float(rows[len(rows) // 2]["V"]) == 2.0


class TestNumerov:
    def test_harmonic_levels(self):
        grid = GridSpec(-10.0, 10.0, 4001)
        ev = numerov_levels(lambda x: 0.5 * x * x, U, 4, grid)
        np.testing.assert_allclose(ev, [0.5, 1.5, 2.5, 3.5], rtol=1e-6)

    def test_level_enum_and_parity(self):
        st = numerov_bound_state(lambda x: 0.5 * x * x, U, Level.FIRST_EXCITED, GridSpec(-10, 10, 4001))
        assert st.parity is Parity.ODD and st.nodes == 1
        # psi_1 is proportional to x exp(-x^2/2)
        x = st.grid
        ref = x * np.exp(-0.5 * x * x)
        ref /= math.sqrt(np.trapezoid(ref**2, x))
        np.testing.assert_allclose(st.psi, ref, atol=1e-6)

    def test_short_grid_detected(self):
        with pytest.raises(GridTooSmallError):
            numerov_bound_state(lambda x: 0.5 * x * x, U, 0, GridSpec(-2.0, 2.0, 2001))

    def test_rosen_morse_default_grid(self, nh3_units):
        pot = RosenMorseDouble(398.0, 2810.0, 0.17, 2.22)
        grid = default_grid(pot, nh3_units)
        st = numerov_bound_state(pot, nh3_units, 0, grid)
        assert st.nodes == 0 and abs(st.psi[1]) < 1e-8 * st.psi.max()
        assert st.energy == pytest.approx(energy_expectation(st), rel=1e-6)


def test_spectrum_pair():
    sp = spectrum_pair(1.0, 1.5, U)
    assert sp.delta_e == 0.5 and sp.period == pytest.approx(4 * math.pi)
    with pytest.raises(OrderingError):
        spectrum_pair(1.5, 1.0, U)
