import numpy as np
import pytest

from pathctrl.pathspace import (
    GridMismatchError,
    Path,
    TimeGrid,
    concat,
    constant_path,
    d_infinity,
    interpolate,
    path_from_csv,
    path_to_csv,
    sup_norm,
)


class TestTimeGrid:
    def test_nodes_uniform(self):
        g = TimeGrid(0.0, 1.0, 4)
        assert g.dt == 0.25
        assert np.allclose(g.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_node_index(self):
        g = TimeGrid(0.0, 1.0, 4)
        assert g.node_index(0.5) == 2
        with pytest.raises(GridMismatchError):
            g.node_index(0.3)

    def test_bad_construction(self):
        with pytest.raises(ValueError):
            TimeGrid(1.0, 0.0, 4)
        with pytest.raises(ValueError):
            TimeGrid(0.0, 1.0, 0)

    def test_contains(self):
        g = TimeGrid(0.5, 1.5, 2)
        assert g.contains(1.0) and not g.contains(0.0)


class TestConcat:
    def test_constant_shift_cancellation(self):
        g = TimeGrid(0.0, 1.0, 4)
        x = constant_path(2.0, g)
        xp = constant_path(5.0, TimeGrid(0.5, 1.0, 2))
        out = concat(x, xp, 0.5)
        assert np.allclose(out.values, 2.0)

    def test_continuity_at_junction(self):
        g = TimeGrid(0.0, 1.0, 4)
        x = Path(g, np.linspace(0.0, 1.0, 5))
        xp = Path(TimeGrid(1.0, 1.5, 2), np.array([7.0, 8.0, 9.0]))
        out = concat(x, xp, 1.0)
        assert out.at(1.0)[0] == x.at(1.0)[0]

    def test_linear_example(self):
        # x(r) = r on [0,1]; x'(r) = 2r restricted to [0.5,1]; junction 0.5
        x = Path(TimeGrid(0.0, 1.0, 4), np.linspace(0.0, 1.0, 5))
        xp = Path(TimeGrid(0.5, 1.0, 2), np.array([1.0, 1.5, 2.0]))
        out = concat(x, xp, 0.5)
        assert out.at(1.0)[0] == pytest.approx(1.5)

    def test_self_concat_is_identity(self):
        g = TimeGrid(0.0, 1.0, 4)
        x = Path(g, np.array([0.0, 1.0, -1.0, 2.0, 0.5]))
        out = concat(x, x, 0.5)
        assert np.allclose(out.values, x.values)

    def test_mismatched_step_rejected(self):
        x = Path(TimeGrid(0.0, 1.0, 4), np.zeros(5))
        xp = Path(TimeGrid(0.5, 1.0, 5), np.zeros(6))
        with pytest.raises(GridMismatchError):
            concat(x, xp, 0.5)


class TestSupNorm:
    def test_zero_path(self):
        assert sup_norm(constant_path(0.0, TimeGrid(0, 1, 3))) == 0.0

    def test_two_node_example(self):
        x = Path(TimeGrid(0.0, 1.0, 1), np.array([[1.0, 0.0], [0.0, -3.0]]))
        assert sup_norm(x, 1.0) == 3.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        v = rng.standard_normal((21, 2)).cumsum(axis=0)
        x = Path(TimeGrid(0.0, 1.0, 20), v)
        assert sup_norm(x) == pytest.approx(max(np.linalg.norm(r) for r in v))

    def test_monotone_in_cutoff(self):
        rng = np.random.default_rng(1)
        x = Path(TimeGrid(0.0, 1.0, 10), rng.standard_normal(11).cumsum())
        vals = [sup_norm(x, s) for s in x.grid.nodes]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


class TestDInfinity:
    def test_identical_arguments(self):
        x = constant_path(1.0, TimeGrid(0, 1, 4))
        assert d_infinity(0.5, x, 0.5, x) == 0.0

    def test_pure_time_gap(self):
        x = constant_path(0.0, TimeGrid(0, 1, 10))
        assert d_infinity(0.5, x, 0.54, x) == pytest.approx(0.2)

    def test_matches_node_scan(self):
        rng = np.random.default_rng(2)
        x1 = Path(TimeGrid(0.0, 1.0, 8), rng.standard_normal(9).cumsum())
        x2 = Path(TimeGrid(0.0, 1.0, 8), rng.standard_normal(9).cumsum())
        t1, t2 = 0.25, 0.75
        got = d_infinity(t1, x1, t2, x2)
        gap = max(
            abs(x1.at(min(t, t1))[0] - x2.at(min(t, t2))[0]) for t in x1.grid.nodes
        )
        assert got == pytest.approx(np.sqrt(abs(t2 - t1)) + gap)

    def test_metric_properties_on_random_triples(self):
        rng = np.random.default_rng(3)
        g = TimeGrid(0.0, 1.0, 5)
        for _ in range(1000):
            xs = [Path(g, rng.standard_normal(6)) for _ in range(3)]
            ts = rng.choice(g.nodes, 3)
            d12 = d_infinity(ts[0], xs[0], ts[1], xs[1])
            d21 = d_infinity(ts[1], xs[1], ts[0], xs[0])
            d13 = d_infinity(ts[0], xs[0], ts[2], xs[2])
            d32 = d_infinity(ts[2], xs[2], ts[1], xs[1])
            assert d12 >= 0.0
            assert d12 == pytest.approx(d21)
            assert d12 <= d13 + d32 + 1e-12


class TestInterpolate:
    def test_midpoint(self):
        x = interpolate(np.array([0.0, 1.0]), TimeGrid(0.0, 1.0, 1))
        assert x.at(0.5)[0] == pytest.approx(0.5)

    def test_constant(self):
        x = interpolate(np.full(4, 3.0), TimeGrid(0.0, 1.0, 3))
        assert np.allclose(x.values, 3.0)

    def test_tent(self):
        x = interpolate(np.array([0.0, 1.0, 0.0]), TimeGrid(0.0, 1.0, 2))
        assert x.at(0.25)[0] == pytest.approx(0.5)

    def test_roundtrip_identity(self):
        g = TimeGrid(0.0, 1.0, 6)
        pts = np.random.default_rng(4).standard_normal((7, 2))
        x = interpolate(pts, g)
        again = interpolate(np.array([x.at(t) for t in g.nodes]), g)
        assert np.allclose(again.values, x.values)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            interpolate(np.zeros(3), TimeGrid(0.0, 1.0, 3))


def test_csv_roundtrip():
    g = TimeGrid(0.0, 1.0, 3)
    x = Path(g, np.random.default_rng(5).standard_normal((4, 2)))
    back = path_from_csv(path_to_csv(x))
    assert np.allclose(back.values, x.values)
    assert back.grid == x.grid


def test_path_stopped():
    x = Path(TimeGrid(0.0, 1.0, 4), np.array([0.0, 1.0, 2.0, 3.0, 4.0]))
    s = x.stopped(0.5)
    assert np.allclose(s.values[:, 0], [0.0, 1.0, 2.0, 2.0, 2.0])
