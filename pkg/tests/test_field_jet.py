import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cm_euler3d.errors import ConfigError
from cm_euler3d.field_jet import (DEFAULT_EPS, MASKS, GridSpec, JetScalarField, JetVectorField,
                                  basis_1d, eps_diff_jets, evaluate, evaluate_vec, project,
                                  project_vec, read_field, write_field)


def sine_jets(grid):
    """Analytic jets of f = sin x sin y sin z."""
    X, Y, Z = np.meshgrid(*grid.axes(), indexing="ij")
    fs = [(np.sin(X), np.cos(X)), (np.sin(Y), np.cos(Y)), (np.sin(Z), np.cos(Z))]
    return np.stack([fs[0][m[0]] * fs[1][m[1]] * fs[2][m[2]] for m in MASKS])


def random_points(rng, grid, n):
    return np.asarray(grid.origin) + rng.random((n, 3)) * np.asarray(grid.lengths)


class TestGridSpec:
    def test_spacing_and_nodes(self):
        g = GridSpec((8, 6, 4), (4 * np.pi, 4 * np.pi, 2 * np.pi))
        assert np.allclose(g.spacing, [np.pi / 2, 2 * np.pi / 3, np.pi / 2])
        assert g.nodes().shape == (8, 6, 4, 3)
        assert g.n_nodes == 8 * 6 * 4

    def test_rejects_small_dims(self):
        with pytest.raises(ConfigError):
            GridSpec((3, 8, 8))

    def test_wrap_into_box(self):
        g = GridSpec.cube(8)
        x = np.array([[2 * np.pi, -2 * np.pi - 1e-3, 7.0]])
        w = g.wrap(x)
        lo, L = np.asarray(g.origin), np.asarray(g.lengths)
        assert np.all(w >= lo) and np.all(w < lo + L)
        assert w[0, 0] == pytest.approx(-2 * np.pi)


class TestBasis:
    def test_node_values(self):
        assert basis_1d(0.0, "q0") == 1.0
        assert basis_1d(0.0, "q1") == 0.0
        assert basis_1d(1.0, "q0") == 0.0
        assert basis_1d(-1.0, "q1") == 0.0

    def test_midpoint_values(self):
        assert basis_1d(0.5, "q0") == pytest.approx(0.5)
        assert basis_1d(0.5, "q1") == pytest.approx(0.125)

    def test_derivatives_at_nodes(self):
        assert basis_1d(0.0, "q0", 1) == 0.0
        assert basis_1d(0.0, "q1", 1) == 1.0
        assert basis_1d(1.0, "q1", 1) == 0.0

    @given(st.floats(-0.999, 0.999))
    def test_derivative_matches_difference(self, s):
        # q1 has a second-derivative jump at 0, so the central difference
        # there is only accurate to O(h)
        h = 1e-7
        for which in ("q0", "q1"):
            fd = (basis_1d(s + h, which) - basis_1d(s - h, which)) / (2 * h)
            assert basis_1d(s, which, 1) == pytest.approx(fd, abs=1e-6)

    def test_bad_selection(self):
        with pytest.raises(ConfigError):
            basis_1d(0.2, "q2")


class TestEvaluation:
    def test_constant_field(self):
        g = GridSpec.cube(8)
        c = np.zeros((*g.dims, 8))
        c[..., 0] = 3.5
        f = JetScalarField(g, c)
        pts = random_points(np.random.default_rng(0), g, 50)
        assert np.allclose(f.eval(pts), 3.5, atol=1e-14)
        for m in MASKS[1:]:
            assert np.allclose(f.eval(pts, m), 0.0, atol=1e-13)

    def test_node_reproduction(self):
        g = GridSpec((8, 10, 12))
        rng = np.random.default_rng(1)
        f = project(rng.standard_normal((8, *g.dims)), g)
        pts = g.nodes().reshape(-1, 3)
        for k, m in enumerate(MASKS):
            vals = f.eval(pts, m)
            assert np.allclose(vals, f.coeffs[..., k].reshape(-1), rtol=0, atol=1e-12)

    def test_partition_of_unity(self):
        g = GridSpec.cube(8)
        c = np.zeros((*g.dims, 8))
        c[..., 0] = 1.0
        f = JetScalarField(g, c)
        x = random_points(np.random.default_rng(7), g, 200)
        assert np.allclose(f.eval(x), 1.0, atol=1e-14)

    def test_trilinear_reproduction(self):
        # a box wide enough that the sampled points never wrap
        g = GridSpec((8, 8, 8), (8.0, 8.0, 8.0), (0.0, 0.0, 0.0))
        X, Y, Z = np.meshgrid(*g.axes(), indexing="ij")
        a = [1.0, 0.3, -0.2, 0.5, 0.1, -0.4, 0.25, 0.05]

        def f(x, y, z):
            return (a[0] + a[1] * x + a[2] * y + a[3] * z + a[4] * x * y + a[5] * x * z
                    + a[6] * y * z + a[7] * x * y * z)
        jets = {(0, 0, 0): f(X, Y, Z), (1, 0, 0): a[1] + a[4] * Y + a[5] * Z + a[7] * Y * Z,
                (0, 1, 0): a[2] + a[4] * X + a[6] * Z + a[7] * X * Z,
                (0, 0, 1): a[3] + a[5] * X + a[6] * Y + a[7] * X * Y,
                (1, 1, 0): a[4] + a[7] * Z + 0 * X, (1, 0, 1): a[5] + a[7] * Y + 0 * X,
                (0, 1, 1): a[6] + a[7] * X + 0 * Y, (1, 1, 1): a[7] + 0 * X}
        field = project(jets, g)
        rng = np.random.default_rng(3)
        x = rng.random((300, 3)) * 6.9  # interior cells only
        assert np.allclose(field.eval(x), f(*x.T), atol=1e-12)
        fx = a[1] + a[4] * x[:, 1] + a[5] * x[:, 2] + a[7] * x[:, 1] * x[:, 2]
        assert np.allclose(field.eval(x, (1, 0, 0)), fx, atol=1e-12)

    def test_linear_vector_jacobian(self):
        g = GridSpec((8, 8, 8), (8.0, 8.0, 8.0), (0.0, 0.0, 0.0))
        A = np.array([[1.0, 0.2, -0.3], [0.0, 0.5, 0.1], [0.7, -0.1, 2.0]])
        nodes = g.nodes()
        samples = np.zeros((3, 8, *g.dims))
        samples[:, 0] = np.einsum("ij,xyzj->ixyz", A, nodes)
        for m in range(3):
            samples[:, 1 + m] = A[:, m][:, None, None, None]
        f = project_vec(samples, g)
        x = np.random.default_rng(2).random((20, 3)) * 6.9
        _, J = f.value_and_jacobian(x)
        assert np.allclose(J, A[None], atol=1e-12)

    def test_vector_constants_and_zero(self):
        g = GridSpec.cube(8)
        data = np.zeros((*g.dims, 3, 8))
        data[..., :, 0] = [1.0, 2.0, 3.0]
        f = JetVectorField(g, data)
        x = random_points(np.random.default_rng(4), g, 10)
        assert np.allclose(evaluate_vec(f, x), [1.0, 2.0, 3.0])
        assert np.allclose(JetVectorField.zeros(g).eval(x), 0.0)

    def test_components_roundtrip(self):
        g = GridSpec.cube(8)
        rng = np.random.default_rng(5)
        f = JetVectorField(g, rng.standard_normal((*g.dims, 3, 8)))
        back = JetVectorField.from_components(f.components)
        assert np.array_equal(back.data, f.data)

    def test_single_point_returns_scalar(self):
        g = GridSpec.cube(8)
        f = project(sine_jets(g), g)
        assert isinstance(evaluate(f, np.zeros(3)), float)

    def test_periodic_wrap(self):
        g = GridSpec.cube(16)
        f = project(sine_jets(g), g)
        x = random_points(np.random.default_rng(6), g, 30)
        assert np.allclose(f.eval(x), f.eval(x + np.asarray(g.lengths) * [1, -2, 3]), atol=1e-12)

    def test_fourth_order_convergence(self):
        rng = np.random.default_rng(11)
        levels = [16, 24, 32, 48, 64]
        errs = []
        for n in levels:
            g = GridSpec.cube(n)
            f = project(sine_jets(g), g)
            x = random_points(rng, g, 4000)
            errs.append(np.abs(f.eval(x) - np.prod(np.sin(x), axis=1)).max())
        slope = -np.polyfit(np.log(levels), np.log(errs), 1)[0]
        assert 3.7 <= slope <= 4.3

    def test_cosine_midpoint_error(self):
        errs = []
        for n in (16, 32):
            g = GridSpec.cube(n)
            X, Y, Z = np.meshgrid(*g.axes(), indexing="ij")
            jets = {m: np.zeros(g.dims) for m in MASKS}
            jets[(0, 0, 0)] = np.cos(Y)
            jets[(0, 1, 0)] = -np.sin(Y)
            f = project(jets, g)
            mids = g.nodes().reshape(-1, 3) + 0.5 * g.spacing
            errs.append(np.abs(f.eval(mids) - np.cos(mids[:, 1])).max())
            assert errs[-1] <= g.spacing[0] ** 4
        assert errs[0] / errs[1] > 12


class TestProject:
    def test_idempotent(self):
        g = GridSpec((8, 8, 10))
        f = project(np.random.default_rng(0).standard_normal((8, *g.dims)), g)
        again = project(np.moveaxis(f.coeffs, -1, 0), g)
        assert np.array_equal(again.coeffs, f.coeffs)

    def test_zero(self):
        g = GridSpec.cube(8)
        f = project(np.zeros((8, *g.dims)), g)
        assert not f.coeffs.any()

    def test_shape_mismatch(self):
        g = GridSpec.cube(8)
        with pytest.raises(ConfigError):
            project(np.zeros((8, 8, 8, 9)), g)
        with pytest.raises(ConfigError):
            project({(0, 0, 0): np.zeros(g.dims)}, g)
        with pytest.raises(ConfigError):
            JetScalarField(g, np.zeros((8, 8, 8, 7)))


class TestEpsDiff:
    def test_identity_map(self):
        g = GridSpec.cube(16)
        d = eps_diff_jets(lambda p: p, g, DEFAULT_EPS)
        assert np.abs(d.data).max() <= 1e-11

    @staticmethod
    def _fine_grid():
        # cell width below 0.1, the regime the roundoff envelope refers to
        return GridSpec((16, 16, 16), (1.5, 1.5, 1.5), (0.2, 0.2, 0.2))

    def test_linear_map(self):
        g = self._fine_grid()
        A = np.array([[1.1, 0.2, 0.0], [-0.1, 0.9, 0.3], [0.05, 0.0, 1.0]])
        d = eps_diff_jets(lambda p: p @ A.T, g, DEFAULT_EPS)
        J = d.data[..., 1:4] + np.eye(3)
        assert np.abs(J - A).max() <= 1e-10
        assert np.abs(d.data[..., 4:7]).max() <= 1e-10
        # the third mixed partial carries roundoff ~ delta / eps^3; its
        # contribution to the interpolant is scaled by dx^3
        assert np.abs(d.data[..., 7]).max() * g.spacing[0] ** 3 <= 1e-10

    @staticmethod
    def _sine_map(p):
        return p + 0.01 * np.stack([np.sin(p[:, 1]), np.sin(p[:, 2]), np.sin(p[:, 0])], axis=1)

    def test_sine_map_mixed_partial(self):
        # every component depends on a single coordinate, so d_xy vanishes
        g = GridSpec.cube(32)
        d = eps_diff_jets(self._sine_map, g)
        assert np.abs(d.data[..., 4]).max() <= 1e-8

    def test_first_derivatives(self):
        g = GridSpec.cube(32)
        d = eps_diff_jets(self._sine_map, g)
        X, Y, Z = np.moveaxis(g.nodes(), -1, 0)
        assert np.abs(d.data[..., 0, 2] - 0.01 * np.cos(Y)).max() <= 1e-8
        assert np.abs(d.data[..., 2, 1] - 0.01 * np.cos(X)).max() <= 1e-8

    def test_product_map_all_mixed_partials(self):
        g = self._fine_grid()

        def f(p):
            return p + 0.01 * np.prod(np.sin(p), axis=1)[:, None] * np.ones(3)
        d = eps_diff_jets(f, g)
        exact = 0.01 * sine_jets(g)
        h = g.spacing[0]
        for k, m in enumerate(MASKS):
            err = np.abs(d.data[..., :, k] - exact[k][..., None]).max()
            if sum(m) < 3:
                assert err <= 1e-8, (m, err)
            assert err * h ** sum(m) <= 1e-8, (m, err)

    def test_eps_bounds(self):
        g = GridSpec.cube(8)
        with pytest.raises(ConfigError):
            eps_diff_jets(lambda p: p, g, 0.0)
        with pytest.raises(ConfigError):
            eps_diff_jets(lambda p: p, g, g.spacing[0])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_dump_roundtrip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    dims = tuple(int(v) for v in rng.integers(4, 9, size=3))
    g = GridSpec(dims, tuple(rng.uniform(1, 10, 3)), tuple(rng.uniform(-5, 5, 3)))
    f = JetScalarField(g, rng.standard_normal((*dims, 8)))
    path = tmp_path_factory.mktemp("dump") / "f.cmjf"
    write_field(path, f)
    back = read_field(path)
    assert back.grid == g
    assert np.array_equal(back.coeffs, f.coeffs)


def test_dump_header_layout(tmp_path):
    import struct
    g = GridSpec((4, 5, 6))
    f = JetScalarField(g, np.arange(4 * 5 * 6 * 8, dtype=float).reshape(4, 5, 6, 8))
    write_field(tmp_path / "a.cmjf", f)
    raw = (tmp_path / "a.cmjf").read_bytes()
    magic, ver, nx, ny, nz = struct.unpack_from("<4sI3I", raw)
    assert (magic, nx, ny, nz) == (b"CMJF", 4, 5, 6)
    first = np.frombuffer(raw, "<f8", count=4 * 5 * 6, offset=struct.calcsize("<4sI3I3d3d"))
    # x-fastest order of the value array
    assert first[1] == f.coeffs[1, 0, 0, 0]
    assert first[4] == f.coeffs[0, 1, 0, 0]
