import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cm_euler3d import spectral as sp
from cm_euler3d.field_jet import MASKS, GridSpec
from cm_euler3d.scenarios import abc_w0


def solenoidal_field(grid, seed, radius=None):
    """Random zero-mean divergence-free field without Nyquist content."""
    rng = np.random.default_rng(seed)
    f_hat = sp.forward(rng.standard_normal((3, *grid.dims)), grid)
    r = min(grid.dims) // 2 - 1 if radius is None else radius
    f_hat = sp.leray_project(sp.truncate(f_hat, r))
    f_hat.coeffs[:, 0, 0, 0] = 0.0
    return f_hat


def rel(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)


class TestForwardInverse:
    def test_constant_field_is_mean_mode(self):
        g = GridSpec.cube(8)
        f = np.zeros((3, *g.dims))
        f[0] = 1.0
        c = sp.forward(f, g).coeffs
        assert c[0, 0, 0, 0] == pytest.approx(1.0)
        c[0, 0, 0, 0] = 0.0
        assert np.abs(c).max() < 1e-15

    def test_single_mode_two_coefficients(self):
        g = GridSpec.cube(16)
        z = g.nodes()[..., 2]
        f = np.stack([np.sin(z), 0 * z, 0 * z])
        c = sp.forward(f, g).coeffs
        # the half spectrum stores one of the conjugate pair along z
        nz = np.argwhere(np.abs(c[0]) > 1e-12)
        assert len(nz) == 1 and tuple(nz[0]) == (0, 0, 2)
        assert np.abs(c[1:]).max() < 1e-15

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_roundtrip(self, seed):
        g = GridSpec((8, 10, 12))
        f = np.random.default_rng(seed).standard_normal((3, *g.dims))
        assert rel(sp.inverse(sp.forward(f, g)), f) <= 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            sp.forward(np.zeros((3, 8, 8, 9)), GridSpec.cube(8))


class TestBiotSavart:
    def test_single_mode(self):
        g = GridSpec.cube(16)
        z = g.nodes()[..., 2]
        w = np.stack([0 * z, np.cos(z), 0 * z])
        u = sp.inverse(sp.biot_savart(sp.forward(w, g)))
        assert np.abs(u[0] - np.sin(z)).max() < 1e-13
        assert np.abs(u[1:]).max() < 1e-13

    def test_abc_is_beltrami(self):
        g = GridSpec.cube(16)
        w = np.moveaxis(abc_w0(g.nodes().reshape(-1, 3)).reshape(*g.dims, 3), -1, 0)
        u = sp.inverse(sp.biot_savart(sp.forward(w, g)))
        assert np.abs(u - w).max() < 1e-13

    def test_zero(self):
        g = GridSpec.cube(8)
        u = sp.biot_savart(sp.forward(np.zeros((3, *g.dims)), g))
        assert not np.abs(u.coeffs).any()

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_divergence_free_and_zero_mean(self, seed):
        g = GridSpec((12, 8, 10))
        w_hat = sp.forward(np.random.default_rng(seed).standard_normal((3, *g.dims)), g)
        u_hat = sp.biot_savart(w_hat)
        div = sp.divergence(u_hat)
        assert np.abs(div).max() <= 1e-12 * np.abs(w_hat.coeffs).max()
        assert np.abs(u_hat.coeffs[:, 0, 0, 0]).max() == 0.0

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_curl_inverts_biot_savart(self, seed):
        g = GridSpec((16, 12, 8), (4 * np.pi, 4 * np.pi, 2 * np.pi))
        w_hat = solenoidal_field(g, seed)
        back = sp.curl(sp.biot_savart(w_hat))
        assert rel(back.coeffs, w_hat.coeffs) <= 1e-12

    def test_curl_of_constant(self):
        g = GridSpec.cube(8)
        assert np.abs(sp.curl(sp.forward(np.ones((3, *g.dims)), g)).coeffs).max() == 0.0


class TestFilters:
    def test_truncate_identity_and_zero(self):
        g = GridSpec.cube(8)
        f_hat = sp.forward(np.random.default_rng(0).standard_normal((3, *g.dims)), g)
        assert np.array_equal(sp.truncate(f_hat, 100.0).coeffs, f_hat.coeffs)
        t0 = sp.truncate(f_hat, 0.0).coeffs
        assert np.array_equal(t0[:, 0, 0, 0], f_hat.coeffs[:, 0, 0, 0])
        t0[:, 0, 0, 0] = 0
        assert not t0.any()

    def test_truncate_idempotent(self):
        g = GridSpec.cube(12)
        f_hat = sp.forward(np.random.default_rng(1).standard_normal((3, *g.dims)), g)
        once = sp.truncate(f_hat, 3.5)
        assert np.array_equal(sp.truncate(once, 3.5).coeffs, once.coeffs)
        assert np.abs(once.coeffs[..., sp.wavevector_norm(g) > 3.5]).max() == 0.0

    def test_quartic_factor_values(self):
        g = GridSpec.cube(8)
        fac = sp.quartic_filter_factor(g)
        assert fac[0, 0, 0] == 1.0
        assert fac[1, 0, 0] == pytest.approx(np.exp(-0.05))
        assert fac[1, 0, 0] == pytest.approx(0.951229, abs=1e-6)
        assert fac[2, 2, 2] == pytest.approx(np.exp(-2.4))

    def test_filters_commute_with_operators(self):
        g = GridSpec.cube(12)
        w_hat = sp.forward(np.random.default_rng(2).standard_normal((3, *g.dims)), g)
        for op in (lambda f: sp.truncate(f, 4.0), sp.quartic_filter):
            a = op(sp.biot_savart(w_hat)).coeffs
            b = sp.biot_savart(op(w_hat)).coeffs
            assert np.abs(a - b).max() <= 1e-13
            a = op(sp.curl(w_hat)).coeffs
            b = sp.curl(op(w_hat)).coeffs
            assert np.abs(a - b).max() <= 1e-13

    def test_filter_never_amplifies(self):
        g = GridSpec.cube(12)
        w_hat = sp.forward(np.random.default_rng(3).standard_normal((3, *g.dims)), g)
        assert sp.l2_norm_sq(sp.quartic_filter(w_hat)) <= sp.l2_norm_sq(w_hat)


class TestJets:
    def test_constant_has_zero_derivatives(self):
        g = GridSpec.cube(8)
        j = sp.spectral_jets(sp.forward(np.ones((3, *g.dims)), g))
        assert np.allclose(j.data[..., 0], 1.0)
        assert np.abs(j.data[..., 1:]).max() < 1e-14

    def test_sine_derivative(self):
        g = GridSpec.cube(16)
        x = g.nodes()[..., 0]
        f = np.stack([np.sin(x), 0 * x, 0 * x])
        j = sp.spectral_jets(sp.forward(f, g))
        assert np.abs(j.data[..., 0, 1] - np.cos(x)).max() < 1e-13

    def test_mixed_partial(self):
        g = GridSpec.cube(16)
        X, Y, _ = np.moveaxis(g.nodes(), -1, 0)
        f = np.stack([np.sin(X) * np.sin(Y), 0 * X, 0 * X])
        j = sp.spectral_jets(sp.forward(f, g))
        k = MASKS.index((1, 1, 0))
        assert np.abs(j.data[..., 0, k] - np.cos(X) * np.cos(Y)).max() < 1e-13

    def test_gradient_matches_jets(self):
        g = GridSpec.cube(8)
        f_hat = sp.forward(np.random.default_rng(4).standard_normal((3, *g.dims)), g)
        G = sp.gradient(f_hat)
        j = sp.spectral_jets(f_hat)
        for m in range(3):
            assert np.allclose(np.moveaxis(G[:, m], 0, -1), j.data[..., 1 + m], atol=1e-13)


class TestSpectrum:
    def test_single_mode_shell(self):
        g = GridSpec.cube(16)
        x = g.nodes()[..., 0]
        amp = 0.7
        # cos(3 * 2 pi x / L) carries amplitude amp / 2 on each of xi = +-3
        f = np.stack([amp * np.cos(3 * 2 * np.pi * (x + 2 * np.pi) / g.lengths[0]),
                      0 * x, 0 * x])
        s = sp.isotropic_spectrum(sp.forward(f, g))
        A = amp / 2
        assert s[3] == pytest.approx(0.5 * 2 * A ** 2)
        assert np.abs(np.delete(s, 3)).max() < 1e-25

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_parseval(self, seed):
        g = GridSpec((8, 12, 10))
        f = np.random.default_rng(seed).standard_normal((3, *g.dims))
        s = sp.isotropic_spectrum(sp.forward(f, g))
        assert 2 * s.sum() == pytest.approx((f ** 2).sum(axis=0).mean(), rel=1e-12)

    def test_zero_field(self):
        g = GridSpec.cube(8)
        assert not sp.isotropic_spectrum(sp.forward(np.zeros((3, *g.dims)), g)).any()

    def test_inner_matches_quadrature(self):
        g = GridSpec.cube(8)
        rng = np.random.default_rng(5)
        f, h = rng.standard_normal((2, 3, *g.dims))
        assert sp.inner(sp.forward(f, g), sp.forward(h, g)) == pytest.approx(
            (f * h).sum(axis=0).mean(), rel=1e-12)

    def test_write_spectrum(self, tmp_path):
        sp.write_spectrum(tmp_path / "s.txt", np.array([0.0, 1.5, 2.25]))
        rows = [ln.split() for ln in (tmp_path / "s.txt").read_text().splitlines()]
        assert rows == [["0", "0"], ["1", "1.5"], ["2", "2.25"]]


def test_fft_workers_env(monkeypatch):
    monkeypatch.setenv("CM_THREADS", "1")
    assert sp.fft_workers() == 1
