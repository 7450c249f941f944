import numpy as np
import pytest

from noisydeblur.errors import ValidationError
from noisydeblur.imaging import GradientField, delta_psf, fft_convolve, gradient
from noisydeblur.metrics import kernel_similarity
from noisydeblur.psfest import (
    HqsConfig,
    TraceRow,
    estimate_psf_exemplar,
    extract_kernel,
    fft_deconv,
    hqs_objective,
    kernel_least_squares,
    kernel_step,
    latent_g_step,
    latent_image_step,
    write_trace,
)
from noisydeblur.synthesis import WalkParams, random_walk_psf

from conftest import voronoi_texture

TEXTURE = voronoi_texture(32, 3, 20, 4)
KERNEL = random_walk_psf(WalkParams(l=3, seed=11, inertia=0.2, jitter=0.3))
BLURRY = fft_convolve(TEXTURE, KERNEL)


def surrogate(latent, b1, i1, kernel, aux, beta, cfg):
    """Beta-augmented objective evaluated with spatial-domain operators."""
    data = float(np.sum((fft_convolve(latent, kernel) - b1) ** 2))
    gl = gradient(latent)
    ge = gradient(i1)
    exemplar = cfg.mu_exemplar * float(
        np.sum((gl.horizontal - ge.horizontal) ** 2)
        + np.sum((gl.vertical - ge.vertical) ** 2)
    )
    split = beta * float(
        np.sum((gl.horizontal - aux.horizontal) ** 2)
        + np.sum((gl.vertical - aux.vertical) ** 2)
    )
    count = np.count_nonzero((aux.horizontal != 0) | (aux.vertical != 0))
    return data + exemplar + split + cfg.lambda0 * count


class TestHqsConfig:
    def test_defaults_validate(self):
        cfg = HqsConfig().validate()
        assert cfg.beta_start == 2 * cfg.lambda0

    def test_explicit_beta0(self):
        assert HqsConfig(beta0=10.0).validate().beta_start == 10.0

    def test_invalid_values_rejected(self):
        with pytest.raises(ValidationError):
            HqsConfig(lambda0=0.0).validate()
        with pytest.raises(ValidationError):
            HqsConfig(beta0=2e5).validate()  # above beta_max
        with pytest.raises(ValidationError):
            HqsConfig(beta_growth=1.0).validate()
        with pytest.raises(ValidationError):
            HqsConfig(kernel_prune=0.5).validate()
        with pytest.raises(ValidationError):
            HqsConfig(outer_iters=0).validate()


class TestExtractKernel:
    def test_origin_mass_becomes_centered_delta(self):
        full = np.zeros((16, 16))
        full[0, 0] = 3.0
        assert np.array_equal(extract_kernel(full, 5), delta_psf(5))

    def test_prune_drops_small_weights(self):
        full = np.zeros((16, 16))
        full[0, 0] = 1.0
        full[0, 1] = 0.01
        k = extract_kernel(full, 5, prune=0.05)
        assert np.array_equal(k, delta_psf(5))

    def test_negatives_zeroed(self):
        full = np.zeros((16, 16))
        full[0, 0] = 1.0
        full[1, 0] = -0.5
        k = extract_kernel(full, 3)
        assert np.all(k >= 0) and np.isclose(k.sum(), 1.0)

    def test_no_positive_mass_rejected(self):
        with pytest.raises(ValidationError):
            extract_kernel(-np.ones((8, 8)), 3)


class TestFftDeconv:
    def test_exact_on_noise_free_circular_pair(self):
        k = fft_deconv(BLURRY, TEXTURE, 7, eps=0.0)
        assert kernel_similarity(k, KERNEL) >= 0.999

    def test_identical_pair_gives_delta(self):
        k = fft_deconv(TEXTURE, TEXTURE, 5, eps=0.0)
        assert np.allclose(k, delta_psf(5), atol=1e-12)
        assert k[2, 2] == k.max()

    def test_small_eps_still_close(self):
        k = fft_deconv(BLURRY, TEXTURE, 7, eps=1e-3)
        assert kernel_similarity(k, KERNEL) >= 0.95

    def test_all_zero_sharp_rejected(self):
        with pytest.raises(ValidationError):
            fft_deconv(BLURRY, np.zeros_like(TEXTURE), 7)

    def test_zero_bin_with_zero_eps_rejected(self):
        flat = np.full((16, 16), 0.5)
        with pytest.raises(ValidationError):
            fft_deconv(flat, flat, 3, eps=0.0)

    def test_color_inputs_reduced_to_luminance(self):
        b3 = np.stack([BLURRY] * 3, axis=2)
        i3 = np.stack([TEXTURE] * 3, axis=2)
        assert np.allclose(fft_deconv(b3, i3, 7, eps=0.0),
                           fft_deconv(BLURRY, TEXTURE, 7, eps=0.0), atol=1e-12)

    def test_even_side_rejected(self):
        with pytest.raises(ValidationError):
            fft_deconv(BLURRY, TEXTURE, 6)


class TestLatentGStep:
    def test_weak_site_zeroed(self):
        # magnitude^2 = 0.001 < lambda0/beta = 0.002
        g = GradientField(np.full((1, 1), np.sqrt(0.001)), np.zeros((1, 1)))
        out = latent_g_step(g, lambda0=0.002, beta=1.0)
        assert out.horizontal[0, 0] == 0.0 and out.vertical[0, 0] == 0.0

    def test_strong_site_kept(self):
        g = GradientField(np.full((1, 1), np.sqrt(0.01)), np.zeros((1, 1)))
        out = latent_g_step(g, lambda0=0.002, beta=1.0)
        assert out.horizontal[0, 0] == g.horizontal[0, 0]

    def test_matches_elementwise_oracle(self, rng):
        gh = rng.standard_normal((12, 12)) * 0.05
        gv = rng.standard_normal((12, 12)) * 0.05
        lambda0, beta = 0.002, 1.3
        out = latent_g_step(GradientField(gh, gv), lambda0, beta)
        for y in range(12):
            for x in range(12):
                keep = gh[y, x] ** 2 + gv[y, x] ** 2 >= lambda0 / beta
                if keep:
                    assert out.horizontal[y, x] == gh[y, x]
                    assert out.vertical[y, x] == gv[y, x]
                else:
                    assert out.horizontal[y, x] == 0.0
                    assert out.vertical[y, x] == 0.0

    def test_is_exact_minimizer_per_site(self, rng):
        # Compare against both candidate minima: zero or pass-through.
        gh = rng.standard_normal((8, 8)) * 0.06
        gv = rng.standard_normal((8, 8)) * 0.06
        lambda0, beta = 0.002, 2.0
        out = latent_g_step(GradientField(gh, gv), lambda0, beta)

        def site_cost(oh, ov, y, x):
            nz = (oh != 0.0) or (ov != 0.0)
            return lambda0 * nz + beta * ((oh - gh[y, x]) ** 2 + (ov - gv[y, x]) ** 2)

        for y in range(8):
            for x in range(8):
                chosen = site_cost(out.horizontal[y, x], out.vertical[y, x], y, x)
                assert chosen <= site_cost(0.0, 0.0, y, x) + 1e-12
                assert chosen <= site_cost(gh[y, x], gv[y, x], y, x) + 1e-12

    def test_nonpositive_beta_rejected(self):
        g = GradientField(np.zeros((2, 2)), np.zeros((2, 2)))
        with pytest.raises(ValidationError):
            latent_g_step(g, 0.002, 0.0)


class TestLatentImageStep:
    def test_all_zero_inputs_give_zero_image(self):
        z = np.zeros((16, 16))
        aux = GradientField(z.copy(), z.copy())
        out = latent_image_step(z, z, delta_psf(3), aux, beta=1.0, mu_exemplar=0.001)
        assert np.allclose(out, 0.0, atol=1e-12)

    def test_delta_kernel_large_beta_recovers_consistent_target(self):
        # With g = grad(b1) and a delta kernel the system is exactly
        # consistent at I_l = b1.
        aux = gradient(BLURRY)
        out = latent_image_step(BLURRY, BLURRY, delta_psf(3), aux,
                                beta=1e6, mu_exemplar=0.0)
        assert np.max(np.abs(out - BLURRY)) < 1e-6

    def test_minimizes_surrogate_against_random_probes(self, rng):
        cfg = HqsConfig()
        aux = latent_g_step(gradient(TEXTURE), cfg.lambda0, 0.01)
        beta = 0.01
        latent = latent_image_step(BLURRY, TEXTURE, KERNEL, aux, beta,
                                   cfg.mu_exemplar)
        base = surrogate(latent, BLURRY, TEXTURE, KERNEL, aux, beta, cfg)
        for _ in range(100):
            probe = latent + rng.standard_normal(latent.shape) * rng.choice(
                [1e-4, 1e-2, 1.0]
            )
            assert base <= surrogate(probe, BLURRY, TEXTURE, KERNEL, aux,
                                     beta, cfg) + 1e-9

    def test_stationary_point_of_surrogate(self, rng):
        # Directional finite differences of the quadratic surrogate
        # vanish at the closed-form solution.
        cfg = HqsConfig()
        beta = 0.05
        aux = latent_g_step(gradient(TEXTURE), cfg.lambda0, beta)
        latent = latent_image_step(BLURRY, TEXTURE, KERNEL, aux, beta,
                                   cfg.mu_exemplar)
        h = 1e-5
        for _ in range(5):
            d = rng.standard_normal(latent.shape)
            d /= np.linalg.norm(d)
            qp = surrogate(latent + h * d, BLURRY, TEXTURE, KERNEL, aux, beta, cfg)
            qm = surrogate(latent - h * d, BLURRY, TEXTURE, KERNEL, aux, beta, cfg)
            assert abs(qp - qm) / (2 * h) < 1e-8


class TestKernelStep:
    def test_recovers_kernel_without_ridge(self):
        full = kernel_least_squares(TEXTURE, BLURRY, ridge=0.0)
        k = extract_kernel(full, 7)
        assert kernel_similarity(k, KERNEL) >= 0.999

    def test_recovers_kernel_with_default_config(self):
        k = kernel_step(TEXTURE, BLURRY, 7, HqsConfig())
        assert kernel_similarity(k, KERNEL) >= 0.99

    def test_identical_pair_gives_delta(self):
        k = kernel_step(TEXTURE, TEXTURE, 7, HqsConfig())
        assert np.array_equal(k, delta_psf(7))

    def test_constant_latent_rejected(self):
        with pytest.raises(ValidationError):
            kernel_least_squares(np.full((16, 16), 0.3), BLURRY, ridge=1e-3)

    def test_pre_projection_solution_is_stationary(self, rng):
        # The ridge objective's directional derivatives vanish at the
        # full-grid solution (normal equations satisfied).
        ridge = 1e-3
        full = kernel_least_squares(TEXTURE, BLURRY, ridge=ridge)

        def objective(k_full):
            gl = gradient(TEXTURE)
            gb = gradient(BLURRY)
            total = ridge * float(np.sum(k_full**2))
            for x, y in ((gl.horizontal, gb.horizontal), (gl.vertical, gb.vertical)):
                pred = np.real(np.fft.ifft2(np.fft.fft2(x) * np.fft.fft2(k_full)))
                total += float(np.sum((pred - y) ** 2))
            return total

        h = 1e-6
        base_scale = max(objective(full), 1.0)
        for _ in range(5):
            d = rng.standard_normal(full.shape)
            d /= np.linalg.norm(d)
            deriv = (objective(full + h * d) - objective(full - h * d)) / (2 * h)
            assert abs(deriv) / base_scale < 1e-8

    def test_image_domain_solve_also_recovers(self):
        full = kernel_least_squares(TEXTURE, BLURRY, ridge=0.0,
                                    gradient_domain=False)
        assert kernel_similarity(extract_kernel(full, 7), KERNEL) >= 0.999


class TestEstimateExemplar:
    def test_noise_free_recovery(self):
        k, state = estimate_psf_exemplar(BLURRY, TEXTURE, 7)
        assert kernel_similarity(k, KERNEL) >= 0.95
        assert len(state.objective_trace) == HqsConfig().outer_iters
        assert all(np.isfinite(r.objective) for r in state.objective_trace)

    def test_identical_pair_gives_delta_and_tiny_data_term(self):
        # The shared image is piecewise constant, so the sparsity prior
        # leaves it fixed; only the counted-sites term keeps the
        # objective positive.
        k, state = estimate_psf_exemplar(TEXTURE, TEXTURE, 7)
        assert kernel_similarity(k, delta_psf(7)) == 1.0
        assert all(r.data_term < 1e-3 for r in state.objective_trace)
        assert all(r.l0_count > 0 for r in state.objective_trace)

    def test_deterministic(self):
        k1, s1 = estimate_psf_exemplar(BLURRY, TEXTURE, 7)
        k2, s2 = estimate_psf_exemplar(BLURRY, TEXTURE, 7)
        assert np.array_equal(k1, k2)
        assert s1.objective_trace == s2.objective_trace

    def test_beta_ladder_round_count(self):
        cfg = HqsConfig(beta0=10.0)
        _, state = estimate_psf_exemplar(BLURRY, TEXTURE, 7, cfg)
        expected = int(np.floor(np.log(cfg.beta_max / cfg.beta_start)
                                / np.log(cfg.beta_growth))) + 1
        assert all(r.beta_rounds == expected for r in state.objective_trace)

    def test_zero_exemplar_falls_back_to_delta_init(self):
        # fft_deconv rejects the all-zero sharp estimate; the run still
        # completes from the delta initializer.
        k, _ = estimate_psf_exemplar(BLURRY, np.zeros_like(BLURRY), 7)
        assert k.shape == (7, 7)
        assert np.isclose(k.sum(), 1.0) and np.all(k >= 0)

    def test_trace_row_consistency(self):
        cfg = HqsConfig()
        _, state = estimate_psf_exemplar(BLURRY, TEXTURE, 7, cfg)
        for i, row in enumerate(state.objective_trace, start=1):
            assert row.outer_iter == i
            assert row.objective == pytest.approx(
                row.data_term + cfg.lambda0 * row.l0_count, abs=1e-6, rel=None
            ) or row.objective > row.data_term  # exemplar term adds the rest


class TestSurrogateMonotonicity:
    def test_g_then_image_step_never_increases(self):
        cfg = HqsConfig()
        rng = np.random.default_rng(17)
        for trial in range(20):
            tex = voronoi_texture(16, 100 + trial, 12, 4)
            ker = random_walk_psf(WalkParams(l=3, seed=200 + trial,
                                             inertia=0.3, jitter=0.4))
            b1 = fft_convolve(tex, ker)
            latent = tex + 0.1 * rng.standard_normal(tex.shape)
            aux = GradientField(rng.standard_normal(tex.shape) * 0.05,
                                rng.standard_normal(tex.shape) * 0.05)
            beta = float(rng.choice([0.01, 0.1, 1.0, 10.0]))

            q0 = surrogate(latent, b1, tex, ker, aux, beta, cfg)
            aux2 = latent_g_step(gradient(latent), cfg.lambda0, beta)
            q1 = surrogate(latent, b1, tex, ker, aux2, beta, cfg)
            latent2 = latent_image_step(b1, tex, ker, aux2, beta, cfg.mu_exemplar)
            q2 = surrogate(latent2, b1, tex, ker, aux2, beta, cfg)
            assert q1 <= q0 + 1e-9
            assert q2 <= q1 + 1e-9


class TestTraceIO:
    def test_write_and_parse_roundtrip(self, tmp_path):
        rows = [TraceRow(1, 25, 0.123456789012345, 0.1, 42),
                TraceRow(2, 25, 0.05, 0.02, 17)]
        path = tmp_path / "trace.csv"
        write_trace(path, rows)
        lines = path.read_text().splitlines()
        assert lines[0] == "outer_iter,beta_rounds,objective,data_term,l0_count"
        parsed = []
        for ln in lines[1:]:
            o, r, obj, data, c = ln.split(",")
            parsed.append(TraceRow(int(o), int(r), float(obj), float(data), int(c)))
        assert parsed == rows
