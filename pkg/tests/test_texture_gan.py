import numpy as np
import pytest
import torch

from oracles import (
    fm_layers_oracle,
    hinge_d_two_fakes_oracle,
    hinge_g_two_fakes_oracle,
    kl_oracle,
    mean_abs_oracle,
)
from fdcheck import check_gradients
from tinymodels import jitter_parameters, tiny_batch, tiny_texture_bundle

from stampgan.domain import ImageTensor, LatentVector
from stampgan.mask_gan import latent_reconstruction_loss
from stampgan.texture_gan import (
    TextureGanBundle,
    TextureLossBreakdown,
    composite_torch,
    feature_matching_loss,
    hinge_d_loss_two_fakes,
    hinge_g_loss_two_fakes,
    image_reconstruction_loss,
    kl_divergence,
    perceptual_loss,
    reparametrize,
    texture_train_step,
)

REL_TOL = 1e-6


def _rel_close(a, b, tol=REL_TOL):
    return abs(a - b) <= tol * max(abs(a), abs(b), 1e-30)


class TestAdversarial:
    def test_margins_satisfied(self):
        d = hinge_d_loss_two_fakes(torch.tensor([1.0]), torch.tensor([-1.0]),
                                   torch.tensor([-1.0]))
        assert d.item() == 0.0

    def test_all_zero_scores_give_three(self):
        zero = torch.tensor([0.0])
        assert hinge_d_loss_two_fakes(zero, zero, zero).item() == 3.0

    def test_random_scores_match_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            r, fa, fb = (rng.normal(0, 2, size=4) for _ in range(3))
            d = hinge_d_loss_two_fakes(torch.tensor(r), torch.tensor(fa),
                                       torch.tensor(fb)).item()
            g = hinge_g_loss_two_fakes(torch.tensor(fa), torch.tensor(fb)).item()
            assert _rel_close(d, hinge_d_two_fakes_oracle(r, fa, fb))
            assert _rel_close(g, hinge_g_two_fakes_oracle(fa, fb))


class TestEncoder:
    def test_clamped_logvar_floor_collapses_to_mean(self):
        # at the clamp floor the residual std is exp(-5); the sample sits on
        # the mean up to that factor
        mu = torch.randn(2, 8, dtype=torch.float64)
        logvar = torch.full((2, 8), -1e9, dtype=torch.float64).clamp(-10, 10)
        eps = torch.randn(2, 8, dtype=torch.float64)
        z = reparametrize(mu, logvar, eps=eps)
        bound = float(np.exp(-5.0)) * eps.abs().max().item() * (1 + 1e-12)
        assert (z - mu).abs().max().item() <= bound

    def test_kl_of_standard_normal_is_zero(self):
        mu = torch.zeros(3, 8, dtype=torch.float64)
        logvar = torch.zeros(3, 8, dtype=torch.float64)
        assert kl_divergence(mu, logvar).item() == 0.0

    def test_kl_unit_mean_dim8_is_four(self):
        mu = torch.ones(5, 8, dtype=torch.float64)
        logvar = torch.zeros(5, 8, dtype=torch.float64)
        assert kl_divergence(mu, logvar).item() == pytest.approx(4.0, rel=1e-12)

    def test_kl_matches_oracle(self):
        rng = np.random.default_rng(4)
        mu = rng.normal(size=(3, 8))
        logvar = rng.normal(size=(3, 8))
        got = kl_divergence(torch.tensor(mu), torch.tensor(logvar)).item()
        assert _rel_close(got, kl_oracle(mu, logvar))

    def test_reparametrization(self):
        bundle = tiny_texture_bundle(seed=1)
        batch = tiny_batch(seed=1)
        eps = torch.randn(2, 2, dtype=torch.float64)
        mu, logvar, z = bundle.encode(batch["foreground"], eps=eps)
        expected = mu + torch.exp(0.5 * logvar) * eps
        assert torch.equal(z, expected)
        assert logvar.min().item() >= -10.0 and logvar.max().item() <= 10.0


class TestFeatureMatching:
    def test_identical_features_zero(self):
        feats = [torch.randn(2, 3, 4, 4, dtype=torch.float64)]
        assert feature_matching_loss(feats, [f.clone() for f in feats]).item() == 0.0

    def test_matches_oracle(self):
        rng = np.random.default_rng(6)
        fake = [rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 6, 2, 2))]
        real = [rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 6, 2, 2))]
        got = feature_matching_loss([torch.tensor(x) for x in fake],
                                    [torch.tensor(x) for x in real]).item()
        assert _rel_close(got, fm_layers_oracle(fake, real))

    def test_quadratic_homogeneity(self):
        rng = np.random.default_rng(7)
        fake = [torch.tensor(rng.normal(size=(2, 3, 4, 4)))]
        real = [torch.tensor(rng.normal(size=(2, 3, 4, 4)))]
        base = feature_matching_loss(fake, real).item()
        scaled = feature_matching_loss([2 * f for f in fake], [2 * r for r in real]).item()
        assert _rel_close(scaled, 4.0 * base)

    def test_real_branch_detached(self):
        fake = [torch.randn(1, 2, 2, 2, requires_grad=True)]
        real = [torch.randn(1, 2, 2, 2, requires_grad=True)]
        feature_matching_loss(fake, real).backward()
        assert real[0].grad is None
        assert fake[0].grad is not None


class TestImageReconstruction:
    def test_identical_zero(self):
        x = torch.randn(2, 3, 8, 8, dtype=torch.float64)
        assert image_reconstruction_loss(x, x.clone()).item() == 0.0

    def test_constant_offset(self):
        x = torch.zeros(2, 3, 8, 8, dtype=torch.float64)
        assert image_reconstruction_loss(x + 0.5, x).item() == pytest.approx(0.5, rel=1e-12)

    def test_matches_oracle(self):
        rng = np.random.default_rng(8)
        a, b = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 3, 4, 4))
        got = image_reconstruction_loss(torch.tensor(a), torch.tensor(b)).item()
        assert _rel_close(got, mean_abs_oracle(a, b))


class TestPerceptual:
    def test_identical_images_zero(self):
        bundle = tiny_texture_bundle(seed=2)
        x = torch.randn(2, 3, 8, 8, dtype=torch.float64)
        assert perceptual_loss(bundle.perceptual, x, x.clone()).item() == 0.0

    def test_feature_loss_matches_oracle(self):
        bundle = tiny_texture_bundle(seed=2)
        a = torch.randn(2, 3, 8, 8, dtype=torch.float64)
        b = torch.randn(2, 3, 8, 8, dtype=torch.float64)
        got = perceptual_loss(bundle.perceptual, a, b).item()
        fa = bundle.perceptual(a).numpy()
        fb = bundle.perceptual(b).numpy()
        assert _rel_close(got, mean_abs_oracle(fa, fb))

    def test_batch_permutation_invariance(self):
        bundle = tiny_texture_bundle(seed=2)
        a = torch.randn(3, 3, 8, 8, dtype=torch.float64)
        b = torch.randn(3, 3, 8, 8, dtype=torch.float64)
        perm = torch.tensor([2, 0, 1])
        plain = perceptual_loss(bundle.perceptual, a, b).item()
        permuted = perceptual_loss(bundle.perceptual, a[perm], b[perm]).item()
        assert _rel_close(plain, permuted, tol=1e-12)

    def test_input_gradient_matches_finite_differences(self):
        bundle = tiny_texture_bundle(seed=3)
        target = torch.randn(1, 3, 8, 8, dtype=torch.float64)
        x = torch.randn(1, 3, 8, 8, dtype=torch.float64, requires_grad=True)
        loss = perceptual_loss(bundle.perceptual, target, x)
        loss.backward()
        h = 1e-6
        rng = np.random.default_rng(5)
        for _ in range(12):
            i, j = rng.integers(0, 8, 2)
            c = int(rng.integers(0, 3))
            with torch.no_grad():
                orig = x[0, c, i, j].item()
                x[0, c, i, j] = orig + h
                fp = perceptual_loss(bundle.perceptual, target, x).item()
                x[0, c, i, j] = orig - h
                fm = perceptual_loss(bundle.perceptual, target, x).item()
                x[0, c, i, j] = orig
            fd = (fp - fm) / (2 * h)
            ana = x.grad[0, c, i, j].item()
            assert abs(ana - fd) <= 1e-3 * max(abs(ana), abs(fd), 1e-6)


class TestGenerator:
    def test_eval_mode_deterministic(self):
        bundle = tiny_texture_bundle(seed=4)
        batch = tiny_batch(seed=2)
        bundle.eval_mode()
        z = torch.randn(2, 2, dtype=torch.float64)
        a = bundle.generator(batch["image_maskcut"], z, noise_seed=7)
        b = bundle.generator(batch["image_maskcut"], z, noise_seed=7)
        assert torch.equal(a, b)

    def test_output_in_tanh_range(self):
        bundle = tiny_texture_bundle(seed=4)
        batch = tiny_batch(seed=2)
        out = bundle.generator(batch["image_maskcut"], torch.randn(2, 2, dtype=torch.float64) * 3)
        assert out.min().item() >= -1.0 and out.max().item() <= 1.0

    def test_train_mode_injects_fresh_noise(self):
        bundle = tiny_texture_bundle(seed=4)
        batch = tiny_batch(seed=2)
        bundle.generator.train()
        z = torch.randn(2, 2, dtype=torch.float64)
        a = bundle.generator(batch["image_maskcut"], z)
        b = bundle.generator(batch["image_maskcut"], z)
        assert not torch.equal(a, b)

    def test_latent_dim_mismatch(self):
        bundle = tiny_texture_bundle(seed=4)
        batch = tiny_batch(seed=2)
        with pytest.raises(ValueError):
            bundle.generator(batch["image_maskcut"], torch.zeros(2, 5, dtype=torch.float64))

    def test_domain_typed_generate_replayable(self):
        bundle = tiny_texture_bundle(seed=4)
        for net in (bundle.generator, bundle.encoder):
            net.float()
        rng = np.random.default_rng(1)
        img = ImageTensor(rng.uniform(-1, 1, (8, 8, 3)))
        z = LatentVector(rng.normal(size=2))
        a = bundle.generate(img, z, noise_seed=3)
        b = bundle.generate(img, z, noise_seed=3)
        assert np.array_equal(a.data, b.data)
        c = bundle.generate(img, z, noise_seed=4)
        assert not np.array_equal(a.data, c.data)


class TestStopGradient:
    def test_encoder_gets_exactly_zero_gradient_from_latent_rec(self):
        bundle = tiny_texture_bundle(seed=5)
        batch = tiny_batch(seed=3)
        z = torch.randn(2, 2, dtype=torch.float64)
        s_hat = bundle.generator(batch["image_maskcut"], z, use_noise=False)
        mu_hat = bundle.encode_mean_detached(s_hat)
        rec = latent_reconstruction_loss(z, mu_hat)
        rec.backward()
        for p in bundle.encoder.parameters():
            assert p.grad is None or p.grad.abs().max().item() == 0.0
        assert any(p.grad is not None and p.grad.abs().max().item() > 0
                   for p in bundle.generator.parameters())

    def test_optimizer_step_on_rec_leaves_encoder_bitwise_unchanged(self):
        bundle = tiny_texture_bundle(seed=5)
        batch = tiny_batch(seed=3)
        before = {k: v.clone() for k, v in bundle.encoder.state_dict().items()}
        opt = torch.optim.Adam(bundle.generator_parameters(), lr=1e-2)
        z = torch.randn(2, 2, dtype=torch.float64)
        s_hat = bundle.generator(batch["image_maskcut"], z, use_noise=False)
        rec = latent_reconstruction_loss(z, bundle.encode_mean_detached(s_hat))
        opt.zero_grad()
        rec.backward()
        opt.step()
        after = bundle.encoder.state_dict()
        assert all(torch.equal(before[k], after[k]) for k in before)

    def test_rec_zero_when_encoder_mean_matches(self):
        bundle = tiny_texture_bundle(seed=5)
        batch = tiny_batch(seed=3)
        z = torch.randn(2, 2, dtype=torch.float64)
        s_hat = bundle.generator(batch["image_maskcut"], z, use_noise=False)
        mu_hat = bundle.encode_mean_detached(s_hat)
        assert latent_reconstruction_loss(mu_hat, bundle.encode_mean_detached(s_hat)).item() == 0.0

    def test_rec_matches_oracle(self):
        rng = np.random.default_rng(9)
        z = rng.normal(size=(3, 8))
        mu = rng.normal(size=(3, 8))
        got = latent_reconstruction_loss(torch.tensor(z), torch.tensor(mu)).item()
        assert _rel_close(got, mean_abs_oracle(z, mu))


class TestFreezeContracts:
    def test_perceptual_parameters_never_require_grad(self):
        bundle = tiny_texture_bundle(seed=6)
        assert all(not p.requires_grad for p in bundle.perceptual.parameters())
        bundle.train_mode()
        assert not bundle.perceptual.training

    def test_perceptual_unchanged_by_training(self):
        bundle = tiny_texture_bundle(seed=6)
        batch = tiny_batch(seed=4)
        before = {k: v.clone() for k, v in bundle.perceptual.state_dict().items()}
        opt_g = torch.optim.Adam(bundle.generator_parameters(), lr=1e-2)
        opt_d = torch.optim.Adam(bundle.discriminator.parameters(), lr=1e-2)
        gen = torch.Generator().manual_seed(0)
        for _ in range(3):
            texture_train_step(bundle, batch, opt_g, opt_d, generator=gen)
        after = bundle.perceptual.state_dict()
        assert all(torch.equal(before[k], after[k]) for k in before)


class TestDiscriminatorMaskContract:
    def test_mask_pairing_changes_output(self):
        bundle = tiny_texture_bundle(seed=7)
        batch = tiny_batch(seed=5)
        scores_a, _ = bundle.discriminator(bundle.d_input(batch["image"], batch["mask"]))
        flipped = batch["mask"].flip(0)
        scores_b, _ = bundle.discriminator(bundle.d_input(batch["image"], flipped))
        assert not torch.equal(scores_a, scores_b)


def _optims(bundle):
    opt_g = torch.optim.Adam(bundle.generator_parameters(), lr=1e-3, betas=(0.5, 0.99))
    opt_d = torch.optim.Adam(bundle.discriminator.parameters(), lr=1e-3, betas=(0.5, 0.99))
    return opt_g, opt_d


class TestTrainStep:
    def test_zero_lambdas_total_is_adv(self):
        bundle = tiny_texture_bundle(seed=8)
        batch = tiny_batch(seed=6)
        opt_g, opt_d = _optims(bundle)
        lambdas = {"rec": 0.0, "kl": 0.0, "fm": 0.0, "per": 0.0, "irec": 0.0}
        br = texture_train_step(bundle, batch, opt_g, opt_d, lambdas=lambdas,
                                generator=torch.Generator().manual_seed(0))
        assert br.total_g == br.adv_g

    def test_breakdown_identity(self):
        bundle = tiny_texture_bundle(seed=8)
        batch = tiny_batch(seed=6)
        opt_g, opt_d = _optims(bundle)
        gen = torch.Generator().manual_seed(1)
        for _ in range(3):
            br = texture_train_step(bundle, batch, opt_g, opt_d, generator=gen)
            want = (br.adv_g + 10.0 * br.rec + 0.05 * br.kl + 10.0 * br.fm
                    + 10.0 * br.per + 10.0 * br.irec)
            assert br.total_g == want

    def test_deterministic_given_seed(self):
        runs = []
        for _ in range(2):
            bundle = tiny_texture_bundle(seed=9)
            batch = tiny_batch(seed=7)
            opt_g, opt_d = _optims(bundle)
            gen = torch.Generator().manual_seed(2)
            runs.append([texture_train_step(bundle, batch, opt_g, opt_d,
                                            generator=gen).to_dict()
                         for _ in range(3)])
        assert runs[0] == runs[1]

    def test_ablation_switches(self):
        bundle = tiny_texture_bundle(seed=10)
        batch = tiny_batch(seed=8)
        opt_g, opt_d = _optims(bundle)
        gen = torch.Generator().manual_seed(3)
        br = texture_train_step(bundle, batch, opt_g, opt_d, use_fm=False,
                                use_perceptual=False, use_bicycle=False,
                                use_noise=False, generator=gen)
        assert br.fm == 0.0 and br.per == 0.0 and br.rec == 0.0
        assert br.total_g == br.adv_g + 0.05 * br.kl + 10.0 * br.irec

    def test_generated_mask_source_requires_bundle(self):
        bundle = tiny_texture_bundle(seed=10)
        batch = tiny_batch(seed=8)
        opt_g, opt_d = _optims(bundle)
        with pytest.raises(ValueError):
            texture_train_step(bundle, batch, opt_g, opt_d, mask_source="generated")

    def test_generated_mask_source_runs(self):
        from tinymodels import tiny_mask_bundle
        bundle = tiny_texture_bundle(seed=10)
        mask_bundle = tiny_mask_bundle(seed=11)
        batch = tiny_batch(seed=8)
        opt_g, opt_d = _optims(bundle)
        br = texture_train_step(bundle, batch, opt_g, opt_d,
                                mask_source="generated", mask_bundle=mask_bundle,
                                generator=torch.Generator().manual_seed(4))
        assert np.isfinite(br.total_g)


class TestGradientCheck:
    def test_total_generator_loss_gradients(self):
        bundle = tiny_texture_bundle(seed=12)
        jitter_parameters([bundle.generator, bundle.encoder, bundle.discriminator],
                          seed=41)
        batch = tiny_batch(seed=9)
        gen = torch.Generator().manual_seed(5)
        z = torch.randn(2, 2, dtype=torch.float64, generator=gen)
        eps = torch.randn(2, 2, dtype=torch.float64, generator=gen)
        noise_a = [torch.randn(2, c, h, w, dtype=torch.float64, generator=gen)
                   for c, h, w in bundle.generator.noise_shapes(8, 8)]
        noise_b = [torch.randn(2, c, h, w, dtype=torch.float64, generator=gen)
                   for c, h, w in bundle.generator.noise_shapes(8, 8)]
        image, m = batch["image"], batch["mask"]
        i_m, s_real = batch["image_maskcut"], batch["foreground"]

        def loss_fn():
            s_hat = bundle.generator(i_m, z, noise=noise_a)
            i_s_hat = composite_torch(image, s_hat, m)
            mu, logvar, z_enc = bundle.encode(s_real, eps=eps)
            s_hat_enc = bundle.generator(i_m, z_enc, noise=noise_b)
            i_s_hat_enc = composite_torch(image, s_hat_enc, m)
            ga, _ = bundle.discriminator(bundle.d_input(i_s_hat, m))
            gb, enc_feats = bundle.discriminator(bundle.d_input(i_s_hat_enc, m))
            with torch.no_grad():
                _, real_feats = bundle.discriminator(bundle.d_input(image, m))
            adv = hinge_g_loss_two_fakes(ga, gb)
            rec = latent_reconstruction_loss(z, bundle.encode_mean_detached(s_hat))
            kl = kl_divergence(mu, logvar)
            fm = feature_matching_loss(enc_feats, real_feats)
            per = perceptual_loss(bundle.perceptual, image, i_s_hat_enc)
            irec = image_reconstruction_loss(i_s_hat_enc, image)
            return adv + 10.0 * rec + 0.05 * kl + 10.0 * fm + 10.0 * per + 10.0 * irec

        params = list(bundle.generator.parameters())
        assert sum(p.numel() for p in params) <= 500
        worst = check_gradients(loss_fn, params)
        assert worst <= 1e-3


class TestBreakdown:
    def test_build_identity_is_exact_float(self):
        lam = {"rec": 10.0, "kl": 0.05, "fm": 10.0, "per": 10.0, "irec": 10.0}
        br = TextureLossBreakdown.build(adv_g=0.5, adv_d=2.0, rec=0.1, kl=0.2,
                                        fm=0.3, per=0.4, irec=0.5, lambdas=lam)
        assert br.total_g == 0.5 + 10.0 * 0.1 + 0.05 * 0.2 + 10.0 * 0.3 + 10.0 * 0.4 + 10.0 * 0.5


class TestCheckpointHash:
    def test_perceptual_hash_mismatch_rejected(self):
        a = tiny_texture_bundle(seed=13)
        state = a.state_dict()
        b = TextureGanBundle(latent_dim=2, base=2, n_down=1, n_res=1, d_base=2,
                             d_layers=1, enc_base=2,
                             g_extra=dict(stem_kernel=1, down_kernel=2,
                                          res_kernel=1, up_kernel=1),
                             d_extra=dict(kernel=2),
                             enc_extra=dict(n_down=2, kernel=2),
                             perceptual_extra=dict(base=2, n_stages=3, kernel=3),
                             perceptual_seed=999)
        for net in (b.generator, b.encoder, b.discriminator):
            net.double()
        with pytest.raises(ValueError):
            b.load_state_dict(state)
