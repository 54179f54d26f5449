import numpy as np
import pytest

from causalign.causal import (
    causal_effect,
    counterfactual_category,
    derive_noise_seed,
    effect_profile,
    effect_profiles_batch,
    factual_category,
)
from causalign.errors import ContractViolation
from causalign.imgops import TransformSpec, apply_factor, catalog_for_mode, degree_grid, get_factor
from causalign.numcore import Tape, Tensor, active_tape, ops

from modelhelpers import tiny_catalog, tiny_images, tiny_models


def brute_force_profile(models, image, catalog, m, noise_seed):
    """Independent oracle: double loop over factors and degrees, one forward
    per transformed image, plain python averaging."""

    def predict(img):
        feats = models.extractor(Tensor(img[None]))
        return ops.softmax(models.classifier.logits(feats), axis=1).data[0]

    y = predict(image)
    out = []
    for k, factor in enumerate(catalog):
        base = derive_noise_seed(noise_seed, k)
        degrees = degree_grid(factor, m)
        acc = np.zeros_like(y)
        for j, degree in enumerate(degrees):
            spec = TransformSpec(factor, degree, noise_seed=derive_noise_seed(base, j))
            acc = acc + predict(apply_factor(image, spec))
        out.append(y - acc / len(degrees))
    return np.stack(out)


class TestFactual:
    def test_matches_manual_composition(self):
        models = tiny_models(seed=0)
        img = tiny_images(np.random.default_rng(0), 1)[0]
        y = factual_category(models.extractor, models.classifier, img)
        feats = models.extractor(Tensor(img[None]))
        manual = ops.softmax(models.classifier.logits(feats), axis=1).data[0]
        np.testing.assert_array_equal(y, manual)
        assert y.sum() == pytest.approx(1.0, abs=1e-6)

    def test_zero_init_classifier_uniform(self):
        models = tiny_models(seed=1)
        models.classifier.w.data[:] = 0
        models.classifier.b.data[:] = 0
        img = tiny_images(np.random.default_rng(1), 1)[0]
        np.testing.assert_allclose(factual_category(models.extractor, models.classifier, img), 1 / 3, atol=1e-9)

    def test_deterministic(self):
        models = tiny_models(seed=2)
        img = tiny_images(np.random.default_rng(2), 1)[0]
        a = factual_category(models.extractor, models.classifier, img)
        b = factual_category(models.extractor, models.classifier, img)
        np.testing.assert_array_equal(a, b)


class TestCounterfactual:
    def test_single_degree_equals_factual_of_transformed(self):
        models = tiny_models(seed=3)
        img = tiny_images(np.random.default_rng(3), 1)[0]
        factor = get_factor("Brightness")
        seed = 42
        yhat = counterfactual_category(models.extractor, models.classifier, img, factor, [0.5], seed)
        transformed = apply_factor(img, TransformSpec(factor, 0.5, noise_seed=derive_noise_seed(seed, 0)))
        np.testing.assert_allclose(
            yhat, factual_category(models.extractor, models.classifier, transformed), atol=1e-12
        )

    def test_identity_intervention_null(self):
        models = tiny_models(seed=4)
        img = tiny_images(np.random.default_rng(4), 1)[0]
        y = factual_category(models.extractor, models.classifier, img)
        yhat = counterfactual_category(models.extractor, models.classifier, img, get_factor("Rotate"), [0.0])
        np.testing.assert_array_equal(y, yhat)

    def test_empty_degree_set_rejected(self):
        models = tiny_models(seed=5)
        img = tiny_images(np.random.default_rng(5), 1)[0]
        with pytest.raises(ContractViolation):
            counterfactual_category(models.extractor, models.classifier, img, get_factor("Rotate"), [])

    def test_distribution_output(self):
        models = tiny_models(seed=6)
        img = tiny_images(np.random.default_rng(6), 1)[0]
        yhat = counterfactual_category(
            models.extractor, models.classifier, img, get_factor("NoiseGaussian"), degree_grid(get_factor("NoiseGaussian"), 5), 7
        )
        assert yhat.sum() == pytest.approx(1.0, abs=1e-6)


class TestCausalEffect:
    def test_null_intervention_zero(self):
        e = causal_effect(np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        np.testing.assert_array_equal(e.vector, [0.0, 0.0])

    def test_direct_arithmetic(self):
        e = causal_effect(np.array([0.7, 0.3]), np.array([0.4, 0.6]))
        np.testing.assert_allclose(e.vector, [0.3, -0.3])

    def test_length_mismatch(self):
        with pytest.raises(ContractViolation):
            causal_effect(np.zeros(3), np.zeros(4))

    def test_bounds_and_zero_sum(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            y = rng.dirichlet(np.ones(5))
            yhat = rng.dirichlet(np.ones(5))
            e = causal_effect(y, yhat).vector
            assert (np.abs(e) <= 1.0).all()
            assert e.sum() == pytest.approx(0.0, abs=1e-6)


class TestEffectProfile:
    def test_profile_sizes_by_mode(self):
        models14 = tiny_models(seed=9, k=14)
        models16 = tiny_models(seed=9, k=16)
        img = tiny_images(np.random.default_rng(9), 1)[0]
        p14 = effect_profile(models14.extractor, models14.classifier, img, catalog_for_mode("digits"), m=1)
        p16 = effect_profile(models16.extractor, models16.classifier, img, catalog_for_mode("all"), m=1)
        assert len(p14.effects) == 14
        assert len(p16.effects) == 16
        assert [e.factor_id for e in p16.effects] == [f.id for f in catalog_for_mode("all")]

    def test_empty_catalog_rejected(self):
        models = tiny_models(seed=10)
        img = tiny_images(np.random.default_rng(10), 1)[0]
        with pytest.raises(ContractViolation):
            effect_profile(models.extractor, models.classifier, img, [], m=1)

    @pytest.mark.parametrize("case", range(10))
    def test_oracle_equivalence(self, case):
        m = [1, 3, 5][case % 3]
        models = tiny_models(seed=100 + case)
        img = tiny_images(np.random.default_rng(200 + case), 1)[0]
        profile = effect_profile(models.extractor, models.classifier, img, tiny_catalog(), m, noise_seed=case)
        oracle = brute_force_profile(models, img, tiny_catalog(), m, noise_seed=case)
        assert np.abs(profile.matrix() - oracle).max() <= 1e-6

    def test_null_interventions_exactly_zero(self):
        models = tiny_models(seed=11)
        img = tiny_images(np.random.default_rng(11), 1)[0]
        catalog = [f for f in catalog_for_mode("all") if f.identity_degree is not None]
        # intervene only at each factor's identity degree
        y = factual_category(models.extractor, models.classifier, img)
        for factor in catalog:
            yhat = counterfactual_category(
                models.extractor, models.classifier, img, factor, [factor.identity_degree], 13
            )
            e = causal_effect(y, yhat, factor.id)
            assert np.all(e.vector == 0.0), factor.id

    def test_gradient_isolation(self):
        models = tiny_models(seed=12)
        img = tiny_images(np.random.default_rng(12), 1)[0]
        for _, t in models.named_params():
            assert t.grad is None
        with Tape() as tape:
            effect_profile(models.extractor, models.classifier, img, tiny_catalog(), m=3)
            assert len(tape) == 0
        assert active_tape() is None
        for _, t in models.named_params():
            assert t.grad is None

    def test_batch_matches_per_sample(self):
        models = tiny_models(seed=13)
        imgs = tiny_images(np.random.default_rng(13), 3)
        seeds = [5, 6, 7]
        batch = effect_profiles_batch(models.extractor, models.classifier, imgs, tiny_catalog(), 3, seeds)
        for i in range(3):
            single = effect_profile(
                models.extractor, models.classifier, imgs[i], tiny_catalog(), 3, noise_seed=seeds[i]
            )
            np.testing.assert_allclose(batch[i], single.matrix(), atol=1e-9)

    def test_batch_seed_count_mismatch(self):
        models = tiny_models(seed=14)
        imgs = tiny_images(np.random.default_rng(14), 3)
        with pytest.raises(ContractViolation):
            effect_profiles_batch(models.extractor, models.classifier, imgs, tiny_catalog(), 1, [1, 2])
