"""Counterfactual inference: factual vs intervened category predictions and
per-factor causal effects.

Interventions transform the sample with one factor across a degree grid and
average the resulting category distributions. Everything here runs outside
gradient recording; effects are analysis outputs, never graph nodes.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .imgops import TransformSpec, apply_factor, degree_grid
from .numcore import Tensor, no_tape
from .parallel import ordered_map


@dataclass(frozen=True)
class CausalEffect:
    """Signed effect of one factor on the category distribution."""

    factor_id: str
    vector: np.ndarray


@dataclass(frozen=True)
class EffectProfile:
    """All K per-factor effects for one sample, in catalog order."""

    sample_id: int
    effects: tuple

    def matrix(self) -> np.ndarray:
        return np.stack([e.vector for e in self.effects])


def derive_noise_seed(base: int, *path: int) -> int:
    """Stable child seed for (base, factor index, degree index) chains."""
    return int(np.random.SeedSequence((base,) + tuple(path)).generate_state(1)[0])


def factual_category(extractor, classifier, image: np.ndarray) -> np.ndarray:
    """Category distribution of the sample as-is."""
    with no_tape():
        probs = classifier(extractor(Tensor(image[None])))
    return probs.data[0]


def counterfactual_category(extractor, classifier, image, factor, degrees, noise_seed: int = 0) -> np.ndarray:
    """Category distribution under an intervention with `factor`, averaged
    over the degree grid. Never records gradients."""
    degrees = list(degrees)
    if not degrees:
        raise ContractViolation("counterfactual_category: empty degree set")
    batch = np.stack(
        [
            apply_intervention(image, factor, deg, derive_noise_seed(noise_seed, j))
            for j, deg in enumerate(degrees)
        ]
    )
    with no_tape():
        probs = classifier(extractor(Tensor(batch)))
    return probs.data.mean(axis=0)


def apply_intervention(image, factor, degree, seed):
    return apply_factor(image, TransformSpec(factor, degree, noise_seed=seed))


def causal_effect(factual: np.ndarray, counterfactual: np.ndarray, factor_id: str = "") -> CausalEffect:
    """Effect = factual minus counterfactual distribution."""
    y = np.asarray(factual)
    yhat = np.asarray(counterfactual)
    if y.shape != yhat.shape:
        raise ContractViolation(f"causal_effect: length mismatch {y.shape} vs {yhat.shape}")
    return CausalEffect(factor_id, y - yhat)


def effect_profile(extractor, classifier, image, catalog, m: int, noise_seed: int = 0, sample_id: int = 0) -> EffectProfile:
    """One CausalEffect per catalog factor for a single sample."""
    if not catalog:
        raise ContractViolation("effect_profile: empty catalog")
    y = factual_category(extractor, classifier, image)
    effects = []
    for k, factor in enumerate(catalog):
        degrees = degree_grid(factor, m)
        yhat = counterfactual_category(extractor, classifier, image, factor, degrees, derive_noise_seed(noise_seed, k))
        effects.append(causal_effect(y, yhat, factor.id))
    return EffectProfile(sample_id, tuple(effects))


def effect_profiles_batch(extractor, classifier, images, catalog, m: int, noise_seeds) -> np.ndarray:
    """Effect tensors (n, K, |Y|) for an image batch, one forward pass per
    factor over the (samples x degrees) stack. Matches the per-sample path's
    seed derivation, so profiles agree up to float reduction order."""
    if not catalog:
        raise ContractViolation("effect_profiles_batch: empty catalog")
    images = np.asarray(images)
    n = images.shape[0]
    noise_seeds = list(noise_seeds)
    if len(noise_seeds) != n:
        raise ContractViolation(f"effect_profiles_batch: {len(noise_seeds)} seeds for {n} samples")
    with no_tape():
        factual = classifier(extractor(Tensor(images))).data
    out = np.empty((n, len(catalog), factual.shape[1]), dtype=factual.dtype)
    for k, factor in enumerate(catalog):
        degrees = degree_grid(factor, m)

        def transformed_row(i):
            base = derive_noise_seed(noise_seeds[i], k)
            return [apply_intervention(images[i], factor, deg, derive_noise_seed(base, j))
                    for j, deg in enumerate(degrees)]

        stack = np.stack([img for row in ordered_map(transformed_row, range(n)) for img in row])
        with no_tape():
            probs = classifier(extractor(Tensor(stack))).data
        yhat = probs.reshape(n, len(degrees), -1).mean(axis=1)
        out[:, k, :] = factual - yhat
    return out
