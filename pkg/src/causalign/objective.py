"""Loss surface: classification loss, effect-to-weight softmax, causal
alignment loss, marginal per-factor alignment loss, and their sum.

Alignment losses combine a per-sample feature distance (Euclidean norm of
the difference) with a cross-entropy term on the projected features, both
averaged over the batch. Mapping weights are a softmax over the shared
effect-to-weight net's scores; gradients reach the net through the weights
while the effects themselves stay detached.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .imgops import apply_factor, draw_spec
from .numcore import Tensor
from .numcore import ops
from .numcore.tensor import record


@dataclass(frozen=True)
class MappingWeights:
    """Point on the K-simplex: one weight per factor-aware mapping."""

    omega: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.omega)
        if w.ndim != 1 or not (w > 0).all() or abs(float(w.sum()) - 1.0) > 1e-6:
            raise ContractViolation(f"mapping weights must lie on the simplex, got {w}")


@dataclass(frozen=True)
class LossBreakdown:
    l_c: float
    l_ac: float
    l_am: float
    total: float

    def __post_init__(self):
        parts = (self.l_c, self.l_ac, self.l_am, self.total)
        if not all(np.isfinite(v) and v >= 0 for v in parts):
            raise ContractViolation(f"loss breakdown must be finite and nonnegative, got {parts}")


def _effects_matrix(profile) -> np.ndarray:
    """Accept an EffectProfile or a raw (K, |Y|) array."""
    if hasattr(profile, "matrix"):
        return profile.matrix()
    return np.asarray(profile)


def _reshape(t: Tensor, shape) -> Tensor:
    """On-tape reshape (flatten-style backward)."""
    out = Tensor(t.data.reshape(shape))
    src_shape = t.shape
    return record("reshape", (t,), out, lambda g: (g.reshape(src_shape),))


def mapping_weights_tensor(weight_net, effects: np.ndarray) -> Tensor:
    """Per-sample mapping weights (n, K) on the graph. `effects` is the
    detached (n, K, |Y|) tensor from counterfactual inference."""
    effects = np.asarray(effects, dtype=weight_net.w1.data.dtype)
    n, k, c = effects.shape
    scores = weight_net(Tensor(effects.reshape(n * k, c)))  # (n*k, 1)
    return ops.softmax(_reshape(scores, (n, k)), axis=1)


def mapping_weights(weight_net, profile, k_expected: int | None = None) -> MappingWeights:
    """Spec-level op: softmax of the per-factor effect scores for one sample."""
    mat = _effects_matrix(profile)
    if k_expected is not None and mat.shape[0] != k_expected:
        raise ContractViolation(f"profile has {mat.shape[0]} effects, expected {k_expected}")
    w = mapping_weights_tensor(weight_net, mat[None]).data[0]
    return MappingWeights(w.astype(np.float64))


def weighted_projection(mappings, features: Tensor, omega: Tensor) -> Tensor:
    """Sum_k omega[:, k] * M_k(features); omega (n, K), features (n, d)."""
    k = len(mappings)
    if omega.shape[1] != k:
        raise ContractViolation(f"omega has {omega.shape[1]} columns for {k} mappings")
    n, d = features.shape
    dtype = features.dtype
    ones_row = Tensor(np.ones((1, d), dtype=dtype))
    acc = None
    for idx, mapping in enumerate(mappings):
        sel = np.zeros((k, 1), dtype=dtype)
        sel[idx, 0] = 1
        col = ops.matmul(omega, Tensor(sel))  # (n, 1)
        scale = ops.matmul(col, ones_row)  # (n, d)
        term = ops.mul(scale, mapping(features))
        acc = term if acc is None else ops.add(acc, term)
    return acc


def uniform_weights(n: int, k: int, dtype=np.float32) -> Tensor:
    return Tensor(np.full((n, k), 1.0 / k, dtype=dtype))


def loss_classification(extractor, classifier, images, labels) -> Tensor:
    """Mean cross-entropy of C(F(x)) against integer labels."""
    x = images if isinstance(images, Tensor) else Tensor(images)
    logits = classifier.logits(extractor(x))
    return ops.mean(ops.cross_entropy_with_softmax(logits, np.asarray(labels)))


def loss_alignment_causal(extractor, classifier, mappings, weight_net, source_images, source_labels,
                          aux_images, effects) -> Tensor:
    """Effect-weighted alignment: feature distance between source samples and
    the omega-weighted projection of auxiliary samples, plus cross entropy of
    the projected features against the source labels."""
    effects = np.asarray(effects)
    if effects.ndim == 2:
        effects = effects[None]
    if effects.shape[1] != len(mappings):
        raise ContractViolation(f"effects have K={effects.shape[1]}, model has {len(mappings)} mappings")
    fs = extractor(source_images if isinstance(source_images, Tensor) else Tensor(source_images))
    fa = extractor(aux_images if isinstance(aux_images, Tensor) else Tensor(aux_images))
    if weight_net is None:
        omega = uniform_weights(fs.shape[0], len(mappings), fs.dtype)
    else:
        omega = mapping_weights_tensor(weight_net, effects.astype(fs.dtype))
    proj = weighted_projection(mappings, fa, omega)
    distance = ops.mean(ops.l2diff(fs, proj))
    ce = ops.mean(ops.cross_entropy_with_softmax(classifier.logits(proj), np.asarray(source_labels)))
    return ops.add(distance, ce)


def loss_alignment_marginal(extractor, classifier, mappings, source_images, source_labels,
                            catalog, rng) -> Tensor:
    """Per-factor alignment: every factor k transforms the batch at a random
    degree and its own mapping must project the result back onto the source
    features. Averaged over samples and factors."""
    if len(catalog) != len(mappings):
        raise ContractViolation(f"catalog has {len(catalog)} factors, model has {len(mappings)} mappings")
    source_images = np.asarray(source_images)
    if source_images.shape[0] == 0:
        raise ContractViolation("loss_alignment_marginal: empty batch")
    labels = np.asarray(source_labels)
    fs = extractor(Tensor(source_images))
    dtype = fs.dtype
    acc = None
    for factor, mapping in zip(catalog, mappings):
        transformed = np.stack([apply_factor(img, draw_spec(factor, rng)) for img in source_images])
        mapped = mapping(extractor(Tensor(transformed)))
        term = ops.add(
            ops.mean(ops.l2diff(fs, mapped)),
            ops.mean(ops.cross_entropy_with_softmax(classifier.logits(mapped), labels)),
        )
        acc = term if acc is None else ops.add(acc, term)
    return ops.mul(acc, Tensor(np.asarray(1.0 / len(catalog), dtype=dtype)))


def loss_total(l_c, l_ac, l_am, coeffs=(1.0, 1.0, 1.0)):
    """Sum the three losses (unit coefficients by default). Accepts tensors
    or plain floats for absent components; returns (total tensor or float,
    LossBreakdown)."""

    def value(v):
        return v.item() if isinstance(v, Tensor) else float(v)

    def scaled(v, c):
        if isinstance(v, Tensor):
            return v if c == 1.0 else ops.mul(v, Tensor(np.asarray(c, dtype=v.dtype)))
        return float(v) * c

    parts = [scaled(v, c) for v, c in zip((l_c, l_ac, l_am), coeffs)]
    total = None
    for p in parts:
        if total is None:
            total = p
        elif isinstance(total, Tensor) and isinstance(p, Tensor):
            total = ops.add(total, p)
        elif isinstance(total, Tensor):
            total = ops.add(total, Tensor(np.asarray(p, dtype=total.dtype))) if p else total
        elif isinstance(p, Tensor):
            total = p if total == 0 else ops.add(Tensor(np.asarray(total, dtype=p.dtype)), p)
        else:
            total = total + p
    breakdown = LossBreakdown(value(l_c), value(l_ac), value(l_am), value(total))
    return total, breakdown
