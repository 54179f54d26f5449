"""The four learnable networks: feature extractor F, classifier C, the K
factor-aware feature mappings, and the effect-to-weight network.

Mappings are residual affine maps with the residual branch zero-initialized,
so every mapping starts as the identity. The effect-to-weight net's output
layer is zero-initialized, so mapping weights start uniform.
"""

import numpy as np

from .errors import ContractViolation
from .numcore import Tensor
from .numcore import ops


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def as_input(x, dtype) -> Tensor:
    """Wrap raw arrays as tensors in the network's dtype; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


class FeatureExtractor:
    """Compact convnet: conv3x3(c1)-relu-pool2-conv3x3(c2)-relu-pool2-
    flatten-linear(d)-relu. Input spatial dims must divide by 4."""

    def __init__(self, input_shape, feature_dim=128, conv_channels=(32, 64), rng=None, dtype=np.float32):
        h, w, c = input_shape
        if h % 4 or w % 4:
            raise ContractViolation(f"feature extractor needs H, W divisible by 4, got {input_shape}")
        rng = rng if rng is not None else np.random.default_rng(0)
        c1, c2 = conv_channels
        self.input_shape = tuple(input_shape)
        self.feature_dim = int(feature_dim)
        self.conv_channels = (int(c1), int(c2))
        flat = (h // 4) * (w // 4) * c2
        self.conv1_w = Tensor(_kaiming_uniform(rng, (3, 3, c, c1), 9 * c, dtype), requires_grad=True)
        self.conv1_b = Tensor(np.zeros(c1, dtype=dtype), requires_grad=True)
        self.conv2_w = Tensor(_kaiming_uniform(rng, (3, 3, c1, c2), 9 * c1, dtype), requires_grad=True)
        self.conv2_b = Tensor(np.zeros(c2, dtype=dtype), requires_grad=True)
        self.fc_w = Tensor(_kaiming_uniform(rng, (flat, feature_dim), flat, dtype), requires_grad=True)
        self.fc_b = Tensor(np.zeros(feature_dim, dtype=dtype), requires_grad=True)

    @property
    def dtype(self):
        return self.conv1_w.data.dtype

    def __call__(self, x) -> Tensor:
        x = as_input(x, self.dtype)
        if tuple(x.shape[1:]) != self.input_shape:
            raise ContractViolation(f"feature extractor expects {self.input_shape}, got {tuple(x.shape[1:])}")
        h = ops.maxpool2d(ops.relu(ops.conv2d(x, self.conv1_w, self.conv1_b, stride=1, padding=1)), 2)
        h = ops.maxpool2d(ops.relu(ops.conv2d(h, self.conv2_w, self.conv2_b, stride=1, padding=1)), 2)
        return ops.relu(ops.linear(ops.flatten(h), self.fc_w, self.fc_b))

    def params(self):
        return [
            ("F.conv1.w", self.conv1_w),
            ("F.conv1.b", self.conv1_b),
            ("F.conv2.w", self.conv2_w),
            ("F.conv2.b", self.conv2_b),
            ("F.fc.w", self.fc_w),
            ("F.fc.b", self.fc_b),
        ]


class Classifier:
    """Affine map d -> |Y|; `logits` for fused losses, call for probabilities."""

    def __init__(self, feature_dim, n_classes, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.feature_dim = int(feature_dim)
        self.n_classes = int(n_classes)
        self.w = Tensor(_kaiming_uniform(rng, (feature_dim, n_classes), feature_dim, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(n_classes, dtype=dtype), requires_grad=True)

    @property
    def dtype(self):
        return self.w.data.dtype

    def logits(self, features) -> Tensor:
        features = as_input(features, self.dtype)
        if features.ndim != 2 or features.shape[1] != self.feature_dim:
            raise ContractViolation(f"classifier expects (n, {self.feature_dim}), got {tuple(features.shape)}")
        return ops.linear(features, self.w, self.b)

    def __call__(self, features) -> Tensor:
        return ops.softmax(self.logits(features), axis=1)

    def params(self):
        return [("C.w", self.w), ("C.b", self.b)]


class FeatureMapping:
    """Residual affine map d -> d: out = x + x @ w + b, zero-initialized."""

    def __init__(self, index, feature_dim, dtype=np.float32):
        self.index = int(index)
        self.feature_dim = int(feature_dim)
        self.w = Tensor(np.zeros((feature_dim, feature_dim), dtype=dtype), requires_grad=True)
        self.b = Tensor(np.zeros(feature_dim, dtype=dtype), requires_grad=True)

    def __call__(self, features) -> Tensor:
        features = as_input(features, self.w.data.dtype)
        if features.ndim != 2 or features.shape[1] != self.feature_dim:
            raise ContractViolation(f"mapping {self.index} expects (n, {self.feature_dim}), got {tuple(features.shape)}")
        return ops.add(features, ops.linear(features, self.w, self.b))

    def params(self):
        return [(f"M.{self.index}.w", self.w), (f"M.{self.index}.b", self.b)]


class EffectToWeightNet:
    """Two-layer perceptron |Y| -> hidden -> 1, shared across factors.
    Output layer starts at zero so all effect scores start equal."""

    def __init__(self, n_classes, hidden=32, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_classes = int(n_classes)
        self.hidden = int(hidden)
        self.w1 = Tensor(_kaiming_uniform(rng, (n_classes, hidden), n_classes, dtype), requires_grad=True)
        self.b1 = Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)
        self.w2 = Tensor(np.zeros((hidden, 1), dtype=dtype), requires_grad=True)
        self.b2 = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)

    def __call__(self, effects) -> Tensor:
        effects = as_input(effects, self.w1.data.dtype)
        if effects.ndim != 2 or effects.shape[1] != self.n_classes:
            raise ContractViolation(f"effect-to-weight net expects (n, {self.n_classes}), got {tuple(effects.shape)}")
        return ops.linear(ops.relu(ops.linear(effects, self.w1, self.b1)), self.w2, self.b2)

    def params(self):
        return [("W.fc1.w", self.w1), ("W.fc1.b", self.b1), ("W.fc2.w", self.w2), ("W.fc2.b", self.b2)]


class ModelSet:
    """F, C, {M_k}, W bundled with canonical parameter naming."""

    def __init__(self, extractor, classifier, mappings, weight_net):
        self.extractor = extractor
        self.classifier = classifier
        self.mappings = list(mappings)
        self.weight_net = weight_net

    @classmethod
    def create(cls, input_shape, n_classes, n_factors, feature_dim=128, seed=0,
               conv_channels=(32, 64), hidden=32, dtype=np.float32):
        rng = np.random.Generator(np.random.PCG64(seed))
        extractor = FeatureExtractor(input_shape, feature_dim, conv_channels, rng, dtype)
        classifier = Classifier(feature_dim, n_classes, rng, dtype)
        mappings = [FeatureMapping(k, feature_dim, dtype) for k in range(n_factors)]
        weight_net = EffectToWeightNet(n_classes, hidden, rng, dtype)
        return cls(extractor, classifier, mappings, weight_net)

    @property
    def n_factors(self):
        return len(self.mappings)

    def named_params(self):
        out = []
        out.extend(self.extractor.params())
        out.extend(self.classifier.params())
        for m in self.mappings:
            out.extend(m.params())
        out.extend(self.weight_net.params())
        return out

    def param_tensors(self):
        return [t for _, t in self.named_params()]

    def state_arrays(self):
        return {name: t.data.copy() for name, t in self.named_params()}

    def load_state(self, arrays):
        for name, t in self.named_params():
            if name not in arrays:
                raise ContractViolation(f"checkpoint missing parameter {name}")
            a = np.asarray(arrays[name], dtype=t.data.dtype)
            if a.shape != t.data.shape:
                raise ContractViolation(f"parameter {name}: shape {a.shape} vs expected {t.data.shape}")
            t.data = a.copy()


def extract_features(extractor: FeatureExtractor, images) -> Tensor:
    """Feature batch (n, d) for an image batch (n, H, W, C)."""
    return extractor(images)


def classify(classifier: Classifier, features) -> Tensor:
    """Probability batch (n, |Y|); rows on the simplex."""
    return classifier(features)


def map_features(mapping: FeatureMapping, features) -> Tensor:
    return mapping(features)


def score_effect(weight_net: EffectToWeightNet, effect) -> float:
    """Scalar score for one causal-effect vector."""
    e = np.asarray(effect)
    if e.ndim != 1:
        raise ContractViolation(f"score_effect expects a vector, got shape {e.shape}")
    return weight_net(e[None, :]).item()
