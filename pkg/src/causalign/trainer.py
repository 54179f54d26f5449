"""Training loop, test-time inference, and evaluation.

One training step: sample a source batch, compose random factor subsets into
auxiliary samples, infer per-sample effect profiles (detached), convert them
to mapping weights, build the variant's losses, and update every
participating network with SGD. Variants:

  base  classification loss on source only
  dt    classification loss on source plus auxiliary
  dta   classification plus both alignment losses with uniform weights
        (no counterfactual inference)
  full  classification plus both alignment losses with inferred weights

Inference projects a target sample's features through the effect-weighted
mappings before classification.
"""

from dataclasses import dataclass, field, asdict

import numpy as np

from .causal import derive_noise_seed, effect_profile, effect_profiles_batch
from .checkpoint import Checkpoint
from .data import Dataset
from .errors import ContractViolation, NumericError, TrainingDiverged
from .imgops import catalog_for_mode, generate_auxiliary, sample_factor_subset
from .model import ModelSet
from .numcore import SGD, Tape, Tensor, backward, no_tape, ops
from .objective import (
    loss_alignment_causal,
    loss_alignment_marginal,
    loss_classification,
    loss_total,
    mapping_weights,
    mapping_weights_tensor,
)

VARIANTS = ("full", "base", "dt", "dta")
FACTOR_MODES = ("all", "photometric", "geometric", "digits")
INFER_NOISE_SEED = 0  # fixed base seed for test-time interventions


@dataclass
class TrainConfig:
    seed: int
    epochs: int = 3
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    m: int = 5
    n_min: int = 1
    n_max: int = 3
    factor_mode: object = "all"
    variant: str = "full"
    feature_dim: int = 128
    source_train: object = None
    source_test: object = None
    targets: list = field(default_factory=list)

    def validate(self):
        if self.variant not in VARIANTS:
            raise ContractViolation(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if isinstance(self.factor_mode, str) and self.factor_mode not in FACTOR_MODES:
            raise ContractViolation(f"factor_mode must be one of {FACTOR_MODES} or a factor list")
        if self.n_min < 1 or self.n_min > self.n_max:
            raise ContractViolation(f"need 1 <= n_min <= n_max, got {self.n_min}, {self.n_max}")
        if self.epochs < 1 or self.batch_size < 1 or self.m < 1:
            raise ContractViolation("epochs, batch_size and m must be positive")
        return self

    def catalog(self):
        return catalog_for_mode(self.factor_mode)


@dataclass
class MetricsRow:
    epoch: object
    split: str
    loss_c: object
    loss_ac: object
    loss_am: object
    accuracy: float


def metrics_to_csv_rows(rows):
    def fmt(v):
        return "" if v is None else (f"{v:.6f}" if isinstance(v, float) else str(v))

    yield "epoch,split,loss_c,loss_ac,loss_am,accuracy"
    for r in rows:
        yield ",".join([fmt(r.epoch), r.split, fmt(r.loss_c), fmt(r.loss_ac), fmt(r.loss_am), fmt(r.accuracy)])


class TrainedModel:
    """A model set plus the run context needed for inference."""

    def __init__(self, models: ModelSet, catalog, m: int, config: dict):
        self.models = models
        self.catalog = catalog
        self.m = int(m)
        self.config = config

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "TrainedModel":
        cfg = ckpt.config
        catalog = catalog_for_mode(cfg["factor_mode"])
        models = ModelSet.create(
            tuple(cfg["input_shape"]),
            cfg["n_classes"],
            len(catalog),
            feature_dim=cfg["feature_dim"],
            seed=ckpt.seed,
        )
        models.load_state(ckpt.tensors)
        return cls(models, catalog, cfg["m"], cfg)


def _trainable_params(models: ModelSet, variant: str):
    named = models.extractor.params() + models.classifier.params()
    if variant in ("dta", "full"):
        for m in models.mappings:
            named += m.params()
    if variant == "full":
        named += models.weight_net.params()
    return [t for _, t in named]


def _batch_losses(models, config, catalog, xs, ys, rng, epoch, step):
    """Build the variant's loss graph for one batch; returns (total tensor,
    per-component floats)."""
    variant = config.variant
    if variant == "base":
        l_c = loss_classification(models.extractor, models.classifier, xs, ys)
        return l_c, (l_c.item(), 0.0, 0.0)

    aux = np.empty_like(xs)
    for i in range(xs.shape[0]):
        subset = sample_factor_subset(rng, catalog, config.n_min, config.n_max)
        aux[i], _ = generate_auxiliary(xs[i], subset, rng)

    if variant == "dt":
        logits = models.classifier.logits(
            models.extractor(ops.concatenate([Tensor(xs), Tensor(aux)], axis=0))
        )
        l_c = ops.mean(ops.cross_entropy_with_softmax(logits, np.concatenate([ys, ys])))
        return l_c, (l_c.item(), 0.0, 0.0)

    l_c = loss_classification(models.extractor, models.classifier, xs, ys)
    if variant == "dta":
        weight_net, effects = None, np.zeros((xs.shape[0], len(catalog), models.classifier.n_classes))
    else:
        seeds = [derive_noise_seed(config.seed, epoch, step, i) for i in range(xs.shape[0])]
        with no_tape():
            effects = effect_profiles_batch(models.extractor, models.classifier, aux, catalog, config.m, seeds)
        weight_net = models.weight_net
    l_ac = loss_alignment_causal(
        models.extractor, models.classifier, models.mappings, weight_net, xs, ys, aux, effects
    )
    l_am = loss_alignment_marginal(models.extractor, models.classifier, models.mappings, xs, ys, catalog, rng)
    total, breakdown = loss_total(l_c, l_ac, l_am)
    return total, (breakdown.l_c, breakdown.l_ac, breakdown.l_am)


def train(config: TrainConfig, source: Dataset):
    """Run the training loop; returns (Checkpoint, list of MetricsRow)."""
    config.validate()
    if len(source) == 0:
        raise ContractViolation("train: empty source dataset")
    catalog = config.catalog()
    if config.n_max > len(catalog):
        raise ContractViolation(f"n_max={config.n_max} exceeds catalog size {len(catalog)}")
    input_shape = tuple(source.images.shape[1:])
    n_classes = int(source.labels.max()) + 1
    models = ModelSet.create(input_shape, n_classes, len(catalog), feature_dim=config.feature_dim, seed=config.seed)
    params = _trainable_params(models, config.variant)
    opt = SGD(params, lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    metrics = []
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(len(source))
        sums = np.zeros(3)
        correct = 0
        steps = 0
        for start in range(0, len(source), config.batch_size):
            idx = perm[start : start + config.batch_size]
            xs, ys = source.images[idx], source.labels[idx]
            step = steps
            try:
                with no_tape():
                    preds = models.classifier(models.extractor(Tensor(xs))).data.argmax(axis=1)
                correct += int((preds == ys).sum())
                with Tape() as tape:
                    total, parts = _batch_losses(models, config, catalog, xs, ys, rng, epoch, step)
                grads = backward(tape, total)
            except TrainingDiverged:
                raise
            except NumericError as e:
                raise TrainingDiverged(epoch, step, str(e)) from None
            opt.step([grads[p.uid] for p in params])
            sums += np.asarray(parts)
            steps += 1
        means = sums / max(steps, 1)
        metrics.append(MetricsRow(epoch, "train", float(means[0]), float(means[1]), float(means[2]),
                                  100.0 * correct / len(source)))
    resolved = asdict(config)
    resolved.update({"input_shape": list(input_shape), "n_classes": n_classes})
    ckpt = Checkpoint(dict(models.state_arrays()), resolved, config.seed)
    return ckpt, metrics


def infer(trained: TrainedModel, image: np.ndarray, noise_seed: int = INFER_NOISE_SEED):
    """Predict one sample: infer its effect profile, weight the mappings,
    classify the projected feature. Returns (label, MappingWeights).
    Argmax ties break toward the lowest category index."""
    models = trained.models
    profile = effect_profile(models.extractor, models.classifier, image, trained.catalog, trained.m, noise_seed)
    omega = mapping_weights(models.weight_net, profile, k_expected=len(models.mappings))
    with no_tape():
        feats = models.extractor(Tensor(image[None]))
        mapped = np.stack([m(feats).data[0] for m in models.mappings])
        projected = (omega.omega[:, None].astype(mapped.dtype) * mapped).sum(axis=0)
        probs = models.classifier(Tensor(projected[None])).data[0]
    return int(probs.argmax()), omega


def analyze_batch(trained: TrainedModel, images: np.ndarray, noise_seed: int = INFER_NOISE_SEED):
    """Vectorized inference over an image batch. Returns (predictions (n,),
    omegas (n, K), effect L1 norms (n, K))."""
    models = trained.models
    effects = effect_profiles_batch(
        models.extractor, models.classifier, images, trained.catalog, trained.m,
        [noise_seed] * images.shape[0],
    )
    with no_tape():
        omegas = mapping_weights_tensor(models.weight_net, effects).data
        feats = models.extractor(Tensor(images))
        mapped = np.stack([m(feats).data for m in models.mappings], axis=1)  # (n, K, d)
        projected = (omegas[:, :, None] * mapped).sum(axis=1)
        probs = models.classifier(Tensor(projected.astype(feats.dtype))).data
    return probs.argmax(axis=1), omegas, np.abs(effects).sum(axis=2)


def evaluate(trained: TrainedModel, dataset: Dataset, chunk: int = 256) -> MetricsRow:
    """Accuracy of the inference path over a labeled dataset."""
    if len(dataset) == 0:
        raise ContractViolation("evaluate: empty dataset")
    correct = 0
    for start in range(0, len(dataset), chunk):
        images = dataset.images[start : start + chunk]
        labels = dataset.labels[start : start + chunk]
        preds, _, _ = analyze_batch(trained, images)
        correct += int((preds == labels).sum())
    return MetricsRow(None, dataset.name, None, None, None, 100.0 * correct / len(dataset))
