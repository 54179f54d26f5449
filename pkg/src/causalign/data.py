"""Dataset ingestion, corruption-benchmark generation, and splits.

Inputs are IDX files (big-endian, standard magic numbers). Derived datasets
persist as a JSON manifest plus a raw little-endian float32 tensor file
(magic ``MCDS0001``) and a u8 labels file. Corruption follows the severity
protocol: level s in 1..5 maps linearly onto the factor's degree range and
each image is transformed with a seed derived from (spec seed, index).
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, FormatError
from .imgops import TransformSpec, apply_factor, get_factor
from .parallel import ordered_map

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
TENSOR_MAGIC = b"MCDS0001"


@dataclass
class Dataset:
    images: np.ndarray  # (n, H, W, C) float32 in [0, 1]
    labels: np.ndarray  # (n,) int64
    name: str = "dataset"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ContractViolation(f"dataset images must be (n, H, W, C), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ContractViolation(f"{len(self.images)} images vs {len(self.labels)} labels")

    def __len__(self):
        return len(self.images)

    def subset(self, indices, name=None):
        return Dataset(self.images[indices], self.labels[indices], name or self.name, dict(self.provenance))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.images.tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class CorruptionSpec:
    factor_id: str
    severity: int
    seed: int


def _read_exact(f, n, path):
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated at byte offset {f.tell() - len(data)} (wanted {n} bytes)")
    return data


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label pair; pixels are scaled to [0, 1]."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    with open(images_path, "rb") as f:
        magic, = struct.unpack(">I", _read_exact(f, 4, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"{images_path}: bad magic 0x{magic:08x} at byte offset 0 (expected 0x{IDX_IMAGES_MAGIC:08x})")
        count, h, w = struct.unpack(">III", _read_exact(f, 12, images_path))
        raw = _read_exact(f, count * h * w, images_path)
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, h, w, 1)
    with open(labels_path, "rb") as f:
        magic, = struct.unpack(">I", _read_exact(f, 4, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"{labels_path}: bad magic 0x{magic:08x} at byte offset 0 (expected 0x{IDX_LABELS_MAGIC:08x})")
        lcount, = struct.unpack(">I", _read_exact(f, 4, labels_path))
        if lcount != count:
            raise FormatError(f"{labels_path}: {lcount} labels for {count} images")
        labels = np.frombuffer(_read_exact(f, lcount, labels_path), dtype=np.uint8)
    return Dataset(
        images.astype(np.float32) / np.float32(255.0),
        labels.astype(np.int64),
        name=images_path.stem,
        provenance={"images": str(images_path), "labels": str(labels_path)},
    )


def save_idx(images_u8: np.ndarray, labels: np.ndarray, images_path, labels_path):
    """Write an IDX pair (images uint8 (n, H, W), labels uint8 (n,))."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images_u8.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(images_u8.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(labels.tobytes())


def severity_degree(factor, severity: int) -> float:
    """Map severity 1..5 onto the factor's degree range: g_min + (s/5)*span."""
    lo, hi = factor.degree_range
    degree = lo + (severity / 5.0) * (hi - lo)
    if factor.integer_degree:
        degree = float(round(degree))
    return degree


def make_corrupted(dataset: Dataset, spec: CorruptionSpec) -> Dataset:
    """Corrupt every image with the spec's factor at the severity-mapped
    degree; deterministic given the spec seed."""
    if not (1 <= spec.severity <= 5):
        raise ContractViolation(f"severity must be in 1..5, got {spec.severity}")
    factor = get_factor(spec.factor_id)
    if factor.degree_free:
        if spec.severity != 1:
            raise ContractViolation(f"{factor.id} is degree-free: no severity axis (only severity 1 allowed)")
        degree = None
    else:
        degree = severity_degree(factor, spec.severity)
    def corrupt_one(i):
        seed = int(np.random.SeedSequence((spec.seed, i)).generate_state(1)[0])
        return apply_factor(dataset.images[i], TransformSpec(factor, degree, noise_seed=seed))

    out = np.stack(ordered_map(corrupt_one, range(len(dataset))))
    return Dataset(
        out,
        dataset.labels.copy(),
        name=f"{dataset.name}__{spec.factor_id}_s{spec.severity}",
        provenance={
            "source": dataset.name,
            "source_hash": dataset.content_hash(),
            "corruption": {"factor": spec.factor_id, "severity": spec.severity, "degree": degree, "seed": spec.seed},
        },
    )


def split(dataset: Dataset, seed: int, fractions) -> tuple:
    """Disjoint, exhaustive, seed-deterministic shuffle split. Sizes are
    floors of the fractions with the remainder given to the largest
    fractional parts (earlier split wins ties)."""
    fractions = [float(f) for f in fractions]
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractViolation(f"fractions must be nonnegative and sum to 1, got {fractions}")
    n = len(dataset)
    raw = [f * n for f in fractions]
    sizes = [int(np.floor(r)) for r in raw]
    remainder = n - sum(sizes)
    by_frac = sorted(range(len(fractions)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in by_frac[:remainder]:
        sizes[i] += 1
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    parts = []
    start = 0
    for idx, size in enumerate(sizes):
        parts.append(dataset.subset(perm[start : start + size], name=f"{dataset.name}_part{idx}"))
        start += size
    return tuple(parts)


def save_dataset(dataset: Dataset, out_prefix) -> str:
    """Persist as manifest + tensors + labels; returns the manifest path."""
    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    tensors = prefix.with_suffix(".tensors")
    labels = prefix.with_suffix(".labels")
    manifest = prefix.with_suffix(".manifest.json")
    n, h, w, c = dataset.images.shape
    with open(tensors, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<IIII", n, h, w, c))
        f.write(dataset.images.astype("<f4").tobytes())
    if dataset.labels.size and (dataset.labels.min() < 0 or dataset.labels.max() > 255):
        raise ContractViolation("labels must fit in u8")
    with open(labels, "wb") as f:
        f.write(dataset.labels.astype(np.uint8).tobytes())
    doc = {
        "name": dataset.name,
        "count": int(n),
        "shape": [int(h), int(w), int(c)],
        "tensors": tensors.name,
        "labels": labels.name,
        "provenance": dataset.provenance,
    }
    with open(manifest, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return str(manifest)


def load_dataset(manifest_path) -> Dataset:
    """Load a dataset saved by save_dataset."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{manifest_path}: invalid manifest JSON ({e})") from None
    tensors = manifest_path.parent / doc["tensors"]
    labels = manifest_path.parent / doc["labels"]
    with open(tensors, "rb") as f:
        magic = _read_exact(f, 8, tensors)
        if magic != TENSOR_MAGIC:
            raise FormatError(f"{tensors}: bad magic {magic!r} at byte offset 0 (expected {TENSOR_MAGIC!r})")
        n, h, w, c = struct.unpack("<IIII", _read_exact(f, 16, tensors))
        data = np.frombuffer(_read_exact(f, n * h * w * c * 4, tensors), dtype="<f4").reshape(n, h, w, c)
    with open(labels, "rb") as f:
        lab = np.frombuffer(_read_exact(f, n, labels), dtype=np.uint8)
    return Dataset(data.copy(), lab.astype(np.int64), name=doc.get("name", manifest_path.stem),
                   provenance=doc.get("provenance", {}))


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain bilinear resize for a single-channel float image."""
    h, w = img.shape
    rows = np.linspace(0, h - 1, out_h)
    cols = np.linspace(0, w - 1, out_w)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = img[np.ix_(r0, c0)] * (1 - fc) + img[np.ix_(r0, c1)] * fc
    bottom = img[np.ix_(r1, c0)] * (1 - fc) + img[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bottom * fr


def synthetic_digits(size: int = 28, seed: int = 0) -> Dataset:
    """Offline desk-scale digit corpus: the scikit-learn handwritten digits
    (8x8, 1797 samples) upscaled to (size, size) and seed-shuffled. Serves as
    the source benchmark when the full-scale digit archives are absent."""
    from sklearn.datasets import load_digits

    x, y = load_digits(return_X_y=True)
    imgs8 = (x.reshape(-1, 8, 8) / 16.0).astype(np.float64)
    out = np.empty((len(imgs8), size, size, 1), dtype=np.float32)
    for i, img in enumerate(imgs8):
        out[i, :, :, 0] = np.clip(_resize_bilinear(img, size, size), 0.0, 1.0)
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(len(out))
    return Dataset(out[perm], y[perm].astype(np.int64), name="digits",
                   provenance={"source": "sklearn.datasets.load_digits", "size": size, "seed": seed})
