"""Variant-factor catalog and image transformation engine.

Images are float arrays of shape (H, W, C) with C in {1, 3} and values in
[0, 1]; every transform clamps back into that range and preserves shape.
Geometric transforms resample on a fixed canvas with bilinear interpolation
and edge replication. Stochastic factors draw from an explicit seed so that
apply_factor is a pure function of (image, spec).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

PHOTOMETRIC = "photometric"
GEOMETRIC = "geometric"

# ITU-R 601 luma weights for 3-channel grayscale reduction
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class VariantFactor:
    """One extrinsic-attribute operator: an id, a kind, and a degree scale."""

    id: str
    kind: str
    degree_range: tuple[float, float] | None
    degree_free: bool = False
    identity_degree: float | None = None
    integer_degree: bool = False
    stochastic: bool = False


@dataclass(frozen=True)
class TransformSpec:
    """A factor plus a concrete degree (None for degree-free factors) and a
    noise seed for the stochastic factors."""

    factor: VariantFactor
    degree: float | None = None
    noise_seed: int | None = None


FULL_CATALOG: tuple[VariantFactor, ...] = (
    VariantFactor("Brightness", PHOTOMETRIC, (0.3, 1.7), identity_degree=1.0),
    VariantFactor("Contrast", PHOTOMETRIC, (0.3, 1.7), identity_degree=1.0),
    VariantFactor("Color", PHOTOMETRIC, (0.3, 1.7), identity_degree=1.0),
    VariantFactor("Sharpness", PHOTOMETRIC, (0.3, 1.7), identity_degree=1.0),
    VariantFactor("AutoContrast", PHOTOMETRIC, None, degree_free=True),
    VariantFactor("Invert", PHOTOMETRIC, None, degree_free=True),
    VariantFactor("Equalize", PHOTOMETRIC, None, degree_free=True),
    VariantFactor("Solarize", PHOTOMETRIC, (0.0, 1.0), identity_degree=1.0),
    VariantFactor("SolarizeAdd", PHOTOMETRIC, (0.0, 0.43), identity_degree=0.0),
    VariantFactor("Posterize", PHOTOMETRIC, (4.0, 8.0), identity_degree=8.0, integer_degree=True),
    VariantFactor("NoiseSalt", PHOTOMETRIC, (0.0, 0.10), identity_degree=0.0, stochastic=True),
    VariantFactor("NoiseGaussian", PHOTOMETRIC, (0.0, 0.20), identity_degree=0.0, stochastic=True),
    VariantFactor("ShearX", GEOMETRIC, (-0.3, 0.3), identity_degree=0.0),
    VariantFactor("ShearY", GEOMETRIC, (-0.3, 0.3), identity_degree=0.0),
    VariantFactor("Rotate", GEOMETRIC, (-30.0, 30.0), identity_degree=0.0),
    VariantFactor("Flip", GEOMETRIC, None, degree_free=True),
)

# Rotate and Flip can change digit semantics (6/9, mirrored digits)
DIGITS_EXCLUDED = ("Rotate", "Flip")

_BY_ID = {f.id: f for f in FULL_CATALOG}


def get_factor(factor_id: str) -> VariantFactor:
    try:
        return _BY_ID[factor_id]
    except KeyError:
        raise ContractViolation(f"unknown variant factor {factor_id!r}") from None


def catalog_for_mode(mode) -> list[VariantFactor]:
    """Resolve a factor mode (all | photometric | geometric | digits |
    explicit id list) into an ordered factor list."""
    if isinstance(mode, (list, tuple)):
        ids = list(mode)
        if not ids or len(set(ids)) != len(ids):
            raise ContractViolation(f"explicit factor list must be nonempty and distinct: {ids}")
        return [get_factor(i) for i in ids]
    if mode == "all":
        return list(FULL_CATALOG)
    if mode == "photometric":
        return [f for f in FULL_CATALOG if f.kind == PHOTOMETRIC]
    if mode == "geometric":
        return [f for f in FULL_CATALOG if f.kind == GEOMETRIC]
    if mode == "digits":
        return [f for f in FULL_CATALOG if f.id not in DIGITS_EXCLUDED]
    raise ContractViolation(f"unknown factor_mode {mode!r}")


def _validate_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ContractViolation(f"image must be (H, W, C) with C in {{1,3}}, got {img.shape}")
    return img


def _gray(img: np.ndarray) -> np.ndarray:
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ _LUMA.astype(img.dtype)


def _clamp(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def _quantize_255(img: np.ndarray) -> np.ndarray:
    """Map [0,1] floats onto the 0..255 integer grid (floor binning)."""
    return np.minimum((img * 256.0).astype(np.int64), 255)


# --- photometric implementations -------------------------------------------


def _brightness(img, degree):
    return img * img.dtype.type(degree)


def _contrast(img, degree):
    anchor = img.dtype.type(_gray(img).mean())
    return anchor + img.dtype.type(degree) * (img - anchor)


def _color(img, degree):
    if img.shape[2] == 1:
        return img.copy()  # saturation undefined for grayscale
    g = _gray(img)[:, :, None]
    return g + img.dtype.type(degree) * (img - g)


def _smooth3x3(img):
    """PIL-style smoothing: 3x3 kernel [[1,1,1],[1,5,1],[1,1,1]]/13 applied
    to the interior, border pixels kept from the source."""
    out = img.copy()
    if img.shape[0] < 3 or img.shape[1] < 3:
        return out
    k = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=img.dtype) / img.dtype.type(13)
    acc = np.zeros_like(img[1:-1, 1:-1])
    for i in range(3):
        for j in range(3):
            acc += k[i, j] * img[i : i + img.shape[0] - 2, j : j + img.shape[1] - 2]
    out[1:-1, 1:-1] = acc
    return out


def _sharpness(img, degree):
    smooth = _smooth3x3(img)
    return smooth + img.dtype.type(degree) * (img - smooth)


def _autocontrast(img, _degree):
    out = img.copy()
    for c in range(img.shape[2]):
        ch = img[:, :, c]
        lo, hi = ch.min(), ch.max()
        if hi > lo:
            out[:, :, c] = (ch - lo) / (hi - lo)
    return out


def _invert(img, _degree):
    return img.dtype.type(1.0) - img


def _equalize(img, _degree):
    out = img.copy()
    q = _quantize_255(img)
    for c in range(img.shape[2]):
        hist = np.bincount(q[:, :, c].reshape(-1), minlength=256)
        nonzero = hist[hist > 0]
        if nonzero.size <= 1:
            continue
        step = (hist.sum() - nonzero[-1]) // 255
        if step == 0:
            continue
        lut = (np.concatenate(([0], np.cumsum(hist)[:-1])) + step // 2) // step
        lut = np.clip(lut, 0, 255)
        out[:, :, c] = lut[q[:, :, c]].astype(img.dtype) / img.dtype.type(255)
    return out


def _solarize(img, degree):
    return np.where(img > img.dtype.type(degree), img.dtype.type(1.0) - img, img)


def _solarize_add(img, degree):
    return np.where(img < img.dtype.type(0.5), img + img.dtype.type(degree), img)


def _posterize(img, degree):
    bits = int(round(degree))
    if bits >= 8:
        return img.copy()
    mask = (0xFF << (8 - bits)) & 0xFF
    q = _quantize_255(img) & mask
    return (q / 255.0).astype(img.dtype)


def _noise_salt(img, degree, rng):
    if degree == 0:
        return img.copy()
    out = img.copy()
    salted = rng.random(img.shape[:2]) < degree
    out[salted] = img.dtype.type(1.0)
    return out


def _noise_gaussian(img, degree, rng):
    if degree == 0:
        return img.copy()
    noise = rng.normal(0.0, degree, img.shape)
    return (img + noise.astype(img.dtype)).astype(img.dtype)


# --- geometric implementations ----------------------------------------------


def _sample_bilinear(img, rows, cols):
    """Bilinear sample at float (row, col) grids; out-of-canvas coordinates
    clamp to the edge (replication fill)."""
    h, w = img.shape[:2]
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = (rows - r0).astype(img.dtype)[:, :, None]
    fc = (cols - c0).astype(img.dtype)[:, :, None]
    r0c = np.clip(r0, 0, h - 1)
    r1c = np.clip(r0 + 1, 0, h - 1)
    c0c = np.clip(c0, 0, w - 1)
    c1c = np.clip(c0 + 1, 0, w - 1)
    one = img.dtype.type(1.0)
    return (
        img[r0c, c0c] * (one - fr) * (one - fc)
        + img[r0c, c1c] * (one - fr) * fc
        + img[r1c, c0c] * fr * (one - fc)
        + img[r1c, c1c] * fr * fc
    )


def _center_grid(img):
    h, w = img.shape[:2]
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return rows, cols, (h - 1) / 2.0, (w - 1) / 2.0


def _shear_x(img, degree):
    rows, cols, cr, _ = _center_grid(img)
    return _sample_bilinear(img, rows, cols + degree * (rows - cr))


def _shear_y(img, degree):
    rows, cols, _, cc = _center_grid(img)
    return _sample_bilinear(img, rows + degree * (cols - cc), cols)


def _rotate(img, degree):
    rows, cols, cr, cc = _center_grid(img)
    a = np.deg2rad(degree)
    cs, sn = np.cos(a), np.sin(a)
    dr, dc = rows - cr, cols - cc
    return _sample_bilinear(img, cs * dr - sn * dc + cr, sn * dr + cs * dc + cc)


def _flip(img, _degree):
    return img[:, ::-1, :].copy()


_IMPL = {
    "Brightness": _brightness,
    "Contrast": _contrast,
    "Color": _color,
    "Sharpness": _sharpness,
    "AutoContrast": _autocontrast,
    "Invert": _invert,
    "Equalize": _equalize,
    "Solarize": _solarize,
    "SolarizeAdd": _solarize_add,
    "Posterize": _posterize,
    "ShearX": _shear_x,
    "ShearY": _shear_y,
    "Rotate": _rotate,
    "Flip": _flip,
}


def apply_factor(image: np.ndarray, spec: TransformSpec) -> np.ndarray:
    """Apply one variant-factor transformation. Pure function of
    (image, spec); output has the input's shape and dtype, clamped to [0, 1]."""
    img = _validate_image(image)
    factor = spec.factor
    if factor.degree_free:
        degree = None
    else:
        if spec.degree is None:
            raise ContractViolation(f"{factor.id}: missing degree (range {factor.degree_range})")
        lo, hi = factor.degree_range
        if not (lo <= spec.degree <= hi):
            raise ContractViolation(f"{factor.id}: degree {spec.degree} outside [{lo}, {hi}]")
        degree = spec.degree
        if factor.identity_degree is not None and degree == factor.identity_degree:
            return img.copy()  # exact null transform; keeps identity interventions bit-clean
    if factor.stochastic:
        seed = 0 if spec.noise_seed is None else spec.noise_seed
        rng = np.random.Generator(np.random.PCG64(seed))
        if factor.id == "NoiseSalt":
            out = _noise_salt(img, degree, rng)
        else:
            out = _noise_gaussian(img, degree, rng)
    else:
        out = _IMPL[factor.id](img, degree)
    return _clamp(out).astype(img.dtype, copy=False)


def sample_factor_subset(rng: np.random.Generator, catalog, n_min: int, n_max: int) -> list[VariantFactor]:
    """Draw an ordered subset: size uniform on [n_min, n_max], factors
    without replacement, draw order retained for composition."""
    if not catalog:
        raise ContractViolation("sample_factor_subset: empty catalog")
    if not (1 <= n_min <= n_max <= len(catalog)):
        raise ContractViolation(f"sample_factor_subset: bad bounds n_min={n_min}, n_max={n_max}, |catalog|={len(catalog)}")
    size = int(rng.integers(n_min, n_max + 1))
    idx = rng.choice(len(catalog), size=size, replace=False)
    return [catalog[i] for i in idx]


def draw_spec(factor: VariantFactor, rng: np.random.Generator) -> TransformSpec:
    """Random spec for one factor: degree uniform over its range, fresh seed
    for stochastic factors."""
    degree = None
    if not factor.degree_free:
        lo, hi = factor.degree_range
        degree = float(rng.uniform(lo, hi))
        if factor.integer_degree:
            degree = float(round(degree))
    seed = int(rng.integers(0, 2**31)) if factor.stochastic else None
    return TransformSpec(factor, degree, seed)


def generate_auxiliary(image: np.ndarray, subset, rng: np.random.Generator):
    """Compose the subset's transforms left to right with random degrees.
    Returns (transformed image, list of specs used)."""
    out = _validate_image(image)
    specs = []
    for factor in subset:
        spec = draw_spec(factor, rng)
        specs.append(spec)
        out = apply_factor(out, spec)
    return out, specs


def degree_grid(factor: VariantFactor, m: int) -> list:
    """Uniform degree grid over the factor's range, endpoints included.
    Degree-free factors yield a singleton [None] (the transform itself)."""
    if m < 1:
        raise ContractViolation(f"degree_grid: m must be >= 1, got {m}")
    if factor.degree_free:
        return [None]
    lo, hi = factor.degree_range
    grid = [float(v) for v in np.linspace(lo, hi, m)]
    if factor.integer_degree:
        grid = [float(round(v)) for v in grid]
    return grid
