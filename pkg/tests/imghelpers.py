"""Image generators for transform tests.

Random test images are drawn on the dyadic 1/256 grid: realistic for 8-bit
imagery and exactly representable in float32, so involution checks can be
bit-exact.
"""

import numpy as np


def random_images(rng, n, h=12, w=12, c=3, dtype=np.float32):
    return (rng.integers(0, 257, size=(n, h, w, c)) / 256.0).astype(dtype)


def random_image(rng, h=12, w=12, c=3, dtype=np.float32):
    return random_images(rng, 1, h, w, c, dtype)[0]
