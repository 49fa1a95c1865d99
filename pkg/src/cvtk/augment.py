"""Random augmentation policy: apply N randomly drawn transforms at magnitude M.

All 16 transforms preserve image dimensions and the 8-bit intensity range.
Magnitude runs on an integer scale 0..30 where 0 is the weakest
parameterization of each transform (identity where the transform has an
identity) and 30 the strongest. The per-transform parameter ranges are listed
in ``MAGNITUDE_TABLE`` and documented in the README.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from PIL import Image, ImageEnhance, ImageOps

MAX_MAGNITUDE = 30

# Constant fill for exposed regions (geometric transforms) and cutout
# squares; mean gray of large natural-image collections.
FILL_RGB = (125, 123, 114)

TRANSFORM_NAMES = (
    "AutoContrast",
    "Equalize",
    "Invert",
    "Rotate",
    "Color",
    "Posterize",
    "Solarize",
    "SolarizeAdd",
    "Contrast",
    "Brightness",
    "Sharpness",
    "ShearX",
    "ShearY",
    "CutoutAbs",
    "TranslateX",
    "TranslateY",
)

# name -> (parameter at magnitude 0, parameter at magnitude 30); "signed"
# marks transforms whose direction is drawn at random when an rng is given.
MAGNITUDE_TABLE = {
    "AutoContrast": ("-", "-", False),
    "Equalize": ("-", "-", False),
    "Invert": ("-", "-", False),
    "Rotate": (0.0, 30.0, True),  # degrees
    "Color": (1.0, 1.9, True),  # enhancement factor, mirrored to 0.1
    "Posterize": (8, 4, False),  # bits kept
    "Solarize": (256, 0, False),  # inversion threshold
    "SolarizeAdd": (0, 110, False),  # additive shift below threshold 128
    "Contrast": (1.0, 1.9, True),
    "Brightness": (1.0, 1.9, True),
    "Sharpness": (1.0, 1.9, True),
    "ShearX": (0.0, 0.3, True),  # shear factor
    "ShearY": (0.0, 0.3, True),
    "CutoutAbs": (0.0, 0.4, False),  # square side as fraction of shorter side
    "TranslateX": (0.0, 0.45, True),  # offset as fraction of width
    "TranslateY": (0.0, 0.45, True),
}


class TransformError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentPolicy:
    """RandAugment configuration: draw ``num_ops`` transforms, magnitude fixed."""

    num_ops: int = 5
    magnitude: int = 12
    transform_set: tuple[str, ...] = TRANSFORM_NAMES

    def __post_init__(self):
        if self.num_ops < 0:
            raise ValueError("num_ops must be >= 0")
        if not 0 <= self.magnitude <= MAX_MAGNITUDE:
            raise ValueError(f"magnitude must be in [0, {MAX_MAGNITUDE}]")
        unknown = set(self.transform_set) - set(TRANSFORM_NAMES)
        if unknown:
            raise ValueError(f"unknown transforms: {sorted(unknown)}")


DEFAULT_POLICY = AugmentPolicy()


def _fill(image: Image.Image):
    if image.mode == "RGB":
        return FILL_RGB
    if len(image.getbands()) == 1:
        return sum(FILL_RGB) // 3
    return tuple(sum(FILL_RGB) // 3 for _ in image.getbands())


def _frac(magnitude: int) -> float:
    return magnitude / MAX_MAGNITUDE


def _sign(rng) -> int:
    if rng is None:
        return 1
    return 1 if rng.random() < 0.5 else -1


def _affine(image: Image.Image, coeffs) -> Image.Image:
    return image.transform(image.size, Image.AFFINE, coeffs, fillcolor=_fill(image))


def _enhance(factory, image, magnitude, rng):
    factor = 1.0 + _sign(rng) * _frac(magnitude) * 0.9
    return factory(image).enhance(factor)


def _solarize_add(image: Image.Image, addition: int, threshold: int = 128) -> Image.Image:
    arr = np.asarray(image).astype(np.int32)
    shifted = np.clip(arr + addition, 0, 255)
    out = np.where(arr < threshold, shifted, arr).astype(np.uint8)
    return Image.fromarray(out, mode=image.mode)


def _cutout(image: Image.Image, magnitude: int, rng) -> Image.Image:
    w, h = image.size
    side = round(_frac(magnitude) * 0.4 * min(w, h))
    if side <= 0:
        return image.copy()
    if rng is None:
        cx, cy = w / 2, h / 2
    else:
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
    x0 = int(max(0, cx - side / 2))
    y0 = int(max(0, cy - side / 2))
    x1 = int(min(w, cx + side / 2))
    y1 = int(min(h, cy + side / 2))
    out = image.copy()
    out.paste(_fill(image), (x0, y0, x1, y1))
    return out


def transform(name: str, magnitude: int, image: Image.Image, rng: Optional[random.Random] = None) -> Image.Image:
    """Apply one named transform at the given magnitude.

    With ``rng=None`` directional transforms use their positive direction and
    the cutout square is centered; otherwise direction and position come from
    the rng. Output dimensions always equal input dimensions.
    """
    if name not in TRANSFORM_NAMES:
        raise TransformError(f"unknown transform {name!r}")
    if not 0 <= magnitude <= MAX_MAGNITUDE:
        raise TransformError(f"magnitude must be in [0, {MAX_MAGNITUDE}]")
    f = _frac(magnitude)
    w, h = image.size

    if name == "AutoContrast":
        return ImageOps.autocontrast(image)
    if name == "Equalize":
        return ImageOps.equalize(image)
    if name == "Invert":
        return ImageOps.invert(image)
    if name == "Rotate":
        return image.rotate(_sign(rng) * f * 30.0, fillcolor=_fill(image))
    if name == "Color":
        return _enhance(ImageEnhance.Color, image, magnitude, rng)
    if name == "Contrast":
        return _enhance(ImageEnhance.Contrast, image, magnitude, rng)
    if name == "Brightness":
        return _enhance(ImageEnhance.Brightness, image, magnitude, rng)
    if name == "Sharpness":
        return _enhance(ImageEnhance.Sharpness, image, magnitude, rng)
    if name == "Posterize":
        return ImageOps.posterize(image, 8 - round(f * 4))
    if name == "Solarize":
        return ImageOps.solarize(image, 256 - round(f * 256))
    if name == "SolarizeAdd":
        return _solarize_add(image, round(f * 110))
    if name == "ShearX":
        return _affine(image, (1, _sign(rng) * f * 0.3, 0, 0, 1, 0))
    if name == "ShearY":
        return _affine(image, (1, 0, 0, _sign(rng) * f * 0.3, 1, 0))
    if name == "TranslateX":
        return _affine(image, (1, 0, _sign(rng) * round(f * 0.45 * w), 0, 1, 0))
    if name == "TranslateY":
        return _affine(image, (1, 0, 0, 0, 1, _sign(rng) * round(f * 0.45 * h)))
    if name == "CutoutAbs":
        return _cutout(image, magnitude, rng)
    raise AssertionError(name)


def apply(policy: AugmentPolicy, image: Image.Image, rng: random.Random) -> Image.Image:
    """Draw ``num_ops`` transforms uniformly with replacement and apply in order.

    Pure in (policy, image, rng state): the same seeded rng reproduces the
    same output bytes.
    """
    out = image
    for _ in range(policy.num_ops):
        name = rng.choice(policy.transform_set)
        out = transform(name, policy.magnitude, out, rng=rng)
    return out
