"""Image kernels behind the augmentation and corruption transforms.

All functions take and return float64 ``(H, W, 3)`` arrays in ``[0, 1]``.
Geometric helpers also transform an optional boolean mask with the same
parameters (nearest-neighbour sampling, so masks stay binary).
"""

from __future__ import annotations

import cv2
import numpy as np
from scipy import ndimage

from ..core import resize_bicubic, resize_nearest

LUMA = np.array([0.299, 0.587, 0.114])
_BORDER = cv2.BORDER_REFLECT_101


def _clip(x):
    return np.clip(x, 0.0, 1.0)


def luma(image: np.ndarray) -> np.ndarray:
    return image @ LUMA


def _filter(image, kernel):
    return cv2.filter2D(np.ascontiguousarray(image), -1, np.asarray(kernel, dtype=np.float64),
                        borderType=_BORDER)


# -- geometry ---------------------------------------------------------------

def flip(image, mask, mode):
    axes = {"h": (1,), "v": (0,), "hv": (0, 1)}[mode]
    image = np.flip(image, axis=axes).copy()
    if mask is not None:
        mask = np.flip(mask, axis=axes).copy()
    return image, mask


def rotate90(image, mask, k):
    image = np.ascontiguousarray(np.rot90(image, k, axes=(0, 1)))
    if mask is not None:
        mask = np.ascontiguousarray(np.rot90(mask, k, axes=(0, 1)))
    return image, mask


def affine_matrix(width, height, rotation, translate_x, translate_y, shear):
    """2x3 matrix: shear, then rotate about the centre, then translate by a fraction of the size."""
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    theta = np.deg2rad(rotation)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    sh = np.array([[1.0, np.tan(np.deg2rad(shear))], [0.0, 1.0]])
    lin = rot @ sh
    centre = np.array([cx, cy])
    offset = centre + np.array([translate_x * width, translate_y * height]) - lin @ centre
    return np.hstack([lin, offset[:, None]])


def affine(image, mask, rotation, translate_x, translate_y, shear):
    h, w = image.shape[:2]
    m = affine_matrix(w, h, rotation, translate_x, translate_y, shear)
    out = cv2.warpAffine(image, m, (w, h), flags=cv2.INTER_CUBIC,
                         borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    if mask is not None:
        mask = cv2.warpAffine(mask.astype(np.uint8), m, (w, h), flags=cv2.INTER_NEAREST,
                              borderMode=cv2.BORDER_CONSTANT, borderValue=0).astype(bool)
    return _clip(out), mask


def crop_box(width, height, scale, rng):
    """Square-aspect crop covering ``scale`` of the area (capped at the full frame)."""
    side = min(1.0, float(np.sqrt(scale)))
    cw = max(1, int(round(side * width)))
    ch = max(1, int(round(side * height)))
    x = int(rng.integers(0, width - cw + 1))
    y = int(rng.integers(0, height - ch + 1))
    return x, y, cw, ch


def crop_resize(image, mask, box, out_w, out_h):
    x, y, w, h = box
    image = resize_bicubic(image[y:y + h, x:x + w], out_w, out_h)
    if mask is not None:
        mask = resize_nearest(mask[y:y + h, x:x + w], out_w, out_h)
    return image, mask


# -- photometric ------------------------------------------------------------

def grayscale(image):
    g = luma(image)
    return np.repeat(g[..., None], 3, axis=2)


def brightness(image, factor):
    return _clip(image * factor)


def contrast(image, factor):
    m = luma(image).mean()
    return _clip((image - m) * factor + m)


def saturation(image, factor):
    g = luma(image)[..., None]
    out = _clip(g + (image - g) * factor)
    # achromatic pixels are fixed points; avoid rounding drift in the luma sum
    gray = ((image[..., 0] == image[..., 1]) & (image[..., 1] == image[..., 2]))[..., None]
    return np.where(gray, image, out)


def hue_shift(image, shift):
    """Rotate hue by ``shift`` turns of the colour circle."""
    if shift == 0:
        return image.copy()
    hsv = cv2.cvtColor(image.astype(np.float32), cv2.COLOR_RGB2HSV)
    hsv[..., 0] = np.mod(hsv[..., 0] + 360.0 * shift, 360.0)
    return _clip(cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB).astype(np.float64))


def solarize(image, threshold=0.5):
    return np.where(image >= threshold, 1.0 - image, image)


_SMOOTH = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13.0


def enhance_sharpness(image, factor):
    """Blend away from a 3x3 smoothed copy; ``factor`` 1 is the identity."""
    smooth = _filter(image, _SMOOTH)
    return _clip(smooth + factor * (image - smooth))


def sharpen(image, visibility, lightness):
    """Mix of the input and a 3x3 high-boost filtered copy with centre weight ``8 + lightness``."""
    effect = np.full((3, 3), -1.0)
    effect[1, 1] = 8.0 + lightness
    identity = np.zeros((3, 3))
    identity[1, 1] = 1.0
    kernel = (1.0 - visibility) * identity + visibility * effect
    return _clip(_filter(image, kernel))


def gaussian_kernel_sigma(ksize):
    return 0.3 * ((ksize - 1) * 0.5 - 1) + 0.8


def soften(image, visibility, ksize):
    ksize = int(ksize)
    blurred = cv2.GaussianBlur(image, (ksize, ksize), gaussian_kernel_sigma(ksize), borderType=_BORDER)
    return _clip((1.0 - visibility) * image + visibility * blurred)


def gaussian_noise(image, variance, rng):
    noise = rng.normal(0.0, np.sqrt(variance), size=image.shape)
    return _clip(image + noise)


# -- blur -------------------------------------------------------------------

def gaussian_blur(image, sigma):
    return cv2.GaussianBlur(image, (0, 0), sigma, borderType=_BORDER)


def motion_kernel(size, angle):
    size = int(size)
    k = np.zeros((size, size), dtype=np.float64)
    c = (size - 1) / 2.0
    dx = np.cos(np.deg2rad(angle)) * c
    dy = np.sin(np.deg2rad(angle)) * c
    # sample the segment densely and splat bilinearly
    ts = np.linspace(-1.0, 1.0, 4 * size + 1)
    for t in ts:
        x, y = c + t * dx, c + t * dy
        x0, y0 = int(np.floor(x)), int(np.floor(y))
        fx, fy = x - x0, y - y0
        for yy, wy in ((y0, 1 - fy), (y0 + 1, fy)):
            for xx, wx in ((x0, 1 - fx), (x0 + 1, fx)):
                if 0 <= yy < size and 0 <= xx < size:
                    k[yy, xx] += wx * wy
    return k / k.sum()


def _trim(kernel):
    """Drop all-zero border rows/columns in symmetric pairs, keeping the centre fixed."""
    while kernel.shape[0] > 1 and not kernel[0].any() and not kernel[-1].any():
        kernel = kernel[1:-1]
    while kernel.shape[1] > 1 and not kernel[:, 0].any() and not kernel[:, -1].any():
        kernel = kernel[:, 1:-1]
    return kernel


def motion_blur(image, size, angle):
    return _clip(_filter(image, _trim(motion_kernel(size, angle))))


def disk_kernel(radius, alias_sigma=0.0):
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    k = ((xx ** 2 + yy ** 2) <= radius ** 2).astype(np.float64)
    if alias_sigma > 0:
        k = cv2.GaussianBlur(np.pad(k, 2), (0, 0), alias_sigma)
    return k / k.sum()


def lens_blur(image, radius):
    return _clip(_filter(image, disk_kernel(radius)))


def defocus_blur(image, radius):
    return _clip(_filter(image, disk_kernel(radius, alias_sigma=0.5)))


def median_blur(image, aperture):
    aperture = int(aperture)
    if aperture <= 1:
        return image.copy()
    return ndimage.median_filter(image, size=(aperture, aperture, 1), mode="reflect")


def zoom_blur(image, max_factor, steps=10):
    """Average of ``steps`` centre zooms with factors evenly spaced in [1, max_factor]."""
    h, w = image.shape[:2]
    acc = np.zeros_like(image)
    for f in np.linspace(1.0, max_factor, steps):
        if f == 1.0:
            acc += image
            continue
        zw, zh = int(np.ceil(w * f)), int(np.ceil(h * f))
        big = cv2.resize(image, (zw, zh), interpolation=cv2.INTER_CUBIC)
        x0, y0 = (zw - w) // 2, (zh - h) // 2
        acc += big[y0:y0 + h, x0:x0 + w]
    return _clip(acc / steps)
