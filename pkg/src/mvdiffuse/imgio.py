"""8-bit PNG image I/O for [-1, 1] float images."""

import numpy as np
from PIL import Image


def quantize8(img):
    """[-1,1] float (H,W,3) -> uint8, round-to-nearest."""
    v = (np.asarray(img, dtype=np.float64) + 1.0) * 0.5 * 255.0
    return np.clip(np.rint(v), 0, 255).astype(np.uint8)


def dequantize8(arr):
    """uint8 -> float32 in [-1,1]."""
    return (arr.astype(np.float32) / 255.0) * 2.0 - 1.0


def save_image(path, img):
    Image.fromarray(quantize8(img), mode="RGB").save(path)


def load_image(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return dequantize8(arr)
