from __future__ import annotations

import numpy as np

from .dicom import RawImage


def normalize_pixels(r: RawImage) -> np.ndarray:
    """Convert a raw radiograph to 8-bit display values.

    With window tags: ``n = (p - center) / width``. Without them (or with a
    non-positive width): ``n = (p - mean) / (max - min)``. The result is
    ``clip(n, -1, 1) * flip * 127.5 + 127.5`` cast to uint8 by truncation,
    with ``flip = -1`` for MONOCHROME1. Note the division uses the full window
    width, not half of it as DICOM display windowing would.

    A constant image without window tags maps to 127 everywhere.
    """
    image = r.pixels.astype(np.float64)
    flip = -1 if r.photometric == "MONOCHROME1" else 1

    windowed = (
        r.window_center is not None
        and r.window_width is not None
        and float(r.window_width) > 0
    )
    if windowed:
        normalized = (image - float(r.window_center)) / float(r.window_width)
    else:
        span = np.max(image) - np.min(image)
        if span == 0:
            return np.full(image.shape, 127, dtype=np.uint8)
        normalized = (image - np.mean(image)) / span
    return (np.clip(normalized, -1, 1) * flip * 127.5 + 127.5).astype(np.uint8)


def to_rgb_png(pixels8: np.ndarray, path: str) -> None:
    from PIL import Image

    Image.fromarray(pixels8).convert("RGB").save(path, format="PNG")
