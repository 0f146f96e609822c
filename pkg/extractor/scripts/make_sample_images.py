#!/usr/bin/env python3
"""Regenerate the bundled sample stereo pair.

Two 64x64 views of a toy scene (red box, green disk, blue bar on a gray
gradient); the second view shifts the objects as a crude stereo baseline.
"""

from pathlib import Path

import numpy as np
from PIL import Image


def draw_view(shift: int) -> np.ndarray:
    h = w = 64
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = (90 + 40 * yy / h)[:, :, None].astype(np.uint8)  # gray gradient

    box = (slice(10, 28), slice(8 + shift, 26 + shift))
    img[box] = (210, 40, 40)

    disk = (xx - (44 + shift)) ** 2 + (yy - 20) ** 2 <= 9**2
    img[disk] = (40, 200, 60)

    bar = (slice(44, 54), slice(16 + shift, 52 + shift))
    img[bar] = (50, 70, 220)
    return img


def main():
    out = Path(__file__).resolve().parent.parent / "sample_images"
    out.mkdir(exist_ok=True)
    for name, shift in (("view_a.png", 0), ("view_b.png", 4)):
        Image.fromarray(draw_view(shift)).save(out / name)
        print(f"wrote {out / name}")


if __name__ == "__main__":
    main()
