"""Point-sampled rasterization of boxes on a small grayscale canvas.

Pixel (i, j) is lit when its centre falls inside a shape; there is no
anti-aliasing.  Coordinates are in pixels relative to the image centre,
``u`` to the right and ``v`` downward, so column ``j`` has centre
``u = j - (W - 1) / 2``.  Computing offsets as ``u - cu`` keeps the result
exactly mirror-symmetric under ``(u, cu) -> (-u, -cu)``.

Intensities are multiples of 1/255 so images survive 8-bit storage.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def level(k: int) -> float:
    return k / 255.0


@lru_cache(maxsize=8)
def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    u = np.arange(width, dtype=np.float64) - (width - 1) / 2.0
    v = np.arange(height, dtype=np.float64) - (height - 1) / 2.0
    vv, uu = np.meshgrid(v, u, indexing="ij")
    vv.flags.writeable = False
    uu.flags.writeable = False
    return uu, vv


def fill_box(img: np.ndarray, cu: float, cv: float, half_u: float, half_v: float, value: float):
    """Axis-aligned box centred at (cu, cv)."""
    uu, vv = pixel_grid(*img.shape)
    mask = (np.abs(uu - cu) <= half_u) & (np.abs(vv - cv) <= half_v)
    img[mask] = value


def fill_oriented_box(
    img: np.ndarray,
    cu: float,
    cv: float,
    axis_u: float,
    axis_v: float,
    along: tuple[float, float],
    half_across: float,
    value: float,
):
    """Box whose long axis is the unit vector (axis_u, axis_v).

    ``along`` gives the (start, end) extent along the axis measured from
    (cu, cv); ``half_across`` is the half-thickness perpendicular to it.
    """
    uu, vv = pixel_grid(*img.shape)
    du = uu - cu
    dv = vv - cv
    a = du * axis_u + dv * axis_v
    p = du * axis_v - dv * axis_u
    mask = (a >= along[0]) & (a <= along[1]) & (np.abs(p) <= half_across)
    img[mask] = value
