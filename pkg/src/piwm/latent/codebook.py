"""Vector-quantization codebooks.

A partitioned codebook splits each entry into a physical part ``e_p``
(a frozen grid point in state units) and a learnable visual part ``e_v``.
A plain codebook has no physical part and every entry is learnable.
"""

from __future__ import annotations

import numpy as np

from ..nncore import Param

DEFAULT_SIZE = 512


class EmptyCodebookError(ValueError):
    pass


def grid_counts(dims: int, size: int) -> tuple[int, ...]:
    """Per-dim point counts, as equal as possible, with product at most ``size``."""
    if dims < 1 or size < 1:
        raise ValueError("dims and size must be positive")
    base = int(np.floor(size ** (1.0 / dims) + 1e-9))
    while base**dims > size:
        base -= 1
    counts = [max(base, 1)] * dims
    for i in range(dims):
        trial = counts.copy()
        trial[i] += 1
        if np.prod(trial) <= size:
            counts = trial
    return tuple(counts)


def physical_grid(low, high, size: int) -> np.ndarray:
    """Cell-centre grid over the box [low, high], row-major, recycled to ``size`` rows."""
    low, high = np.asarray(low, dtype=np.float64), np.asarray(high, dtype=np.float64)
    counts = grid_counts(low.size, size)
    axes = [lo + (np.arange(n) + 0.5) * (hi - lo) / n for lo, hi, n in zip(low, high, counts)]
    points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, low.size)
    return points[np.arange(size) % len(points)]


class Codebook:
    def __init__(self, visual: np.ndarray, physical: np.ndarray | None = None):
        visual = np.asarray(visual, dtype=np.float64)
        if visual.ndim != 2 or visual.shape[0] == 0:
            raise EmptyCodebookError("codebook needs at least one entry")
        self.visual = Param(visual, "codebook.visual")
        self.physical = None
        if physical is not None:
            physical = np.asarray(physical, dtype=np.float64)
            if physical.shape[0] != visual.shape[0]:
                raise ValueError("physical and visual parts need the same number of entries")
            self.physical = Param(physical, "codebook.physical")
            self.physical.freeze()

    @classmethod
    def partitioned(cls, low, high, dim: int, rng: np.random.Generator, size: int = DEFAULT_SIZE,
                    scale: float = 0.1) -> "Codebook":
        grid = physical_grid(low, high, size)
        return cls(rng.normal(0.0, scale, (size, dim - grid.shape[1])), grid)

    @classmethod
    def plain(cls, dim: int, rng: np.random.Generator, size: int = DEFAULT_SIZE, scale: float = 0.1) -> "Codebook":
        return cls(rng.normal(0.0, scale, (size, dim)))

    @property
    def size(self) -> int:
        return self.visual.value.shape[0]

    @property
    def n_physical(self) -> int:
        return 0 if self.physical is None else self.physical.value.shape[1]

    @property
    def dim(self) -> int:
        return self.n_physical + self.visual.value.shape[1]

    @property
    def entries(self) -> np.ndarray:
        if self.physical is None:
            return self.visual.value
        return np.concatenate([self.physical.value, self.visual.value], axis=1)

    def named_params(self) -> dict[str, Param]:
        out = {"codebook.visual": self.visual}
        if self.physical is not None:
            out["codebook.physical"] = self.physical
        return out

    def params(self) -> list[Param]:
        return list(self.named_params().values())

    def freeze(self):
        self.visual.freeze()

    def accumulate(self, index: np.ndarray, grad_entries: np.ndarray):
        """Scatter-add gradients of selected entries into the learnable part."""
        np.add.at(self.visual.grad, index, grad_entries[:, self.n_physical:])


def quantize(z_cont, codebook: Codebook) -> tuple[np.ndarray, np.ndarray]:
    """Nearest entry by squared L2; ties go to the lowest index.

    Returns ``(index, z_q)``.  The backward rule is the straight-through
    copy implemented by ``straight_through``.
    """
    if codebook.size == 0:
        raise EmptyCodebookError("empty codebook")
    z = np.atleast_2d(np.asarray(z_cont, dtype=np.float64))
    entries = codebook.entries
    if z.shape[1] != entries.shape[1]:
        raise ValueError(f"latent dim {z.shape[1]} != codebook dim {entries.shape[1]}")
    dist = (np.sum(z * z, axis=1, keepdims=True) - 2.0 * z @ entries.T
            + np.sum(entries * entries, axis=1)[None])
    # the expanded form can split exact ties by rounding; recheck candidates directly
    best = dist.min(axis=1, keepdims=True)
    close = dist <= best + 1e-9 * (1.0 + np.abs(best))
    index = np.empty(z.shape[0], dtype=np.int64)
    for i in range(z.shape[0]):
        cand = np.flatnonzero(close[i])
        if cand.size == 1:
            index[i] = cand[0]
        else:
            exact = np.sum((entries[cand] - z[i]) ** 2, axis=1)
            index[i] = cand[np.flatnonzero(exact == exact.min())[0]]
    return index, entries[index].copy()


def straight_through(upstream_at_zq: np.ndarray) -> np.ndarray:
    """Backward of quantization: the gradient at z_q is copied to z_cont unchanged."""
    return upstream_at_zq


def physical_readout(codebook: Codebook, index) -> np.ndarray:
    """Mean of the physical parts of the selected entries.

    ``index`` is (B,) for one entry per item or (B, S) for S entries each.
    """
    if codebook.physical is None:
        raise ValueError("codebook has no physical part")
    index = np.asarray(index)
    if index.size == 0:
        raise ValueError("at least one selected entry is required")
    parts = codebook.physical.value[index]
    return parts if index.ndim <= 1 else parts.mean(axis=-2)
