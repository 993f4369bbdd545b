"""Token geometry and tube masking for a video masked autoencoder.

A clip of T frames at H x W is cut into (2, 16, 16) patches by default,
giving a T' x H' x W' token grid. A tube mask hides the same spatial
positions in every temporal slice. Tokens are laid out t-major:
flat index = t * (H' * W') + s, with s = row * W' + col.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class PatchSpec:
    temporal_patch: int = 2
    spatial_patch: tuple[int, int] = (16, 16)
    embed_dim: int = 768

    def __post_init__(self):
        if self.temporal_patch < 1 or min(self.spatial_patch) < 1 or self.embed_dim < 1:
            raise ValueError("patch sizes and embed_dim must be >= 1")


@dataclass(frozen=True)
class TokenGrid:
    t_tokens: int
    h_tokens: int
    w_tokens: int

    def __post_init__(self):
        if min(self.t_tokens, self.h_tokens, self.w_tokens) < 1:
            raise ValueError("token grid dimensions must be >= 1")

    @property
    def spatial(self) -> int:
        return self.h_tokens * self.w_tokens

    @property
    def total(self) -> int:
        return self.t_tokens * self.spatial

    def to_dict(self) -> dict:
        return {"t_tokens": self.t_tokens, "h_tokens": self.h_tokens,
                "w_tokens": self.w_tokens, "total": self.total}


def patch_grid(clip_dims: tuple[int, int, int], spec: PatchSpec = PatchSpec()) -> TokenGrid:
    """Token grid for a clip of (T, H, W); every axis must divide evenly."""
    t, h, w = clip_dims
    ph, pw = spec.spatial_patch
    for axis, size, patch in (("T", t, spec.temporal_patch), ("H", h, ph), ("W", w, pw)):
        if size < 1 or size % patch:
            raise ValueError(f"{axis} axis: size {size} is not a positive multiple of patch size {patch}")
    return TokenGrid(t // spec.temporal_patch, h // ph, w // pw)


def masked_count(rho: float, n_spatial: int) -> int:
    """round-half-up(rho * n_spatial), computed in decimal so 0.5 ties are exact."""
    return int((Decimal(repr(float(rho))) * n_spatial).to_integral_value(rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class TubeMask:
    grid: TokenGrid
    rho: float
    spatial_pattern: np.ndarray  # bool (H' * W',), True = masked
    seed: int

    @property
    def n_masked_spatial(self) -> int:
        return int(self.spatial_pattern.sum())

    @property
    def n_visible(self) -> int:
        return self.grid.t_tokens * (self.grid.spatial - self.n_masked_spatial)

    def full(self) -> np.ndarray:
        """(T', H' * W') boolean mask, identical in every temporal slice."""
        return np.broadcast_to(self.spatial_pattern, (self.grid.t_tokens, self.grid.spatial))

    def flat(self) -> np.ndarray:
        return self.full().reshape(-1)

    def pattern_string(self) -> str:
        return "".join("1" if m else "0" for m in self.spatial_pattern)

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "rho": self.rho,
            "seed": self.seed,
            "masked_spatial": self.n_masked_spatial,
            "visible_tokens": self.n_visible,
            "spatial_pattern": self.pattern_string(),
        }


def gen_tube_mask(grid: TokenGrid, rho: float, seed: int) -> TubeMask:
    if not 0 <= rho < 1:
        raise ValueError(f"masking ratio must lie in [0, 1), got {rho}")
    k = masked_count(rho, grid.spatial)
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(grid.spatial)[:k]
    pattern = np.zeros(grid.spatial, dtype=bool)
    pattern[chosen] = True
    pattern.setflags(write=False)
    return TubeMask(grid, float(rho), pattern, seed)


def select_visible(tokens, mask: TubeMask) -> tuple[np.ndarray, np.ndarray]:
    """Visible tokens in t-major order and their flat positions in the grid."""
    tokens = np.asarray(tokens)
    if tokens.shape[0] != mask.grid.total:
        raise ValueError(f"got {tokens.shape[0]} tokens for a grid of {mask.grid.total}")
    positions = np.flatnonzero(~mask.flat())
    return tokens[positions], positions


def reassemble(visible, positions: np.ndarray, grid: TokenGrid, fill=0) -> np.ndarray:
    visible = np.asarray(visible)
    out = np.full((grid.total,) + visible.shape[1:], fill, dtype=visible.dtype)
    out[positions] = visible
    return out


class ReconstructionLoss(NamedTuple):
    loss: float
    n_positions: int
    empty_mask: bool


def masked_mse(reconstruction, target, mask: TubeMask, all_positions: bool = False) -> ReconstructionLoss:
    """Mean squared error over masked tokens (or every token with ``all_positions``).

    Inputs are (total, D) arrays or anything reshaping to that, such as
    (T', H', W', D). An empty mask yields a zero loss with ``empty_mask`` set.
    """
    rec = np.asarray(reconstruction, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    total = mask.grid.total
    if rec.shape != tgt.shape or rec.size % total or rec.size == 0:
        raise ValueError(
            f"reconstruction {rec.shape} and target {tgt.shape} do not share the {total}-token geometry"
        )
    rec = rec.reshape(total, -1)
    tgt = tgt.reshape(total, -1)
    select = np.ones(total, dtype=bool) if all_positions else mask.flat()
    n = int(select.sum())
    if n == 0:
        return ReconstructionLoss(0.0, 0, True)
    diff = rec[select] - tgt[select]
    return ReconstructionLoss(float(np.mean(diff * diff)), n, False)
