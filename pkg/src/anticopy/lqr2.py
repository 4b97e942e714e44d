"""Two-level QR style barcode: textured black modules and correlation checks.

Pattern cells are binary with ``0 = black`` (gray 0) and ``1 = white``
(gray 255); every pattern of a database has exactly ``black_count`` black
cells. A pattern's side equals the module size in pixels.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .barcode import LayoutError, ModuleGrid, render
from .io import atomic_write

__all__ = [
    "CorrelationError",
    "PatternDatabase",
    "Lqr2Barcode",
    "black_count",
    "gen_pattern_db",
    "embed_patterns",
    "pattern_gray",
    "render_with_patterns",
    "pcor",
    "pcor_matrix",
    "extract_blocks",
    "authenticate_2lqr",
    "save_db",
    "load_db",
    "db_to_bytes",
    "db_from_bytes",
]

THETA_B = 0.12
_MAGIC = b"PDB1"


class CorrelationError(ValueError):
    """Pearson correlation undefined for constant blocks."""


def black_count(side: int, density: float) -> int:
    return int(round(density * side * side))


@dataclass(frozen=True)
class PatternDatabase:
    """``black_count`` is ``None`` for a database mixing black counts."""

    patterns: np.ndarray  # (L_m, side, side) uint8 cells
    side: int
    black_count: Optional[int]

    def __post_init__(self):
        p = np.asarray(self.patterns, dtype=np.uint8)
        if p.ndim != 3 or p.shape[1:] != (self.side, self.side):
            raise ValueError("patterns must have shape (L_m, side, side)")
        p.setflags(write=False)
        object.__setattr__(self, "patterns", p)

    def __len__(self):
        return self.patterns.shape[0]

    @property
    def density(self) -> Optional[float]:
        return None if self.black_count is None else self.black_count / self.side**2


def _random_patterns(rng, n: int, cells: int, k: int) -> np.ndarray:
    # k smallest of i.i.d. uniforms give a uniform k-subset of black cells
    black = np.argpartition(rng.random((n, cells)), k - 1, axis=1)[:, :k]
    out = np.ones((n, cells), dtype=np.uint8)
    np.put_along_axis(out, black, 0, axis=1)
    return out


def gen_pattern_db(L_m: int, side: int, density: float, seed) -> PatternDatabase:
    cells = side * side
    k = black_count(side, density)
    if not 1 <= k <= cells - 1:
        raise ValueError(f"black count {k} must lie in [1, {cells - 1}]")
    total = math.comb(cells, k)
    if L_m < 1 or L_m > total:
        raise ValueError(f"cannot draw {L_m} distinct patterns from C({cells},{k}) = {total}")
    rng = np.random.default_rng(seed)
    if total <= 200_000:
        choice = rng.choice(total, size=L_m, replace=False)
        subsets = list(combinations(range(cells), k))
        out = np.ones((L_m, cells), dtype=np.uint8)
        for row, idx in zip(out, choice):
            row[list(subsets[idx])] = 0
    else:
        out = _random_patterns(rng, L_m, cells, k)
        while True:
            _, first = np.unique(out, axis=0, return_index=True)
            if first.size == L_m:
                break
            dup = np.setdiff1d(np.arange(L_m), first)
            out[dup] = _random_patterns(rng, dup.size, cells, k)
    return PatternDatabase(out.reshape(L_m, side, side), side, k)


def pattern_gray(cells) -> np.ndarray:
    return np.asarray(cells, dtype=float) * 255.0


@dataclass(frozen=True)
class Lqr2Barcode:
    grid: ModuleGrid
    black_modules: np.ndarray  # flat indices of black modules, row-major
    chosen: np.ndarray  # database index per black module
    db: PatternDatabase
    image: np.ndarray

    @property
    def L_b(self) -> int:
        return self.black_modules.size

    def patterns(self) -> np.ndarray:
        return self.db.patterns[self.chosen]


def _paint(image: np.ndarray, modules: np.ndarray, cols: int, blocks: np.ndarray) -> None:
    side = blocks.shape[-1]
    for m, blk in zip(modules, blocks):
        r, c = divmod(int(m), cols)
        image[r * side : (r + 1) * side, c * side : (c + 1) * side] = blk


def embed_patterns(grid: ModuleGrid, db: PatternDatabase, seed) -> Lqr2Barcode:
    """Replace every black module by a database pattern drawn uniformly."""
    if grid.constellation.q != 2:
        raise LayoutError("2LQR embedding needs a binary grid")
    black = np.flatnonzero(grid.symbols.ravel() == 0)
    chosen = np.random.default_rng(seed).integers(0, len(db), black.size)
    image = render(grid, db.side)
    _paint(image, black, grid.cols, pattern_gray(db.patterns[chosen]))
    image.setflags(write=False)
    return Lqr2Barcode(grid, black, chosen, db, image)


def render_with_patterns(grid: ModuleGrid, modules, cells, module_px: Optional[int] = None) -> np.ndarray:
    """Render ``grid`` with the listed modules painted by binary ``cells``.

    Cells are upsampled by ``module_px // side`` when the pattern side is
    smaller than the module.
    """
    cells = np.asarray(cells)
    side = cells.shape[-1]
    module_px = module_px or side
    if module_px % side:
        raise LayoutError(f"pattern side {side} does not divide module size {module_px}")
    k = module_px // side
    if k > 1:
        cells = cells.repeat(k, axis=-2).repeat(k, axis=-1)
    image = render(grid, module_px)
    _paint(image, np.asarray(modules), grid.cols, pattern_gray(cells))
    return image


def pcor(P, S) -> float:
    p = np.asarray(P, dtype=float).ravel()
    s = np.asarray(S, dtype=float).ravel()
    if p.shape != s.shape:
        raise LayoutError("blocks differ in size")
    p = p - p.mean()
    s = s - s.mean()
    denom = math.sqrt(float(p @ p) * float(s @ s))
    if denom == 0.0:
        raise CorrelationError("correlation undefined for a constant block")
    return float(p @ s) / denom


def _standardize(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    x = x.reshape(x.shape[0], -1).astype(float)
    x = x - x.mean(axis=1, keepdims=True)
    norm = np.sqrt(np.einsum("ij,ij->i", x, x))
    ok = norm > 0
    x[ok] /= norm[ok, None]
    return x, ok


def pcor_matrix(blocks, candidates) -> np.ndarray:
    """``out[i, j] = pcor(blocks[i], candidates[j])``; constant blocks give 0."""
    a, _ = _standardize(np.asarray(blocks))
    b, _ = _standardize(np.asarray(candidates))
    return a @ b.T


def extract_blocks(img, modules, cols: int, side: int) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    out = np.empty((len(modules), side, side))
    for i, m in enumerate(modules):
        r, c = divmod(int(m), cols)
        out[i] = img[r * side : (r + 1) * side, c * side : (c + 1) * side]
    return out


def authenticate_2lqr(captured, truth: Lqr2Barcode, theta_b: float = THETA_B) -> Tuple[float, bool]:
    """Mean pattern correlation over black modules; accept if ``>= theta_b``."""
    captured = np.asarray(captured, dtype=float)
    if captured.shape != truth.image.shape:
        raise LayoutError(f"capture {captured.shape} does not match barcode {truth.image.shape}")
    if truth.L_b == 0:
        return 1.0, True
    blocks = extract_blocks(captured, truth.black_modules, truth.grid.cols, truth.db.side)
    a, _ = _standardize(pattern_gray(truth.patterns()))
    b, _ = _standardize(blocks)
    score = float(np.einsum("ij,ij->i", a, b).mean())
    return score, score >= theta_b


def db_to_bytes(db: PatternDatabase) -> bytes:
    """Binary layout: ``b"PDB1"``, little-endian uint32 ``L_m, side, black_count``
    (0 for a mixed database), then each pattern's cells row-major, bit-packed
    MSB first and padded to whole bytes per pattern."""
    packed = np.packbits(db.patterns.reshape(len(db), -1), axis=1)
    return _MAGIC + struct.pack("<III", len(db), db.side, db.black_count or 0) + packed.tobytes()


def db_from_bytes(raw: bytes, source: str = "<bytes>") -> PatternDatabase:
    if raw[:4] != _MAGIC or len(raw) < 16:
        raise ValueError(f"{source}: not a pattern database file")
    n, side, k = struct.unpack("<III", raw[4:16])
    per = (side * side + 7) // 8
    packed = np.frombuffer(raw[16:], dtype=np.uint8)
    if packed.size != n * per:
        raise ValueError(f"{source}: truncated pattern database")
    cells = np.unpackbits(packed.reshape(n, per), axis=1)[:, : side * side]
    return PatternDatabase(cells.reshape(n, side, side), side, k or None)


def save_db(db: PatternDatabase, path) -> None:
    atomic_write(path, db_to_bytes(db))


def load_db(path) -> PatternDatabase:
    return db_from_bytes(Path(path).read_bytes(), str(path))
