"""Logical barcode: messages, Reed-Solomon coding, Q-level modulation, rendering.

Images are plain 2-D ``float64`` arrays of gray values in ``[0, 255]``; a
module grid is rendered as constant ``module_px x module_px`` blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
import reedsolo

__all__ = [
    "DecodeError",
    "LayoutError",
    "Constellation",
    "ModuleGrid",
    "EccConfig",
    "Layout",
    "Recovery",
    "generate_message",
    "encode",
    "decode",
    "gray_code",
    "modulate",
    "render",
    "module_means",
    "demodulate",
    "monitor_recover",
    "LCAC_CONSTELLATION",
    "BINARY_CONSTELLATION",
]


class DecodeError(RuntimeError):
    """Channel decoding failed (more errors than the code corrects)."""


class LayoutError(ValueError):
    """Sizes or dimensions do not match the barcode layout."""


@dataclass(frozen=True)
class Constellation:
    levels: Tuple[float, ...]

    def __post_init__(self):
        lv = tuple(float(v) for v in self.levels)
        object.__setattr__(self, "levels", lv)
        q = len(lv)
        if q < 2 or q & (q - 1):
            raise ValueError(f"Q must be a power of two >= 2, got {q}")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError("levels must be strictly increasing")
        if lv[0] < 0 or lv[-1] > 255:
            raise ValueError("levels must lie in [0, 255]")

    @property
    def q(self) -> int:
        return len(self.levels)

    @property
    def bits(self) -> int:
        return self.q.bit_length() - 1

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.levels)


LCAC_CONSTELLATION = Constellation((40, 100, 160, 220))
BINARY_CONSTELLATION = Constellation((0, 255))


@dataclass(frozen=True)
class ModuleGrid:
    symbols: np.ndarray
    constellation: Constellation

    def __post_init__(self):
        sym = np.asarray(self.symbols, dtype=np.int64)
        if sym.ndim != 2:
            raise LayoutError("symbols must be a 2-D array")
        if sym.size and (sym.min() < 0 or sym.max() >= self.constellation.q):
            raise LayoutError("symbol index out of range")
        sym.setflags(write=False)
        object.__setattr__(self, "symbols", sym)

    @property
    def rows(self) -> int:
        return self.symbols.shape[0]

    @property
    def cols(self) -> int:
        return self.symbols.shape[1]

    def gray(self) -> np.ndarray:
        return self.constellation.array[self.symbols]

    def __eq__(self, other):
        return (
            isinstance(other, ModuleGrid)
            and self.constellation == other.constellation
            and np.array_equal(self.symbols, other.symbols)
        )


@dataclass(frozen=True)
class EccConfig:
    """Systematic RS(n, k) over GF(256), applied to ``blocks`` consecutive blocks."""

    block_len: int
    payload_len: int
    blocks: int = 1

    def __post_init__(self):
        if not 0 < self.payload_len < self.block_len <= 255:
            raise ValueError("need 0 < payload_len < block_len <= 255")
        if self.blocks < 1:
            raise ValueError("blocks must be >= 1")

    @property
    def nsym(self) -> int:
        return self.block_len - self.payload_len

    @property
    def t(self) -> int:
        """Correctable symbol errors per block."""
        return self.nsym // 2

    @property
    def payload_bits(self) -> int:
        return 8 * self.payload_len * self.blocks

    @property
    def codeword_bits(self) -> int:
        return 8 * self.block_len * self.blocks

    @cached_property
    def _codec(self):
        return reedsolo.RSCodec(self.nsym, nsize=self.block_len)


def generate_message(bit_count: int, seed) -> np.ndarray:
    if bit_count < 1:
        raise ValueError("bit_count must be >= 1")
    return np.random.default_rng(seed).integers(0, 2, bit_count, dtype=np.uint8)


def _check_bits(bits, n: int, what: str) -> np.ndarray:
    b = np.asarray(bits, dtype=np.uint8).ravel()
    if b.size != n:
        raise LayoutError(f"{what}: expected {n} bits, got {b.size}")
    if b.size and b.max() > 1:
        raise ValueError(f"{what}: bits must be 0/1")
    return b


def encode(payload, ecc: EccConfig) -> np.ndarray:
    bits = _check_bits(payload, ecc.payload_bits, "payload")
    data = np.packbits(bits).reshape(ecc.blocks, ecc.payload_len)
    out = bytearray()
    for block in data:
        out += ecc._codec.encode(bytes(block))
    return np.unpackbits(np.frombuffer(bytes(out), dtype=np.uint8))


def decode(received, ecc: EccConfig) -> Tuple[np.ndarray, int]:
    """Decode every block; returns ``(payload_bits, corrected_symbols)``.

    Raises :class:`DecodeError` if any block exceeds the code's capability.
    """
    bits = _check_bits(received, ecc.codeword_bits, "codeword")
    data = np.packbits(bits).reshape(ecc.blocks, ecc.block_len)
    payload = bytearray()
    corrected = 0
    for block in data:
        try:
            msg, _, errata = ecc._codec.decode(bytes(block))
        except reedsolo.ReedSolomonError as exc:
            raise DecodeError(str(exc)) from exc
        payload += msg
        corrected += len(errata)
    return np.unpackbits(np.frombuffer(bytes(payload), dtype=np.uint8)), corrected


def gray_code(q: int) -> np.ndarray:
    """Bit patterns (MSB first) of each level index under the reflected Gray map."""
    bits = q.bit_length() - 1
    idx = np.arange(q)
    g = idx ^ (idx >> 1)
    return ((g[:, None] >> np.arange(bits - 1, -1, -1)) & 1).astype(np.uint8)


def _bits_to_symbols(bits: np.ndarray, c: Constellation) -> np.ndarray:
    k = c.bits
    words = bits.reshape(-1, k) @ (1 << np.arange(k - 1, -1, -1))
    # gray value -> level index
    inverse = np.empty(c.q, dtype=np.int64)
    table = gray_code(c.q) @ (1 << np.arange(k - 1, -1, -1))
    inverse[table] = np.arange(c.q)
    return inverse[words]


def _symbols_to_bits(symbols: np.ndarray, c: Constellation) -> np.ndarray:
    return gray_code(c.q)[np.asarray(symbols).ravel()].ravel()


def modulate(codeword, c: Constellation, rows: int, cols: int) -> ModuleGrid:
    bits = _check_bits(codeword, rows * cols * c.bits, "codeword")
    return ModuleGrid(_bits_to_symbols(bits, c).reshape(rows, cols), c)


def render(grid: ModuleGrid, module_px: int) -> np.ndarray:
    if module_px < 1:
        raise ValueError("module_px must be >= 1")
    block = np.ones((module_px, module_px))
    return np.kron(grid.gray(), block)


def module_means(img, rows: int, cols: int, module_px: int) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.shape != (rows * module_px, cols * module_px):
        raise LayoutError(f"image {img.shape} does not match {rows}x{cols} modules of {module_px}px")
    return img.reshape(rows, module_px, cols, module_px).mean(axis=(1, 3))


def demodulate(means, c: Constellation) -> ModuleGrid:
    """Nearest-level decision; exact ties go to the lower level."""
    m = np.asarray(means, dtype=float)
    dist = np.abs(m[..., None] - c.array)
    # argmin returns the first minimum, i.e. the lower level on a tie
    return ModuleGrid(np.argmin(dist, axis=-1), c)


@dataclass(frozen=True)
class Layout:
    """Physical arrangement of a barcode.

    A border ring ``training_border`` modules wide holds training symbols
    cycling through the constellation levels (in row-major order of the ring);
    the inner modules carry codeword bits in row-major order, ``log2 Q`` bits
    per module (MSB first), zero-padded.
    """

    rows: int
    cols: int
    module_px: int
    constellation: Constellation
    training_border: int = 0

    def __post_init__(self):
        if min(self.rows, self.cols, self.module_px) < 1:
            raise LayoutError("rows, cols and module_px must be positive")
        if not 0 <= 2 * self.training_border < min(self.rows, self.cols):
            raise LayoutError("training border must leave payload modules")

    @cached_property
    def _ring(self) -> np.ndarray:
        w = self.training_border
        r, c = np.divmod(np.arange(self.n_modules), self.cols)
        return (r < w) | (r >= self.rows - w) | (c < w) | (c >= self.cols - w)

    @property
    def shape_px(self) -> Tuple[int, int]:
        return self.rows * self.module_px, self.cols * self.module_px

    @property
    def n_modules(self) -> int:
        return self.rows * self.cols

    @property
    def training_positions(self) -> np.ndarray:
        """Flat indices of training modules."""
        return np.flatnonzero(self._ring)

    @property
    def training_symbols(self) -> np.ndarray:
        return np.arange(self.training_positions.size) % self.constellation.q

    @property
    def payload_positions(self) -> np.ndarray:
        return np.flatnonzero(~self._ring)

    @property
    def capacity_bits(self) -> int:
        return self.payload_positions.size * self.constellation.bits

    def place(self, codeword) -> ModuleGrid:
        """Modulate a codeword (zero-padded to capacity) into a full grid."""
        bits = np.asarray(codeword, dtype=np.uint8).ravel()
        if bits.size > self.capacity_bits:
            raise LayoutError(f"codeword of {bits.size} bits exceeds capacity {self.capacity_bits}")
        padded = np.zeros(self.capacity_bits, dtype=np.uint8)
        padded[: bits.size] = bits
        sym = np.empty(self.n_modules, dtype=np.int64)
        sym[self.training_positions] = self.training_symbols
        sym[self.payload_positions] = _bits_to_symbols(padded, self.constellation)
        return ModuleGrid(sym.reshape(self.rows, self.cols), self.constellation)

    def read(self, grid: ModuleGrid) -> np.ndarray:
        """Codeword bits (full capacity) carried by ``grid``."""
        return _symbols_to_bits(grid.symbols.ravel()[self.payload_positions], self.constellation)

    def module_of_bit(self, bit_index) -> np.ndarray:
        """Flat module index carrying each codeword bit."""
        return self.payload_positions[np.asarray(bit_index) // self.constellation.bits]


@dataclass
class Recovery:
    image: np.ndarray
    grid: ModuleGrid
    payload: np.ndarray
    corrected: int
    ok: bool = True
    detail: Optional[str] = field(default=None)


def binary_levels(means: np.ndarray, iters: int = 20) -> Tuple[float, float]:
    """Two-means estimate of the observed dark/light module levels."""
    m = np.asarray(means, dtype=float).ravel()
    lo, hi = m.min(), m.max()
    if hi - lo < 1e-9:
        raise DecodeError("flat image: no module contrast")
    for _ in range(iters):
        cut = 0.5 * (lo + hi)
        dark, light = m[m <= cut], m[m > cut]
        if dark.size == 0 or light.size == 0:
            break
        lo, hi = dark.mean(), light.mean()
    return float(lo), float(hi)


def read_grid(img, layout: Layout) -> ModuleGrid:
    """Demodulate an (equalized) capture into the layout's constellation.

    For Q = 2 the decision levels are estimated from the module means, since
    binary codes are read without equalization and textured dark modules sit
    well above gray 0.
    """
    means = module_means(img, layout.rows, layout.cols, layout.module_px)
    c = layout.constellation
    if c.q == 2:
        lo, hi = binary_levels(means)
        # nearest observed level; a tie goes to the dark one
        return ModuleGrid((means > 0.5 * (lo + hi)).astype(np.int64), c)
    return demodulate(means, c)


def monitor_recover(equalized, layout: Layout, ecc: EccConfig) -> Recovery:
    """Demodulate, decode, re-encode and re-render the original message.

    Raises :class:`DecodeError` when the code cannot correct the capture.
    """
    grid = read_grid(equalized, layout)
    codeword = layout.read(grid)[: ecc.codeword_bits]
    payload, corrected = decode(codeword, ecc)
    clean = layout.place(encode(payload, ecc))
    return Recovery(render(clean, layout.module_px), clean, payload, corrected)
