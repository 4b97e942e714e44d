"""LCAC-style barcode: a keyed authentication message hidden in the source codeword.

The sender and receiver share a :class:`SecretKey`. From it both derive the
authentication payload and the codeword bit positions that carry it, using
independent PRNG streams. The embedded bits overwrite source codeword bits, so
a legitimate receiver still decodes the source message (the overwritten bits
look like channel errors to its Reed-Solomon decoder).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import barcode as bc
from .channel import equalize_capture

__all__ = [
    "SecretKey",
    "LcacBarcode",
    "derive_auth_payload",
    "derive_auth_message",
    "derive_embed_locations",
    "embed_auth",
    "build_lcac",
    "read_auth_bits",
    "authenticate_lcac",
    "THETA_B",
]

THETA_B = 0.012

_AUTH_STREAM = 1
_LOCATION_STREAM = 2


@dataclass(frozen=True)
class SecretKey:
    seed: int

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValueError("key seed must be a non-negative integer")

    def stream(self, tag: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([int(self.seed), tag]))

    def fingerprint(self) -> str:
        """Short non-reversible tag for metadata files."""
        return f"{self.stream(0xF1).integers(0, 2**32):08x}"


def derive_auth_payload(key: SecretKey, ecc_auth: bc.EccConfig) -> np.ndarray:
    return key.stream(_AUTH_STREAM).integers(0, 2, ecc_auth.payload_bits, dtype=np.uint8)


def derive_auth_message(key: SecretKey, length_bits: int, ecc_auth: bc.EccConfig) -> np.ndarray:
    """ECC-encoded keyed payload of ``length_bits`` payload bits."""
    if length_bits != ecc_auth.payload_bits:
        raise bc.LayoutError(f"auth payload of {length_bits} bits; ecc expects {ecc_auth.payload_bits}")
    return bc.encode(derive_auth_payload(key, ecc_auth), ecc_auth)


def derive_embed_locations(key: SecretKey, codeword_len: int, count: int) -> np.ndarray:
    if not 0 <= count <= codeword_len:
        raise ValueError(f"cannot pick {count} locations out of {codeword_len}")
    locs = key.stream(_LOCATION_STREAM).choice(codeword_len, size=count, replace=False)
    return np.sort(locs)


@dataclass(frozen=True)
class LcacBarcode:
    original_payload: np.ndarray
    auth_message: np.ndarray
    embed_locations: np.ndarray
    grid_plain: bc.ModuleGrid
    grid_embedded: bc.ModuleGrid
    ecc_auth: bc.EccConfig

    def changed_modules(self) -> np.ndarray:
        """Flat indices of modules whose symbol differs after embedding."""
        diff = self.grid_plain.symbols != self.grid_embedded.symbols
        return np.flatnonzero(diff.ravel())

    def render(self, module_px: int, embedded: bool = True) -> np.ndarray:
        return bc.render(self.grid_embedded if embedded else self.grid_plain, module_px)


def embed_auth(
    codeword,
    auth,
    locs,
    layout: bc.Layout,
    ecc_auth: bc.EccConfig,
    original_payload=None,
) -> LcacBarcode:
    """Overwrite ``codeword`` bits at ``locs`` with ``auth`` and re-modulate.

    ``codeword`` may be shorter than the layout capacity; it is zero-padded
    first, and locations index the padded sequence.
    """
    cw = np.asarray(codeword, dtype=np.uint8).ravel()
    if cw.size > layout.capacity_bits:
        raise bc.LayoutError(f"codeword of {cw.size} bits exceeds capacity {layout.capacity_bits}")
    padded = np.zeros(layout.capacity_bits, dtype=np.uint8)
    padded[: cw.size] = cw
    auth = np.asarray(auth, dtype=np.uint8).ravel()
    locs = np.asarray(locs, dtype=np.int64).ravel()
    if auth.size != locs.size:
        raise bc.LayoutError(f"{auth.size} auth bits for {locs.size} locations")
    if locs.size and (locs.min() < 0 or locs.max() >= padded.size):
        raise bc.LayoutError("embedding location outside the codeword")
    if np.unique(locs).size != locs.size:
        raise bc.LayoutError("embedding locations must be distinct")
    hidden = padded.copy()
    hidden[locs] = auth
    payload = np.empty(0, dtype=np.uint8) if original_payload is None else np.asarray(original_payload, dtype=np.uint8)
    return LcacBarcode(
        original_payload=payload,
        auth_message=auth,
        embed_locations=np.sort(locs),
        grid_plain=layout.place(padded),
        grid_embedded=layout.place(hidden),
        ecc_auth=ecc_auth,
    )


def build_lcac(payload, key: SecretKey, layout: bc.Layout, ecc: bc.EccConfig, ecc_auth: bc.EccConfig) -> LcacBarcode:
    """Encode ``payload`` and hide the keyed authentication message in it."""
    codeword = bc.encode(payload, ecc)
    auth = derive_auth_message(key, ecc_auth.payload_bits, ecc_auth)
    locs = derive_embed_locations(key, layout.capacity_bits, auth.size)
    # locations are a sorted set; auth bits fill them in increasing order
    return embed_auth(codeword, auth, locs, layout, ecc_auth, original_payload=payload)


def read_auth_bits(captured, key: SecretKey, layout: bc.Layout, ecc_auth: bc.EccConfig, equalized: bool = False):
    """Demodulated codeword bits at the keyed embedding locations."""
    img = np.asarray(captured, dtype=float)
    if img.shape != layout.shape_px:
        raise bc.LayoutError(f"capture {img.shape} does not match layout {layout.shape_px}")
    if not equalized:
        img = equalize_capture(img, layout)
    bits = layout.read(bc.read_grid(img, layout))
    locs = derive_embed_locations(key, layout.capacity_bits, ecc_auth.codeword_bits)
    return bits[locs]


def authenticate_lcac(
    captured,
    key: SecretKey,
    layout: bc.Layout,
    ecc_auth: bc.EccConfig,
    theta_b: float = THETA_B,
    equalized: bool = False,
) -> Tuple[float, bool]:
    """BER of the recovered authentication payload; accept if ``ber <= theta_b``.

    When the authentication code cannot be decoded, the BER is taken on the
    systematic (payload) part of the raw bits.
    """
    received = read_auth_bits(captured, key, layout, ecc_auth, equalized)
    expected = derive_auth_payload(key, ecc_auth)
    try:
        got, _ = bc.decode(received, ecc_auth)
    except bc.DecodeError:
        got = _systematic_bits(received, ecc_auth)
    ber = float(np.mean(got != expected))
    return ber, ber <= theta_b


def _systematic_bits(codeword_bits: np.ndarray, ecc: bc.EccConfig) -> np.ndarray:
    blocks = codeword_bits.reshape(ecc.blocks, 8 * ecc.block_len)
    return blocks[:, : 8 * ecc.payload_len].ravel()
