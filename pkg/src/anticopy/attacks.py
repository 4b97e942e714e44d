"""Illegitimate-copy attacks on 2LQR and LCAC barcodes.

Every attack works from captures only: it never sees the sender's truth
sidecar or the LCAC key. Outputs are clean images meant to be printed again.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from . import barcode as bc
from . import ggd
from .channel import ChannelConfig, equalize_capture, print_capture
from .lqr2 import PatternDatabase, extract_blocks, pattern_gray, pcor_matrix, render_with_patterns

__all__ = [
    "direct_attack",
    "synthetic_attack",
    "ppd_choose",
    "ppd_select",
    "ppd_attack",
    "downsample",
    "estimate_pattern_size",
    "binarize",
    "sub_database_sizes",
    "build_alt_db",
    "UpdResult",
    "upd_attack",
    "module_stat",
    "module_stats",
    "MixtureFit",
    "fit_acp",
    "fit_scp",
    "acp_thresholds",
    "scp_thresholds",
    "LocationReport",
    "locate_embedded",
    "simulate_location_stats",
    "LcacAttacker",
    "lcac_forge",
]


# -- baselines ---------------------------------------------------------------


def direct_attack(captured) -> np.ndarray:
    """The captured image itself, to be printed again as is."""
    return np.array(captured, dtype=float)


def synthetic_attack(captures: Sequence) -> np.ndarray:
    """Pixelwise mean of several captures of the same barcode."""
    imgs = [np.asarray(c, dtype=float) for c in captures]
    if len(imgs) < 2:
        raise ValueError("synthetic attack needs at least two captures")
    if any(im.shape != imgs[0].shape for im in imgs):
        raise bc.LayoutError("captures differ in size")
    return np.mean(imgs, axis=0)


# -- 2LQR, public database ---------------------------------------------------


def ppd_choose(blocks, candidates) -> np.ndarray:
    """Index of the best-correlated candidate per block (lowest index on ties)."""
    corr = pcor_matrix(np.asarray(blocks, dtype=float), pattern_gray(candidates))
    return np.argmax(corr, axis=1)  # argmax keeps the first maximum


def _read_binary(captured, layout: bc.Layout, ecc: bc.EccConfig) -> bc.ModuleGrid:
    return bc.monitor_recover(captured, layout, ecc).grid


def ppd_select(captured, db: PatternDatabase, layout: bc.Layout, ecc: bc.EccConfig):
    """``(grid, black modules, chosen database indices)`` for a capture."""
    grid = _read_binary(captured, layout, ecc)
    black = np.flatnonzero(grid.symbols.ravel() == 0)
    blocks = extract_blocks(captured, black, grid.cols, layout.module_px)
    return grid, black, ppd_choose(blocks, db.patterns)


def ppd_attack(captured, db: PatternDatabase, layout: bc.Layout, ecc: bc.EccConfig) -> np.ndarray:
    grid, black, chosen = ppd_select(captured, db, layout, ecc)
    return render_with_patterns(grid, black, db.patterns[chosen], layout.module_px)


# -- 2LQR, unknown database --------------------------------------------------


def downsample(img, factor: int) -> np.ndarray:
    """Block mean over ``factor x factor`` tiles."""
    img = np.asarray(img, dtype=float)
    h, w = img.shape
    if h % factor or w % factor:
        raise bc.LayoutError(f"image {img.shape} is not a multiple of {factor}")
    return img.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def _cell_variance(img: np.ndarray, cell: int) -> float:
    h, w = img.shape
    tiles = img[: h - h % cell, : w - w % cell].reshape(h // cell, cell, w // cell, cell)
    return float(tiles.var(axis=(1, 3)).mean())


def estimate_pattern_size(captured, candidates: Iterable[int], span: int, rel_tol: float = 0.05) -> int:
    """Cells per pattern side that best explain the capture as piecewise constant.

    Each candidate ``n`` splits a module span of ``span`` pixels into cells of
    ``span // n`` pixels; the score is the mean within-cell pixel variance.
    Finer grids always score at least as well, so the coarsest candidate within
    ``rel_tol`` of the best score wins.
    """
    cands = sorted(set(int(c) for c in candidates))
    if not cands:
        raise ValueError("no candidate pattern sizes")
    bad = [c for c in cands if c < 1 or span % c]
    if bad:
        raise ValueError(f"candidate sizes {bad} do not divide the module span {span}")
    img = np.asarray(captured, dtype=float)
    scores = {c: _cell_variance(img, span // c) for c in cands}
    lo, hi = min(scores.values()), max(scores.values())
    if hi - lo <= 1e-12 * max(1.0, hi):
        raise ValueError("capture carries no cell structure; all candidate sizes tie")
    return next(c for c in cands if scores[c] <= lo * (1.0 + rel_tol) + 1e-12)


def binarize(blocks, theta1: float) -> np.ndarray:
    """Binary cells: 1 (white) where gray >= ``theta1``, else 0 (black)."""
    return (np.asarray(blocks, dtype=float) >= theta1).astype(np.uint8)


def sub_database_sizes(L_m: int, L_b: int) -> np.ndarray:
    """``floor(L_m / L_b)`` for all but the last received pattern, the rest last.

    With ``L_m < L_b`` every received pattern keeps one entry, its own
    binarization.
    """
    if L_b < 1 or L_m < 1:
        raise ValueError("L_m and L_b must be positive")
    if L_m < L_b:
        return np.ones(L_b, dtype=np.int64)
    sizes = np.full(L_b, L_m // L_b, dtype=np.int64)
    sizes[-1] = L_m - (L_b - 1) * (L_m // L_b)
    return sizes


def _mutations(flat: np.ndarray, n: int, rng) -> np.ndarray:
    """``n`` mutants of ``flat``, each swapping ``k ~ Geometric(1/4)`` distinct
    black cells with as many distinct white cells."""
    black = np.flatnonzero(flat == 0)
    white = np.flatnonzero(flat == 1)
    k = np.minimum(rng.geometric(0.25, n), min(black.size, white.size))

    def pick(cells):
        rank = np.argsort(np.argsort(rng.random((n, cells.size)), axis=1), axis=1)
        return rank < k[:, None]

    flip = np.zeros((n, flat.size), dtype=bool)
    flip[:, black] = pick(black)
    flip[:, white] = pick(white)
    return flat[None, :] ^ flip.astype(flat.dtype)


def _fill_sub_db(bs: np.ndarray, size: int, theta2: float, rng, max_tries: int) -> list:
    flat = bs.ravel()
    out = [flat.copy()]
    # pcor = 1 only for the pattern itself, so uniqueness caps the size at one
    if size <= 1 or theta2 >= 1 or flat.min() == flat.max():
        return out
    seen = {flat.tobytes()}
    tries = 0
    while len(out) < size:
        if tries >= max_tries:
            raise RuntimeError(
                f"could not fill a sub-database to {size} patterns with correlation >= {theta2} "
                f"after {max_tries} mutations"
            )
        batch = min(max(2 * (size - len(out)), 16), max_tries - tries)
        tries += batch
        cand = _mutations(flat, batch, rng)
        ok = pcor_matrix(cand, flat[None, :])[:, 0] >= theta2
        for row in cand[ok]:
            key = row.tobytes()
            if key not in seen:
                seen.add(key)
                out.append(row)
                if len(out) == size:
                    break
    return out


def build_alt_db(received_patterns, theta1: float, theta2: float, L_m: int, seed, max_tries: int = 10_000):
    """Alternative pattern database from received (gray) patterns.

    Each received pattern is binarized at ``theta1``; its sub-database holds
    that binary pattern plus distinct swap mutations (black and white cells
    exchanged, so the black count is kept) correlating at least ``theta2``
    with it. Returns ``(database, owner)`` where ``owner[j]`` is the received
    pattern sub-database entry ``j`` was grown from.
    """
    if not 0 < theta1 < 255:
        raise ValueError("theta1 must lie in (0, 255)")
    if not 0 < theta2 <= 1:
        raise ValueError("theta2 must lie in (0, 1]")
    blocks = np.asarray(received_patterns, dtype=float)
    if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2]:
        raise bc.LayoutError("received patterns must have shape (L_b, side, side)")
    L_b, side = blocks.shape[0], blocks.shape[1]
    rng = np.random.default_rng(seed)
    sizes = sub_database_sizes(L_m, L_b)
    cells, owner = [], []
    for i, (bs, size) in enumerate(zip(binarize(blocks, theta1), sizes)):
        sub = _fill_sub_db(bs, int(size), theta2, rng, max_tries)
        cells.extend(sub)
        owner.extend([i] * len(sub))
    cells = np.asarray(cells, dtype=np.uint8).reshape(-1, side, side)
    counts = np.unique((cells == 0).sum(axis=(1, 2)))
    k = int(counts[0]) if counts.size == 1 else None
    return PatternDatabase(cells, side, k), np.asarray(owner)


@dataclass
class UpdResult:
    image: np.ndarray
    pattern_size: int
    db: PatternDatabase
    black_modules: np.ndarray
    chosen: np.ndarray


def upd_attack(
    captured,
    layout: bc.Layout,
    ecc: bc.EccConfig,
    L_m: int,
    seed,
    theta1: float = 127.0,
    theta2: float = 0.8,
    candidates: Iterable[int] = (6, 8, 12),
) -> UpdResult:
    """Forge a 2LQR code without the pattern database.

    ``captured`` may be a capture at an integer multiple of the design
    resolution (a finer scan makes the pattern cells measurable).
    """
    img = np.asarray(captured, dtype=float)
    scale = img.shape[0] // layout.shape_px[0]
    if scale < 1 or img.shape != (layout.shape_px[0] * scale, layout.shape_px[1] * scale):
        raise bc.LayoutError(f"capture {img.shape} is not a multiple of {layout.shape_px}")
    grid = _read_binary(downsample(img, scale) if scale > 1 else img, layout, ecc)
    black = np.flatnonzero(grid.symbols.ravel() == 0)
    span = layout.module_px * scale
    n_p = estimate_pattern_size(img, candidates, span)
    if layout.module_px % n_p:
        raise bc.LayoutError(f"estimated pattern size {n_p} does not divide the module size {layout.module_px}")
    received = np.array([downsample(b, span // n_p) for b in extract_blocks(img, black, grid.cols, span)])
    db, _ = build_alt_db(received, theta1, theta2, L_m, seed)
    chosen = ppd_choose(received, db.patterns)
    forged = render_with_patterns(grid, black, db.patterns[chosen], layout.module_px)
    return UpdResult(forged, n_p, db, black, chosen)


# -- LCAC embedded-location detection ----------------------------------------


def module_stats(i_hat_o_means, y1_means) -> np.ndarray:
    a = np.asarray(i_hat_o_means, dtype=float)
    b = np.asarray(y1_means, dtype=float)
    if a.shape != b.shape:
        raise bc.LayoutError("module mean arrays differ in shape")
    return a - b


def module_stat(i_hat_o_means, y1_means, j) -> float:
    """Recovered ideal gray minus captured mean of module ``j`` (flat index)."""
    return float(module_stats(i_hat_o_means, y1_means).ravel()[j])


@dataclass(frozen=True)
class MixtureFit:
    """Per-cluster GGD fits ordered by mean; ``h0_index`` is the offset-0 cluster."""

    components: Tuple[Tuple[ggd.GgdParams, float], ...]
    h0_index: int
    offsets: Tuple[float, ...] = ()

    def __post_init__(self):
        w = np.array([wt for _, wt in self.components])
        if w.size == 0 or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be positive and sum to 1")
        mu = [p.mu for p, _ in self.components]
        if any(b <= a for a, b in zip(mu, mu[1:])):
            raise ValueError("component means must be strictly increasing")
        if not 0 <= self.h0_index < len(self.components):
            raise ValueError("h0_index out of range")

    @property
    def h0(self) -> ggd.GgdParams:
        return self.components[self.h0_index][0]


def _fit_clusters(stats: np.ndarray, offsets: np.ndarray, min_cluster: int) -> MixtureFit:
    x = np.asarray(stats, dtype=float).ravel()
    offsets = np.sort(np.asarray(offsets, dtype=float))
    label = np.argmin(np.abs(x[:, None] - offsets), axis=1)
    zero = int(np.argmin(np.abs(offsets)))
    comps, used = [], []
    for i, off in enumerate(offsets):
        member = x[label == i]
        if member.size < min_cluster:
            if i == zero:
                raise ValueError(f"H0 cluster has {member.size} samples (< {min_cluster})")
            continue
        comps.append((ggd.estimate(member), member.size / x.size))
        used.append(off)
    total = sum(w for _, w in comps)
    comps = tuple((p, w / total) for p, w in comps)
    return MixtureFit(comps, used.index(offsets[zero]), tuple(used))


def fit_acp(stats, spacing: float = 60.0, span: int = 3, min_cluster: int = 10) -> MixtureFit:
    """Cluster every module statistic by the nearest multiple of ``spacing``
    in ``[-span, span]`` and fit a GGD per cluster with enough samples."""
    x = np.asarray(stats, dtype=float).ravel()
    if x.size < (2 * span + 1) * min_cluster:
        raise ValueError(f"need at least {(2 * span + 1) * min_cluster} samples")
    return _fit_clusters(x, spacing * np.arange(-span, span + 1), min_cluster)


def fit_scp(stats, levels, constellation: bc.Constellation, min_cluster: int = 10) -> Dict[float, MixtureFit]:
    """One mixture per recovered level; a module recovered at level ``a`` but
    printed at ``b`` has offset ``a - b``."""
    x = np.asarray(stats, dtype=float).ravel()
    lv = np.asarray(levels, dtype=float).ravel()
    fits = {}
    for a in constellation.levels:
        fits[a] = _fit_clusters(x[lv == a], a - constellation.array, min_cluster)
    return fits


def acp_thresholds(fit: MixtureFit, eps: float) -> ggd.TestThreshold:
    return ggd.np_threshold(fit.h0, eps, "two_sided")


def scp_thresholds(fits: Dict[float, MixtureFit], eps: float, constellation: bc.Constellation):
    """Per-level acceptance regions.

    The darkest level can only be replaced by lighter ones (negative offsets),
    so it gets a lower bound only; the lightest gets an upper bound only.
    """
    out = {}
    for a in constellation.levels:
        fit = fits.get(a)
        if fit is None or len(fit.components) != constellation.q:
            have = 0 if fit is None else len(fit.components)
            raise ValueError(f"level {a}: expected {constellation.q} components, got {have}")
        if a == constellation.levels[0]:
            side = "left_tail"
        elif a == constellation.levels[-1]:
            side = "right_tail"
        else:
            side = "two_sided"
        out[a] = ggd.np_threshold(fit.h0, eps, side)
    return out


@dataclass(frozen=True)
class LocationReport:
    delta: np.ndarray  # per module, flat
    flags: np.ndarray  # 1 where the module is judged modified
    thresholds: Dict[object, ggd.TestThreshold]

    def located(self) -> np.ndarray:
        return np.flatnonzero(self.flags)


def locate_embedded(delta, levels, thresholds, mode: str, candidates=None) -> LocationReport:
    """Flag modules whose statistic leaves the acceptance region.

    ``mode`` is ``"acp"`` (one region, key ``"all"`` or the only entry) or
    ``"scp"`` (region chosen by each module's recovered level). Only modules
    in ``candidates`` (default: all) can be flagged.
    """
    d = np.asarray(delta, dtype=float).ravel()
    flags = np.zeros(d.size, dtype=np.uint8)
    cand = np.arange(d.size) if candidates is None else np.asarray(candidates)
    if mode == "acp":
        th = thresholds["all"] if "all" in thresholds else next(iter(thresholds.values()))
        flags[cand] = ~th.inside(d[cand])
        return LocationReport(d, flags, {"all": th})
    if mode == "scp":
        lv = np.asarray(levels, dtype=float).ravel()
        for level, th in thresholds.items():
            sel = cand[lv[cand] == level]
            flags[sel] = ~th.inside(d[sel])
        return LocationReport(d, flags, dict(thresholds))
    raise ValueError(f"unknown mode {mode!r}")


def simulate_location_stats(
    grid: bc.ModuleGrid,
    layout: bc.Layout,
    channel: ChannelConfig,
    passes: int,
    seed,
    embed_fraction: float = 0.1,
) -> Tuple[np.ndarray, np.ndarray]:
    """Module statistics from simulated captures of ``grid`` with random
    substitutions, so every offset cluster is populated.

    Returns ``(delta, recovered level)`` pooled over payload modules of all
    passes.
    """
    rng = np.random.default_rng(seed)
    c = layout.constellation
    payload = layout.payload_positions
    ideal = grid.gray().ravel()
    deltas, levels = [], []
    for _ in range(passes):
        sym = grid.symbols.ravel().copy()
        hit = payload[rng.random(payload.size) < embed_fraction]
        sym[hit] = (sym[hit] + rng.integers(1, c.q, hit.size)) % c.q
        img = bc.render(bc.ModuleGrid(sym.reshape(grid.symbols.shape), c), layout.module_px)
        y = equalize_capture(print_capture(img, channel, rng.integers(2**63)), layout)
        means = bc.module_means(y, layout.rows, layout.cols, layout.module_px).ravel()
        deltas.append((ideal - means)[payload])
        levels.append(ideal[payload])
    return np.concatenate(deltas), np.concatenate(levels)


@dataclass
class LcacAttacker:
    """Embedded-location attack on an LCAC barcode.

    Calibration simulates ``passes`` captures of the recovered source
    barcode with random substitutions; results are cached per source grid.
    """

    layout: bc.Layout
    ecc: bc.EccConfig
    channel: ChannelConfig
    eps: float = 0.01
    passes: int = 4
    seed: int = 0

    def __post_init__(self):
        self._cache: Dict[bytes, Tuple[np.ndarray, np.ndarray]] = {}

    def calibration(self, grid: bc.ModuleGrid):
        key = grid.symbols.tobytes()
        if key not in self._cache:
            self._cache[key] = simulate_location_stats(grid, self.layout, self.channel, self.passes, self.seed)
        return self._cache[key]

    def thresholds(self, grid: bc.ModuleGrid, mode: str):
        delta, levels = self.calibration(grid)
        if mode == "acp":
            return {"all": acp_thresholds(fit_acp(delta, self._spacing()), self.eps)}
        if mode == "scp":
            return scp_thresholds(fit_scp(delta, levels, self.layout.constellation), self.eps, self.layout.constellation)
        raise ValueError(f"unknown mode {mode!r}")

    def _spacing(self) -> float:
        steps = np.diff(self.layout.constellation.array)
        if not np.allclose(steps, steps[0]):
            raise ValueError("all-levels mode needs an evenly spaced constellation")
        return float(steps[0])

    def locate(self, captured, mode: str) -> Tuple[bc.Recovery, np.ndarray, LocationReport]:
        """``(recovery, equalized capture, location report)``; raises
        :class:`~anticopy.barcode.DecodeError` if the capture cannot be decoded."""
        y1 = equalize_capture(np.asarray(captured, dtype=float), self.layout)
        rec = bc.monitor_recover(y1, self.layout, self.ecc)
        ideal = rec.grid.gray().ravel()
        means = bc.module_means(y1, self.layout.rows, self.layout.cols, self.layout.module_px).ravel()
        report = locate_embedded(
            module_stats(ideal, means),
            ideal,
            self.thresholds(rec.grid, mode),
            mode,
            candidates=self.layout.payload_positions,
        )
        return rec, y1, report

    def forge(self, captured, mode: str) -> Tuple[np.ndarray, LocationReport]:
        rec, y1, report = self.locate(captured, mode)
        return lcac_forge(y1, report, self.layout, rec.grid), report


def lcac_forge(equalized, report: LocationReport, layout: bc.Layout, source: Optional[bc.ModuleGrid] = None, ecc=None):
    """Clean render of the source grid with flagged modules replaced by the
    captured (demodulated) symbols.

    ``source`` is the recovered source grid; if omitted it is recovered from
    ``equalized`` with ``ecc``.
    """
    if source is None:
        if ecc is None:
            raise ValueError("need the recovered source grid or an ECC config")
        source = bc.monitor_recover(equalized, layout, ecc).grid
    seen = bc.read_grid(equalized, layout).symbols.ravel()
    sym = source.symbols.ravel().copy()
    flagged = report.flags.astype(bool)
    sym[flagged] = seen[flagged]
    return bc.render(bc.ModuleGrid(sym.reshape(source.symbols.shape), layout.constellation), layout.module_px)
