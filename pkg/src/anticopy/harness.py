"""Seeded end-to-end experiments: legitimate and forged copies, authentication, metrics.

A trial prints a barcode once (the attacker's capture, or the receiver's for
``attack = "none"``), runs the attack, prints the forgery a second time and
lets the receiver authenticate it. The source message and the 2LQR pattern
database are fixed per experiment; the pattern choice / LCAC key and all
channel noise change per trial. All randomness derives from the master seed.
"""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass, field, fields, replace
from functools import cached_property
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import attacks as at
from . import barcode as bc
from . import ggd
from . import lcac
from . import lqr2
from .channel import ChannelConfig, preset, print_capture
from .detect import DetectionReport, DetectorKind, Monitor

__all__ = [
    "Lqr2Design",
    "LcacDesign",
    "ExperimentConfig",
    "TrialRecord",
    "MetricsReport",
    "ATTACKS",
    "CSV_COLUMNS",
    "ps_metric",
    "pr_metric",
    "run_experiment",
    "table_report",
    "detection_trials",
    "Lqr2Source",
    "LcacSource",
]

ATTACKS = ("none", "direct", "synthetic", "ppd", "upd", "lcac-acp", "lcac-scp")
_FAMILY_ATTACKS = {
    "2lqr": ("none", "direct", "synthetic", "ppd", "upd"),
    "lcac": ("none", "direct", "synthetic", "lcac-acp", "lcac-scp"),
}
CSV_COLUMNS = ("trial", "seed", "family", "attack", "score", "accept", "pr")


@dataclass(frozen=True)
class Lqr2Design:
    rows: int = 25
    cols: int = 25
    module_px: int = 12
    L_m: int = 100
    density: float = 0.42
    ecc_block: int = 78
    ecc_payload: int = 40
    theta_b: float = lqr2.THETA_B

    @property
    def layout(self) -> bc.Layout:
        return bc.Layout(self.rows, self.cols, self.module_px, bc.BINARY_CONSTELLATION)

    @property
    def ecc(self) -> bc.EccConfig:
        return bc.EccConfig(self.ecc_block, self.ecc_payload)


@dataclass(frozen=True)
class LcacDesign:
    rows: int = 47
    cols: int = 47
    module_px: int = 32
    training_border: int = 1
    ecc_block: int = 168
    ecc_payload: int = 48
    ecc_blocks: int = 3
    auth_block: int = 28
    auth_payload: int = 8
    theta_b: float = lcac.THETA_B

    @property
    def layout(self) -> bc.Layout:
        return bc.Layout(self.rows, self.cols, self.module_px, bc.LCAC_CONSTELLATION, self.training_border)

    @property
    def ecc(self) -> bc.EccConfig:
        return bc.EccConfig(self.ecc_block, self.ecc_payload, self.ecc_blocks)

    @property
    def ecc_auth(self) -> bc.EccConfig:
        return bc.EccConfig(self.auth_block, self.auth_payload)


_CHANNEL_KEYS = {
    "tone_gamma",
    "dot_gain",
    "blur_sigma",
    "contrast",
    "mottle_sigma",
    "mottle_scale",
    "jitter",
    "noise_sigma",
    "noise_gamma",
}


def channel_from(base: ChannelConfig, overrides: Mapping[str, object]) -> ChannelConfig:
    kw = {k: v for k, v in overrides.items() if k not in ("noise_sigma", "noise_gamma")}
    cfg = replace(base, **kw)
    if "noise_sigma" in overrides or "noise_gamma" in overrides:
        sigma = float(overrides.get("noise_sigma", cfg.noise.sigma))
        gamma = float(overrides.get("noise_gamma", cfg.noise.gamma))
        cfg = replace(cfg, noise=ggd.GgdParams(0.0, sigma, gamma))
    return cfg


@dataclass(frozen=True)
class ExperimentConfig:
    family: str
    attack: str = "none"
    trials: int = 100
    seed: int = 0
    channel1: Optional[ChannelConfig] = None  # None: the family preset
    channel2: Optional[ChannelConfig] = None
    lqr2: Lqr2Design = Lqr2Design()
    lcac: LcacDesign = LcacDesign()
    eps_a: float = 0.01
    synthetic_captures: int = 6
    upd_scale: int = 2
    upd_candidates: Tuple[int, ...] = (6, 8, 12)
    theta1: float = 127.0
    theta2: float = 0.8
    attacker_passes: int = 4
    label: str = ""

    def __post_init__(self):
        if self.family not in _FAMILY_ATTACKS:
            raise ValueError(f"family must be one of {sorted(_FAMILY_ATTACKS)}")
        if self.attack not in _FAMILY_ATTACKS[self.family]:
            raise ValueError(f"attack {self.attack!r} does not apply to {self.family}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.synthetic_captures < 2:
            raise ValueError("synthetic attack needs at least 2 captures")

    @property
    def pass1(self) -> ChannelConfig:
        return self.channel1 or preset(self.family)

    @property
    def pass2(self) -> ChannelConfig:
        return self.channel2 or preset(self.family)

    @property
    def name(self) -> str:
        return self.label or f"{self.family}/{self.attack}"

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "ExperimentConfig":
        """Build from flat keys, e.g. ``family``, ``attack``, ``lqr2.L_m``,
        ``channel2 = 2lqr``, ``channel2.noise_sigma = 20``."""
        top = {f.name for f in fields(cls)} - {"channel1", "channel2", "lqr2", "lcac"}
        kw: Dict[str, object] = {}
        design: Dict[str, Dict[str, object]] = {"lqr2": {}, "lcac": {}}
        chan: Dict[str, Dict[str, object]] = {"channel1": {}, "channel2": {}}
        names: Dict[str, str] = {}
        for key, value in values.items():
            head, _, tail = key.partition(".")
            if not tail and key in top:
                kw[key] = value
            elif not tail and key in chan:
                names[key] = str(value)
            elif head in design and tail in {f.name for f in fields(Lqr2Design if head == "lqr2" else LcacDesign)}:
                design[head][tail] = value
            elif head in chan and tail in _CHANNEL_KEYS:
                chan[head][tail] = value
            else:
                raise KeyError(f"unknown experiment key {key!r}")
        if "family" not in kw:
            raise KeyError("missing required key 'family'")
        if "upd_candidates" in kw:
            kw["upd_candidates"] = tuple(int(c) for c in str(kw["upd_candidates"]).split(","))
        for c in ("channel1", "channel2"):
            if c in names or chan[c]:
                base = preset(names.get(c, str(kw["family"])))
                kw[c] = channel_from(base, chan[c])
        return cls(lqr2=Lqr2Design(**design["lqr2"]), lcac=LcacDesign(**design["lcac"]), **kw)


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    seed: int
    family: str
    attack: str
    score: float
    accept: bool
    pr: Optional[float] = None
    status: str = "ok"  # "ok", "recovery-failure" or "excluded: ..."


@dataclass
class MetricsReport:
    name: str
    family: str
    attack: str
    records: List[TrialRecord] = field(default_factory=list)

    @property
    def counted(self) -> List[TrialRecord]:
        return [r for r in self.records if not r.status.startswith("excluded")]

    @property
    def exclusions(self) -> int:
        return len(self.records) - len(self.counted)

    @property
    def failures(self) -> int:
        return sum(r.status == "recovery-failure" for r in self.records)

    @property
    def ps(self) -> float:
        rows = self.counted
        return ps_metric(sum(r.accept for r in rows), len(rows))

    @property
    def pr(self) -> Optional[float]:
        vals = [r.pr for r in self.counted if r.pr is not None]
        return float(np.mean(vals)) if vals else None

    def to_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow(
                [r.trial, r.seed, r.family, r.attack, f"{r.score:.10g}", int(r.accept), "" if r.pr is None else f"{r.pr:.10g}"]
            )
        return buf.getvalue()


def ps_metric(accepted: int, total: int) -> float:
    if total < 1:
        raise ValueError("need at least one trial")
    if not 0 <= accepted <= total:
        raise ValueError("accepted must lie in [0, total]")
    return accepted / total


def pr_metric(estimated, truth) -> float:
    truth = set(np.asarray(truth).ravel().tolist())
    if not truth:
        raise ValueError("no true embedded locations")
    found = set(np.asarray(estimated).ravel().tolist())
    return len(found & truth) / len(truth)


# -- per-family sources -------------------------------------------------------


@dataclass
class Lqr2Source:
    design: Lqr2Design
    seed: np.random.SeedSequence

    @cached_property
    def _seeds(self):
        return self.seed.spawn(2)

    @cached_property
    def grid(self) -> bc.ModuleGrid:
        ecc = self.design.ecc
        payload = bc.generate_message(ecc.payload_bits, self._seeds[0])
        return self.design.layout.place(bc.encode(payload, ecc))

    @cached_property
    def db(self) -> lqr2.PatternDatabase:
        d = self.design
        return lqr2.gen_pattern_db(d.L_m, d.module_px, d.density, self._seeds[1])

    def barcode(self, seed) -> lqr2.Lqr2Barcode:
        return lqr2.embed_patterns(self.grid, self.db, seed)

    def authenticate(self, captured, truth: lqr2.Lqr2Barcode) -> Tuple[float, bool]:
        return lqr2.authenticate_2lqr(captured, truth, self.design.theta_b)


@dataclass
class LcacSource:
    design: LcacDesign
    seed: np.random.SeedSequence

    @cached_property
    def payload(self) -> np.ndarray:
        return bc.generate_message(self.design.ecc.payload_bits, self.seed)

    def barcode(self, key: lcac.SecretKey) -> lcac.LcacBarcode:
        d = self.design
        return lcac.build_lcac(self.payload, key, d.layout, d.ecc, d.ecc_auth)

    def plain_image(self) -> np.ndarray:
        d = self.design
        return bc.render(d.layout.place(bc.encode(self.payload, d.ecc)), d.module_px)

    def authenticate(self, captured, key: lcac.SecretKey) -> Tuple[float, bool]:
        d = self.design
        return lcac.authenticate_lcac(captured, key, d.layout, d.ecc_auth, d.theta_b)


def _key_from(seq: np.random.SeedSequence) -> lcac.SecretKey:
    return lcac.SecretKey(int(seq.generate_state(1, np.uint64)[0] >> 1))


# -- experiment loop ----------------------------------------------------------


def run_experiment(cfg: ExperimentConfig) -> MetricsReport:
    root = np.random.SeedSequence(cfg.seed)
    source_seed, attacker_seed = root.spawn(2)
    report = MetricsReport(cfg.name, cfg.family, cfg.attack)
    if cfg.family == "2lqr":
        source = Lqr2Source(cfg.lqr2, source_seed)
        trial_fn = _lqr2_trial
        ctx = {}
    else:
        source = LcacSource(cfg.lcac, source_seed)
        trial_fn = _lcac_trial
        atk_seed = int(attacker_seed.generate_state(1)[0])
        ctx = {"attacker": at.LcacAttacker(cfg.lcac.layout, cfg.lcac.ecc, cfg.pass1, cfg.eps_a, cfg.attacker_passes, atk_seed)}
    for t in range(cfg.trials):
        seq = np.random.SeedSequence([cfg.seed, t])
        trial_seed = int(seq.generate_state(1)[0])
        try:
            score, accept, pr, status = trial_fn(cfg, source, seq, ctx)
        except bc.DecodeError:
            score, accept, pr, status = float("nan"), False, None, "recovery-failure"
        except (ValueError, RuntimeError) as exc:
            score, accept, pr, status = float("nan"), False, None, f"excluded: {type(exc).__name__}: {exc}"
        report.records.append(TrialRecord(t, trial_seed, cfg.family, cfg.attack, score, bool(accept), pr, status))
    return report


def _forgery_common(cfg: ExperimentConfig, image, seeds):
    """Attacks shared by both families; returns ``None`` for family-specific ones."""
    if cfg.attack == "none":
        return None
    if cfg.attack == "direct":
        return at.direct_attack(print_capture(image, cfg.pass1, seeds[0]))
    if cfg.attack == "synthetic":
        caps = [print_capture(image, cfg.pass1, s) for s in seeds[0].spawn(cfg.synthetic_captures)]
        return at.synthetic_attack(caps)
    return None


def _lqr2_trial(cfg: ExperimentConfig, source: Lqr2Source, seq, ctx):
    s_embed, s1, s2 = seq.spawn(3)
    truth = source.barcode(s_embed)
    if cfg.attack == "none":
        received = print_capture(truth.image, cfg.pass1, s1)
        score, accept = source.authenticate(received, truth)
        return score, accept, None, "ok"
    forged = _forgery_common(cfg, truth.image, (s1,))
    d = cfg.lqr2
    if cfg.attack == "ppd":
        captured = print_capture(truth.image, cfg.pass1, s1)
        forged = at.ppd_attack(captured, source.db, d.layout, d.ecc)
    elif cfg.attack == "upd":
        captured = print_capture(truth.image, cfg.pass1, s1, scale=cfg.upd_scale)
        s_db = int(s1.generate_state(1)[0])
        forged = at.upd_attack(
            captured, d.layout, d.ecc, d.L_m, s_db, cfg.theta1, cfg.theta2, cfg.upd_candidates
        ).image
    received = print_capture(forged, cfg.pass2, s2)
    score, accept = source.authenticate(received, truth)
    return score, accept, None, "ok"


def _lcac_trial(cfg: ExperimentConfig, source: LcacSource, seq, ctx):
    s_key, s1, s2 = seq.spawn(3)
    key = _key_from(s_key)
    truth = source.barcode(key)
    image = truth.render(cfg.lcac.module_px)
    if cfg.attack == "none":
        score, accept = source.authenticate(print_capture(image, cfg.pass1, s1), key)
        return score, accept, None, "ok"
    pr = None
    forged = _forgery_common(cfg, image, (s1,))
    if cfg.attack in ("lcac-acp", "lcac-scp"):
        captured = print_capture(image, cfg.pass1, s1)
        forged, located = ctx["attacker"].forge(captured, cfg.attack.split("-")[1])
        changed = truth.changed_modules()
        if changed.size:
            pr = pr_metric(located.located(), changed)
    score, accept = source.authenticate(print_capture(forged, cfg.pass2, s2), key)
    return score, accept, pr, "ok"


def table_report(reports: Sequence[MetricsReport]) -> str:
    """Aligned text table, one row per report, fixed column order."""
    head = ("experiment", "family", "attack", "trials", "ps", "pr", "failures", "excluded")
    rows = [head]
    for r in reports:
        pr = "-" if r.pr is None else f"{r.pr:.4f}"
        rows.append((r.name, r.family, r.attack, str(len(r.records)), f"{r.ps:.4f}", pr, str(r.failures), str(r.exclusions)))
    widths = [max(len(row[i]) for row in rows) for i in range(len(head))]
    lines = ["  ".join(cell.ljust(w) if i < 3 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths))) for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(line.rstrip() for line in lines) + "\n"


# -- detection experiments ----------------------------------------------------


def detection_trials(
    family: str,
    hidden: bool,
    trials: int = 100,
    m_s: int = 1000,
    eps: float = 0.01,
    seed: int = 0,
    channel: Optional[ChannelConfig] = None,
    lqr2_design: Lqr2Design = Lqr2Design(),
    lcac_design: LcacDesign = LcacDesign(),
) -> List[Dict[DetectorKind, DetectionReport]]:
    """Monitor decisions on single-pass captures of barcodes with
    (``hidden=True``) or without hidden information.

    For 2LQR the hidden information is the pattern texture; for LCAC it is the
    embedded authentication message, with a fresh key per trial.
    """
    if family not in _FAMILY_ATTACKS:
        raise ValueError(f"unknown family {family!r}")
    channel = channel or preset(family)
    root = np.random.SeedSequence(seed)
    source_seed, monitor_seed = root.spawn(2)
    mon_seed = int(monitor_seed.generate_state(1)[0])
    out = []
    if family == "2lqr":
        src = Lqr2Source(lqr2_design, source_seed)
        monitor = Monitor(lqr2_design.layout, lqr2_design.ecc, channel, eps, m_s, mon_seed)
        plain = bc.render(src.grid, lqr2_design.module_px)
    elif family == "lcac":
        src = LcacSource(lcac_design, source_seed)
        monitor = Monitor(lcac_design.layout, lcac_design.ecc, channel, eps, m_s, mon_seed)
        plain = src.plain_image()
    for t in range(trials):
        s_embed, s_cap = np.random.SeedSequence([seed, t]).spawn(2)
        if not hidden:
            image = plain
        elif family == "2lqr":
            image = src.barcode(s_embed).image
        else:
            image = src.barcode(_key_from(s_embed)).render(lcac_design.module_px)
        out.append(monitor.inspect(print_capture(image, channel, s_cap)))
    return out
