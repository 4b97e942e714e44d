"""Command-line front end.

Exit codes: 0 success (or no hidden information detected), 1 usage or input
error, 2 hidden information detected, 3 the capture could not be decoded.

Every subcommand computes all of its outputs before writing any of them, and
each file is written atomically, so a failed run leaves nothing behind.
"""

from __future__ import annotations

import argparse
import io as _io
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import attacks as at
from . import barcode as bc
from . import harness as hs
from . import lcac
from . import lqr2
from .channel import ChannelConfig, preset, print_capture
from .detect import DetectorKind, Monitor
from .io import atomic_write, format_config, parse_config, pgm_bytes, read_config, read_pgm

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DETECTED = 2
EXIT_RECOVERY = 3


class UsageError(Exception):
    """Bad arguments, configs or inputs (exit 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- sidecars -----------------------------------------------------------------


def _meta_path(image: Path) -> Path:
    return image.with_suffix(".meta")


def _truth_path(image: Path) -> Path:
    return image.with_suffix(".truth.npz")


def _db_path(image: Path) -> Path:
    return image.with_suffix(".pdb")


def _design(family: str, values: Dict[str, object]):
    cls = hs.Lqr2Design if family == "2lqr" else hs.LcacDesign
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise UsageError(f"unknown {family} design keys: {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {family} design: {exc}") from exc


def _load_meta(path: Path):
    try:
        meta = read_config(path)
    except OSError as exc:
        raise UsageError(f"cannot read metadata {path}: {exc}") from exc
    family = meta.pop("family", None)
    if family not in ("2lqr", "lcac"):
        raise UsageError(f"{path}: missing or invalid 'family'")
    meta.pop("key_fingerprint", None)
    meta.pop("seed", None)
    return family, _design(str(family), meta)


def _npz_bytes(**arrays) -> bytes:
    buf = _io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def _read_image(path) -> np.ndarray:
    try:
        return read_pgm(path)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _write_all(outputs: Sequence[Tuple[Path, bytes]]) -> None:
    for path, data in outputs:
        atomic_write(path, data)


def _set_pairs(pairs: Optional[List[str]]) -> Dict[str, object]:
    text = "\n".join(pairs or [])
    try:
        return parse_config(text, "--set")
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _channel(name: str, overrides: Dict[str, object]) -> ChannelConfig:
    try:
        return hs.channel_from(preset(name), overrides)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid channel: {exc}") from exc


# -- subcommands --------------------------------------------------------------


def cmd_generate(args) -> int:
    values: Dict[str, object] = {}
    if args.config:
        try:
            values.update(read_config(args.config))
        except (OSError, ValueError) as exc:
            raise UsageError(str(exc)) from exc
    values.update(_set_pairs(args.set))
    if args.family:
        values["family"] = args.family
    if args.seed is not None:
        values["seed"] = args.seed
    if args.key is not None:
        values["key"] = args.key
    for required in ("family", "seed"):
        if required not in values:
            raise UsageError(f"missing config key {required!r}")
    family = str(values.pop("family"))
    seed = int(values.pop("seed"))
    key_seed = values.pop("key", None)
    if family not in ("2lqr", "lcac"):
        raise UsageError(f"unknown family {family!r}")
    design = _design(family, values)
    out = Path(args.out)
    source_seed, embed_seed = np.random.SeedSequence(seed).spawn(2)
    meta = {"family": family, **asdict(design)}
    outputs = []
    if family == "2lqr":
        src = hs.Lqr2Source(design, source_seed)
        bar = src.barcode(embed_seed)
        image = bar.image
        outputs.append((_db_path(out), lqr2.db_to_bytes(src.db)))
        truth = _npz_bytes(symbols=bar.grid.symbols, black_modules=bar.black_modules, chosen=bar.chosen)
    else:
        if key_seed is None:
            raise UsageError("missing config key 'key' (LCAC secret key)")
        key = lcac.SecretKey(int(key_seed))
        bar = hs.LcacSource(design, source_seed).barcode(key)
        image = bar.render(design.module_px)
        meta["key_fingerprint"] = key.fingerprint()
        truth = _npz_bytes(
            payload=bar.original_payload,
            plain=bar.grid_plain.symbols,
            embedded=bar.grid_embedded.symbols,
            embed_locations=bar.embed_locations,
            changed_modules=bar.changed_modules(),
        )
    outputs += [(out, pgm_bytes(image)), (_meta_path(out), format_config(meta).encode()), (_truth_path(out), truth)]
    _write_all(outputs)
    print(f"wrote {out} ({image.shape[1]}x{image.shape[0]})")
    return EXIT_OK


def cmd_channel(args) -> int:
    img = _read_image(args.input)
    cfg = _channel(args.preset, _set_pairs(args.set))
    s1, s2 = np.random.SeedSequence(args.seed).spawn(2)
    y = print_capture(img, cfg, s1, scale=args.scale)
    if args.passes == 2:
        y = print_capture(y, cfg, s2)
    _write_all([(Path(args.out), pgm_bytes(y))])
    return EXIT_OK


def cmd_detect(args) -> int:
    family, design = _load_meta(Path(args.meta))
    img = _read_image(args.input)
    if img.shape != design.layout.shape_px:
        raise UsageError(f"capture {img.shape} does not match layout {design.layout.shape_px}")
    cfg = _channel(args.preset or family, _set_pairs(args.set))
    monitor = Monitor(design.layout, design.ecc, cfg, args.eps, args.m_s, args.seed)
    try:
        report = monitor.inspect(img, [args.kind])[DetectorKind(args.kind)]
    except bc.DecodeError as exc:
        print(f"recovery failed: {exc}", file=sys.stderr)
        return EXIT_RECOVERY
    print(report.record(args.seed))
    return EXIT_DETECTED if report.decision else EXIT_OK


def _locations_csv(report: at.LocationReport, cols: int) -> bytes:
    lines = ["module,row,col,delta,flag"]
    for j in report.located():
        r, c = divmod(int(j), cols)
        lines.append(f"{j},{r},{c},{report.delta[j]:.6g},1")
    return ("\n".join(lines) + "\n").encode()


def cmd_attack(args) -> int:
    kind = args.kind
    inputs = args.input
    if kind == "synthetic":
        if len(inputs) < 2:
            raise UsageError("synthetic attack needs at least two --in captures")
    elif len(inputs) != 1:
        raise UsageError(f"{kind} attack takes exactly one --in capture")
    imgs = [_read_image(p) for p in inputs]
    out = Path(args.out)
    outputs = []
    if kind == "direct":
        forged = at.direct_attack(imgs[0])
    elif kind == "synthetic":
        try:
            forged = at.synthetic_attack(imgs)
        except bc.LayoutError as exc:
            raise UsageError(str(exc)) from exc
    else:
        if not args.meta:
            raise UsageError(f"{kind} attack needs --meta")
        family, design = _load_meta(Path(args.meta))
        try:
            if kind == "ppd":
                if family != "2lqr" or not args.db:
                    raise UsageError("ppd attack needs a 2LQR capture and --db")
                try:
                    db = lqr2.load_db(args.db)
                except OSError as exc:
                    raise UsageError(f"cannot read {args.db}: {exc}") from exc
                forged = at.ppd_attack(imgs[0], db, design.layout, design.ecc)
            elif kind == "upd":
                if family != "2lqr" or not args.db_out:
                    raise UsageError("upd attack needs a 2LQR capture and --db-out")
                res = at.upd_attack(imgs[0], design.layout, design.ecc, args.L_m, args.seed, args.theta1, args.theta2)
                outputs.append((Path(args.db_out), lqr2.db_to_bytes(res.db)))
                forged = res.image
            else:
                if family != "lcac":
                    raise UsageError(f"{kind} attack needs an LCAC capture")
                cfg = _channel(args.preset or family, _set_pairs(args.set))
                attacker = at.LcacAttacker(design.layout, design.ecc, cfg, args.eps, args.passes, args.seed)
                forged, report = attacker.forge(imgs[0], kind.split("-")[1])
                if args.locations_out:
                    outputs.append((Path(args.locations_out), _locations_csv(report, design.cols)))
        except bc.DecodeError as exc:
            print(f"recovery failed: {exc}", file=sys.stderr)
            return EXIT_RECOVERY
        except (bc.LayoutError, ValueError, RuntimeError) as exc:
            raise UsageError(str(exc)) from exc
    outputs.append((out, pgm_bytes(forged)))
    _write_all(outputs)
    return EXIT_OK


def cmd_authenticate(args) -> int:
    if not args.harness:
        raise UsageError("authentication reads sender truth data; pass --harness to confirm")
    image = Path(args.image)
    family, design = _load_meta(_meta_path(image))
    captured = _read_image(args.input)
    truth = np.load(_truth_path(image))
    if family == "2lqr":
        db = lqr2.load_db(_db_path(image))
        grid = bc.ModuleGrid(truth["symbols"], bc.BINARY_CONSTELLATION)
        rendered = lqr2.render_with_patterns(grid, truth["black_modules"], db.patterns[truth["chosen"]])
        bar = lqr2.Lqr2Barcode(grid, truth["black_modules"], truth["chosen"], db, rendered)
        score, ok = lqr2.authenticate_2lqr(captured, bar, design.theta_b)
    else:
        if args.key is None:
            raise UsageError("LCAC authentication needs --key")
        score, ok = lcac.authenticate_lcac(captured, lcac.SecretKey(args.key), design.layout, design.ecc_auth, design.theta_b)
    print(f"family={family} score={score!r} accept={int(ok)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    configs = []
    for path in args.config:
        try:
            values = read_config(path)
        except (OSError, ValueError) as exc:
            raise UsageError(str(exc)) from exc
        if args.seed is not None:
            values["seed"] = args.seed
        values.setdefault("label", Path(path).stem)
        try:
            configs.append(hs.ExperimentConfig.from_mapping(values))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"{path}: {exc}") from exc
    reports = [hs.run_experiment(c) for c in configs]
    table = hs.table_report(reports)
    csv_text = "".join(r.to_csv() if i == 0 else r.to_csv().split("\n", 1)[1] for i, r in enumerate(reports))
    outputs = []
    if args.csv:
        outputs.append((Path(args.csv), csv_text.encode()))
    if args.table:
        outputs.append((Path(args.table), table.encode()))
    _write_all(outputs)
    sys.stdout.write(table)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="anticopy", description="Anti-copy barcode simulation toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="render a barcode with metadata sidecars")
    g.add_argument("--family", choices=("2lqr", "lcac"))
    g.add_argument("--config", help="flat key = value design file")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a design key")
    g.add_argument("--seed", type=int)
    g.add_argument("--key", type=int, help="LCAC secret key")
    g.add_argument("--out", required=True, help="output PGM path")
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("channel", help="simulate one or two print-and-capture passes")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--passes", type=int, choices=(1, 2), default=1)
    c.add_argument("--preset", default="default")
    c.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a channel parameter")
    c.add_argument("--scale", type=int, default=1, help="capture resolution multiple (first pass)")
    c.add_argument("--seed", type=int, required=True)
    c.set_defaults(func=cmd_channel)

    d = sub.add_parser("detect", help="monitor: test a capture for hidden information")
    d.add_argument("--kind", choices=[k.value for k in DetectorKind], required=True)
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--meta", required=True)
    d.add_argument("--eps", type=float, default=0.01)
    d.add_argument("--m-s", dest="m_s", type=int, default=1000, help="simulated calibration passes")
    d.add_argument("--preset", help="channel model used for calibration (default: the family preset)")
    d.add_argument("--set", action="append", metavar="KEY=VALUE")
    d.add_argument("--seed", type=int, required=True)
    d.set_defaults(func=cmd_detect)

    a = sub.add_parser("attack", help="forge a barcode from captures")
    a.add_argument("--kind", choices=("direct", "synthetic", "ppd", "upd", "lcac-acp", "lcac-scp"), required=True)
    a.add_argument("--in", dest="input", action="append", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--meta")
    a.add_argument("--db", help="public pattern database (ppd)")
    a.add_argument("--db-out", help="where to write the alternative database (upd)")
    a.add_argument("--L-m", dest="L_m", type=int, default=100)
    a.add_argument("--theta1", type=float, default=127.0)
    a.add_argument("--theta2", type=float, default=0.8)
    a.add_argument("--locations-out", help="CSV of located modules (lcac-acp, lcac-scp)")
    a.add_argument("--eps", type=float, default=0.01)
    a.add_argument("--passes", type=int, default=4, help="simulated calibration captures (lcac)")
    a.add_argument("--preset")
    a.add_argument("--set", action="append", metavar="KEY=VALUE")
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_attack)

    v = sub.add_parser("authenticate", help="receiver check against sender truth (harness use)")
    v.add_argument("--image", required=True, help="PGM written by generate; sidecars are found next to it")
    v.add_argument("--in", dest="input", required=True, help="capture to authenticate")
    v.add_argument("--key", type=int)
    v.add_argument("--harness", action="store_true", help="confirm reading the truth sidecar")
    v.set_defaults(func=cmd_authenticate)

    e = sub.add_parser("eval", help="run experiments and tabulate metrics")
    e.add_argument("--config", action="append", required=True)
    e.add_argument("--csv")
    e.add_argument("--table")
    e.add_argument("--seed", type=int, help="override every config's master seed")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
