"""Command-line entry point: ``fadc analyze|train|gradcheck|rf|demo-aliasing``.

Exit codes: 0 success, 2 usage / input / config errors, 3 numerical
divergence during training.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .spectrum import HpConfig, OCTAVE_EDGES, band_power, dft2, hp_power_map, octave_masks

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("fadc")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- analyze


def load_image(path: Path) -> np.ndarray:
    """A tensor file or a PGM as an (n, c, h, w) array."""
    if not path.is_file():
        raise UsageError(f"cannot read {path}")
    try:
        with open(path, "rb") as f:
            head = f.read(4)
        if head == io.MAGIC:
            return io.read_tensor(path)
        return io.read_pgm(path)[None, None]
    except io.FormatError as e:
        raise UsageError(f"{path}: {e}") from e


def band_rows(img: np.ndarray) -> list[dict]:
    """Per-octave power of a (c, h, w) stack, summed over channels."""
    h, w = img.shape[-2:]
    masks = octave_masks(h, w, OCTAVE_EDGES)
    powers = [sum(band_power(ch, m) for ch in img) for m in masks]
    total = sum(powers)
    return [{"band": b, "lo": m.lo, "hi": m.hi, "power": p, "fraction": p / total if total > 0 else 0.0}
            for b, (m, p) in enumerate(zip(masks, powers))]


def spectrum_rows(img: np.ndarray, cfg: HpConfig, hp: np.ndarray) -> list[dict]:
    h, w = img.shape[-2:]
    total = dc = above = 0.0
    fu = np.abs(np.arange(h) - h // 2) / h
    fv = np.abs(np.arange(w) - w // 2) / w
    beyond = np.maximum(fu[:, None], fv[None, :]) > 1.0 / (2.0 * cfg.d_ref)
    for ch in img:
        pw = dft2(ch).power()
        total += float(pw.sum())
        dc += float(pw[h // 2, w // 2])
        above += float(pw[beyond].sum())
    rows = [("height", h), ("width", w), ("channels", img.shape[0]), ("total_power", total),
            ("dc_power", dc), ("nyquist_exceeding_power", above),
            ("nyquist_exceeding_fraction", above / total if total > 0 else 0.0),
            ("window", cfg.s), ("d_ref", cfg.d_ref),
            ("hp_mean", float(hp.mean())), ("hp_max", float(hp.max()))]
    return [{"key": k, "value": v} for k, v in rows]


def cmd_analyze(args) -> int:
    x = load_image(Path(args.input))
    try:
        cfg = HpConfig(args.s, args.d_ref)
    except ValueError as e:
        raise UsageError(str(e)) from e
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    img = x[0]
    hp = hp_power_map(x[:1], cfg)[0, 0]
    io.write_pgm(out / "hp_map.pgm", hp)
    io.write_csv(out / "band_power.csv", band_rows(img), ["band", "lo", "hi", "power", "fraction"])
    io.write_csv(out / "spectrum_summary.csv", spectrum_rows(img, cfg, hp), ["key", "value"])
    print(f"wrote {out}/hp_map.pgm, band_power.csv, spectrum_summary.csv")
    return EXIT_OK


# ---------------------------------------------------------------- train


def summary_row(res, baseline_rf: int) -> dict:
    an = res.analysis
    row = {
        "miou": res.metrics["miou"],
        "pixel_accuracy": res.metrics["pixel_accuracy"],
        "init_miou": res.init_metrics["miou"],
        "rf": res.rf,
        "rf_fixed_baseline": baseline_rf,
    }
    for i, (d, c) in enumerate(zip(an.mean_dilation, an.hp_dilation_corr)):
        row[f"mean_dilation_l{i}"] = d
        row[f"hp_dilation_corr_l{i}"] = c
    for i, sm in enumerate(an.selection_means):
        for b, v in enumerate(sm):
            row[f"sel_l{i}_b{b}"] = v
    return row


def write_run(out: Path, res, baseline_rf: int) -> None:
    from .toyseg.train import log_columns
    io.write_csv(out / "train_log.csv", res.log, log_columns())
    index = io.write_params(out / "model.fadt", res.model.params)
    io.write_csv(out / "model_index.csv", index, ["name", "shape", "offset"])
    an = res.analysis
    for i, d in enumerate(an.dmaps):
        if d is not None:
            io.write_pgm(out / f"dilation_map_final_l{i}.pgm", d)
    for i, s in enumerate(an.sels):
        if s is not None:
            for b in range(s.shape[0]):
                io.write_pgm(out / f"selection_l{i}_b{b}.pgm", s[b])
    row = summary_row(res, baseline_rf)
    io.write_csv(out / "summary.csv", [row], list(row))


def cmd_train(args) -> int:
    from .toyseg import train as tr
    try:
        cfg = io.read_config(args.config, tr.TrainConfig)
    except OSError as e:
        raise UsageError(f"cannot read config: {e}") from e
    except io.ConfigError as e:
        raise UsageError(f"config: {e}") from e
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(io.format_config(cfg))
    try:
        res = tr.run(cfg)
    except tr.TrainingDiverged as e:
        io.write_csv(out / "train_log.csv", e.log_rows, tr.log_columns())
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    baseline = tr.model_receptive_field(res.model, [cfg.d_init] * len(res.model.layers))
    write_run(out, res, baseline)
    print(f"miou {res.metrics['miou']:.4f}  rf {res.rf}  (fixed-dilation rf {baseline})")
    return EXIT_OK


# ---------------------------------------------------------------- gradcheck


def cmd_gradcheck(args) -> int:
    from .autodiff import collect_rows
    from .gradsuite import CHECKS, run_suite
    names = None if args.all or not args.op else args.op
    if names:
        unknown = [n for n in names if n not in CHECKS]
        if unknown:
            raise UsageError(f"unknown op {', '.join(unknown)}; known: {', '.join(CHECKS)}")
    reports = run_suite(names)
    sys.stdout.write(collect_rows(reports))
    failed = [r.op for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    return EXIT_OK if not failed else 1


# ---------------------------------------------------------------- rf


def model_chain_from_dir(path: Path):
    from .toyseg.rf import LayerSpec
    rows = io.read_csv(path / "summary.csv")
    if not rows:
        raise UsageError(f"{path}/summary.csv is empty")
    row = rows[0]
    ds = [float(row[k]) for k in sorted(k for k in row if k.startswith("mean_dilation_l"))]
    return [LayerSpec(3, 1, 1.0)] + [LayerSpec(3, 1, max(d, 1e-9)) for d in ds] + [LayerSpec(1, 1, 1.0)]


def cmd_rf(args) -> int:
    from .toyseg.rf import parse_chain, receptive_field
    if args.model:
        p = Path(args.model)
        if not (p / "summary.csv").is_file():
            raise UsageError(f"no summary.csv under {p}")
        chain = model_chain_from_dir(p)
    elif args.chain:
        try:
            chain = parse_chain(args.chain)
        except ValueError as e:
            raise UsageError(str(e)) from e
    else:
        raise UsageError("rf needs --chain or --model")
    print(receptive_field(chain))
    return EXIT_OK


# ---------------------------------------------------------------- demo


def cmd_demo(args) -> int:
    from .aliasing import DemoConfig, run_demo
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = DemoConfig()
    res = run_demo(cfg, constant=args.constant)
    io.write_pgm(out / "input.pgm", res.image)
    io.write_pgm(out / "response_fixed_d4.pgm", res.fixed)
    io.write_pgm(out / "response_fixed_d1.pgm", res.unit)
    io.write_pgm(out / "response_adaptive.pgm", res.adaptive)
    io.write_pgm(out / "dilation_map_adaptive.pgm", res.dmap)
    r0, r1, c0, c1 = cfg.checker
    inner = res.dmap[r0 + cfg.margin : r1 - cfg.margin, c0 + cfg.margin : c1 - cfg.margin]
    rows = [
        {"layer": f"fixed_d{cfg.d_fixed}", "metric": res.metrics["fixed"], "mean_dilation_region": cfg.d_fixed},
        {"layer": "fixed_d1", "metric": res.metrics["unit"], "mean_dilation_region": 1},
        {"layer": "adaptive", "metric": res.metrics["adaptive"], "mean_dilation_region": float(inner.mean())},
    ]
    io.write_csv(out / "gridding_metric.csv", rows, ["layer", "metric", "mean_dilation_region"])
    print(f"fixed/adaptive gridding ratio {res.ratio:.3g}")
    return EXIT_OK


# ---------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fadc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="HP map and octave band power of an image")
    a.add_argument("--input", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--s", type=int, default=16, help="window size")
    a.add_argument("--d-ref", type=float, default=2.0, help="reference dilation")
    a.set_defaults(fn=cmd_analyze)

    t = sub.add_parser("train", help="train the toy segmentation model")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--op", action="append", help="check one op (repeatable)")
    g.add_argument("--all", action="store_true")
    g.set_defaults(fn=cmd_gradcheck)

    r = sub.add_parser("rf", help="receptive field of a layer chain")
    r.add_argument("--chain", help='e.g. "3x1d1,3x2d2"')
    r.add_argument("--model", help="training output directory")
    r.set_defaults(fn=cmd_rf)

    d = sub.add_parser("demo-aliasing", help="gridding artifacts of fixed vs adaptive dilation")
    d.add_argument("--out", required=True)
    d.add_argument("--constant", action="store_true", help="use a constant image")
    d.set_defaults(fn=cmd_demo)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
