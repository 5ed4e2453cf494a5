"""Command-line entry point: ``sfdehaze <subcommand> [options]``.

Every run writes into ``<out>/<subcommand>-<hash>/`` where the hash covers the
resolved configuration and the command's arguments, so different settings never
overwrite each other and identical settings reproduce identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import config as config_mod
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .experiment import adapt_desk, heldout, score, source_train_set, target_train_set
from .functional import NumericalConsistencyError
from .haze_sim import UnlabeledImages, load_paired, write_dataset
from .image_ops import ConfigError, ImageIOError, clahe, dark_channel, load_image, psnr, save_image, save_plane, ssim
from .models import net_from_checkpoint
from .selftest import run_all, SEEDS
from .spectral import decompose, exchange, log_amplitude_image, phase_image
from .tensor import AutodiffError, ShapeError
from .train import TrainingError, run_net, train_source

log = logging.getLogger("sfdehaze")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers

def _image_paths(path) -> list[str]:
    if os.path.isdir(path):
        names = sorted(f for f in os.listdir(path) if f.lower().endswith((".png", ".ppm")))
        if not names:
            raise ImageIOError(f"{path}: no PNG/PPM images found")
        return [os.path.join(path, f) for f in names]
    if not os.path.exists(path):
        raise ImageIOError(f"{path}: no such file or directory")
    return [path]


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _run_dir(args, cfg, *extra) -> str:
    run = os.path.join(args.out, f"{args.command}-{cfg.digest(args.command, *extra)}")
    os.makedirs(run, exist_ok=True)
    with open(os.path.join(run, "config.json"), "w") as fh:
        fh.write(cfg.echo() + "\n")
    log.info("resolved config:\n%s", cfg.echo())
    return run


def _stem(path) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _require_checkpoint(args):
    if not args.checkpoint:
        raise UsageError(f"{args.command} needs --checkpoint")
    return load_checkpoint(args.checkpoint)


def _hazy_dir(path) -> str:
    sub = os.path.join(path, "hazy")
    return sub if os.path.isdir(sub) else path


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args, cfg):
    run = _run_dir(args, cfg, args.domain, args.n, args.heldout)
    jobs = []
    if args.domain in ("source", "both"):
        jobs.append(("source", cfg.source_domain, args.n or cfg.data.n_source, 0))
    if args.domain in ("target", "both"):
        jobs.append(("target", cfg.target_domain, args.n or cfg.data.n_target, 0))
    if args.heldout:
        jobs.append(("heldout_source", cfg.source_domain, cfg.data.n_heldout, cfg.data.heldout_start))
        jobs.append(("heldout_target", cfg.target_domain, cfg.data.n_heldout, cfg.data.heldout_start))
    for name, dom, n, start in jobs:
        write_dataset(os.path.join(run, name), dom, n, start=start, workers=args.device_threads)
        print(f"{name}: {n} samples")
    return run


def cmd_train_source(args, cfg):
    run = _run_dir(args, cfg, args.data and os.path.abspath(args.data))
    data = load_paired(args.data) if args.data else source_train_set(cfg)
    if len(data) == 0:
        raise ImageIOError(f"{args.data}: no paired hazy/clean images")
    ckpt, history = train_source(data, cfg.source_optim, net_seed=cfg.adapt.net_seed)
    save_checkpoint(os.path.join(run, "source.ckpt"), ckpt)
    _write_rows(os.path.join(run, "history.csv"), ["epoch", "l1"], list(enumerate(history)))
    metrics = {}
    for dom in ("source", "target"):
        pairs = heldout(cfg, dom)
        metrics[dom] = {"identity_psnr": float(np.mean([psnr(h, c) for h, c in zip(pairs.hazy, pairs.clean)])),
                        **score(ckpt, pairs)}
    _write_json(os.path.join(run, "metrics.json"), metrics)
    for dom, m in metrics.items():
        print(f"held-out {dom}: identity {m['identity_psnr']:.2f} dB -> source net {m['psnr']:.2f} dB, "
              f"SSIM {m['ssim']:.4f}")
    return run


def cmd_adapt(args, cfg):
    src_ckpt = _require_checkpoint(args)
    run = _run_dir(args, cfg, src_ckpt.checksum(), args.target and os.path.abspath(args.target),
                   args.eval_data and os.path.abspath(args.eval_data))
    target = UnlabeledImages.from_dir(_hazy_dir(args.target)) if args.target else target_train_set(cfg)
    if args.eval_data:
        pairs = load_paired(args.eval_data)
    elif args.target:
        pairs = None
    else:
        pairs = heldout(cfg)
    ckpt, report = adapt_desk(src_ckpt, cfg, target=target, eval_pairs=pairs)
    save_checkpoint(os.path.join(run, "student.ckpt"), ckpt)
    report.write_csv(os.path.join(run, "report.csv"))
    extra = {}
    if pairs is not None:
        extra["source_metrics"] = score(src_ckpt, pairs)
        extra["final_metrics"] = report.epochs[-1] if report.epochs else score(ckpt, pairs)
        extra["psnr_gain"] = extra["final_metrics"]["psnr"] - extra["source_metrics"]["psnr"]
    report.write_json(os.path.join(run, "report.json"), **extra)
    print(f"steps: {len(report.steps)}, frozen checksum constant: {report.frozen_checksum_constant}")
    if pairs is not None:
        print(f"held-out PSNR {extra['source_metrics']['psnr']:.3f} -> {extra['final_metrics']['psnr']:.3f} dB "
              f"(gain {extra['psnr_gain']:+.3f}); SSIM {extra['source_metrics']['ssim']:.4f} -> "
              f"{extra['final_metrics']['ssim']:.4f}")
    return run


def cmd_dehaze(args, cfg):
    if not args.input:
        raise UsageError("dehaze needs --input")
    ckpt = _require_checkpoint(args)
    paths = _image_paths(args.input)
    run = _run_dir(args, cfg, ckpt.checksum(), [os.path.abspath(p) for p in paths])
    net = net_from_checkpoint(ckpt)

    def one(path):
        out = run_net(net, [load_image(path)])[0]
        save_image(os.path.join(run, _stem(path) + ".png"), out)
    _map(one, paths, args.device_threads)
    print(f"dehazed {len(paths)} image(s)")
    return run


def cmd_exchange(args, cfg):
    if not (args.a and args.b):
        raise UsageError("exchange needs --a and --b")
    run = _run_dir(args, cfg, os.path.abspath(args.a), os.path.abspath(args.b))
    a, b = load_image(args.a), load_image(args.b)
    if a.shape != b.shape:
        raise UsageError(f"images differ in size: {a.shape[:2]} vs {b.shape[:2]}")
    ab, ba = exchange(a, b)
    save_image(os.path.join(run, "amp_a_phase_b.png"), ab)
    save_image(os.path.join(run, "amp_b_phase_a.png"), ba)
    for tag, img in (("a", a), ("b", b)):
        spec = decompose(img)
        save_image(os.path.join(run, f"amplitude_{tag}.png"), np.fft.fftshift(log_amplitude_image(spec), axes=(0, 1)))
        save_image(os.path.join(run, f"phase_{tag}.png"), np.fft.fftshift(phase_image(spec), axes=(0, 1)))
    rows = [["amp_a_phase_b", psnr(ab, a), psnr(ab, b)], ["amp_b_phase_a", psnr(ba, a), psnr(ba, b)]]
    _write_rows(os.path.join(run, "exchange.csv"), ["image", "psnr_vs_a", "psnr_vs_b"], rows)
    for r in rows:
        print(f"{r[0]}: PSNR vs a {r[1]:.2f} dB, vs b {r[2]:.2f} dB")
    return run


def _pairs_from_dirs(pred_dir, ref_dir):
    preds = {os.path.basename(p): p for p in _image_paths(pred_dir)}
    refs = {os.path.basename(p): p for p in _image_paths(ref_dir)}
    names = sorted(set(preds) & set(refs))
    if not names:
        raise ImageIOError(f"no file names shared by {pred_dir} and {ref_dir}")
    return [(n, preds[n], refs[n]) for n in names]


def cmd_eval(args, cfg):
    if args.pred and args.ref:
        triples = _pairs_from_dirs(args.pred, args.ref)
        run = _run_dir(args, cfg, os.path.abspath(args.pred), os.path.abspath(args.ref))

        def one(t):
            name, p, r = t
            a, b = load_image(p), load_image(r)
            return [name, psnr(a, b), ssim(a, b)]
        rows = _map(one, triples, args.device_threads)
        header = ["name", "psnr", "ssim"]
        summary = {"count": len(rows), "psnr": float(np.mean([r[1] for r in rows])),
                   "ssim": float(np.mean([r[2] for r in rows]))}
    elif args.data:
        ckpt = _require_checkpoint(args)
        base = load_checkpoint(args.baseline) if args.baseline else None
        run = _run_dir(args, cfg, os.path.abspath(args.data), ckpt.checksum(), base and base.checksum())
        pairs = load_paired(args.data)
        if len(pairs) == 0:
            raise ImageIOError(f"{args.data}: no paired hazy/clean images")
        nets = [net_from_checkpoint(ckpt)] + ([net_from_checkpoint(base)] if base else [])
        outs = [run_net(n, pairs.hazy) for n in nets]
        rows = []
        for i, name in enumerate(pairs.names):
            row = [name]
            for o in outs:
                row += [psnr(o[i], pairs.clean[i]), ssim(o[i], pairs.clean[i])]
            rows.append(row)
        header = ["name", "psnr", "ssim"] + (["baseline_psnr", "baseline_ssim"] if base else [])
        summary = {"count": len(rows), "psnr": float(np.mean([r[1] for r in rows])),
                   "ssim": float(np.mean([r[2] for r in rows]))}
        if base:
            summary["baseline_psnr"] = float(np.mean([r[3] for r in rows]))
            summary["baseline_ssim"] = float(np.mean([r[4] for r in rows]))
            summary["psnr_gain"] = summary["psnr"] - summary["baseline_psnr"]
            summary["ssim_change"] = summary["ssim"] - summary["baseline_ssim"]
    else:
        raise UsageError("eval needs either --pred and --ref, or --data with --checkpoint")
    _write_rows(os.path.join(run, "eval.csv"), header, rows)
    _write_json(os.path.join(run, "summary.json"), summary)
    for k, v in summary.items():
        print(f"{k}: {v:.4f}" if isinstance(v, float) else f"{k}: {v}")
    return run


def cmd_clahe(args, cfg):
    if not args.input:
        raise UsageError("clahe needs --input")
    paths = _image_paths(args.input)
    run = _run_dir(args, cfg, [os.path.abspath(p) for p in paths])
    _map(lambda p: save_image(os.path.join(run, _stem(p) + ".png"), clahe(load_image(p), cfg.clahe)),
         paths, args.device_threads)
    print(f"enhanced {len(paths)} image(s)")
    return run


def cmd_darkchannel(args, cfg):
    if not args.input:
        raise UsageError("darkchannel needs --input")
    patch = args.patch or cfg.adapt.dcp_patch
    paths = _image_paths(args.input)
    run = _run_dir(args, cfg, patch, [os.path.abspath(p) for p in paths])

    def one(p):
        plane = dark_channel(load_image(p), patch)
        save_plane(os.path.join(run, _stem(p) + ".png"), plane)
        return [os.path.basename(p), float(plane.mean())]
    rows = _map(one, paths, args.device_threads)
    _write_rows(os.path.join(run, "darkchannel.csv"), ["name", "mean_dark_channel"], rows)
    print(f"dark channels of {len(paths)} image(s), patch {patch}")
    return run


def cmd_selftest(args, cfg):
    ok, lines = run_all(seeds=tuple(range(args.seeds)))
    for line in lines:
        print(line)
    print("selftest passed" if ok else "selftest FAILED")
    return None if ok else False


COMMANDS = {
    "synth": cmd_synth,
    "train-source": cmd_train_source,
    "adapt": cmd_adapt,
    "dehaze": cmd_dehaze,
    "exchange": cmd_exchange,
    "eval": cmd_eval,
    "clahe": cmd_clahe,
    "darkchannel": cmd_darkchannel,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="seed for every random stream (overrides the config)")
    common.add_argument("--out", default="runs", help="parent directory for run outputs (default: runs)")
    common.add_argument("--checkpoint", help="checkpoint file to load")
    common.add_argument("--device-threads", type=int, default=1, help="worker threads for per-image work")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="sfdehaze", description="Source-free dehazing adaptation toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="generate source/target datasets")
    p.add_argument("--domain", choices=("source", "target", "both"), default="both")
    p.add_argument("--n", type=int, help="samples per domain (default from config)")
    p.add_argument("--heldout", action="store_true", help="also write held-out evaluation sets")

    p = sub.add_parser("train-source", parents=[common], help="supervised source training")
    p.add_argument("--data", help="paired dataset root (hazy/, clean/); generated if omitted")

    p = sub.add_parser("adapt", parents=[common], help="source-free adaptation of a source checkpoint")
    p.add_argument("--target", help="directory of unlabeled hazy images (or a dataset root with hazy/)")
    p.add_argument("--eval-data", help="paired dataset root used only for per-epoch reporting")

    p = sub.add_parser("dehaze", parents=[common], help="run a checkpoint on an image or directory")
    p.add_argument("--input")

    p = sub.add_parser("exchange", parents=[common], help="amplitude/phase exchange of two images")
    p.add_argument("--a")
    p.add_argument("--b")

    p = sub.add_parser("eval", parents=[common], help="PSNR/SSIM over paired directories")
    p.add_argument("--pred", help="directory of predictions")
    p.add_argument("--ref", help="directory of references (matched by file name)")
    p.add_argument("--data", help="paired dataset root to dehaze with --checkpoint")
    p.add_argument("--baseline", help="second checkpoint to compare against")

    p = sub.add_parser("clahe", parents=[common], help="CLAHE-enhance an image or directory")
    p.add_argument("--input")

    p = sub.add_parser("darkchannel", parents=[common], help="dark channel of an image or directory")
    p.add_argument("--input")
    p.add_argument("--patch", type=int)

    p = sub.add_parser("selftest", parents=[common], help="gradient and spectral invariant suites")
    p.add_argument("--seeds", type=int, default=len(SEEDS), help="number of gradient-check seeds")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.device_threads < 1:
            raise UsageError("--device-threads must be >= 1")
        cfg = config_mod.load(args.config) if args.config else config_mod.RunConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        result = COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"sfdehaze {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ImageIOError, CheckpointError, TrainingError, NumericalConsistencyError,
            AutodiffError, ShapeError, OSError, ValueError) as exc:
        print(f"sfdehaze {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if result is False:
        return EXIT_FAILURE
    if result:
        print(f"run directory: {result}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
