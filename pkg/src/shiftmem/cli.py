"""Command-line entry point: ``shiftmem <command> [options]``.

Every command writes fixed file names under ``--out`` and exits nonzero
with a one-line message on failure.
"""
import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ABLATIONS, dump_config, load_config
from .corpus import generate_synthetic, ingest_folder
from .errors import ShiftMemError
from .image import entropy_bits, load_image, to_patch_grid
from .probe import run_probe
from .train import CHECKPOINT_NAME, METRICS_NAME, init_checkpoint, model_from_checkpoint, pretrain

log = logging.getLogger("shiftmem")

REPORT_NAME = "report.json"
EMBEDDINGS_NAME = "embeddings.jsonl"
CONFIG_NAME = "config.yaml"
SWEEP_NAME = "sweep.json"
ENTROPY_MAP_NAME = "entropy_map.json"


def _config(args):
    """Config file plus command-line overrides; unknown keys fail before any work."""
    cfg = load_config(args.config)
    if getattr(args, "ablation", None):
        cfg = cfg.with_ablation(args.ablation)
    train = {}
    if getattr(args, "seed", None) is not None:
        train["seed"] = args.seed
    if getattr(args, "mask_ratio", None) is not None:
        train["mask_ratio"] = args.mask_ratio
    sections = {"train": train} if train else {}
    if getattr(args, "mem_target", None):
        sections["ablation"] = {"mem_target": args.mem_target}
    return cfg.replace(**sections) if sections else cfg


def _corpus(args, cfg):
    if getattr(args, "corpus", None):
        return ingest_folder(args.corpus, image_size=cfg.encoder.image_size)
    return generate_synthetic(cfg.generator.n, cfg.generator, seed=cfg.train.seed)


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args):
    cfg = _config(args)
    params = cfg.generator
    n = args.n if args.n is not None else params.n
    corpus = generate_synthetic(n, params, seed=cfg.train.seed, check=args.check)
    path = corpus.save(_out(args))
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    print(f"wrote {n} images and {path} (sha256 {digest[:16]})")


def cmd_init(args):
    cfg = _config(args)
    out = _out(args)
    save_checkpoint(init_checkpoint(cfg), out / CHECKPOINT_NAME)
    dump_config(cfg, out / CONFIG_NAME)
    print(f"wrote untrained {out / CHECKPOINT_NAME}")


def cmd_pretrain(args):
    cfg = _config(args)
    out = _out(args)
    corpus = _corpus(args, cfg)
    dump_config(cfg, out / CONFIG_NAME)
    ckpt = pretrain(corpus, cfg, out_dir=out, resume=args.resume)
    print(f"trained {ckpt.meta['step']} steps; wrote {out / CHECKPOINT_NAME} and {out / METRICS_NAME}")


def _probe_and_write(ckpt, cfg, corpus, out, export):
    model = model_from_checkpoint(ckpt)
    emb_path = out / EMBEDDINGS_NAME if export else None
    report, _, _ = run_probe(model, corpus, cfg.probe, export_path=emb_path)
    doc = {"checkpoint_step": ckpt.meta["step"], **report.to_dict()}
    (out / REPORT_NAME).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return report


def cmd_probe(args):
    ckpt = load_checkpoint(args.checkpoint)
    cfg = load_config(args.config) if args.config else None
    if cfg is None:
        from .config import RunConfig

        cfg = RunConfig.from_dict(ckpt.meta["config"])
    out = _out(args)
    report = _probe_and_write(ckpt, cfg, _corpus(args, cfg), out, args.export_embeddings)
    print(f"PCC {report.pcc:.4f}  SRCC {report.srcc:.4f}  per-class PCC variance {report.pcc_variance:.4f}")


def cmd_sweep_mask(args):
    base = _config(args)
    out = _out(args)
    corpus = _corpus(args, base)
    rows = []
    for ratio in args.ratios:
        cfg = base.replace(train={"mask_ratio": ratio})
        run_dir = out / f"ratio_{ratio:.2f}"
        ckpt = pretrain(corpus, cfg, out_dir=run_dir)
        report = _probe_and_write(ckpt, cfg, corpus, run_dir, False)
        rows.append({"mask_ratio": ratio, "pcc": report.pcc, "srcc": report.srcc})
        print(f"mask ratio {ratio:.2f}: PCC {report.pcc:.4f}  SRCC {report.srcc:.4f}")
    (out / SWEEP_NAME).write_text(json.dumps({"rows": rows}, indent=1) + "\n")


def cmd_entropy_map(args):
    img = load_image(args.image)
    grid = to_patch_grid(img, args.patch_size)
    bits = entropy_bits(grid.patches, args.bins).reshape(grid.grid_shape)
    doc = {
        "image": str(args.image),
        "patch_size": args.patch_size,
        "bins": args.bins,
        "grid_shape": list(grid.grid_shape),
        "bits": bits.tolist(),
        "normalized": (bits / np.log2(args.bins)).tolist(),
    }
    out = _out(args)
    (out / ENTROPY_MAP_NAME).write_text(json.dumps(doc, indent=1) + "\n")
    print(f"mean patch entropy {bits.mean():.4f} bits over a {grid.grid_shape[0]}x{grid.grid_shape[1]} grid")


def _ratios(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratio list {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty ratio list")
    return vals


def build_parser():
    p = argparse.ArgumentParser(prog="shiftmem", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="YAML run config; unknown keys are rejected")
        sp.add_argument("--out", required=True, help="output directory")
        if seed:
            sp.add_argument("--seed", type=int, help="override train.seed")

    def training(sp):
        sp.add_argument("--corpus", help="corpus directory with manifest.json (default: synthetic)")
        sp.add_argument("--mask_ratio", type=float)
        sp.add_argument("--mem_target", choices=["entropy", "pixels"])
        sp.add_argument("--ablation", choices=sorted(ABLATIONS), help="ablation row a-f")

    sp = sub.add_parser("gen-data", help="write a synthetic corpus and manifest")
    common(sp)
    sp.add_argument("--n", type=int, help="number of images (default generator.n)")
    sp.add_argument("--check", action="store_true", help="run the per-family entropy self-check")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("init", help="write an untrained checkpoint")
    common(sp)
    training(sp)
    sp.set_defaults(func=cmd_init)

    sp = sub.add_parser("pretrain", help="self-supervised pretraining")
    common(sp)
    training(sp)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("probe", help="linear probe on frozen embeddings")
    common(sp, seed=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--corpus", help="corpus directory (default: synthetic from the checkpoint config)")
    sp.add_argument("--export-embeddings", action="store_true", help=f"also write {EMBEDDINGS_NAME}")
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("sweep-mask", help="pretrain and probe for several mask ratios")
    common(sp)
    training(sp)
    sp.add_argument("--ratios", type=_ratios, default=[0.2, 0.4, 0.6, 0.8], help="comma-separated ratios")
    sp.set_defaults(func=cmd_sweep_mask)

    sp = sub.add_parser("entropy-map", help="per-patch entropy grid of one image")
    sp.add_argument("--out", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--patch-size", type=int, default=16)
    sp.add_argument("--bins", type=int, default=256)
    sp.set_defaults(func=cmd_entropy_map)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except (ShiftMemError, OSError) as e:
        print(f"shiftmem {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
