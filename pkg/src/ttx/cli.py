"""Command-line entry point for every pipeline stage.

Exit codes: 0 on success, 1 on a domain error (message on stderr), 2 on
usage errors. Relative paths resolve against TTX_DATA_DIR when it is set.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .captioners import ConstantCaptioner, TemplateCaptioner, load_external_captioner
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import (
    caption_records,
    ingest_images,
    load_manifest,
    save_manifest,
    split_manifest,
    validate_manifest,
)
from .diffusion import sample
from .errors import TtxError
from .imaging import save_png
from .metrics import EvalConfig, evaluate_pair, load_report, render_report, save_report
from .synth import default_corpus_spec, synthesize_corpus
from .taxonomy import load_taxonomy
from .trainer import TrainConfig, finetune, init_checkpoint


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    return Path(os.environ.get("TTX_DATA_DIR", ".")) / p


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttx", description="textile pattern diffusion pipeline")
    parser.add_argument("--version", action="version", version=f"ttx {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a manifest from keyword-named image directories")
    p.add_argument("--dir", required=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--out", required=True)

    p = sub.add_parser("caption", help="caption every record in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--captioner", default="stub", help="stub | external | constant:<text>")
    p.add_argument("--adapter-ref", default=None, help="module:attribute for --captioner external")
    p.add_argument("--out", default=None, help="output manifest dir (default: in place)")

    p = sub.add_parser("synth-corpus", help="generate the seeded procedural corpus")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="fine-tune (or train from scratch) on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--timesteps", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--init", default=None, help="initial checkpoint to fine-tune from")
    p.add_argument("--out", required=True)

    p = sub.add_parser("init", help="write an untrained checkpoint (the comparison baseline)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--timesteps", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)

    p = sub.add_parser("generate", help="sample images from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--guidance", type=float, default=3.0)
    p.add_argument("--out", required=True, help="output directory for PNG files")

    p = sub.add_parser("evaluate", help="compare two checkpoints over keyword prompts")
    p.add_argument("--candidate", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--keywords", default="all", help="'all' or comma-separated canonical keywords")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--num-generated", type=int, default=16)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--guidance", type=float, default=3.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="render a saved evaluation report")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", default="text", choices=("text", "markdown", "csv"))
    p.add_argument("--out", default=None, help="output file (default: stdout)")

    p = sub.add_parser("serve", help="run the HTTP generation service")
    p.add_argument("--register", action="append", default=[], metavar="NAME=PATH", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--max-concurrent", type=int, default=2)

    return parser


def _cmd_ingest(args) -> int:
    result = ingest_images(_resolve(args.dir), load_taxonomy(), (args.size, args.size))
    save_manifest(result.manifest, _resolve(args.out))
    print(
        f"ingested {len(result.manifest)} records "
        f"({len(result.skipped_files)} files skipped, "
        f"{len(result.unknown_directories)} unknown directories)"
    )
    return 0


def _make_captioner(args):
    name = args.captioner
    if name == "stub":
        return TemplateCaptioner()
    if name == "external":
        if not args.adapter_ref:
            raise TtxError("--captioner external needs --adapter-ref module:attribute")
        return load_external_captioner(args.adapter_ref)
    if name.startswith("constant:"):
        return ConstantCaptioner(name.split(":", 1)[1])
    raise TtxError(f"unknown captioner {name!r}")


def _cmd_caption(args) -> int:
    manifest = load_manifest(_resolve(args.manifest))
    captioned = caption_records(manifest, _make_captioner(args))
    out = _resolve(args.out) if args.out else _resolve(args.manifest)
    save_manifest(captioned, out)
    print(f"captioned {len(captioned)} records")
    return 0


def _cmd_synth(args) -> int:
    spec = default_corpus_spec(
        num_classes=args.classes,
        per_class_count=args.per_class,
        image_size=(args.size, args.size),
        seed=args.seed,
    )
    manifest = synthesize_corpus(spec)
    save_manifest(manifest, _resolve(args.out))
    print(f"synthesized {len(manifest)} records over {args.classes} classes")
    return 0


def _cmd_train(args) -> int:
    manifest = load_manifest(_resolve(args.manifest))
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        timesteps=args.timesteps,
        seed=args.seed,
        image_size=manifest.image_size,
    )
    train_m, val_m = split_manifest(manifest, args.val_fraction, seed=args.seed)
    initial = load_checkpoint(_resolve(args.init)) if args.init else None
    checkpoint = finetune(initial, train_m, val_m, config)
    save_checkpoint(checkpoint, _resolve(args.out))
    history = checkpoint.metrics_history.get("val_loss", [])
    tail = f", final val loss {history[-1]:.4f}" if history else ""
    print(f"trained {args.epochs} epochs on {len(train_m)} records{tail}")
    return 0


def _cmd_init(args) -> int:
    manifest = load_manifest(_resolve(args.manifest))
    config = TrainConfig(timesteps=args.timesteps, seed=args.seed, image_size=manifest.image_size)
    checkpoint = init_checkpoint(manifest, config)
    save_checkpoint(checkpoint, _resolve(args.out))
    print(f"wrote untrained checkpoint (digest {checkpoint.digest()[:12]})")
    return 0


def _cmd_generate(args) -> int:
    checkpoint = load_checkpoint(_resolve(args.ckpt))
    model, encoder, schedule, codec = checkpoint.build_components()
    images = sample(
        model,
        schedule,
        codec,
        encoder,
        prompt=args.prompt,
        seed=args.seed,
        count=args.count,
        steps=args.steps,
        guidance=args.guidance,
    )
    out_dir = _resolve(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, image in enumerate(images):
        save_png(image, out_dir / f"{args.seed:08d}_{i:02d}.png")
    print(f"wrote {len(images)} images to {out_dir}")
    return 0


def _cmd_evaluate(args) -> int:
    manifest = load_manifest(_resolve(args.manifest))
    candidate = load_checkpoint(_resolve(args.candidate))
    baseline = load_checkpoint(_resolve(args.baseline))
    if args.keywords == "all":
        keywords = manifest.keywords_present()
    else:
        keywords = [k.strip() for k in args.keywords.split(",") if k.strip()]
    report = evaluate_pair(
        candidate,
        baseline,
        keywords,
        manifest,
        EvalConfig(
            seed=args.seed,
            num_generated=args.num_generated,
            steps=args.steps,
            guidance=args.guidance,
        ),
    )
    save_report(report, _resolve(args.out))
    print(render_report(report, "text"), end="")
    return 0


def _cmd_report(args) -> int:
    report = load_report(_resolve(args.input))
    rendered = render_report(report, args.format)
    if args.out:
        _resolve(args.out).write_text(rendered, encoding="utf-8")
    else:
        print(rendered, end="")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import CheckpointRegistry, create_app

    paths = {}
    for entry in args.register:
        name, _, path = entry.partition("=")
        if not name or not path:
            raise TtxError(f"--register expects NAME=PATH, got {entry!r}")
        paths[name] = _resolve(path)
    app = create_app(CheckpointRegistry.from_paths(paths), max_concurrent=args.max_concurrent)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "caption": _cmd_caption,
    "synth-corpus": _cmd_synth,
    "train": _cmd_train,
    "init": _cmd_init,
    "generate": _cmd_generate,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
    "serve": _cmd_serve,
}


def run_cli(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except TtxError as exc:
        print(f"error [{exc.code}]: {exc.message}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
