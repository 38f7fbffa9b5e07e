"""Command-line entry point: ``olr <subcommand> --out DIR [--config FILE] [--preset NAME]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import pipeline as P
from .config import ConfigError, load_config

log = logging.getLogger("olr")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", required=True, type=Path, help="root directory for all outputs")
    p.add_argument("--config", type=Path, help="JSON file overriding preset values")
    p.add_argument("--preset", default="desk", help="base configuration (desk or tiny)")
    p.add_argument("--data", type=Path,
                   help="image directory (PPM/PNG + labels.csv) used instead of the synthetic set")
    p.add_argument("--force", action="store_true", help="retrain even if an artifact exists")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="olr", description="Train and inspect label-indexed image embeddings.",
        epilog="OLR_THREADS caps BLAS threads (default 1, fully deterministic).")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    def add(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, description=help)
        _common(p)
        return p

    add("gen-data", "write the synthetic dataset (PPM images, labels.csv, manifest.json)")
    add("train-classifier", "train the multi-label classifier on occluded images")
    add("predict", "write classifier probabilities for the test split as CSV")
    add("train-siamese", "train the embedding network against the frozen classifier")
    add("embed", "embed every image; checkpoint plus a filename,offset CSV index")
    add("train-decoder", "train the embedding-to-image decoder")

    analyze = add("analyze", "embedding analytics: corr, pca or probe")
    analyze.add_argument("kind", choices=["corr", "pca", "probe"])
    analyze.add_argument("--label", action="append",
                         help="label name or index for pca (repeatable; default all)")

    edit = add("edit", "write original | reconstruction | edited reconstruction triptychs")
    edit.add_argument("--edit", action="append", required=True, dest="edits",
                      help="'+<label>:<s>' adds with scale s, '-<label>' removes (repeatable)")
    edit.add_argument("--image", action="append", type=int, dest="images",
                      help="test-split image index (repeatable; default the first few)")

    rec = add("reconstruct", "decode test images and write original/reconstruction pairs")
    rec.add_argument("--count", type=int, help="number of image pairs to write")

    add("pipeline", "run every stage end to end and report all metrics")
    return parser


def _label(text: str):
    return int(text) if text.isdigit() else text


def dispatch(args: argparse.Namespace, ws: P.Workspace) -> None:
    cmd = args.command
    if cmd == "gen-data":
        P.gen_data(ws)
    elif cmd == "train-classifier":
        P.run_train_classifier(ws)
    elif cmd == "predict":
        P.run_predict(ws)
    elif cmd == "train-siamese":
        P.run_train_siamese(ws)
    elif cmd == "embed":
        P.run_embed(ws)
    elif cmd == "train-decoder":
        P.run_train_decoder(ws)
    elif cmd == "analyze":
        if args.kind == "corr":
            P.run_analyze_corr(ws)
        elif args.kind == "pca":
            labels = None if not args.label else [_label(l) for l in args.label]
            P.run_analyze_pca(ws, labels)
        else:
            P.run_analyze_probe(ws)
    elif cmd == "edit":
        P.run_edit(ws, args.edits, args.images)
    elif cmd == "reconstruct":
        P.run_reconstruct(ws, args.count)
    elif cmd == "pipeline":
        P.run_pipeline(ws)


def threads_from_env() -> int:
    raw = os.environ.get("OLR_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"OLR_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"OLR_THREADS must be a positive integer, got {raw!r}")
    return n


def _join_edit_values(argv: list[str]) -> list[str]:
    """Turn ``--edit -label`` into ``--edit=-label`` so removals are not read as flags."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--edit" and i + 1 < len(argv):
            out.append(f"--edit={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_join_edit_values(argv))
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    name = args.command if args.command != "analyze" else f"analyze-{args.kind}"
    try:
        cfg = load_config(args.config, args.preset)
        threads = threads_from_env()
    except ConfigError as exc:
        print(f"olr: error: {exc}", file=sys.stderr)
        args.out.mkdir(parents=True, exist_ok=True)
        P.write_manifest(args.out, {"subcommand": name, "status": "error", "error": str(exc)})
        return 2
    ws = P.Workspace(args.out, cfg, args.data, args.force)
    status, error, code = "ok", None, 0
    try:
        with threadpool_limits(limits=threads):
            dispatch(args, ws)
    except P.MissingArtifact as exc:
        status, error, code = "error", str(exc), 3
    except (ValueError, KeyError, IndexError, OSError) as exc:
        status, error, code = "error", f"{type(exc).__name__}: {exc}", 1
    except BaseException as exc:
        # still leave a manifest behind for crashes and interrupts, then re-raise
        P.write_manifest(args.out, ws.manifest(name, "error", f"{type(exc).__name__}: {exc}"))
        raise
    path = P.write_manifest(args.out, ws.manifest(name, status, error))
    if error:
        print(f"olr: error: {error}", file=sys.stderr)
    else:
        log.info("manifest written to %s", path)
    return code


if __name__ == "__main__":
    sys.exit(main())
