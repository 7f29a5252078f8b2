"""Command line front end: vidextract features | attributes."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .attributes import extract_attributes
from .backbone import get_backbone
from .exceptions import ExtractError
from .jobs import ExtractionJob, run_jobs


def _add_features(sub) -> None:
    p = sub.add_parser("features", help="extract temporal and motion features")
    p.add_argument("videos", nargs="+", help="video files or .npy frame stacks")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--window", type=int, default=16)
    p.add_argument("--backbone", default="colorstat")
    p.add_argument("--processes", type=int, default=1)


def _add_attributes(sub) -> None:
    p = sub.add_parser("attributes", help="subject/verb attributes from captions")
    p.add_argument(
        "captions",
        help="JSON file mapping video id to a list of caption strings",
    )
    p.add_argument("--out", help="write JSON here instead of stdout")


def cmd_features(args) -> int:
    get_backbone(args.backbone)  # fail before touching any video
    out_dir = Path(args.out_dir)
    jobs = []
    for video in args.videos:
        stem = Path(video).stem
        jobs.append(
            ExtractionJob(
                video_path=video,
                temporal_out=str(out_dir / f"{stem}.temporal.feat"),
                motion_out=str(out_dir / f"{stem}.motion.feat"),
                stride=args.stride,
                window=args.window,
                backbone=args.backbone,
            )
        )
    for summary in run_jobs(jobs, processes=args.processes):
        logging.info(
            "%s: %d temporal, %d motion vectors (dim %d)",
            summary["video"],
            summary["temporal_count"],
            summary["motion_count"],
            summary["dim"],
        )
    return 0


def cmd_attributes(args) -> int:
    try:
        with open(args.captions, encoding="utf-8") as fh:
            table = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ExtractError(f"cannot read caption table: {exc}") from exc
    if not isinstance(table, dict):
        raise ExtractError("caption table must be a JSON object")
    result = {vid: extract_attributes(caps) for vid, caps in sorted(table.items())}
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vidextract")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_features(sub)
    _add_attributes(sub)
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "features":
            return cmd_features(args)
        return cmd_attributes(args)
    except ExtractError as exc:
        logging.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
