"""Exporter command line.

Exit codes: 0 success, 1 usage/input error, 2 model or export failure.
"""

from __future__ import annotations

import argparse
import glob
import sys

from .backbones import ModelLoadError
from .export import ExportError, ExportJob, export


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _parse_resize(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected WIDTHxHEIGHT, got {text!r}") from None


def build_parser() -> _Parser:
    p = _Parser(prog="exporter",
                description="export dense image descriptors to TDSC files")
    p.add_argument("--images", required=True,
                   help="glob of input images (png/jpg)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--model", default="dino_vits8",
                   help="backbone: dino_vits8 (needs downloadable weights) "
                        "or randconv (offline)")
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--layer", type=int, default=-1)
    p.add_argument("--facet", choices=["token", "key"], default="token")
    p.add_argument("--resize", type=_parse_resize, default=(224, 298),
                   metavar="WxH")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    images = sorted(glob.glob(args.images))
    if not images:
        print(f"no images match {args.images!r}", file=sys.stderr)
        return 1
    job = ExportJob(images=tuple(images), out_dir=args.out, model=args.model,
                    stride=args.stride, layer=args.layer, facet=args.facet,
                    resize=args.resize)
    try:
        written = export(job)
    except (ModelLoadError, ExportError) as e:
        print(f"export error: {e}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
