"""ncdl-export: package detector feature dumps as an RFD1 dataset directory."""

import argparse
import sys

from .export import ExportError, ExportJob, export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ncdl-export", description=__doc__)
    parser.add_argument("--features-v1", required=True, help=".npy float32 array, view 1")
    parser.add_argument("--features-v2", required=True, help=".npy float32 array, view 2")
    parser.add_argument("--meta", required=True, help="proposal metadata CSV")
    parser.add_argument("--ann", required=True, help="detection-annotation JSON")
    parser.add_argument("--out", required=True, help="output dataset directory")
    parser.add_argument(
        "--xywh", action="store_true", help="metadata boxes are x,y,w,h instead of corners"
    )
    args = parser.parse_args(argv)
    job = ExportJob(
        features_view1=args.features_v1,
        features_view2=args.features_v2,
        metadata=args.meta,
        annotations=args.ann,
        out_dir=args.out,
        xywh=args.xywh,
    )
    try:
        out = export(job)
    except (ExportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote RFD1 dataset to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
