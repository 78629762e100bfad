"""Command line for the exporter.

    export --checkpoint model.pt --input-shape 4x4x1 --out net.json \
           [--dataset random --n 100 --out-csv data.csv --seed 0]

Input shapes are HxWxC for image models or a bare integer for flat inputs.
"""

from __future__ import annotations

import argparse
import sys

from relaxbench_exporter.lowering import ExportError, ExportManifest, export_dataset, export_network


def parse_input_shape(text: str) -> tuple[int, ...]:
    parts = [int(p) for p in text.lower().split("x")]
    if len(parts) == 1:
        return (parts[0],)
    if len(parts) == 3:
        h, w, c = parts
        return (c, h, w)  # torch layout
    raise ValueError(f"input shape must be N or HxWxC, got {text!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export",
        description="Lower a sequential dense/conv ReLU checkpoint to the verifier's formats.",
    )
    parser.add_argument("--checkpoint", required=True, help="torch-saved sequential model")
    parser.add_argument("--input-shape", required=True, help="HxWxC for images, N for flat")
    parser.add_argument("--out", required=True, help="network JSON output path")
    parser.add_argument(
        "--dataset",
        default=None,
        help="'random' for seeded synthetic inputs labeled by the model, or a "
        "tensor file (.npz/.pt with data and labels)",
    )
    parser.add_argument("--n", type=int, default=100, help="subset size")
    parser.add_argument("--out-csv", default=None, help="dataset CSV output path")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    try:
        shape = parse_input_shape(args.input_shape)
        manifest = ExportManifest(
            checkpoint=args.checkpoint,
            input_shape=shape,
            out_network=args.out,
            dataset=args.dataset,
            subset_size=args.n,
            out_csv=args.out_csv,
            seed=args.seed,
        )
        layers = export_network(manifest)
        widths = [layers[0][0].shape[1]] + [W.shape[0] for W, _ in layers]
        print(f"wrote {args.out}: " + "-".join(str(w) for w in widths))
        if args.dataset is not None:
            if args.out_csv is None:
                parser.error("--dataset requires --out-csv")
            n = export_dataset(manifest)
            print(f"wrote {args.out_csv}: {n} samples")
    except (ExportError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
