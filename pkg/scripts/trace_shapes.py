#!/usr/bin/env python3
"""Print the feature-map shape after every stage of a preset network."""

import sys
from pathlib import Path
import argparse

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from rich.console import Console
from rich.table import Table

from dwenet.model import PRESETS, model_shape_trace, preset


def main() -> None:
    """Trace one forward pass of a preset on a dummy sequence."""
    parser = argparse.ArgumentParser(description="Trace dweNet feature-map shapes")
    parser.add_argument(
        "--preset",
        type=str,
        default="dwenet",
        choices=sorted(PRESETS),
        help="Architecture preset",
    )
    parser.add_argument(
        "--max-len",
        type=int,
        default=64,
        help="Padded sequence length s",
    )
    parser.add_argument(
        "--embed-dim",
        type=int,
        default=50,
        help="Word-vector dimension d",
    )
    args = parser.parse_args()

    config = preset(args.preset, max_len=args.max_len, embed_dim=args.embed_dim)
    table = Table(title=f"{args.preset}: s={args.max_len}, d={args.embed_dim}")
    table.add_column("Stage")
    table.add_column("Shape", justify="right")
    for stage, shape in model_shape_trace(config):
        table.add_row(stage, " x ".join(str(n) for n in shape))
    Console().print(table)


if __name__ == "__main__":
    main()
