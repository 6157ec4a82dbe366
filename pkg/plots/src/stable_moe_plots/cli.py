"""render: turn stable-moe trace/summary files into figures.

    render --kind queues|throughput|v-sweep --in PATH [--in PATH ...]
           --out PATH [--t-range a:b]
"""

from __future__ import annotations

import argparse
import sys

from .figures import FIGURE_KINDS, FigureSpec, RenderError, render


def _parse_range(text: str | None) -> tuple[int | None, int | None]:
    if text is None:
        return (None, None)
    try:
        lo_text, hi_text = text.split(":", 1)
        lo = int(lo_text) if lo_text else None
        hi = int(hi_text) if hi_text else None
        return (lo, hi)
    except ValueError as exc:
        raise RenderError(f"bad --t-range {text!r}, expected a:b") from exc


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="render", description=__doc__)
    parser.add_argument("--kind", required=True, choices=FIGURE_KINDS)
    parser.add_argument("--in", dest="inputs", action="append", required=True,
                        metavar="PATH", help="input file (repeatable)")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--t-range", default=None, help="half-open slot range a:b")
    args = parser.parse_args(argv)
    try:
        spec = FigureSpec(
            inputs=tuple(args.inputs),
            kind=args.kind,
            output=args.out,
            slot_range=_parse_range(args.t_range),
        )
        result = render(spec)
    except (RenderError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"figure={result.output}")
    for name, value in sorted(result.final_cumulative_throughput.items()):
        print(f"final[{name}]={value:.6f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
