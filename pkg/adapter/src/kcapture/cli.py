"""Minimal command-line wrapper around capture() for script use.

The host model, batch iterator, capture spec, and loss function come from
a user factory, e.g.:

    kcapture --factory my_project.traces:build --out run1.kcd

where ``build()`` returns (model, batches, spec, loss_fn).  Everything
else is plumbing flags.
"""

from __future__ import annotations

import argparse
import importlib
import sys
from typing import Optional, Sequence

from .capture import capture


def _load_factory(spec: str):
    if ":" not in spec:
        raise ValueError("--factory must look like package.module:function")
    mod_name, fn_name = spec.split(":", 1)
    module = importlib.import_module(mod_name)
    try:
        return getattr(module, fn_name)
    except AttributeError:
        raise ValueError(f"module {mod_name!r} has no attribute {fn_name!r}") from None


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="kcapture",
        description="Capture hidden activations and per-example losses into a KCD1 dump.",
    )
    parser.add_argument("--factory", required=True,
                        help="module:function returning (model, batches, spec, loss_fn)")
    parser.add_argument("--out", required=True, help="output dump path")
    parser.add_argument("--model-id", default="captured")
    parser.add_argument("--family", default="other",
                        choices=["encoder_only", "decoder_only", "encoder_decoder", "other"])
    parser.add_argument("--notes", default="")
    args = parser.parse_args(argv)
    try:
        factory = _load_factory(args.factory)
        model, batches, spec, loss_fn = factory()
        capture(
            model, batches, spec, loss_fn, args.out,
            model_id=args.model_id, family=args.family, notes=args.notes,
            manifest={"source_model": args.model_id, "generator": "kcapture"},
        )
    except (ValueError, ImportError) as e:
        print(f"kcapture: error: {e}", file=sys.stderr)
        return 1
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
