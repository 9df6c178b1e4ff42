#!/usr/bin/env python3
"""Materialize the bundled fixture programs and their build products.

Writes assembly sources, assembled images, instrumented variants and
complement images into a build directory, ready for the CLI commands.
"""

import argparse
import json
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from dualsec import fixtures
from dualsec.instrument import write_report_jsonl


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="build/fixtures")
    args = parser.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    entries = {
        "toy_aes": fixtures.toy_aes(),
        "toy_aes_sweep": fixtures.toy_aes(balanced=False),
        "toy_des": fixtures.toy_des(),
        "toy_des_isr": fixtures.toy_des(with_isr=True),
        "filler_adpcm": fixtures.filler(n_iters=150, base=0x8000),
        "filler_crc": fixtures.filler(n_iters=90, base=0x8000, kind="crc"),
        "interrupt_app": fixtures.interrupt_app(),
    }
    metas = {}
    for name, fx in entries.items():
        (out / f"{name}.s").write_text(fx.source)
        bundle, report = fixtures.build_bundle(name, fx.source)
        (out / f"{name}.img").write_text(bundle.plain.to_text())
        (out / f"{name}_instr.img").write_text(bundle.instrumented.to_text())
        write_report_jsonl(report, out / f"{name}_blocks.jsonl")
        if bundle.complement_plain is not None:
            (out / f"{name}_bar.img").write_text(bundle.complement_plain.to_text())
            (out / f"{name}_instr_bar.img").write_text(
                bundle.complement_instrumented.to_text()
            )
        metas[name] = fx.meta
        print(f"built {name}: {len(report)} blocks")
    (out / "meta.json").write_text(json.dumps(metas, indent=2) + "\n")
    print(f"fixtures in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
