#!/usr/bin/env python3
"""Net-runtime comparison of application pairs across the four modes.

Prints one table per scheduled pair, mirroring the runtime-comparison
experiment: balanced ciphers serialize the pair (switch cost plus the
balanced window), plain pairs obey the max rule, and integrity checking
adds one cycle per block entry.
"""

import argparse
import json
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from dualsec import fixtures, sim


def bundle_of(name):
    builders = {
        "aes": lambda: fixtures.toy_aes(),
        "des": lambda: fixtures.toy_des(),
        "adpcm": lambda: fixtures.filler(n_iters=150, base=0x8000),
        "crc": lambda: fixtures.filler(n_iters=90, base=0x8000, kind="crc"),
        "adpcm1": lambda: fixtures.filler(n_iters=150, base=0x0),
        "crc1": lambda: fixtures.filler(n_iters=90, base=0x0, kind="crc"),
    }
    fx = builders[name]()
    bundle, _ = fixtures.build_bundle(name, fx.source)
    return bundle


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="build/overheads.json")
    args = parser.parse_args()

    pairs = [
        ("aes", "adpcm"),
        ("des", "adpcm"),
        ("des", "crc"),
        ("adpcm1", "crc"),
        ("crc1", "adpcm"),
    ]
    all_rows = {}
    for left, right in pairs:
        rows = sim.compare_modes(bundle_of(left), bundle_of(right))
        all_rows[f"{left}|{right}"] = rows
        print(f"\n{left} || {right}")
        print(f"  {'mode':<12} {'net_runtime':>12} {'overhead%':>10}")
        for mode in sim.Mode:
            row = rows[mode.value]
            print(f"  {mode.value:<12} {row['net_runtime']:>12} {row['overhead_pct']:>10.2f}")
        ident = rows["identity"]
        print(
            f"  integrity delta {ident['delta_cycles_secured_i']} cycles, "
            f"chk retires {ident['chk_retires']}, "
            f"chk fraction {ident['chk_fraction']:.4f}"
        )
    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(all_rows, indent=2) + "\n")
    print(f"\nreport in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
