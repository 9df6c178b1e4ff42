#!/usr/bin/env python3
"""Exhaustive bit-flip sweep experiment: checking on vs. checking off.

Flips every bit of every code word of the instrumented sweep fixture, once
with integrity checking enabled (expect 100% detection in executed blocks)
and once without (the negative control, expect silent corruptions).
"""

import argparse
import pathlib
import sys
import time

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from dualsec import fixtures, sim
from dualsec.attack import sweep_bitflips, write_sweep_csv


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="build/sweep")
    args = parser.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    fx = fixtures.toy_aes(balanced=False)
    bundle, _ = fixtures.build_bundle("sweep", fx.source)
    img = bundle.instrumented

    for mode in (sim.Mode.SECURED_I, sim.Mode.NON_SECURED):
        def make():
            return sim.System(sim.SystemConfig(mode=mode, max_cycles=20000), img, None)

        t0 = time.time()
        reports, summary = sweep_bitflips(make, img)
        path = out / f"sweep_{mode.value.lower()}.csv"
        write_sweep_csv(reports, path)
        stats = summary.to_dict()
        print(f"{mode.value}: {stats['total']} flips in {time.time() - t0:.1f}s -> {path}")
        print(f"  executed {stats['executed_total']}, detected {stats['executed_detected']},"
              f" silent {stats['executed_silent']}, outcomes {stats['outcomes']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
