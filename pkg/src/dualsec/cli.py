"""Command-line front end: assemble, instrument, complement, run, attack.

Every command is deterministic given its seeds and exits nonzero on any
error; --expect-detect / --expect-rank turn property checks into exit
codes so CI can script the attack harnesses.
"""

from __future__ import annotations

import argparse
import json
import multiprocessing
import sys

import numpy as np

from . import attack as attack_mod
from . import fixtures as fixtures_mod
from . import instrument as instrument_mod
from . import isa, power, sim


def _read(path: str) -> str:
    with open(path) as fh:
        return fh.read()


def _write(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def cmd_asm(args) -> int:
    img, sym = isa.assemble(_read(args.source))
    _write(args.output, img.to_text())
    if args.symbols:
        payload = {
            "labels": {k: v for k, v in sorted(sym.labels.items())},
            "jtargets": {f"{a:#x}": list(t) for a, t in sym.jtargets.items()},
        }
        _write(args.symbols, json.dumps(payload, indent=2) + "\n")
    print(f"assembled {args.source} -> {args.output}")
    return 0


def cmd_disasm(args) -> int:
    img = isa.MemoryImage.from_text(_read(args.image))
    _write(args.output, isa.disassemble(img))
    print(f"disassembled {args.image} -> {args.output}")
    return 0


def cmd_instrument(args) -> int:
    source = _read(args.source)
    if args.balance:
        start, _, end = args.balance.partition(":")
        source = instrument_mod.mark_balancing(source, start, end)
    result = instrument_mod.insert_chk(source)
    _write(args.output, result.source)
    if args.image:
        _write(args.image, result.image.to_text())
    if args.report:
        instrument_mod.write_report_jsonl(result.report, args.report)
    print(f"instrumented {len(result.report)} blocks -> {args.output}")
    return 0


def cmd_complement(args) -> int:
    img = isa.MemoryImage.from_text(_read(args.image))
    if not args.no_verify:
        report = instrument_mod.verify_complement_closure(img)
        if not report.ok:
            print(report.pretty(), file=sys.stderr)
            return 1
    out = instrument_mod.generate_complement_image(img, check=False)
    _write(args.output, out.to_text())
    print(f"complement image -> {args.output}")
    return 0


def cmd_run(args) -> int:
    data = sim.load_config(args.config)
    system = sim.system_from_config(data, resolve=_resolver(args.config))
    result = system.run()
    summary = result.to_dict()
    text = json.dumps(summary, indent=2, default=str) + "\n"
    if args.output:
        _write(args.output, text)
    else:
        print(text, end="")
    if args.events:
        sim.write_events_jsonl(result, args.events)
    if args.power_csv and result.power is not None:
        result.power.save_csv(args.power_csv)
    clean = result.status == "ok" and not any(c.exceptions for c in result.cores)
    print(f"status={result.status} net_runtime={result.net_runtime}", file=sys.stderr)
    return 0 if clean else 1


def _resolver(config_path: str):
    import os

    root = os.path.dirname(os.path.abspath(config_path))

    def resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(root, p)

    return resolve


def _parse_spec(text: str) -> attack_mod.InjectionSpec:
    parts = text.split(":")
    kind = parts[0]
    if kind == "bitflip":
        return attack_mod.InjectionSpec("bit-flip", address=int(parts[1], 0), bit=int(parts[2], 0))
    if kind == "wordreplace":
        return attack_mod.InjectionSpec(
            "word-replace", address=int(parts[1], 0), new_word=int(parts[2], 0)
        )
    if kind == "redirect":
        return attack_mod.InjectionSpec(
            "pc-redirect", cycle=int(parts[1], 0), new_pc=int(parts[2], 0)
        )
    raise ValueError(f"bad injection spec {text!r}")


_SWEEP_CTX: dict = {}


def _sweep_worker_init(config_path: str):
    data = sim.load_config(config_path)
    _SWEEP_CTX["data"] = data
    _SWEEP_CTX["resolve"] = _resolver(config_path)
    system = sim.system_from_config(data, resolve=_SWEEP_CTX["resolve"])
    _SWEEP_CTX["baseline"], _ = attack_mod.baseline_profile(
        lambda: sim.system_from_config(data, resolve=_SWEEP_CTX["resolve"])
    )


def _sweep_worker(job: tuple) -> dict:
    addr, bit = job
    make = lambda: sim.system_from_config(_SWEEP_CTX["data"], resolve=_SWEEP_CTX["resolve"])
    spec = attack_mod.InjectionSpec("bit-flip", address=addr, bit=bit)
    rep = attack_mod.measure_detection(make, spec, _SWEEP_CTX["baseline"])
    return rep.row()


def cmd_inject(args) -> int:
    data = sim.load_config(args.config)
    resolve = _resolver(args.config)

    def make_system():
        return sim.system_from_config(data, resolve=resolve)

    if args.sweep:
        image = make_system().core1.imem
        addresses = [
            a for s in image.sections_of("code") for a in range(s.start, s.end, 4)
        ]
        jobs = [(a, b) for a in addresses for b in range(32)]
        if args.jobs > 1:
            with multiprocessing.Pool(
                args.jobs, initializer=_sweep_worker_init, initargs=(args.config,)
            ) as pool:
                rows = pool.map(_sweep_worker, jobs, chunksize=64)
        else:
            baseline, _ = attack_mod.baseline_profile(make_system)
            rows = []
            for addr, bit in jobs:
                spec = attack_mod.InjectionSpec("bit-flip", address=addr, bit=bit)
                rows.append(attack_mod.measure_detection(make_system, spec, baseline).row())
        import csv as _csv

        with open(args.output, "w", newline="") as fh:
            writer = _csv.DictWriter(fh, fieldnames=attack_mod.SWEEP_FIELDS)
            writer.writeheader()
            writer.writerows(rows)
        executed = [r for r in rows if r["executed"]]
        detected = [
            r for r in executed if r["outcome"] in ("integrity-exception", "illegal-instruction")
        ]
        silent = [r for r in executed if r["outcome"] == "silent"]
        print(
            f"sweep: {len(rows)} flips, executed {len(executed)}, "
            f"detected {len(detected)}, silent {len(silent)} -> {args.output}"
        )
        if args.expect_detect:
            return 0 if silent == [] and len(detected) == len(executed) else 1
        return 0

    spec = _parse_spec(args.spec)
    rep = attack_mod.measure_detection(make_system, spec)
    print(json.dumps(rep.row(), indent=2))
    if args.expect_detect:
        return 0 if rep.detected else 1
    return 0


def _collect_trace(base_img, victim, attack, pt_addr, row):
    patch = {pt_addr + 4 * i: int(p) for i, p in enumerate(row)}
    img = base_img.patched(patch)
    if attack == "single":
        cfg = sim.SystemConfig(mode=sim.Mode.NON_SECURED, power_trace=True)
        system = sim.System(cfg, img, None)
    else:
        comp = instrument_mod.generate_complement_image(img, check=False)
        cfg = sim.SystemConfig(mode=sim.Mode.SECURED_M, power_trace=True)
        system = sim.System(cfg, img, victim, complement=comp)
    result = system.run()
    if result.status != "ok":
        raise RuntimeError(f"trace run failed: {result.status}")
    return result.power.core1 if attack == "single" else result.power.combined


_DPA_CTX: dict = {}


def _dpa_worker_init(image_text, victim_text, attack, pt_addr):
    _DPA_CTX["image"] = isa.MemoryImage.from_text(image_text)
    _DPA_CTX["victim"] = (
        isa.MemoryImage.from_text(victim_text) if victim_text else None
    )
    _DPA_CTX["attack"] = attack
    _DPA_CTX["pt_addr"] = pt_addr


def _dpa_worker(row):
    return _collect_trace(
        _DPA_CTX["image"], _DPA_CTX["victim"], _DPA_CTX["attack"], _DPA_CTX["pt_addr"], row
    )


def cmd_dpa(args) -> int:
    image_text = _read(args.image)
    base_img = isa.MemoryImage.from_text(image_text)
    victim_text = None
    victim = None
    if args.attack == "combined":
        if not args.victim:
            print("--attack combined needs --victim", file=sys.stderr)
            return 1
        victim_text = _read(args.victim)
        victim = isa.MemoryImage.from_text(victim_text)
    rng = np.random.default_rng(args.seed)
    pts = rng.integers(0, 256, size=(args.traces, 16), dtype=np.uint8)
    if args.jobs > 1:
        with multiprocessing.Pool(
            args.jobs,
            initializer=_dpa_worker_init,
            initargs=(image_text, victim_text, args.attack, args.pt_addr),
        ) as pool:
            traces = pool.map(_dpa_worker, list(pts), chunksize=16)
    else:
        traces = [
            _collect_trace(base_img, victim, args.attack, args.pt_addr, row) for row in pts
        ]
    matrix = np.vstack(traces)
    ranking = power.cpa_attack(matrix, pts[:, args.key_byte], true_key=args.true_key)
    payload = ranking.to_dict()
    payload["attack"] = args.attack
    payload["traces"] = args.traces
    _write(args.output, json.dumps(payload, indent=2) + "\n")
    best = ranking.ranking[0]
    line = f"dpa {args.attack}: best guess {best:#04x} peak {ranking.peaks[best]:.4f}"
    if args.true_key is not None:
        line += f" true-key rank {ranking.true_key_rank}"
    print(line)
    if args.expect_rank is not None:
        if args.true_key is None:
            print("--expect-rank needs --true-key", file=sys.stderr)
            return 1
        return 0 if ranking.true_key_rank <= args.expect_rank else 1
    return 0


def cmd_report(args) -> int:
    bundle1, _ = fixtures_mod.build_bundle("app1", _read(args.app1))
    bundle2 = None
    if args.app2:
        bundle2, _ = fixtures_mod.build_bundle("app2", _read(args.app2))
    rows = sim.compare_modes(bundle1, bundle2)
    text = json.dumps(rows, indent=2) + "\n"
    if args.output:
        _write(args.output, text)
    print(f"{'mode':<12} {'net_runtime':>12} {'overhead%':>10}")
    for mode in sim.Mode:
        row = rows[mode.value]
        print(f"{mode.value:<12} {row['net_runtime']:>12} {row['overhead_pct']:>10.2f}")
    return 0


def cmd_fixtures(args) -> int:
    import os

    os.makedirs(args.out, exist_ok=True)
    metas = {}
    entries = {
        "toy_aes.s": fixtures_mod.toy_aes(),
        "toy_aes_sweep.s": fixtures_mod.toy_aes(balanced=False),
        "toy_des.s": fixtures_mod.toy_des(),
        "filler_adpcm.s": fixtures_mod.filler(n_iters=150, base=0x8000),
        "filler_crc.s": fixtures_mod.filler(n_iters=90, base=0x8000, kind="crc"),
        "interrupt_app.s": fixtures_mod.interrupt_app(),
        "three_block.s": fixtures_mod.three_block(),
    }
    for name, fx in entries.items():
        _write(os.path.join(args.out, name), fx.source)
        metas[name] = fx.meta
    _write(os.path.join(args.out, "meta.json"), json.dumps(metas, indent=2) + "\n")
    print(f"wrote {len(entries)} fixtures to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualsec",
        description="dual-core secure-processor simulator and toolchain",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("asm", help="assemble a source file to a memory image")
    p.add_argument("source")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--symbols")
    p.set_defaults(func=cmd_asm)

    p = sub.add_parser("disasm", help="disassemble a memory image")
    p.add_argument("image")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_disasm)

    p = sub.add_parser("instrument", help="insert per-block chk checksums")
    p.add_argument("source")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--image", help="also write the assembled image")
    p.add_argument("--report", help="JSONL block report")
    p.add_argument("--balance", metavar="START:END", help="wrap labels in balancing markers first")
    p.set_defaults(func=cmd_instrument)

    p = sub.add_parser("complement", help="derive the complementary image")
    p.add_argument("image")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--no-verify", action="store_true")
    p.set_defaults(func=cmd_complement)

    p = sub.add_parser("run", help="run a system configuration")
    p.add_argument("--config", required=True)
    p.add_argument("-o", "--output")
    p.add_argument("--events", help="write JSONL event trace")
    p.add_argument("--power-csv", help="write the power trace CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("inject", help="fault injection and bit-flip sweeps")
    p.add_argument("--config", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--spec", help="bitflip:ADDR:BIT | wordreplace:ADDR:WORD | redirect:CYCLE:PC")
    group.add_argument("--sweep", action="store_true")
    p.add_argument("-o", "--output", default="sweep.csv")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--expect-detect", action="store_true")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("dpa", help="correlation power analysis")
    p.add_argument("--image", required=True, help="target application image")
    p.add_argument("--victim", help="second-core application image (combined attack)")
    p.add_argument("--pt-addr", type=lambda v: int(v, 0), required=True)
    p.add_argument("--traces", type=int, default=1000)
    p.add_argument("--attack", choices=("single", "combined"), default="single")
    p.add_argument("--key-byte", type=int, default=0)
    p.add_argument("--true-key", type=lambda v: int(v, 0))
    p.add_argument("--expect-rank", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("-o", "--output", default="dpa.json")
    p.set_defaults(func=cmd_dpa)

    p = sub.add_parser("report", help="compare net runtimes across all modes")
    p.add_argument("--app1", required=True, help="assembly source of the first app")
    p.add_argument("--app2", help="assembly source of the second app")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("fixtures", help="materialize the bundled fixture programs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (isa.AsmError, instrument_mod.InstrumentError, sim.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
