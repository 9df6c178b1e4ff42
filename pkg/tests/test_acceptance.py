"""Acceptance suite: one test per acceptance criterion, strict tolerances.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS line per
criterion.  Everything here is exact integer or bit-exact arithmetic except
criterion 5's combined-attack rank, which is a pre-registered statistical
bound on a seeded experiment.
"""

import statistics

import numpy as np
import pytest

from dualsec import fixtures, instrument, isa, sim
from dualsec.attack import sweep_bitflips
from dualsec.controller import ROUND_TRIP_CYCLES
from dualsec.instrument import accumulate32, build_cfg, compute_checksum, fold26
from dualsec.power import cpa_attack


def report(criterion: str, detail: str = ""):
    print(f"\n[PASS] {criterion}" + (f" -- {detail}" if detail else ""))


# ---------------------------------------------------------------------------


def test_criterion_1_switching_overhead_748(des_bundle, filler_bundle):
    """One balanced entry+exit costs exactly 748 cycles, decomposed
    320/30/20/320/30/20/6/1/1."""
    des, _, _ = des_bundle
    filler, _, _ = filler_bundle
    result = sim.run_pair(sim.Mode.SECURED_M, des, filler)
    assert result.status == "ok"
    rows = [r for r in result.accounting if r.op_kind == "balance"]
    got = {r.row: r.cycles for r in rows}
    assert got == {
        "flush-pipelines": 6,
        "store-regfile": 320,
        "store-pc-hi-lo": 30,
        "store-inc-hashed-hashed": 20,
        "interrupt-to-switch": 1,
        "restore-regfile": 320,
        "restore-pc-hi-lo": 30,
        "restore-inc-hashed-hashed": 20,
        "exit": 1,
    }
    assert sum(r.cycles for r in rows) == ROUND_TRIP_CYCLES == 748
    report("criterion 1: switching overhead", "748 = 6+320+30+20+1+320+30+20+1")


# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def sweep_setup(aes_sweep_bundle):
    bundle, report_rows, _ = aes_sweep_bundle
    img = bundle.instrumented
    nwords = sum((s.end - s.start) // 4 for s in bundle.plain.sections_of("code"))
    assert nwords >= 100  # criterion demands a >=100-instruction fixture
    blocks = build_cfg(img).blocks
    return img, blocks


def test_criterion_2_injection_completeness(sweep_setup):
    """Exhaustive single-bit-flip sweep: 100% detection in executed blocks,
    zero silent, detection never later than the block's CFI."""
    img, blocks = sweep_setup

    def make():
        return sim.System(sim.SystemConfig(mode=sim.Mode.SECURED_I, max_cycles=20000), img, None)

    reports, summary = sweep_bitflips(make, img)
    assert summary.executed_total > 3000
    assert summary.executed_detected == summary.executed_total
    assert summary.executed_silent == 0
    for rep in reports:
        assert "latency-bound-exceeded" not in rep.outcome
        if rep.detected and rep.latency_instructions is not None:
            block = next(b for b in blocks if b.start <= rep.spec.address < b.end)
            assert rep.latency_instructions <= block.size
    report(
        "criterion 2: injection completeness",
        f"{summary.executed_total} executed flips, 100% detected, 0 silent",
    )


def test_criterion_3_negative_control(sweep_setup):
    """The identical sweep without integrity checking leaves silent flips."""
    img, _ = sweep_setup

    def make():
        return sim.System(sim.SystemConfig(mode=sim.Mode.NON_SECURED, max_cycles=20000), img, None)

    _, summary = sweep_bitflips(make, img)
    assert summary.executed_silent > 0
    report(
        "criterion 3: negative control",
        f"{summary.executed_silent} silent executed flips in NON_SECURED",
    )


# ---------------------------------------------------------------------------


def _balanced_combined_window(aes_bundle_entry, filler_img, plaintext, key):
    bundle, _, meta = aes_bundle_entry
    img = bundle.plain.patched(fixtures.aes_pt_words(plaintext, meta["pt"]))
    img = img.patched(fixtures.aes_table_words(key, meta["table"]))
    comp = instrument.generate_complement_image(img, check=False)
    cfg = sim.SystemConfig(mode=sim.Mode.SECURED_M, power_trace=True)
    system = sim.System(cfg, img, filler_img, complement=comp)
    result = system.run()
    assert result.status == "ok"
    (_, start, end), = result.balance_windows
    return result.power.combined[start - 1 : end]


def test_criterion_4_balancing_cancellation(aes_bundle, filler_bundle):
    """sigma=0 combined trace inside the balanced region is cyclewise
    identical across 100 random plaintext/key pairs."""
    filler, _, _ = filler_bundle
    rng = np.random.default_rng(1001)
    reference = None
    for _ in range(100):
        pt = rng.integers(0, 256, 16)
        key = int(rng.integers(0, 256))
        window = _balanced_combined_window(aes_bundle, filler.plain, pt, key)
        if reference is None:
            reference = window
        assert window.shape == reference.shape
        assert np.array_equal(window, reference)
    report(
        "criterion 4: balancing cancellation",
        f"100 plaintext/key pairs, {len(reference)}-cycle window bit-identical",
    )


# ---------------------------------------------------------------------------


def test_criterion_5_cpa_contrast(aes_bundle, filler_bundle):
    """Single-core attack ranks the true key first with 1000 traces; the
    same attack on combined balanced traces is uninformative (median rank
    inside [64, 192] over 20 repetitions with fresh keys)."""
    bundle, _, meta = aes_bundle
    filler, _, _ = filler_bundle
    key = meta["key"]
    rng = np.random.default_rng(2002)

    pts = fixtures.random_plaintexts(1000, rng)
    traces = []
    for row in pts:
        img = bundle.plain.patched(fixtures.aes_pt_words(row, meta["pt"]))
        cfg = sim.SystemConfig(mode=sim.Mode.NON_SECURED, power_trace=True)
        result = sim.System(cfg, img, None).run()
        traces.append(result.power.core1)
    single_rank = cpa_attack(np.vstack(traces), pts[:, 0], true_key=key).true_key_rank
    assert single_rank == 1

    ranks = []
    for _ in range(20):
        rep_key = int(rng.integers(0, 256))
        table = fixtures.aes_table_words(rep_key, meta["table"])
        keyed = bundle.plain.patched(table)
        rep_pts = fixtures.random_plaintexts(100, rng)
        rep_traces = []
        for row in rep_pts:
            img = keyed.patched(fixtures.aes_pt_words(row, meta["pt"]))
            comp = instrument.generate_complement_image(img, check=False)
            cfg = sim.SystemConfig(mode=sim.Mode.SECURED_M, power_trace=True)
            system = sim.System(cfg, img, filler.plain, complement=comp)
            result = system.run()
            rep_traces.append(result.power.combined)
        ranking = cpa_attack(np.vstack(rep_traces), rep_pts[:, 0], true_key=rep_key)
        ranks.append(ranking.true_key_rank)
    median = statistics.median(ranks)
    assert 64 <= median <= 192, ranks
    report(
        "criterion 5: CPA contrast",
        f"single-core rank 1 @1000 traces; combined median rank {median} in [64,192]",
    )


# ---------------------------------------------------------------------------


def test_criterion_6_runtime_composition(des_bundle, filler_bundle):
    """SECURED_M pair runtime = t(balanced region) + 748 + t(filler solo),
    exactly; independent pairs follow the max rule."""
    des, _, _ = des_bundle
    filler, _, _ = filler_bundle
    solo = sim.System(sim.SystemConfig(mode=sim.Mode.NON_SECURED), None, filler.plain).run()
    paired = sim.run_pair(sim.Mode.SECURED_M, des, filler)
    assert paired.status == "ok"
    (_, w_start, w_end), = paired.balance_windows
    window = w_end - w_start
    assert paired.net_runtime == window + 748 + solo.net_runtime

    a = fixtures.filler(n_iters=160, base=0x0)
    b = fixtures.filler(n_iters=60, base=0x8000, kind="crc")
    img_a, _ = isa.assemble(a.source)
    img_b, _ = isa.assemble(b.source)
    pair = sim.System(sim.SystemConfig(mode=sim.Mode.NON_SECURED), img_a, img_b).run()
    solo_a = sim.System(sim.SystemConfig(mode=sim.Mode.NON_SECURED), img_a, None).run()
    solo_b = sim.System(sim.SystemConfig(mode=sim.Mode.NON_SECURED), None, img_b).run()
    assert pair.net_runtime == max(solo_a.net_runtime, solo_b.net_runtime)
    report(
        "criterion 6: runtime composition",
        f"net {paired.net_runtime} = {window} + 748 + {solo.net_runtime}; max rule exact",
    )


# ---------------------------------------------------------------------------


def test_criterion_7_mode_ordering_and_overhead_identity(
    aes_bundle, filler_bundle, aes_sweep_bundle
):
    """cycles(NON) <= cycles(SI); cycles(NON) <= cycles(SM) <= cycles(S);
    SECURED == SECURED_I without balancing; and the integrity overhead is
    exactly the chk/inserted-jump retire count."""
    aes, _, _ = aes_bundle
    filler, _, _ = filler_bundle
    rows = sim.compare_modes(aes, filler)
    ns, si = rows["NON_SECURED"]["net_runtime"], rows["SECURED_I"]["net_runtime"]
    sm, sd = rows["SECURED_M"]["net_runtime"], rows["SECURED"]["net_runtime"]
    assert ns <= si and ns <= sm <= sd

    crc = fixtures.filler(n_iters=70, base=0x0, kind="crc")
    crc_bundle, _ = fixtures.build_bundle("crc", crc.source)
    rows2 = sim.compare_modes(crc_bundle, filler)
    assert rows2["SECURED"]["net_runtime"] == rows2["SECURED_I"]["net_runtime"]

    sweep_bundle, sweep_report, _ = aes_sweep_bundle
    plain_run = sim.System(
        sim.SystemConfig(mode=sim.Mode.NON_SECURED), sweep_bundle.plain, None
    ).run()
    cfg = sim.SystemConfig(mode=sim.Mode.SECURED_I, record_retires=True)
    sys_i = sim.System(cfg, sweep_bundle.instrumented, None)
    instr_run = sys_i.run()
    delta = instr_run.net_runtime - plain_run.net_runtime
    chk = instr_run.cores[0].chk_retired
    inserted = {
        r["addr"] + 4 * (r["size"] - 1) for r in sweep_report if r["inserted_jump"]
    }
    inserted_retires = sum(1 for _, pc, _ in sys_i.core1.retire_log if pc in inserted)
    assert delta == chk + inserted_retires
    assert instr_run.cores[0].chk_retired == instr_run.cores[0].cfi_retired
    frac = chk / plain_run.cores[0].retired
    report(
        "criterion 7: mode ordering + overhead identity",
        f"{ns} <= {si}, {ns} <= {sm} <= {sd}; delta {delta} = chk {chk} + jumps "
        f"{inserted_retires}; chk fraction {frac:.4f}",
    )


# ---------------------------------------------------------------------------


def test_criterion_8_interrupt_during_balancing(filler_bundle):
    """Zero cycle skew after resume; victim outputs bit-identical."""
    filler, _, fmeta = filler_bundle
    fx = fixtures.toy_des(with_isr=True)
    bundle, _ = fixtures.build_bundle("des-isr", fx.source)
    _, symbols, _ = fixtures.instrumented_symbols(fx.source)
    isr = symbols.labels["isr"]

    base = sim.run_pair(sim.Mode.SECURED, bundle, filler, record_retires=True)
    assert base.status == "ok"
    (_, w_start, w_end), = base.balance_windows
    mid = (w_start + w_end) // 2
    for target in (1, 2):
        run = sim.run_pair(
            sim.Mode.SECURED,
            bundle,
            filler,
            record_retires=True,
            interrupts=((mid, target, isr),),
        )
        assert run.status == "ok"
        assert not any(c.exceptions for c in run.cores)
        audit = sim.lockstep_audit(run)
        assert audit["ok"] and audit["skew"] == 0
        for i in range(fmeta["out_len"]):
            addr = fmeta["out"] + 4 * i
            assert run.system.core2.dmem.word(addr) == base.system.core2.dmem.word(addr)
        for i in range(fx.meta["out_len"]):
            addr = fx.meta["out"] + 4 * i
            assert run.system.core1.dmem.word(addr) == base.system.core1.dmem.word(addr)
    report("criterion 8: interrupt during balancing", "skew 0, outputs bit-identical")


# ---------------------------------------------------------------------------


def test_criterion_9_cross_module_checksum_equivalence(
    aes_bundle, des_bundle, filler_bundle, aes_sweep_bundle
):
    """Runtime accumulator at every CFI retire equals the instrumenter's
    static pre-fold accumulator, on every fixture; fold26 flips exactly one
    bit for every single-bit corruption, all 32 positions."""
    checked_blocks = 0
    for bundle, _, _ in (aes_bundle, des_bundle, filler_bundle, aes_sweep_bundle):
        cfg = sim.SystemConfig(mode=sim.Mode.SECURED_I, record_checks=True)
        system = sim.System(cfg, bundle.instrumented, None)
        result = system.run()
        assert result.status == "ok"
        assert not result.cores[0].exceptions
        blocks = build_cfg(bundle.instrumented).blocks
        assert system.core1.check_log
        seen = set()
        for _, pc, expected, got, acc in system.core1.check_log:
            block = next(b for b in blocks if b.start <= pc < b.end)
            assert acc == accumulate32(block.body_words)
            assert expected == got == fold26(acc) == block.checksum()
            seen.add(block.start)
        checked_blocks += len(seen)

    sample = [0xDEADBEEF, 0x00000000, 0x12345678, 0xFC000000]
    base = compute_checksum(sample)
    flips = 0
    for i in range(len(sample)):
        for bit in range(32):
            mutated = list(sample)
            mutated[i] ^= 1 << bit
            delta = base ^ compute_checksum(mutated)
            assert bin(delta).count("1") == 1
            flips += 1
    report(
        "criterion 9: cross-module checksum equivalence",
        f"{checked_blocks} distinct blocks matched; {flips} exhaustive bit positions",
    )
