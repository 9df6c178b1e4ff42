"""Injection harness: single faults, detection latency, small sweeps."""

import pytest

from dualsec import fixtures, isa, sim
from dualsec.attack import (
    InjectionSpec,
    baseline_profile,
    measure_detection,
    sweep_bitflips,
    write_sweep_csv,
)
from dualsec.instrument import build_cfg, insert_chk
from dualsec.isa import OPCODES, decode


def make_factory(img, mode=sim.Mode.SECURED_I):
    def make():
        return sim.System(sim.SystemConfig(mode=mode, max_cycles=20000), img, None)

    return make


@pytest.fixture(scope="module")
def instrumented_three_block():
    return insert_chk(fixtures.three_block().source)


def test_flip_in_unexecuted_block_is_silent(instrumented_three_block):
    res = instrumented_three_block
    # the fall-through block (addi r3) never executes: r1=5 != r2=0 takes the branch?
    # three_block: beq r1, r2 with r1=5, r2=0 -> not taken -> addi runs, so use
    # the dead block of the sweep fixture instead
    fx = fixtures.toy_aes(balanced=False)
    result = insert_chk(fx.source)
    _, sym, _ = fixtures.instrumented_symbols(fx.source)
    dead = sym.labels["dead"]
    make = make_factory(result.image)
    rep = measure_detection(make, InjectionSpec("bit-flip", address=dead + 4, bit=3))
    assert rep.outcome == "silent"
    assert not rep.executed


def test_word_replace_interior_with_jump_detected(instrumented_three_block):
    res = instrumented_three_block
    # replace the first addi (inside block 0, after chk) with a jump word:
    # an unexpected CFI comparing an incomplete accumulator
    jump_word = (OPCODES["j"] << 26) | (0 >> 2)
    make = make_factory(res.image)
    rep = measure_detection(
        make, InjectionSpec("word-replace", address=4, new_word=jump_word)
    )
    assert rep.outcome == "integrity-exception"
    assert rep.detection_pc == 4


def test_pc_redirect_into_block_interior_detected(aes_sweep_bundle):
    bundle, report, _ = aes_sweep_bundle
    big_block = max(report, key=lambda r: r["size"])
    mid = big_block["addr"] + 8  # past the chk
    make = make_factory(bundle.instrumented)
    rep = measure_detection(make, InjectionSpec("pc-redirect", new_pc=mid, cycle=12))
    assert rep.outcome == "integrity-exception"
    # stale hashedReg: detection at the very next CFI of that block
    assert rep.detection_pc == big_block["addr"] + 4 * (big_block["size"] - 1)


def test_flip_in_chk_payload_detected_at_block_cfi(instrumented_three_block):
    res = instrumented_three_block
    block0 = res.report[0]
    make = make_factory(res.image)
    rep = measure_detection(make, InjectionSpec("bit-flip", address=block0["addr"], bit=0))
    assert rep.outcome == "integrity-exception"
    assert rep.detection_pc == block0["addr"] + 4 * (block0["size"] - 1)
    assert rep.latency_instructions <= block0["size"]


def test_same_flip_silent_in_non_secured(instrumented_three_block):
    res = instrumented_three_block
    make = make_factory(res.image, mode=sim.Mode.NON_SECURED)
    rep = measure_detection(make, InjectionSpec("bit-flip", address=res.report[0]["addr"], bit=0))
    assert rep.outcome == "silent"


def test_small_sweep_latency_bound(instrumented_three_block):
    res = instrumented_three_block
    make = make_factory(res.image)
    reports, summary = sweep_bitflips(make, res.image)
    assert summary.executed_silent == 0
    assert summary.executed_detected == summary.executed_total
    blocks = build_cfg(res.image).blocks
    for rep in reports:
        if not rep.detected or rep.latency_instructions is None:
            continue
        block = next(b for b in blocks if b.start <= rep.spec.address < b.end)
        assert rep.latency_instructions <= block.size
        assert "latency-bound-exceeded" not in rep.outcome


def test_sweep_csv_format(tmp_path, instrumented_three_block):
    res = instrumented_three_block
    make = make_factory(res.image)
    reports, _ = sweep_bitflips(make, res.image, bits=range(2))
    path = tmp_path / "sweep.csv"
    write_sweep_csv(reports, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "address,bit,kind,outcome,executed,detection_pc,latency_instructions,latency_cycles"
    assert len(lines) == len(reports) + 1


def test_runtime_trigger_flip():
    """A flip applied mid-run corrupts only fetches after its trigger."""
    fx = fixtures.toy_aes(balanced=False)
    result = insert_chk(fx.source)
    make = make_factory(result.image)
    baseline, clean_cycles = baseline_profile(make)
    # flipping after the whole program already ran changes nothing
    late = InjectionSpec("bit-flip", address=8, bit=1, cycle=clean_cycles + 10)
    rep = measure_detection(make, late, baseline)
    assert rep.outcome == "silent"
    early = InjectionSpec("bit-flip", address=8, bit=1, cycle=1)
    rep = measure_detection(make, early, baseline)
    assert rep.detected


def test_multi_bit_injection_supported_but_not_claimed():
    """Two flips in one word may cancel in the checksum; the harness runs
    them honestly rather than asserting detection."""
    fx = fixtures.toy_aes(balanced=False)
    result = insert_chk(fx.source)

    def make():
        return sim.System(
            sim.SystemConfig(mode=sim.Mode.SECURED_I, max_cycles=20000), result.image, None
        )

    system = make()
    out = system.run(
        mutations=[
            (1, "flip", 1, 12, 3),
            (1, "flip", 1, 12, 3),  # flipped back: net zero
        ]
    )
    assert out.status == "ok"
    assert not out.cores[0].exceptions
