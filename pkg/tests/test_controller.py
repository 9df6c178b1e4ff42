"""Controller phase machine, delay accounting, save/restore layout."""

import pytest

from dualsec import controller as ctl
from dualsec import fixtures, isa, sim
from dualsec.controller import (
    CONTEXT_SLOTS,
    EXIT_CYCLES,
    FLUSH_CYCLES,
    PER_REGISTER_CYCLES,
    ROUND_TRIP_CYCLES,
    SAVE_CYCLES,
    SWITCH_CYCLES,
)


def test_delay_table_reproduces_paper_rows():
    assert 32 * PER_REGISTER_CYCLES == 320
    assert 3 * PER_REGISTER_CYCLES == 30
    assert 2 * PER_REGISTER_CYCLES == 20
    assert SAVE_CYCLES == 370
    assert FLUSH_CYCLES == 6
    assert SWITCH_CYCLES == EXIT_CYCLES == 1
    assert ROUND_TRIP_CYCLES == 748
    assert CONTEXT_SLOTS == 37


def bal_source(pad: int = 0) -> str:
    pad_lines = "".join(f"        addi r4, r4, {i % 3}\n" for i in range(pad))
    return f"""
        .text
main:
{pad_lines}        startBal bal_entry
bal_entry:
        lui r8, 0x0
        ori r8, r8, 0x2000
        lw r1, 0(r8)
        xori r2, r1, 0x55
        sw r2, 4(r8)
        endBal
        halt
        .baldata
        .org 0x2000
        .word 0x12345678
        .word 0x0
"""


BAL_SRC = bal_source()


def balanced_system(filler_iters=80, bal_pad=0, **kw):
    from dualsec.instrument import generate_complement_image

    bal_img, _ = isa.assemble(bal_source(bal_pad))
    comp = generate_complement_image(bal_img)
    fl = fixtures.filler(n_iters=filler_iters, base=0x8000)
    filler_img, _ = isa.assemble(fl.source)
    cfg = sim.SystemConfig(mode=sim.Mode.SECURED_M, record_retires=True, **kw)
    return sim.System(cfg, bal_img, filler_img, complement=comp), fl


def test_startbal_to_fetch_costs_378_cycles():
    system, _ = balanced_system()
    result = system.run()
    startbal_retire = next(
        c for c, pc, w in system.core1.retire_log if isa.decode(w).kind == "startBal"
    )
    first_balanced_fetch = min(
        c for c, pc, w in system.core1.retire_log if pc == 4
    ) - 5  # retire = fetch + 5
    assert first_balanced_fetch - startbal_retire == 378


def test_round_trip_accounting_decomposition():
    system, _ = balanced_system()
    result = system.run()
    rows = [r for r in result.accounting if r.op_kind == "balance"]
    assert [(r.row, r.cycles) for r in rows] == [
        ("flush-pipelines", 6),
        ("store-regfile", 320),
        ("store-pc-hi-lo", 30),
        ("store-inc-hashed-hashed", 20),
        ("interrupt-to-switch", 1),
        ("restore-regfile", 320),
        ("restore-pc-hi-lo", 30),
        ("restore-inc-hashed-hashed", 20),
        ("exit", 1),
    ]
    assert sum(r.cycles for r in rows) == 748
    # the charged windows are contiguous and disjoint within each half
    flush, s1, s2, s3, bc, r1, r2, r3, ex = rows
    assert s1.start == flush.end + 1 and s2.start == s1.end + 1 and s3.start == s2.end + 1
    assert bc.start == s3.end + 1
    assert r2.start == r1.end + 1 and r3.start == r2.end + 1 and ex.start == r3.end + 1


def test_save_layout_matches_snapshot():
    """Frame layout r0..r31, PC, HI, LO, incHashed, hashed descending from sp."""
    system, _ = balanced_system(filler_iters=80)
    result = system.run()
    assert result.status == "ok"
    frame = system.controller.saved_frames[0]
    victim = system.core2
    words = [victim.dmem.word(frame["sp"] - 4 * (slot + 1)) for slot in range(CONTEXT_SLOTS)]
    assert words == frame["ctx"]
    assert words[0] == 0  # r0
    assert len(frame["ctx"]) == CONTEXT_SLOTS


def test_bit_exact_restore_of_halted_victim():
    """startBal after a long prologue preempts a victim that already halted;
    nothing runs on it afterwards, so its final state must equal the frame."""
    system, _ = balanced_system(filler_iters=2, bal_pad=80)
    result = system.run()
    assert result.status == "ok"
    victim = system.core2
    frame = system.controller.saved_frames[0]
    assert frame["ctx"][:32] == victim.regs
    assert frame["ctx"][32] == victim.pc
    assert frame["ctx"][33] == victim.hi and frame["ctx"][34] == victim.lo
    assert frame["ctx"][35] == victim.inc_hashed
    assert frame["ctx"][36] == victim.hashed_reg
    assert victim.halted and not victim.trapped
    assert result.balance_windows  # balancing really ran on the halted victim


def test_victim_outputs_identical_after_round_trip():
    system, fl = balanced_system(filler_iters=300)
    result = system.run()
    assert result.status == "ok"
    solo = sim.System(
        sim.SystemConfig(mode=sim.Mode.NON_SECURED),
        None,
        isa.assemble(fixtures.filler(n_iters=300, base=0x8000).source)[0],
    )
    solo.run()
    for i in range(fl.meta["out_len"]):
        addr = fl.meta["out"] + 4 * i
        assert system.core2.dmem.word(addr) == solo.core2.dmem.word(addr)


def test_endbal_outside_balancing_is_protocol_violation():
    src = """
        .text
main:   endBal
        halt
"""
    img, _ = isa.assemble(src)
    cfg = sim.SystemConfig(mode=sim.Mode.SECURED_M)
    result = sim.System(cfg, img, None).run()
    assert result.status == "protocol-violation"
    assert "endBal" in result.diagnostics[0]


def test_startbal_queues_while_busy():
    """A startBal retiring during interrupt service is deferred, not lost."""
    fx = fixtures.interrupt_app(n_iters=40)
    from dualsec.instrument import generate_complement_image, insert_chk

    bal_img, _ = isa.assemble(BAL_SRC)
    comp = generate_complement_image(bal_img)
    fl = fixtures.filler(n_iters=200, base=0x8000)
    filler_img, _ = isa.assemble(fl.source)
    isr_src = fixtures.interrupt_app(n_iters=200, base=0x8000)
    filler_isr_img, filler_sym = isa.assemble(isr_src.source)
    # interrupt core2 right away; startBal (cycle 6) arrives while busy
    cfg = sim.SystemConfig(
        mode=sim.Mode.SECURED_M,
        interrupts=((2, 2, filler_sym.labels["isr"]),),
    )
    system = sim.System(cfg, bal_img, filler_isr_img, complement=comp)
    result = system.run()
    assert result.status == "ok"
    assert result.balance_windows  # balancing still happened afterwards
    assert system.core1.dmem.word(0x2004) == 0x12345678 ^ 0x55


def test_interrupt_entry_accounting():
    fx = fixtures.interrupt_app(n_iters=60)
    from dualsec.instrument import insert_chk

    res = insert_chk(fx.source)
    isr = res.symbols.labels["isr"]
    cfg = sim.SystemConfig(mode=sim.Mode.SECURED_I, interrupts=((100, 1, isr),))
    result = sim.System(cfg, res.image, None).run()
    rows = [(r.row, r.cycles) for r in result.accounting if r.op_kind == "irq"]
    assert rows == [("flush-pipelines", 6), ("interrupt-to-switch", 1), ("exit", 1)]


def test_irq_to_inactive_core_is_dropped():
    img, _ = isa.assemble(fixtures.straight_line(3).source)
    cfg = sim.SystemConfig(mode=sim.Mode.NON_SECURED, interrupts=((50, 2, 0x0),))
    result = sim.System(cfg, img, None).run()
    assert result.status == "ok"
    assert any("dropped" in d for d in result.diagnostics)


def test_phase_transition_log_is_consistent():
    system, _ = balanced_system()
    result = system.run()
    phases = [(frm, to) for _, frm, to, _ in result.transitions]
    assert phases == [
        ("IDLE", "FLUSH_WAIT"),
        ("FLUSH_WAIT", "SAVING"),
        ("SAVING", "BROADCAST"),
        ("BROADCAST", "BALANCING"),
        ("BALANCING", "RESTORING"),
        ("RESTORING", "IDLE"),
    ]
    # countdown positive exactly in the counting phases
    for _, _, to, countdown in result.transitions:
        assert (countdown > 0) == (to in ("FLUSH_WAIT", "SAVING", "RESTORING"))


def test_no_event_sequence_reaches_undefined_transition():
    """Drive the controller with randomized event streams; every sequence
    either advances the machine or raises the defined ProtocolViolation."""
    import itertools
    import random

    rng = random.Random(7)
    menu = ["startbal", "endbal", "nmi", "irq", "none"]
    for trial in range(200):
        fl = fixtures.filler(n_iters=5, base=0x8000)
        img, _ = isa.assemble(fl.source)
        imem, dmem = sim.split_image(img)
        from dualsec.core import Core

        c1 = Core(1, imem, dmem)
        c2 = Core(2, *sim.split_image(isa.assemble(fixtures.filler(n_iters=5, base=0x4000).source)[0]))
        ctrl = ctl.Controller(c1, c2)
        try:
            for cycle in range(1, 40):
                events = []
                pick = rng.choice(menu)
                if pick == "startbal":
                    events.append((rng.choice((1, 2)), ("startbal", 0x8000)))
                elif pick == "endbal":
                    events.append((rng.choice((1, 2)), ("endbal",)))
                elif pick == "nmi":
                    events.append((rng.choice((1, 2)), ("nmi",)))
                elif pick == "irq":
                    ctrl.request_irq(rng.choice((1, 2)), 0x8000)
                ctrl.tick(cycle, events)
            assert ctrl.phase in (
                ctl.IDLE,
                ctl.FLUSH_WAIT,
                ctl.SAVING,
                ctl.BROADCAST,
                ctl.BALANCING,
                ctl.INT_SERVICE,
                ctl.RESTORING,
            )
        except ctl.ProtocolViolation:
            pass  # the defined failure mode for malformed sequences
