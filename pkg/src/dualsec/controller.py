"""Lock-step balancing and interrupt controller.

Orchestrates the balance entry/exit protocol and interrupt routing between
the two cores.  Every phase is cycle-counted; one full balance entry+exit
charges exactly 748 cycles, decomposed as

    flush pipelines             6
    store register file       320     (32 registers x 10)
    store PC, HI, LO           30
    store incHashed, hashed    20
    interrupt-to-switch         1     (the simultaneous PC broadcast)
    restore register file     320
    restore PC, HI, LO         30
    restore incHashed, hashed  20
    exit                        1     (the resume PC write)

The preempted core's 37 registers are written to its own stack, one word
per 10 cycles, descending from its stack pointer in the order r0..r31, PC,
HI, LO, incHashed, hashed; restore reads the same words back.  After the
save completes the live stack pointer is lowered past the saved frame so an
interrupt routine fired during balancing cannot clobber it.

Interrupt servicing works the same way at smaller cost: flush (6), one
cycle to switch the PC to the vector, and one cycle to restore the PC when
the routine's iret sends its NMI.  hashedReg/incHashedReg are stashed and
restored around the service window so an interrupt inside a basic block
does not corrupt the integrity check.  An interrupt during balancing drains
both cores, holds the non-target core, and on the NMI rewrites both PCs on
the same clock cycle so lock-step resumes with zero skew.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import Core, Signals

PER_REGISTER_CYCLES = 10
FLUSH_CYCLES = 6
SWITCH_CYCLES = 1
EXIT_CYCLES = 1
CONTEXT_SLOTS = 37  # r0..r31, PC, HI, LO, incHashed, hashed
SAVE_CYCLES = CONTEXT_SLOTS * PER_REGISTER_CYCLES  # 370
CONTEXT_BYTES = 4 * CONTEXT_SLOTS

ROUND_TRIP_CYCLES = FLUSH_CYCLES + 2 * SAVE_CYCLES + SWITCH_CYCLES + EXIT_CYCLES  # 748

IDLE = "IDLE"
FLUSH_WAIT = "FLUSH_WAIT"
SAVING = "SAVING"
BROADCAST = "BROADCAST"
BALANCING = "BALANCING"
INT_SERVICE = "INT_SERVICE"
RESTORING = "RESTORING"


class ProtocolViolation(Exception):
    pass


@dataclass
class AccountingRow:
    op: int
    op_kind: str  # balance | irq
    row: str
    cycles: int
    start: int
    end: int


class Controller:
    def __init__(self, core1: Core, core2: Core):
        self.core1 = core1
        self.core2 = core2
        self.phase = IDLE
        self.countdown = 0
        self.queue: list[tuple] = []
        self.cur: dict = {}
        self.accounting: list[AccountingRow] = []
        self.transitions: list[tuple] = []  # (cycle, from, to, countdown)
        self.balance_windows: list[tuple] = []  # (op, broadcast cycle, endBal cycle)
        self.saved_frames: list[dict] = []  # audit copies of saved contexts
        self.notes: list[str] = []
        self._op_seq = 0

    def core(self, core_id: int) -> Core:
        return self.core1 if core_id == 1 else self.core2

    def other_id(self, core_id: int) -> int:
        return 2 if core_id == 1 else 1

    def request_irq(self, core_id: int, vector: int) -> None:
        self.queue.append(("irq", core_id, vector))

    def busy(self) -> bool:
        return self.phase != IDLE or bool(self.queue)

    # ------------------------------------------------------------------

    def _goto(self, cycle: int, phase: str, countdown: int = 0) -> None:
        self.transitions.append((cycle, self.phase, phase, countdown))
        self.phase = phase
        self.countdown = countdown

    def _charge(self, row: str, cycles: int, start: int, end: int) -> None:
        self.accounting.append(
            AccountingRow(self.cur["op"], self.cur["kind"], row, cycles, start, end)
        )

    def tick(self, cycle: int, events: list[tuple]) -> tuple[Signals, Signals]:
        """Advance one clock; returns the control lines for both cores."""
        sig = {1: Signals(), 2: Signals()}
        for core_id, ev in events:
            self._event(cycle, core_id, ev)

        if self.phase == IDLE and self.queue:
            self._try_start(cycle)
        elif self.phase == BALANCING and self.queue and self.queue[0][0] == "irq":
            op = self.queue.pop(0)
            self._start_irq(cycle, op[1], op[2], during_balancing=True)

        phase = self.phase
        if phase == FLUSH_WAIT:
            for cid in self.cur["drain"]:
                sig[cid].drain = True
            self.countdown -= 1
            if self.countdown == 0:
                self._charge("flush-pipelines", FLUSH_CYCLES, cycle - FLUSH_CYCLES + 1, cycle)
                if self.cur["kind"] == "balance":
                    self._begin_save(cycle)
                else:
                    self.cur["vector_at"] = cycle + 1
                    self._goto(cycle, INT_SERVICE)

        elif phase == SAVING:
            sig[self.cur["victim"]].drain = True
            self._save_slot()
            self.countdown -= 1
            if self.countdown == 0:
                self._finish_save()
                self._goto(cycle, BROADCAST)
                self.cur["broadcast_at"] = cycle + 1

        elif phase == BROADCAST:
            entry = self.cur["entry"]
            initiator, victim = self.cur["initiator"], self.cur["victim"]
            sig[initiator].pc_write = entry
            sig[initiator].pc_kind = "broadcast_initiator"
            sig[victim].pc_write = entry
            sig[victim].pc_kind = "broadcast_victim"
            self._charge("interrupt-to-switch", SWITCH_CYCLES, cycle, cycle)
            self.cur["balance_window_start"] = cycle
            self._goto(cycle, BALANCING)

        elif phase == RESTORING:
            # countdown runs SAVE_CYCLES+1 .. 1: the first SAVE_CYCLES ticks
            # read back the frame, the final tick performs the exit PC write
            if self.countdown > 1:
                self._restore_slot()
            else:
                self._exit_balance(cycle, sig)
            self.countdown -= 1
            if self.countdown == 0:
                self._goto(cycle, IDLE)
                self.cur = {}

        elif phase == INT_SERVICE:
            held = self.cur.get("held")
            if self.cur.get("vector_at") == cycle:
                del self.cur["vector_at"]
                target_id = self.cur["target"]
                target = self.core(target_id)
                self.cur["resume_pc"] = target.pc
                self.cur["stash"] = (target.hashed_reg, target.inc_hashed)
                if held:
                    self.cur["held_resume_pc"] = self.core(held).pc
                sig[target_id].pc_write = self.cur["vector"]
                sig[target_id].pc_kind = "vector"
                self._charge("interrupt-to-switch", SWITCH_CYCLES, cycle, cycle)
            elif self.cur.get("resume_at") == cycle:
                self._exit_irq(cycle, sig)
                held = None  # resuming tick: nobody is held
            if held:
                sig[held].hold = True

        return sig[1], sig[2]

    # -- event handling -------------------------------------------------

    def _event(self, cycle: int, core_id: int, ev: tuple) -> None:
        kind = ev[0]
        if kind == "startbal":
            self.queue.append(("balance", core_id, ev[1]))
        elif kind == "endbal":
            if self.phase != BALANCING:
                raise ProtocolViolation(
                    f"endBal retired on core{core_id} at cycle {cycle - 1} outside balancing"
                )
            self.balance_windows.append(
                (self.cur["op"], self.cur["balance_window_start"], cycle - 1)
            )
            self.cur["restore_start"] = cycle
            self._goto(cycle, RESTORING, SAVE_CYCLES + 1)
        elif kind == "nmi":
            if self.phase != INT_SERVICE or core_id != self.cur.get("target"):
                raise ProtocolViolation(
                    f"unexpected NMI from core{core_id} at cycle {cycle - 1}"
                )
            self.cur["resume_at"] = cycle
        # 'halted' and 'trap' need no controller action

    def _try_start(self, cycle: int) -> None:
        op = self.queue[0]
        if op[0] == "irq":
            target = self.core(op[1])
            if target.in_interrupt:
                return  # masked: deferred until iret
            self.queue.pop(0)
            if not target.active():
                self.notes.append(f"cycle {cycle}: irq to inactive core{op[1]} dropped")
                return
            self._start_irq(cycle, op[1], op[2], during_balancing=False)
        else:
            self.queue.pop(0)
            self._start_balance(cycle, op[1], op[2])

    # -- balancing ------------------------------------------------------

    def _start_balance(self, cycle: int, initiator: int, entry: int) -> None:
        victim = self.other_id(initiator)
        vcore = self.core(victim)
        if vcore.dmem is None or not vcore.dmem.sections_of("stack"):
            raise ProtocolViolation("balancing requires a stack on the victim core")
        sp = vcore.regs[29]
        stack = vcore.dmem.sections_of("stack")[0]
        if sp - CONTEXT_BYTES < stack.start:
            raise ProtocolViolation("victim stack too small for the context frame")
        self._op_seq += 1
        self.cur = {
            "op": self._op_seq,
            "kind": "balance",
            "initiator": initiator,
            "victim": victim,
            "entry": entry,
            "drain": (victim,),
            "sp": sp,
        }
        self._goto(cycle, FLUSH_WAIT, FLUSH_CYCLES)

    def _begin_save(self, cycle: int) -> None:
        vcore = self.core(self.cur["victim"])
        self.cur["ctx"] = (
            list(vcore.regs)
            + [vcore.pc, vcore.hi, vcore.lo, vcore.inc_hashed, vcore.hashed_reg]
        )
        self.cur["victim_was_halted"] = vcore.halted
        self.cur["victim_was_trapped"] = vcore.trapped
        self.cur["save_start"] = cycle + 1
        self.saved_frames.append(
            {"op": self.cur["op"], "sp": self.cur["sp"], "ctx": list(self.cur["ctx"])}
        )
        self._goto(cycle, SAVING, SAVE_CYCLES)

    def _save_slot(self) -> None:
        pos = SAVE_CYCLES - self.countdown  # 0-based cycle inside the save window
        if pos % PER_REGISTER_CYCLES == PER_REGISTER_CYCLES - 1:
            slot = pos // PER_REGISTER_CYCLES
            vcore = self.core(self.cur["victim"])
            vcore.dmem.words[self.cur["sp"] - 4 * (slot + 1)] = self.cur["ctx"][slot]

    def _finish_save(self) -> None:
        start = self.cur["save_start"]
        self._charge("store-regfile", 320, start, start + 319)
        self._charge("store-pc-hi-lo", 30, start + 320, start + 349)
        self._charge("store-inc-hashed-hashed", 20, start + 350, start + 369)
        # protect the saved frame from pushes by interrupt routines
        vcore = self.core(self.cur["victim"])
        vcore.regs[29] = (self.cur["sp"] - CONTEXT_BYTES) & 0xFFFFFFFF

    def _restore_slot(self) -> None:
        pos = SAVE_CYCLES + 1 - self.countdown
        if pos % PER_REGISTER_CYCLES != PER_REGISTER_CYCLES - 1:
            return
        slot = pos // PER_REGISTER_CYCLES
        vcore = self.core(self.cur["victim"])
        value = vcore.dmem.word(self.cur["sp"] - 4 * (slot + 1))
        if slot < 32:
            if slot != 0:
                vcore.regs[slot] = value
        elif slot == 32:
            self.cur["resume_pc"] = value
        elif slot == 33:
            vcore.hi = value
        elif slot == 34:
            vcore.lo = value
        elif slot == 35:
            vcore.inc_hashed = value
        else:
            vcore.hashed_reg = value
        if slot == CONTEXT_SLOTS - 1:
            start = self.cur["restore_start"]
            self._charge("restore-regfile", 320, start, start + 319)
            self._charge("restore-pc-hi-lo", 30, start + 320, start + 349)
            self._charge("restore-inc-hashed-hashed", 20, start + 350, start + 369)

    def _exit_balance(self, cycle: int, sig: dict) -> None:
        victim = self.cur["victim"]
        vcore = self.core(victim)
        vcore.halted = self.cur["victim_was_halted"]
        vcore.trapped = self.cur["victim_was_trapped"]
        vcore.balance_role = None
        vcore.await_resume = False
        if not vcore.halted:
            sig[victim].pc_write = self.cur["resume_pc"]
            sig[victim].pc_kind = "balance_exit"
        else:
            vcore.pc = self.cur["resume_pc"]
        self._charge("exit", EXIT_CYCLES, cycle, cycle)

    # -- interrupts -------------------------------------------------------

    def _start_irq(self, cycle: int, core_id: int, vector: int, during_balancing: bool) -> None:
        self._op_seq += 1
        self.cur = {
            "op": self._op_seq,
            "kind": "irq",
            "target": core_id,
            "vector": vector,
            "drain": (1, 2) if during_balancing else (core_id,),
            "during_balancing": during_balancing,
            "held": self.other_id(core_id) if during_balancing else None,
            "bal_ctx": dict(self.cur) if during_balancing else None,
        }
        self._goto(cycle, FLUSH_WAIT, FLUSH_CYCLES)

    def _exit_irq(self, cycle: int, sig: dict) -> None:
        del self.cur["resume_at"]
        target_id = self.cur["target"]
        target = self.core(target_id)
        target.hashed_reg, target.inc_hashed = self.cur["stash"]
        sig[target_id].pc_write = self.cur["resume_pc"]
        sig[target_id].pc_kind = "resume"
        held = self.cur.get("held")
        if held is not None:
            sig[held].pc_write = self.cur["held_resume_pc"]
            sig[held].pc_kind = "resume"
        self._charge("exit", EXIT_CYCLES, cycle, cycle)
        if self.cur["during_balancing"]:
            bal = self.cur["bal_ctx"]
            self._goto(cycle, BALANCING)
            self.cur = bal
        else:
            self._goto(cycle, IDLE)
            self.cur = {}
