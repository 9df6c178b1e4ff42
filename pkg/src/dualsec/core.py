"""Cycle-accurate model of one six-stage pipelined core.

Timing model: idealized six-stage pipeline (IF ID EX MEM WB CT), one
instruction fetched and at most one retired per cycle, full forwarding so
there are no data-hazard stalls, and all architectural effects applied at
retire.  An instruction fetched on cycle c retires on cycle c+5, so an
n-instruction straight-line program finishes on cycle n+5.  A taken CFI
squashes the younger in-flight instructions unless its target is the next
sequential word.

Integrity checking: a retiring chk loads hashedReg and clears the running
accumulator; every other retired instruction folds its word into the
accumulator (rotate-left-1 then XOR); a retiring CFI folds itself in and
then compares the 26-bit fold of the accumulator against hashedReg.  A
mismatch raises a precise integrity exception before the control transfer
takes effect and leaves the core halted in an attack-trap state.
"""

from __future__ import annotations

from dataclasses import dataclass

from .instrument import fold26, rotl32
from .isa import CFI_KINDS, InvalidOpcode, MemoryImage, WORD_MASK, decode

PIPELINE_DEPTH = 6

# decode cache: word -> (kind, rs, rt, rd, shamt, imm_signed, imm_raw, t26, is_cfi)
_DECODE: dict[int, tuple | None] = {}


def _decoded(word: int):
    hit = _DECODE.get(word)
    if hit is None and word not in _DECODE:
        inst = decode(word)
        if isinstance(inst, InvalidOpcode):
            hit = None
        else:
            hit = (
                inst.kind,
                inst.rs,
                inst.rt,
                inst.rd,
                inst.shamt,
                inst.signed_imm(),
                inst.imm16,
                inst.target26,
                inst.kind in CFI_KINDS,
            )
        _DECODE[word] = hit
    return hit


@dataclass
class Signals:
    """Per-cycle control lines from the controller."""

    hold: bool = False
    drain: bool = False
    pc_write: int | None = None
    pc_kind: str = ""  # vector | resume | broadcast_initiator | broadcast_victim | balance_exit


@dataclass
class Exception_:
    cycle: int
    kind: str  # integrity-exception | illegal-instruction
    pc: int
    cause: str = ""
    expected: int = 0
    got: int = 0


_SENTINEL_BAD_FETCH = -1


class Core:
    """One core: architectural state, pipeline and SecureD special registers."""

    def __init__(
        self,
        core_id: int,
        imem: MemoryImage | None,
        dmem: MemoryImage | None,
        integrity_enabled: bool = False,
        balancing_enabled: bool = False,
        trace: bool = False,
        record_retires: bool = False,
        record_checks: bool = False,
        leak_model: str = "hw",
    ):
        self.core_id = core_id
        self.imem = imem
        self.dmem = dmem
        self.integrity_enabled = integrity_enabled
        self.balancing_enabled = balancing_enabled
        # 'hw' leaks the written value's Hamming weight; 'hd' leaks the
        # register-transition Hamming distance.  Complement balancing cancels
        # HW exactly (HW(x)+HW(~x)=32) but not HD, since complementing both
        # the old and new value leaves their XOR unchanged.
        self._hd = leak_model == "hd"

        self.regs = [0] * 32
        self.pc = imem.entry() if imem is not None else 0
        self.hi = 0
        self.lo = 0
        self.hashed_reg = 0  # 26-bit loaded checksum
        self.inc_hashed = 0  # 32-bit running accumulator

        self.pipeline: list[list] = []  # [age, pc, word]
        self.idle = imem is None
        self.halted = False
        self.trapped = False
        self.in_interrupt = False
        self.await_balance = False
        self.await_resume = False
        self.balance_role: str | None = None
        self._skip_fetch = False

        self.retired = 0
        self.chk_retired = 0
        self.cfi_retired = 0
        self.halt_cycle: int | None = None
        self.exceptions: list[Exception_] = []
        self.events_out: list[tuple] = []  # protocol events for the controller

        # per-cycle leakage accumulators, read by the system after step()
        self.leak_reg = 0
        self.leak_mem = 0
        self.leak_fetch = 0

        self.trace_enabled = trace
        self.trace: list[tuple] = []
        self.record_retires = record_retires
        self.retire_log: list[tuple] = []
        self.record_checks = record_checks
        self.check_log: list[tuple] = []

        if dmem is not None:
            stacks = dmem.sections_of("stack")
            if stacks:
                self.regs[29] = stacks[0].end

        self._code_ranges = (
            [(s.start, s.end) for s in imem.sections_of("code")] if imem else []
        )

    # -- helpers -----------------------------------------------------------

    def _in_code(self, addr: int) -> bool:
        for start, end in self._code_ranges:
            if start <= addr < end:
                return True
        return False

    def active(self) -> bool:
        return not (self.idle or self.halted)

    def architectural_state(self) -> tuple:
        return (
            tuple(self.regs),
            self.pc,
            self.hi,
            self.lo,
            self.hashed_reg,
            self.inc_hashed,
        )

    def _trap(self, cycle: int, kind: str, pc: int, cause: str = "", expected: int = 0, got: int = 0):
        self.exceptions.append(Exception_(cycle, kind, pc, cause, expected, got))
        self.halted = True
        self.trapped = True
        self.halt_cycle = cycle
        self.pipeline.clear()
        if self.trace_enabled:
            self.trace.append((cycle, self.core_id, kind, pc, cause, expected, got))
        self.events_out.append(("trap", kind))

    # -- one clock cycle -----------------------------------------------------

    def step(self, cycle: int, sig: Signals) -> None:
        self.leak_reg = 0
        self.leak_mem = 0
        self.leak_fetch = 0

        if sig.pc_write is not None:
            self._apply_pc_write(sig.pc_write, sig.pc_kind)

        if sig.hold or self.halted or self.idle:
            return

        # advance pipeline ages; the oldest entry retires at age 6
        retiring = None
        for entry in self.pipeline:
            entry[0] += 1
        if self.pipeline and self.pipeline[0][0] >= PIPELINE_DEPTH:
            retiring = self.pipeline.pop(0)

        if retiring is not None:
            self._retire(cycle, retiring[1], retiring[2])
            if self.halted:
                return

        # fetch
        if (
            not sig.drain
            and not self.await_balance
            and not self.await_resume
            and not self._skip_fetch
            and not self.halted
        ):
            if self._in_code(self.pc):
                word = self.imem.word(self.pc)
                self.pipeline.append([1, self.pc, word])
                self.leak_fetch += word.bit_count()
                if self.trace_enabled:
                    self.trace.append((cycle, self.core_id, "fetch", self.pc, word))
            else:
                self.pipeline.append([1, self.pc, _SENTINEL_BAD_FETCH])
            self.pc = (self.pc + 4) & WORD_MASK
        self._skip_fetch = False

    def _apply_pc_write(self, addr: int, kind: str) -> None:
        self.pipeline.clear()
        self.pc = addr
        if kind == "vector":
            self.in_interrupt = True
        elif kind == "resume":
            self.await_resume = False
        elif kind == "broadcast_initiator":
            self.await_balance = False
            self.balance_role = "initiator"
            self._skip_fetch = True
        elif kind == "broadcast_victim":
            self.balance_role = "victim"
            self.halted = False
            self.trapped = False
            self._skip_fetch = True
        elif kind == "balance_exit":
            self.balance_role = None
            self.await_resume = False
            self._skip_fetch = True
        else:
            raise ValueError(f"unknown pc_write kind {kind!r}")

    # -- retirement ----------------------------------------------------------

    def _retire(self, cycle: int, pc: int, word: int) -> None:
        if word == _SENTINEL_BAD_FETCH:
            self._trap(cycle, "illegal-instruction", pc, cause="fetch-outside-code")
            return
        dec = _decoded(word)
        if dec is None:
            self._trap(cycle, "illegal-instruction", pc, cause="invalid-opcode")
            return
        kind, rs, rt, rd, shamt, imm_s, imm_u, t26, is_cfi = dec

        self.retired += 1
        if self.record_retires:
            self.retire_log.append((cycle, pc, word))

        if self.integrity_enabled:
            if kind == "chk":
                self.hashed_reg = t26
                self.inc_hashed = 0
                self.chk_retired += 1
                if self.trace_enabled:
                    self.trace.append((cycle, self.core_id, "chk", pc, t26))
                return
            acc = self.inc_hashed
            self.inc_hashed = (((acc << 1) | (acc >> 31)) ^ word) & WORD_MASK
            if is_cfi:
                got = fold26(self.inc_hashed)
                if self.record_checks:
                    self.check_log.append((cycle, pc, self.hashed_reg, got, self.inc_hashed))
                if got != self.hashed_reg:
                    self._trap(
                        cycle,
                        "integrity-exception",
                        pc,
                        expected=self.hashed_reg,
                        got=got,
                    )
                    return
        elif kind == "chk":
            self.chk_retired += 1
            return  # mode compatibility: chk behaves as a nop

        if is_cfi:
            self.cfi_retired += 1

        regs = self.regs
        if kind == "add":
            self._write_reg(rd, (regs[rs] + regs[rt]) & WORD_MASK)
        elif kind == "addi":
            self._write_reg(rt, (regs[rs] + imm_s) & WORD_MASK)
        elif kind == "sub":
            self._write_reg(rd, (regs[rs] - regs[rt]) & WORD_MASK)
        elif kind == "and":
            self._write_reg(rd, regs[rs] & regs[rt])
        elif kind == "andi":
            self._write_reg(rt, regs[rs] & imm_u)
        elif kind == "or":
            self._write_reg(rd, regs[rs] | regs[rt])
        elif kind == "ori":
            self._write_reg(rt, regs[rs] | imm_u)
        elif kind == "xor":
            self._write_reg(rd, regs[rs] ^ regs[rt])
        elif kind == "xori":
            self._write_reg(rt, regs[rs] ^ imm_u)
        elif kind == "nor":
            self._write_reg(rd, (~(regs[rs] | regs[rt])) & WORD_MASK)
        elif kind == "sll":
            self._write_reg(rd, (regs[rt] << shamt) & WORD_MASK)
        elif kind == "srl":
            self._write_reg(rd, regs[rt] >> shamt)
        elif kind == "slt":
            self._write_reg(rd, 1 if _signed(regs[rs]) < _signed(regs[rt]) else 0)
        elif kind == "slti":
            self._write_reg(rt, 1 if _signed(regs[rs]) < imm_s else 0)
        elif kind == "lui":
            self._write_reg(rt, (imm_u << 16) & WORD_MASK)
        elif kind == "lw":
            self._load(cycle, pc, rt, (regs[rs] + imm_s) & WORD_MASK)
        elif kind == "sw":
            self._store(cycle, pc, (regs[rs] + imm_s) & WORD_MASK, regs[rt])
        elif kind == "mult":
            prod = _signed(regs[rs]) * _signed(regs[rt])
            self.hi = (prod >> 32) & WORD_MASK
            self.lo = prod & WORD_MASK
        elif kind == "mfhi":
            self._write_reg(rd, self.hi)
        elif kind == "mflo":
            self._write_reg(rd, self.lo)
        elif kind == "syscall":
            if self.trace_enabled:
                self.trace.append((cycle, self.core_id, "syscall", regs[2], regs[4]))
        elif kind == "beq":
            if regs[rs] == regs[rt]:
                self._redirect(pc, (pc + 4 + (imm_s << 2)) & WORD_MASK)
        elif kind == "bne":
            if regs[rs] != regs[rt]:
                self._redirect(pc, (pc + 4 + (imm_s << 2)) & WORD_MASK)
        elif kind == "j":
            self._redirect(pc, t26 << 2)
        elif kind == "jal":
            self._write_reg(31, (pc + 4) & WORD_MASK)
            self._redirect(pc, t26 << 2)
        elif kind == "jr":
            target = regs[rs]
            if target % 4:
                self._trap(cycle, "illegal-instruction", pc, cause="misaligned-jump")
                return
            self._redirect(pc, target)
        elif kind == "halt":
            self.halted = True
            self.halt_cycle = cycle
            self.pipeline.clear()
            self.events_out.append(("halted",))
            if self.trace_enabled:
                self.trace.append((cycle, self.core_id, "halted", pc))
        elif kind == "startBal":
            if self.balancing_enabled:
                target = (t26 << 2) if t26 else (pc + 4) & WORD_MASK
                self.await_balance = True
                self.pipeline.clear()
                self.events_out.append(("startbal", target))
            # otherwise a nop-CFI: execution falls through
        elif kind == "endBal":
            if self.balancing_enabled:
                if self.balance_role == "victim":
                    self.await_resume = True
                    self.pipeline.clear()
                else:
                    self.events_out.append(("endbal",))
                    self.balance_role = None
        elif kind == "iret":
            if not self.in_interrupt:
                self._trap(cycle, "illegal-instruction", pc, cause="iret-outside-interrupt")
                return
            self.in_interrupt = False
            self.await_resume = True
            self.pipeline.clear()
            self.events_out.append(("nmi",))
        elif kind == "chk":
            pass  # integrity disabled; already counted
        else:
            raise AssertionError(f"unhandled kind {kind}")

        if self.trace_enabled and kind not in ("halt", "startBal", "endBal", "iret"):
            self.trace.append((cycle, self.core_id, "retire", pc, word))

    def _redirect(self, pc: int, target: int) -> None:
        if target == (pc + 4) & WORD_MASK and self.pipeline:
            return  # in-flight stream is already the target stream
        self.pipeline.clear()
        self.pc = target

    def _write_reg(self, r: int, value: int) -> None:
        if r == 0:
            return  # register 0 is hardwired to zero
        value &= WORD_MASK
        if self._hd:
            self.leak_reg += (self.regs[r] ^ value).bit_count()
        else:
            self.leak_reg += value.bit_count()
        self.regs[r] = value

    def _load(self, cycle: int, pc: int, rt: int, addr: int) -> None:
        if addr % 4:
            self._trap(cycle, "illegal-instruction", pc, cause="misaligned-load")
            return
        if self.dmem is None or self.dmem.section_at(addr) is None:
            self._trap(cycle, "illegal-instruction", pc, cause="bad-load-address")
            return
        value = self.dmem.word(addr)
        self.leak_mem += value.bit_count()
        if self.trace_enabled:
            self.trace.append((cycle, self.core_id, "mem-read", addr, value))
        self._write_reg(rt, value)

    def _store(self, cycle: int, pc: int, addr: int, value: int) -> None:
        if addr % 4:
            self._trap(cycle, "illegal-instruction", pc, cause="misaligned-store")
            return
        sec = self.dmem.section_at(addr) if self.dmem is not None else None
        if sec is None:
            self._trap(cycle, "illegal-instruction", pc, cause="bad-store-address")
            return
        self.leak_mem += value.bit_count()
        self.dmem.words[addr] = value
        if self.trace_enabled:
            self.trace.append((cycle, self.core_id, "mem-write", addr, value))


def _signed(value: int) -> int:
    return value - 0x100000000 if value & 0x80000000 else value
