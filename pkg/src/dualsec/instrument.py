"""Compile-time integrity and balancing instrumentation.

Splits a program into basic blocks, prepends a `chk` carrying each block's
checksum, guarantees every block ends in a control-flow instruction, places
balancing markers, statically verifies the complement-closure discipline of
a balanced region, and derives the complementary memory image.

Checksum: the 32-bit accumulator folds each word in order with

    acc <- rotl32(acc, 1) XOR word

and the final value is folded to 26 bits with

    fold26(acc) = (acc & 0x03FFFFFF) XOR (acc >> 26)

so it fits the chk instruction's wide immediate.  A single bit flip in any
word flips exactly one accumulator bit (rotation just relocates it), and
fold26 maps one flipped bit to one flipped checksum bit, so every single-bit
corruption of a block is guaranteed to change its checksum.  The chk word is
excluded from its own block's checksum: the runtime accumulator restarts
when chk retires, and a self-referential payload would be unsatisfiable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .isa import (
    CFI_KINDS,
    Instruction,
    InvalidOpcode,
    MemoryImage,
    Stmt,
    SymbolTable,
    WORD_MASK,
    assemble_stmts,
    assemble_with_layout,
    decode,
    emit_program,
    parse_program,
)

CHECKSUM_BITS = 26
CHECKSUM_MASK = (1 << CHECKSUM_BITS) - 1


class InstrumentError(Exception):
    pass


def rotl32(value: int, n: int = 1) -> int:
    value &= WORD_MASK
    return ((value << n) | (value >> (32 - n))) & WORD_MASK


def fold26(acc: int) -> int:
    return ((acc & CHECKSUM_MASK) ^ (acc >> CHECKSUM_BITS)) & CHECKSUM_MASK


def accumulate32(words) -> int:
    """32-bit pre-fold accumulator over a word sequence, oldest first."""
    acc = 0
    for w in words:
        acc = rotl32(acc) ^ (w & WORD_MASK)
    return acc


def compute_checksum(words) -> int:
    if not words:
        raise InstrumentError("checksum of empty word sequence")
    return fold26(accumulate32(words))


# ---------------------------------------------------------------------------
# control-flow graph


@dataclass
class BasicBlock:
    start: int  # address of the first word (the chk, once instrumented)
    words: list[int]  # all words including a leading chk if present
    has_chk: bool
    cfi_kind: str | None  # kind of the final word if it is a CFI

    @property
    def body_words(self) -> list[int]:
        return self.words[1:] if self.has_chk else self.words

    @property
    def end(self) -> int:
        return self.start + 4 * len(self.words)

    @property
    def size(self) -> int:
        return len(self.words)

    def checksum(self) -> int:
        return compute_checksum(self.body_words)


@dataclass
class ControlFlowGraph:
    entry: int
    blocks: list[BasicBlock]
    edges: dict[int, list[int]]  # block start -> successor block starts

    def block_at(self, addr: int) -> BasicBlock:
        for b in self.blocks:
            if b.start <= addr < b.end:
                return b
        raise KeyError(f"no block contains {addr:#010x}")


def _decode_code(img: MemoryImage) -> dict[int, Instruction]:
    insts: dict[int, Instruction] = {}
    for sec in img.sections_of("code"):
        for addr in range(sec.start, sec.end, 4):
            inst = decode(img.word(addr))
            if isinstance(inst, InvalidOpcode):
                raise InstrumentError(
                    f"invalid opcode {img.word(addr):#010x} at {addr:#010x}"
                )
            insts[addr] = inst
    return insts


def _cfi_targets(inst: Instruction, addr: int, sym: SymbolTable | None) -> list[int]:
    kind = inst.kind
    if kind in ("beq", "bne"):
        return [addr + 4 + (inst.signed_imm() << 2), addr + 4]
    if kind in ("j", "jal"):
        return [inst.target26 << 2]
    if kind == "jr":
        if sym is None or addr not in sym.jtargets:
            raise InstrumentError(
                f"indirect jump at {addr:#010x} has no .jtargets annotation"
            )
        return list(sym.jtargets[addr])
    if kind == "startBal":
        return [inst.target26 << 2 if inst.target26 else addr + 4]
    if kind == "endBal":
        return [addr + 4]
    return []  # halt, iret


def build_cfg(img: MemoryImage, sym: SymbolTable | None = None) -> ControlFlowGraph:
    """Partition code into basic blocks.

    Boundaries sit at every code-range start, every branch/jump target and
    every instruction following a CFI; a jr must carry a .jtargets
    annotation or the build fails.
    """
    insts = _decode_code(img)
    ranges = [(s.start, s.end) for s in img.sections_of("code")]
    if not ranges:
        raise InstrumentError("image has no code section")
    boundaries: set[int] = {start for start, _ in ranges}
    for addr, inst in insts.items():
        if inst.kind in CFI_KINDS:
            boundaries.add(addr + 4)
            for t in _cfi_targets(inst, addr, sym):
                if insts.get(t) is None and inst.kind != "halt":
                    # branching outside code is legal to build but will trap
                    continue
                boundaries.add(t)

    blocks: list[BasicBlock] = []
    edges: dict[int, list[int]] = {}
    for start, end in ranges:
        cut = sorted(b for b in boundaries if start <= b < end) + [end]
        for lo, hi in zip(cut, cut[1:]):
            if lo == hi:
                continue
            words = [img.word(a) for a in range(lo, hi, 4)]
            first = insts[lo]
            last_addr = hi - 4
            last = insts[last_addr]
            cfi = last.kind if last.kind in CFI_KINDS else None
            block = BasicBlock(lo, words, has_chk=(first.kind == "chk"), cfi_kind=cfi)
            blocks.append(block)
            if cfi:
                edges[lo] = _cfi_targets(last, last_addr, sym)
            else:
                edges[lo] = [hi]  # fall-through
    blocks.sort(key=lambda b: b.start)
    return ControlFlowGraph(entry=ranges[0][0], blocks=blocks, edges=edges)


# ---------------------------------------------------------------------------
# chk insertion


@dataclass
class InstrumentResult:
    source: str
    image: MemoryImage
    symbols: SymbolTable
    report: list[dict]


_BRANCH_OPS = {"beq": 2, "bne": 2, "j": 0, "jal": 0, "startBal": 0}


def _is_label_token(tok: str) -> bool:
    return bool(tok) and not tok[0].isdigit() and not tok.startswith(("-", "0x", "0X"))


def insert_chk(source: str) -> InstrumentResult:
    """Insert a checksum-carrying chk at the head of every basic block.

    Fall-through blocks gain an explicit `j` to their successor; branch
    targets end up on the chk word because the target labels move with the
    block head.  The rewritten assembly re-assembles to the final image.
    """
    program = parse_program(source)
    if any(s.kind == "instr" and s.mnemonic == "chk" for s in program):
        raise InstrumentError("source already instrumented (chk present)")

    img0, sym0, placed0 = assemble_stmts(program)
    cfg0 = build_cfg(img0, sym0)
    addr_to_stmt = {addr: s for addr, s in placed0}
    jr_anchor_labels = {
        s.jlabel for s in program if s.kind == "jtargets"
    }

    label_at: dict[int, str] = {}
    for name, addr in sorted(sym0.labels.items()):
        if name not in jr_anchor_labels:
            label_at.setdefault(addr, name)

    def label_for(addr: int) -> str:
        if addr not in label_at:
            name = f"__bb_{addr:x}"
            label_at[addr] = name
            target = addr_to_stmt.get(addr)
            if target is None:
                raise InstrumentError(f"branch target {addr:#010x} is not code")
            target.labels.append(name)
        return label_at[addr]

    # make every branch operand symbolic so targets survive relayout
    for addr, s in placed0:
        if s.kind != "instr" or s.mnemonic not in _BRANCH_OPS:
            continue
        if s.mnemonic == "startBal" and not s.operands:
            continue
        opidx = _BRANCH_OPS[s.mnemonic]
        tok = s.operands[opidx]
        if not _is_label_token(tok):
            inst = decode(img0.word(addr))
            targets = _cfi_targets(inst, addr, sym0)
            s.operands[opidx] = label_for(targets[0])

    # insert chk placeholders at block heads, jumps on fall-through exits;
    # block-head labels move onto the chk, except jr anchors which must keep
    # naming the jr instruction itself
    before: dict[int, list[Stmt]] = {}
    after: dict[int, list[Stmt]] = {}
    for block in cfg0.blocks:
        head = addr_to_stmt[block.start]
        moved = [lab for lab in head.labels if lab not in jr_anchor_labels]
        kept = [lab for lab in head.labels if lab in jr_anchor_labels]
        if kept and any(lab in moved for lab in kept):
            raise InstrumentError(f"label mixes jr anchor and branch target at {block.start:#x}")
        chk_stmt = Stmt(head.lineno, moved, "instr", mnemonic="chk", operands=["0x0"])
        head.labels[:] = kept
        before.setdefault(id(head), []).append(chk_stmt)
        if block.cfi_kind is None:
            succ = cfg0.edges[block.start][0]
            if succ not in addr_to_stmt:
                raise InstrumentError(
                    f"block at {block.start:#010x} falls through past end of code"
                )
            tail = addr_to_stmt[block.start + 4 * (block.size - 1)]
            jump = Stmt(tail.lineno, [], "instr", mnemonic="j", operands=[label_for(succ)])
            after.setdefault(id(tail), []).append(jump)

    rewritten: list[Stmt] = []
    for s in program:
        rewritten.extend(before.get(id(s), []))
        rewritten.append(s)
        rewritten.extend(after.get(id(s), []))

    # compute payloads against the final layout and patch the chk operands
    img1, sym1, placed1 = assemble_stmts(rewritten)
    cfg1 = build_cfg(img1, sym1)
    if len(cfg1.blocks) != len(cfg0.blocks):
        raise InstrumentError("instrumentation changed the block structure")
    fallthrough_idx = {i for i, b in enumerate(cfg0.blocks) if b.cfi_kind is None}
    stmt_at = {addr: s for addr, s in placed1}
    report: list[dict] = []
    seen: dict[int, int] = {}
    for i, block in enumerate(cfg1.blocks):
        if not block.has_chk:
            raise InstrumentError(f"block at {block.start:#010x} missing chk")
        if block.cfi_kind is None:
            raise InstrumentError(f"block at {block.start:#010x} missing CFI")
        payload = compute_checksum(block.body_words)
        stmt_at[block.start].operands = [f"{payload:#x}"]
        row = {
            "addr": block.start,
            "size": block.size,
            "checksum": payload,
            "cfi": block.cfi_kind,
            "inserted_jump": i in fallthrough_idx,
        }
        if payload in seen:
            row["collision_with"] = seen[payload]
        seen.setdefault(payload, block.start)
        report.append(row)

    text = emit_program(rewritten)
    img2, sym2, _ = assemble_with_layout(text)
    return InstrumentResult(source=text, image=img2, symbols=sym2, report=report)


def recompute_report(img: MemoryImage, sym: SymbolTable | None = None) -> list[dict]:
    """Independent recomputation of every block checksum from a final binary."""
    rows = []
    for block in build_cfg(img, sym).blocks:
        inst = decode(block.words[0])
        payload = inst.target26 if not isinstance(inst, InvalidOpcode) and inst.kind == "chk" else None
        rows.append(
            {
                "addr": block.start,
                "size": block.size,
                "payload": payload,
                "recomputed": compute_checksum(block.body_words) if block.has_chk else None,
                "cfi": block.cfi_kind,
            }
        )
    return rows


def write_report_jsonl(report: list[dict], path) -> None:
    with open(path, "w") as fh:
        for row in report:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# balancing markers


def mark_balancing(source: str, start_label: str, end_label: str) -> str:
    """Insert startBal/endBal around [start_label, end_label).

    The region must be single-entry: nothing but the inserted startBal may
    branch to start_label.  Nested or repeated regions are rejected.
    """
    stmts = parse_program(source)
    for s in stmts:
        if s.kind == "instr" and s.mnemonic in ("startBal", "endBal"):
            raise InstrumentError("source already contains balancing markers")

    def find(label: str) -> int:
        for i, s in enumerate(stmts):
            if label in s.labels:
                if s.kind not in ("instr",):
                    raise InstrumentError(f"label {label!r} must mark an instruction")
                return i
        raise InstrumentError(f"label {label!r} not found")

    si = find(start_label)
    ei = find(end_label)
    if ei <= si:
        raise InstrumentError("end label does not follow start label")
    for s in stmts:
        if s.kind != "instr":
            continue
        if s.mnemonic in _BRANCH_OPS and start_label in s.operands:
            raise InstrumentError(f"region is not single-entry: branch to {start_label!r}")
    stmts.insert(si, Stmt(stmts[si].lineno, [], "instr", "startBal", [start_label]))
    stmts.insert(ei + 1, Stmt(stmts[ei + 1].lineno, [], "instr", "endBal", []))
    return emit_program(stmts)


def find_balanced_region(img: MemoryImage) -> tuple[int, int] | None:
    """Locate the (entry, endBal) address pair of the image's balanced region."""
    starts, ends = [], []
    for sec in img.sections_of("code"):
        for addr in range(sec.start, sec.end, 4):
            inst = decode(img.word(addr))
            if isinstance(inst, InvalidOpcode):
                continue
            if inst.kind == "startBal":
                entry = inst.target26 << 2 if inst.target26 else addr + 4
                starts.append((addr, entry))
            elif inst.kind == "endBal":
                ends.append(addr)
    if not starts and not ends:
        return None
    if len(starts) != 1 or len(ends) != 1:
        raise InstrumentError("exactly one balanced region is supported")
    entry = starts[0][1]
    end = ends[0]
    if not entry <= end:
        raise InstrumentError("balanced region entry lies after its endBal")
    return entry, end


# ---------------------------------------------------------------------------
# complement-closure verification

UNDEF = ("undef",)
CONFLICT = ("conflict",)
COMP = ("comp",)


def _plain(const: int | None = None):
    return ("plain", const)


@dataclass
class ClosureReport:
    ok: bool
    flags: list[tuple[int, str, str]] = field(default_factory=list)  # addr, mnemonic, reason

    def pretty(self) -> str:
        if self.ok:
            return "complement closure: OK"
        lines = ["complement closure: FAILED"]
        lines += [f"  {addr:#010x} {mn}: {why}" for addr, mn, why in self.flags]
        return "\n".join(lines)


class _RegionChecker:
    """Abstract interpretation of register tags over a balanced region.

    Tags:
        ('undef',)            never written inside the region
        ('plain', c)          same data-independent value on both cores
        ('comp',)             bitwise-complement pair between the cores
        ('masked', k)         low-k-bit complement pair, upper bits zero
        ('shifted', k, s)     masked(k) shifted left by s bits
        ('tabaddr', base, k)  base + 4*masked(k) table element address
        ('conflict',)         joined from incompatible paths
    """

    def __init__(self, img: MemoryImage, entry: int, end: int, entry_comp=frozenset()):
        self.img = img
        self.entry = entry
        self.end = end  # address of endBal (inclusive region bound)
        self.entry_comp = frozenset(entry_comp)
        self.flags: list[tuple[int, str, str]] = []
        self.insts: dict[int, Instruction] = {}
        for addr in range(entry, end + 4, 4):
            inst = decode(img.word(addr))
            if isinstance(inst, InvalidOpcode):
                raise InstrumentError(f"invalid opcode inside region at {addr:#010x}")
            self.insts[addr] = inst

    def flag(self, addr: int, reason: str):
        inst = self.insts[addr]
        entry = (addr, inst.kind, reason)
        if entry not in self.flags:
            self.flags.append(entry)

    # -- block structure -------------------------------------------------

    def _blocks(self) -> tuple[list[int], dict[int, list[int]]]:
        bounds = {self.entry}
        for addr, inst in self.insts.items():
            if inst.kind not in CFI_KINDS:
                continue
            if addr + 4 in self.insts:
                bounds.add(addr + 4)
            if inst.kind in ("jr", "endBal"):
                continue  # jr flagged below; endBal is the region exit
            for t in _cfi_targets(inst, addr, None):
                if not (self.entry <= t <= self.end):
                    self.flag(addr, f"branch leaves the region ({t:#010x})")
                else:
                    bounds.add(t)
        starts = sorted(bounds)
        succs: dict[int, list[int]] = {}
        for i, start in enumerate(starts):
            limit = starts[i + 1] if i + 1 < len(starts) else self.end + 4
            addr = start
            while addr < limit - 4 and self.insts[addr].kind not in CFI_KINDS:
                addr += 4
            last = addr
            inst = self.insts[last]
            if inst.kind == "endBal":
                succs[start] = []
            elif inst.kind == "jr":
                succs[start] = []
            elif inst.kind in CFI_KINDS:
                succs[start] = [
                    t for t in _cfi_targets(inst, last, None) if self.entry <= t <= self.end
                ]
            else:
                succs[start] = [limit] if limit <= self.end else []
            if inst.kind in ("jal", "jr", "syscall", "iret", "halt"):
                self.flag(last, "not permitted inside a balanced region")
            if inst.kind == "startBal":
                self.flag(last, "nested balancing region")
        return starts, succs

    # -- dataflow ---------------------------------------------------------

    def run(self) -> ClosureReport:
        starts, succs = self._blocks()
        block_set = set(starts)
        init = [UNDEF] * 32
        init[0] = _plain(0)
        for r in self.entry_comp:
            init[r] = COMP
        states: dict[int, list] = {self.entry: init + [UNDEF, UNDEF]}  # + hi, lo
        work = [self.entry]
        while work:
            start = work.pop()
            state = list(states[start])
            addr = start
            while addr <= self.end:
                inst = self.insts[addr]
                self._step(state, inst, addr)
                if inst.kind in CFI_KINDS or (addr + 4) in block_set:
                    break
                addr += 4
            for succ in succs.get(start, []):
                joined = self._join(states.get(succ), state)
                if states.get(succ) != joined:
                    states[succ] = joined
                    work.append(succ)
        return ClosureReport(ok=not self.flags, flags=list(self.flags))

    @staticmethod
    def _join(old, new):
        if old is None:
            return list(new)
        out = []
        for a, b in zip(old, new):
            if a == b:
                out.append(a)
            elif a[0] == "plain" and b[0] == "plain":
                out.append(_plain(None))
            elif UNDEF in (a, b):
                out.append(UNDEF)
            else:
                out.append(CONFLICT)
        return out

    # -- per-instruction transfer ----------------------------------------

    def _read(self, state, r: int, addr: int):
        tag = state[r]
        if tag == UNDEF:
            self.flag(addr, f"reads r{r} before any write inside the region")
            return CONFLICT
        if tag == CONFLICT:
            self.flag(addr, f"reads r{r} with conflicting tags across paths")
        return tag

    def _write(self, state, r: int, tag):
        if r != 0:
            state[r] = tag

    def _step(self, state, inst: Instruction, addr: int):
        k = inst.kind
        if k in ("chk", "j", "startBal", "endBal"):
            return
        if k in ("beq", "bne"):
            for r in (inst.rs, inst.rt):
                tag = self._read(state, r, addr)
                if tag[0] not in ("plain",):
                    self.flag(addr, "data-dependent branch breaks lock-step constancy")
            return
        if k in ("jal", "jr", "syscall", "iret", "halt"):
            return  # already flagged structurally
        if k == "lui":
            self._write(state, inst.rt, _plain((inst.imm16 << 16) & WORD_MASK))
            return
        if k in ("lw", "sw"):
            self._mem(state, inst, addr)
            return
        if k in ("mfhi", "mflo"):
            tag = state[32 if k == "mfhi" else 33]
            if tag == UNDEF:
                self.flag(addr, "reads hi/lo before mult inside the region")
                tag = CONFLICT
            self._write(state, inst.rd, tag)
            return
        if k == "mult":
            for r in (inst.rs, inst.rt):
                if self._read(state, r, addr)[0] != "plain":
                    self.flag(addr, "mult is not complement-closed")
            state[32] = state[33] = _plain(None)
            return
        self._alu(state, inst, addr)

    def _mem(self, state, inst: Instruction, addr: int):
        base = self._read(state, inst.rs, addr)
        imm = inst.signed_imm()
        if inst.kind == "lw":
            if base[0] == "plain" and base[1] is not None:
                target = (base[1] + imm) & WORD_MASK
                sec = self.img.section_at(target)
                kind = sec.kind if sec else None
                if kind == "baldata":
                    self._write(state, inst.rt, COMP)
                elif kind in ("data", "stack"):
                    self._write(state, inst.rt, _plain(None))
                elif kind == "baltable":
                    self.flag(addr, "constant-address load from a balanced table")
                    self._write(state, inst.rt, CONFLICT)
                else:
                    self.flag(addr, f"load outside data sections ({target:#010x})")
                    self._write(state, inst.rt, CONFLICT)
            elif base[0] == "tabaddr":
                if imm != 0:
                    self.flag(addr, "table access must use a zero offset")
                tab_base, kbits = base[1], base[2]
                if not self._is_baltable(tab_base, kbits):
                    self.flag(addr, "computed table address is not a balanced table")
                self._write(state, inst.rt, COMP)
            else:
                self.flag(addr, "load via a data-dependent or unknown address")
                self._write(state, inst.rt, CONFLICT)
            return
        # sw
        val = self._read(state, inst.rt, addr)
        if base[0] == "plain" and base[1] is not None:
            target = (base[1] + imm) & WORD_MASK
            sec = self.img.section_at(target)
            kind = sec.kind if sec else None
            if kind == "baldata":
                if val != COMP:
                    self.flag(addr, "only complemented values may be stored to baldata")
            elif kind in ("data", "stack"):
                if val[0] != "plain":
                    self.flag(addr, "complemented value escapes to a plain section")
            else:
                self.flag(addr, f"store outside writable data sections ({target:#010x})")
        else:
            self.flag(addr, "store via a data-dependent or unknown address")

    def _is_baltable(self, base: int, kbits: int) -> bool:
        sec = self.img.section_at(base)
        if sec is None or sec.kind != "baltable":
            return False
        return base == sec.start and sec.end - sec.start == 4 * (1 << kbits)

    def _alu(self, state, inst: Instruction, addr: int):
        k = inst.kind
        if k in ("addi", "slti", "andi", "ori", "xori"):
            src = self._read(state, inst.rs, addr)
            imm = inst.signed_imm() if k in ("addi", "slti") else inst.imm16
            if k == "andi":
                m = inst.imm16
                kbits = m.bit_length()
                if src == COMP and m == (1 << kbits) - 1:
                    self._write(state, inst.rt, ("masked", kbits))
                elif src[0] == "masked" and m == (1 << kbits) - 1 and kbits <= src[1]:
                    self._write(state, inst.rt, ("masked", kbits))
                elif src[0] == "plain":
                    c = src[1]
                    self._write(state, inst.rt, _plain(c & m if c is not None else None))
                else:
                    self.flag(addr, "andi operand is not maskable")
                    self._write(state, inst.rt, CONFLICT)
                return
            if k == "xori":
                if src == COMP:
                    self._write(state, inst.rt, COMP)
                elif src[0] == "plain":
                    c = src[1]
                    self._write(state, inst.rt, _plain(c ^ imm if c is not None else None))
                else:
                    self.flag(addr, "xori on a masked or conflicting value")
                    self._write(state, inst.rt, CONFLICT)
                return
            if k == "ori" and imm == 0:
                self._write(state, inst.rt, src)  # canonical move
                return
            if src[0] != "plain":
                self.flag(addr, f"{k} is not complement-closed")
                self._write(state, inst.rt, CONFLICT)
                return
            c = src[1]
            if c is None:
                self._write(state, inst.rt, _plain(None))
            elif k == "addi":
                self._write(state, inst.rt, _plain((c + imm) & WORD_MASK))
            elif k == "ori":
                self._write(state, inst.rt, _plain(c | imm))
            else:  # slti
                self._write(state, inst.rt, _plain(None))
            return

        if k in ("sll", "srl"):
            src = self._read(state, inst.rt, addr)
            if src[0] == "plain":
                c = src[1]
                if c is None:
                    self._write(state, inst.rd, _plain(None))
                elif k == "sll":
                    self._write(state, inst.rd, _plain((c << inst.shamt) & WORD_MASK))
                else:
                    self._write(state, inst.rd, _plain(c >> inst.shamt))
            elif k == "sll" and src[0] == "masked":
                self._write(state, inst.rd, ("shifted", src[1], inst.shamt))
            else:
                self.flag(addr, f"{k} is not complement-closed")
                self._write(state, inst.rd, CONFLICT)
            return

        a = self._read(state, inst.rs, addr)
        b = self._read(state, inst.rt, addr)
        if k == "xor":
            if (a == COMP and b[0] == "plain") or (b == COMP and a[0] == "plain"):
                self._write(state, inst.rd, COMP)
            elif a[0] == "plain" and b[0] == "plain":
                ca, cb = a[1], b[1]
                self._write(state, inst.rd, _plain(ca ^ cb if None not in (ca, cb) else None))
            elif a == COMP and b == COMP:
                self.flag(addr, "xor of two complemented values produces a shared data value")
                self._write(state, inst.rd, CONFLICT)
            else:
                self.flag(addr, "xor operands are not complement-closed")
                self._write(state, inst.rd, CONFLICT)
            return
        if k == "nor":
            if a == COMP and b == _plain(0):
                self._write(state, inst.rd, COMP)
            elif b == COMP and a == _plain(0):
                self._write(state, inst.rd, COMP)
            elif a[0] == "plain" and b[0] == "plain":
                ca, cb = a[1], b[1]
                self._write(
                    state, inst.rd, _plain((~(ca | cb)) & WORD_MASK if None not in (ca, cb) else None)
                )
            else:
                self.flag(addr, "nor is complement-closed only against zero")
                self._write(state, inst.rd, CONFLICT)
            return
        if k == "or":
            if b == _plain(0):
                self._write(state, inst.rd, a)
                return
            if a == _plain(0):
                self._write(state, inst.rd, b)
                return
            if a[0] == "shifted" and b[0] == "masked" and a[2] == b[1]:
                self._write(state, inst.rd, ("masked", a[1] + b[1]))
                return
            if b[0] == "shifted" and a[0] == "masked" and b[2] == a[1]:
                self._write(state, inst.rd, ("masked", a[1] + b[1]))
                return
            if a[0] == "plain" and b[0] == "plain":
                ca, cb = a[1], b[1]
                self._write(state, inst.rd, _plain(ca | cb if None not in (ca, cb) else None))
                return
            self.flag(addr, "or operands are not complement-closed")
            self._write(state, inst.rd, CONFLICT)
            return
        if k == "add":
            if b == _plain(0):
                self._write(state, inst.rd, a)
                return
            if a == _plain(0):
                self._write(state, inst.rd, b)
                return
            for base, off in ((a, b), (b, a)):
                if base[0] == "plain" and base[1] is not None and off[0] == "shifted" and off[2] == 2:
                    if base[1] % (4 << off[1]) == 0:
                        self._write(state, inst.rd, ("tabaddr", base[1], off[1]))
                        return
                    self.flag(addr, "table base is not aligned to the table size")
                    self._write(state, inst.rd, CONFLICT)
                    return
            if a[0] == "plain" and b[0] == "plain":
                ca, cb = a[1], b[1]
                self._write(state, inst.rd, _plain((ca + cb) & WORD_MASK if None not in (ca, cb) else None))
                return
            self.flag(addr, "add is not complement-closed")
            self._write(state, inst.rd, CONFLICT)
            return
        # sub, and, slt
        if a[0] == "plain" and b[0] == "plain":
            self._write(state, inst.rd, _plain(None))
            return
        if k == "sub" and b == _plain(0):
            self._write(state, inst.rd, a)
            return
        self.flag(addr, f"{k} is not complement-closed")
        self._write(state, inst.rd, CONFLICT)


def verify_complement_closure(
    img: MemoryImage,
    region: tuple[int, int] | None = None,
    entry_comp=frozenset(),
) -> ClosureReport:
    """Statically verify the complement discipline of the balanced region."""
    if region is None:
        region = find_balanced_region(img)
        if region is None:
            raise InstrumentError("image has no balanced region")
    entry, end = region
    return _RegionChecker(img, entry, end, entry_comp).run()


# ---------------------------------------------------------------------------
# complementary image


def generate_complement_image(
    img: MemoryImage,
    closure: ClosureReport | None = None,
    check: bool = True,
) -> MemoryImage:
    """Build the complementary image: identical code, complemented data.

    baldata words are complemented bitwise; every 2^k-entry baltable T is
    rewritten as T'[j] = NOT(T[2^k-1-j]), complementing within the low 8
    bits for byte-wide tables.  Applying the transform twice restores the
    data, and the code section is untouched by construction.
    """
    if check:
        report = closure or verify_complement_closure(img)
        if not report.ok:
            raise InstrumentError("complement closure failed:\n" + report.pretty())
    out = MemoryImage(img.sections, img.words)
    for sec in img.sections_of("baldata"):
        for addr in range(sec.start, sec.end, 4):
            out.words[addr] = (~img.word(addr)) & WORD_MASK
    for sec in img.sections_of("baltable"):
        n = (sec.end - sec.start) // 4
        if n & (n - 1):
            raise InstrumentError(
                f"baltable at {sec.start:#010x} has {n} entries (not a power of two)"
            )
        entries = [img.word(sec.start + 4 * j) for j in range(n)]
        vmask = 0xFF if max(entries, default=0) <= 0xFF else WORD_MASK
        for j in range(n):
            out.words[sec.start + 4 * j] = (~entries[n - 1 - j]) & vmask
    for sec in img.sections_of("code"):
        for addr in range(sec.start, sec.end, 4):
            assert out.word(addr) == img.word(addr)
    return out
