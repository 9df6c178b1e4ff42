"""32-bit MIPS-like instruction set: encoding, assembler and disassembler.

Word formats (all 32 bits wide):

    R-format:  opcode(6) rs(5) rt(5) rd(5) shamt(5) funct(6)    opcode = 0x00
    I-format:  opcode(6) rs(5) rt(5) imm16(16)
    J-format:  opcode(6) target26(26)

The opcode map is deliberately laid out so that every control-flow
instruction (and chk) lives in the 0x30..0x3F block while every plain
computational opcode lives below 0x10.  Any single-bit corruption of an
opcode therefore either stays inside the same class or produces an invalid
opcode; it can never silently turn a checked control-flow instruction into
an unchecked ALU instruction.  Within the block, every comparing CFI also
keeps bit-distance two from chk (which loads rather than compares), so a
flip cannot quietly re-base the checksum chain either; the one exception is
startBal, whose value sits one bit from chk by its fixed assignment, which
is why the sweep fixtures carry no balancing markers.  The same layout
trick is applied to the funct value of jr relative to the other R-format
functs.

Assembly grammar (one statement per line):

    label:  mnemonic operands        # comment
    .text | .data | .baldata | .baltable        start/continue a section
    .org ADDR                                   place following words
    .word VALUE                                 literal 32-bit word
    .stack N                                    reserve N zeroed stack words
    .jtargets label: l1, l2, ...                declare indirect-jump targets

Registers are written r0..r31.  Numeric branch/jump operands are absolute
byte addresses, which is what the disassembler emits so that its output
re-assembles to identical code words.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

WORD_MASK = 0xFFFFFFFF
NOP_WORD = 0x00000000

# opcode values (6 bits); see module docstring for the layout rationale
OP_R = 0x00
OPCODES = {
    "lw": 0x04,
    "sw": 0x06,
    "addi": 0x08,
    "slti": 0x0A,
    "andi": 0x0C,
    "ori": 0x0D,
    "xori": 0x0E,
    "lui": 0x0F,
    "beq": 0x30,
    "bne": 0x31,
    "j": 0x34,
    "jal": 0x33,
    "chk": 0x3A,
    "startBal": 0x3B,
    "endBal": 0x3C,
    "iret": 0x3D,
    "halt": 0x3F,
}

# funct values for opcode 0x00; jr is isolated in the 0x38+ region
FUNCTS = {
    "sll": 0x00,
    "srl": 0x02,
    "syscall": 0x0C,
    "mfhi": 0x10,
    "mflo": 0x12,
    "mult": 0x1A,
    "add": 0x20,
    "sub": 0x22,
    "and": 0x24,
    "or": 0x25,
    "xor": 0x26,
    "nor": 0x27,
    "slt": 0x2A,
    "jr": 0x38,
}

OPCODE_TO_KIND = {v: k for k, v in OPCODES.items()}
FUNCT_TO_KIND = {v: k for k, v in FUNCTS.items()}

R_KINDS = frozenset(FUNCTS)
I_KINDS = frozenset(
    {"lw", "sw", "addi", "slti", "andi", "ori", "xori", "lui", "beq", "bne"}
)
J_KINDS = frozenset({"j", "jal", "chk", "startBal", "endBal", "iret", "halt"})

# control-flow instructions: terminate a basic block and perform the
# runtime checksum comparison when integrity checking is enabled
CFI_KINDS = frozenset(
    {"beq", "bne", "j", "jal", "jr", "halt", "startBal", "endBal", "iret"}
)
# I-format kinds whose immediate is sign-extended by the core
SIGNED_IMM_KINDS = frozenset({"lw", "sw", "addi", "slti", "beq", "bne"})

SECTION_KINDS = ("code", "data", "baldata", "baltable", "stack")


class AsmError(Exception):
    """Assembly failure with source position."""

    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"line {line}:{col}: {msg}" if line else msg)
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Instruction:
    kind: str
    rs: int = 0
    rt: int = 0
    rd: int = 0
    shamt: int = 0
    imm16: int = 0
    target26: int = 0

    def __post_init__(self):
        for r in (self.rs, self.rt, self.rd):
            if not 0 <= r < 32:
                raise ValueError(f"register index {r} out of range")
        if not 0 <= self.shamt < 32:
            raise ValueError(f"shamt {self.shamt} out of range")
        if not 0 <= self.imm16 < 1 << 16:
            raise ValueError(f"imm16 {self.imm16:#x} out of range")
        if not 0 <= self.target26 < 1 << 26:
            raise ValueError(f"target26 {self.target26:#x} out of range")

    @property
    def is_cfi(self) -> bool:
        return self.kind in CFI_KINDS

    def signed_imm(self) -> int:
        return self.imm16 - 0x10000 if self.imm16 & 0x8000 else self.imm16


@dataclass(frozen=True)
class InvalidOpcode:
    """Marker for words that do not decode; the core raises on fetch."""

    word: int


def encode(i: Instruction) -> int:
    if i.kind in R_KINDS:
        return (
            (OP_R << 26)
            | (i.rs << 21)
            | (i.rt << 16)
            | (i.rd << 11)
            | (i.shamt << 6)
            | FUNCTS[i.kind]
        )
    if i.kind in I_KINDS:
        return (OPCODES[i.kind] << 26) | (i.rs << 21) | (i.rt << 16) | i.imm16
    if i.kind in J_KINDS:
        return (OPCODES[i.kind] << 26) | i.target26
    raise ValueError(f"unknown instruction kind {i.kind!r}")


def decode(word: int) -> Instruction | InvalidOpcode:
    """Total decode: every 32-bit word maps to an Instruction or InvalidOpcode.

    All field bits are captured verbatim so encode(decode(w)) == w whenever
    the decode is valid, even for words with junk in unused fields.
    """
    word &= WORD_MASK
    op = word >> 26
    if op == OP_R:
        funct = word & 0x3F
        kind = FUNCT_TO_KIND.get(funct)
        if kind is None:
            return InvalidOpcode(word)
        return Instruction(
            kind,
            rs=(word >> 21) & 31,
            rt=(word >> 16) & 31,
            rd=(word >> 11) & 31,
            shamt=(word >> 6) & 31,
        )
    kind = OPCODE_TO_KIND.get(op)
    if kind is None:
        return InvalidOpcode(word)
    if kind in J_KINDS:
        return Instruction(kind, target26=word & 0x3FFFFFF)
    return Instruction(kind, rs=(word >> 21) & 31, rt=(word >> 16) & 31, imm16=word & 0xFFFF)


# ---------------------------------------------------------------------------
# memory image


@dataclass(frozen=True)
class Section:
    kind: str
    start: int  # byte address, word aligned
    end: int  # exclusive

    def __post_init__(self):
        if self.kind not in SECTION_KINDS:
            raise ValueError(f"unknown section kind {self.kind!r}")
        if self.start % 4 or self.end % 4 or self.end < self.start:
            raise ValueError(f"bad section bounds {self.start:#x}..{self.end:#x}")

    def contains(self, addr: int) -> bool:
        return self.start <= addr < self.end


class MemoryImage:
    """Word-addressed memory with disjoint tagged sections.

    Serializes to the text format::

        @section code 00000000 00000040
        00000000: 00000000
    """

    def __init__(self, sections: list[Section] | None = None, words: dict[int, int] | None = None):
        self.sections: list[Section] = list(sections or [])
        self.words: dict[int, int] = dict(words or {})

    def add_section(self, kind: str, start: int, end: int) -> Section:
        sec = Section(kind, start, end)
        for other in self.sections:
            if sec.start < other.end and other.start < sec.end:
                raise ValueError(
                    f"section {kind} {start:#x}..{end:#x} overlaps "
                    f"{other.kind} {other.start:#x}..{other.end:#x}"
                )
        self.sections.append(sec)
        self.sections.sort(key=lambda s: s.start)
        return sec

    def section_at(self, addr: int) -> Section | None:
        for sec in self.sections:
            if sec.contains(addr):
                return sec
        return None

    def sections_of(self, kind: str) -> list[Section]:
        return [s for s in self.sections if s.kind == kind]

    def word(self, addr: int) -> int:
        return self.words.get(addr, 0)

    def set_word(self, addr: int, value: int) -> None:
        if self.section_at(addr) is None:
            raise ValueError(f"address {addr:#010x} outside any section")
        self.words[addr] = value & WORD_MASK

    def entry(self) -> int:
        code = self.sections_of("code")
        if not code:
            raise ValueError("image has no code section")
        return code[0].start

    def copy(self) -> "MemoryImage":
        return MemoryImage(self.sections, self.words)

    def patched(self, updates: dict[int, int]) -> "MemoryImage":
        img = self.copy()
        for addr, value in updates.items():
            img.set_word(addr, value)
        return img

    def to_text(self) -> str:
        lines = [
            f"@section {s.kind} {s.start:08x} {s.end:08x}"
            for s in sorted(self.sections, key=lambda s: s.start)
        ]
        lines += [f"{addr:08x}: {self.words[addr]:08x}" for addr in sorted(self.words)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MemoryImage":
        img = cls()
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("@section"):
                _, kind, start, end = line.split()
                img.add_section(kind, int(start, 16), int(end, 16))
            else:
                addr_s, word_s = line.split(":")
                img.set_word(int(addr_s, 16), int(word_s.strip(), 16))
        return img


@dataclass
class SymbolTable:
    labels: dict[str, int] = field(default_factory=dict)
    # address of a jr instruction -> declared target addresses
    jtargets: dict[int, tuple[int, ...]] = field(default_factory=dict)

    def addr_of(self, label: str) -> int:
        if label not in self.labels:
            raise KeyError(f"undefined label {label!r}")
        return self.labels[label]


# ---------------------------------------------------------------------------
# source parsing (shared by the assembler and the instrumentation pass)


@dataclass
class Stmt:
    """One parsed source statement."""

    lineno: int
    labels: list[str]
    kind: str  # instr | word | section | org | stack | jtargets | empty
    mnemonic: str = ""
    operands: list[str] = field(default_factory=list)
    value: int = 0
    section: str = ""
    jlabel: str = ""
    jlist: list[str] = field(default_factory=list)


_LABEL_RE = re.compile(r"^([A-Za-z_.$][\w.$]*):")
_NAME_RE = re.compile(r"^[A-Za-z_.$][\w.$]*$")


def _parse_int(text: str, lineno: int) -> int:
    try:
        return int(text, 0)
    except ValueError:
        raise AsmError(f"bad number {text!r}", lineno) from None


def parse_program(source: str) -> list[Stmt]:
    stmts: list[Stmt] = []
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        labels: list[str] = []
        text = line.lstrip()
        col = len(line) - len(text) + 1
        while True:
            m = _LABEL_RE.match(text)
            if not m:
                break
            labels.append(m.group(1))
            text = text[m.end():].lstrip()
        if not text:
            if labels:
                stmts.append(Stmt(lineno, labels, "empty"))
            continue
        if text.startswith("."):
            parts = text.split(None, 1)
            directive = parts[0]
            rest = parts[1].strip() if len(parts) > 1 else ""
            if directive in (".text", ".data", ".baldata", ".baltable"):
                kind = "code" if directive == ".text" else directive[1:]
                stmts.append(Stmt(lineno, labels, "section", section=kind))
            elif directive == ".org":
                stmts.append(Stmt(lineno, labels, "org", value=_parse_int(rest, lineno)))
            elif directive == ".word":
                stmts.append(Stmt(lineno, labels, "word", value=_parse_int(rest, lineno)))
            elif directive == ".stack":
                stmts.append(Stmt(lineno, labels, "stack", value=_parse_int(rest, lineno)))
            elif directive == ".jtargets":
                if ":" not in rest:
                    raise AsmError(".jtargets expects 'label: l1, l2, ...'", lineno)
                jlabel, lst = rest.split(":", 1)
                targets = [t.strip() for t in lst.split(",") if t.strip()]
                if not targets:
                    raise AsmError(".jtargets needs at least one target", lineno)
                stmts.append(
                    Stmt(lineno, labels, "jtargets", jlabel=jlabel.strip(), jlist=targets)
                )
            else:
                raise AsmError(f"unknown directive {directive!r}", lineno, col)
        else:
            parts = text.split(None, 1)
            mnemonic = parts[0]
            ops = [o.strip() for o in parts[1].split(",")] if len(parts) > 1 else []
            stmts.append(Stmt(lineno, labels, "instr", mnemonic=mnemonic, operands=ops))
    return stmts


def emit_program(stmts: list[Stmt]) -> str:
    """Render parsed statements back to assembly text."""
    out = []
    for s in stmts:
        prefix = "".join(f"{lab}:\n" for lab in s.labels[:-1])
        label = f"{s.labels[-1]}: " if s.labels else ""
        if s.kind == "empty":
            out.append(prefix + f"{s.labels[-1]}:")
            continue
        if s.kind == "instr":
            body = s.mnemonic + (" " + ", ".join(s.operands) if s.operands else "")
        elif s.kind == "word":
            body = f".word {s.value:#010x}"
        elif s.kind == "section":
            body = ".text" if s.section == "code" else f".{s.section}"
        elif s.kind == "org":
            body = f".org {s.value:#x}"
        elif s.kind == "stack":
            body = f".stack {s.value}"
        elif s.kind == "jtargets":
            body = f".jtargets {s.jlabel}: " + ", ".join(s.jlist)
        else:
            raise ValueError(f"cannot emit statement kind {s.kind!r}")
        out.append(prefix + ("    " if not label else label) + body)
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# assembler


_REG_RE = re.compile(r"^r(\d{1,2})$")
_MEM_RE = re.compile(r"^(-?[\w.$]+)\((r\d{1,2})\)$")


def _reg(tok: str, lineno: int) -> int:
    m = _REG_RE.match(tok)
    if not m or int(m.group(1)) > 31:
        raise AsmError(f"bad register {tok!r}", lineno)
    return int(m.group(1))


class _Item:
    """One laid-out word-or-reservation with its originating statement."""

    __slots__ = ("stmt", "addr", "nwords")

    def __init__(self, stmt: Stmt, nwords: int = 1):
        self.stmt = stmt
        self.addr = 0
        self.nwords = nwords


def assemble(source: str) -> tuple[MemoryImage, SymbolTable]:
    """Two-pass assemble: layout + label binding, then encoding."""
    img, sym, _ = assemble_with_layout(source)
    return img, sym


def assemble_with_layout(source: str) -> tuple[MemoryImage, SymbolTable, list[tuple[int, Stmt]]]:
    """Assemble and also return the (address, statement) placement list."""
    return assemble_stmts(parse_program(source))


def assemble_stmts(stmts: list[Stmt]) -> tuple[MemoryImage, SymbolTable, list[tuple[int, Stmt]]]:
    """Assemble a parsed statement list.

    The returned placement list maps addresses to the same Stmt objects that
    were passed in, covering instruction and .word statements in address
    order; the instrumentation pass uses it to edit source by address.
    """
    # pass 1: group into section chunks and count words
    chunks: list[dict] = []  # {kind, org, items, lineno}
    current: dict | None = None
    pending_labels: list[tuple[str, int]] = []
    labels: dict[str, int] = {}
    label_sites: dict[str, _Item] = {}
    jdecls: list[Stmt] = []

    def open_chunk(kind: str, lineno: int, org: int | None = None):
        nonlocal current
        current = {"kind": kind, "org": org, "items": [], "lineno": lineno}
        chunks.append(current)

    def bind_labels(names: list[tuple[str, int]], item: _Item):
        for lab, ln in names:
            if lab in labels:
                raise AsmError(f"duplicate label {lab!r}", ln)
            labels[lab] = -1  # bound after layout
            label_sites[lab] = item

    for s in stmts:
        if s.kind == "section":
            open_chunk(s.section, s.lineno)
            pending_labels.extend((lab, s.lineno) for lab in s.labels)
            continue
        if s.kind == "org":
            if current is None:
                raise AsmError(".org before any section", s.lineno)
            if s.value % 4:
                raise AsmError(f".org {s.value:#x} not word aligned", s.lineno)
            open_chunk(current["kind"], s.lineno, org=s.value)
            pending_labels.extend((lab, s.lineno) for lab in s.labels)
            continue
        if s.kind == "jtargets":
            jdecls.append(s)
            pending_labels.extend((lab, s.lineno) for lab in s.labels)
            continue
        if s.kind == "empty":
            pending_labels.extend((lab, s.lineno) for lab in s.labels)
            continue
        if current is None:
            raise AsmError("statement before any section directive", s.lineno)
        if s.kind == "instr" and current["kind"] != "code":
            raise AsmError("instruction outside .text", s.lineno)
        if s.kind == "stack":
            if s.value <= 0:
                raise AsmError(".stack needs a positive word count", s.lineno)
            item = _Item(s, s.value)
            prev_kind = current["kind"]
            open_chunk("stack", s.lineno)
            current["items"].append(item)
            open_chunk(prev_kind, s.lineno)
        else:
            item = _Item(s)
            current["items"].append(item)
        bind_labels(pending_labels, item)
        bind_labels([(lab, s.lineno) for lab in s.labels], item)
        pending_labels.clear()
    if pending_labels:
        raise AsmError(f"label {pending_labels[0][0]!r} at end of file", pending_labels[0][1])

    # pass 1b: assign addresses
    lc = 0
    img = MemoryImage()
    for chunk in chunks:
        nwords = sum(it.nwords for it in chunk["items"])
        if chunk["org"] is not None:
            lc = chunk["org"]
        elif chunk["kind"] == "baltable" and nwords:
            size = 4 * (1 << max(0, (nwords - 1).bit_length()))
            lc = (lc + size - 1) // size * size
        if nwords == 0:
            continue
        start = lc
        for it in chunk["items"]:
            it.addr = lc
            lc += 4 * it.nwords
        try:
            img.add_section(chunk["kind"], start, lc)
        except ValueError as exc:
            raise AsmError(str(exc), chunk["lineno"]) from None

    for lab, item in label_sites.items():
        labels[lab] = item.addr
    sym = SymbolTable(labels=labels)

    # pass 2: encode
    placed: list[tuple[int, Stmt]] = []
    for chunk in chunks:
        for it in chunk["items"]:
            s = it.stmt
            if s.kind == "word":
                img.words[it.addr] = s.value & WORD_MASK
                placed.append((it.addr, s))
            elif s.kind == "stack":
                for k in range(it.nwords):
                    img.words[it.addr + 4 * k] = 0
            elif s.kind == "instr":
                img.words[it.addr] = _encode_stmt(s, it.addr, sym)
                placed.append((it.addr, s))

    for s in jdecls:
        if s.jlabel not in sym.labels:
            raise AsmError(f"undefined label {s.jlabel!r}", s.lineno)
        addr = sym.labels[s.jlabel]
        targets = []
        for t in s.jlist:
            if t not in sym.labels:
                raise AsmError(f"undefined label {t!r}", s.lineno)
            targets.append(sym.labels[t])
        sym.jtargets[addr] = tuple(targets)
    placed.sort(key=lambda p: p[0])
    return img, sym, placed


def _target_addr(tok: str, sym: SymbolTable, lineno: int) -> int:
    if _NAME_RE.match(tok):
        if tok not in sym.labels:
            raise AsmError(f"undefined label {tok!r}", lineno)
        return sym.labels[tok]
    return _parse_int(tok, lineno)


def _imm16(value: int, lineno: int, signed_ok: bool) -> int:
    lo = -0x8000 if signed_ok else 0
    if not lo <= value <= 0xFFFF:
        raise AsmError(f"immediate {value:#x} does not fit 16 bits", lineno)
    return value & 0xFFFF


def _encode_stmt(s: Stmt, addr: int, sym: SymbolTable) -> int:
    kind = s.mnemonic
    ops = s.operands
    ln = s.lineno

    def want(n):
        if len(ops) != n:
            raise AsmError(f"{kind} expects {n} operand(s), got {len(ops)}", ln)

    if kind == "nop":
        want(0)
        return NOP_WORD
    if kind in ("add", "sub", "and", "or", "xor", "nor", "slt"):
        want(3)
        return encode(Instruction(kind, rd=_reg(ops[0], ln), rs=_reg(ops[1], ln), rt=_reg(ops[2], ln)))
    if kind in ("sll", "srl"):
        want(3)
        sh = _parse_int(ops[2], ln)
        if not 0 <= sh < 32:
            raise AsmError(f"shift amount {sh} out of range", ln)
        return encode(Instruction(kind, rd=_reg(ops[0], ln), rt=_reg(ops[1], ln), shamt=sh))
    if kind == "jr":
        want(1)
        return encode(Instruction(kind, rs=_reg(ops[0], ln)))
    if kind == "mult":
        want(2)
        return encode(Instruction(kind, rs=_reg(ops[0], ln), rt=_reg(ops[1], ln)))
    if kind in ("mfhi", "mflo"):
        want(1)
        return encode(Instruction(kind, rd=_reg(ops[0], ln)))
    if kind == "syscall":
        want(0)
        return encode(Instruction(kind))
    if kind in ("addi", "slti", "andi", "ori", "xori"):
        want(3)
        imm = _imm16(_parse_int(ops[2], ln), ln, kind in SIGNED_IMM_KINDS)
        return encode(Instruction(kind, rt=_reg(ops[0], ln), rs=_reg(ops[1], ln), imm16=imm))
    if kind == "lui":
        want(2)
        return encode(Instruction(kind, rt=_reg(ops[0], ln), imm16=_imm16(_parse_int(ops[1], ln), ln, False)))
    if kind in ("lw", "sw"):
        want(2)
        m = _MEM_RE.match(ops[1].replace(" ", ""))
        if not m:
            raise AsmError(f"bad memory operand {ops[1]!r}", ln)
        off = _target_addr(m.group(1), sym, ln)
        return encode(Instruction(kind, rt=_reg(ops[0], ln), rs=_reg(m.group(2), ln), imm16=_imm16(off, ln, True)))
    if kind in ("beq", "bne"):
        want(3)
        target = _target_addr(ops[2], sym, ln)
        if target % 4:
            raise AsmError(f"misaligned branch target {target:#x}", ln)
        off = (target - (addr + 4)) >> 2
        if not -0x8000 <= off <= 0x7FFF:
            raise AsmError(f"branch target {target:#x} out of range", ln)
        return encode(Instruction(kind, rs=_reg(ops[0], ln), rt=_reg(ops[1], ln), imm16=off & 0xFFFF))
    if kind in ("j", "jal", "startBal"):
        if kind == "startBal" and not ops:
            return encode(Instruction("startBal"))
        want(1)
        target = _target_addr(ops[0], sym, ln)
        if target % 4:
            raise AsmError(f"misaligned jump target {target:#x}", ln)
        if not 0 <= target >> 2 < 1 << 26:
            raise AsmError(f"jump target {target:#x} out of range", ln)
        return encode(Instruction(kind, target26=target >> 2))
    if kind == "chk":
        want(1)
        payload = _parse_int(ops[0], ln)
        if not 0 <= payload < 1 << 26:
            raise AsmError(f"chk payload {payload:#x} exceeds 26 bits", ln)
        return encode(Instruction(kind, target26=payload))
    if kind in ("endBal", "iret", "halt"):
        want(0)
        return encode(Instruction(kind))
    raise AsmError(f"unknown mnemonic {kind!r}", ln)


# ---------------------------------------------------------------------------
# disassembler


def render_instruction(inst: Instruction, addr: int) -> str | None:
    """Render one instruction, or None if it has no canonical spelling."""
    k = inst.kind
    if k == "sll" and inst.rd == inst.rt == inst.shamt == inst.rs == 0:
        return "nop"
    if k in ("add", "sub", "and", "or", "xor", "nor", "slt"):
        if inst.shamt:
            return None
        return f"{k} r{inst.rd}, r{inst.rs}, r{inst.rt}"
    if k in ("sll", "srl"):
        if inst.rs:
            return None
        return f"{k} r{inst.rd}, r{inst.rt}, {inst.shamt}"
    if k == "jr":
        if inst.rt or inst.rd or inst.shamt:
            return None
        return f"jr r{inst.rs}"
    if k == "mult":
        if inst.rd or inst.shamt:
            return None
        return f"mult r{inst.rs}, r{inst.rt}"
    if k in ("mfhi", "mflo"):
        if inst.rs or inst.rt or inst.shamt:
            return None
        return f"{k} r{inst.rd}"
    if k == "syscall":
        if inst.rs or inst.rt or inst.rd or inst.shamt:
            return None
        return "syscall"
    if k in ("addi", "slti", "andi", "ori", "xori"):
        imm = inst.signed_imm() if k in SIGNED_IMM_KINDS else inst.imm16
        return f"{k} r{inst.rt}, r{inst.rs}, {imm:#x}" if imm >= 0 else f"{k} r{inst.rt}, r{inst.rs}, {imm}"
    if k == "lui":
        if inst.rs:
            return None
        return f"lui r{inst.rt}, {inst.imm16:#x}"
    if k in ("lw", "sw"):
        return f"{k} r{inst.rt}, {inst.signed_imm()}(r{inst.rs})"
    if k in ("beq", "bne"):
        target = (addr + 4 + (inst.signed_imm() << 2)) & WORD_MASK
        return f"{k} r{inst.rs}, r{inst.rt}, {target:#x}"
    if k in ("j", "jal"):
        return f"{k} {inst.target26 << 2:#x}"
    if k == "chk":
        return f"chk {inst.target26:#x}"
    if k == "startBal":
        return f"startBal {inst.target26 << 2:#x}" if inst.target26 else "startBal"
    if k in ("endBal", "iret", "halt"):
        return k if inst.target26 == 0 else None
    return None


def disassemble(img: MemoryImage) -> str:
    """Render an image back to assembly that re-assembles bit-identically."""
    lines: list[str] = []
    for sec in sorted(img.sections, key=lambda s: s.start):
        if sec.kind == "stack":
            lines.append(f".org {sec.start:#x}")
            lines.append(f".stack {(sec.end - sec.start) // 4}")
            continue
        lines.append(".text" if sec.kind == "code" else f".{sec.kind}")
        lines.append(f".org {sec.start:#x}")
        for addr in range(sec.start, sec.end, 4):
            word = img.word(addr)
            if sec.kind == "code":
                inst = decode(word)
                text = None if isinstance(inst, InvalidOpcode) else render_instruction(inst, addr)
                lines.append(text if text is not None else f".word {word:#010x}")
            else:
                lines.append(f".word {word:#010x}")
    return "\n".join(lines) + "\n"
