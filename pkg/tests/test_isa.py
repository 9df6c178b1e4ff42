"""Encoding, assembler and disassembler checks.

The field-packing oracle below builds words by explicit shift arithmetic,
independent of isa.encode's implementation.
"""

import pytest
from hypothesis import given, strategies as st

from dualsec import isa
from dualsec.isa import Instruction, InvalidOpcode, decode, encode


def pack_r(funct, rs=0, rt=0, rd=0, shamt=0):
    return (0 << 26) | (rs << 21) | (rt << 16) | (rd << 11) | (shamt << 6) | funct


def pack_i(op, rs=0, rt=0, imm=0):
    return (op << 26) | (rs << 21) | (rt << 16) | (imm & 0xFFFF)


def pack_j(op, target=0):
    return (op << 26) | target


def test_nop_is_all_zero():
    assert encode(Instruction("sll")) == 0x00000000
    word = isa.assemble("        .text\n        nop\n")[0].word(0)
    assert word == 0x00000000


def test_xor_field_packing():
    got = encode(Instruction("xor", rd=3, rs=1, rt=2))
    assert got == pack_r(isa.FUNCTS["xor"], rs=1, rt=2, rd=3)
    assert decode(got) == Instruction("xor", rd=3, rs=1, rt=2)


def test_jr_field_packing():
    assert encode(Instruction("jr", rs=31)) == pack_r(isa.FUNCTS["jr"], rs=31)


def test_halt_packing():
    word = encode(Instruction("halt"))
    assert word == pack_j(isa.OPCODES["halt"])
    assert word & 0x03FFFFFF == 0


def test_chk_packing():
    img, _ = isa.assemble("        .text\n        chk 0x123\n")
    assert img.word(0) == pack_j(isa.OPCODES["chk"], 0x123)


def test_custom_opcode_values_pinned():
    assert isa.OPCODES["chk"] == 0x3A
    assert isa.OPCODES["startBal"] == 0x3B
    assert isa.OPCODES["endBal"] == 0x3C
    assert isa.OPCODES["iret"] == 0x3D


def test_decode_zero_word():
    assert decode(0) == Instruction("sll")


def test_exhaustive_opcode_space():
    """Each of the 64 opcodes is either defined or invalid, never both."""
    defined = set(isa.OPCODE_TO_KIND) | {isa.OP_R}
    for op in range(64):
        word = op << 26
        inst = decode(word)
        if op == isa.OP_R:
            # funct space: all 64 values classified the same way
            for funct in range(64):
                sub = decode(word | funct)
                assert isinstance(sub, InvalidOpcode) == (funct not in isa.FUNCT_TO_KIND)
        elif op in defined:
            assert isinstance(inst, Instruction)
        else:
            assert isinstance(inst, InvalidOpcode)


def test_cfi_opcodes_bit_distance_from_plain_opcodes():
    """No single-bit flip turns a checked CFI opcode into a plain opcode.

    This is what closes the sweep: destroying a CFI can only produce
    another CFI (still compared) or an invalid opcode (traps).
    """
    cfi_ops = {isa.OPCODES[k] for k in isa.CFI_KINDS if k != "jr"} | {isa.OPCODES["chk"]}
    plain_ops = {isa.OPCODES[k] for k in isa.I_KINDS - isa.CFI_KINDS} | {isa.OP_R}
    for c in cfi_ops:
        for p in plain_ops:
            assert bin(c ^ p).count("1") >= 2, f"{c:#x} vs {p:#x}"
    jr = isa.FUNCTS["jr"]
    for name, funct in isa.FUNCTS.items():
        if name != "jr":
            assert bin(jr ^ funct).count("1") >= 2, f"jr vs {name}"
    # comparing CFIs keep distance two from the non-comparing chk as well;
    # startBal is excluded: its spec-fixed value sits one bit from chk
    chk = isa.OPCODES["chk"]
    for kind in isa.CFI_KINDS - {"jr", "startBal"}:
        assert bin(chk ^ isa.OPCODES[kind]).count("1") >= 2, kind


@st.composite
def instructions(draw):
    kind = draw(st.sampled_from(sorted(isa.R_KINDS | isa.I_KINDS | isa.J_KINDS)))
    r = st.integers(0, 31)
    if kind in isa.R_KINDS:
        return Instruction(
            kind,
            rs=draw(r),
            rt=draw(r),
            rd=draw(r),
            shamt=draw(st.integers(0, 31)),
        )
    if kind in isa.I_KINDS:
        return Instruction(kind, rs=draw(r), rt=draw(r), imm16=draw(st.integers(0, 0xFFFF)))
    return Instruction(kind, target26=draw(st.integers(0, (1 << 26) - 1)))


@given(instructions())
def test_decode_encode_roundtrip(inst):
    assert decode(encode(inst)) == inst


@given(st.integers(0, 0xFFFFFFFF))
def test_encode_decode_fixes_valid_words(word):
    inst = decode(word)
    if isinstance(inst, Instruction):
        assert encode(inst) == word


def test_register_zero_write_discarded():
    src = """
        .text
        addi r0, r0, 5
        or r1, r0, r0
        halt
"""
    from dualsec import sim

    img, _ = isa.assemble(src)
    system = sim.System(sim.SystemConfig(mode=sim.Mode.NON_SECURED), img, None)
    system.run()
    assert system.core1.regs[0] == 0
    assert system.core1.regs[1] == 0


# ---------------------------------------------------------------------------
# assembler


def test_assemble_three_block_words():
    src = """
        .text
main:   addi r1, r0, 5
        beq r1, r2, skip
        addi r3, r0, 1
skip:   halt
"""
    img, sym = isa.assemble(src)
    assert sym.labels == {"main": 0, "skip": 12}
    assert img.word(0) == pack_i(isa.OPCODES["addi"], rs=0, rt=1, imm=5)
    # branch offset: (12 - (4+4)) >> 2 = 1
    assert img.word(4) == pack_i(isa.OPCODES["beq"], rs=1, rt=2, imm=1)
    assert img.word(12) == pack_j(isa.OPCODES["halt"])


def test_assemble_errors():
    with pytest.raises(isa.AsmError):
        isa.assemble("        .text\n        frobnicate r1\n")
    with pytest.raises(isa.AsmError, match="undefined label"):
        isa.assemble("        .text\n        j nowhere\n")
    with pytest.raises(isa.AsmError, match="16 bits"):
        isa.assemble("        .text\n        addi r1, r0, 0x12345\n")
    with pytest.raises(isa.AsmError, match="misaligned"):
        isa.assemble("        .text\n        j 0x2\n")
    with pytest.raises(isa.AsmError, match="duplicate label"):
        isa.assemble("        .text\nx:      nop\nx:      nop\n")
    with pytest.raises(isa.AsmError):
        isa.assemble("        .data\n        addi r1, r0, 1\n")


def test_negative_and_hex_immediates():
    img, _ = isa.assemble("        .text\n        addi r1, r0, -4\n        lw r2, -8(r3)\n")
    assert decode(img.word(0)).signed_imm() == -4
    assert decode(img.word(4)).signed_imm() == -8


def test_stack_directive_reserves_zeroed_words():
    img, _ = isa.assemble("        .text\n        halt\n        .data\n        .stack 4\n")
    sec = img.sections_of("stack")[0]
    assert sec.end - sec.start == 16
    assert all(img.word(a) == 0 for a in range(sec.start, sec.end, 4))


def test_baltable_auto_alignment():
    lines = ["        .text", "        halt", "        .baltable"]
    lines += [f"        .word {i}" for i in range(8)]
    img, _ = isa.assemble("\n".join(lines) + "\n")
    sec = img.sections_of("baltable")[0]
    assert sec.start % (4 * 8) == 0


def test_jtargets_annotation():
    src = """
        .text
main:   jal func
ret1:   halt
        .jtargets theret: ret1
func:   addi r1, r0, 1
theret: jr r31
"""
    img, sym = isa.assemble(src)
    assert sym.jtargets == {sym.labels["theret"]: (sym.labels["ret1"],)}


# ---------------------------------------------------------------------------
# disassembler round trips


def _roundtrip(img):
    text = isa.disassemble(img)
    img2, _ = isa.assemble(text)
    assert img2.words == img.words
    assert [(s.kind, s.start, s.end) for s in img2.sections] == [
        (s.kind, s.start, s.end) for s in img.sections
    ]


def test_disassemble_single_nop():
    img, _ = isa.assemble("        .text\n        nop\n")
    assert isa.disassemble(img).splitlines()[2] == "nop"
    _roundtrip(img)


def test_disassemble_invalid_word():
    img = isa.MemoryImage()
    img.add_section("code", 0, 4)
    img.set_word(0, 0xFFFFFFFF)
    assert ".word 0xffffffff" in isa.disassemble(img)
    _roundtrip(img)


def test_disassemble_roundtrip_instrumented_aes(aes_bundle):
    bundle, _, _ = aes_bundle
    _roundtrip(bundle.instrumented)
    _roundtrip(bundle.complement_instrumented)


def test_memory_image_text_roundtrip(aes_bundle):
    bundle, _, _ = aes_bundle
    img = bundle.instrumented
    again = isa.MemoryImage.from_text(img.to_text())
    assert again.words == img.words
    assert again.to_text() == img.to_text()
