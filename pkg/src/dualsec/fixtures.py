"""Desk-scale workload fixtures.

The balanced ciphers follow the complement-closed discipline the verifier
enforces: all data-dependent values enter through .baldata loads or keyed
.baltable lookups, key material lives in the table contents (T[x] =
SBOX[x ^ k] is built per key at image-build time), and the only in-region
operations on secret-dependent registers are xor-with-constant, masking,
the shift/or/add table-address idiom, moves, and loads/stores of balanced
sections.  Control flow inside regions depends only on constants.

Each builder returns (source, meta); meta carries the label addresses the
harnesses patch (plaintext words, key table, output words) plus region
labels.  Apps take a base address so several can be linked into one
address space on different cores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .instrument import find_balanced_region, generate_complement_image, insert_chk
from .isa import MemoryImage, assemble
from .power import AES_SBOX
from .sim import AppBundle

SBOX4 = [0xC, 0x5, 0x6, 0xB, 0x9, 0x0, 0xA, 0xD, 0x3, 0xE, 0xF, 0x8, 0x4, 0x7, 0x1, 0x2]


@dataclass
class Fixture:
    source: str
    meta: dict


def _hi(addr: int) -> int:
    return (addr >> 16) & 0xFFFF


def _lo(addr: int) -> int:
    return addr & 0xFFFF


def _load_const(reg: int, value: int) -> list[str]:
    return [f"lui r{reg}, {_hi(value):#x}", f"ori r{reg}, r{reg}, {_lo(value):#x}"]


# ---------------------------------------------------------------------------
# toy-AES: 16 keyed S-box lookups, unrolled, optionally balanced


def toy_aes(
    key: int = 0x2B,
    plaintext: list[int] | None = None,
    base: int = 0x0,
    balanced: bool = True,
    with_isr: bool = False,
) -> Fixture:
    """Sixteen S-box substitutions out[i] = SBOX[p[i] ^ k].

    The key enters through the precomputed table T[x] = SBOX[x ^ k], which
    keeps the region complement-closed (an in-region xor of two secret
    values would leak their shared result).  Unrolled into four chunks so
    the instrumented program has several executed blocks plus one dead one.
    """
    if plaintext is None:
        plaintext = [(17 * i + 3) & 0xFF for i in range(16)]
    if not (0 <= key <= 0xFF and len(plaintext) == 16):
        raise ValueError("key must be a byte and plaintext 16 bytes")
    table_addr = base + 0x2000
    pt_addr = base + 0x3000
    out_addr = pt_addr + 16 * 4

    lines = ["        .text", f"        .org {base:#x}", "main:"]
    if balanced:
        lines.append("        startBal bal_entry")
    lines.append("bal_entry:")
    lines += ["        " + t for t in _load_const(8, table_addr)]
    lines += ["        " + t for t in _load_const(9, pt_addr)]
    lines += ["        " + t for t in _load_const(10, out_addr)]
    for i in range(16):
        lines += [
            f"        lw r1, {4 * i}(r9)",
            "        andi r2, r1, 0xff",
            "        sll r3, r2, 2",
            "        add r4, r8, r3",
            "        lw r5, 0(r4)",
            f"        sw r5, {4 * i}(r10)",
        ]
        if i % 4 == 3 and i != 15:
            lines.append(f"        beq r0, r0, chunk{i // 4 + 1}")
            lines.append(f"chunk{i // 4 + 1}:")
    lines.append("bal_end:")
    if balanced:
        lines.append("        endBal")
    lines.append("        halt")
    lines += [
        "dead:   addi r1, r0, 99",  # unreachable block for sweep coverage
        "        halt",
    ]
    if with_isr:
        lines += _isr_lines(base)
    lines += [
        "        .baltable",
        f"        .org {table_addr:#x}",
        "sbox_k:",
    ]
    lines += [f"        .word {AES_SBOX[x ^ key]:#x}" for x in range(256)]
    lines += ["        .baldata", f"        .org {pt_addr:#x}", "pt:"]
    lines += [f"        .word {p:#x}" for p in plaintext]
    lines += ["out:"] + ["        .word 0x0"] * 16
    if with_isr:
        lines += _isr_data(base)
    lines += ["        .data", f"        .org {base + 0x3900:#x}", "        .stack 64"]
    return Fixture(
        source="\n".join(lines) + "\n",
        meta={
            "key": key,
            "plaintext": list(plaintext),
            "table": table_addr,
            "pt": pt_addr,
            "out": out_addr,
            "out_len": 16,
            "base": base,
            "isr_label": "isr" if with_isr else None,
        },
    )


def aes_table_words(key: int, table_addr: int) -> dict[int, int]:
    return {table_addr + 4 * x: int(AES_SBOX[x ^ key]) for x in range(256)}


def aes_pt_words(plaintext, pt_addr: int) -> dict[int, int]:
    return {pt_addr + 4 * i: int(p) & 0xFF for i, p in enumerate(plaintext)}


def aes_reference(key: int, plaintext) -> list[int]:
    return [int(AES_SBOX[(p ^ key) & 0xFF]) for p in plaintext]


# ---------------------------------------------------------------------------
# toy-DES: four balanced Feistel rounds on 4-bit halves


def toy_des(
    key: int = 0x9,
    lr: tuple[int, int] = (0x5, 0xA),
    base: int = 0x0,
    balanced: bool = True,
    with_isr: bool = False,
) -> Fixture:
    """Feistel rounds newL = R; newR = MIX[(L & 0xF) << 4 | TK[R & 0xF]].

    The Feistel xor runs through the 256-entry MIX table (MIX[a<<4|b] =
    a^b) because xor of two complemented values is not complement-closed;
    the round function TK[x] = SBOX4[x ^ k] carries the key.
    """
    tk_addr = base + 0x2000  # 16 words, 64-byte aligned
    mix_addr = base + 0x2400  # 256 words, 1024-byte aligned
    data_addr = base + 0x3000
    lines = ["        .text", f"        .org {base:#x}", "main:"]
    if balanced:
        lines.append("        startBal bal_entry")
    lines.append("bal_entry:")
    lines += ["        " + t for t in _load_const(8, tk_addr)]
    lines += ["        " + t for t in _load_const(9, mix_addr)]
    lines += ["        " + t for t in _load_const(10, data_addr)]
    lines += [
        "        lw r1, 0(r10)",  # L
        "        lw r2, 4(r10)",  # R
    ]
    for _ in range(4):
        lines += [
            "        andi r3, r2, 0xf",
            "        sll r4, r3, 2",
            "        add r5, r8, r4",
            "        lw r6, 0(r5)",  # F = TK[R & 0xF]
            "        andi r7, r1, 0xf",
            "        sll r11, r7, 4",
            "        andi r12, r6, 0xf",
            "        or r13, r11, r12",
            "        sll r14, r13, 2",
            "        add r15, r9, r14",
            "        or r1, r2, r0",  # newL = R
            "        lw r2, 0(r15)",  # newR = MIX[(L<<4)|F]
        ]
    lines += [
        "        sw r1, 8(r10)",
        "        sw r2, 12(r10)",
    ]
    lines.append("bal_end:")
    if balanced:
        lines.append("        endBal")
    lines.append("        halt")
    if with_isr:
        lines += _isr_lines(base)
    lines += ["        .baltable", f"        .org {tk_addr:#x}", "tk:"]
    lines += [f"        .word {SBOX4[x ^ (key & 0xF)]:#x}" for x in range(16)]
    lines += ["        .baltable", f"        .org {mix_addr:#x}", "mix:"]
    lines += [f"        .word {((j >> 4) ^ (j & 0xF)):#x}" for j in range(256)]
    lines += ["        .baldata", f"        .org {data_addr:#x}"]
    lines += [
        f"lr_in:  .word {lr[0]:#x}",
        f"        .word {lr[1]:#x}",
        "lr_out: .word 0x0",
        "        .word 0x0",
    ]
    if with_isr:
        lines += _isr_data(base)
    lines += ["        .data", f"        .org {base + 0x3900:#x}", "        .stack 64"]
    return Fixture(
        source="\n".join(lines) + "\n",
        meta={
            "key": key,
            "lr": list(lr),
            "tk": tk_addr,
            "mix": mix_addr,
            "in": data_addr,
            "out": data_addr + 8,
            "out_len": 2,
            "base": base,
            "isr_label": "isr" if with_isr else None,
        },
    )


def des_reference(key: int, lr: tuple[int, int]) -> tuple[int, int]:
    left, right = lr
    for _ in range(4):
        f = SBOX4[(right & 0xF) ^ (key & 0xF)]
        left, right = right, ((left & 0xF) ^ f)
    return left, right


# ---------------------------------------------------------------------------
# fillers


def filler(
    n_iters: int = 100,
    base: int = 0x4000,
    pad: int = 16,
    kind: str = "adpcm",
) -> Fixture:
    """Data-independent compute loop with a straight-line prologue.

    The prologue keeps the drain window of a balancing preemption free of
    taken branches, which makes the runtime-composition identity exact.
    """
    data_addr = base + 0x1000
    lines = ["        .text", f"        .org {base:#x}", "main:"]
    lines += [f"        addi r3, r3, {i % 5}" for i in range(pad)]
    lines += [f"        addi r1, r0, {n_iters}"]
    lines += ["        " + t for t in _load_const(9, data_addr)]
    if kind == "adpcm":
        lines += [
            "loop:   lw r4, 0(r9)",
            "        add r5, r5, r4",
            "        srl r6, r5, 3",
            "        add r5, r5, r6",
            "        addi r2, r2, 1",
            "        bne r2, r1, loop",
        ]
    elif kind == "crc":
        lines += [
            "loop:   srl r6, r5, 1",
            "        xor r5, r6, r4",
            "        xori r5, r5, 0x21",
            "        addi r2, r2, 1",
            "        bne r2, r1, loop",
        ]
    else:
        raise ValueError(f"unknown filler kind {kind!r}")
    lines += [
        "        sw r5, 4(r9)",
        "        sw r2, 8(r9)",
        "        halt",
        "        .data",
        f"        .org {data_addr:#x}",
        "seed:   .word 0x1badb002",
        "acc:    .word 0x0",
        "count:  .word 0x0",
        "        .stack 96",
    ]
    return Fixture(
        source="\n".join(lines) + "\n",
        meta={
            "n_iters": n_iters,
            "base": base,
            "out": data_addr + 4,
            "out_len": 2,
        },
    )


def straight_line(n: int, base: int = 0x0) -> Fixture:
    """n instructions (the last a halt), no branches."""
    lines = ["        .text", f"        .org {base:#x}", "main:"]
    lines += [f"        addi r1, r1, {i % 9}" for i in range(n - 1)]
    lines += ["        halt"]
    return Fixture(source="\n".join(lines) + "\n", meta={"n": n})


def three_block(base: int = 0x0) -> Fixture:
    """One forward branch: the canonical three-block program."""
    src = f"""
        .text
        .org {base:#x}
main:   addi r1, r0, 5
        beq r1, r2, skip
        addi r3, r0, 1
skip:   halt
"""
    return Fixture(source=src, meta={"base": base})


# ---------------------------------------------------------------------------
# interrupt routine scaffolding


def _isr_lines(base: int) -> list[str]:
    counter = base + 0x3880
    save = [
        f"        .org {base + 0x800:#x}",
        "isr:    addi r29, r29, -8",
        "        sw r1, 4(r29)",
        "        sw r2, 0(r29)",
    ]
    body = ["        " + t for t in _load_const(1, counter)] + [
        "        lw r2, 0(r1)",
        "        addi r2, r2, 1",
        "        sw r2, 0(r1)",
    ]
    restore = [
        "        lw r2, 0(r29)",
        "        lw r1, 4(r29)",
        "        addi r29, r29, 8",
        "        iret",
    ]
    return save + body + restore


def _isr_data(base: int) -> list[str]:
    return ["        .data", f"        .org {base + 0x3880:#x}", "ticks:  .word 0x0"]


def interrupt_app(n_iters: int = 60, base: int = 0x0) -> Fixture:
    """Compute loop plus a counting interrupt routine reached by vector."""
    fx = filler(n_iters=n_iters, base=base)
    lines = fx.source.splitlines()
    halt_at = next(i for i, t in enumerate(lines) if t.strip() == "halt")
    lines[halt_at + 1 : halt_at + 1] = _isr_lines(base) + _isr_data(base)
    fx.meta["isr_label"] = "isr"
    fx.meta["ticks"] = base + 0x3880
    return Fixture(source="\n".join(lines) + "\n", meta=fx.meta)


# ---------------------------------------------------------------------------
# bundles


def build_bundle(name: str, source: str) -> tuple[AppBundle, list[dict]]:
    """Assemble the plain and instrumented variants plus complements."""
    plain_img, _ = assemble(source)
    res = insert_chk(source)
    comp_p = comp_i = None
    if find_balanced_region(plain_img) is not None:
        comp_p = generate_complement_image(plain_img)
        comp_i = generate_complement_image(res.image)
    bundle = AppBundle(
        name,
        plain=plain_img,
        instrumented=res.image,
        complement_plain=comp_p,
        complement_instrumented=comp_i,
    )
    return bundle, res.report


def instrumented_symbols(source: str):
    res = insert_chk(source)
    return res.image, res.symbols, res.report


def random_plaintexts(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 256, size=(n, 16), dtype=np.uint8)
