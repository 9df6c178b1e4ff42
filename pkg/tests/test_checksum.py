"""Checksum function and its single-bit-flip detection property.

The reference oracle below evaluates the recurrence with string-based
rotation, sharing no code with instrument.compute_checksum.
"""

from hypothesis import assume, given, strategies as st

from dualsec.instrument import accumulate32, compute_checksum, fold26, rotl32


def oracle_checksum(words):
    bits = "0" * 32
    for w in words:
        bits = bits[1:] + bits[0]  # rotate left by one
        bits = format(int(bits, 2) ^ (w & 0xFFFFFFFF), "032b")
    acc = int(bits, 2)
    return ((acc & 0x03FFFFFF) ^ (acc >> 26)) & 0x03FFFFFF


def test_single_word_case():
    assert compute_checksum([0x00000001]) == 0x0000001


def test_two_word_example():
    # acc=1, then rotl(1,1)=2, 2 xor 2 = 0
    assert compute_checksum([0x00000001, 0x00000002]) == 0x0000000


def test_rotl32():
    assert rotl32(0x80000000) == 1
    assert rotl32(1) == 2


words_lists = st.lists(st.integers(0, 0xFFFFFFFF), min_size=1, max_size=24)


@given(words_lists)
def test_matches_independent_oracle(words):
    assert compute_checksum(words) == oracle_checksum(words)


@given(words_lists, st.integers(0, 23), st.integers(0, 0xFFFFFFFF))
def test_order_sensitive_adjacent_swap(words, idx, other):
    """Swapping distinct adjacent words changes the checksum.

    Exception: a complement pair (x, ~x) swaps invisibly because
    rot(x^~x) == x^~x; random pairs avoid that measure-zero case.
    """
    assume(len(words) >= 2)
    i = idx % (len(words) - 1)
    words[i + 1] = other
    assume(words[i] != words[i + 1])
    assume(words[i] ^ words[i + 1] != 0xFFFFFFFF)
    swapped = list(words)
    swapped[i], swapped[i + 1] = swapped[i + 1], swapped[i]
    assert compute_checksum(words) != compute_checksum(swapped)


def test_complement_pair_swap_is_the_known_blind_spot():
    words = [0x12345678, ~0x12345678 & 0xFFFFFFFF, 0xDEADBEEF]
    swapped = [words[1], words[0], words[2]]
    assert compute_checksum(words) == compute_checksum(swapped)


def test_single_bit_flip_flips_exactly_one_checksum_bit():
    """Exhaustive over every word position and all 32 bit positions."""
    words = [0xDEADBEEF, 0x00000000, 0x12345678, 0x0BADF00D, 0xFFFFFFFF, 0x41414141]
    base = compute_checksum(words)
    for i in range(len(words)):
        for bit in range(32):
            mutated = list(words)
            mutated[i] ^= 1 << bit
            other = compute_checksum(mutated)
            assert other != base
            assert bin(other ^ base).count("1") == 1


@given(words_lists, st.integers(0, 31), st.integers(0, 1000))
def test_single_bit_flip_property(words, bit, pick):
    i = pick % len(words)
    mutated = list(words)
    mutated[i] ^= 1 << bit
    delta = compute_checksum(words) ^ compute_checksum(mutated)
    assert bin(delta).count("1") == 1


@given(words_lists)
def test_fold_of_accumulator(words):
    assert compute_checksum(words) == fold26(accumulate32(words))
    assert compute_checksum(words) < 1 << 26
