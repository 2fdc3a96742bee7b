"""Cyclic redundancy checks used by the broadcast and shared channels."""

import numpy as np

# Generator polynomials without the leading x^L term.
POLYNOMIALS = {
    "24A": (0x864CFB, 24),
    "24B": (0x800063, 24),
    "16": (0x1021, 16),
    "8": (0x9B, 8),
}


def crc_value(bits, kind="24A"):
    """Remainder of ``bits(x) * x^L`` modulo the generator, as an integer (MSB first)."""
    poly, length = POLYNOMIALS[kind]
    top = length - 1
    mask = (1 << length) - 1
    reg = 0
    for b in np.asarray(bits, dtype=np.uint8).tolist():
        fb = ((reg >> top) & 1) ^ b
        reg = (reg << 1) & mask
        if fb:
            reg ^= poly
    return reg


def int_to_bits(value, width):
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def bits_to_int(bits):
    out = 0
    for b in np.asarray(bits, dtype=np.uint8).tolist():
        out = (out << 1) | b
    return out


def attach_crc(bits, kind="24A", mask=0):
    """Append parity bits, XORed with ``mask`` (RNTI or antenna mask)."""
    _, length = POLYNOMIALS[kind]
    parity = crc_value(bits, kind) ^ mask
    return np.concatenate([np.asarray(bits, dtype=np.uint8), int_to_bits(parity, length)])


def crc_syndrome(block, kind="24A"):
    """Received parity XOR recomputed parity; equals the applied mask when the block is intact."""
    _, length = POLYNOMIALS[kind]
    block = np.asarray(block, dtype=np.uint8)
    payload, parity = block[:-length], block[-length:]
    return crc_value(payload, kind) ^ bits_to_int(parity)


def check_crc(block, kind="24A", mask=0):
    return crc_syndrome(block, kind) == mask
