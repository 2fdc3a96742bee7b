"""Numerology and coding tables shared by the transmitter oracle and the receiver.

Everything the encoders and decoders must agree on lives here so the two
directions cannot drift apart.
"""

import numpy as np

# Bandwidth code (MIB dl-Bandwidth) -> number of downlink resource blocks.
N_RB_BY_CODE = (6, 15, 25, 50, 75, 100)

# Native sampling rate and FFT size for each bandwidth.
SAMPLE_RATE_BY_NRB = {6: 1.92e6, 15: 3.84e6, 25: 7.68e6, 50: 15.36e6, 75: 23.04e6, 100: 30.72e6}
FFT_SIZE_BY_NRB = {6: 128, 15: 256, 25: 512, 50: 1024, 75: 1536, 100: 2048}

SC_PER_RB = 12
SYMBOLS_PER_SLOT = 7
SYMBOLS_PER_SUBFRAME = 14
SUBFRAMES_PER_FRAME = 10
N_RB_MAX = 110

# Reference timing at the 1.92 MHz synchronisation rate.
SYNC_RATE_HZ = 1.92e6
SYNC_FFT = 128
SLOT_LEN_SYNC = 960
HALF_FRAME_LEN_SYNC = 9600
FRAME_LEN_SYNC = 19200
SUBCARRIER_SPACING_HZ = 15e3

SI_RNTI = 0xFFFF

# CRC-16 masks applied to the PBCH parity bits, keyed by cell reference port count.
PBCH_CRC_MASKS = {1: 0x0000, 2: 0xFFFF, 4: 0x5555}

PHICH_NG = ("1/6", "1/2", "1", "2")
PHICH_NG_VALUE = {"1/6": 1 / 6, "1/2": 0.5, "1": 1.0, "2": 2.0}

# Column permutation of the 32-column sub-block interleaver.
CONV_SUBBLOCK_PERM = np.array(
    [1, 17, 9, 25, 5, 21, 13, 29, 3, 19, 11, 27, 7, 23, 15, 31,
     0, 16, 8, 24, 4, 20, 12, 28, 2, 18, 10, 26, 6, 22, 14, 30])
TURBO_SUBBLOCK_PERM = np.array(
    [0, 16, 8, 24, 4, 20, 12, 28, 2, 18, 10, 26, 6, 22, 14, 30,
     1, 17, 9, 25, 5, 21, 13, 29, 3, 19, 11, 27, 7, 23, 15, 31])

CFI_CODEWORDS = {
    1: np.array([0, 1, 1] * 10 + [0, 1], dtype=np.uint8),
    2: np.array([1, 0, 1] * 10 + [1, 0], dtype=np.uint8),
    3: np.array([1, 1, 0] * 10 + [1, 1], dtype=np.uint8),
}

# QPP turbo interleaver parameters: K -> (f1, f2).
QPP_PARAMS = {
    40: (3, 10), 48: (7, 12), 56: (19, 42), 64: (7, 16), 72: (7, 18),
    80: (11, 20), 88: (5, 22), 96: (11, 24), 104: (7, 26), 112: (41, 84),
    120: (103, 90), 128: (15, 32), 136: (9, 34), 144: (17, 108), 152: (9, 38),
    160: (21, 120), 168: (101, 84), 176: (21, 44), 184: (57, 46), 192: (23, 48),
    200: (13, 50), 208: (27, 52), 216: (11, 36), 224: (27, 56), 232: (85, 58),
    240: (29, 60), 248: (33, 62), 256: (15, 32), 264: (17, 198), 272: (33, 68),
    280: (103, 210), 288: (19, 36), 296: (19, 74), 304: (37, 76), 312: (19, 78),
    320: (21, 120), 328: (21, 82), 336: (115, 84), 344: (193, 86), 352: (21, 44),
    360: (133, 90), 368: (81, 46), 376: (45, 94), 384: (23, 48), 392: (243, 98),
    400: (151, 40), 408: (155, 102), 416: (25, 52), 424: (51, 106), 432: (47, 72),
    440: (91, 110), 448: (29, 168), 456: (29, 114), 464: (247, 58), 472: (29, 118),
    480: (89, 180), 488: (91, 122), 496: (157, 62), 504: (55, 84), 512: (31, 64),
    528: (17, 66), 544: (35, 68), 560: (227, 420), 576: (65, 96), 592: (19, 74),
    608: (37, 76), 624: (41, 234), 640: (39, 80), 656: (185, 82), 672: (43, 252),
    688: (21, 86), 704: (155, 44), 720: (79, 120), 736: (139, 92), 752: (23, 94),
    768: (217, 48), 784: (25, 98), 800: (17, 80), 816: (127, 102), 832: (25, 52),
    848: (239, 106), 864: (17, 48), 880: (137, 110), 896: (215, 112), 912: (29, 114),
    928: (15, 58), 944: (147, 118), 960: (29, 60), 976: (59, 122), 992: (65, 124),
    1008: (55, 84), 1024: (31, 64), 1056: (17, 66), 1088: (171, 204), 1120: (67, 140),
    1152: (35, 72), 1184: (19, 74), 1216: (39, 76), 1248: (19, 78), 1280: (199, 240),
    1312: (21, 82), 1344: (211, 252), 1376: (21, 86), 1408: (43, 88), 1440: (149, 60),
    1472: (45, 92), 1504: (49, 846), 1536: (71, 48), 1568: (13, 28), 1600: (17, 80),
    1632: (25, 102), 1664: (183, 104), 1696: (55, 954), 1728: (127, 96), 1760: (27, 110),
    1792: (29, 112), 1824: (29, 114), 1856: (57, 116), 1888: (45, 354), 1920: (31, 120),
    1952: (59, 610), 1984: (185, 124), 2016: (113, 420), 2048: (31, 64), 2112: (17, 66),
    2176: (171, 136), 2240: (209, 420), 2304: (253, 216), 2368: (367, 444), 2432: (265, 456),
    2496: (181, 468), 2560: (39, 80), 2624: (27, 164), 2688: (127, 504), 2752: (143, 172),
    2816: (43, 88), 2880: (29, 300), 2944: (45, 92), 3008: (157, 188), 3072: (47, 96),
    3136: (13, 28), 3200: (111, 240), 3264: (443, 204), 3328: (51, 104), 3392: (51, 212),
    3456: (451, 192), 3520: (257, 220), 3584: (57, 336), 3648: (313, 228), 3712: (271, 232),
    3776: (179, 236), 3840: (331, 120), 3904: (363, 244), 3968: (375, 248), 4032: (127, 168),
    4096: (31, 64), 4160: (33, 130), 4224: (43, 264), 4288: (33, 134), 4352: (477, 408),
    4416: (35, 138), 4480: (233, 280), 4544: (357, 142), 4608: (337, 480), 4672: (37, 146),
    4736: (71, 444), 4800: (71, 120), 4864: (37, 152), 4928: (39, 462), 4992: (127, 234),
    5056: (39, 158), 5120: (39, 80), 5184: (31, 96), 5248: (113, 902), 5312: (41, 166),
    5376: (251, 336), 5440: (43, 170), 5504: (21, 86), 5568: (43, 174), 5632: (45, 176),
    5696: (45, 178), 5760: (161, 120), 5824: (89, 182), 5888: (323, 184), 5952: (47, 186),
    6016: (23, 94), 6080: (47, 190), 6144: (263, 480),
}
TURBO_BLOCK_SIZES = tuple(sorted(QPP_PARAMS))
TURBO_MAX_K = 6144

# Transport block sizes for QPSK system-information grants.
# Format 1A uses the N_PRB = 2 or 3 column selected by the TPC LSB.
TBS_1A_NPRB2 = (
    32, 56, 72, 104, 120, 144, 176, 224, 256, 296, 328, 376, 440, 488,
    552, 600, 632, 696, 776, 840, 904, 1000, 1064, 1128, 1192, 1256, 1480)
TBS_1A_NPRB3 = (
    56, 88, 144, 176, 208, 224, 256, 328, 392, 456, 504, 584, 680, 744,
    840, 904, 968, 1064, 1160, 1288, 1384, 1480, 1608, 1736, 1800, 1864, 2216)
TBS_1C = (
    40, 56, 72, 120, 136, 144, 176, 208, 224, 256, 280, 296, 328, 336, 392, 488,
    552, 600, 632, 696, 776, 840, 904, 1000, 1064, 1128, 1224, 1288, 1384, 1480,
    1608, 1736)

# DCI payload sizes that collide with format 1A/1C ambiguity; a zero bit is appended.
DCI_AMBIGUOUS_SIZES = frozenset({12, 14, 16, 20, 24, 26, 32, 40, 44, 56})


def fft_size(n_rb):
    try:
        return FFT_SIZE_BY_NRB[n_rb]
    except KeyError:
        raise ValueError(f"unsupported bandwidth: n_rb={n_rb}, expected one of {N_RB_BY_CODE}") from None


def native_rate(n_rb):
    fft_size(n_rb)
    return SAMPLE_RATE_BY_NRB[n_rb]


def cp_lengths(nfft):
    """Normal cyclic-prefix lengths for the 7 symbols of a slot at FFT size ``nfft``."""
    scale = nfft // SYNC_FFT
    return (10 * scale,) + (9 * scale,) * 6


def slot_length(nfft):
    return 15 * nfft // 2


def symbol_starts(nfft, n_symbols):
    """Sample index of the CP start of each symbol, counted from a slot boundary."""
    cps = cp_lengths(nfft)
    starts = np.empty(n_symbols, dtype=np.int64)
    pos = 0
    for i in range(n_symbols):
        starts[i] = pos
        pos += cps[i % SYMBOLS_PER_SLOT] + nfft
    return starts


def n_control_symbols(cfi, n_rb):
    """OFDM symbols occupied by the control region; narrow carriers add one."""
    if cfi not in (1, 2, 3):
        raise ValueError(f"CFI must be 1, 2 or 3, got {cfi}")
    return cfi + 1 if n_rb <= 10 else cfi


def phich_groups(ng, n_rb):
    return int(np.ceil(PHICH_NG_VALUE[ng] * n_rb / 8))


def rbg_size(n_rb):
    if n_rb <= 10:
        return 1
    if n_rb <= 26:
        return 2
    if n_rb <= 63:
        return 3
    return 4


def n_gap1(n_rb):
    """Gap between the two halves of a distributed VRB allocation (gap 1)."""
    if n_rb <= 10:
        return int(np.ceil(n_rb / 2))
    if n_rb == 11:
        return 4
    if n_rb <= 19:
        return 8
    if n_rb <= 26:
        return 12
    if n_rb <= 44:
        return 18
    if n_rb <= 63:
        return 27
    if n_rb <= 79:
        return 32
    return 48
