"""Reference LTE downlink generator and flat-channel impairment model.

Everything the receiver decodes is produced here with the same tables and
encoders, so the decode chain can be checked end to end.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import dsp
from . import resources as res
from .capture import EPOCH, IQCapture
from .cellsearch import generate_pss, generate_sss
from .ofdmgrid import ResourceGrid, generate_crs, modulate
from .pbch import MibInfo, encode_pbch, pbch_port_symbols
from .precoding import qpsk_modulate, txdiv_encode
from .sib1chain import (DciError, DciMessage, build_pdcch, common_candidates, encode_dci,
                        encode_dlsch, encode_pcfich, encode_pdsch, is_sib1_frame,
                        pdsch_positions, sib1_rv)
from .sibparse import Sib1Info, compose_ecgi, encode_sib1
from .tables import (N_RB_BY_CODE, PHICH_NG, SI_RNTI, SYMBOLS_PER_SUBFRAME, TBS_1A_NPRB2,
                     TBS_1A_NPRB3, TBS_1C, n_control_symbols, native_rate)


@dataclass
class DownlinkConfig:
    pci: int = 0
    n_rb: int = 6
    sfn0: int = 0
    n_frames: int = 8
    cell_ref_ports: int = 1
    phich_duration: str = "normal"
    phich_resource: str = "1"
    cfi: int = 2
    sib1: Sib1Info = field(default_factory=lambda: Sib1Info("310", "410", 0x1234, 0x00ABCDE))
    dci: DciMessage | None = None     # None selects a grant automatically
    agg_level: int | None = None   # None picks the largest level that fits
    first_cce: int = 0
    si_rnti: int = SI_RNTI
    rate_hz: float | None = None      # None keeps the native rate for n_rb
    center_freq_hz: float = 739e6
    data_seed: int = 0
    filler: bool = True

    @property
    def mib(self):
        return MibInfo(self.n_rb, self.phich_duration, self.phich_resource, self.sfn0,
                       self.cell_ref_ports)


@dataclass
class ImpairmentSpec:
    cfo_hz: float = 0.0
    snr_db: float = float("inf")
    delay_samples: int = 0
    flat_gain: complex = 1.0


class ConfigError(ValueError):
    pass


def sib1_payload_bits(cfg):
    return encode_sib1(cfg.sib1)


def auto_dci(cfg, payload_len, max_rate=1 / 3):
    """Smallest format-1A grant whose TBS holds the payload at a low code rate."""
    n_rb = cfg.n_rb
    n_ctrl_cfg = cfg.cfi
    for n_vrb in range(2, n_rb + 1):
        for table, tpc in ((TBS_1A_NPRB3, 1), (TBS_1A_NPRB2, 0)):
            for mcs, tbs in enumerate(table):
                if tbs < payload_len:
                    continue
                dci = DciMessage("1A", n_rb, 0, n_vrb, mcs, cfg.si_rnti, True, 0, tpc)
                k, _ = pdsch_positions(dci, cfg.pci, cfg.cell_ref_ports, n_ctrl_cfg, 5)
                if (tbs + 24) <= max_rate * 2 * k.size:
                    return dci
                break
    raise ConfigError("no format 1A grant fits the SIB1 payload")


def validate_config(cfg):
    if not 0 <= cfg.pci <= 503:
        raise ConfigError(f"PCI {cfg.pci} outside 0..503")
    if cfg.n_rb not in N_RB_BY_CODE:
        raise ConfigError(f"bandwidth {cfg.n_rb} RB not in {N_RB_BY_CODE}")
    if cfg.cell_ref_ports not in (1, 2, 4):
        raise ConfigError("cell_ref_ports must be 1, 2 or 4")
    if cfg.cfi not in (1, 2, 3):
        raise ConfigError("CFI must be 1, 2 or 3")
    if cfg.phich_resource not in PHICH_NG:
        raise ConfigError(f"PHICH resource must be one of {PHICH_NG}")
    if cfg.n_frames < 1:
        raise ConfigError("need at least one frame")
    if cfg.phich_duration == "extended" and n_control_symbols(cfg.cfi, cfg.n_rb) < 3:
        raise ConfigError("extended PHICH duration needs at least 3 control symbols")
    layout = res.control_layout(cfg.pci, cfg.n_rb, cfg.cell_ref_ports, cfg.cfi, cfg.phich_resource,
                                cfg.phich_duration == "extended")
    cands = common_candidates(layout.n_cce)
    if not cands:
        raise ConfigError(f"control region of {layout.n_cce} CCEs holds no common search space")
    if cfg.agg_level is not None and (cfg.agg_level, cfg.first_cce) not in cands:
        raise ConfigError(f"aggregation {cfg.agg_level} at CCE {cfg.first_cce} is not a common "
                          f"search-space candidate with {layout.n_cce} CCEs")
    return layout


def pdcch_candidate(cfg, layout):
    if cfg.agg_level is not None:
        return cfg.agg_level, cfg.first_cce
    return max(common_candidates(layout.n_cce))[0], 0


def resolve_dci(cfg):
    payload = sib1_payload_bits(cfg)
    dci = cfg.dci if cfg.dci is not None else auto_dci(cfg, payload.size)
    dci = replace(dci, n_rb=cfg.n_rb, rnti=cfg.si_rnti)
    try:
        dci.validate()
    except DciError as exc:
        raise ConfigError(str(exc)) from None
    if dci.tbs_bits < payload.size:
        raise ConfigError(f"TBS {dci.tbs_bits} cannot hold the {payload.size}-bit SIB1")
    return dci, payload


def build_grid(cfg):
    """Per-port resource grids, shape (ports, 12*n_rb, 14*10*n_frames)."""
    layout = validate_config(cfg)
    level, cce = pdcch_candidate(cfg, layout)
    dci, payload = resolve_dci(cfg)
    n_ports = cfg.cell_ref_ports
    n_sc = 12 * cfg.n_rb
    n_sf = 10 * cfg.n_frames
    grid = np.zeros((n_ports, n_sc, SYMBOLS_PER_SUBFRAME * n_sf), dtype=complex)
    rng = np.random.default_rng(cfg.data_seed)
    tb = np.concatenate([payload, np.zeros(dci.tbs_bits - payload.size, dtype=np.uint8)])
    pbch_cw = {}
    sync_k = res.sync_subcarriers(cfg.n_rb)
    n_id1, n_id2 = divmod(cfg.pci, 3)
    ctrl_k, ctrl_l = res.reg_re(layout, layout.pcfich)
    pdcch_k, pdcch_l = res.reg_re(layout, layout.pdcch)
    n_ctrl = layout.n_symbols
    all_prbs = tuple(range(cfg.n_rb))
    for sf_idx in range(n_sf):
        c0 = SYMBOLS_PER_SUBFRAME * sf_idx
        sfn = (cfg.sfn0 + sf_idx // 10) % 1024
        sf = sf_idx % 10
        view = grid[:, :, c0:c0 + SYMBOLS_PER_SUBFRAME]
        for p in range(n_ports):
            crs = generate_crs(cfg.pci, p, cfg.n_rb, SYMBOLS_PER_SUBFRAME, sf)
            view[p, crs.k, crs.l] = crs.values
        if sf in (0, 5):
            view[0, sync_k, 6] = generate_pss(n_id2)
            view[0, sync_k, 5] = generate_sss(n_id1, n_id2, sf)
        if sf == 0:
            tti = sfn - sfn % 4
            if tti not in pbch_cw:
                pbch_cw[tti] = encode_pbch(replace(cfg.mib, sfn=tti), cfg.pci, n_ports)
            k, l = res.pbch_re(cfg.pci, cfg.n_rb)
            view[:, k, l] = pbch_port_symbols(pbch_cw[tti], sfn, n_ports)
        view[:, ctrl_k, ctrl_l] = txdiv_encode(encode_pcfich(cfg.cfi, cfg.pci, sf), n_ports)
        sib1_here = sf == 5 and is_sib1_frame(sfn)
        if sib1_here:
            e = encode_dci(dci, level)
            view[:, pdcch_k, pdcch_l] = build_pdcch(layout, [(e, cce)], cfg.pci, sf, n_ports)
            k, l = pdsch_positions(dci, cfg.pci, n_ports, cfg.cfi, sf)
            bits = encode_dlsch(tb, 2 * k.size, sib1_rv(sfn))
            view[:, k, l] = encode_pdsch(bits, cfg.pci, sf, n_ports, cfg.si_rnti)
        if cfg.filler:
            used = set()
            if sib1_here:
                s0, s1 = dci.prb_slots
                used = (set(s0), set(s1))
            slots = tuple(tuple(p for p in all_prbs if not used or p not in used[s]) for s in (0, 1))
            k, l = res.pdsch_re(cfg.pci, cfg.n_rb, n_ports, n_ctrl, slots, sf)
            m = k.size - k.size % 2
            sym = qpsk_modulate(rng.integers(0, 2, 2 * m, dtype=np.uint8))
            view[:, k[:m], l[:m]] = txdiv_encode(sym, n_ports)
    return grid, dci


def generate_downlink(cfg):
    """Unit-RMS baseband capture of the configured cell, starting at frame ``sfn0``."""
    grid, _ = build_grid(cfg)
    x = sum(modulate(grid[p], cfg.n_rb) for p in range(grid.shape[0]))
    x = x / np.sqrt(np.mean(np.abs(x) ** 2))
    rate = native_rate(cfg.n_rb)
    if cfg.rate_hz is not None and cfg.rate_hz != rate:
        x = dsp.resample(x, cfg.rate_hz, rate_hz=rate).data
        x = x / np.sqrt(np.mean(np.abs(x) ** 2))
        rate = cfg.rate_hz
    return IQCapture(x, rate, cfg.center_freq_hz, EPOCH)


def oracle_grid(cfg):
    """Received grid of a unity channel: all ports summed, no OFDM round trip."""
    grid, _ = build_grid(cfg)
    return ResourceGrid(grid.sum(axis=0), cfg.n_rb, cfg.pci)


def grid_awgn(grid, snr_db, rng):
    """Add complex noise of variance 10^(-snr_db/10) per RE (unit-power pilots)."""
    nv = 10 ** (-snr_db / 10)
    noise = np.sqrt(nv / 2) * (rng.standard_normal(grid.re.shape) + 1j * rng.standard_normal(grid.re.shape))
    return ResourceGrid(grid.re + noise, grid.n_rb, grid.pci, grid.cp_mode, grid.first_subframe)


def impair(cap, spec, rng=None):
    """Delay, flat gain, CFO rotation and AWGN at ``spec.snr_db`` relative to signal power."""
    rng = rng if rng is not None else np.random.default_rng()
    x = cap.samples if isinstance(cap, IQCapture) else np.asarray(cap, dtype=complex)
    n = x.size
    d = int(spec.delay_samples)
    if not 0 <= d <= n:
        raise ValueError("delay must lie within the capture")
    sig_power = float(np.mean(np.abs(x) ** 2)) * abs(spec.flat_gain) ** 2
    y = np.concatenate([np.zeros(d, dtype=complex), x[:n - d]]) * spec.flat_gain
    if spec.cfo_hz:
        rate = cap.sample_rate_hz if isinstance(cap, IQCapture) else None
        if rate is None:
            raise ValueError("CFO needs a capture with a sample rate")
        y = y * np.exp(2j * np.pi * spec.cfo_hz * np.arange(n) / rate)
    if np.isfinite(spec.snr_db):
        nv = sig_power / 10 ** (spec.snr_db / 10)
        y = y + np.sqrt(nv / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    if isinstance(cap, IQCapture):
        return IQCapture(y, cap.sample_rate_hz, cap.center_freq_hz, cap.start_time)
    return y


def mix(a, b, gain_b=1.0):
    """Additive mix of two captures of equal rate (truncated to the shorter one)."""
    n = min(a.samples.size, b.samples.size)
    if a.sample_rate_hz != b.sample_rate_hz:
        raise ValueError("captures must share a sample rate")
    return IQCapture(a.samples[:n] + gain_b * b.samples[:n], a.sample_rate_hz, a.center_freq_hz,
                     a.start_time)


def random_config(rng, n_rb_choices=N_RB_BY_CODE, n_frames=4, **overrides):
    """A random but valid configuration (used by loopback tests and scripts)."""
    for _ in range(100):
        n_rb = int(rng.choice(n_rb_choices))
        ports = int(rng.choice([1, 2, 4]))
        cfi = int(rng.integers(1, 4))
        ng = PHICH_NG[int(rng.integers(0, 4))]
        dur = "extended" if rng.random() < 0.25 else "normal"
        if dur == "extended":
            cfi = 3 if n_rb > 10 else int(rng.integers(2, 4))
        mcc = f"{rng.integers(0, 1000):03d}"
        mnc = f"{rng.integers(0, 100):02d}" if rng.random() < 0.5 else f"{rng.integers(0, 1000):03d}"
        sib1 = Sib1Info(mcc, mnc, int(rng.integers(0, 2 ** 16)), int(rng.integers(0, 2 ** 28)))
        kw = dict(pci=int(rng.integers(0, 504)), n_rb=n_rb, sfn0=int(rng.integers(0, 1024)),
                  n_frames=n_frames, cell_ref_ports=ports, phich_duration=dur,
                  phich_resource=ng, cfi=cfi, sib1=sib1, data_seed=int(rng.integers(0, 2 ** 31)))
        kw.update(overrides)
        cfg = DownlinkConfig(**kw)
        try:
            layout = validate_config(cfg)
        except ConfigError:
            continue
        cands = common_candidates(layout.n_cce)
        level, cce = cands[int(rng.integers(0, len(cands)))]
        cfg = replace(cfg, agg_level=level, first_cce=cce)
        try:
            resolve_dci(cfg)
        except ConfigError:
            continue
        return cfg
    raise ConfigError("could not draw a valid configuration")


def loopback_mismatches(cfg, cell):
    """Names of the fields a decoded cell report gets wrong relative to ``cfg``.

    ``cell`` is a scanner cell report (or None when nothing was detected).
    An empty list means PCI, every MIB field and the ECGI were recovered.
    """
    if cell is None:
        return ["cell"]
    bad = []
    if cell.pci != cfg.pci:
        bad.append("pci")
    mib = cell.mib
    if mib is None:
        return bad + ["mib"]
    want = cfg.mib
    for name in ("n_rb", "phich_duration", "phich_resource", "cell_ref_ports"):
        if getattr(mib, name) != getattr(want, name):
            bad.append(name)
    if mib.sfn != cfg.sfn0:
        bad.append("sfn")
    if cell.ecgi != compose_ecgi(cfg.sib1).canonical_text:
        bad.append("ecgi")
    return bad
