"""End-to-end loopback over seeded random cell configurations.

Each trial synthesises a random downlink, applies a CFO uniform in
[-7, 7] kHz, a delay uniform within one frame and AWGN, runs the scanner
and compares PCI, MIB fields and ECGI with the configuration.

    python scripts/grand_loopback.py [--trials 100] [--seed 1] [--snr 10]
"""
import argparse
import time

import numpy as np

from ltescan.scanner import scan_capture
from ltescan.tables import native_rate
from ltescan.txoracle import (ImpairmentSpec, generate_downlink, impair, loopback_mismatches,
                              random_config)

FRAME_S = 0.010


def trial(rng, snr_db):
    cfg = random_config(rng)
    cap = generate_downlink(cfg)
    spec = ImpairmentSpec(cfo_hz=float(rng.uniform(-7000, 7000)), snr_db=snr_db,
                          delay_samples=int(rng.integers(0, round(FRAME_S * native_rate(cfg.n_rb)))))
    y = impair(cap, spec, rng)
    t = time.perf_counter()
    res = scan_capture(y.samples, y.sample_rate_hz)
    elapsed = time.perf_counter() - t
    cell = next((c for c in res.cells if c.pci == cfg.pci), res.strongest)
    return cfg, spec, loopback_mismatches(cfg, cell), elapsed


def run(trials=100, seed=1, snr_db=10.0, log=None):
    rng = np.random.default_rng(seed)
    ok = 0
    failures = []
    scan_s = 0.0
    for i in range(trials):
        cfg, spec, bad, elapsed = trial(rng, snr_db)
        scan_s += elapsed
        ok += not bad
        if bad:
            failures.append((i, cfg, spec, bad))
        if log:
            log(f"{i:3d} n_rb={cfg.n_rb:3d} ports={cfg.cell_ref_ports} pci={cfg.pci:3d} "
                f"cfo={spec.cfo_hz:+7.0f} delay={spec.delay_samples:6d} "
                f"{'ok' if not bad else 'FAIL ' + ','.join(bad)} ({elapsed:.2f} s)")
    return ok, failures, scan_s


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--snr", type=float, default=10.0)
    ap.add_argument("--quiet", action="store_true")
    args = ap.parse_args(argv)
    t = time.perf_counter()
    ok, failures, scan_s = run(args.trials, args.seed, args.snr, None if args.quiet else print)
    total = time.perf_counter() - t
    print(f"{ok}/{args.trials} recovered; scan time {scan_s:.1f} s, total {total:.1f} s")
    for i, cfg, spec, bad in failures:
        print(f"  trial {i}: {bad} {cfg} {spec}")


if __name__ == "__main__":
    main()
