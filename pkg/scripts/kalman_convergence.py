#!/usr/bin/env python3
"""Open-loop misalignment curve of the frequency-domain Kalman filter.

Identifies a random short path from white-noise excitation and prints the
normalized misalignment every quarter second.
"""

import argparse

import numpy as np
from scipy.signal import lfilter

from howlsim import FrameConfig, FrequencyDomainKalman


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seconds", type=float, default=5.0)
    ap.add_argument("--taps", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    fs = 16000.0
    rng = np.random.default_rng(args.seed)
    h = np.zeros(40 + args.taps)
    h[40:] = rng.standard_normal(args.taps) * np.exp(-np.arange(args.taps) / 24.0)
    h[40] += 1.0

    x = rng.standard_normal(int(args.seconds * fs))
    y = lfilter(h, [1.0], x)
    cfg = FrameConfig()
    kal = FrequencyDomainKalman(cfg)

    print(f"{'time (s)':>9s} {'misalignment (dB)':>18s}")
    report_every = int(0.25 * fs / cfg.hop)
    for m in range(x.size // cfg.hop):
        sl = slice(m * cfg.hop, (m + 1) * cfg.hop)
        kal.step(y[sl], x[sl])
        if (m + 1) % report_every == 0:
            t = (m + 1) * cfg.hop / fs
            print(f"{t:9.2f} {kal.misalignment(h):18.1f}")


if __name__ == "__main__":
    main()
