"""Calibrate the read-disturb surrogate against the packaged 3x3 coupling matrix.

Finds alpha such that the all-LRS run degrades 23 points more than the same
run without coupling after 2e5 cycles, then reports the checks that the
shipped defaults must satisfy.  Usage: python scripts/calibrate_drift.py [--e-a 0.6]
"""

import argparse
from importlib import resources

from xbartherm.crossbar_circuit import (DriftParams, InferencePattern, additional_degradation,
                                        calibrate_drift, degradation, run_inference)
from xbartherm.extraction import CouplingMatrix
from xbartherm.thermal_network import ThermalNetwork


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--e-a", type=float, default=0.6, help="activation energy [eV]")
    ap.add_argument("--beta", type=float, default=2.0)
    ap.add_argument("--target", type=float, default=23.0)
    ap.add_argument("--cycles", type=int, default=200_000)
    args = ap.parse_args()

    text = resources.files("xbartherm.data").joinpath("coupling_3x3_sp80nm.txt").read_text()
    net = ThermalNetwork.from_matrix(CouplingMatrix.loads(text))
    p = calibrate_drift(net, args.target, args.cycles, args.e_a, args.beta)
    print(f"alpha = {p.alpha!r}  e_a = {p.e_a}  beta = {p.beta}")

    p = DriftParams(alpha=p.alpha, e_a=p.e_a, beta=p.beta)
    for name in ("ALL_LRS", "CASE_A", "CASE_B"):
        pat = InferencePattern.preset(name)
        extra = additional_degradation(pat, net, args.cycles, drift=p)
        print(f"{name:8s} additional degradation at {args.cycles}: {extra:.3f} points")
    tr = run_inference(InferencePattern.preset("ALL_LRS"), net.without_coupling(),
                       n_cycles=10_000, drift=p, log_policy=[10_000])
    print(f"no-coupling degradation at 1e4 cycles: {degradation(tr, 10_000):.4f} points")


if __name__ == "__main__":
    main()
