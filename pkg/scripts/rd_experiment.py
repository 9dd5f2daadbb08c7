"""Train a desk-scale checkpoint and print its rate-distortion table.

Usage: python scripts/rd_experiment.py [--out DIR] [--seed N] [--steps N]

Wraps the CLI so the run leaves the same artifacts a user would get, then
renders the sweep CSV as an aligned table with the VBR operating points
next to fixed-depth coding of the same checkpoint.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from vrvq.cli import main as vrvq_main  # noqa: E402


def run(argv) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/rd_experiment")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--steps", type=int, default=2000)
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rc = vrvq_main(["train", "--seed", str(args.seed), "--steps", str(args.steps), "--out", str(out)])
    if rc != 0:
        return rc
    csv_path = out / "rd_sweep.csv"
    rc = vrvq_main(["sweep", "--checkpoint", str(out), "--out", str(csv_path)])
    if rc != 0:
        return rc

    lines = csv_path.read_text().splitlines()
    header = lines[1].split(",")
    print()
    print(f"{'mode':>5} {'l/n':>6} {'kbps':>8} {'si_sdr':>8} {'wav_l1':>9} {'spec_l1':>9}")
    for line in lines[2:]:
        row = dict(zip(header, line.split(",")))
        print(
            f"{row['mode']:>5} {row['l_or_n']:>6} {float(row['kbps']):>8.3f} "
            f"{float(row['si_sdr']):>8.2f} {float(row['waveform_l1']):>9.4f} "
            f"{float(row['spectral_l1']):>9.4f}"
        )
    print(f"\nartifacts under {out}")
    return 0


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
