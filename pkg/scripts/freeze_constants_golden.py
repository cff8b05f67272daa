"""Regenerate tests/data/constants_p0.csv from the arbitrary-precision oracle.

The file is checked in; rerun only when the oracle itself changes.
"""

import csv
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

import mpmath as mp  # noqa: E402
from oracles import constants_mp  # noqa: E402

P0 = dict(L1=1, L2=1, rho=0, C_rho=1, H0=1, h0=1, u0=0, L1_bar=1, a=1, b=1, gamma=2, beta=1, d=1,
          sigma_Z=1, m0=0, alpha=1)


def main():
    out = ROOT / "tests" / "data" / "constants_p0.csv"
    vals = constants_mp(**P0, eta=0.01)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "value", "eta"])
        for name, v in vals.items():
            w.writerow([name, mp.nstr(v, 25), "0.01"])
    print(f"wrote {len(vals)} constants to {out}")


if __name__ == "__main__":
    main()
