"""Dr-DiD vs Semi-DiD on DGP2 (heteroskedastic errors, AR(1) confounders).

    python3 scripts/table2.py --n 200 --p 50 --reps 100
"""

import sys

from _tables import run

if __name__ == "__main__":
    sys.exit(run("dgp2", "out/table2"))
