"""Dr-DiD vs Semi-DiD on DGP1 (homogeneous errors, independent confounders).

    python3 scripts/table1.py --reps 200            # n=500, p in {10, 50}
    python3 scripts/table1.py --full --threads 4    # whole grid
"""

import sys

from _tables import run

if __name__ == "__main__":
    sys.exit(run("dgp1", "out/table1"))
