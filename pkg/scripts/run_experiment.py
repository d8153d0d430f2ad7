"""Full protocol: 5 seeds x {hybrid, classical} on a BreastMNIST archive, then the paired comparison.

Equivalent to ``qfusion run-experiment``; kept as a script so the protocol is runnable
without installing the console entry point.

    python3 scripts/run_experiment.py --data breastmnist.npz --out runs/full
"""

import sys

from qfusion.cli import main

if __name__ == "__main__":
    sys.exit(main(["run-experiment", *sys.argv[1:]]))
