"""Central-difference checks of the hand-written backward passes."""
from pillarkit.checks import run_suite

for seed in (0, 1):
    print(f"seed {seed}")
    for r in run_suite(seed):
        print("  " + r.line())
