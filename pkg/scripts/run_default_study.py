"""Run the default study and print the convergence and deviation tables.

    python scripts/run_default_study.py [out_dir] [--plots]
"""

import sys
from pathlib import Path

from queue_mfg import io
from queue_mfg.cli import Scenario, run_scenario


def show(path):
    header, rows = io.read_csv(path)
    print(path.name)
    print("  " + "  ".join(f"{h:>12}" for h in header))
    for r in rows:
        print("  " + "  ".join(f"{v[:12]:>12}" for v in r))


def main(argv):
    args = [a for a in argv if not a.startswith("--")]
    out = Path(args[0] if args else "study_out")
    sc = Scenario(out=str(out), plots="--plots" in argv)
    files = run_scenario(sc, "study", out)
    for name in ("convergence.csv", "nash_report.csv"):
        show(out / name)
    print(f"{len(files)} files in {out}")


if __name__ == "__main__":
    main(sys.argv[1:])
