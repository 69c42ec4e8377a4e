"""
A small end-to-end experiment
=============================

Several trials, each with its own scene, prior, refinement and baselines.
Results land in a directory of CSVs plus a run manifest.
"""

import sys
from dataclasses import replace
import tempfile
from pathlib import Path

from posediff.harness import load_config, run_experiment
from posediff.io import read_csv

cfg = load_config(text="""
    trials = 3
    seed = 42
    n_scans = [3, 8]
    scene { n_world_points = 3000 }
""")
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()) / "run"
cfg = replace(cfg, out=str(out))

report = run_experiment(cfg, jobs=1)
print("exit code:", report.exit_code)
print("files:", sorted(p.name for p in out.iterdir()))

print("\nmethod   trial  RE_mean    TE_mean   RR")
for row in read_csv(out / "summary.csv"):
    print(f"{row['method']:8s} {row['trial']:>5s}  {float(row['RE_mean']):8.3f}  "
          f"{float(row['TE_mean']):8.4f}  {float(row['RR']):.2f}")
