"""Small scaling benchmark with log-log slope fits.

Run: python demos/scaling.py
"""

from pigan import bench

cfg = bench.BenchConfig(dims=[32, 48, 64, 96, 128], repeats=5, thread_cap=1)
samples = bench.run_all(cfg)
for row in bench.slope_report(samples, d_min=32):
    lo, hi = row["ci95"]
    print(f"{row['op']:>18s}: slope {row['slope']:.2f}  (95% CI {lo:.2f} .. {hi:.2f})")
print("\nmedian seconds per state at d=64:")
for row in bench.summarize(samples):
    if row["d"] == 64:
        print(f"  {row['op']:>18s}: {row['median']:.2e}")
