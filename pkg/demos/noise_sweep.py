"""Small benchmark sweep over noise levels, written to a CSV report.

    python demos/noise_sweep.py [out.csv]
"""
import sys

from udfs.bench_harness import RegressorConfig, run_benchmark

cfg = RegressorConfig(n_intermediaries=3, max_skeletons=20_000)
report = run_benchmark(["Nguyen-1", "Koza-1", "Nguyen-8"], cfg, noise_levels=(0.0, 0.01, 0.1),
                       repeats=2, progress=lambda r: print(
                           f"{r.problem:<10} noise {r.noise:<5g} recovered {r.recovered!s:<5} {r.model}"))
for s in report.summary():
    print(f"{s['problem']:<10} noise {s['noise']:<5g} recovery {s['recovery']:.2f} "
          f"median R2 {s['median_r2']:.6f}")
if len(sys.argv) > 1:
    report.to_csv(sys.argv[1])
