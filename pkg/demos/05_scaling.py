# %% [markdown]
# # Wall-clock scaling
#
# A short run of the benchmark harness. Slopes on a log-log plot of time
# against N should sit near 2 for softmax and near 1 for the linear kernel;
# small N is dominated by overhead, so the full sweep
# (`maresu bench`) goes up to N = 262144.

# %%
from maresu.bench import RunConfig, run_bench

result = run_bench(RunConfig(seed=0, sizes=(1024, 2048, 4096, 8192), d_k=64, d_v=64, repeats=5))
for r in result.records:
    print(f"{r.method:8s} n={r.n:<6d} {r.wall_ns / 1e6:8.2f} ms  aux floats {r.peak_aux_floats}")
for method, slope in result.slopes.items():
    print(f"slope {method}: {slope:.2f}")

# %%
print(result.to_csv().splitlines()[0])
