"""
Latency tables and speedup estimates
====================================

Runtime is modelled additively: each layer contributes the table entry for
its configuration (heads kept, or FFN width kept). Tables come from a file or
from a host-side matmul benchmark.
"""

from zipkit import estimate_runtime, estimate_speedup
from zipkit.chain import synthetic_chain
from zipkit.latency import bench_kernel, bench_table, example_table

table = example_table()
print("FFN entries:", table.entries["ffn_columns"])
print("head entries:", table.entries["attention_heads"])

dense = [("attention_heads", 12), ("ffn_columns", 3072)]
small = [("attention_heads", 6), ("ffn_columns", 302)]
print("dense layer:", estimate_runtime(dense, table), "ms")
print("6 heads, width 302:", estimate_runtime(small, table), "ms")
print("speedup:", estimate_speedup(small, table).speedup)

# Widths between table rows are interpolated linearly; key 0 costs nothing.
print("width 1000 ->", table.lookup("ffn_columns", 1000), "ms")

# Host benchmark: the median of repeated matmuls.
print("256x256 @ 256x128:", bench_kernel((256, 256, 128)), "ms")

model = synthetic_chain(4, hidden=32, ffn_width=128, n_heads=8)
host = bench_table(model.manifest, batch=128, reps=5)
print("benchmarked dense runtime:", host.dense_runtime_ms, "ms")
print("FFN levels timed:", len(host.entries["ffn_columns"]))
