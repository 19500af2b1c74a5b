"""
Splitting VGG-16 across seven edge servers
==========================================

Pick fused blocks by dynamic programming, then look at what each server
computes and what crosses the network between blocks.
"""

from rfsplit import ClusterSpec, assign_slices, dpfp, exchange_sizes, verify_coverage, vgg16

model = vgg16()
cluster = ClusterSpec.homogeneous(7)  # 13.45 TFLOPS at 35% efficiency, 100 Gbps

result = dpfp(model, cluster)
print("plan:", result.plan)
for b in result.report.blocks:
    name = "dense" if b.layers is None else f"{b.layers[0]}-{b.layers[1]}"
    print(f"  {name:>6}: compute {b.t_cmp * 1e3:.3f} ms, transfer {b.t_com * 1e3:.3f} ms, "
          f"{b.bytes / 1e6:.2f} MB")
print(f"total {result.total * 1e3:.3f} ms")

# rows per server in the first block: output slice, input slice, and the
# extra halo rows recomputed inside the block
slices = assign_slices(model, result.plan, cluster.ratios())
a, b = result.plan.blocks[0]
for k, sl in enumerate(slices.blocks[0], 1):
    print(f"  ES{k}: out {sl.out_rows}  in {sl.in_rows}  layer {a} rows {sl.layer_rows[a]}")

# every output row's receptive field is available where it is computed
print("coverage:", bool(verify_coverage(model, result.plan, slices)))
print("exchanged:", exchange_sizes(model, result.plan, slices).total, "bytes")
