"""
How many servers, and how fast a link?
======================================

Sweep the cluster size and link rate, and compare the fused plans with a
per-layer split that merges every layer on the primary.
"""

from rfsplit import ClusterSpec, dpfp, modnn_baseline_time, sweep_cluster_size, vgg16

model = vgg16()
cluster = ClusterSpec.homogeneous(10)

# speedup over one server flattens out once transfers start to dominate
sweep = sweep_cluster_size(model, cluster, 10)
for r in sweep.results:
    print(f"K={r.num_es:2d}  compute {r.report.t_cmp * 1e3:6.3f} ms  "
          f"transfer {r.report.t_com * 1e3:6.3f} ms  rho {r.rho:.3f}")
print("best K:", sweep.best_k)

# faster links help until compute is the bottleneck again
for gbps in (10, 40, 100, 400):
    r = dpfp(model, cluster.take(7).with_rate(gbps * 1e9))
    print(f"{gbps:4d} Gbps: {r.total * 1e3:.3f} ms, plan {r.plan}")

# per-layer merging moves far more data
seven = cluster.take(7)
ours, base = dpfp(model, seven).report, modnn_baseline_time(model, seven)
print(f"fused {ours.bytes / 1e6:.2f} MB vs per-layer {base.bytes / 1e6:.2f} MB "
      f"({base.gathered_bytes / 1e6:.2f} MB gathered)")
