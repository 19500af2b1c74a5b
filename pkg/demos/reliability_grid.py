"""
Meeting a 30 FPS deadline over a jittery uplink
===============================================

Offloading time is Gaussian; add the inference time and ask how often the
result is back before the next frame.
"""

from rfsplit import ClusterSpec, dpfp, vgg16
from rfsplit.reliability import (ChannelModel, min_offload_rate, rate_fluctuation,
                                 reliability_analytic, reliability_monte_carlo)

task_bits = 125e3 * 8
print(f"minimum mean rate for 30 FPS: {min_offload_rate(task_bits, 30) / 1e6:.1f} Mbps")

model = vgg16()
t_inf = {k: dpfp(model, ClusterSpec.homogeneous(k)).total for k in (1, 2, 7)}

for rate, delta in [(40, 1), (40, 2), (60, 2), (60, 3), (100, 3), (100, 4), (100, 5)]:
    ch = ChannelModel(rate * 1e6, delta / 1e3, task_bits, 1 / 30)
    cells = "  ".join(f"K={k}: {reliability_analytic(ch, t):.6f}" for k, t in t_inf.items())
    print(f"{rate:3d} Mbps, delta {delta} ms (phi {rate_fluctuation(ch) / 1e6:4.1f} Mbps)  {cells}")

# sampling agrees with the closed form
ch = ChannelModel(40e6, 2e-3, task_bits, 1 / 30)
print("analytic", reliability_analytic(ch, t_inf[1]),
      "sampled", reliability_monte_carlo(ch, t_inf[1], 10**6))
