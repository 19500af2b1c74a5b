"""
Receptive fields of VGG-16, layer by layer
==========================================

Walk the receptive-field recurrence through the bundled VGG-16 and check
each step against the brute-force window composition.
"""

from rfsplit import oracle_trace, rf_forward, vgg16

model = vgg16()

# each prefix 1..i: output size, jump, field and center of the first output row
print(f"{'layers':>7} {'kind':>5} {'OF':>4} {'jump':>5} {'field':>6} {'center':>7}")
for i in range(1, model.num_spatial + 1):
    t = rf_forward(model, 1, i)
    assert t == oracle_trace(model, 1, i)
    print(f"{'1-' + str(i):>7} {model.layer(i).kind:>5} {t.size:>4} {t.jump:>5} "
          f"{t.field:>6} {str(t.center):>7}")

# a range that starts mid-network is traced the same way
t = rf_forward(model, 8, 14)
print(f"\nlayers 8-14: field {t.field} rows of layer 7's output, jump {t.jump}")
