"""
Distillation objectives
=======================

The token loss averages per-token Euclidean distances over non-padded
positions and over the layers that were not dropped. The logit loss is a
temperature-scaled KL divergence from the teacher's distribution.
"""

import numpy as np

from zipkit.distill import PROFILES, combined_loss, logit_kl, token_loss, token_loss_layer

rng = np.random.default_rng(0)
teacher = rng.standard_normal((2, 5, 8))
student = teacher + 0.1 * rng.standard_normal((2, 5, 8))
padding = np.zeros((2, 5), dtype=bool)
padding[1, 3:] = True  # the second sequence is shorter

print("token loss, one layer:", token_loss_layer(student, teacher, padding))

# Values at padded positions do not matter.
noisy = student.copy()
noisy[padding] = 100.0
print("with garbage in the padding:", token_loss_layer(noisy, teacher, padding))

# A dropped middle layer (None) is left out of the average.
print("three layers, middle dropped:",
      token_loss([(student, teacher), None, (teacher, teacher)], padding))

s_logits, t_logits = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
for T in (1.0, 2.0, 4.0):
    print(f"KL at T={T:g}:", logit_kl(s_logits, t_logits, T))

for name, weights in PROFILES.items():
    print(name, weights, "->", combined_loss(0.7, 0.2, 0.4, weights))
