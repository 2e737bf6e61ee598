"""Exact GP regression on a 1-D toy problem with a likelihood search."""

import numpy as np

from usgait.gpr import (
    KernelFamily, OptimizerConfig, fit, model_from_bytes, model_to_bytes,
    optimize_hyperparameters, predict,
)

rng = np.random.default_rng(3)
x = np.sort(rng.uniform(0, 10, 40))[:, None]
y = np.sin(x[:, 0]) + 0.1 * rng.standard_normal(40)

spec = optimize_hyperparameters(x, y, KernelFamily.RATIONAL_QUADRATIC, OptimizerConfig(seed=0))
print("selected:", spec)
model = fit(x, y, spec)
print(f"log marginal likelihood {model.log_marginal_likelihood:.3f}, jitter {model.jitter_used}")

q = np.linspace(0, 10, 6)[:, None]
mean, var = predict(model, q, return_variance=True)
for qi, m, v in zip(q[:, 0], mean, var):
    print(f"x={qi:4.1f}  pred {m:+.3f} +/- {2 * np.sqrt(v):.3f}   true {np.sin(qi):+.3f}")

blob = model_to_bytes(model)
print(f"serialized {len(blob)} bytes; reload matches:",
      np.array_equal(predict(model_from_bytes(blob), q), mean))
