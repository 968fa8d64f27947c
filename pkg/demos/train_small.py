"""Train each generator for a few hundred steps on Bell-diagonal teleportation data.

The constructive heads (Cholesky, LDL) emit valid states from the first step;
the direct head has to learn positivity through its penalty terms.

Run: python demos/train_small.py [steps]
"""

import sys
import time

import numpy as np

from pigan import families, gan, metrics, training

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
records, summary = families.sample_dataset("bell_diagonal", "teleportation", 500, seed=0)
data = np.array([r[1] for r in records])
print(f"dataset: {summary['n']} states, acceptance rate {summary['acceptance_rate']:.3f}")
print(f"self-fidelity baseline {metrics.self_fidelity_baseline(data):.4f}\n")

weights = gan.LossWeights.for_task("teleportation")
for kind in ("cholesky", "ldl", "direct"):
    cfg = training.TrainConfig(kind=kind, family="bell_diagonal", task="teleportation",
                               train_size=500, steps=steps, batch=128, eval_every=steps,
                               eval_samples=500, seed=0)
    t0 = time.perf_counter()
    result = training.train(cfg, weights, data)
    _, m = result.final
    print(f"{kind:>8s}: accuracy {m.accuracy:.3f}  valid {m.valid_fraction:.3f}  "
          f"criterion rate {m.criterion_rate:.3f}  cross-fidelity {m.cross_fidelity:.3f}  "
          f"FID {m.fid:.3f}  ({time.perf_counter() - t0:.1f} s)")
