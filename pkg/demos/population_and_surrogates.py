"""Generate the 125-clinician population and check the five surrogate models.

    python3 demos/population_and_surrogates.py
"""

import numpy as np

from silicotrial.metrics import auc
from silicotrial.population import REFERENCE_COUNTS, generate_population
from silicotrial.surrogates import default_surrogates, predict_many

clinicians = generate_population(125, seed=7)
positions = {}
for c in clinicians:
    positions[c.class_of_position] = positions.get(c.class_of_position, 0) + 1
print("position counts:", positions)
print("reference      :", REFERENCE_COUNTS["position"])

rng = np.random.default_rng(0)
ids = [f"case{i}" for i in range(10_000)]
labels = (rng.random(10_000) < 0.5).astype(int)
for name, model in default_surrogates(0).items():
    cats, p0h, p3h, scores = predict_many(model, ids, labels)
    mix = {k: round(float(np.mean(cats == k)), 3) for k in ("YS", "EW", "NS")}
    print(f"{name:9s} target {model.target_auc:.2f}  empirical {auc(scores, labels):.3f}  bucket {model.quality_bucket}  {mix}")
