"""Small real service instance for the console's end-to-end test."""

import sys

import numpy as np
import uvicorn

sys.path.insert(0, "../src")

from triage.gnnlayers import init_params, model_spec
from triage.serve import Checkpoint, http_api
from triage.simnet import SimilarityMetric, build_graph
from triage.ingest import FEATURE_COLUMNS


def main(port: int):
    rng = np.random.default_rng(42)
    X = rng.random((60, 16))
    X[:, 14] = (rng.random(60) < 0.5).astype(float)   # Residence type
    X[:, 15] = rng.integers(0, 4, 60) / 3.0           # Smoking status
    y = rng.integers(0, 4, 60).astype(np.int32)
    metric = SimilarityMetric("euclidean")
    g = build_graph(X, y, metric, 0.35)
    spec = model_spec("gcn4")
    params = init_params(spec, 1)
    names = [name for name, _ in FEATURE_COLUMNS]
    kinds = [kind for _, kind in FEATURE_COLUMNS]
    encoders = {
        "Residence type": ["Rural", "Urban"],
        "Smoking status": ["Unknown", "never smoked", "previously smoked", "smoke"],
    }
    mins = np.zeros(16)
    maxs = np.ones(16)
    maxs[15] = 3.0  # smoking encodes to 0..3 before scaling
    ckpt = Checkpoint(spec, params, metric, 0.35, names, kinds, mins, maxs,
                      encoders, "fixture", "e2e-fixture")
    uvicorn.run(http_api(ckpt, g), host="127.0.0.1", port=port,
                log_level="error")


if __name__ == "__main__":
    main(int(sys.argv[1]))
