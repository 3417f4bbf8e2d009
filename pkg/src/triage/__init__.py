"""Patient-similarity-network triage toolkit.

Pipeline stages: tabular preprocessing (`ingest`), similarity-graph
construction (`simnet`), a small reverse-mode tensor engine (`autograd`),
graph layers and model assemblies (`gnnlayers`), tabular baselines
(`baselines`), the experiment harness and CLI (`harness`, `cli`), and the
inductive prediction service (`serve`).
"""

__version__ = "0.1.0"
