"""Tell apart four simulated brains from their observability subspaces.

Each subject is a delay-coupled Wilson-Cowan network on its own random
modular graph. Windows of the excitatory rates map to points of a
Grassmannian, and the clusters should follow subject identity.

    python3 demos/wilson_cowan_subjects.py
"""

import json
import os

from riemts.clustering import clustering_accuracy
from riemts.harness import ExperimentConfig, cluster_features, extract_features, generate_dataset

CONFIG = os.path.join(os.path.dirname(__file__), "configs", "wilson_cowan.json")


def main():
    with open(CONFIG) as fh:
        cfg = ExperimentConfig.from_dict(json.load(fh))
    data, _ = generate_dataset(cfg, 0)
    print(f"{len(data.segments)} subjects, {data.segments[0].shape[0]} nodes, "
          f"{data.segments[0].shape[1]} samples each")
    seq = extract_features(data, cfg, "OB")
    print(f"{len(seq)} windows on {seq.manifold_tag}")
    for m, lab in cluster_features(seq, cfg).items():
        print(f"{m:7s} {clustering_accuracy(lab, seq.labels):.4f}")


if __name__ == "__main__":
    main()
