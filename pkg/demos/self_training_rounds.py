"""Self-reinforced training on a small phantom benchmark, scored per round.

Trains on 8 cases with corrupted labels and evaluates rounds 0..2 on 4
held-out cases against their clean labels. About 5 minutes on one core:

    python demos/self_training_rounds.py
"""

from collections import Counter

import torch

from boneseg.crossval import split_kfold
from boneseg.metrics import aggregate, evaluate_case
from boneseg.network import NetworkConfig
from boneseg.phantom import CorruptionSpec, generate_benchmark
from boneseg.selftrain import RoundPlan, Sample, pseudo_label, self_reinforced_train
from boneseg.trainer import TrainConfig

torch.set_num_threads(1)

cases = generate_benchmark(12, corruption=CorruptionSpec(severity=0.5), seed=0)
plan = split_kfold(len(cases), k=3, seed=0)
test = [cases[i] for i in plan.fold(0)]
sources = [Sample(cases[i].image, cases[i].gt, cases[i].case_id) for i in plan.train_indices(0)]


def on_round(r, model, tlog, samples):
    kinds = Counter(s.provenance for s in samples)
    print(f"round {r}: {len(samples)} samples {dict(kinds)}, final loss {tlog.losses[-1]:.4f}")


result = self_reinforced_train(
    sources,
    NetworkConfig(base_channels=16, head_init_std=0.1),
    TrainConfig(epochs=20, seed=0),
    RoundPlan(rounds=2, round_epochs=5),
    on_round=on_round,
)

for model in result.models:
    mean = aggregate([evaluate_case(pseudo_label(model, c.image), c.clean, c.case_id) for c in test])
    print(f"R{model.round}: DSC humerus {mean['humerus'].dsc:.3f}  scapula {mean['scapula'].dsc:.3f}  "
          f"both {mean['both'].dsc:.3f}")
