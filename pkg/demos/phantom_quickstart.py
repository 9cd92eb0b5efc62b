"""Generate a phantom, train a small network on it and score the prediction.

Runs in about a minute on one CPU core:

    python demos/phantom_quickstart.py
"""

import numpy as np
import torch

from boneseg.metrics import evaluate_case
from boneseg.network import NetworkConfig, init_model
from boneseg.phantom import CorruptionSpec, PhantomSpec, corrupt_labels, generate_phantom
from boneseg.selftrain import pseudo_label
from boneseg.trainer import TrainConfig, train

torch.set_num_threads(1)

image, clean = generate_phantom(PhantomSpec(seed=0))
noisy = corrupt_labels(clean, CorruptionSpec(severity=0.5, seed=1))
print("phantom dims (x, y, z):", image.geometry.dims)
print("voxels per class:", np.bincount(clean.data.ravel(), minlength=3))

before = evaluate_case(noisy, clean, "corrupted")
print("corrupted labels vs clean: DSC humerus %.3f scapula %.3f" % (before["humerus"].dsc, before["scapula"].dsc))

model = init_model(NetworkConfig(base_channels=16, head_init_std=0.1), seed=0)
model, log = train(model, [(image, clean)], TrainConfig(epochs=100, seed=0))
print("loss: first epoch %.4f, last epoch %.4f" % (log.losses[0], log.losses[-1]))

report = evaluate_case(pseudo_label(model, image), clean, "phantom0")
for target in ("humerus", "scapula", "both"):
    m = report[target]
    print(f"{target:8s} DSC {m.dsc:.3f}  HD {m.hd:.2f} mm  ASD {m.asd:.3f} mm")
