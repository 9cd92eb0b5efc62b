"""Self-reinforced training: retrain on model-generated, distorted labels.

Round 0 is plain supervised training on the ground-truth pairs. Each later
round relabels the training images with the previous model, adds distorted
copies of those pseudo-labelled pairs, and trains again on the extended set.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .augment import DEFAULT_CONTROL_SPACING_MM, DEFAULT_SIGMA_MM, DistortionField, sample_distortion, warp
from .errors import CrossValidationError, TrainingError
from .io import store_volume
from .network import ModelState, NetworkConfig, ProbabilityVolume, init_model, save_checkpoint
from .trainer import TrainConfig, TrainLog, predict, train
from .volume import LabelVolume, ScalarVolume

log = logging.getLogger(__name__)

GT, PSEUDO, AUGMENTED = "gt", "pseudo", "augmented"


@dataclass(frozen=True)
class RoundPlan:
    rounds: int = 2
    augment_copies: int = 1
    keep_original_gt: bool = True
    warm_start: bool = True
    sigma_mm: float = DEFAULT_SIGMA_MM
    control_spacing_mm: float = DEFAULT_CONTROL_SPACING_MM
    round_epochs: int | None = None  # epochs for rounds >= 1; None reuses TrainConfig.epochs

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError(f"rounds must be >= 0, got {self.rounds}")
        if self.augment_copies < 0:
            raise ValueError(f"augment_copies must be >= 0, got {self.augment_copies}")
        if self.round_epochs is not None and self.round_epochs < 1:
            raise ValueError("round_epochs must be >= 1")


@dataclass(eq=False)
class Sample:
    """A training pair with provenance; augmented samples keep their source case id."""

    image: ScalarVolume
    label: LabelVolume
    case_id: str
    provenance: str = GT
    field: DistortionField | None = None
    field_seed: int | None = None


def argmax_labels(prob: ProbabilityVolume) -> LabelVolume:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class
    return LabelVolume(prob.geometry, np.argmax(prob.data, axis=0).astype(np.uint8))


def pseudo_label(model: ModelState, vol: ScalarVolume) -> LabelVolume:
    return argmax_labels(predict(model, vol))


def extend_dataset(dataset: Sequence[Sample], model: ModelState, plan: RoundPlan, seed: int) -> list[Sample]:
    """Source pairs (optionally) + pseudo-labelled pairs + distorted copies.

    Returns ``n * (2 + a)`` samples when the ground truth is kept and
    ``n * (1 + a)`` otherwise, for ``n`` sources and ``a`` copies each.
    """
    if not dataset:
        raise TrainingError("cannot extend an empty dataset")
    seeds = np.random.SeedSequence(seed).spawn(len(dataset))
    out = [s for s in dataset] if plan.keep_original_gt else []
    for src, ss in zip(dataset, seeds):
        pl = pseudo_label(model, src.image)
        out.append(Sample(src.image, pl, src.case_id, PSEUDO))
        for fs in ss.generate_state(plan.augment_copies, dtype=np.uint32):
            fs = int(fs)
            f = sample_distortion(src.image.geometry, plan.sigma_mm, plan.control_spacing_mm, seed=fs)
            out.append(Sample(warp(src.image, f), warp(pl, f), src.case_id, AUGMENTED, f, fs))
    return out


@dataclass
class SelfTrainResult:
    models: list[ModelState]
    logs: list[TrainLog]
    datasets: list[list[Sample]] = field(repr=False)

    def __len__(self):
        return len(self.models)

    def __getitem__(self, i):
        return self.models[i]

    def __iter__(self):
        return iter(self.models)


def _as_samples(dataset) -> list[Sample]:
    out = []
    for i, item in enumerate(dataset):
        if isinstance(item, Sample):
            out.append(item)
        elif hasattr(item, "image") and hasattr(item, "gt"):
            out.append(Sample(item.image, item.gt, item.case_id, GT))
        else:
            image, label = item
            out.append(Sample(image, label, f"case{i:03d}", GT))
    return out


def self_reinforced_train(
    dataset,
    net_cfg: NetworkConfig,
    train_cfg: TrainConfig,
    plan: RoundPlan,
    *,
    on_round: Callable[[int, ModelState, TrainLog, list[Sample]], None] | None = None,
) -> SelfTrainResult:
    """Train round 0 on ``dataset`` and ``plan.rounds`` extended rounds after it.

    ``dataset`` holds ground-truth pairs: :class:`Sample`, benchmark cases, or
    ``(image, label)`` tuples. Round ``r`` trains with seed ``train_cfg.seed + r``;
    round 0 is therefore identical to ``train(init_model(net_cfg, seed), ...)``.
    """
    sources = _as_samples(dataset)
    if not sources:
        raise TrainingError("training dataset is empty")
    model, tlog = train(init_model(net_cfg, train_cfg.seed), sources, train_cfg)
    model.round = 0
    models, logs, datasets = [model], [tlog], [sources]
    if on_round is not None:
        on_round(0, model, tlog, sources)
    for r in range(1, plan.rounds + 1):
        cfg_r = replace(
            train_cfg,
            seed=train_cfg.seed + r,
            epochs=plan.round_epochs or train_cfg.epochs,
        )
        data_r = extend_dataset(sources, models[-1], plan, seed=train_cfg.seed * 1000 + r)
        start = models[-1] if plan.warm_start else init_model(net_cfg, cfg_r.seed)
        model, tlog = train(start, data_r, cfg_r)
        model.round = r
        log.info("round %d: %d samples, final loss %.5f", r, len(data_r), tlog.losses[-1])
        models.append(model)
        logs.append(tlog)
        datasets.append(data_r)
        if on_round is not None:
            on_round(r, model, tlog, data_r)
    return SelfTrainResult(models, logs, datasets)


# --------------------------------------------------------------------------
# manifests
# --------------------------------------------------------------------------

MANIFEST_FIELDS = ("index", "case_id", "provenance", "image", "label", "field_seed")


def audit_no_leakage(samples: Sequence[Sample], held_out: set[str]) -> None:
    """Raise if any sample (including augmented copies) derives from a held-out case."""
    leaked = sorted({s.case_id for s in samples if s.case_id in held_out})
    if leaked:
        raise CrossValidationError(f"held-out cases leaked into training data: {', '.join(leaked)}")


def write_round(out_dir, r: int, model: ModelState, tlog: TrainLog, samples: Sequence[Sample], save_volumes: bool = True) -> Path:
    """Checkpoint ``model_r{r}``, train log and a manifest of every training pair.

    Ground-truth pairs are listed by case id only; pseudo and augmented
    volumes are written under ``round{r}/`` when ``save_volumes`` is set.
    """
    out_dir = Path(out_dir)
    save_checkpoint(model, out_dir / f"model_r{r}.npz")
    tlog.to_csv(out_dir / f"trainlog_r{r}.csv")
    vol_dir = out_dir / f"round{r}"
    manifest = out_dir / f"manifest_r{r}.csv"
    with manifest.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_FIELDS)
        for i, s in enumerate(samples):
            img_path = lbl_path = ""
            if s.provenance != GT and save_volumes:
                stem = f"{i:04d}_{s.case_id}_{s.provenance}"
                lbl_path = store_volume(s.label, vol_dir / f"{stem}_label").relative_to(out_dir).as_posix()
                if s.provenance == AUGMENTED:
                    img_path = store_volume(s.image, vol_dir / f"{stem}_image").relative_to(out_dir).as_posix()
            w.writerow([i, s.case_id, s.provenance, img_path, lbl_path, "" if s.field_seed is None else s.field_seed])
    return manifest


def read_manifest(path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
