"""K-fold cross-validation of the self-reinforced pipeline."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CrossValidationError
from .metrics import METRIC_NAMES, TARGET_ORDER, MetricsReport, aggregate, evaluate_case
from .network import NetworkConfig
from .selftrain import RoundPlan, Sample, audit_no_leakage, pseudo_label, self_reinforced_train
from .trainer import TrainConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FoldPlan:
    n: int
    k: int
    seed: int
    assignment: tuple[int, ...]

    def fold(self, f: int) -> list[int]:
        """Case indices of fold ``f``, ascending."""
        return [i for i, a in enumerate(self.assignment) if a == f]

    def folds(self) -> list[list[int]]:
        return [self.fold(f) for f in range(self.k)]

    def train_indices(self, f: int) -> list[int]:
        return [i for i, a in enumerate(self.assignment) if a != f]


def split_kfold(n: int, k: int = 5, seed: int = 0) -> FoldPlan:
    """Shuffle ``n`` cases with ``seed`` and deal them into ``k`` contiguous folds.

    Fold sizes differ by at most one; the remainder goes to the lowest folds.
    """
    if k < 2 or k > n:
        raise CrossValidationError(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    base, rem = divmod(n, k)
    assignment = np.empty(n, dtype=int)
    start = 0
    for f in range(k):
        size = base + (1 if f < rem else 0)
        assignment[perm[start:start + size]] = f
        start += size
    return FoldPlan(n, k, seed, tuple(int(a) for a in assignment))


@dataclass
class GroupResult:
    group: int
    test_ids: list[str]
    train_ids: list[str]
    case_reports: list[list[MetricsReport]]  # [round][case]
    means: list[MetricsReport]  # per round
    manifests: list[list[tuple[str, str]]] = field(default_factory=list)  # [round] -> (case_id, provenance)
    logs: list = field(default_factory=list)


@dataclass
class CrossValResult:
    plan: FoldPlan
    groups: list[GroupResult]

    @property
    def rounds(self) -> int:
        return len(self.groups[0].means)

    def grand_means(self) -> list[MetricsReport]:
        """Mean over groups of the per-group round means."""
        out = []
        for r in range(self.rounds):
            out.append(aggregate([g.means[r] for g in self.groups], case_id=f"mean_R{r}"))
        return out

    def table(self, include_mean: bool = True) -> list[tuple[str, str, list[float]]]:
        rows = [(f"G{g.group + 1}", f"R{r}", g.means[r].row()) for g in self.groups for r in range(self.rounds)]
        if include_mean:
            rows += [("mean", f"R{r}", m.row()) for r, m in enumerate(self.grand_means())]
        return rows

    def to_csv(self, path, include_mean: bool = True) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TABLE_FIELDS)
            for g, r, vals in self.table(include_mean):
                w.writerow([g, r, *("nan" if math.isnan(v) else repr(v) for v in vals)])
        return path


TABLE_FIELDS = ("group", "round", *(f"{t}_{m}" for t in TARGET_ORDER for m in METRIC_NAMES))


def read_table_csv(path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _case_fields(case):
    """(case_id, image, training label, reference label) of a benchmark case or Sample."""
    if isinstance(case, Sample):
        return case.case_id, case.image, case.label, case.label
    ref = getattr(case, "clean", None)
    gt = case.gt
    return case.case_id, case.image, gt, ref if ref is not None else gt


def run_group(
    f: int,
    cases: Sequence,
    plan: FoldPlan,
    net_cfg: NetworkConfig,
    train_cfg: TrainConfig,
    round_plan: RoundPlan,
    reference: str = "clean",
    percentile: float = 100,
) -> GroupResult:
    fields = [_case_fields(c) for c in cases]
    test_idx, train_idx = plan.fold(f), plan.train_indices(f)
    held_out = {fields[i][0] for i in test_idx}
    train_samples = [Sample(fields[i][1], fields[i][2], fields[i][0]) for i in train_idx]
    manifests = []

    def on_round(r, model, tlog, samples):
        audit_no_leakage(samples, held_out)
        manifests.append([(s.case_id, s.provenance) for s in samples])

    result = self_reinforced_train(train_samples, net_cfg, train_cfg, round_plan, on_round=on_round)
    case_reports, means = [], []
    for model in result.models:
        reps = []
        for i in test_idx:
            cid, image, gt, ref = fields[i]
            truth = ref if reference == "clean" else gt
            reps.append(evaluate_case(pseudo_label(model, image), truth, cid, percentile))
        case_reports.append(reps)
        means.append(aggregate(reps, case_id=f"G{f + 1}_R{model.round}"))
    log.info("group %d done", f + 1)
    return GroupResult(
        f,
        [fields[i][0] for i in test_idx],
        [fields[i][0] for i in train_idx],
        case_reports,
        means,
        manifests,
        result.logs,
    )


def run_crossval(
    cases: Sequence,
    net_cfg: NetworkConfig,
    train_cfg: TrainConfig,
    round_plan: RoundPlan,
    k: int = 5,
    seed: int = 0,
    reference: str = "clean",
    percentile: float = 100,
    jobs: int = 1,
) -> CrossValResult:
    """Self-reinforced training per group, every round evaluated on the held-out fold.

    ``reference='clean'`` scores against the clean labels of benchmark cases
    (falling back to the training labels when a case has none); ``'gt'``
    scores against the training labels.
    """
    if reference not in ("clean", "gt"):
        raise CrossValidationError(f"reference must be 'clean' or 'gt', got {reference!r}")
    plan = split_kfold(len(cases), k, seed)
    args = (cases, plan, net_cfg, train_cfg, round_plan, reference, percentile)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            groups = list(pool.map(run_group, range(k), *([a] * k for a in args)))
    else:
        groups = [run_group(f, *args) for f in range(k)]
    return CrossValResult(plan, groups)
