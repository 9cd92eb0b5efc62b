"""Encoder-decoder network for joint humerus/scapula labeling.

Layout (``b`` = ``base_channels``, ``K`` = ``num_classes``)::

    level  encoder                          decoder
    0      ConvBlock(1 -> b)        ------> concat(b + b) -> Localization(2b -> b) -> head 1^3 (b -> K)
             | maxpool 2                                  ^ UpConv(2b -> b)
    1      ConvBlock(b -> 2b)       ------> concat(2b + 2b) -> Localization(4b -> 2b)
             | maxpool 2                                  ^ UpConv(4b -> 2b)
    2      ConvBlock(2b -> 4b)  ----------------------------+

A ConvBlock is two 3^3 convolutions (BN + PReLU after each) with the block
input added back to the output, through a bias-free 1^3 projection when the
channel count changes. UpConv is a kernel-2 stride-2 transposed convolution
followed by BN + PReLU. A Localization block is a 3^3 convolution then a
1^3 convolution halving the channels, both with BN + PReLU. Convolutions
followed by batch norm carry no bias. The head is the only biased layer and
starts at zero, so a fresh model predicts 1/K everywhere.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError, GeometryError, NumericError, ShapeError
from .volume import LabelVolume, ScalarVolume, VolumeGeometry, check_same_geometry

LOG_CLAMP_EPS = 1e-7
PRELU_INIT = 0.25


@dataclass(frozen=True)
class NetworkConfig:
    num_classes: int = 3
    base_channels: int = 16
    levels: int = 3
    head_init_std: float = 0.0  # 0 gives an all-zero classifier (uniform start)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.levels != 3:
            raise ValueError("only the 3-level (two pooling) layout is supported")
        if self.head_init_std < 0:
            raise ValueError(f"head_init_std must be >= 0, got {self.head_init_std}")

    @property
    def divisor(self) -> int:
        return 2 ** (self.levels - 1)


def _conv_bn_act(cin: int, cout: int, kernel: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(cin, cout, kernel, padding=kernel // 2, bias=False),
        nn.BatchNorm3d(cout),
        nn.PReLU(cout, init=PRELU_INIT),
    )


class ConvBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv1 = _conv_bn_act(cin, cout, 3)
        self.conv2 = _conv_bn_act(cout, cout, 3)
        self.proj = None if cin == cout else nn.Conv3d(cin, cout, 1, bias=False)

    def forward(self, x):
        skip = x if self.proj is None else self.proj(x)
        return self.conv2(self.conv1(x)) + skip


class UpConv(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.deconv = nn.ConvTranspose3d(cin, cout, 2, stride=2, bias=False)
        self.bn = nn.BatchNorm3d(cout)
        self.act = nn.PReLU(cout, init=PRELU_INIT)

    def forward(self, x):
        return self.act(self.bn(self.deconv(x)))


class LocalizationBlock(nn.Module):
    def __init__(self, cin: int):
        super().__init__()
        self.conv3 = _conv_bn_act(cin, cin, 3)
        self.conv1 = _conv_bn_act(cin, cin // 2, 1)

    def forward(self, x):
        return self.conv1(self.conv3(x))


class SegNet3D(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        b, k = config.base_channels, config.num_classes
        self.enc0 = ConvBlock(1, b)
        self.enc1 = ConvBlock(b, 2 * b)
        self.enc2 = ConvBlock(2 * b, 4 * b)
        self.pool = nn.MaxPool3d(2)
        self.up1 = UpConv(4 * b, 2 * b)
        self.loc1 = LocalizationBlock(4 * b)
        self.up0 = UpConv(2 * b, b)
        self.loc0 = LocalizationBlock(2 * b)
        self.head = nn.Conv3d(b, k, 1, bias=True)

    def forward(self, x):
        """Input ``(N, 1, D, H, W)``, returns logits ``(N, K, D, H, W)``."""
        e0 = self.enc0(x)
        e1 = self.enc1(self.pool(e0))
        e2 = self.enc2(self.pool(e1))
        d1 = self.loc1(torch.cat([self.up1(e2), e1], dim=1))
        d0 = self.loc0(torch.cat([self.up0(d1), e0], dim=1))
        return self.head(d0)


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


@dataclass
class ModelState:
    """Network configuration, weights, optimizer moments and round index.

    ``optimizer_state`` holds the Adam state dict after training (None for a
    fresh model) so warm-started rounds continue with their moments.
    """

    config: NetworkConfig
    net: SegNet3D
    round: int = 0
    optimizer_state: dict[str, Any] | None = field(default=None, repr=False)

    def named_parameters(self) -> dict[str, torch.Tensor]:
        return {k: v.detach().clone() for k, v in self.net.state_dict().items()}

    def clone(self) -> "ModelState":
        net = SegNet3D(self.config).to(next(self.net.parameters()).dtype)
        net.load_state_dict(self.net.state_dict())
        opt = None
        if self.optimizer_state is not None:
            opt = _clone_nested(self.optimizer_state)
        return ModelState(self.config, net, self.round, opt)


def _clone_nested(obj):
    if isinstance(obj, torch.Tensor):
        return obj.detach().clone()
    if isinstance(obj, dict):
        return {k: _clone_nested(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clone_nested(v) for v in obj]
    return obj


def init_model(config: NetworkConfig, seed: int) -> ModelState:
    """Fresh model; Kaiming-normal convolution weights drawn from ``seed``."""
    gen = torch.Generator().manual_seed(int(seed))
    net = SegNet3D(config)
    for name, module in net.named_modules():
        if module is net.head:
            nn.init.zeros_(module.bias)
            if config.head_init_std > 0:
                nn.init.normal_(module.weight, 0.0, config.head_init_std, generator=gen)
            else:
                nn.init.zeros_(module.weight)
        elif isinstance(module, (nn.Conv3d, nn.ConvTranspose3d)):
            # fan_in variance scaling matched to the PReLU initial slope
            nn.init.kaiming_normal_(
                module.weight, a=PRELU_INIT, mode="fan_in", nonlinearity="leaky_relu", generator=gen
            )
        elif isinstance(module, nn.BatchNorm3d):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)
    return ModelState(config, net, round=0)


@dataclass(frozen=True, eq=False)
class ProbabilityVolume:
    """Per-voxel class probabilities, data shape ``(K, nz, ny, nx)``."""

    geometry: VolumeGeometry
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[1:] != self.geometry.shape:
            raise GeometryError(
                f"probability data shape {self.data.shape} does not fit geometry {self.geometry.shape}"
            )

    @property
    def channels(self) -> int:
        return self.data.shape[0]


def check_input_dims(config: NetworkConfig, geometry: VolumeGeometry) -> None:
    d = config.divisor
    if any(n % d for n in geometry.dims):
        raise ShapeError(f"volume dims {geometry.dims} must be divisible by {d} on every axis")


def _param_dtype(net: nn.Module) -> torch.dtype:
    return next(net.parameters()).dtype


def volume_tensor(vol: ScalarVolume, dtype=torch.float32) -> torch.Tensor:
    return torch.tensor(vol.data, dtype=dtype)[None, None]


def compute_logits(model: ModelState, x: torch.Tensor, mode: str = "eval") -> torch.Tensor:
    """Raw network output for a ``(N, 1, D, H, W)`` tensor, with autograd."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and x.shape[0] * int(np.prod([n // model.config.divisor for n in x.shape[2:]])) < 2:
        # batch norm needs at least two values per channel at the coarsest level
        raise ShapeError(f"input {tuple(x.shape[2:])} is too small to normalize with batch statistics")
    model.net.train(mode == "train")
    return model.net(x)


def forward(model: ModelState, vol: ScalarVolume, mode: str = "eval") -> ProbabilityVolume:
    """Softmax class probabilities for one volume.

    ``mode='train'`` normalizes with batch statistics and updates the batch
    norm running averages; ``'eval'`` uses the running averages.
    """
    check_input_dims(model.config, vol.geometry)
    with torch.no_grad():
        logits = compute_logits(model, volume_tensor(vol, _param_dtype(model.net)), mode)
        probs = torch.softmax(logits, dim=1)[0]
    if not torch.isfinite(probs).all():
        raise NumericError("non-finite activations in forward pass")
    return ProbabilityVolume(vol.geometry, probs.numpy())


def cross_entropy_sum(probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Summed cross entropy of ``(K, ...)`` probabilities against integer labels.

    Probabilities are clamped to ``[1e-7, 1]`` before the log.
    """
    p_true = torch.gather(probs, 0, target.long().unsqueeze(0))
    return -torch.log(p_true.clamp(LOG_CLAMP_EPS, 1.0)).sum()


def cross_entropy_loss(pred: ProbabilityVolume, truth: LabelVolume) -> float:
    """Multi-class cross entropy summed over every voxel of the volume."""
    check_same_geometry(pred.geometry, truth.geometry, "prediction and truth")
    p = np.take_along_axis(pred.data.astype(np.float64), truth.data[None].astype(np.intp), axis=0)
    return float(-np.log(np.clip(p, LOG_CLAMP_EPS, 1.0)).sum())


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

CHECKPOINT_FORMAT = "boneseg-checkpoint-1"


def save_checkpoint(model: ModelState, path) -> Path:
    """Write an uncompressed ``.npz`` archive readable by ``numpy.load``.

    Entries:
      ``__meta__``          uint8 UTF-8 JSON {format, config, round, adam_steps, adam_hparams}
      ``param/<name>``      state-dict tensors (float32 '<f4'; batch-norm counters int64 '<i8')
      ``adam/<i>/exp_avg``, ``adam/<i>/exp_avg_sq``  per-parameter Adam moments, float32
    """
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_name(path.name + ".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    for name, t in model.net.state_dict().items():
        arr = t.detach().cpu().numpy()
        arrays[f"param/{name}"] = arr.astype("<i8" if arr.dtype.kind in "iu" else "<f4")
    meta: dict[str, Any] = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "round": model.round,
        "adam_steps": None,
        "adam_hparams": None,
    }
    if model.optimizer_state is not None:
        steps = {}
        for idx, st in model.optimizer_state["state"].items():
            arrays[f"adam/{idx}/exp_avg"] = st["exp_avg"].cpu().numpy().astype("<f4")
            arrays[f"adam/{idx}/exp_avg_sq"] = st["exp_avg_sq"].cpu().numpy().astype("<f4")
            steps[str(idx)] = float(st["step"])
        meta["adam_steps"] = steps
        meta["adam_hparams"] = [
            {k: v for k, v in g.items() if k != "params"} for g in model.optimizer_state["param_groups"]
        ]
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    # fixed entry timestamps keep identical models byte-identical on disk
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())
    return path


def load_checkpoint(path) -> ModelState:
    path = Path(path)
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint archive ({exc})") from exc
    with archive:
        if "__meta__" not in archive.files:
            raise CheckpointError(f"{path}: missing metadata entry")
        meta = json.loads(archive["__meta__"].tobytes().decode("utf-8"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: unsupported format {meta.get('format')!r}")
        config = NetworkConfig(**meta["config"])
        net = SegNet3D(config)
        state = {}
        for name in net.state_dict():
            key = f"param/{name}"
            if key not in archive.files:
                raise CheckpointError(f"{path}: missing tensor {name}")
            state[name] = torch.from_numpy(np.array(archive[key]))
        net.load_state_dict(state)
        opt_state = None
        if meta.get("adam_steps") is not None:
            st = {}
            for idx, step in meta["adam_steps"].items():
                st[int(idx)] = {
                    "step": torch.tensor(step),
                    "exp_avg": torch.from_numpy(np.array(archive[f"adam/{idx}/exp_avg"])),
                    "exp_avg_sq": torch.from_numpy(np.array(archive[f"adam/{idx}/exp_avg_sq"])),
                }
            groups = []
            n_params = len(list(net.parameters()))
            for g in meta["adam_hparams"]:
                g = dict(g)
                if isinstance(g.get("betas"), list):
                    g["betas"] = tuple(g["betas"])
                g["params"] = list(range(n_params))
                groups.append(g)
            opt_state = {"state": st, "param_groups": groups}
    return ModelState(config, net, int(meta["round"]), opt_state)


__all__ = [
    "NetworkConfig", "ModelState", "ProbabilityVolume", "SegNet3D", "init_model", "forward",
    "compute_logits", "cross_entropy_loss", "cross_entropy_sum", "save_checkpoint",
    "load_checkpoint", "count_parameters",
]
