"""The modified classification network and its checkpoint format.

A trainable 1x1 gray->RGB conversion feeds an ImageNet-architecture
ResNet-50 feature extractor (classifier removed); the 8x8x2048 output map is
reduced by global max pooling, passed through 0.5 dropout, and classified by
a fully connected sigmoid-activated head. New layers (conversion + head) are
initialized from a fan-based uniform distribution; the backbone can start
from an ImageNet weights file or the same scheme.

A "tiny" backbone with the identical contract (3-channel in, stride-32
feature map out) is available for desk-scale runs and gradient checks.

Checkpoints are zip archives with one .npy entry per weight under canonical
names (conversion.w, conversion.b, backbone.<layer>.<param>, head.w, head.b)
plus a metadata.json document carrying the class names and the spectrogram
constants the weights were trained under.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
import logging
import math
import zipfile
from collections import OrderedDict

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError, ConfigMismatchError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)  # fixed timestamp keeps checkpoint bytes reproducible


class TinyBackbone(nn.Module):
    """Small stride-32 feature extractor standing in for ResNet-50.

    Five plain convolutions; receptive field ~79 pixels, 64 output channels.
    Used for gradient checks and CPU-scale end-to-end tests.
    """

    out_channels = 64

    def __init__(self):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, 16, 7, stride=2, padding=3), nn.ReLU(inplace=True),
            nn.Conv2d(16, 32, 5, stride=2, padding=2), nn.ReLU(inplace=True),
            nn.Conv2d(32, 48, 5, stride=2, padding=2), nn.ReLU(inplace=True),
            nn.Conv2d(48, 64, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(64, 64, 3, stride=2, padding=1), nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.body(x)


def _resnet50_backbone() -> nn.Module:
    from torchvision.models import resnet50

    net = resnet50(weights=None)
    backbone = nn.Sequential(OrderedDict(
        conv1=net.conv1, bn1=net.bn1, relu=net.relu, maxpool=net.maxpool,
        layer1=net.layer1, layer2=net.layer2, layer3=net.layer3, layer4=net.layer4,
    ))
    backbone.out_channels = 2048
    return backbone


def _make_backbone(kind: str) -> nn.Module:
    if kind == "resnet50":
        return _resnet50_backbone()
    if kind == "tiny":
        return TinyBackbone()
    raise ValueError(f"unknown backbone {kind!r}")


class BirdcallNet(nn.Module):
    """conversion -> backbone -> global max pool -> dropout -> sigmoid head."""

    def __init__(self, num_classes: int, backbone: str = "resnet50", dropout_rate: float = 0.5):
        super().__init__()
        if num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        self.conversion = nn.Conv2d(1, 3, kernel_size=1)
        self.backbone = _make_backbone(backbone)
        self.feature_dim = self.backbone.out_channels
        self.dropout = nn.Dropout(dropout_rate)
        self.head = nn.Linear(self.feature_dim, num_classes)
        self.num_classes = num_classes
        self.backbone_kind = backbone
        self.dropout_rate = dropout_rate
        self.class_names = None
        self.init_bounds = {}
        self.meta = {}

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone(self.conversion(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = self.features(x).amax(dim=(2, 3))
        return torch.sigmoid(self.head(self.dropout(pooled)))


def _glorot_uniform_(tensor: torch.Tensor, fan_in: int, fan_out: int, generator) -> float:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        tensor.uniform_(-limit, limit, generator=generator)
    return limit


def _init_conversion(net: BirdcallNet, generator) -> None:
    limit = _glorot_uniform_(net.conversion.weight, 1, 3, generator)
    with torch.no_grad():
        net.conversion.bias.zero_()
    net.init_bounds["conversion_limit"] = limit


def _init_head(net: BirdcallNet, generator) -> None:
    limit = _glorot_uniform_(net.head.weight, net.feature_dim, net.num_classes, generator)
    with torch.no_grad():
        net.head.bias.zero_()
    net.init_bounds["head_limit"] = limit
    net.init_bounds["scheme"] = "fan-based uniform"


def build_model(num_classes: int, backbone_init: str = "random", seed: int = 0,
                backbone: str = "resnet50", dropout: float = 0.5) -> BirdcallNet:
    """Construct the network.

    backbone_init is "random" or a path to a standard ResNet-50 weights file
    (ImageNet state dict; its classifier entries are discarded). Conversion
    and head always start from the seeded uniform scheme.
    """
    torch.manual_seed(seed)  # backbone random init
    net = BirdcallNet(num_classes, backbone=backbone, dropout_rate=dropout)
    if backbone_init != "random":
        _load_backbone_file(net, backbone_init)
    gen = torch.Generator().manual_seed(seed)
    _init_conversion(net, gen)
    _init_head(net, gen)
    net.eval()
    return net


def _load_backbone_file(net: BirdcallNet, path) -> None:
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"cannot read backbone weights {path}: {exc}") from exc
    if not isinstance(state, dict):
        raise CheckpointError(f"{path} is not a state-dict file")
    state = {k: v for k, v in state.items() if not k.startswith("fc.")}
    try:
        net.backbone.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"backbone weight mismatch in {path}: {exc}") from exc


def _to_tensor(batch, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    arr = np.asarray(batch, dtype=np.float64 if dtype == torch.float64 else np.float32)
    if arr.ndim == 4 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    if arr.ndim != 3:
        raise ValueError(f"expected batch of single-channel images, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr)).unsqueeze(1)


def _net_dtype(net: nn.Module) -> torch.dtype:
    return next(net.parameters()).dtype


def _net_device(net: nn.Module) -> torch.device:
    return next(net.parameters()).device


def gray_to_rgb(batch, weights, biases) -> np.ndarray:
    """Reference formula for the conversion layer: out[..., c] = w_c * in + b_c.

    Accepts (B, H, W) or (B, H, W, 1); returns (B, H, W, 3).
    """
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim == 4:
        if arr.shape[-1] != 1:
            raise ValueError("input must be single-channel")
        arr = arr[..., 0]
    w = np.asarray(weights, dtype=np.float64).reshape(3)
    b = np.asarray(biases, dtype=np.float64).reshape(3)
    return arr[..., None] * w + b


def forward(net: BirdcallNet, batch, mode: str = "eval") -> np.ndarray:
    """Score a batch; train mode keeps dropout active, eval is deterministic."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    net.train(mode == "train")
    with torch.no_grad():
        scores = net(_to_tensor(batch, _net_dtype(net)).to(_net_device(net)))
    net.eval()
    return scores.cpu().numpy()


def feature_map(net: BirdcallNet, batch) -> np.ndarray:
    """Backbone output before pooling, channels-last (B, h, w, C)."""
    net.eval()
    with torch.no_grad():
        fmap = net.features(_to_tensor(batch, _net_dtype(net)).to(_net_device(net)))
    return fmap.permute(0, 2, 3, 1).cpu().numpy()


def pooled_features(net: BirdcallNet, batch) -> np.ndarray:
    net.eval()
    with torch.no_grad():
        batch_t = _to_tensor(batch, _net_dtype(net)).to(_net_device(net))
        pooled = net.features(batch_t).amax(dim=(2, 3))
    return pooled.cpu().numpy()


def pool_and_classify(net: BirdcallNet, fmap) -> tuple:
    """Run the pool+head path on an externally supplied channels-last feature map."""
    tensor = torch.as_tensor(np.asarray(fmap), dtype=_net_dtype(net)) \
        .permute(0, 3, 1, 2).to(_net_device(net))
    net.eval()
    with torch.no_grad():
        pooled = tensor.amax(dim=(2, 3))
        scores = torch.sigmoid(net.head(pooled))
    return pooled.cpu().numpy(), scores.cpu().numpy()


def replace_head(net: BirdcallNet, new_num_classes: int, seed: int = 0) -> BirdcallNet:
    """Fresh uniformly initialized head; conversion and backbone preserved bit-exactly.

    Returns an independent network (no shared storage); every layer stays
    trainable for the full fine-tune.
    """
    if new_num_classes < 2:
        raise ValueError("new_num_classes must be >= 2")
    clone = copy.deepcopy(net)
    clone.head = nn.Linear(clone.feature_dim, new_num_classes)
    clone.num_classes = new_num_classes
    clone.class_names = None
    _init_head(clone, torch.Generator().manual_seed(seed))
    clone.eval()
    return clone


def backbone_checksum(net: BirdcallNet) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(net.backbone.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.cpu().numpy().tobytes())
    return digest.hexdigest()


def _weight_arrays(net: BirdcallNet) -> dict:
    arrays = {
        "conversion.w": net.conversion.weight.detach().cpu().numpy().reshape(3).copy(),
        "conversion.b": net.conversion.bias.detach().cpu().numpy().copy(),
        "head.w": net.head.weight.detach().cpu().numpy().T.copy(),  # stored (in, out)
        "head.b": net.head.bias.detach().cpu().numpy().copy(),
    }
    for key, tensor in net.backbone.state_dict().items():
        arrays[f"backbone.{key}"] = tensor.cpu().numpy().copy()
    return arrays


def save_checkpoint(net: BirdcallNet, metadata: dict, path) -> None:
    """Write the named-array archive atomically (temp + rename)."""
    from .util import atomic_write_bytes

    meta = {
        "format_version": FORMAT_VERSION,
        "num_classes": net.num_classes,
        "backbone": net.backbone_kind,
        "dropout_rate": net.dropout_rate,
        "class_names": net.class_names,
        "init": net.init_bounds,
    }
    meta.update(metadata or {})
    if meta.get("class_names") is not None and len(meta["class_names"]) != net.num_classes:
        raise CheckpointError(
            f"{len(meta['class_names'])} class names for a {net.num_classes}-way head")

    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(zipfile.ZipInfo("metadata.json", date_time=_ZIP_EPOCH),
                    json.dumps(meta, indent=2, sort_keys=True))
        for name, arr in sorted(_weight_arrays(net).items()):
            entry = io.BytesIO()
            np.lib.format.write_array(entry, arr, allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_ZIP_EPOCH), entry.getvalue())
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path, expected_spectrogram: dict | None = None,
                    strict: bool = False) -> BirdcallNet:
    """Rebuild a network from a checkpoint archive.

    If expected_spectrogram is given, the stored constants are compared to
    it: strict mode raises on mismatch, otherwise a warning is logged.
    """
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise CheckpointError(f"{path} is not a readable checkpoint: {exc}") from exc
    with zf:
        try:
            meta = json.loads(zf.read("metadata.json"))
        except KeyError as exc:
            raise CheckpointError(f"{path}: missing metadata.json") from exc
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported format version {meta.get('format_version')!r}")

        num_classes = int(meta["num_classes"])
        names = meta.get("class_names")
        if names is not None and len(names) != num_classes:
            raise CheckpointError(
                f"{path}: {len(names)} class names for a {num_classes}-way head")

        net = BirdcallNet(num_classes, backbone=meta.get("backbone", "resnet50"),
                          dropout_rate=float(meta.get("dropout_rate", 0.5)))
        expected = set(_weight_arrays(net))
        present = {n[:-4] for n in zf.namelist() if n.endswith(".npy")}
        missing = expected - present
        if missing:
            raise CheckpointError(f"{path}: truncated checkpoint, missing {sorted(missing)[:3]}")

        arrays = {}
        for name in expected:
            arrays[name] = np.lib.format.read_array(io.BytesIO(zf.read(name + ".npy")),
                                                    allow_pickle=False)

    _assign_weights(net, arrays, path)
    net.class_names = names
    net.init_bounds = meta.get("init", {})
    net.meta = meta

    if expected_spectrogram is not None:
        stored = meta.get("spectrogram")
        if stored != expected_spectrogram:
            message = (f"{path}: checkpoint spectrogram constants {stored} differ from "
                       f"active config {expected_spectrogram}")
            if strict:
                raise ConfigMismatchError(message)
            log.warning(message)
    net.eval()
    return net


def _assign_weights(net: BirdcallNet, arrays: dict, path) -> None:
    def check(name, arr, shape):
        if tuple(arr.shape) != tuple(shape):
            raise CheckpointError(f"{path}: {name} has shape {arr.shape}, expected {shape}")

    check("conversion.w", arrays["conversion.w"], (3,))
    check("conversion.b", arrays["conversion.b"], (3,))
    check("head.w", arrays["head.w"], (net.feature_dim, net.num_classes))
    check("head.b", arrays["head.b"], (net.num_classes,))
    with torch.no_grad():
        net.conversion.weight.copy_(torch.from_numpy(arrays["conversion.w"].reshape(3, 1, 1, 1)))
        net.conversion.bias.copy_(torch.from_numpy(arrays["conversion.b"]))
        net.head.weight.copy_(torch.from_numpy(np.ascontiguousarray(arrays["head.w"].T)))
        net.head.bias.copy_(torch.from_numpy(arrays["head.b"]))
    state = {}
    for name, arr in arrays.items():
        if name.startswith("backbone."):
            state[name[len("backbone."):]] = torch.from_numpy(arr)
    try:
        net.backbone.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: backbone weight mismatch: {exc}") from exc
