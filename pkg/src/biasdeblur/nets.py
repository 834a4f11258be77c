"""U-Net backbones for the denoiser and the deblurring network, plus the
checkpoint file format shared by both."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

CHECKPOINT_FORMAT = "biasdeblur-ckpt/1"


@dataclass(frozen=True)
class DenoiserSpec:
    """Noise2Noise-style U-Net: one encoder block per width, one fewer decoders."""

    widths: tuple[int, ...] = (32, 64, 128, 256, 512, 512)
    leaky_slope: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("need at least two encoder blocks")

    @property
    def encoder_blocks(self) -> int:
        return len(self.widths)

    @property
    def decoder_blocks(self) -> int:
        return len(self.widths) - 1

    @property
    def multiple(self) -> int:
        return 2 ** (len(self.widths) - 1)


@dataclass(frozen=True)
class DeblurSpec:
    """Batch-normalized U-Net with Softplus activations and a Sigmoid output.

    ``relu_blocks`` leading encoder blocks use ReLU instead of Softplus.
    ``output_bias`` initializes the final layer's bias, i.e. the logit of the
    initial reconstruction level.
    """

    widths: tuple[int, ...] = (48, 96, 192, 384, 768)
    relu_blocks: int = 1
    output_bias: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("need at least two encoder blocks")

    @property
    def encoder_blocks(self) -> int:
        return len(self.widths)

    @property
    def decoder_blocks(self) -> int:
        return len(self.widths) - 1

    @property
    def multiple(self) -> int:
        return 2 ** (len(self.widths) - 1)


def spec_from_dict(cls, data: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


def pad_to_multiple(x: torch.Tensor, multiple: int) -> tuple[torch.Tensor, tuple[int, int]]:
    """Reflect-pad the last two dims up to a multiple; returns original size."""
    h, w = x.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph or pw:
        mode = "reflect" if ph < h and pw < w else "replicate"
        x = F.pad(x, (0, pw, 0, ph), mode=mode)
    return x, (h, w)


class Sn2nUNet(nn.Module):
    def __init__(self, spec: DenoiserSpec):
        super().__init__()
        self.spec = spec
        w = spec.widths
        self.enc = nn.ModuleList()
        c = 1
        for width in w:
            self.enc.append(nn.Conv2d(c, width, 3, stride=1, padding=1))
            c = width
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for skip in reversed(w[:-1]):
            self.up.append(nn.ConvTranspose2d(c, c, 3, stride=2, padding=1, output_padding=1))
            self.dec.append(
                nn.ModuleList([nn.Conv2d(c + skip, skip, 3, padding=1), nn.Conv2d(skip, skip, 3, padding=1)])
            )
            c = skip
        self.out = nn.Conv2d(c, 1, 3, padding=1)
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                nn.init.zeros_(m.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x, (h, w) = pad_to_multiple(x, self.spec.multiple)
        skips = []
        for i, conv in enumerate(self.enc):
            if i:
                x = F.max_pool2d(x, 2, stride=2)
            x = F.relu(conv(x))
            skips.append(x)
        skips.pop()
        for up, (c1, c2) in zip(self.up, self.dec):
            x = torch.cat([up(x), skips.pop()], dim=1)
            x = F.relu(c2(F.relu(c1(x))))
        x = F.leaky_relu(self.out(x), self.spec.leaky_slope)
        return x[..., :h, :w]


class _ConvBN(nn.Sequential):
    def __init__(self, cin, cout, act):
        super().__init__(nn.Conv2d(cin, cout, 3, padding=1), nn.BatchNorm2d(cout), act())


class DeblurUNet(nn.Module):
    def __init__(self, spec: DeblurSpec):
        super().__init__()
        self.spec = spec
        self.enc = nn.ModuleList()
        c = 1
        for i, width in enumerate(spec.widths):
            act = nn.ReLU if i < spec.relu_blocks else nn.Softplus
            self.enc.append(nn.Sequential(_ConvBN(c, width, act), _ConvBN(width, width, act)))
            c = width
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for skip in reversed(spec.widths[:-1]):
            self.up.append(nn.ConvTranspose2d(c, skip, 2, stride=2))
            self.dec.append(nn.Sequential(_ConvBN(2 * skip, skip, nn.Softplus), _ConvBN(skip, skip, nn.Softplus)))
            c = skip
        self.out = nn.Conv2d(c, 1, 1)
        nn.init.constant_(self.out.bias, spec.output_bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x, (h, w) = pad_to_multiple(x, self.spec.multiple)
        skips = []
        for i, block in enumerate(self.enc):
            if i:
                x = F.max_pool2d(x, 2, stride=2)
            x = block(x)
            skips.append(x)
        skips.pop()
        for up, block in zip(self.up, self.dec):
            x = block(torch.cat([up(x), skips.pop()], dim=1))
        return torch.sigmoid(self.out(x))[..., :h, :w]


# -- checkpoint files ---------------------------------------------------------

_DTYPES = {torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8"}


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".json", ".bin") else p
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def save_tensors(path, kind: str, spec, tensors: dict[str, torch.Tensor], extra: dict | None = None) -> Path:
    """Write ``<stem>.json`` (spec + tensor index) and ``<stem>.bin`` (raw blob).

    Tensors are stored back to back, little-endian, in the order given.
    """
    meta_path, blob_path = _paths(path)
    index, offset = [], 0
    with open(blob_path, "wb") as fh:
        for name, t in tensors.items():
            t = t.detach().cpu().contiguous()
            if t.dtype not in _DTYPES:
                t = t.to(torch.float32)
            raw = t.numpy().astype(_DTYPES[t.dtype], copy=False).tobytes()
            fh.write(raw)
            index.append({"name": name, "dtype": _DTYPES[t.dtype], "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
            offset += len(raw)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "kind": kind,
        "spec": asdict(spec),
        "tensors": index,
        "extra": extra or {},
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return meta_path


def load_tensors(path) -> tuple[dict, dict[str, torch.Tensor]]:
    meta_path, blob_path = _paths(path)
    meta = json.loads(meta_path.read_text())
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{meta_path}: not a {CHECKPOINT_FORMAT} checkpoint")
    blob = blob_path.read_bytes()
    tensors = {}
    for entry in meta["tensors"]:
        chunk = blob[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(chunk, dtype=entry["dtype"]).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.copy())
    return meta, tensors
