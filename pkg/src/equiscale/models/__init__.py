"""The four message-passing families with direct energy and force heads.

Families and the symmetry structure they encode:

============== =========================== ============ ==========
family         message inputs              tensor order body order
============== =========================== ============ ==========
unconstrained  raw relative vectors        --           2
directional    distances, bond/dihedral    0            4
cartesian      invariants + vector mixer   1            2
spherical      irreps x edge-aligned conv  >= 2         2
============== =========================== ============ ==========

``build_model`` returns a torch module with signature
``forward(batch) -> (energy (S,), forces (n, 3))`` in normalized label units.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from ..errors import ConfigError

FAMILIES = ("unconstrained", "directional", "cartesian-vector", "spherical-tensor")

#: depth beyond which validation error stops improving per family; ladders
#: hold depth fixed at these values and scale width only
SATURATION_DEPTH = {
    "unconstrained": 5,
    "directional": 4,
    "cartesian-vector": 12,
    "spherical-tensor": 12,
}

#: tuned batch size per family (cartesian trains best slightly larger)
DEFAULT_BATCH_SIZE = {
    "unconstrained": 64,
    "directional": 64,
    "cartesian-vector": 128,
    "spherical-tensor": 64,
}

#: width of the roughly-1M-parameter tuning model per family; the base
#: learning rate is transferred from here via mup_lr_transfer
BASE_WIDTH = {
    "unconstrained": 320,
    "directional": 80,
    "cartesian-vector": 102,
    "spherical-tensor": 250,
}

BODY_ORDER = {
    "unconstrained": 2,
    "directional": 4,
    "cartesian-vector": 2,
    "spherical-tensor": 2,
}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters for one model.

    For the spherical family the scalar width is tied to the channel count by
    ``width = channels * (l_max + 1)**2``; for the cartesian family the
    number of vector channels follows ``E = round(sqrt(width))`` unless given
    explicitly.
    """

    family: str
    width: int
    depth: int | None = None
    vector_channels: int | None = None  # cartesian-vector only
    channels: int | None = None  # spherical-tensor only
    l_max: int = 4
    m_max: int = 2
    cutoff: float = 6.0
    k_max: int = 30
    n_rbf: int = 16
    z_max: int = 16
    dtype: str = "float32"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; options: {FAMILIES}")
        if self.depth is None:
            object.__setattr__(self, "depth", SATURATION_DEPTH[self.family])
        if self.depth < 1 or self.width < 1:
            raise ConfigError("depth and width must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32/float64, got {self.dtype}")
        if self.family == "cartesian-vector":
            if self.vector_channels is None:
                object.__setattr__(self, "vector_channels", max(1, round(self.width**0.5)))
        if self.family == "spherical-tensor":
            if self.l_max < 1:
                raise ConfigError("spherical-tensor family needs l_max >= 1")
            if self.m_max > self.l_max:
                raise ConfigError(f"m_max={self.m_max} exceeds l_max={self.l_max}")
            dim = (self.l_max + 1) ** 2
            if self.channels is None:
                object.__setattr__(self, "channels", max(1, round(self.width / dim)))
            object.__setattr__(self, "width", self.channels * dim)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def preset_config(family: str, width: int, **overrides) -> ModelConfig:
    """Family config with the preset cutoff (10 A / 50 for directional)."""
    kwargs = dict(family=family, width=width)
    if family == "directional":
        kwargs.update(cutoff=10.0, k_max=50)
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def build_ladder(family: str, widths: list, **overrides) -> list:
    """Scaling ladder: depth fixed at the family's saturation depth, width varies."""
    if any(w <= 0 for w in widths):
        raise ConfigError("ladder widths must be positive")
    return [preset_config(family, int(w), **overrides) for w in widths]


def mup_lr_transfer(eta_base: float, w_base: float, w: float) -> float:
    """Transfer a tuned base learning rate across widths: eta * w_base / w."""
    if eta_base <= 0 or w_base <= 0 or w <= 0:
        raise ConfigError("learning rate and widths must be positive")
    return eta_base * w_base / w


def build_model(config: ModelConfig, seed: int = 0) -> torch.nn.Module:
    """Instantiate a model with deterministic, seed-controlled parameters."""
    from .cartesian import CartesianVectorModel
    from .directional import DirectionalModel
    from .spherical import SphericalTensorModel
    from .unconstrained import UnconstrainedModel

    cls = {
        "unconstrained": UnconstrainedModel,
        "directional": DirectionalModel,
        "cartesian-vector": CartesianVectorModel,
        "spherical-tensor": SphericalTensorModel,
    }[config.family]
    gen = torch.Generator().manual_seed(seed)
    model = cls(config, gen)
    if config.dtype == "float64":
        model.double()
    return model


def param_count(config: ModelConfig, seed: int = 0) -> int:
    """Exact learnable-parameter count of the model this config builds."""
    model = build_model(config, seed=seed)
    return sum(p.numel() for p in model.parameters())


def gradients(model: torch.nn.Module, loss: torch.Tensor) -> dict:
    """Per-parameter gradient arrays for a scalar loss.

    Raises on non-finite gradients, naming the offending parameter.
    """
    model.zero_grad(set_to_none=True)
    loss.backward()
    out = {}
    for name, p in model.named_parameters():
        g = torch.zeros_like(p) if p.grad is None else p.grad
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
        out[name] = g.detach().cpu().numpy().copy()
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str, config: ModelConfig, model: torch.nn.Module, seed: int) -> None:
    """Self-describing checkpoint: config + arrays + seed + parameter count.

    Written through zipfile with frozen timestamps so identical states
    serialize to identical bytes.
    """
    arrays = {name: p.detach().cpu().numpy() for name, p in model.state_dict().items()}
    header = {
        "config": config.to_dict(),
        "seed": seed,
        "param_count": int(sum(int(p.numel()) for p in model.parameters())),
        "dtype": config.dtype,
        "arrays": {name: list(a.shape) for name, a in arrays.items()},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("header.json", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, json.dumps(header, sort_keys=True))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.save(buf, arrays[name])
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path: str) -> tuple:
    """Returns (config, model, header dict) with parameters restored."""
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
        config = ModelConfig.from_dict(header["config"])
        model = build_model(config, seed=header["seed"])
        state = {}
        for name in header["arrays"]:
            arr = np.load(io.BytesIO(zf.read(name + ".npy")))
            state[name] = torch.from_numpy(arr)
        model.load_state_dict(state)
    return config, model, header


__all__ = [
    "BASE_WIDTH",
    "BODY_ORDER",
    "DEFAULT_BATCH_SIZE",
    "FAMILIES",
    "ModelConfig",
    "SATURATION_DEPTH",
    "build_ladder",
    "build_model",
    "gradients",
    "load_checkpoint",
    "mup_lr_transfer",
    "param_count",
    "preset_config",
    "save_checkpoint",
]
