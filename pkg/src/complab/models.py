"""Small configurable CNN classifiers and weight handoff between them.

A model is a stack of ``conv3x3 -> relu -> [maxpool2x2]`` blocks followed by
a dense head on the flattened feature map. The trailing ``extra_blocks`` of
a spec are the detachable "additional layers"; they are named ``extra{j}``
while backbone blocks are named ``conv{i}``, so a base model and its
enlarged version share every backbone parameter name.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint
from .errors import ConfigError, ContractError, DimensionError, TransferError
from .tensor import Tensor, conv2d, conv_output_extent, dense, flatten, maxpool2x2, relu

HEAD = "head"


@dataclass(frozen=True)
class BlockSpec:
    channels: int
    stride: int = 1
    pool: bool = True


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple
    blocks: tuple = ()
    num_classes: int = 10
    extra_blocks: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "blocks", tuple(
            b if isinstance(b, BlockSpec) else BlockSpec(**b) for b in self.blocks))

    @property
    def n_base(self) -> int:
        return len(self.blocks) - self.extra_blocks

    def base(self) -> "ModelSpec":
        """The spec with every detachable block removed."""
        return replace(self, blocks=self.blocks[:self.n_base], extra_blocks=0)

    def block_names(self) -> list[str]:
        return [f"conv{i}" for i in range(self.n_base)] + [f"extra{j}" for j in range(self.extra_blocks)]

    def feature_shapes(self) -> list[tuple]:
        """(C, H, W) after each block; raises ConfigError if the block layout is invalid."""
        self.validate()
        c, h, w = self.input_shape
        shapes = []
        for b in self.blocks:
            try:
                h = conv_output_extent(h, 3, b.stride, 1)
                w = conv_output_extent(w, 3, b.stride, 1)
            except DimensionError as e:
                raise ConfigError(f"block {b}: {e}") from None
            if b.pool:
                h, w = h // 2, w // 2
                if h == 0 or w == 0:
                    raise ConfigError(f"block {b} pools the feature map to zero extent")
            c = b.channels
            shapes.append((c, h, w))
        return shapes

    def validate(self):
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (channels, height, width), got {self.input_shape}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        if not 0 <= self.extra_blocks <= len(self.blocks):
            raise ConfigError(f"extra_blocks={self.extra_blocks} but only {len(self.blocks)} blocks")
        for b in self.blocks:
            if b.channels < 1 or b.stride < 1:
                raise ConfigError(f"invalid block {b}")

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "blocks": [{"channels": b.channels, "stride": b.stride, "pool": b.pool} for b in self.blocks],
            "num_classes": self.num_classes,
            "extra_blocks": self.extra_blocks,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        try:
            return cls(input_shape=tuple(d["input_shape"]), blocks=tuple(d.get("blocks", ())),
                       num_classes=int(d["num_classes"]), extra_blocks=int(d.get("extra_blocks", 0)))
        except (KeyError, TypeError) as e:
            raise ConfigError(f"bad model spec {d!r}: {e}") from None


def _kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _bias(rng, n, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=n)


def _init_conv(rng, cin, cout):
    fan_in = cin * 9
    return _kaiming_uniform(rng, (cout, cin, 3, 3), fan_in), _bias(rng, cout, fan_in)


def _init_head(rng, width, num_classes):
    return _kaiming_uniform(rng, (width, num_classes), width), _bias(rng, num_classes, width)


@dataclass
class Model:
    spec: ModelSpec
    params: dict = field(default_factory=dict)

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        if tuple(x.shape[1:]) != self.spec.input_shape:
            raise DimensionError(f"model expects [batch, *{self.spec.input_shape}], got {x.shape}")
        h = x
        for name, b in zip(self.spec.block_names(), self.spec.blocks):
            h = conv2d(h, self.params[f"{name}.weight"], stride=b.stride, pad=1,
                       bias=self.params[f"{name}.bias"])
            h = relu(h)
            if b.pool:
                h = maxpool2x2(h)
        return dense(flatten(h), self.params[f"{HEAD}.weight"], self.params[f"{HEAD}.bias"])

    def prunable_names(self) -> list[str]:
        """Conv and dense weights; biases are never pruned."""
        return [n for n in self.params if n.endswith(".weight")]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def state_dict(self) -> dict:
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_state_dict(self, state: dict):
        for n, arr in state.items():
            if n not in self.params or self.params[n].shape != np.shape(arr):
                raise TransferError(f"cannot load {n!r}", [n])
            self.params[n].data = np.array(arr, dtype=np.float64)

    def checksum(self, names=None) -> str:
        h = hashlib.sha256()
        for n in sorted(self.params if names is None else names):
            h.update(n.encode())
            h.update(np.ascontiguousarray(self.params[n].data).tobytes())
        return h.hexdigest()

    def copy(self) -> "Model":
        return Model(self.spec, {n: Tensor(p.data.copy(), requires_grad=True, name=n)
                                 for n, p in self.params.items()})

    def save(self, path):
        checkpoint.save(path, {n: p.data for n, p in self.params.items()})

    @classmethod
    def load(cls, spec: ModelSpec, path) -> "Model":
        m = build(spec, 0)
        m.load_state_dict(checkpoint.load(path))
        return m


def _param(arr, name):
    return Tensor(arr, requires_grad=True, name=name)


def build(spec: ModelSpec, seed: int) -> Model:
    """Deterministically initialise ``spec`` (Kaiming-uniform fan-in weights)."""
    shapes = spec.feature_shapes()
    rng = np.random.default_rng(seed)
    params = {}
    cin = spec.input_shape[0]
    for name, b in zip(spec.block_names(), spec.blocks):
        w, bias = _init_conv(rng, cin, b.channels)
        params[f"{name}.weight"] = _param(w, f"{name}.weight")
        params[f"{name}.bias"] = _param(bias, f"{name}.bias")
        cin = b.channels
    width = int(np.prod(shapes[-1] if shapes else spec.input_shape))
    w, bias = _init_head(rng, width, spec.num_classes)
    params[f"{HEAD}.weight"] = _param(w, f"{HEAD}.weight")
    params[f"{HEAD}.bias"] = _param(bias, f"{HEAD}.bias")
    return Model(spec, params)


def _fresh_head(model: Model, seed: int):
    spec = model.spec
    shapes = spec.feature_shapes()
    width = int(np.prod(shapes[-1] if shapes else spec.input_shape))
    w, b = _init_head(np.random.default_rng(seed), width, spec.num_classes)
    model.params[f"{HEAD}.weight"] = _param(w, f"{HEAD}.weight")
    model.params[f"{HEAD}.bias"] = _param(b, f"{HEAD}.bias")


def attach_extra(model: Model, n_blocks: int, seed: int) -> Model:
    """Enlarge ``model`` with ``n_blocks`` shape-preserving conv blocks before a fresh head.

    Backbone parameters are copied bit-for-bit under their original names.
    """
    if n_blocks <= 0:
        raise ContractError("attach_extra needs n_blocks >= 1; use the base model instead")
    spec = model.spec
    last_c = spec.blocks[-1].channels if spec.blocks else spec.input_shape[0]
    extra = tuple(BlockSpec(last_c, 1, False) for _ in range(n_blocks))
    big_spec = replace(spec, blocks=spec.blocks + extra, extra_blocks=spec.extra_blocks + n_blocks)
    rng = np.random.default_rng(seed)
    params = {n: _param(p.data.copy(), n) for n, p in model.params.items() if not n.startswith(HEAD + ".")}
    for j in range(spec.extra_blocks, big_spec.extra_blocks):
        w, b = _init_conv(rng, last_c, last_c)
        params[f"extra{j}.weight"] = _param(w, f"extra{j}.weight")
        params[f"extra{j}.bias"] = _param(b, f"extra{j}.bias")
    shapes = big_spec.feature_shapes()
    width = int(np.prod(shapes[-1] if shapes else spec.input_shape))
    hw, hb = _init_head(rng, width, spec.num_classes)
    params[f"{HEAD}.weight"] = _param(hw, f"{HEAD}.weight")
    params[f"{HEAD}.bias"] = _param(hb, f"{HEAD}.bias")
    return Model(big_spec, params)


def detach_extra(model: Model, base_spec: ModelSpec, head_seed: int) -> Model:
    """Drop the additional blocks, keeping every backbone parameter bit-for-bit.

    The enlarged model's head is trained on different features, so the base
    head is re-initialised from ``head_seed``.
    """
    if model.spec.extra_blocks == 0:
        raise TransferError("model has no attached blocks to detach")
    if model.spec.base() != base_spec.base() or base_spec.extra_blocks:
        raise TransferError(f"model backbone {model.spec.base()} does not match base spec {base_spec}")
    out = build(base_spec, head_seed)
    shared = [n for n in out.params if not n.startswith(HEAD + ".")]
    missing = [n for n in shared
               if n not in model.params or model.params[n].shape != out.params[n].shape]
    if missing:
        raise TransferError("enlarged model lacks base parameters", missing)
    for n in shared:
        out.params[n] = _param(model.params[n].data.copy(), n)
    _fresh_head(out, head_seed)
    return out


@dataclass
class TransferReport:
    copied: list
    skipped: list

    @property
    def fraction_copied(self) -> float:
        total = len(self.copied) + len(self.skipped)
        return len(self.copied) / total if total else 0.0


def transfer_weights(src: Model, dst: Model) -> TransferReport:
    """Copy every same-name, same-shape parameter from ``src`` into ``dst`` in place."""
    copied, skipped = [], []
    for n in dst.params:
        s = src.params.get(n)
        if s is not None and s.shape == dst.params[n].shape:
            dst.params[n].data = s.data.copy()
            copied.append(n)
        else:
            skipped.append(n)
    skipped += [n for n in src.params if n not in dst.params]
    return TransferReport(copied, skipped)


def preprocess(images: np.ndarray) -> Tensor:
    """uint8 images [N, H, W, C] -> float input tensor [N, C, H, W] in [-1, 1]."""
    x = np.asarray(images, dtype=np.float64).transpose(0, 3, 1, 2)
    return Tensor(x / 127.5 - 1.0)
