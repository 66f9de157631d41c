"""Generator/critic networks on flat vectors: residual MLPs and plain MLPs."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from vpgan.autodiff import Tensor


class ConfigurationError(ValueError):
    """Raised when shapes or architecture settings do not line up."""


@dataclass(frozen=True)
class ArchitectureSpec:
    """Shape of a network acting on flat vectors.

    ``kind="resnet"``: input linear layer, ``block_count`` residual blocks
    (linear, activation, linear, identity skip), activation, output linear.
    ``kind="mlp"``: ``layer_count`` linear layers with activations between.
    """

    kind: str
    input_dim: int
    output_dim: int
    hidden_dim: int
    block_count: int = 3
    layer_count: int = 4
    activation: str = "leaky-relu"
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.kind not in ("resnet", "mlp"):
            raise ConfigurationError(f"unknown architecture kind {self.kind!r}")
        if self.activation not in ("relu", "leaky-relu"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        for name in ("input_dim", "output_dim", "hidden_dim"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.kind == "mlp" and self.layer_count < 1:
            raise ConfigurationError("layer_count must be >= 1")
        if self.kind == "resnet" and self.block_count < 0:
            raise ConfigurationError("block_count must be >= 0")

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Ordered (name, shape) list of every trainable array."""
        h = self.hidden_dim
        shapes = []
        if self.kind == "resnet":
            shapes += [("in.W", (self.input_dim, h)), ("in.b", (h,))]
            for k in range(self.block_count):
                shapes += [
                    (f"block{k}.W1", (h, h)),
                    (f"block{k}.b1", (h,)),
                    (f"block{k}.W2", (h, h)),
                    (f"block{k}.b2", (h,)),
                ]
            shapes += [("out.W", (h, self.output_dim)), ("out.b", (self.output_dim,))]
        else:
            dims = [self.input_dim] + [h] * (self.layer_count - 1) + [self.output_dim]
            for k in range(self.layer_count):
                shapes += [(f"layer{k}.W", (dims[k], dims[k + 1])), (f"layer{k}.b", (dims[k + 1],))]
        return shapes

    def parameter_count(self) -> int:
        return sum(math.prod(shape) for _, shape in self.layer_shapes())

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ArchitectureSpec":
        return cls.from_dict(json.loads(text))

    @classmethod
    def sized_resnet(cls, input_dim: int, output_dim: int, target_params: int = 150_000, **kw):
        """Three-block residual net whose hidden width lands closest to ``target_params``."""
        return _closest(cls(kind="resnet", input_dim=input_dim, output_dim=output_dim, hidden_dim=1, **kw), target_params)

    @classmethod
    def sized_mlp(cls, input_dim: int, output_dim: int, target_params: int = 150_000, **kw):
        return _closest(cls(kind="mlp", input_dim=input_dim, output_dim=output_dim, hidden_dim=1, **kw), target_params)

    def matched(self, kind: str) -> "ArchitectureSpec":
        """Same input/output dims, other kind, hidden width chosen to match the parameter count."""
        template = replace(self, kind=kind, hidden_dim=1)
        return _closest(template, self.parameter_count())


def _closest(template: ArchitectureSpec, target: int) -> ArchitectureSpec:
    best = None
    for h in range(1, 4096):
        spec = replace(template, hidden_dim=h)
        gap = abs(spec.parameter_count() - target)
        if best is None or gap < best[0]:
            best = (gap, spec)
        elif spec.parameter_count() > target:
            break
    return best[1]


class NetworkParams:
    """Named parameter tensors for one network plus its architecture."""

    def __init__(self, spec: ArchitectureSpec, arrays: dict[str, np.ndarray]):
        self.spec = spec
        self.names = [name for name, _ in spec.layer_shapes()]
        expected = dict(spec.layer_shapes())
        self.tensors = {}
        for name in self.names:
            arr = np.array(arrays[name], dtype=np.float64)
            if arr.shape != expected[name]:
                raise ConfigurationError(f"{name}: expected shape {expected[name]}, got {arr.shape}")
            self.tensors[name] = Tensor(arr, requires_grad=True)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __len__(self):
        return len(self.names)

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in self.tensors.items()}

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[n].data.ravel() for n in self.names])

    def load_flat(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.count():
            raise ConfigurationError(f"expected {self.count()} values, got {flat.size}")
        offset = 0
        for n in self.names:
            t = self.tensors[n]
            t.data = flat[offset : offset + t.size].reshape(t.shape).copy()
            offset += t.size

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.spec, {n: t.data for n, t in self.tensors.items()})

    def set_trainable(self, flag: bool):
        for t in self.tensors.values():
            t.requires_grad = flag

    @classmethod
    def from_flat(cls, spec: ArchitectureSpec, flat: np.ndarray) -> "NetworkParams":
        params = cls.zeros(spec)
        params.load_flat(flat)
        return params

    @classmethod
    def zeros(cls, spec: ArchitectureSpec) -> "NetworkParams":
        return cls(spec, {n: np.zeros(s) for n, s in spec.layer_shapes()})

    @classmethod
    def initialize(cls, spec: ArchitectureSpec, rng: np.random.Generator) -> "NetworkParams":
        """Kaiming-uniform weights (scaled by fan-in), zero biases.

        The output layer has no activation after it and gets unit gain. The
        second linear map of every residual branch starts at zero, so each
        block is the identity at initialization and output scale does not
        grow with depth.
        """
        gain2 = 2.0 if spec.activation == "relu" else 2.0 / (1.0 + spec.leaky_slope**2)
        shapes = spec.layer_shapes()
        last_weight = [n for n, s in shapes if len(s) == 2][-1]
        arrays = {}
        for name, shape in shapes:
            if len(shape) == 2 and not name.endswith(".W2"):
                bound = math.sqrt(3.0 * (1.0 if name == last_weight else gain2) / shape[0])
                arrays[name] = rng.uniform(-bound, bound, size=shape)
            else:
                arrays[name] = np.zeros(shape)
        return cls(spec, arrays)


def _act(spec: ArchitectureSpec, x):
    if spec.activation == "relu":
        return x.relu()
    return x.leaky_relu(spec.leaky_slope)


def _act_np(spec: ArchitectureSpec, x: np.ndarray) -> np.ndarray:
    if spec.activation == "relu":
        return np.maximum(x, 0.0)
    return np.where(x > 0, x, spec.leaky_slope * x)


def _check_input(spec: ArchitectureSpec, x: np.ndarray):
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ConfigurationError(f"network expects inputs of dim {spec.input_dim}, got shape {x.shape}")


def forward(params: NetworkParams, x) -> Tensor:
    """Batched forward pass recorded on the tape. ``x`` is (batch, input_dim)."""
    spec = params.spec
    if not isinstance(x, Tensor):
        x = Tensor(x)
    _check_input(spec, x.data)
    p = params.tensors
    if spec.kind == "resnet":
        h = x @ p["in.W"] + p["in.b"]
        for k in range(spec.block_count):
            r = _act(spec, h @ p[f"block{k}.W1"] + p[f"block{k}.b1"])
            h = h + (r @ p[f"block{k}.W2"] + p[f"block{k}.b2"])
        out = _act(spec, h) @ p["out.W"] + p["out.b"]
    else:
        out = x
        for k in range(spec.layer_count):
            if k:
                out = _act(spec, out)
            out = out @ p[f"layer{k}.W"] + p[f"layer{k}.b"]
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite network output")
    return out


def predict(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    """Same computation as :func:`forward` without building a tape."""
    spec = params.spec
    x = np.asarray(x, dtype=np.float64)
    _check_input(spec, x)
    p = {n: t.data for n, t in params.tensors.items()}
    if spec.kind == "resnet":
        h = x @ p["in.W"] + p["in.b"]
        for k in range(spec.block_count):
            r = _act_np(spec, h @ p[f"block{k}.W1"] + p[f"block{k}.b1"])
            h = h + r @ p[f"block{k}.W2"] + p[f"block{k}.b2"]
        return _act_np(spec, h) @ p["out.W"] + p["out.b"]
    out = x
    for k in range(spec.layer_count):
        if k:
            out = _act_np(spec, out)
        out = out @ p[f"layer{k}.W"] + p[f"layer{k}.b"]
    return out
