"""Adam optimizer over :class:`NetworkParams`."""
from __future__ import annotations

import numpy as np

from vpgan.nn import NetworkParams


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN/inf; ``diagnostics`` says where."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


class Adam:
    def __init__(self, params: NetworkParams, lr: float = 1e-4, betas=(0.5, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}

    def step(self, grads: dict[str, np.ndarray] | None = None):
        """Apply one update. Uses the tensors' ``.grad`` unless ``grads`` is given."""
        if grads is None:
            grads = self.params.grads()
        bad = {n: int(np.size(g) - np.count_nonzero(np.isfinite(g))) for n, g in grads.items()}
        bad = {n: c for n, c in bad.items() if c}
        if bad:
            raise NonFiniteGradientError(
                f"non-finite gradient in {sorted(bad)}",
                {"step": self.t, "non_finite_counts": bad},
            )
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for n, tensor in self.params.tensors.items():
            g = grads[n]
            m = self.m[n]
            v = self.v[n]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            tensor.data = tensor.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for n in self.params.names:
            out[f"{prefix}.m.{n}"] = self.m[n]
            out[f"{prefix}.v.{n}"] = self.v[n]
        return out

    def load_state_arrays(self, prefix: str, arrays: dict[str, np.ndarray], t: int):
        for n in self.params.names:
            self.m[n] = np.array(arrays[f"{prefix}.m.{n}"], dtype=np.float64)
            self.v[n] = np.array(arrays[f"{prefix}.v.{n}"], dtype=np.float64)
        self.t = int(t)
