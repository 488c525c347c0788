"""Named, seeded model parameters."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .functional import BatchNormStats
from .tensor import Tensor, get_dtype


class Parameter(Tensor):
    """A trainable leaf tensor with a model-unique name."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


class ParameterSet:
    """Ordered registry of parameters and batch-norm buffers for one model.

    Initial values are drawn from a single generator in creation order, so
    the same seed and the same construction sequence give bit-identical
    weights.
    """

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self._params: dict[str, Parameter] = {}
        self._buffers: dict[str, BatchNormStats] = {}

    def _register(self, name: str, data: np.ndarray) -> Parameter:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Parameter(np.asarray(data, dtype=get_dtype()), name)
        self._params[name] = p
        return p

    def weight(self, name: str, fan_in: int, fan_out: int) -> Parameter:
        return self._register(name, xavier_uniform(self.rng, fan_in, fan_out))

    def conv_weight(self, name: str, cout: int, cin: int, k: int) -> Parameter:
        fan_in, fan_out = cin * k * k, cout * k * k
        return self._register(name, xavier_uniform(self.rng, fan_in, fan_out, (cout, cin, k, k)))

    def zeros(self, name: str, *shape: int) -> Parameter:
        return self._register(name, np.zeros(shape))

    def ones(self, name: str, *shape: int) -> Parameter:
        return self._register(name, np.ones(shape))

    def normal(self, name: str, shape, std: float) -> Parameter:
        return self._register(name, self.rng.normal(0.0, std, size=shape))

    def constant(self, name: str, value: np.ndarray) -> Parameter:
        return self._register(name, value)

    def batch_norm_stats(self, name: str, dim: int, momentum: float = 0.1) -> BatchNormStats:
        if name in self._buffers:
            raise KeyError(f"duplicate buffer name {name!r}")
        stats = BatchNormStats(dim, momentum)
        self._buffers[name] = stats
        return stats

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def names(self) -> list[str]:
        return list(self._params)

    def buffers(self) -> dict[str, BatchNormStats]:
        return self._buffers

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of parameters and running statistics."""
        out = {name: p.data for name, p in self._params.items()}
        for name, st in self._buffers.items():
            out[f"{name}.running_mean"] = st.running_mean
            out[f"{name}.running_var"] = st.running_var
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        expected = self.state_arrays()
        missing = set(expected) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint lacks entries: {sorted(missing)[:5]}")
        for name, p in self._params.items():
            src = arrays[name]
            if src.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {src.shape} vs {p.shape}")
            p.data = np.asarray(src, dtype=p.data.dtype).copy()
        for name, st in self._buffers.items():
            st.running_mean = np.asarray(arrays[f"{name}.running_mean"], dtype=st.running_mean.dtype).copy()
            st.running_var = np.asarray(arrays[f"{name}.running_var"], dtype=st.running_var.dtype).copy()
