"""Parameters and the two layer shapes both models are built from."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, add, matmul, relu


class Parameter(Tensor):
    """A named trainable tensor."""

    __slots__ = ()

    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=np.float64, copy=True), requires_grad=True, name=name)


def glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class ParameterStore:
    """Ordered name -> Parameter registry shared by a model's layers."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value) -> Parameter:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Parameter(value, name)
        self._params[name] = p
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True):
        for k, p in self._params.items():
            if k not in state:
                if strict:
                    raise KeyError(f"missing parameter {k!r} in state")
                continue
            v = np.asarray(state[k], dtype=np.float64)
            if v.shape != p.shape:
                raise ValueError(f"parameter {k!r}: expected shape {p.shape}, got {v.shape}")
            p.data = v.copy()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def set_trainable(self, flag: bool):
        for p in self._params.values():
            p.requires_grad = flag


class Linear:
    def __init__(self, store: ParameterStore, name: str, fan_in: int, fan_out: int, rng, bias: bool = True):
        self.weight = store.add(f"{name}.weight", glorot(rng, fan_in, fan_out))
        self.bias = store.add(f"{name}.bias", np.zeros((1, fan_out))) if bias else None

    def __call__(self, x):
        y = matmul(x, self.weight)
        return add(y, self.bias) if self.bias is not None else y

    def zero_(self):
        self.weight.data[...] = 0.0
        if self.bias is not None:
            self.bias.data[...] = 0.0


class MLP:
    """Stack of Linear layers with relu between them (none after the last)."""

    def __init__(self, store: ParameterStore, name: str, sizes, rng):
        self.layers = [
            Linear(store, f"{name}.{i}", a, b, rng) for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x

    @property
    def last(self) -> Linear:
        return self.layers[-1]
