"""Container for every trainable tensor of the model."""
from collections import OrderedDict

import numpy as np

from .errors import CheckpointError
from .tensor import Tensor


class ModelParams:
    """Ordered name -> Tensor mapping with helpers for init and L2."""

    def __init__(self, rng, dim):
        self._tensors = OrderedDict()
        self._rng = rng
        self._bound = 1.0 / np.sqrt(dim)

    def uniform(self, name, shape):
        data = self._rng.uniform(-self._bound, self._bound, size=shape)
        return self.add(name, data)

    def zeros(self, name, shape):
        return self.add(name, np.zeros(shape))

    def ones(self, name, shape):
        return self.add(name, np.ones(shape))

    def add(self, name, data):
        if name in self._tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self._tensors[name] = t
        return t

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __len__(self):
        return len(self._tensors)

    def __iter__(self):
        return iter(self._tensors)

    def items(self):
        return self._tensors.items()

    def named_parameters(self):
        return self._tensors.items()

    def group(self, prefix):
        return {k: v for k, v in self._tensors.items() if k.startswith(prefix)}

    def l2(self):
        """Sum of squares over every parameter (plain float)."""
        return float(sum(np.sum(p.data * p.data) for p in self._tensors.values()))

    def state_dict(self):
        return OrderedDict((k, v.data.copy()) for k, v in self._tensors.items())

    def load_state_dict(self, state):
        missing = set(self._tensors) - set(state)
        extra = set(state) - set(self._tensors)
        if missing or extra:
            raise CheckpointError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, t in self._tensors.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise CheckpointError(f"parameter {k!r}: shape {arr.shape} != {t.data.shape}")
            t.data = arr.copy()
            t.grad = None
