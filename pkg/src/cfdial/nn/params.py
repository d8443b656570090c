"""Named parameter collections with bit-exact save/load.

A ParamSet owns the trainable leaves of a model.  Names are unique and
insertion-ordered, which fixes both the optimizer update order and the
serialization layout.  Values are stored in the file as ``float.hex``
strings so a save/load round trip reproduces every bit.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, tensor

FORMAT_HEADER = "cfdial-paramset v1"


class ParamSet:
    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        """Register a new trainable tensor under a unique name."""
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        if any(ch.isspace() for ch in name):
            raise ValueError(f"parameter names must not contain whitespace: {name!r}")
        t = tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def copy_values_from(self, other: "ParamSet") -> None:
        """Overwrite values in-place from a set with identical names/shapes."""
        if self.names() != other.names():
            raise ValueError("parameter sets have different names")
        for name, t in self._params.items():
            src = other[name].data
            if src.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {t.data.shape} vs {src.shape}")
            t.data[...] = src

    # -- serialization ----------------------------------------------------

    def save(self, path) -> None:
        lines = [FORMAT_HEADER, str(len(self._params))]
        for name, t in self._params.items():
            dims = " ".join(str(d) for d in t.data.shape)
            lines.append(f"{name} {t.data.ndim} {dims}".rstrip())
            lines.append(" ".join(float.hex(float(v)) for v in t.data.ravel()))
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "ParamSet":
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != FORMAT_HEADER:
            raise ValueError(f"{path}: not a {FORMAT_HEADER!r} file")
        try:
            count = int(lines[1])
        except (IndexError, ValueError):
            raise ValueError(f"{path}: missing parameter count") from None
        ps = cls()
        row = 2
        for _ in range(count):
            try:
                head = lines[row].split()
                name, ndim = head[0], int(head[1])
                shape = tuple(int(d) for d in head[2:2 + ndim])
                values = [float.fromhex(v) for v in lines[row + 1].split()]
            except (IndexError, ValueError) as exc:
                raise ValueError(f"{path}: corrupt entry at line {row + 1}: {exc}") from None
            arr = np.array(values, dtype=np.float64)
            expected = int(np.prod(shape)) if shape else 1
            if arr.size != expected:
                raise ValueError(f"{path}: {name!r} expects {expected} values, found {arr.size}")
            ps.add(name, arr.reshape(shape))
            row += 2
        return ps


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """U[-1/sqrt(fan_in), 1/sqrt(fan_in)], the init every model here uses."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
