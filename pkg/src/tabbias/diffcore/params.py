"""Flat parameter vectors with a named shape table."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .autodiff import Tensor

FORMAT_TAG = b"TBPARAM1"


class ShapeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ParamSet:
    """A flat float64 vector plus an ordered ``(name, shape)`` table.

    Arithmetic between two ParamSets requires identical shape tables.
    """

    flat: np.ndarray
    shapes: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        if flat.ndim != 1:
            raise ValueError("flat parameter vector must be 1-D")
        shapes = tuple((str(n), tuple(int(d) for d in s)) for n, s in self.shapes)
        names = [n for n, _ in shapes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate tensor names in shape table")
        total = sum(int(np.prod(s)) for _, s in shapes)
        if total != flat.size:
            raise ShapeMismatchError(
                f"shape table covers {total} entries but vector has {flat.size}"
            )
        object.__setattr__(self, "flat", flat)
        object.__setattr__(self, "shapes", shapes)

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> ParamSet:
        shapes = tuple((name, np.shape(a)) for name, a in arrays.items())
        if not arrays:
            return cls(np.zeros(0), ())
        flat = np.concatenate([np.ravel(np.asarray(a, dtype=np.float64)) for a in arrays.values()])
        return cls(flat, shapes)

    @classmethod
    def concat(cls, *parts: ParamSet) -> ParamSet:
        return cls(
            np.concatenate([p.flat for p in parts]) if parts else np.zeros(0),
            tuple(s for p in parts for s in p.shapes),
        )

    def __len__(self) -> int:
        return self.flat.size

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.shapes]

    def ranges(self) -> dict[str, slice]:
        out, start = {}, 0
        for name, shape in self.shapes:
            stop = start + int(np.prod(shape))
            out[name] = slice(start, stop)
            start = stop
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        """Read-only reshaped views into the flat vector."""
        flat = self.flat.view()
        flat.flags.writeable = False
        return {
            name: flat[sl].reshape(shape)
            for (name, shape), sl in zip(self.shapes, self.ranges().values())
        }

    def tensors(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {
            name: Tensor(a.copy(), requires_grad=requires_grad)
            for name, a in self.arrays().items()
        }

    def with_flat(self, flat: np.ndarray) -> ParamSet:
        return ParamSet(flat, self.shapes)

    def like_tensors(self, tensors: Mapping[str, Tensor | np.ndarray]) -> ParamSet:
        """Repack per-name tensors (e.g. gradients) using this shape table."""
        parts = []
        for name, shape in self.shapes:
            t = tensors[name]
            a = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
            if a.shape != shape:
                raise ShapeMismatchError(f"{name}: expected {shape}, got {a.shape}")
            parts.append(a.ravel())
        return self.with_flat(np.concatenate(parts) if parts else np.zeros(0))

    def compatible(self, other: ParamSet) -> bool:
        return self.shapes == other.shapes

    def _check(self, other: ParamSet) -> None:
        if not self.compatible(other):
            raise ShapeMismatchError("ParamSets have different shape tables")

    def __add__(self, other: ParamSet) -> ParamSet:
        self._check(other)
        return self.with_flat(self.flat + other.flat)

    def __sub__(self, other: ParamSet) -> ParamSet:
        self._check(other)
        return self.with_flat(self.flat - other.flat)

    def __mul__(self, scalar: float) -> ParamSet:
        return self.with_flat(self.flat * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> ParamSet:
        return self.with_flat(self.flat / float(scalar))

    def __neg__(self) -> ParamSet:
        return self.with_flat(-self.flat)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamSet):
            return NotImplemented
        return self.shapes == other.shapes and np.array_equal(self.flat, other.flat)

    __hash__ = None

    def select(self, prefix: str) -> ParamSet:
        """Sub-ParamSet holding the tensors whose names start with ``prefix``."""
        arrays = self.arrays()
        return ParamSet.from_arrays(
            {n: arrays[n] for n in self.names if n.startswith(prefix)}
        )

    # -- serialization -------------------------------------------------------

    def to_bytes(self) -> bytes:
        header = json.dumps(
            {"version": 1, "dtype": "<f8", "shapes": [[n, list(s)] for n, s in self.shapes]},
            separators=(",", ":"),
        ).encode()
        return (
            FORMAT_TAG
            + struct.pack("<Q", len(header))
            + header
            + self.flat.astype("<f8").tobytes()
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> ParamSet:
        if blob[: len(FORMAT_TAG)] != FORMAT_TAG:
            raise ValueError("not a serialized ParamSet (bad format tag)")
        pos = len(FORMAT_TAG)
        (n,) = struct.unpack("<Q", blob[pos : pos + 8])
        header = json.loads(blob[pos + 8 : pos + 8 + n])
        if header.get("version") != 1:
            raise ValueError(f"unsupported ParamSet version {header.get('version')}")
        flat = np.frombuffer(blob[pos + 8 + n :], dtype="<f8").astype(np.float64)
        return cls(flat, tuple((name, tuple(s)) for name, s in header["shapes"]))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> ParamSet:
        return cls.from_bytes(Path(path).read_bytes())
