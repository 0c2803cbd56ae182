"""Rectangular truncated state grids and scalar functions living on them."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class StateGrid:
    """Uniform rectangular grid on a truncation box, dimension 1 or 2.

    Nodes are stored flat in C order; axis i has ``counts[i]`` nodes spaced
    ``h[i]`` apart between ``lo[i]`` and ``hi[i]`` inclusive.
    """

    lo: tuple
    hi: tuple
    counts: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        counts = tuple(int(c) for c in np.atleast_1d(self.counts))
        if not (len(lo) == len(hi) == len(counts)):
            raise GridError("lo, hi, counts must have equal length")
        if len(lo) not in (1, 2):
            raise GridError("grid solvers support state dimension 1 or 2 only")
        if any(c < 3 for c in counts):
            raise GridError("need at least 3 nodes per dimension")
        if any(h <= l for l, h in zip(lo, hi)):
            raise GridError("grid bounds must satisfy lo < hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "counts", counts)

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def h(self) -> tuple:
        return tuple(
            (hi - lo) / (c - 1) for lo, hi, c in zip(self.lo, self.hi, self.counts)
        )

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def shape(self) -> tuple:
        return self.counts

    def axis(self, i: int) -> np.ndarray:
        return np.linspace(self.lo[i], self.hi[i], self.counts[i])

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (size, dim), C order."""
        axes = [self.axis(i) for i in range(self.dim)]
        if self.dim == 1:
            return axes[0][:, None]
        X0, X1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        return np.stack([X0.ravel(), X1.ravel()], axis=1)

    def nearest_flat_index(self, x: np.ndarray) -> np.ndarray:
        """Flat index of the node nearest each row of x (clipped to the box)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = []
        for i in range(self.dim):
            k = np.rint((x[:, i] - self.lo[i]) / self.h[i]).astype(np.int64)
            idx.append(np.clip(k, 0, self.counts[i] - 1))
        if self.dim == 1:
            return idx[0]
        return idx[0] * self.counts[1] + idx[1]

    def origin_index(self) -> int:
        return int(self.nearest_flat_index(np.zeros((1, self.dim)))[0])

    def contains_ball(self, radius: float) -> bool:
        """Whether the box contains the centered ball of the given radius.

        A half-line axis (lo == 0) counts as containing its side of the ball:
        constrained formulations keep the state on the positive part.
        """
        for lo, hi in zip(self.lo, self.hi):
            if hi < radius:
                return False
            if lo != 0.0 and lo > -radius:
                return False
        return True

    @staticmethod
    def from_box(box: np.ndarray, counts) -> "StateGrid":
        box = np.asarray(box, dtype=float).reshape(-1, 2)
        counts = np.atleast_1d(counts)
        if counts.size == 1:
            counts = np.repeat(counts, box.shape[0])
        return StateGrid(tuple(box[:, 0]), tuple(box[:, 1]), tuple(int(c) for c in counts))


@dataclass
class GridFunction:
    """Scalar values on a StateGrid (flat C-order storage)."""

    grid: StateGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if vals.size != self.grid.size:
            raise GridError(f"value count {vals.size} != grid size {self.grid.size}")
        self.values = vals

    def reshaped(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def lipschitz_seminorm(self) -> float:
        """max over axes of max adjacent difference / h."""
        v = self.reshaped()
        out = 0.0
        for ax in range(self.grid.dim):
            d = np.abs(np.diff(v, axis=ax)) / self.grid.h[ax]
            if d.size:
                out = max(out, float(d.max()))
        return out

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())

    def at_nearest(self, x: np.ndarray) -> np.ndarray:
        return self.values[self.grid.nearest_flat_index(x)]

    # -- serialization ------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{i + 1}" for i in range(self.grid.dim)] + ["value"])
        nodes = self.grid.nodes()
        for row, val in zip(nodes, self.values):
            writer.writerow([repr(float(c)) for c in row] + [repr(float(val))])
        return buf.getvalue()

    def to_json_dict(self) -> dict:
        return {
            "grid": {"lo": list(self.grid.lo), "hi": list(self.grid.hi),
                     "counts": list(self.grid.counts)},
            "values": [float(v) for v in self.values],
        }

    @staticmethod
    def from_json_dict(payload: dict) -> "GridFunction":
        g = payload["grid"]
        grid = StateGrid(tuple(g["lo"]), tuple(g["hi"]), tuple(g["counts"]))
        return GridFunction(grid, np.asarray(payload["values"], dtype=float))

    @staticmethod
    def from_csv(text: str) -> "GridFunction":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        dim = len(header) - 1
        coords = np.array([[float(c) for c in r[:dim]] for r in body])
        vals = np.array([float(r[dim]) for r in body])
        counts, los, his = [], [], []
        for i in range(dim):
            ax = np.unique(coords[:, i])
            counts.append(ax.size)
            los.append(ax[0])
            his.append(ax[-1])
        grid = StateGrid(tuple(los), tuple(his), tuple(counts))
        if coords.shape[0] != grid.size:
            raise GridError("CSV rows do not form a full rectangular grid")
        order = grid.nearest_flat_index(coords)
        out = np.empty(grid.size)
        out[order] = vals
        return GridFunction(grid, out)


def constant_like(grid: StateGrid, value: float) -> GridFunction:
    return GridFunction(grid, np.full(grid.size, float(value)))
