"""Decoder parameter vectors, the cosine distance between decoders and FedAvg aggregation."""
import logging
import math
from dataclasses import dataclass

import numpy as np

from core.errors import (
    DimensionMismatch,
    EmptyInput,
    ManifestMismatch,
    NonFiniteValues,
    ZeroNormVector,
)

logger = logging.getLogger(__name__)

WEIGHT_SUM_TOLERANCE = 1e-9


class ParamVector:
    """Immutable flattened decoder. Entries are finite 64-bit floats."""

    __slots__ = ("_values",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64).ravel()
        if arr.size < 1:
            raise EmptyInput("parameter vector needs at least one entry")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValues("parameter vector contains NaN or Inf")
        arr.setflags(write=False)
        self._values = arr

    @property
    def values(self):
        return self._values

    @property
    def dim(self):
        return int(self._values.size)

    def is_zero(self):
        return not np.any(self._values)

    def to_list(self):
        return self._values.tolist()

    def __len__(self):
        return self.dim

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return np.array_equal(self._values, other._values)

    __hash__ = None

    def __repr__(self):
        head = ", ".join(f"{v:.4g}" for v in self._values[:4])
        more = ", ..." if self.dim > 4 else ""
        return f"ParamVector(dim={self.dim}, [{head}{more}])"


@dataclass(frozen=True)
class AggregationWeights:
    weights: tuple

    def __post_init__(self):
        weights = tuple(float(w) for w in self.weights)
        if not weights:
            raise EmptyInput("aggregation weights are empty")
        if any(w < 0 or not math.isfinite(w) for w in weights):
            raise DimensionMismatch(f"aggregation weights must be finite and non-negative: {weights}")
        total = math.fsum(weights)
        if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise DimensionMismatch(f"aggregation weights sum to {total!r}, expected 1")
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_counts(cls, counts):
        """w_i = n_i / n, the FedAvg weighting of the objective."""
        counts = [int(c) for c in counts]
        if not counts:
            raise EmptyInput("no sample counts given")
        total = sum(counts)
        if total <= 0 or any(c < 0 for c in counts):
            raise DimensionMismatch(f"sample counts must be non-negative with a positive total: {counts}")
        return cls(tuple(c / total for c in counts))

    @classmethod
    def uniform(cls, n):
        return cls.from_counts([1] * n)

    @classmethod
    def one_hot(cls, n, index):
        return cls(tuple(1.0 if i == index else 0.0 for i in range(n)))

    def __len__(self):
        return len(self.weights)


def _check_same_dim(decoders):
    dims = {d.dim for d in decoders}
    if len(dims) > 1:
        raise DimensionMismatch(f"decoders have differing dims: {sorted(dims)}")


def _rescaled(vector, index):
    # dividing by the largest magnitude keeps the dot product and norms in range
    peak = float(np.max(np.abs(vector.values)))
    if peak == 0.0:
        raise ZeroNormVector(index=index)
    scaled = vector.values / peak
    return scaled, float(np.linalg.norm(scaled))


def cosine_distance(a, b):
    """1 - cos(a, b), in [0, 2]. Zero-magnitude decoders are rejected."""
    if a.dim != b.dim:
        raise DimensionMismatch(f"cannot compare dim {a.dim} with dim {b.dim}")
    scaled_a, norm_a = _rescaled(a, 0)
    scaled_b, norm_b = _rescaled(b, 1)
    similarity = float(np.dot(scaled_a, scaled_b)) / (norm_a * norm_b)
    if not math.isfinite(similarity):
        raise NonFiniteValues(f"cosine similarity is {similarity}")
    similarity = min(1.0, max(-1.0, similarity))
    return 1.0 - similarity


def weighted_average(decoders, w):
    """Elementwise sum_i w_i * g_i (global_aggregate)."""
    decoders = list(decoders)
    if not decoders:
        raise EmptyInput("nothing to aggregate")
    if len(decoders) != len(w):
        raise DimensionMismatch(f"{len(decoders)} decoders but {len(w)} weights")
    _check_same_dim(decoders)
    stacked = np.stack([d.values for d in decoders])
    weights = np.asarray(w.weights, dtype=np.float64)
    return ParamVector(weights @ stacked)


@dataclass(frozen=True)
class LayerManifest:
    """Canonical flattening order of a decoder head: ordered (name, shape) pairs."""

    layers: tuple

    def __post_init__(self):
        layers = tuple((str(name), tuple(int(s) for s in shape)) for name, shape in self.layers)
        if not layers:
            raise ManifestMismatch("manifest has no layers")
        names = [name for name, _ in layers]
        if len(set(names)) != len(names):
            raise ManifestMismatch(f"duplicate layer names in manifest: {names}")
        for name, shape in layers:
            if any(s < 1 for s in shape):
                raise ManifestMismatch(f"layer {name} has an empty shape {shape}")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def linear_head(cls, feature_dim, outputs=1):
        return cls((("weight", (feature_dim, outputs)), ("bias", (outputs,))))

    @property
    def dim(self):
        return sum(math.prod(shape) for _, shape in self.layers)

    def flatten(self, head):
        missing = [name for name, _ in self.layers if name not in head]
        extra = sorted(set(head) - {name for name, _ in self.layers})
        if missing or extra:
            raise ManifestMismatch(f"head layers do not match manifest (missing={missing}, extra={extra})")
        parts = []
        for name, shape in self.layers:
            arr = np.asarray(head[name], dtype=np.float64)
            if arr.shape != shape:
                raise ManifestMismatch(f"layer {name} has shape {arr.shape}, manifest requires {shape}")
            parts.append(arr.ravel())
        return ParamVector(np.concatenate(parts))

    def unflatten(self, vector):
        if vector.dim != self.dim:
            raise ManifestMismatch(f"vector of dim {vector.dim} against manifest requiring {self.dim}")
        head = {}
        offset = 0
        for name, shape in self.layers:
            size = math.prod(shape)
            head[name] = vector.values[offset:offset + size].reshape(shape).copy()
            offset += size
        return head

    def check(self, vector):
        if vector.dim != self.dim:
            raise ManifestMismatch(f"vector of dim {vector.dim} against manifest requiring {self.dim}")
