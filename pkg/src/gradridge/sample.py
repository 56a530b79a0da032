"""Training samples, input marginals and the sample file formats.

JSON layout::

    {"d": 2, "N": 3, "points": [[...], ...], "values": [...],
     "gradients": [[...], ...], "marginals": [...]}   # marginals optional

Binary layout (little-endian)::

    magic b"GRSAMPL\\0" | version u32 | d u32 | N u64
    points (N*d f64, row-major) | values (N f64) | gradients (N*d f64, row-major)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CompatibilityError, InputError
from .polybasis import Family

BINARY_MAGIC = b"GRSAMPL\0"
BINARY_VERSION = 1
_HEADER = struct.Struct("<8sIIQ")


@dataclass(frozen=True)
class Marginal:
    """Input marginal and its map to a reference coordinate.

    ``normal(mean, std)`` and ``lognormal(mu, sigma)`` standardize to a
    standard normal (Hermite family); ``uniform(low, high)`` maps affinely to
    ``[-1, 1]`` (Legendre family). ``lognormal`` reads ``(mu, sigma)`` as the
    parameters of ``log(x)``.
    """

    kind: str
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in ("normal", "uniform", "lognormal"):
            raise InputError(f"unknown marginal kind {self.kind!r}")
        if self.kind == "uniform" and not self.b > self.a:
            raise InputError("uniform marginal needs low < high")
        if self.kind != "uniform" and not self.b > 0:
            raise InputError("scale parameter must be positive")

    @classmethod
    def standard_normal(cls):
        return cls("normal", 0.0, 1.0)

    @classmethod
    def standard_uniform(cls):
        return cls("uniform", -1.0, 1.0)

    @property
    def family(self) -> Family:
        return Family.LEGENDRE if self.kind == "uniform" else Family.HERMITE

    @property
    def is_reference(self) -> bool:
        return (self.kind == "normal" and (self.a, self.b) == (0.0, 1.0)) or (
            self.kind == "uniform" and (self.a, self.b) == (-1.0, 1.0)
        )

    def standardize(self, x):
        """Return ``(xi, dxi_dx)``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "normal":
            return (x - self.a) / self.b, np.full_like(x, 1.0 / self.b)
        if self.kind == "uniform":
            half = 0.5 * (self.b - self.a)
            return (x - 0.5 * (self.a + self.b)) / half, np.full_like(x, 1.0 / half)
        return (np.log(x) - self.a) / self.b, 1.0 / (self.b * x)

    def physical(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.kind == "normal":
            return self.a + self.b * xi
        if self.kind == "uniform":
            return 0.5 * (self.a + self.b) + 0.5 * (self.b - self.a) * xi
        return np.exp(self.a + self.b * xi)

    def to_dict(self):
        return {"kind": self.kind, "params": [self.a, self.b]}

    @classmethod
    def from_dict(cls, data):
        try:
            a, b = data["params"]
            return cls(data["kind"], float(a), float(b))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed marginal descriptor {data!r}") from exc


@dataclass(frozen=True)
class Sample:
    """Points with model values and full gradients.

    Attributes:
        points: (N, d) array.
        values: (N,) array.
        gradients: (N, d) array.
        marginals: one :class:`Marginal` per dimension; defaults to standard normal.
    """

    points: np.ndarray
    values: np.ndarray
    gradients: np.ndarray
    marginals: tuple = field(default=None)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        grads = np.asarray(self.gradients, dtype=float).reshape(pts.shape[0], -1) if pts.size else np.zeros(pts.shape)
        if vals.shape[0] != pts.shape[0] or grads.shape != pts.shape:
            raise InputError(
                f"inconsistent sample shapes: points {pts.shape}, values {vals.shape}, gradients {grads.shape}"
            )
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(vals)) and np.all(np.isfinite(grads))):
            raise InputError("sample contains non-finite entries")
        margs = self.marginals
        if margs is None:
            margs = tuple(Marginal.standard_normal() for _ in range(pts.shape[1]))
        margs = tuple(margs)
        if len(margs) != pts.shape[1]:
            raise InputError("number of marginals does not match the dimension")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "gradients", grads)
        object.__setattr__(self, "marginals", margs)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def families(self):
        return [m.family for m in self.marginals]

    def subset(self, rows) -> "Sample":
        rows = np.asarray(rows, dtype=np.int64)
        return Sample(self.points[rows], self.values[rows], self.gradients[rows], self.marginals)

    def standardized(self) -> "Sample":
        """Sample expressed in reference coordinates (gradients by the chain rule)."""
        if all(m.is_reference for m in self.marginals):
            return self
        xi = np.empty_like(self.points)
        jac = np.empty_like(self.points)
        for j, m in enumerate(self.marginals):
            xi[:, j], jac[:, j] = m.standardize(self.points[:, j])
        ref = tuple(Marginal.standard_uniform() if m.kind == "uniform" else Marginal.standard_normal()
                    for m in self.marginals)
        # du/dxi = du/dx / (dxi/dx)
        return Sample(xi, self.values, self.gradients / jac, ref)

    def check_compatible(self, d):
        if self.d != d:
            raise CompatibilityError(f"sample has dimension {self.d}, expected {d}")

    # ---- serialization ----

    def to_dict(self):
        out = {
            "d": self.d,
            "N": self.n,
            "points": self.points.tolist(),
            "values": self.values.tolist(),
            "gradients": self.gradients.tolist(),
        }
        if not all(m == Marginal.standard_normal() for m in self.marginals):
            out["marginals"] = [m.to_dict() for m in self.marginals]
        return out

    @classmethod
    def from_dict(cls, data):
        try:
            d, n = int(data["d"]), int(data["N"])
            pts = np.asarray(data["points"], dtype=float).reshape(n, d)
            vals = np.asarray(data["values"], dtype=float).reshape(n)
            grads = np.asarray(data["gradients"], dtype=float).reshape(n, d)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed sample document: {exc}") from exc
        margs = data.get("marginals")
        if margs is not None:
            margs = [Marginal.from_dict(m) for m in margs]
        return cls(pts, vals, grads, margs)

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(BINARY_MAGIC, BINARY_VERSION, self.d, self.n)
        body = b"".join(
            np.ascontiguousarray(a, dtype="<f8").tobytes()
            for a in (self.points, self.values, self.gradients)
        )
        return header + body

    @classmethod
    def from_bytes(cls, blob: bytes):
        if len(blob) < _HEADER.size:
            raise InputError("binary sample is truncated")
        magic, version, d, n = _HEADER.unpack_from(blob)
        if magic != BINARY_MAGIC:
            raise InputError("not a binary sample file (bad magic)")
        if version != BINARY_VERSION:
            raise InputError(f"unsupported binary sample version {version}")
        expected = _HEADER.size + 8 * (2 * n * d + n)
        if len(blob) != expected:
            raise InputError(f"binary sample has {len(blob)} bytes, expected {expected}")
        data = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
        pts = data[: n * d].reshape(n, d)
        vals = data[n * d : n * d + n]
        grads = data[n * d + n :].reshape(n, d)
        return cls(pts.copy(), vals.copy(), grads.copy())


def save_sample(sample: Sample, path):
    path = Path(path)
    if path.suffix in (".bin", ".grs"):
        path.write_bytes(sample.to_bytes())
    else:
        path.write_text(json.dumps(sample.to_dict()))


def load_sample(path) -> Sample:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read sample file {path}: {exc}") from exc
    if blob.startswith(BINARY_MAGIC):
        return Sample.from_bytes(blob)
    try:
        data = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot parse sample file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InputError(f"sample file {path} must contain a JSON object")
    return Sample.from_dict(data)
