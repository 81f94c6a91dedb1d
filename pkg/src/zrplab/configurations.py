"""Particle configurations on the torus: integer occupation counts carrying
a particle mass chi, mass classes, window averages, entropy, lattice
symmetries, and the binary snapshot format.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .lattice import TorusLattice, _as_coords

MAX_SITES = 1 << 24

SNAPSHOT_MAGIC = b"ZRSNAP"
SNAPSHOT_VERSION = 1
_DTYPE_COUNTS = 0   # uint32 occupation counts
_DTYPE_FIELD = 1    # float64 real-valued field
_HEADER = struct.Struct("<6sHBBId")  # magic, version, dtype, d, N, chi


@dataclass
class Configuration:
    """Occupation counts k on the lattice; the physical field is
    eta(x) = chi * k(x), derived on demand so the stored state stays
    integer-exact."""

    lattice: TorusLattice
    chi: float
    counts: np.ndarray

    def __post_init__(self):
        if self.lattice.n_sites > MAX_SITES:
            raise ValueError(f"lattice has {self.lattice.n_sites} sites, cap is {MAX_SITES}")
        if not (self.chi > 0 and np.isfinite(self.chi)):
            raise ValueError(f"chi must be positive and finite, got {self.chi}")
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(-1).copy()
        if self.counts.shape != (self.lattice.n_sites,):
            raise ValueError(f"counts shape {self.counts.shape} != ({self.lattice.n_sites},)")
        if (self.counts < 0).any():
            raise ValueError("occupation counts must be nonnegative")

    @property
    def shaped(self) -> np.ndarray:
        return self.counts.reshape(self.lattice.shape)

    def eta(self) -> np.ndarray:
        return self.chi * self.counts.astype(float)

    def eta_alpha(self, alpha: float) -> np.ndarray:
        return (self.chi * self.counts.astype(float)) ** alpha

    def n_particles(self) -> int:
        return int(self.counts.sum())

    def copy(self) -> "Configuration":
        return Configuration(self.lattice, self.chi, self.counts)

    def __eq__(self, other):
        return (isinstance(other, Configuration)
                and self.lattice == other.lattice
                and self.chi == other.chi
                and (self.counts == other.counts).all())


@dataclass(frozen=True)
class MassClass:
    """Configurations whose mean mass N^{-d} sum eta is at most b."""

    b: float

    def __post_init__(self):
        if not (self.b > 0):
            raise ValueError("mass bound must be positive")

    def contains(self, config: Configuration) -> bool:
        return total_mass(config) <= self.b


def total_mass(config: Configuration) -> float:
    """N^{-d} sum_x eta(x), computed as one integer sum times one float
    factor so the only rounding is the final multiply."""
    return int(config.counts.sum()) * (config.chi / config.lattice.n_sites)


def entropy(config: Configuration) -> float:
    """N^{-d} sum_x w(eta(x)) for w(u) = u log u, with w(0) = 0."""
    eta = config.eta()
    pos = eta > 0
    return float(np.sum(eta[pos] * np.log(eta[pos]))) / config.lattice.n_sites


def _circular_window_sum_1d(a: np.ndarray, W: int, axis: int) -> np.ndarray:
    """Sliding circular sum of width W centered on each index along `axis`,
    counting wrapped sites with multiplicity when W > N."""
    N = a.shape[axis]
    full, rem = divmod(W, N)
    out = np.zeros_like(a, dtype=float)
    if full:
        out += full * a.sum(axis=axis, keepdims=True)
    if rem:
        # centered remainder window: offsets -(W//2) .. -(W//2)+rem-1 plus
        # the full wraps already accounted for; a cumulative sum over one
        # periodic extension gives every centered slice in O(N)
        L = W // 2
        ext = np.concatenate([a, np.take(a, range(rem), axis=axis)], axis=axis)
        cs = np.cumsum(ext, axis=axis, dtype=float)
        zero = np.zeros_like(np.take(cs, [0], axis=axis))
        cs = np.concatenate([zero, cs], axis=axis)
        start = (np.arange(N) - L) % N
        upper = np.take(cs, start + rem, axis=axis)
        lower = np.take(cs, start, axis=axis)
        out += upper - lower
    return out


def window_average_field(config: Configuration, eps: float) -> np.ndarray:
    """eta averaged over the cubic window of side 2*floor(eps*N)+1 around
    every site at once (flat layout matching config.counts)."""
    if not (eps > 0):
        raise ValueError(f"window scale eps must be positive, got {eps}")
    N, d = config.lattice.N, config.lattice.d
    L = int(np.floor(eps * N))
    W = 2 * L + 1
    acc = config.shaped.astype(float)
    for axis in range(d):
        acc = _circular_window_sum_1d(acc, W, axis)
    return (config.chi / W ** d) * acc.reshape(-1)


def local_average(config: Configuration, eps: float, x) -> float:
    """Mean of eta over the cubic box of side 2*floor(eps*N)+1 centered at
    x, wrapping around the torus (with multiplicity for oversized
    windows)."""
    if not (eps > 0):
        raise ValueError(f"window scale eps must be positive, got {eps}")
    N, d = config.lattice.N, config.lattice.d
    coords = _as_coords(x, d)
    L = int(np.floor(eps * N))
    W = 2 * L + 1
    shaped = config.shaped
    total = 0
    offsets = [(c - L) % N for c in coords]
    # direct loop over the window; fine for the per-site query API
    idx = np.indices((W,) * d).reshape(d, -1)
    flat = 0
    for j in range(d):
        flat = flat * N + (idx[j] + offsets[j]) % N
    total = int(shaped.reshape(-1)[flat].sum())
    return total * config.chi / W ** d


@dataclass(frozen=True)
class LatticeSymmetry:
    """Affine lattice automorphism x -> A x + v (mod N): A must be a signed
    permutation matrix, which is exactly what preserves nearest-neighbor
    adjacency on the torus."""

    matrix: tuple
    shift: tuple

    @staticmethod
    def translation(v) -> "LatticeSymmetry":
        v = tuple(int(c) for c in (v if hasattr(v, "__len__") else (v,)))
        d = len(v)
        eye = tuple(tuple(1 if i == j else 0 for j in range(d)) for i in range(d))
        return LatticeSymmetry(eye, v)

    @staticmethod
    def reflection(axis: int, d: int) -> "LatticeSymmetry":
        m = tuple(tuple((-1 if i == axis else 1) if i == j else 0 for j in range(d))
                  for i in range(d))
        return LatticeSymmetry(m, (0,) * d)

    @staticmethod
    def rotation(ax1: int, ax2: int, d: int) -> "LatticeSymmetry":
        """Quarter turn in the (ax1, ax2) plane: e_ax1 -> e_ax2 -> -e_ax1."""
        rows = []
        for i in range(d):
            row = [0] * d
            if i == ax2:
                row[ax1] = 1
            elif i == ax1:
                row[ax2] = -1
            else:
                row[i] = 1
            rows.append(tuple(row))
        return LatticeSymmetry(tuple(rows), (0,) * d)

    def _check(self, d: int):
        A = np.array(self.matrix, dtype=int)
        if A.shape != (d, d) or len(self.shift) != d:
            raise ValueError(f"symmetry arity does not match d={d}")
        if not ((np.abs(A).sum(axis=0) == 1).all() and
                (np.abs(A).sum(axis=1) == 1).all() and
                np.isin(A, (-1, 0, 1)).all()):
            raise ValueError("matrix is not a signed permutation; it does not "
                             "preserve the lattice")
        return A

    def apply_coords(self, coords, N: int) -> tuple:
        A = self._check(len(coords))
        v = np.array(self.shift, dtype=int)
        return tuple((A @ np.array(coords, dtype=int) + v) % N)

    def compose(self, other: "LatticeSymmetry") -> "LatticeSymmetry":
        """self after other: x -> A_self (A_other x + v_other) + v_self."""
        d = len(self.shift)
        A1 = self._check(d)
        A2 = other._check(d)
        A = A1 @ A2
        v = A1 @ np.array(other.shift, dtype=int) + np.array(self.shift, dtype=int)
        return LatticeSymmetry(tuple(tuple(int(x) for x in row) for row in A),
                               tuple(int(c) for c in v))


def apply_symmetry(config: Configuration, g: LatticeSymmetry) -> Configuration:
    """Push the configuration forward along g: new counts at g(x) are the
    old counts at x.  Total mass and entropy are exactly invariant."""
    lat = config.lattice
    A = g._check(lat.d)
    v = np.array(g.shift, dtype=int)
    src = np.indices(lat.shape).reshape(lat.d, -1)
    dst = (A @ src + v[:, None]) % lat.N
    flat_dst = np.zeros(lat.n_sites, dtype=np.int64)
    for j in range(lat.d):
        flat_dst = flat_dst * lat.N + dst[j]
    new_counts = np.zeros_like(config.counts)
    new_counts[flat_dst] = config.counts
    return Configuration(lat, config.chi, new_counts)


def write_snapshot(path, config_or_field, meta: dict | None = None,
                   lattice: TorusLattice | None = None, chi: float = 0.0):
    """Write a versioned little-endian binary snapshot plus a JSON sidecar.

    Accepts either a Configuration (stored as uint32 counts) or a float
    field array (stored as float64; pass the lattice it lives on).
    """
    path = str(path)
    if isinstance(config_or_field, Configuration):
        cfg = config_or_field
        if (cfg.counts > np.iinfo(np.uint32).max).any():
            raise ValueError("occupation counts exceed the uint32 snapshot range")
        header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, _DTYPE_COUNTS,
                              cfg.lattice.d, cfg.lattice.N, cfg.chi)
        payload = cfg.counts.astype("<u4").tobytes()
        d, N = cfg.lattice.d, cfg.lattice.N
        kind = "counts"
    else:
        if lattice is None:
            raise ValueError("field snapshots need the lattice argument")
        arr = np.asarray(config_or_field, dtype=float).reshape(-1)
        if arr.shape != (lattice.n_sites,):
            raise ValueError("field size does not match the lattice")
        header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, _DTYPE_FIELD,
                              lattice.d, lattice.N, chi)
        payload = arr.astype("<f8").tobytes()
        d, N = lattice.d, lattice.N
        kind = "field"
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    sidecar = {"format_version": SNAPSHOT_VERSION, "kind": kind,
               "d": d, "N": N, "chi": chi if kind == "field" else config_or_field.chi}
    sidecar.update(meta or {})
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_snapshot(path):
    """Read a snapshot written by write_snapshot; returns (object, sidecar)
    where object is a Configuration or a (field, lattice, chi) triple."""
    path = str(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, dtype, d, N, chi = _HEADER.unpack_from(raw, 0)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a snapshot file")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    lat = TorusLattice(d, N)
    body = raw[_HEADER.size:]
    try:
        with open(path + ".json") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError:
        sidecar = {}
    if dtype == _DTYPE_COUNTS:
        counts = np.frombuffer(body, dtype="<u4").astype(np.int64)
        return Configuration(lat, chi, counts), sidecar
    if dtype == _DTYPE_FIELD:
        arr = np.frombuffer(body, dtype="<f8").astype(float)
        return (arr, lat, chi), sidecar
    raise ValueError(f"{path}: unknown payload dtype {dtype}")
