"""Discrete torus geometry: sites, boxes, weighted partitions, and the
nearly-dyadic multiscale ladder used by the coarse-graining estimators.

Everything here is exact integer combinatorics.  Scales are powers of two,
weights are dyadic rationals stored as floats (exactly representable), and
the scale-consistency checks are done on exponents so they stay exact for
any chi down to 2**-64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

# Dimension cap.  Nothing below is specific to low dimension, but the site
# enumeration is dense, so keep a guard against accidental d=7 requests.
MAX_DIMENSION = 3

# Upper bound asserted for chi**(delta/2) * (l^{k+1}/l^k)**2 on every step
# (valid for chi <= 1; see scale_bounds_exact).
C_SCALE = 4


def _as_coords(x, d):
    """Normalize a site given as int (d=1) or tuple to a coordinate tuple."""
    if isinstance(x, (int, np.integer)):
        if d != 1:
            raise ValueError(f"scalar site index given for d={d}; pass a {d}-tuple")
        return (int(x),)
    t = tuple(int(c) for c in x)
    if len(t) != d:
        raise ValueError(f"site {x!r} has {len(t)} coordinates, lattice has d={d}")
    return t


@dataclass(frozen=True)
class TorusLattice:
    """Discrete torus with N sites per axis in d dimensions.

    Sites are coordinate tuples in {0,...,N-1}^d; flat indices are row-major.
    Every site has exactly 2*d neighbors counted with multiplicity: for N=2
    the +e_j and -e_j neighbors coincide as sites but are kept as two slots.
    """

    d: int
    N: int
    max_dimension: int = MAX_DIMENSION

    def __post_init__(self):
        if not (1 <= self.d <= self.max_dimension):
            raise ValueError(f"dimension d={self.d} outside [1, {self.max_dimension}]")
        if self.N < 2:
            raise ValueError(f"need N >= 2 sites per axis, got {self.N}")

    @property
    def n_sites(self) -> int:
        return self.N ** self.d

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.d

    def site_index(self, coords) -> int:
        coords = _as_coords(coords, self.d)
        idx = 0
        for c in coords:
            idx = idx * self.N + (c % self.N)
        return idx

    def site_coords(self, index: int) -> tuple:
        if not (0 <= index < self.n_sites):
            raise ValueError(f"site index {index} out of range")
        out = []
        for _ in range(self.d):
            out.append(index % self.N)
            index //= self.N
        return tuple(reversed(out))

    def sites(self):
        """Iterate all sites as coordinate tuples, in flat-index order."""
        for i in range(self.n_sites):
            yield self.site_coords(i)

    def neighbors(self, x) -> list:
        """The 2d neighbor slots of x (with multiplicity when N=2)."""
        coords = _as_coords(x, self.d)
        out = []
        for j in range(self.d):
            for step in (+1, -1):
                y = list(coords)
                y[j] = (y[j] + step) % self.N
                out.append(tuple(y))
        assert len(out) == 2 * self.d
        return out

    def bond_slots(self):
        """Iterate the d*N^d oriented bond slots (x, x+e_j), one per site
        per axis.  For N=2 both slots of a physical edge appear, which is
        the multiplicity convention the quadratic forms below rely on."""
        for x in self.sites():
            for j in range(self.d):
                y = list(x)
                y[j] = (y[j] + 1) % self.N
                yield x, tuple(y)

    def neighbor_index_table(self) -> np.ndarray:
        """(n_sites, 2d) int array of flat neighbor indices; slot order is
        axis-major with +1 before -1, matching neighbors()."""
        n = self.n_sites
        table = np.empty((n, 2 * self.d), dtype=np.int64)
        for i in range(n):
            for s, y in enumerate(self.neighbors(self.site_coords(i))):
                table[i, s] = self.site_index(y)
        return table


def lattice_distance(lattice: TorusLattice, x, y) -> int:
    """Length of the shortest nearest-neighbor path between x and y:
    the sum over axes of cyclic coordinate distances."""
    cx = _as_coords(x, lattice.d)
    cy = _as_coords(y, lattice.d)
    total = 0
    for a, b in zip(cx, cy):
        delta = abs((a - b) % lattice.N)
        total += min(delta, lattice.N - delta)
    assert total <= lattice.d * lattice.N
    return total


@dataclass(frozen=True)
class LatticeBox:
    """Product of cyclic intervals, one per axis: axis j covers the sites
    starts[j], starts[j]+1, ..., starts[j]+sizes[j]-1 modulo N."""

    starts: tuple
    sizes: tuple
    N: int

    def __post_init__(self):
        assert len(self.starts) == len(self.sizes)
        for z in self.sizes:
            if not (1 <= z <= self.N):
                raise ValueError(f"box side {z} outside [1, {self.N}]")

    @property
    def d(self) -> int:
        return len(self.sizes)

    @property
    def side_lengths(self) -> tuple:
        return self.sizes

    @property
    def n_sites(self) -> int:
        return math.prod(self.sizes)

    def axis_sites(self, j: int) -> list:
        s, z = self.starts[j], self.sizes[j]
        return [(s + t) % self.N for t in range(z)]

    def sites(self):
        """All sites of the box as coordinate tuples (row-major over axes)."""
        axes = [self.axis_sites(j) for j in range(self.d)]
        idx = [0] * self.d
        while True:
            yield tuple(axes[j][idx[j]] for j in range(self.d))
            j = self.d - 1
            while j >= 0:
                idx[j] += 1
                if idx[j] < len(axes[j]):
                    break
                idx[j] = 0
                j -= 1
            if j < 0:
                return

    def contains(self, coords) -> bool:
        coords = _as_coords(coords, self.d)
        for c, s, z in zip(coords, self.starts, self.sizes):
            if (c - s) % self.N >= z:
                return False
        return True


class Partition:
    """Box partition of the torus built from per-axis interval partitions.

    axis_intervals[j] is a list of (start, size) pairs that tile axis j in
    increasing start order.  Blocks are indexed by per-axis interval index
    tuples, flattened row-major; block_of() is O(d) via lookup tables.
    """

    def __init__(self, lattice: TorusLattice, axis_intervals, scale: int):
        self.lattice = lattice
        self.scale = int(scale)
        self.axis_intervals = [list(iv) for iv in axis_intervals]
        if len(self.axis_intervals) != lattice.d:
            raise ValueError("need one interval list per axis")
        self.counts = tuple(len(iv) for iv in self.axis_intervals)
        self._lookup = []
        for j, intervals in enumerate(self.axis_intervals):
            table = np.full(lattice.N, -1, dtype=np.int64)
            covered = 0
            for b, (s, z) in enumerate(intervals):
                for t in range(z):
                    c = (s + t) % lattice.N
                    if table[c] != -1:
                        raise ValueError(f"axis {j}: overlapping intervals at {c}")
                    table[c] = b
                covered += z
            if covered != lattice.N:
                raise ValueError(f"axis {j}: intervals cover {covered} != N")
            self._lookup.append(table)

    @property
    def n_blocks(self) -> int:
        return math.prod(self.counts)

    def block_tuple(self, flat: int) -> tuple:
        out = []
        for c in reversed(self.counts):
            out.append(flat % c)
            flat //= c
        return tuple(reversed(out))

    def block_flat(self, btuple) -> int:
        flat = 0
        for b, c in zip(btuple, self.counts):
            flat = flat * c + b
        return flat

    def block(self, flat: int) -> LatticeBox:
        bt = self.block_tuple(flat)
        starts = tuple(self.axis_intervals[j][bt[j]][0] for j in range(self.lattice.d))
        sizes = tuple(self.axis_intervals[j][bt[j]][1] for j in range(self.lattice.d))
        return LatticeBox(starts, sizes, self.lattice.N)

    def blocks(self):
        return [self.block(i) for i in range(self.n_blocks)]

    def block_of(self, site) -> int:
        coords = _as_coords(site, self.lattice.d)
        bt = tuple(int(self._lookup[j][c]) for j, c in enumerate(coords))
        return self.block_flat(bt)

    def block_index_map(self) -> np.ndarray:
        """Flat-site -> flat-block index array (vectorized block_of)."""
        grids = np.meshgrid(*self._lookup, indexing="ij")
        flat = np.zeros(self.lattice.shape, dtype=np.int64)
        for g, c in zip(grids, self.counts):
            flat = flat * c + g
        return flat.reshape(-1)

    def adjacent_pairs(self) -> list:
        """Unordered pairs of distinct blocks sharing a face: equal interval
        index on all axes but one, cyclically consecutive on that one."""
        pairs = set()
        for flat in range(self.n_blocks):
            bt = self.block_tuple(flat)
            for j in range(self.lattice.d):
                if self.counts[j] < 2:
                    continue
                nb = list(bt)
                nb[j] = (bt[j] + 1) % self.counts[j]
                other = self.block_flat(tuple(nb))
                if other != flat:
                    pairs.add((min(flat, other), max(flat, other)))
        return sorted(pairs)

    def validate(self):
        """Check disjoint cover and side-length bounds [scale, 2*scale]."""
        seen = np.zeros(self.lattice.n_sites, dtype=bool)
        for box in self.blocks():
            for z in box.side_lengths:
                assert self.scale <= z <= 2 * self.scale, (z, self.scale)
            for site in box.sites():
                i = self.lattice.site_index(site)
                assert not seen[i], f"site {site} covered twice"
                seen[i] = True
        assert seen.all(), "partition does not cover the torus"
        for a, b in self.adjacent_pairs():
            assert a != b


@dataclass
class Weighting:
    """Strictly positive site weights with the sup/inf ratio on record."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not (self.values > 0).all():
            raise ValueError("weights must be strictly positive")

    @property
    def ratio(self) -> float:
        return float(self.values.max() / self.values.min())

    def total(self) -> float:
        return float(self.values.sum())

    def block_weight(self, lattice: TorusLattice, box: LatticeBox) -> float:
        return float(sum(self.values[lattice.site_index(s)] for s in box.sites()))

    def block_weights(self, partition: Partition) -> np.ndarray:
        """Per-block total weight, indexed by flat block index."""
        bmap = partition.block_index_map()
        return np.bincount(bmap, weights=self.values, minlength=partition.n_blocks)


def nearly_dyadic_1d(N: int) -> Partition:
    """Partition of the N-cycle into M = 2^floor(log2 N) cyclic intervals:
    the first h = N - M have size 2 and the rest are singletons, in
    increasing site order."""
    if N < 2:
        raise ValueError(f"need N >= 2, got {N}")
    m = N.bit_length() - 1
    M = 1 << m
    h = N - M
    intervals = []
    pos = 0
    for b in range(M):
        size = 2 if b < h else 1
        intervals.append((pos, size))
        pos += size
    assert pos == N and len(intervals) == M
    return Partition(TorusLattice(1, N), [intervals], scale=1)


def ladder_exponent(chi: float, delta: float) -> tuple:
    """Scale-step exponent q = floor(delta * |log2 min(chi, 1/2)| / 8),
    clamped below at 1.  Returns (raw_q, q).  Exact for dyadic chi."""
    if not (math.isfinite(chi) and chi > 0):
        raise ValueError(f"chi must be positive and finite, got {chi}")
    if not (math.isfinite(delta) and delta > 0):
        raise ValueError(f"delta must be positive and finite, got {delta}")
    raw = math.floor(-delta * math.log2(min(chi, 0.5)) / 8.0)
    return raw, max(1, raw)


def scale_ladder(N: int, chi: float, delta: float) -> tuple:
    """Scales l^1 <= ... <= l^K for the torus of side N: l^k = 2^{q(k-1)}
    below the top, l^K = 2^m with m = floor(log2 N).  When q > m the ladder
    collapses to the two levels [1, 2^m].  Returns (m, q, scales, forced)."""
    if N < 2:
        raise ValueError(f"need N >= 2, got {N}")
    m = N.bit_length() - 1
    _, q = ladder_exponent(chi, delta)
    if q > m:
        return m, q, [1, 1 << m], True
    K = m // q + 1
    scales = [1 << (q * (k - 1)) for k in range(1, K)] + [1 << m]
    assert len(scales) >= 2 and scales[-2] < scales[-1]
    return m, q, scales, False


def _group_intervals(level1, group: int):
    """Coarsen a list of (start, size) intervals by merging consecutive
    runs of `group` of them."""
    M = len(level1)
    assert M % group == 0
    out = []
    for t in range(M // group):
        run = level1[t * group : (t + 1) * group]
        out.append((run[0][0], sum(z for _, z in run)))
    return out


def scale_bounds_exact(chi: float, delta: float, l_lo: int, l_hi: int) -> tuple:
    """Exact dyadic evaluation of the two scale-consistency quantities
    chi**(delta/2) * (l_hi/l_lo)**2  and  min(chi, 1/2)**(delta/4) * (l_hi/l_lo)**2
    as Fractions, valid when chi is a power of two and delta is dyadic."""
    e_chi = Fraction(math.log2(chi))  # exact when chi = 2**k
    assert 2.0 ** float(e_chi) == chi, "chi must be a power of two for exact mode"
    e_chim = min(e_chi, Fraction(-1))
    d = Fraction(delta)
    r = Fraction(l_hi, l_lo)
    e_up = d / 2 * e_chi
    e_lo = d / 4 * e_chim
    # 2**e with fractional e is irrational in general; compare against the
    # required thresholds on the exponent scale instead of materializing.
    log2_r2 = 2 * (r.numerator.bit_length() - 1)
    assert r.denominator == 1 and r.numerator == 1 << (r.numerator.bit_length() - 1)
    return e_up + log2_r2, e_lo + log2_r2


@dataclass
class PartitionFamily:
    """Nested ladder of box partitions with the reciprocal-block-size weight.

    partitions[0] has scale 1 and refines partitions[1], etc.; the last
    level is the single block covering the whole torus.  Every block of a
    given level carries the same total weight.
    """

    lattice: TorusLattice
    chi: float
    delta: float
    scales: list
    partitions: list
    weighting: Weighting
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.scales)

    def refinements(self) -> list:
        return [refinement_map(self.partitions[k], self.partitions[k + 1])
                for k in range(self.K - 1)]

    def validate(self):
        lat = self.lattice
        assert self.scales[0] == 1
        assert self.partitions[-1].n_blocks == 1
        top = self.partitions[-1].block(0)
        assert top.n_sites == lat.n_sites
        for k, (l, part) in enumerate(zip(self.scales, self.partitions)):
            assert part.scale == l
            part.validate()
            bw = self.weighting.block_weights(part)
            # weights are dyadic with tiny significands, so sums are exact
            assert (bw == bw[0]).all(), f"level {k}: unequal block weights"
            assert bw[0] == float(l ** lat.d)
        for k in range(self.K - 1):
            refinement_map(self.partitions[k], self.partitions[k + 1])
        assert self.weighting.ratio <= 2 ** lat.d + 1e-12
        self._validate_scale_bounds()

    def _validate_scale_bounds(self):
        """Exponent-exact scale-consistency checks: the upper bound on every
        step, the lower bound below the top fold only (the top step absorbs
        the dyadic remainder and is reported, not asserted)."""
        assert self.chi <= 1.0, "exact scale bounds calibrated for chi <= 1"
        top_report = None
        for k in range(self.K - 1):
            e_up, e_lo = scale_bounds_exact(
                self.chi, self.delta, self.scales[k], self.scales[k + 1])
            if k < self.K - 2:
                assert e_up <= 2, (k, e_up)   # chi^{d/2} ratio^2 <= C_SCALE = 4
                assert e_lo >= -2, (k, e_lo)  # min(chi,1/2)^{d/4} ratio^2 >= 1/4
            else:
                assert e_up <= 2, (k, e_up)
                top_report = float(e_lo)
        self.meta["top_step_lower_exponent"] = top_report
        self.meta["top_step_lower_ok"] = bool(top_report is not None and top_report >= -2)

    def to_document(self) -> str:
        """Versioned JSON description: levels with per-axis interval
        endpoints, plus the site weights."""
        doc = {
            "format_version": 1,
            "kind": "partition-family",
            "d": self.lattice.d,
            "N": self.lattice.N,
            "chi": self.chi,
            "delta": self.delta,
            "scales": [int(l) for l in self.scales],
            "levels": [
                {"scale": int(p.scale),
                 "axis_intervals": [[[int(s), int(z)] for s, z in iv]
                                    for iv in p.axis_intervals]}
                for p in self.partitions
            ],
            "weights": [float(w) for w in self.weighting.values],
            "meta": {k: v for k, v in sorted(self.meta.items())},
        }
        return json.dumps(doc, sort_keys=True)


def parse_family_document(doc: str) -> PartitionFamily:
    data = json.loads(doc)
    if data.get("format_version") != 1 or data.get("kind") != "partition-family":
        raise ValueError("unrecognized partition-family document")
    lat = TorusLattice(data["d"], data["N"])
    partitions = [
        Partition(lat, [[(s, z) for s, z in iv] for iv in lev["axis_intervals"]],
                  lev["scale"])
        for lev in data["levels"]
    ]
    return PartitionFamily(
        lattice=lat, chi=data["chi"], delta=data["delta"],
        scales=list(data["scales"]), partitions=partitions,
        weighting=Weighting(np.array(data["weights"])), meta=dict(data["meta"]),
    )


def build_partition_family(lattice: TorusLattice, chi: float, delta: float) -> PartitionFamily:
    """Assemble the nested partition ladder on the given torus.

    Level 1 is the nearly-dyadic partition applied per axis (scale 1);
    level k groups l^k consecutive level-1 intervals per axis; the top
    level is the whole torus.  The weight of a site is the reciprocal of
    the size of its level-1 block, so every level-1 block weighs exactly 1
    and level-k blocks weigh (l^k)^d.
    """
    N, d = lattice.N, lattice.d
    raw_q, q = ladder_exponent(chi, delta)
    m, q2, scales, forced = scale_ladder(N, chi, delta)
    assert q2 == q
    level1_axis = nearly_dyadic_1d(N).axis_intervals[0]

    partitions = []
    for l in scales:
        iv = level1_axis if l == 1 else _group_intervals(level1_axis, l)
        partitions.append(Partition(lattice, [iv] * d, scale=l))

    w = np.empty(lattice.n_sites, dtype=float)
    level1 = partitions[0]
    bmap = level1.block_index_map()
    sizes = np.bincount(bmap, minlength=level1.n_blocks)
    w[:] = 1.0 / sizes[bmap]

    fam = PartitionFamily(
        lattice=lattice, chi=chi, delta=delta, scales=scales,
        partitions=partitions, weighting=Weighting(w),
        meta={"m": m, "q": q, "raw_q": raw_q, "clamped": raw_q < 1,
              "forced_two_level": forced, "C_scale": C_SCALE},
    )
    return fam


def refinement_map(fine: Partition, coarse: Partition) -> np.ndarray:
    """Flat fine-block -> flat coarse-block map.  Raises on the first fine
    block that is not contained in a single coarse block."""
    if fine.lattice.N != coarse.lattice.N or fine.lattice.d != coarse.lattice.d:
        raise ValueError("partitions live on different lattices")
    out = np.empty(fine.n_blocks, dtype=np.int64)
    for i in range(fine.n_blocks):
        box = fine.block(i)
        anchor = next(box.sites())
        j = coarse.block_of(anchor)
        cbox = coarse.block(j)
        for c, cs, cz, fs, fz in zip(range(box.d), cbox.starts, cbox.sizes,
                                     box.starts, box.sizes):
            off = (fs - cs) % fine.lattice.N
            if off + fz > cz:
                raise ValueError(
                    f"not a refinement: fine block {i} {box} sticks out of "
                    f"coarse block {j} {cbox} on axis {c}")
        out[i] = j
    counts = np.bincount(out, minlength=coarse.n_blocks)
    assert (counts > 0).all(), "some coarse block has no preimage"
    return out
