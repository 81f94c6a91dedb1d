"""Block-scale estimators on partition ladders.

alpha-averages and their coarse fields, squared gradients between adjacent
blocks, an embedding check on block boxes, the one-step surplus, the
telescoping decomposition across ladder levels, and time-integrated error
statistics over trajectory snapshots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .configurations import Configuration, window_average_field
from .lattice import LatticeBox, Partition, PartitionFamily, Weighting, refinement_map
from .orlicz import YoungFunction, lipschitz_truncation, luxemburg_norm

# Frozen constants for discrete_sobolev_check, keyed by (d, p).  Calibrated
# once with calibrate_sobolev_constant (2000 fields, master seed 20260819,
# square boxes with sides 4..32, lambda in {0.1, 1.0}, gamma / normal /
# single-spike / two-level field mix), then doubled as a safety margin and
# frozen here.  Tests audit fresh fields against these values and never
# re-tune them.  The extremal fields are single spikes on the smallest
# boxes, whose required constant is independent of the spike height, so the
# pilot campaign explores the worst case exhaustively.
SOBOLEV_CONSTANTS = {
    (1, 1.5): 0.006704,
    (2, 1.25): 0.003643,
}


def _site_weights(weighting, n_sites):
    if weighting is None:
        return np.ones(n_sites)
    if isinstance(weighting, Weighting):
        return weighting.values
    w = np.asarray(weighting, dtype=float)
    if w.shape != (n_sites,):
        raise ValueError(f"weights shape {w.shape} != ({n_sites},)")
    return w


def alpha_average(config: Configuration, block, weighting=None, alpha: float = 2.0) -> float:
    """Weighted alpha-mean of eta over one block:
    ((1/w(B)) sum_{x in B} w(x) eta(x)^alpha)^(1/alpha)."""
    if isinstance(block, LatticeBox):
        sites = np.fromiter((config.lattice.site_index(s) for s in block.sites()),
                            dtype=np.int64)
    else:
        sites = np.asarray(block, dtype=np.int64).reshape(-1)
    if sites.size == 0:
        raise ValueError("block must be nonempty")
    w = _site_weights(weighting, config.lattice.n_sites)[sites]
    ea = config.eta_alpha(alpha)[sites]
    return float((np.dot(w, ea) / w.sum()) ** (1.0 / alpha))


@dataclass
class CoarseField:
    """Per-block values on one level of a partition ladder."""

    partition: Partition
    weighting: Weighting
    values: np.ndarray
    alpha: float
    level: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.shape != (self.partition.n_blocks,):
            raise ValueError(f"{self.values.size} values for "
                             f"{self.partition.n_blocks} blocks")
        if not np.isfinite(self.values).all() or (self.values < 0).any():
            raise ValueError("block values must be finite and nonnegative")

    def powered(self) -> np.ndarray:
        """The per-block values raised to alpha."""
        return self.values ** self.alpha


def block_alpha_field(config: Configuration, partition: Partition,
                      weighting: Weighting, alpha: float = 2.0,
                      level: int | None = None) -> CoarseField:
    """Alpha-average over every block of the partition at once."""
    w = _site_weights(weighting, config.lattice.n_sites)
    bmap = partition.block_index_map()
    num = np.bincount(bmap, weights=w * config.eta_alpha(alpha),
                      minlength=partition.n_blocks)
    den = np.bincount(bmap, weights=w, minlength=partition.n_blocks)
    return CoarseField(partition, weighting, (num / den) ** (1.0 / alpha),
                       alpha, level)


def _powered_values(source, partition, weighting, alpha):
    """Per-fine-block values of (Lambda_B)^alpha from either a raw array,
    a CoarseField, or a Configuration."""
    if isinstance(source, Configuration):
        return block_alpha_field(source, partition, weighting, alpha).powered()
    if isinstance(source, CoarseField):
        if source.partition is not partition:
            raise ValueError("field lives on a different partition")
        return source.powered()
    vals = np.asarray(source, dtype=float).reshape(-1)
    if vals.shape != (partition.n_blocks,):
        raise ValueError(f"{vals.size} block values for {partition.n_blocks} blocks")
    return vals


def coarse_gradient_sq(source, fine: Partition, coarse: Partition, btilde: int,
                       weighting=None, alpha: float = 2.0) -> float:
    """(l/l_tilde)^(d-2) * sum over adjacent fine blocks inside the coarse
    block of squared differences of the half-power block averages.

    `source` is a Configuration, a CoarseField on the fine partition, or the
    per-fine-block array of (Lambda_B)^alpha values directly.
    """
    vals = _powered_values(source, fine, weighting, alpha)
    root = np.sqrt(vals)
    fmap = refinement_map(fine, coarse)
    total = 0.0
    for i, j in fine.adjacent_pairs():
        if fmap[i] == btilde and fmap[j] == btilde:
            total += (root[i] - root[j]) ** 2
    d = fine.lattice.d
    return (fine.scale / coarse.scale) ** (d - 2) * total


def box_gradient_sq(f: np.ndarray) -> float:
    """Sum of squared nearest-neighbor differences on a box (no wrap)."""
    f = np.asarray(f, dtype=float)
    total = 0.0
    for axis in range(f.ndim):
        if f.shape[axis] < 2:
            continue
        head = np.take(f, range(f.shape[axis] - 1), axis=axis)
        tail = np.take(f, range(1, f.shape[axis]), axis=axis)
        total += float(((head - tail) ** 2).sum())
    return total


def discrete_sobolev_check(f: np.ndarray, lam: float, p: float,
                           C: float | None = None) -> tuple:
    """Embedding check on a box: is the normalized l^p norm of f^2 bounded
    by (1+lam) * mean(f^2) + C(1+1/lam) * l^(2-d) * sum of squared
    nearest-neighbor differences, with l the longest box side?

    C defaults to the frozen calibrated constant for (f.ndim, p).
    Returns (lhs, rhs, pass).
    """
    f = np.asarray(f, dtype=float)
    d = f.ndim
    if f.size == 0:
        raise ValueError("degenerate box")
    sides = f.shape
    if max(sides) > 2 * min(sides):
        raise ValueError(f"box sides {sides} differ by more than a factor 2")
    if not (0.0 < lam <= 1.0):
        raise ValueError(f"lam must be in (0, 1], got {lam}")
    if C is None:
        try:
            C = SOBOLEV_CONSTANTS[(d, p)]
        except KeyError:
            raise ValueError(f"no frozen constant for (d, p) = ({d}, {p}); pass C")
    sq = f.astype(float) ** 2
    lhs = float(np.mean(sq ** p) ** (1.0 / p))
    l = max(sides)
    rhs = float((1.0 + lam) * sq.mean()
                + C * (1.0 + 1.0 / lam) * l ** (2 - d) * box_gradient_sq(f))
    return lhs, rhs, bool(lhs <= rhs * (1.0 + 1e-12))


def sobolev_constant_required(f: np.ndarray, lam: float, p: float) -> float:
    """Smallest C making discrete_sobolev_check pass for this field."""
    f = np.asarray(f, dtype=float)
    sq = f ** 2
    lhs = float(np.mean(sq ** p) ** (1.0 / p))
    excess = lhs - (1.0 + lam) * float(sq.mean())
    if excess <= 0.0:
        return 0.0
    grad = box_gradient_sq(f)
    if grad == 0.0:
        raise ValueError("constant field cannot need a positive constant")
    l = max(f.shape)
    return excess / ((1.0 + 1.0 / lam) * l ** (2 - f.ndim) * grad)


def calibrate_sobolev_constant(d: int, p: float, n_fields: int = 2000,
                               seed: int = 20260819,
                               lam_grid=(0.1, 1.0)) -> float:
    """Calibration protocol behind SOBOLEV_CONSTANTS: the largest constant
    any pilot field requires, before the safety factor.

    Pilot fields mix gamma noise, signed normal noise, single spikes, and
    two-level steps on square boxes with sides 4..32, seeded from `seed`
    so the campaign is reproducible.
    """
    rng = np.random.default_rng(seed + d)
    worst = 0.0
    for _ in range(n_fields):
        side = int(rng.integers(4, 33))
        shape = (side,) * d
        kind = rng.integers(0, 4)
        if kind == 0:
            f = rng.gamma(1.0, 1.0, shape)
        elif kind == 1:
            f = rng.standard_normal(shape)
        elif kind == 2:
            f = np.zeros(shape)
            f[tuple(rng.integers(0, side, d))] = rng.uniform(0.5, 10.0)
        else:
            f = np.where(rng.random(shape) < 0.5, rng.uniform(0, 1),
                         rng.uniform(1, 5))
        for lam in lam_grid:
            worst = max(worst, sobolev_constant_required(f, lam, p))
    return worst


def delta_btilde(source, fine: Partition, coarse: Partition, btilde: int,
                 weighting: Weighting, p: float, lam: float,
                 alpha: float = 2.0) -> float:
    """One-step surplus on a coarse block: the positive part of the
    weighted, normalized l^p norm of the fine block values minus (1+lam)
    times the coarse block value."""
    vals = _powered_values(source, fine, weighting, alpha)
    fmap = refinement_map(fine, coarse)
    sub = fmap == btilde
    if not sub.any():
        raise ValueError(f"coarse block {btilde} contains no fine blocks")
    wb = weighting.block_weights(fine)[sub]
    v = vals[sub]
    wtot = wb.sum()
    lp = float((np.dot(wb, v ** p) / wtot) ** (1.0 / p))
    coarse_val = float(np.dot(wb, v) / wtot)
    return max(lp - (1.0 + lam) * coarse_val, 0.0)


def lambda_schedule(family: PartitionFamily) -> dict:
    """Per-step mixing weights lambda_k = max((l^k)^(-d/4),
    (l^{k+1}/N)^(1/2)) for 1 <= k < K, with their sum and the largest
    prefix product of (1 + lambda_m)."""
    d, N = family.lattice.d, family.lattice.N
    lams = []
    for k in range(family.K - 1):
        lk, lk1 = family.scales[k], family.scales[k + 1]
        lam = max(lk ** (-d / 4.0), math.sqrt(lk1 / N))
        if not (0.0 < lam <= 1.0):
            raise AssertionError(f"schedule left (0,1] at step {k}: {lam}")
        lams.append(lam)
    prefix = [1.0]
    for lam in lams:
        prefix.append(prefix[-1] * (1.0 + lam))
    return {
        "lambdas": lams,
        "sum": float(sum(lams)),
        "prefix_products": prefix,
        "max_prefix_product": float(max(prefix)),
    }


@dataclass
class TelescopeReport:
    """Level norms of the block averages and their exact recombination."""

    z: list
    lambdas: list
    level_gaps: list           # Z_k - Z_{k+1}
    discounted_diffs: list     # Z_k - (1+lambda_k) Z_{k+1}
    prefix_products: list      # prod_{m<k} (1+lambda_m), k = 1..K
    reconstruction: float
    residual: float            # |Z_1 - reconstruction| / max(1, Z_1)
    site_norm: float
    z1_site_factor: float
    top_value: float           # alpha-mean over the whole torus, powered
    weighted_mass: float       # weighted normalized l^1 of eta^alpha
    phi_inverse_one: float

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def telescope(config: Configuration, family: PartitionFamily,
              phi: YoungFunction, alpha: float = 2.0,
              lambdas=None) -> TelescopeReport:
    """Norms Z_k of the powered block averages on every ladder level and
    the exact identity recombining them through the lambda schedule."""
    if lambdas is None:
        lambdas = lambda_schedule(family)["lambdas"]
    lambdas = [float(x) for x in lambdas]
    if len(lambdas) != family.K - 1:
        raise ValueError(f"{len(lambdas)} lambdas for {family.K} levels")
    z = []
    for part in family.partitions:
        vals = block_alpha_field(config, part, family.weighting, alpha).powered()
        wb = family.weighting.block_weights(part)
        z.append(luxemburg_norm(vals, wb, phi))

    prefix = [1.0]
    for lam in lambdas:
        prefix.append(prefix[-1] * (1.0 + lam))
    diffs = [z[k] - (1.0 + lambdas[k]) * z[k + 1] for k in range(family.K - 1)]
    recon = math.fsum(prefix[k] * diffs[k] for k in range(family.K - 1))
    recon += prefix[family.K - 1] * z[-1]
    residual = abs(z[0] - recon) / max(1.0, abs(z[0]))

    ea = config.eta_alpha(alpha)
    site_norm = luxemburg_norm(ea, np.ones(ea.size), phi)
    if site_norm == 0.0 and z[0] == 0.0:
        factor = 1.0
    elif site_norm == 0.0:
        factor = math.inf
    else:
        factor = z[0] / site_norm

    w = family.weighting.values
    weighted_mass = float(np.dot(w, ea) / w.sum())
    return TelescopeReport(
        z=z, lambdas=lambdas,
        level_gaps=[z[k] - z[k + 1] for k in range(family.K - 1)],
        discounted_diffs=diffs, prefix_products=prefix,
        reconstruction=recon, residual=residual,
        site_norm=site_norm, z1_site_factor=factor,
        top_value=float(weighted_mass), weighted_mass=weighted_mass,
        phi_inverse_one=float(phi.inverse(1.0)),
    )


def one_step_report(config: Configuration, family: PartitionFamily, k: int,
                    phi: YoungFunction, p: float, lam: float,
                    alpha: float = 2.0) -> dict:
    """Ingredients of one coarsening step from level k to k+1, reported
    without asserting the bound (its constants are existential): the two
    level norms, the per-coarse-block surpluses with their weighted l^1 and
    Orlicz norms, the dual-inverse prefactor, and the gradient sums."""
    if not (0 <= k < family.K - 1):
        raise ValueError(f"no step from level {k} in a {family.K}-level ladder")
    fine, coarse = family.partitions[k], family.partitions[k + 1]
    w = family.weighting
    vals = block_alpha_field(config, fine, w, alpha).powered()
    wb_fine = w.block_weights(fine)
    wb_coarse = w.block_weights(coarse)
    z_fine = luxemburg_norm(vals, wb_fine, phi)
    fmap = refinement_map(fine, coarse)
    coarse_vals = np.bincount(fmap, weights=wb_fine * vals,
                              minlength=coarse.n_blocks) / wb_coarse
    z_coarse = luxemburg_norm(coarse_vals, wb_coarse, phi)

    surpluses = np.array([
        delta_btilde(vals, fine, coarse, b, w, p, lam, alpha)
        for b in range(coarse.n_blocks)
    ])
    gradients = np.array([
        coarse_gradient_sq(vals, fine, coarse, b, w, alpha)
        for b in range(coarse.n_blocks)
    ])
    wtot = wb_coarse.sum()
    surplus_l1 = float(np.dot(wb_coarse, surpluses) / wtot)
    surplus_orlicz = luxemburg_norm(surpluses, wb_coarse, phi)

    N, d = family.lattice.N, family.lattice.d
    prefactor = float(phi.dual().inverse(N ** d / coarse.scale ** d))
    return {
        "level": k,
        "fine_scale": fine.scale,
        "coarse_scale": coarse.scale,
        "lam": lam,
        "p": p,
        "z_fine": z_fine,
        "z_coarse": z_coarse,
        "iterative_term": (1.0 + lam) * z_coarse,
        "surpluses": surpluses.tolist(),
        "surplus_l1": surplus_l1,
        "surplus_orlicz": surplus_orlicz,
        "dual_inverse_prefactor": prefactor,
        "surplus_via_l1": prefactor * surplus_l1,
        "gradient_sums": gradients.tolist(),
        "gradient_total": float(gradients.sum()),
    }


def _truncation_tail(field: np.ndarray, m_trunc: float, alpha: float) -> float:
    over = field > m_trunc
    return float((field[over] ** alpha).sum()) / field.size


def vna_statistic(times, snapshots, eps: float, alpha: float,
                  m_trunc: float | None = None) -> float:
    """Right-endpoint time quadrature of the mean absolute gap between the
    powered field and its powered window average.

    With m_trunc both powers go through the capped nonlinearity; each
    snapshot is then also checked against the uncapped value (never larger)
    and the over-threshold tail bound.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("empty sample grid")
    if times.size != len(snapshots):
        raise ValueError(f"{times.size} times for {len(snapshots)} snapshots")
    if times.size > 1:
        dt = np.diff(times)
        if (dt <= 0).any() or abs(dt.max() - dt.min()) > 1e-9 * dt.max():
            raise ValueError("sample times must be uniform and increasing")

    def gap(config, cap):
        eta = config.eta()
        bar = window_average_field(config, eps)
        if cap is None:
            a, b = eta ** alpha, bar ** alpha
        else:
            a = lipschitz_truncation(eta, cap, alpha)
            b = lipschitz_truncation(bar, cap, alpha)
        return float(np.abs(a - b).mean())

    total = 0.0
    for i in range(1, times.size):
        config = snapshots[i]
        err = gap(config, m_trunc)
        if m_trunc is not None:
            plain = gap(config, None)
            tail = (_truncation_tail(config.eta(), m_trunc, alpha)
                    + _truncation_tail(window_average_field(config, eps),
                                       m_trunc, alpha))
            scale = max(1.0, plain)
            assert err <= plain + 1e-12 * scale, (err, plain)
            assert abs(plain - err) <= tail + 1e-12 * scale, (plain, err, tail)
        total += err * (times[i] - times[i - 1])
    return total


def entropy_dissipation_statistic(config: Configuration, alpha: float = 2.0) -> float:
    """N^(2-d) times the sum over forward bonds of squared differences of
    the half-powered field.  Each site contributes one bond per axis, so on
    the two-site ring every pair is counted twice, once per wrap."""
    N, d = config.lattice.N, config.lattice.d
    root = config.eta_alpha(alpha / 2.0).reshape(config.lattice.shape)
    total = 0.0
    for axis in range(d):
        total += float(((root - np.roll(root, -1, axis=axis)) ** 2).sum())
    return N ** (2 - d) * total
