"""Product equilibrium measures for the particle system.

A site holds k particles with weight phi^k / (k!)^alpha, phi = (a/chi)^alpha,
so the physical occupation is eta = chi*k and the level a is the mean-field
density scale.  Everything is computed in the log domain: phi blows up
quickly as chi -> 0.

The key exact structure is the integration-by-parts identity
    E[F(eta) * eta(x)^alpha] = a^alpha * E[F(eta + chi at x)],
whose F == 1 case is the single-site moment identity used as a hard oracle.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass

import numpy as np

from .configurations import Configuration
from .lattice import TorusLattice

TAIL_TOL = 1e-15
ALIAS_THRESHOLD = 64  # marginals with more support than this sample via alias tables


class DegenerateVarianceError(ValueError):
    """Raised when a Monte Carlo identity check has zero sample variance
    but a nonzero mean discrepancy."""


def _log_weights(alpha: float, log_phi: float, K: int) -> np.ndarray:
    k = np.arange(K + 1)
    return k * log_phi - alpha * np.array([math.lgamma(i + 1.0) for i in k])


def _support_cap(alpha: float, log_phi: float) -> int:
    """Smallest K with successor ratio phi/(K+1)^alpha < 1/2, then extended
    until the geometric tail bound drops below TAIL_TOL relatively."""
    # ratio(k) = phi / (k+1)^alpha < 1/2  <=>  log_phi - alpha*log(k+1) < -log 2
    K = 0
    while log_phi - alpha * math.log(K + 1.0) >= -math.log(2.0):
        K += 1
        if K > 10_000_000:
            raise OverflowError("marginal support cap exceeded 1e7 states")
    lw = _log_weights(alpha, log_phi, K + 1)
    peak = lw.max()
    log_partial = peak + math.log(np.exp(lw - peak).sum())
    while True:
        log_next = (K + 1) * log_phi - alpha * math.lgamma(K + 2.0)
        ratio = math.exp(log_phi - alpha * math.log(K + 2.0))
        assert ratio < 0.5
        log_tail_bound = log_next - math.log1p(-ratio)
        if log_tail_bound < math.log(TAIL_TOL) + log_partial:
            return K
        K += 1


def log_normalizer(alpha: float, phi: float) -> float:
    """log sum_k phi^k / (k!)^alpha with a certified truncation tail."""
    if alpha < 1:
        raise ValueError(f"need alpha >= 1, got {alpha}")
    if not (phi > 0 and math.isfinite(phi)):
        raise ValueError(f"need finite phi > 0, got {phi}")
    log_phi = math.log(phi)
    K = _support_cap(alpha, log_phi)
    lw = _log_weights(alpha, log_phi, K)
    peak = lw.max()
    return float(peak + math.log(np.exp(lw - peak).sum()))


def _build_alias(p: np.ndarray):
    """Vose alias table for a discrete distribution."""
    K = len(p)
    prob = np.zeros(K)
    alias = np.zeros(K, dtype=np.int64)
    scaled = p * K
    small = [i for i in range(K) if scaled[i] < 1.0]
    large = [i for i in range(K) if scaled[i] >= 1.0]
    scaled = scaled.copy()
    while small and large:
        s = small.pop()
        l = large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = scaled[l] + scaled[s] - 1.0
        (small if scaled[l] < 1.0 else large).append(l)
    for i in large + small:
        prob[i] = 1.0
        alias[i] = i
    return prob, alias


@dataclass
class SiteMarginal:
    """One-site occupation law with weights phi^k/(k!)^alpha on a certified
    finite support [0, K_max]."""

    alpha: float
    chi: float
    a: float

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError(f"need alpha >= 1, got {self.alpha}")
        if not (self.chi > 0 and self.a > 0):
            raise ValueError("chi and level a must be positive")
        self.log_phi = self.alpha * (math.log(self.a) - math.log(self.chi))
        self.K_max = _support_cap(self.alpha, self.log_phi)
        lw = _log_weights(self.alpha, self.log_phi, self.K_max)
        peak = lw.max()
        self.log_Z = float(peak + math.log(np.exp(lw - peak).sum()))
        self.probs = np.exp(lw - self.log_Z)
        assert abs(self.probs.sum() - 1.0) < 1e-12
        self._cdf = np.cumsum(self.probs)
        self._alias = _build_alias(self.probs) if self.K_max > ALIAS_THRESHOLD else None

    @property
    def phi(self) -> float:
        return math.exp(self.log_phi)

    def mean_count(self) -> float:
        return float(self.probs @ np.arange(self.K_max + 1))

    def mean_eta(self) -> float:
        return self.chi * self.mean_count()

    def exact_alpha_moment(self) -> float:
        """sum_k p(k) (chi k)^alpha; equals a^alpha identically."""
        k = np.arange(self.K_max + 1, dtype=float)
        return float(self.probs @ (self.chi * k) ** self.alpha)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self._alias is not None:
            prob, alias = self._alias
            i = rng.integers(0, self.K_max + 1, size=size)
            u = rng.random(size=size)
            return np.where(u < prob[i], i, alias[i]).astype(np.int64)
        u = rng.random(size=size)
        return np.searchsorted(self._cdf, u, side="right").astype(np.int64)


# --- profile expressions -------------------------------------------------

_ALLOWED_CALLS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_ALLOWED_NAMES = {"pi": math.pi, "e": math.e}
_COORD_NAMES = ("x", "y", "z")


def parse_profile_expression(expr: str):
    """Compile a closed-form density profile over macroscopic coordinates.

    Grammar: +, -, *, /, ^ (or **), sin, cos, exp, numeric constants, pi, e,
    and coordinate names x, y, z.  Returns f(coords...) -> array.
    """
    tree = ast.parse(expr.replace("^", "**"), mode="eval")

    def check(node):
        if isinstance(node, ast.Expression):
            check(node.body)
        elif isinstance(node, ast.BinOp) and isinstance(
                node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)):
            check(node.left)
            check(node.right)
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
            check(node.operand)
        elif isinstance(node, ast.Call):
            if not (isinstance(node.func, ast.Name) and node.func.id in _ALLOWED_CALLS):
                raise ValueError(f"profile expression: call to disallowed function "
                                 f"in {expr!r}")
            if node.keywords or len(node.args) != 1:
                raise ValueError("profile functions take exactly one argument")
            check(node.args[0])
        elif isinstance(node, ast.Name):
            if node.id not in _ALLOWED_NAMES and node.id not in _COORD_NAMES:
                raise ValueError(f"profile expression: unknown name {node.id!r}")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)):
                raise ValueError("profile constants must be numeric")
        else:
            raise ValueError(f"profile expression: disallowed syntax "
                             f"{type(node).__name__} in {expr!r}")

    check(tree)
    code = compile(tree, "<profile>", "eval")
    scope = dict(_ALLOWED_CALLS)
    scope.update(_ALLOWED_NAMES)

    def evaluate(*coords):
        local = dict(zip(_COORD_NAMES, coords))
        return eval(code, {"__builtins__": {}}, {**scope, **local})

    return evaluate


@dataclass
class ProductMeasure:
    """Independent per-site occupation laws, either at a constant level or
    following a macroscopic profile rho evaluated at x/N."""

    lattice: TorusLattice
    alpha: float
    chi: float
    levels: np.ndarray  # per-site level a(x) > 0

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=float).reshape(-1)
        if self.levels.shape != (self.lattice.n_sites,):
            raise ValueError("levels array does not match the lattice")
        if not (self.levels > 0).all():
            raise ValueError("profile must be strictly positive on the lattice")

    @staticmethod
    def constant(lattice: TorusLattice, alpha: float, chi: float, a: float) -> "ProductMeasure":
        return ProductMeasure(lattice, alpha, chi, np.full(lattice.n_sites, float(a)))

    @staticmethod
    def from_profile(lattice: TorusLattice, alpha: float, chi: float, profile) -> "ProductMeasure":
        """profile: callable on macroscopic coordinates (arrays), or an
        expression string over x, y, z."""
        if isinstance(profile, str):
            profile = parse_profile_expression(profile)
        coords = np.indices(lattice.shape).reshape(lattice.d, -1) / lattice.N
        levels = np.broadcast_to(np.asarray(profile(*coords), dtype=float),
                                 (lattice.n_sites,))
        return ProductMeasure(lattice, alpha, chi, levels.copy())

    @property
    def is_constant(self) -> bool:
        return bool((self.levels == self.levels[0]).all())

    def marginal(self, site_index: int) -> SiteMarginal:
        return SiteMarginal(self.alpha, self.chi, float(self.levels[site_index]))

    def sample(self, rng: np.random.Generator) -> Configuration:
        counts = np.empty(self.lattice.n_sites, dtype=np.int64)
        # group sites sharing a level so constant measures build one table
        uniq, inverse = np.unique(self.levels, return_inverse=True)
        for g, a in enumerate(uniq):
            sel = np.nonzero(inverse == g)[0]
            marg = SiteMarginal(self.alpha, self.chi, float(a))
            counts[sel] = marg.sample(rng, sel.size)
        return Configuration(self.lattice, self.chi, counts)

    def sample_counts_matrix(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """(n, n_sites) occupation counts; rows are i.i.d. configurations."""
        counts = np.empty((n, self.lattice.n_sites), dtype=np.int64)
        uniq, inverse = np.unique(self.levels, return_inverse=True)
        for g, a in enumerate(uniq):
            sel = np.nonzero(inverse == g)[0]
            marg = SiteMarginal(self.alpha, self.chi, float(a))
            counts[:, sel] = marg.sample(rng, (n, sel.size))
        return counts


def ibp_residual(measure: ProductMeasure, F, x, M: int,
                 rng: np.random.Generator) -> float:
    """Studentized Monte Carlo residual of the shift identity at site x:

        E[F(eta) eta(x)^alpha] - a^alpha E[F(eta + chi at x)]

    F must map a batch of eta fields, shape (M, n_sites), to shape (M,).
    The two expectations share samples (paired design), and the residual is
    the paired mean over its standard error; |residual| <= 4 is the pass
    band for a correct sampler.
    """
    if M < 10_000:
        raise ValueError("need at least 1e4 samples for the studentized check")
    if not measure.is_constant:
        raise ValueError("the shift identity check needs a constant level")
    a = float(measure.levels[0])
    xi = measure.lattice.site_index(x)
    counts = measure.sample_counts_matrix(rng, M)
    eta = measure.chi * counts.astype(float)
    term1 = np.asarray(F(eta), dtype=float) * eta[:, xi] ** measure.alpha
    eta[:, xi] += measure.chi
    term2 = a ** measure.alpha * np.asarray(F(eta), dtype=float)
    w = term1 - term2
    if (w == w[0]).all():
        # every paired sample saw the same discrepancy: no variance to
        # studentize against (e.g. constant F on an almost-surely-empty
        # marginal)
        if w[0] == 0.0:
            return 0.0
        raise DegenerateVarianceError(
            f"zero variance with constant discrepancy {w[0]}")
    mean = float(w.mean())
    se = float(w.std(ddof=1)) / math.sqrt(M)
    return mean / se
