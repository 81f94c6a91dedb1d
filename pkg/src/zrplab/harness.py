"""Experiment orchestration: validated run configurations, counter-based
RNG fan-out over a worker pool, flat-file outputs (JSON-lines metrics,
binary snapshots, JSON summary and manifest), and SVG report plots.

Metrics are a pure function of (config, code version): identical configs
rerun to byte-identical metrics files. The manifest additionally records
wall-clock time and the output inventory.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .configurations import (
    Configuration,
    entropy,
    total_mass,
    window_average_field,
    write_snapshot,
)
from .equilibrium import ProductMeasure, parse_profile_expression
from .exact import (
    MAX_SECTOR_SITES,
    MAX_SECTOR_STATES,
    DensityVector,
    StateSpaceSector,
    build_generator,
    canonical_path_check,
    dirichlet_form,
    feynman_kac_eigen,
    pathwise_regularity_check,
    symmetrize_density,
)
from .kmc import simulate
from .lattice import MAX_DIMENSION, TorusLattice, build_partition_family
from .multiscale import (
    entropy_dissipation_statistic,
    lambda_schedule,
    telescope,
    vna_statistic,
)
from .orlicz import (
    certify_theta,
    consistency_check,
    construct_phi,
    envelope_young_pair,
    interpolation_bound,
)
from .pme import compare_hydrodynamic, solve_pme

KINDS = ("simulate", "hydro-compare", "exact-checks", "orlicz-audit",
         "multiscale-report", "pme-solve")
OBSERVABLE_NAMES = ("mass", "entropy", "max_count", "alpha_moment")

ENV_OUTPUT_DIR = "ZRPLAB_OUTPUT_DIR"
ENV_WORKERS = "ZRPLAB_WORKERS"


class ConfigError(ValueError):
    """Carries every violated precondition, not just the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


def _vint(lo, hi=None):
    def check(v):
        if not isinstance(v, int) or isinstance(v, bool):
            return "expected an integer"
        if v < lo or (hi is not None and v > hi):
            return f"must lie in [{lo}, {hi if hi is not None else 'inf'}]"
    return check


def _vfloat(lo=None, hi=None, strict_lo=False):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return "expected a number"
        v = float(v)
        if not math.isfinite(v):
            return "must be finite"
        if lo is not None and (v < lo or (strict_lo and v == lo)):
            return f"must be {'>' if strict_lo else '>='} {lo}"
        if hi is not None and v > hi:
            return f"must be <= {hi}"
    return check


def _vbool(v):
    if not isinstance(v, bool):
        return "expected a boolean"


def _vprofile(v):
    if not isinstance(v, str):
        return "expected a profile expression string"
    probe = np.array([0.0, 0.25, 0.5])
    for n_axes in (1, 2, 3):
        try:
            vals = np.asarray(parse_profile_expression(v)(*[probe] * n_axes),
                              dtype=float)
        except Exception as exc:
            err = exc
            continue
        if not np.isfinite(vals).all() or (vals < 0).any():
            return "must evaluate finite and nonnegative on [0,1)"
        return None
    return f"does not parse: {err}"


def _veps_list(v):
    if not isinstance(v, list) or not v:
        return "expected a nonempty list of window widths"
    for e in v:
        if isinstance(e, bool) or not isinstance(e, (int, float)):
            return "entries must be numbers"
        if not 0.0 < float(e) <= 0.5:
            return "entries must lie in (0, 0.5]"
    if len(set(map(float, v))) != len(v):
        return "entries must be distinct"


def _vobservables(v):
    if not isinstance(v, list) or not v:
        return "expected a nonempty list of observable names"
    bad = [x for x in v if x not in OBSERVABLE_NAMES]
    if bad:
        return f"unknown observables {bad}; known: {list(OBSERVABLE_NAMES)}"
    if len(set(v)) != len(v):
        return "names must be distinct"


def _optional(inner):
    return lambda v: None if v is None else inner(v)


_SHARED = {
    "seed": (0, _vint(0)),
    "output_dir": (None, _optional(lambda v: None if isinstance(v, str) and v
                                   else "expected a nonempty path string")),
    "workers": (1, _vint(1, 256)),
}

_SCHEMA = {
    "simulate": {
        "d": (1, _vint(1, MAX_DIMENSION)),
        "N": (32, _vint(2, 4096)),
        "alpha": (1.0, _vfloat(1.0)),
        "chi": (0.125, _vfloat(0.0, strict_lo=True)),
        "a": (0.5, _vfloat(0.0, strict_lo=True)),
        "profile": (None, _optional(_vprofile)),
        "t_fin": (0.01, _vfloat(0.0, strict_lo=True)),
        "grid_points": (11, _vint(2, 100_001)),
        "ensemble": (4, _vint(1, 100_000)),
        "observables": (list(OBSERVABLE_NAMES), _vobservables),
        "max_events": (2 ** 62, _vint(1)),
        "keep_snapshots": (False, _vbool),
    },
    "hydro-compare": {
        "d": (1, _vint(1, 2)),
        "N": (64, _vint(4, 4096)),
        "alpha": (1.0, _vfloat(1.0)),
        "chi": (0.125, _vfloat(0.0, strict_lo=True)),
        "profile": ("0.5 + 0.25*cos(2*pi*x)", _vprofile),
        "t_fin": (0.02, _vfloat(0.0, strict_lo=True)),
        "grid_points": (3, _vint(2, 10_001)),
        "ensemble": (4, _vint(1, 10_000)),
        "eps": (0.1, _vfloat(0.0, 0.5, strict_lo=True)),
        "M": (None, _optional(_vint(8, 8192))),
        "max_events": (2 ** 62, _vint(1)),
        "tolerance": (None, _optional(_vfloat(0.0, strict_lo=True))),
    },
    "exact-checks": {
        "d": (1, _vint(1, 2)),
        "N": (3, _vint(2, MAX_SECTOR_SITES)),
        "alpha": (2.0, _vfloat(1.0)),
        "chi": (0.25, _vfloat(0.0, strict_lo=True)),
        "n": (3, _vint(0, 64)),
        "n_densities": (20, _vint(1, 10_000)),
        "n_potentials": (5, _vint(0, 1000)),
    },
    "orlicz-audit": {
        "d": (1, _vint(1, 2)),
        "n_min": (2, _vint(2, 8192)),
        "n_max": (64, _vint(2, 8192)),
        "chi_exponent": (1.0, _vfloat(0.0, 2.0, strict_lo=True)),
        "delta": (1.0, _vfloat(0.0, 1.0, strict_lo=True)),
        "p": (None, _optional(_vfloat(1.0, strict_lo=True))),
        "samples": (50, _vint(0, 100_000)),
        "b": (2.0, _vfloat(0.0, strict_lo=True)),
        "interp_delta": (0.25, _vfloat(0.0, strict_lo=True)),
        "lattice_n": (16, _vint(2, 1024)),
        "family_chi": (2.0 ** -8, _vfloat(0.0, strict_lo=True)),
    },
    "multiscale-report": {
        "d": (1, _vint(1, 2)),
        "N": (64, _vint(4, 4096)),
        "alpha": (2.0, _vfloat(1.0)),
        "chi": (2.0 ** -6, _vfloat(0.0, strict_lo=True)),
        "a": (0.5, _vfloat(0.0, strict_lo=True)),
        "profile": (None, _optional(_vprofile)),
        "delta": (1.0, _vfloat(0.0, 1.0, strict_lo=True)),
        "eps": ([0.25, 0.1, 0.03125], _veps_list),
        "t_fin": (0.005, _vfloat(0.0, strict_lo=True)),
        "grid_points": (6, _vint(2, 10_001)),
        "ensemble": (4, _vint(1, 10_000)),
        "m_trunc": (None, _optional(_vfloat(0.0, strict_lo=True))),
        "max_events": (2 ** 62, _vint(1)),
    },
    "pme-solve": {
        "d": (1, _vint(1, 2)),
        "M": (128, _vint(8, 4096)),
        "alpha": (2.0, _vfloat(1.0)),
        "profile": ("1 + 0.5*cos(2*pi*x)", _vprofile),
        "t_fin": (0.05, _vfloat(0.0, strict_lo=True)),
        "snapshots": (5, _vint(1, 1000)),
        "save_fields": (True, _vbool),
    },
}


def _cross_validate(kind, p, errors):
    if kind == "exact-checks":
        sites = p["N"] ** p["d"]
        if sites > MAX_SECTOR_SITES:
            errors.append(f"N^d = {sites} sites exceeds the enumerable"
                          f" limit {MAX_SECTOR_SITES}")
        elif math.comb(p["n"] + sites - 1, sites - 1) > MAX_SECTOR_STATES:
            errors.append(f"sector with n={p['n']} on {sites} sites exceeds"
                          f" {MAX_SECTOR_STATES} states")
    if kind == "orlicz-audit":
        if p["n_max"] < p["n_min"]:
            errors.append("n_max: must be >= n_min")
        if p["p"] is not None and p["p"] > 1.0 + 1.0 / (2 * p["d"]):
            errors.append(f"p: must be <= 1 + 1/(2d) = {1 + 1 / (2 * p['d'])}")
    if kind in ("simulate", "multiscale-report") and p["d"] > 2 \
            and p["N"] ** p["d"] > 2 ** 20:
        errors.append(f"lattice with {p['N'] ** p['d']} sites is too large")


# ---------------------------------------------------------------------------
# Config object
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment description; hashable to a provenance id."""

    kind: str
    params: dict

    def __getitem__(self, key):
        return self.params[key]

    @property
    def seed(self) -> int:
        return self.params["seed"]

    @property
    def workers(self) -> int:
        return self.params["workers"]

    @property
    def output_dir(self) -> str:
        return self.params["output_dir"] or os.path.join("runs", self.kind)

    def canonical(self) -> str:
        """Identity of the experiment itself: where it runs and how many
        workers share the load do not change what is computed."""
        physics = {k: v for k, v in self.params.items()
                   if k not in ("output_dir", "workers")}
        return _dumps({"kind": self.kind, "params": physics,
                       "version": __version__})

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @classmethod
    def from_sources(cls, kind: str, path=None, overrides=None) -> "ExperimentConfig":
        """Document (if any) merged with overrides, strictly validated;
        every violated precondition is reported, not just the first."""
        if kind not in KINDS:
            raise ConfigError([f"unknown experiment kind '{kind}'"])
        document = {}
        if path is not None:
            raw = Path(path).read_text()
            document = yaml.safe_load(raw) or {}
            if not isinstance(document, dict):
                raise ConfigError([f"{path}: config must be a mapping"])
        merged = dict(document)
        merged.update(overrides or {})

        errors = []
        declared = merged.pop("kind", kind)
        if declared != kind:
            errors.append(f"kind: document says '{declared}',"
                          f" subcommand is '{kind}'")
        schema = dict(_SHARED)
        schema.update(_SCHEMA[kind])
        unknown = sorted(set(merged) - set(schema))
        errors.extend(f"unknown key '{k}' for kind '{kind}'" for k in unknown)

        params = {}
        for key, (default, check) in schema.items():
            value = merged.get(key, default)
            if isinstance(value, float) and value.is_integer() \
                    and isinstance(default, int) and not isinstance(default, bool):
                value = int(value)
            msg = check(value)
            if msg:
                errors.append(f"{key}: {msg}")
            params[key] = value
        if not errors:
            _cross_validate(kind, params, errors)
        if errors:
            raise ConfigError(errors)
        return cls(kind, params)


# ---------------------------------------------------------------------------
# Serialization helpers
# ---------------------------------------------------------------------------


def _coerce(obj):
    if isinstance(obj, dict):
        return {str(k): _coerce(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_coerce(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_coerce(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _dumps(obj) -> str:
    return json.dumps(_coerce(obj), sort_keys=True, separators=(",", ":"))


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _rng_stream(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator keyed by (master seed, stream index)."""
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


@dataclass
class RunManifest:
    """Provenance record for one run directory."""

    kind: str
    config_hash: str
    code_version: str
    stream_ids: list
    inventory: dict
    event_counts: list
    wall_clock_s: float
    partial: bool
    checks: dict | None
    output_dir: str

    @property
    def all_checks_pass(self) -> bool:
        return self.checks is None or all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "stream_ids": self.stream_ids,
            "inventory": self.inventory,
            "event_counts": self.event_counts,
            "wall_clock_s": self.wall_clock_s,
            "partial": self.partial,
            "checks": self.checks,
            "output_dir": self.output_dir,
        }


@dataclass
class _RunnerResult:
    records: list
    summary: dict
    checks: dict | None = None
    files: list = field(default_factory=list)
    streams: list = field(default_factory=list)
    events: list = field(default_factory=list)
    partial: bool = False


# ---------------------------------------------------------------------------
# Trajectory jobs (top-level so worker processes can import them)
# ---------------------------------------------------------------------------


def _observable_pairs(names, alpha):
    table = {
        "mass": total_mass,
        "entropy": entropy,
        "max_count": lambda c: float(c.counts.max()),
        "alpha_moment": lambda c: float(c.eta_alpha(alpha).mean()),
    }
    return [(name, table[name]) for name in names]


def _build_measure(p) -> ProductMeasure:
    lat = TorusLattice(p["d"], p["N"])
    if p.get("profile"):
        return ProductMeasure.from_profile(lat, p["alpha"], p["chi"],
                                           p["profile"])
    return ProductMeasure.constant(lat, p["alpha"], p["chi"], p["a"])


def _simulate_job(payload):
    p = payload["params"]
    keep = bool(payload.get("final_counts"))
    rng = _rng_stream(payload["seed"], payload["stream"])
    measure = _build_measure(p)
    grid = np.linspace(0.0, p["t_fin"], p["grid_points"])
    rec = simulate(measure.sample(rng), p["alpha"], p["t_fin"],
                   observables=_observable_pairs(p["observables"], p["alpha"]),
                   grid=grid, rng=rng, max_events=p["max_events"],
                   keep_snapshots=keep, stream_id=payload["stream"])
    out = {
        "record": "trajectory",
        "stream": payload["stream"],
        "events": rec.event_count,
        "truncated": rec.truncated,
        "absorbed": rec.absorbed,
        "times": rec.times,
        "series": {name: rec.values[i] for i, name in enumerate(rec.names)},
    }
    if keep and rec.snapshots:
        out["final_counts"] = rec.snapshots[-1].counts
    return out


def _snapshot_job(payload):
    """Trajectory with full snapshot retention, for comparison estimators."""
    p = payload["params"]
    rng = _rng_stream(payload["seed"], payload["stream"])
    measure = _build_measure(p)
    grid = np.linspace(0.0, p["t_fin"], p["grid_points"])
    return simulate(measure.sample(rng), p["alpha"], p["t_fin"], grid=grid,
                    rng=rng, max_events=p["max_events"], keep_snapshots=True,
                    stream_id=payload["stream"])


def _fan_out(config: ExperimentConfig, job, extra=None):
    n = config["ensemble"]
    payloads = [{"params": config.params, "seed": config.seed, "stream": i,
                 **(extra or {})} for i in range(n)]
    streams = [pl["stream"] for pl in payloads]
    if len(set(streams)) != len(streams):
        raise RuntimeError("duplicate RNG stream ids at fan-out")
    workers = min(config.workers, n)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return streams, list(pool.map(job, payloads))
    return streams, [job(pl) for pl in payloads]


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


def _run_simulate(config, outdir):
    keep = config["keep_snapshots"]
    streams, rows = _fan_out(config, _simulate_job,
                             {"final_counts": keep})
    files = []
    lat = TorusLattice(config["d"], config["N"])
    for row in rows:
        counts = row.pop("final_counts", None)
        if keep and counts is not None:
            path = outdir / "snapshots" / f"traj_{row['stream']:04d}.snap"
            path.parent.mkdir(parents=True, exist_ok=True)
            write_snapshot(path, Configuration(lat, config["chi"], counts),
                           meta={"t": config["t_fin"],
                                 "stream": row["stream"],
                                 "config_hash": config.config_hash()})
            files.extend([path, Path(str(path) + ".json")])
    finals = {name: [row["series"][name][-1] for row in rows]
              for name in config["observables"]}
    summary = {
        "final_mean": {k: float(np.mean(v)) for k, v in finals.items()},
        "final_stderr": {k: (float(np.std(v, ddof=1) / math.sqrt(len(v)))
                             if len(v) > 1 else 0.0) for k, v in finals.items()},
        "total_events": int(sum(r["events"] for r in rows)),
        "truncated_trajectories": int(sum(r["truncated"] for r in rows)),
    }
    return _RunnerResult(rows, summary, files=files, streams=streams,
                         events=[r["events"] for r in rows],
                         partial=any(r["truncated"] for r in rows))


def _run_hydro_compare(config, outdir):
    streams, recs = _fan_out(config, _snapshot_job)
    profile = config["profile"]
    comparison = compare_hydrodynamic(recs, parse_profile_expression(profile),
                                      config["eps"], config["alpha"],
                                      M=config["M"])
    rows = []
    for rec, dist in zip(recs, comparison.distances):
        rows.append({
            "record": "trajectory",
            "stream": rec.stream_id,
            "events": rec.event_count,
            "truncated": rec.truncated,
            "times": rec.times,
            "distance": dist,
            "window_profile_final": window_average_field(rec.snapshots[-1],
                                                         config["eps"]),
        })
    lat = recs[0].snapshots[0].lattice
    coords = np.array([lat.site_coords(i) for i in range(lat.n_sites)],
                      dtype=float) / lat.N
    M = config["M"] or lat.N
    ref = solve_pme(parse_profile_expression(profile), config["t_fin"],
                    config["alpha"], M=M, d=lat.d)
    rows.append({
        "record": "reference",
        "positions": coords[:, 0] if lat.d == 1 else coords,
        "pme_final": ref.final.at_positions(coords),
        "pme_mass_drift": ref.mass_drift,
    })
    summary = {
        "times": comparison.times,
        "mean_distance": comparison.mean,
        "stderr_distance": comparison.stderr,
        "final_mean_distance": float(comparison.mean[-1]),
        "pme_mass_drift": ref.mass_drift,
    }
    checks = None
    if config["tolerance"] is not None:
        checks = {"mean_distance_within_tolerance":
                  bool(comparison.mean[-1] <= config["tolerance"])}
    return _RunnerResult(rows, summary, checks=checks, streams=streams,
                         events=[r.event_count for r in recs],
                         partial=any(r.truncated for r in recs))


def _run_exact_checks(config, outdir):
    p = config.params
    sector = StateSpaceSector(TorusLattice(p["d"], p["N"]), p["chi"],
                              p["alpha"], n=p["n"])
    gen = build_generator(sector)
    rows = []
    rows.append({"record": "check", "name": "reversibility",
                 "value": gen.reversibility_residual,
                 "pass": gen.reversibility_residual < 1e-12})
    rows.append({"record": "check", "name": "row_sums",
                 "value": gen.row_sum_residual,
                 "pass": gen.row_sum_residual < 1e-9})

    rng = _rng_stream(config.seed, 0)
    n_sites = sector.lattice.n_sites
    canon_bad = 0
    site_margin = math.inf
    block_margin = math.inf
    for _ in range(p["n_densities"]):
        f = symmetrize_density(sector, DensityVector.random(sector, rng))
        dirichlet_form(sector, f, gen)  # raises if the two routes disagree
        for y in range(1, n_sites):
            _, _, ok = canonical_path_check(sector, f, 0, y)
            canon_bad += not ok
        site = pathwise_regularity_check(sector, f, sites=(0, 1))
        site_margin = min(site_margin, site["margin"])
        block = pathwise_regularity_check(
            sector, f, boxes=([0], [min(1, n_sites - 1)]))
        block_margin = min(block_margin, block["margin"])
    rows.append({"record": "check", "name": "canonical_paths",
                 "value": canon_bad, "pass": canon_bad == 0})
    rows.append({"record": "check", "name": "pathwise_site",
                 "value": site_margin, "pass": site_margin >= 0.0})
    rows.append({"record": "check", "name": "pathwise_block",
                 "value": block_margin, "pass": block_margin >= 0.0})

    worst_gap = 0.0
    for j in range(p["n_potentials"]):
        potential = rng.uniform(-1.0, 1.0, sector.size)
        report = feynman_kac_eigen(sector, gen, potential, seed=j)
        worst_gap = max(worst_gap, abs(report.gap))
    rows.append({"record": "check", "name": "feynman_kac_gap",
                 "value": worst_gap, "pass": worst_gap <= 1e-8})

    checks = {row["name"]: row["pass"] for row in rows}
    summary = {
        "sector_states": sector.size,
        "densities": p["n_densities"],
        "worst": {row["name"]: row["value"] for row in rows},
        "all_pass": all(checks.values()),
    }
    return _RunnerResult(rows, summary, checks=checks)


def _run_orlicz_audit(config, outdir):
    p = config.params
    d = p["d"]
    pexp = p["p"] if p["p"] is not None else 1.0 + 1.0 / (2 * d)
    seq = [(N, float(N) ** -p["chi_exponent"])
           for N in range(p["n_min"], p["n_max"] + 1)]
    phi = construct_phi(seq, delta=p["delta"], p=pexp, d=d)
    meta = phi.meta
    rows = [{"record": "certificate", "name": name, "pass": bool(meta[name]),
             "value": meta.get(detail)}
            for name, detail in (("cert_growth", "growth_sup"),
                                 ("cert_anchoring", None),
                                 ("cert_curvature", "curvature_worst"),
                                 ("transfer_ok", "transfer_constant"))]
    for row in meta["anchoring"]:
        rows.append({"record": "anchoring", **row})

    u = phi.grid[:: max(1, phi.grid.size // 512)]
    psi = phi.dual()
    rows.append({"record": "curve", "u": u, "phi": np.asarray(phi(u)),
                 "psi": np.asarray(psi(u))})

    fam = build_partition_family(TorusLattice(d, p["lattice_n"]),
                                 p["family_chi"], p["delta"])
    certify_theta(phi, pexp)
    rng = _rng_stream(config.seed, 0)
    fine = fam.partitions[0]
    cons_bad = interp_bad = 0
    # the rebuilt family function is linear over the probe grid, so the
    # interpolation lemma runs on the strict raw envelope instead
    env, _ = envelope_young_pair(seq, delta=p["delta"], d=d)
    z, checker = interpolation_bound(env, b=p["b"], delta=p["interp_delta"])
    for _ in range(p["samples"]):
        k = int(rng.integers(1, fam.K)) if fam.K > 1 else 0
        h = rng.gamma(2.0, 2.0, fine.n_blocks)
        lhs, rhs, ok = consistency_check(h, fine, fam.partitions[k],
                                         fam.weighting, phi, pexp)
        cons_bad += not ok
        u_field = rng.gamma(2.0, p["b"] / 2.0, 64)
        u_field *= min(1.0, p["b"] / max(u_field.mean(), 1e-12))
        _, _, ok2 = checker(u_field)
        interp_bad += not ok2
    rows.append({"record": "check", "name": "consistency",
                 "value": cons_bad, "pass": cons_bad == 0})
    rows.append({"record": "check", "name": "interpolation",
                 "value": interp_bad, "pass": interp_bad == 0,
                 "constant_z": z})

    doc_path = outdir / "young_function.json"
    doc_path.write_text(phi.to_document())
    checks = {
        "growth": bool(meta["cert_growth"]),
        "anchoring": bool(meta["cert_anchoring"]),
        "curvature": bool(meta["cert_curvature"]),
        "transfer": bool(meta["transfer_ok"]),
        "consistency": cons_bad == 0,
        "interpolation": interp_bad == 0,
    }
    summary = {
        "p": pexp,
        "entries": len(seq),
        "growth_sup": meta["growth_sup"],
        "growth_bound": meta["growth_bound"],
        "curvature_worst": meta["curvature_worst"],
        "samples": p["samples"],
        "all_pass": all(checks.values()),
    }
    return _RunnerResult(rows, summary, checks=checks, files=[doc_path])


def _run_multiscale_report(config, outdir):
    p = config.params
    streams, recs = _fan_out(config, _snapshot_job)
    eps_list = sorted((float(e) for e in p["eps"]), reverse=True)
    rows = []
    vna = {e: [] for e in eps_list}
    for rec in recs:
        values = {}
        for e in eps_list:
            values[e] = vna_statistic(rec.times, rec.snapshots, e, p["alpha"],
                                      m_trunc=p["m_trunc"])
            vna[e].append(values[e])
        rows.append({
            "record": "trajectory",
            "stream": rec.stream_id,
            "events": rec.event_count,
            "truncated": rec.truncated,
            "vna": {f"{e:g}": v for e, v in values.items()},
            "entropy_dissipation": entropy_dissipation_statistic(
                rec.snapshots[-1], p["alpha"]),
        })

    lat = TorusLattice(p["d"], p["N"])
    family = build_partition_family(lat, p["chi"], p["delta"])
    schedule = lambda_schedule(family)
    phi = construct_phi([(p["N"], p["chi"])], delta=p["delta"],
                        p=1.0 + 1.0 / (2 * p["d"]), d=p["d"])
    report = telescope(recs[0].snapshots[-1], family, phi, p["alpha"])
    rows.append({"record": "telescope", "scales": family.scales,
                 **report.to_dict()})
    rows.append({"record": "schedule", **schedule})

    means = {f"{e:g}": float(np.mean(vna[e])) for e in eps_list}
    ordered = [means[f"{e:g}"] for e in eps_list]
    checks = {"telescope_identity": report.residual < 1e-10,
              "vna_decreasing": ordered[-1] < ordered[0]}
    summary = {
        "eps": eps_list,
        "vna_mean": means,
        "vna_ratio_extremes": (ordered[0] / ordered[-1]
                               if ordered[-1] > 0 else math.inf),
        "telescope_residual": report.residual,
        "lambda_sum": schedule["sum"],
        "all_pass": all(checks.values()),
    }
    return _RunnerResult(rows, summary, checks=checks, streams=streams,
                         events=[r.event_count for r in recs],
                         partial=any(r.truncated for r in recs))


def _run_pme_solve(config, outdir):
    p = config.params
    snap_times = np.linspace(p["t_fin"] / p["snapshots"], p["t_fin"],
                             p["snapshots"])
    sol = solve_pme(parse_profile_expression(p["profile"]), p["t_fin"],
                    p["alpha"], M=p["M"], d=p["d"], snap_times=snap_times)
    rows = []
    files = []
    for t, fld in zip(sol.times, sol.fields):
        rows.append({"record": "snapshot", "t": t, "mass": fld.mass(),
                     "min": float(fld.values.min()),
                     "max": float(fld.values.max()),
                     "support_fraction": float((fld.values > 1e-12).mean()),
                     "values": fld.values if p["d"] == 1 else None})
        if p["save_fields"]:
            path = outdir / "fields" / f"t_{t:.6f}.snap"
            path.parent.mkdir(parents=True, exist_ok=True)
            fld.save(path, meta={"t": float(t),
                                 "config_hash": config.config_hash()})
            files.extend([path, Path(str(path) + ".json")])
    summary = {"steps": sol.steps, "mass_drift": sol.mass_drift,
               "times": snap_times}
    return _RunnerResult(rows, summary, files=files)


_RUNNERS = {
    "simulate": _run_simulate,
    "hydro-compare": _run_hydro_compare,
    "exact-checks": _run_exact_checks,
    "orlicz-audit": _run_orlicz_audit,
    "multiscale-report": _run_multiscale_report,
    "pme-solve": _run_pme_solve,
}


# ---------------------------------------------------------------------------
# Run driver
# ---------------------------------------------------------------------------


def run(config: ExperimentConfig) -> RunManifest:
    """Execute the experiment, write metrics/summary/manifest under the
    output directory, and return the manifest."""
    started = time.perf_counter()
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    result = _RUNNERS[config.kind](config, outdir)

    header = {"record": "header", "kind": config.kind,
              "config_hash": config.config_hash(),
              "code_version": __version__,
              "params": {k: v for k, v in config.params.items()
                         if k not in ("output_dir", "workers")}}
    metrics_path = outdir / "metrics.jsonl"
    with open(metrics_path, "w") as fh:
        for record in [header, *result.records]:
            fh.write(_dumps(record) + "\n")

    summary = dict(result.summary)
    summary.update({"kind": config.kind, "config_hash": config.config_hash(),
                    "code_version": __version__, "checks": result.checks,
                    "metrics_sha256": _sha256_file(metrics_path)})
    summary_path = outdir / "summary.json"
    summary_path.write_text(json.dumps(_coerce(summary), sort_keys=True,
                                       indent=2) + "\n")

    inventory = {}
    for path in [metrics_path, summary_path, *result.files]:
        rel = str(Path(path).relative_to(outdir))
        inventory[rel] = {"bytes": Path(path).stat().st_size,
                          "sha256": _sha256_file(Path(path))}
    manifest = RunManifest(
        kind=config.kind, config_hash=config.config_hash(),
        code_version=__version__, stream_ids=result.streams,
        inventory=inventory, event_counts=result.events,
        wall_clock_s=round(time.perf_counter() - started, 3),
        partial=result.partial, checks=result.checks,
        output_dir=str(outdir))
    (outdir / "manifest.json").write_text(
        json.dumps(_coerce(manifest.to_dict()), sort_keys=True, indent=2)
        + "\n")
    return manifest


# ---------------------------------------------------------------------------
# Plots
# ---------------------------------------------------------------------------


def _load_run(source):
    outdir = Path(source)
    if outdir.is_file():
        outdir = outdir.parent
    manifest = json.loads((outdir / "manifest.json").read_text())
    records = []
    with open(outdir / "metrics.jsonl") as fh:
        for line in fh:
            records.append(json.loads(line))
    header, records = records[0], records[1:]
    return outdir, manifest, header, records


def _series(records, kind, name, record_type=None):
    rows = [r for r in records
            if record_type is None or r.get("record") == record_type]
    missing = [r for r in rows if name not in r]
    if not rows or missing:
        raise KeyError(f"metrics for kind '{kind}' lack series '{name}'")
    return [r[name] for r in rows]


def emit_plots(source) -> list:
    """Render the run's SVG report plots from its metrics; returns the
    written paths. Purely derived from the metrics files."""
    outdir, manifest, header, records = _load_run(source)
    if not records:
        print(f"{outdir}: no metric records; nothing to plot")
        return []
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = manifest["config_hash"]

    kind = manifest["kind"]
    paths = _PLOTTERS[kind](outdir, kind, records, plt)
    plt.close("all")
    return paths


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def _plot_simulate(outdir, kind, records, plt):
    times = _series(records, kind, "times", "trajectory")
    series = _series(records, kind, "series", "trajectory")
    names = sorted(series[0])
    fig, axes = plt.subplots(len(names), 1, figsize=(7, 2.2 * len(names)),
                             sharex=True, squeeze=False)
    for ax, name in zip(axes[:, 0], names):
        stack = np.array([s[name] for s in series])
        for row in stack:
            ax.plot(times[0], row, color="steelblue", alpha=0.3, lw=0.8)
        ax.plot(times[0], stack.mean(axis=0), color="crimson", lw=1.6,
                label="ensemble mean")
        ax.set_ylabel(name)
        ax.legend(loc="best", fontsize=8)
    axes[-1, 0].set_xlabel("t")
    fig.tight_layout()
    return [_save(fig, outdir / "observables.svg")]


def _plot_hydro(outdir, kind, records, plt):
    traj = [r for r in records if r.get("record") == "trajectory"]
    ref = [r for r in records if r.get("record") == "reference"]
    if not ref:
        raise KeyError(f"metrics for kind '{kind}' lack series 'reference'")
    times = np.array(_series(traj, kind, "times", "trajectory")[0])
    dist = np.array(_series(traj, kind, "distance", "trajectory"))
    mean = dist.mean(axis=0)
    err = (dist.std(axis=0, ddof=1) / math.sqrt(dist.shape[0])
           if dist.shape[0] > 1 else np.zeros_like(mean))
    fig1, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(times, mean, yerr=err, marker="o", capsize=3,
                color="crimson")
    ax.set_xlabel("t")
    ax.set_ylabel("mean L1 distance")
    ax.set_title("smoothed trajectories vs macroscopic solution")
    fig1.tight_layout()
    out = [_save(fig1, outdir / "hydro_distance.svg")]

    positions = np.array(ref[0]["positions"])
    if positions.ndim == 1:
        profs = np.array(_series(traj, kind, "window_profile_final",
                                 "trajectory"))
        fig2, ax2 = plt.subplots(figsize=(6, 4))
        for row in profs:
            ax2.plot(positions, row, color="steelblue", alpha=0.3, lw=0.8)
        ax2.plot(positions, profs.mean(axis=0), color="steelblue", lw=1.8,
                 label="ensemble mean (windowed)")
        ax2.plot(positions, ref[0]["pme_final"], color="black", ls="--",
                 lw=1.6, label="grid solution")
        ax2.set_xlabel("x")
        ax2.set_ylabel("density")
        ax2.legend(loc="best", fontsize=8)
        fig2.tight_layout()
        out.append(_save(fig2, outdir / "hydro_profiles.svg"))
    return out


def _plot_exact(outdir, kind, records, plt):
    checks = [r for r in records if r.get("record") == "check"]
    names = _series(checks, kind, "name", "check")
    values = [float(v) for v in _series(checks, kind, "value", "check")]
    passed = _series(checks, kind, "pass", "check")
    fig, ax = plt.subplots(figsize=(6, 0.6 * len(names) + 1.5))
    colors = ["seagreen" if ok else "firebrick" for ok in passed]
    ax.barh(range(len(names)), [max(v, 1e-18) for v in values], color=colors)
    ax.set_yticks(range(len(names)), names)
    ax.set_xscale("log")
    ax.set_xlabel("residual / worst value")
    fig.tight_layout()
    return [_save(fig, outdir / "exact_margins.svg")]


def _plot_orlicz(outdir, kind, records, plt):
    curves = [r for r in records if r.get("record") == "curve"]
    anchors = [r for r in records if r.get("record") == "anchoring"]
    if not curves:
        raise KeyError(f"metrics for kind '{kind}' lack series 'curve'")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    u = np.array(curves[0]["u"])
    ax1.loglog(u, np.maximum(curves[0]["phi"], 1e-300), label="Phi")
    ax1.loglog(u, np.maximum(curves[0]["psi"], 1e-300), label="Psi (dual)")
    ax1.set_xlabel("u")
    ax1.legend()
    ax1.set_title("Young pair")
    if anchors:
        ns = [row["N"] for row in anchors]
        margin = [row["rhs"] / max(row["lhs"], 1e-300) for row in anchors]
        ax2.semilogy(ns, margin, marker=".")
        ax2.axhline(1.0, color="black", lw=0.8, ls="--")
        ax2.set_xlabel("N")
        ax2.set_ylabel("anchoring margin rhs/lhs")
    fig.tight_layout()
    return [_save(fig, outdir / "young_certificates.svg")]


def _plot_multiscale(outdir, kind, records, plt):
    traj = [r for r in records if r.get("record") == "trajectory"]
    vna = _series(traj, kind, "vna", "trajectory")
    eps = sorted((float(e) for e in vna[0]), reverse=True)
    fig1, ax = plt.subplots(figsize=(6, 4))
    for row in vna:
        ax.plot(eps, [row[f"{e:g}"] for e in eps], color="steelblue",
                alpha=0.35, lw=0.8, marker=".")
    means = [float(np.mean([row[f"{e:g}"] for row in vna])) for e in eps]
    ax.plot(eps, means, color="crimson", lw=1.8, marker="o",
            label="ensemble mean")
    ax.set_xlabel("window width")
    ax.set_ylabel("time-integrated nonlinearity gap")
    ax.legend()
    fig1.tight_layout()
    out = [_save(fig1, outdir / "vna_vs_eps.svg")]

    tele = [r for r in records if r.get("record") == "telescope"]
    if tele:
        z = tele[0]["z"]
        fig2, ax2 = plt.subplots(figsize=(6, 4))
        ax2.plot(range(1, len(z) + 1), z, marker="o")
        ax2.set_xlabel("ladder level k")
        ax2.set_ylabel("Z_k")
        ax2.set_title("telescope level norms")
        fig2.tight_layout()
        out.append(_save(fig2, outdir / "telescope_levels.svg"))
    return out


def _plot_pme(outdir, kind, records, plt):
    snaps = [r for r in records if r.get("record") == "snapshot"]
    fig, ax = plt.subplots(figsize=(6, 4))
    drew = False
    for row in snaps:
        if row.get("values") is not None:
            vals = np.asarray(row["values"])
            ax.plot(np.arange(vals.size) / vals.size, vals,
                    label=f"t={row['t']:g}")
            drew = True
    if not drew:
        ts = [row["t"] for row in snaps]
        ax.plot(ts, [row["mass"] for row in snaps], marker="o")
        ax.set_xlabel("t")
        ax.set_ylabel("mass")
    else:
        ax.set_xlabel("x")
        ax.set_ylabel("u")
        ax.legend(fontsize=8)
    fig.tight_layout()
    return [_save(fig, outdir / "pme_profiles.svg")]


_PLOTTERS = {
    "simulate": _plot_simulate,
    "hydro-compare": _plot_hydro,
    "exact-checks": _plot_exact,
    "orlicz-audit": _plot_orlicz,
    "multiscale-report": _plot_multiscale,
    "pme-solve": _plot_pme,
}
