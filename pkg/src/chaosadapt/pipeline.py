"""Configuration-driven runs of the elliptic, random-coefficient and
geometric experiments.

Every stage writes its artifact into the output directory and reuses it on
the next run when the inputs that produced it are unchanged. A
``manifest.json`` records the configuration hash, seed, library versions and
the sha256 of each output file; it contains no timestamps, so two runs with
the same configuration produce byte-identical directories.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .adaptation import (
    AdaptedExpansion,
    IsometryField,
    eta_kernel,
    gaussian_adaptation,
    project,
    pure_retained,
    quadratic_adaptation,
    save_isometry_field,
    save_kernel_eigenpairs,
    total_retained,
)
from .chaos import (
    MAX_ORDER,
    ChaosExpansion,
    build_index_set,
    load_expansion,
    multi_index_label,
    save_expansion,
)
from .elliptic import EllipticProblem, SourceSpec, assemble_source, solve_ensemble, solve_pressure, velocity
from .estimation import SampleStore, density_distance, fit_coefficients, kde, save_densities
from .geometric import coefficient_table, compare_pdfs
from .random_coeffs import expected_adapted_coefficients, regroup, sample_adapted
from .random_field import KLBasis, RandomFieldSpec, SpatialGrid, kl_decompose, sample_transmissivity, save_kl

logger = logging.getLogger(__name__)

EXPERIMENTS = ("elliptic", "random-coeffs", "geometric")
SCHEMES = ("gaussian", "quadratic")

# independent streams derived from the run seed
_STREAMS = {"ensemble": 1, "pdf": 2, "velocity": 3, "zeta": 4, "geometric": 5}


class ConfigError(ValueError):
    """Invalid pipeline configuration; ``problems`` lists every violation."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


class StageError(RuntimeError):
    """A module error raised inside a named pipeline stage."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")


@dataclass
class PipelineConfig:
    """All run parameters. The defaults are the full-scale setting:
    40 x 40 grid, 97% KL energy (20 modes), third-order chaos fitted from
    ``10^5`` solves, 1-D Gaussian and 5-D quadratic adaptations of order 2.
    """

    experiment: str = "elliptic"
    seed: int = 0
    out: str = "out"
    threads: int = 1
    # grid and random field
    extent: list = field(default_factory=lambda: [[0.0, 400.0], [0.0, 400.0]])
    cells: list = field(default_factory=lambda: [40, 40])
    variance: float = 0.5
    lengths: list = field(default_factory=lambda: [80.0, 80.0])
    field_mean: float = 0.0
    energy_fraction: float = 0.97
    n_modes: int | None = None
    # source term
    source_amplitude: float = 0.5
    source: list = field(default_factory=lambda: [0.0, 0.0])
    sink: list = field(default_factory=lambda: [400.0, 400.0])
    source_widths: list = field(default_factory=lambda: [20.0, 20.0])
    solver_tol: float = 1e-10
    # chaos fit
    p: int = 3
    n_samples: int = 100_000
    # adaptation
    schemes: list = field(default_factory=lambda: ["gaussian", "quadratic"])
    gaussian_dim: int = 1
    quadratic_dim: int = 5
    retained: str = "pure"
    retained_order: int = 2
    kernel_modes: int = 30
    # pdfs
    probe_fractions: list = field(default_factory=lambda: [0.25, 0.5, 0.75])
    n_pdf: int = 100_000
    kde_points: int = 1024
    n_velocity: int = 5
    # random coefficients
    split: int = 4
    n_zeta: int = 2_000
    # geometric
    geo_x: list = field(default_factory=lambda: [0.3, 0.9, 0.99])
    geo_d: list = field(default_factory=lambda: [10, 50, 100])
    geo_n: int = 100_000

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f"unknown key {k!r}" for k in unknown])
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"cannot read {path}: {exc}"]) from exc
        if not isinstance(data, dict):
            raise ConfigError([f"{path} must contain a JSON object"])
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self, keys=None) -> str:
        """sha256 of the canonical JSON of ``keys`` (all fields except ``out`` and ``threads``)."""
        d = self.to_dict()
        keys = keys or [k for k in d if k not in ("out", "threads")]
        blob = json.dumps({k: d[k] for k in sorted(keys)}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- validation -----------------------------------------------------------

    def problems(self) -> list[str]:
        out = []
        if self.experiment not in EXPERIMENTS:
            out.append(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.threads < 1:
            out.append("threads must be >= 1")
        if len(self.cells) != 2 or any(int(c) < 1 for c in self.cells):
            out.append(f"cells must be two positive integers, got {self.cells}")
        if len(self.extent) != 2 or any(b <= a for a, b in self.extent):
            out.append(f"extent must be two increasing intervals, got {self.extent}")
        if self.variance <= 0 or any(l <= 0 for l in self.lengths):
            out.append("kernel variance and correlation lengths must be positive")
        if not 0 < self.energy_fraction <= 1:
            out.append("energy_fraction must lie in (0, 1]")
        n_cells = int(np.prod(self.cells)) if len(self.cells) == 2 else 0
        if self.n_modes is not None and not 1 <= self.n_modes <= max(n_cells, 1):
            out.append(f"n_modes must lie in 1..{n_cells}")
        if any(w <= 0 for w in self.source_widths):
            out.append("source widths must be positive")
        if not 0 < self.solver_tol < 1:
            out.append("solver_tol must lie in (0, 1)")
        if not 1 <= self.p <= MAX_ORDER:
            out.append(f"chaos order p must lie in 1..{MAX_ORDER}")
        if self.n_samples < 1:
            out.append("n_samples must be positive")
        for s in self.schemes:
            if s not in SCHEMES:
                out.append(f"unknown adaptation scheme {s!r}")
        if "quadratic" in self.schemes and self.p < 2:
            out.append("quadratic adaptation needs chaos order p >= 2")
        if self.gaussian_dim < 1 or self.quadratic_dim < 1:
            out.append("adapted dimensions must be >= 1")
        d = self.n_modes
        if d is not None:
            for scheme, name in (("gaussian", "gaussian_dim"), ("quadratic", "quadratic_dim")):
                if scheme in self.schemes and getattr(self, name) > d:
                    out.append(f"{name} = {getattr(self, name)} exceeds the input dimension {d}")
            if self.experiment == "random-coeffs" and not 1 <= self.split <= d:
                out.append(f"split must lie in 1..{d}")
        if self.retained not in ("pure", "total"):
            out.append("retained must be 'pure' or 'total'")
        if not 1 <= self.retained_order <= self.p:
            out.append("retained_order must lie in 1..p")
        if not self.probe_fractions or any(not 0 <= f <= 1 for f in self.probe_fractions):
            out.append("probe_fractions must be a non-empty list in [0, 1]")
        if self.n_pdf < 100:
            out.append("n_pdf must be at least 100 for density estimation")
        if self.kde_points < 2:
            out.append("kde_points must be at least 2")
        if self.n_velocity < 0 or self.kernel_modes < 1 or self.n_zeta < 2:
            out.append("n_velocity >= 0, kernel_modes >= 1 and n_zeta >= 2 are required")
        if self.split < 1:
            out.append("split must be >= 1")
        if any(not 0 <= x < 1 for x in self.geo_x):
            out.append("geometric x values must lie in [0, 1)")
        if any(int(d) != d or d < 1 for d in self.geo_d):
            out.append("geometric truncation lengths must be positive integers")
        if self.geo_n < 100:
            out.append("geo_n must be at least 100")
        return out

    def validate(self) -> "PipelineConfig":
        """Raise :class:`ConfigError` listing every problem, before any compute."""
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self


def _rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), _STREAMS[stream]])


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


class Pipeline:
    """Stage runner with on-disk caching; stages are evaluated lazily."""

    def __init__(self, config: PipelineConfig):
        self.config = config.validate()
        self.out = Path(config.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []
        self._cache: dict = {}

    def _track(self, path: Path) -> Path:
        if path not in self.files:
            self.files.append(path)
        return path

    def _stage(self, name: str, fn):
        if name not in self._cache:
            logger.info("stage %s", name)
            try:
                self._cache[name] = fn()
            except (ConfigError, StageError):
                raise
            except Exception as exc:  # attribute module errors to the stage
                raise StageError(name, exc) from exc
        return self._cache[name]

    # -- shared objects ---------------------------------------------------

    @property
    def grid(self) -> SpatialGrid:
        c = self.config
        return SpatialGrid(tuple(map(tuple, c.extent)), tuple(c.cells))

    @property
    def probes(self) -> np.ndarray:
        return self.grid.probe_lattice(tuple(self.config.probe_fractions))

    def _key(self, *names) -> str:
        return self.config.digest(list(names))[:16]

    def kl(self) -> KLBasis:
        def run():
            c = self.config
            spec = RandomFieldSpec(c.variance, tuple(c.lengths), c.field_mean)
            kl = kl_decompose(spec, self.grid, c.energy_fraction, c.n_modes)
            save_kl(kl, self.out)
            self._track(self.out / "kl_eigenvalues.csv")
            self._track(self.out / "kl_eigenfunctions.csv")
            self._check_dimensions(kl.n_modes)
            return kl

        return self._stage("kl", run)

    def _check_dimensions(self, d: int) -> None:
        c, problems = self.config, []
        if "gaussian" in c.schemes and c.gaussian_dim > d:
            problems.append(f"gaussian_dim = {c.gaussian_dim} exceeds the {d} KL modes")
        if "quadratic" in c.schemes and c.quadratic_dim > d:
            problems.append(f"quadratic_dim = {c.quadratic_dim} exceeds the {d} KL modes")
        if c.experiment == "random-coeffs" and c.split > d:
            problems.append(f"split = {c.split} exceeds the {d} KL modes")
        if problems:
            raise ConfigError(problems)

    def source(self) -> np.ndarray:
        c = self.config
        spec = SourceSpec(c.source_amplitude, tuple(c.source), tuple(c.sink), tuple(c.source_widths))
        return assemble_source(spec, self.grid)

    _ENSEMBLE_KEYS = (
        "seed", "extent", "cells", "variance", "lengths", "field_mean", "energy_fraction",
        "n_modes", "source_amplitude", "source", "sink", "source_widths", "solver_tol", "n_samples",
    )  # fmt: skip

    def ensemble(self) -> SampleStore:
        def run():
            c = self.config
            path = self._track(self.out / "ensemble.csv")
            key_path = self._track(self.out / "ensemble.key")
            key = self._key(*self._ENSEMBLE_KEYS)
            if path.exists() and key_path.exists() and key_path.read_text().strip() == key:
                logger.info("reusing cached ensemble %s", path)
                return SampleStore.load(path)
            kl = self.kl()
            xi = _rng(c.seed, "ensemble").standard_normal((c.n_samples, kl.n_modes))
            u = solve_ensemble(kl, self.grid, self.source(), xi, c.solver_tol, threads=c.threads)
            store = SampleStore(xi, u, c.seed)
            store.save(path, self.grid.shape)
            key_path.write_text(key + "\n")
            return store

        return self._stage("ensemble", run)

    def expansion(self) -> ChaosExpansion:
        def run():
            c = self.config
            path = self._track(self.out / "coefficients.csv")
            key_path = self._track(self.out / "coefficients.key")
            key = self._key(*self._ENSEMBLE_KEYS, "p")
            if path.exists() and key_path.exists() and key_path.read_text().strip() == key:
                return load_expansion(path, self.grid)
            store = self.ensemble()
            iset = build_index_set(store.inputs.shape[1], c.p)
            e = fit_coefficients(store, iset, self.grid)
            save_expansion(e, path, self.grid.shape)
            key_path.write_text(key + "\n")
            return e

        return self._stage("fit", run)

    # -- adaptation -------------------------------------------------------

    def _dim(self, scheme: str) -> int:
        return self.config.gaussian_dim if scheme == "gaussian" else self.config.quadratic_dim

    def _retained(self, n: int, d: int):
        c = self.config
        if c.retained == "pure":
            return pure_retained(n, c.retained_order, d)
        return total_retained(n, c.retained_order, d)

    def isometry(self, scheme: str) -> IsometryField:
        def run():
            e = self.expansion()
            n = self._dim(scheme)
            field = gaussian_adaptation(e, n) if scheme == "gaussian" else quadratic_adaptation(e, n)
            save_isometry_field(field, self._track(self.out / f"isometry_{scheme}.csv"), self.grid.shape)
            return field

        return self._stage(f"adapt-{scheme}", run)

    def adapted(self, scheme: str) -> AdaptedExpansion:
        def run():
            e = self.expansion()
            field = self.isometry(scheme)
            ad = project(e, field, self._retained(field.n, e.d))
            labels = [multi_index_label(a[: field.n]) for a in ad.retained]
            pts = self.grid.points
            _write_csv(
                self._track(self.out / f"adapted_{scheme}.csv"),
                ["x", "y"] + [f"u_{l}" for l in labels],
                (list(map(float, pts[k])) + list(map(float, ad.coeffs[k])) for k in range(len(pts))),
            )
            return ad

        return self._stage(f"project-{scheme}", run)

    def kernel(self, scheme: str):
        def run():
            k = eta_kernel(self.isometry(scheme), 0, self.grid.areas)
            save_kernel_eigenpairs(
                k, self._track(self.out / f"kernel_{scheme}.csv"), min(self.config.kernel_modes, k.eigenvalues.size)
            )
            return k

        return self._stage(f"kernel-{scheme}", run)

    # -- densities ------------------------------------------------------------

    def pdfs(self) -> list[dict]:
        def run():
            c = self.config
            e = self.expansion()
            xi = _rng(c.seed, "pdf").standard_normal((c.n_pdf, e.d))
            rows, curves = [], {}
            pts = self.grid.points
            for k in self.probes:
                samples = {"full": e(xi, int(k))}
                for scheme in c.schemes:
                    samples[scheme] = self.adapted(scheme)(xi, int(k))
                rows += self._compare(k, samples, curves, pts)
            save_densities(self._track(self.out / "pdfs.csv"), curves)
            self._write_distances(rows, "pdf_distances.csv")
            return rows

        return self._stage("pdf", run)

    def _compare(self, k, samples, curves, pts):
        lo = min(v.min() for v in samples.values())
        hi = max(v.max() for v in samples.values())
        ref = kde(samples["full"])
        grid = np.linspace(lo - 3 * ref.bandwidth, hi + 3 * ref.bandwidth, self.config.kde_points)
        est = {name: kde(v, grid=grid) for name, v in samples.items()}
        rows = []
        for name, de in est.items():
            curves[f"p{int(k)}:{name}"] = de
            if name != "full":
                l1, hel = density_distance(est["full"], de)
                rows.append(
                    {"probe": int(k), "x": float(pts[k, 0]), "y": float(pts[k, 1]), "variant": name, "l1": l1, "hellinger": hel}
                )
        return rows

    def _write_distances(self, rows, name):
        _write_csv(
            self._track(self.out / name),
            ["probe", "x", "y", "variant", "l1", "hellinger"],
            ([r["probe"], r["x"], r["y"], r["variant"], r["l1"], r["hellinger"]] for r in rows),
        )

    def velocities(self):
        def run():
            c = self.config
            kl = self.kl()
            xi = _rng(c.seed, "velocity").standard_normal((c.n_velocity, kl.n_modes))
            kappa = sample_transmissivity(kl, xi)
            g, pts = self.source(), self.grid.points
            rows = []
            for s in range(c.n_velocity):
                prob = EllipticProblem(self.grid, kappa[s], g, c.solver_tol)
                u = solve_pressure(prob)
                v = velocity(prob, u).cell
                rows += [[s, float(pts[k, 0]), float(pts[k, 1]), float(u[k]), float(v[k, 0]), float(v[k, 1])] for k in range(len(pts))]
            _write_csv(self._track(self.out / "velocity_samples.csv"), ["sample", "x", "y", "pressure", "vx", "vy"], rows)
            return rows

        return self._stage("velocity", run)

    # -- random coefficients ----------------------------------------------------

    def random_coeffs(self):
        def run():
            c = self.config
            e = self.expansion()
            se = regroup(e, tuple(range(c.split)))
            zetas = _rng(c.seed, "zeta").standard_normal((c.n_zeta, se.d2))
            ec = expected_adapted_coefficients(se, zetas, "gaussian", 1, pure_retained(1, c.retained_order, se.d1))
            pts = self.grid.points
            labels = [multi_index_label(a[:1]) for a in ec.retained]
            _write_csv(
                self._track(self.out / "expected_adapted_coefficients.csv"),
                ["x", "y", "u0"] + [f"E_U_{l}" for l in labels] + [f"se_U_{l}" for l in labels],
                (
                    list(map(float, pts[k])) + [float(e.coeffs[k, 0])] + list(map(float, ec.mean[k])) + list(map(float, ec.stderr[k]))
                    for k in range(len(pts))
                ),
            )
            rng = _rng(c.seed, "pdf")
            xi = rng.standard_normal((c.n_pdf, e.d))
            rows, curves = [], {}
            for k in self.probes:
                samples = {
                    "full": e(xi, int(k)),
                    "random-coeffs": sample_adapted(se, int(k), xi[:, se.adapted], xi[:, se.parameters]),
                }
                rows += self._compare(k, samples, curves, pts)
            save_densities(self._track(self.out / "pdfs_random_coeffs.csv"), curves)
            self._write_distances(rows, "pdf_distances_random_coeffs.csv")
            return ec, rows

        return self._stage("random-coeffs", run)

    # -- geometric ------------------------------------------------------------

    def geometric(self):
        def run():
            c = self.config
            table = coefficient_table(c.geo_x, c.geo_d)
            if not table:
                return []
            cols = list(table[0])
            _write_csv(self._track(self.out / "geometric_coefficients.csv"), cols, ([r[k] for k in cols] for r in table))
            rows, curves = [], {}
            for i, x in enumerate(c.geo_x):
                for j, d in enumerate(c.geo_d):
                    seed = int(np.random.SeedSequence([c.seed, _STREAMS["geometric"], i, j]).generate_state(1)[0])
                    cmp = compare_pdfs(x, int(d), c.geo_n, seed, c.kde_points)
                    for name, de in cmp.densities.items():
                        curves[f"x={x}:d={d}:{name}"] = de
                    rows.append([x, int(d), cmp.l1_before, cmp.l1_after, cmp.hellinger_before, cmp.hellinger_after])
            _write_csv(
                self._track(self.out / "geometric_distances.csv"),
                ["x", "d", "l1_before", "l1_after", "hellinger_before", "hellinger_after"],
                rows,
            )
            save_densities(self._track(self.out / "geometric_pdfs.csv"), curves)
            return rows

        return self._stage("geometric", run)

    # -- bundles ----------------------------------------------------------------

    def run(self) -> dict:
        """Run the configured experiment end to end and write the manifest."""
        c = self.config
        if c.experiment == "geometric":
            self.geometric()
        else:
            self.kl()
            self.expansion()
            if c.experiment == "elliptic":
                for scheme in c.schemes:
                    self.adapted(scheme)
                    self.kernel(scheme)
                self.pdfs()
                self.velocities()
            else:
                self.random_coeffs()
        return self.write_manifest()

    def write_manifest(self) -> dict:
        c = self.config
        manifest = {
            "package": "chaosadapt",
            "version": __version__,
            "experiment": c.experiment,
            "seed": c.seed,
            "config_sha256": c.digest(),
            "config": {k: v for k, v in c.to_dict().items() if k not in ("out", "threads")},
            "versions": {
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "files": {p.name: _sha256(p) for p in sorted(self.files) if p.exists()},
        }
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return manifest


def run_elliptic(config: PipelineConfig) -> dict:
    return Pipeline(dataclasses.replace(config, experiment="elliptic")).run()


def run_random_coeffs(config: PipelineConfig) -> dict:
    return Pipeline(dataclasses.replace(config, experiment="random-coeffs")).run()


def run_geometric(config: PipelineConfig) -> dict:
    return Pipeline(dataclasses.replace(config, experiment="geometric")).run()


def desk_config(**overrides) -> PipelineConfig:
    """Small elliptic setting: 20 x 20 grid, 10 KL modes, ``10^4`` solves."""
    base = dict(cells=[20, 20], n_modes=10, n_samples=10_000, n_pdf=100_000)
    base.update(overrides)
    return PipelineConfig(**base)


__all__ = [
    "ConfigError",
    "Pipeline",
    "PipelineConfig",
    "StageError",
    "desk_config",
    "run_elliptic",
    "run_geometric",
    "run_random_coeffs",
]
