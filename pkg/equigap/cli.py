"""
Command line: reproducible gap experiments

Every command reads a key=value config file (optional), applies flags and
--set overrides on top, validates the result as ExperimentConfig and echoes
it into its JSON output.
"""

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from . import __version__
from .diffusion import (
    ScoreField,
    Schedule,
    ScheduleKind,
    endpoint_orbit_error,
    max_angular_gap,
    reverse_sample,
)
from .groups import GroupKind, GroupSpec
from .log import logger
from .manifolds import (
    ManifoldKind,
    ManifoldSpec,
    PointCloud,
    deduplicate,
    sample_uniform,
)
from .quantize import optimal_dataset, optimal_gap
from .repgap import PredictionSpace, gap, gap_cell
from .scaling import (
    FIT_CSV_HEADER,
    ZadorConstants,
    effective_sample_size,
    empirical_j_optimal,
    fit_loglog,
    fit_per_seed,
    mean_curve,
    predicted_gap,
    predicted_gap_kind,
    summarize_dims,
    twonn_dimension,
)
from .storage import (
    BINARY_SUFFIXES,
    CSV_SUFFIXES,
    read_cloud,
    write_cloud,
    write_fit_csv,
    write_gap_csv,
    write_json,
    write_trace_csv,
)
from .utils import (
    DEFAULT_GRID_SIZE,
    DEFAULT_MAX_ITER,
    DEFAULT_N_EVAL,
    DEFAULT_REFERENCE_SIZE,
    DEFAULT_RESTARTS,
    DEFAULT_TOL,
    GAP_CSV_HEADER,
    ConfigError,
    GapEstimate,
    GapMode,
    Metric,
    NumericalError,
    make_rng,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

# Seconds between progress messages of the worker pool
PROGRESS_PERIOD = 20.0


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    if isinstance(value, (int, float)):
        return [value]
    return value


# ___ Configuration ___


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ManifoldSection(_Section):
    kind: ManifoldKind = ManifoldKind.HYPERSPHERE
    dim: Optional[int] = Field(None, ge=1, description="Hypercube dimension")
    ambient: Optional[int] = Field(None, ge=1, description="Ambient dimension")
    side: float = Field(1.0, gt=0.0)
    periodic: bool = Field(False, description="Identify opposite cube faces")
    r: float = Field(1.0, gt=0.0)
    wave_radius: float = Field(0.5, gt=0.0)
    wave_arcs: int = Field(4, ge=1)
    wave_depth: float = Field(2.0, gt=0.0)
    roll_turns: float = Field(1.5, gt=0.0)
    roll_height: float = Field(10.0, gt=0.0)
    deformation: float = Field(0.3, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_periodic(self) -> "ManifoldSection":
        if self.periodic and self.kind != ManifoldKind.HYPERCUBE:
            raise ValueError("manifold.periodic applies to the hypercube only")
        return self

    def build(self, reference: Optional[PointCloud] = None) -> ManifoldSpec:
        if self.kind == ManifoldKind.EXTERNAL or reference is not None:
            if reference is None:
                raise ConfigError("An external manifold needs an input cloud")
            return ManifoldSpec.external(reference)
        if self.kind == ManifoldKind.HYPERCUBE:
            return ManifoldSpec.hypercube(
                self.dim or 1,
                ambient_dim=self.ambient,
                side=self.side,
                periodic=self.periodic,
            )
        if self.kind == ManifoldKind.HYPERSPHERE:
            return ManifoldSpec.hypersphere(self.ambient or 3, radius=self.r)
        if self.kind == ManifoldKind.WAVE:
            return ManifoldSpec.wave(
                wave_radius=self.wave_radius,
                wave_arcs=self.wave_arcs,
                wave_depth=self.wave_depth,
            )
        if self.kind == ManifoldKind.SWISS_ROLL:
            return ManifoldSpec.swiss_roll(
                roll_turns=self.roll_turns, roll_height=self.roll_height
            )
        return ManifoldSpec.deformed_sphere(self.deformation)


class GroupSection(_Section):
    kind: GroupKind = GroupKind.IDENTITY
    axis: List[int] = Field(default_factory=list)
    period: Optional[float] = Field(None, gt=0.0)
    K: Optional[int] = Field(
        None, ge=1, description="Orbit discretization, analytic when unset"
    )

    @field_validator("axis", mode="before")
    @classmethod
    def _split_axis(cls, value):
        return _split_list(value)

    def build(self, spec: ManifoldSpec) -> GroupSpec:
        if self.kind == GroupKind.IDENTITY:
            return GroupSpec.identity()
        if self.kind == GroupKind.ROTATION:
            axis = self.axis or [2]
            if len(axis) != 1:
                raise ConfigError("A rotation takes a single axis")
            return GroupSpec.rotation(axis[0])
        if not self.axis:
            raise ConfigError("A translation needs group.axis")
        period, offset = self.period, 0.0
        if spec.kind == ManifoldKind.HYPERCUBE:
            # torus identification of the cube
            period, offset = period or spec.side, -spec.side / 2.0
        elif spec.kind == ManifoldKind.WAVE:
            period = period or spec.wave_depth
        if period is None:
            raise ConfigError("A translation on this manifold needs group.period")
        return GroupSpec.translation(self.axis, period, offset)


class QuantizeSection(_Section):
    reference_size: int = Field(DEFAULT_REFERENCE_SIZE, ge=1)
    restarts: int = Field(DEFAULT_RESTARTS, ge=1)
    max_iter: int = Field(DEFAULT_MAX_ITER, ge=0)
    tol: float = Field(DEFAULT_TOL, ge=0.0)


class DiffusionSection(_Section):
    T: int = Field(100, ge=1)
    schedule: ScheduleKind = ScheduleKind.GEOMETRIC
    n_samples: int = Field(1000, ge=1)
    K: Optional[int] = Field(
        None, ge=1, description="Orbit quadrature, adaptive when unset"
    )
    dataset_size: int = Field(12, ge=1)
    trace: bool = False


class ExperimentConfig(_Section):
    manifold: ManifoldSection = Field(default_factory=ManifoldSection)
    group: GroupSection = Field(default_factory=GroupSection)
    quantize: QuantizeSection = Field(default_factory=QuantizeSection)
    diffusion: DiffusionSection = Field(default_factory=DiffusionSection)
    n: int = Field(1000, ge=1)
    seed: int = 0
    n_grid: List[int] = Field(default_factory=lambda: [2**k for k in range(5, 11)])
    seeds: List[int] = Field(default_factory=lambda: list(range(5)))
    mode: GapMode = GapMode.IID
    n_eval: int = Field(DEFAULT_N_EVAL, ge=1)
    metric: Optional[Metric] = None
    grid_size: int = Field(DEFAULT_GRID_SIZE, ge=2)
    drop_smallest: int = Field(0, ge=0)
    empirical: int = Field(
        0, ge=0, le=10, description="Largest d whose J*_d is also estimated by Lloyd"
    )
    workers: int = Field(1, ge=1)
    input: Optional[str] = None
    output: Optional[str] = None

    @field_validator("n_grid", "seeds", mode="before")
    @classmethod
    def _split_grid(cls, value):
        return _split_list(value)

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        if not self.n_grid:
            raise ValueError("n_grid must not be empty")
        if min(self.n_grid) < 1:
            raise ValueError("n_grid values must be >= 1")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValueError("n_grid must be strictly increasing")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        return self

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    @property
    def experiment_id(self) -> str:
        """sha256 of the canonical echo without the input and output paths"""
        knobs = self.model_dump(mode="json", exclude={"input", "output"})
        canonical = json.dumps(knobs, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    """
    Parse key=value lines with dotted sections

    Blank lines and lines starting with '#' are skipped.
    """
    data: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected key=value, got '{line}'")
        key, value = (part.strip() for part in line.split("=", 1))
        set_key(data, key, value)
    return data


def set_key(data: Dict[str, Any], key: str, value: Any):
    if not key:
        raise ConfigError("Empty configuration key")
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"'{part}' is not a configuration section")
        node = child
    node[parts[-1]] = value


# flag dest -> config key
FLAG_KEYS = {
    "manifold": "manifold.kind",
    "dim": "manifold.dim",
    "ambient": "manifold.ambient",
    "side": "manifold.side",
    "periodic": "manifold.periodic",
    "r": "manifold.r",
    "group": "group.kind",
    "axis": "group.axis",
    "period": "group.period",
    "K": "group.K",
    "restarts": "quantize.restarts",
    "reference_size": "quantize.reference_size",
    "T": "diffusion.T",
    "schedule": "diffusion.schedule",
    "n_samples": "diffusion.n_samples",
    "dataset_size": "diffusion.dataset_size",
    "trace": "diffusion.trace",
    "n": "n",
    "n_grid": "n_grid",
    "seeds": "seeds",
    "seed": "seed",
    "mode": "mode",
    "n_eval": "n_eval",
    "metric": "metric",
    "grid_size": "grid_size",
    "drop_smallest": "drop_smallest",
    "empirical": "empirical",
    "workers": "workers",
    "input": "input",
    "out": "output",
}


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    data: Dict[str, Any] = {}
    if args.config:
        path = Path(args.config)
        data = parse_config_text(path.read_text(encoding="utf-8"), str(path))
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            set_key(data, key, value)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got '{item}'")
        key, value = item.split("=", 1)
        set_key(data, key.strip(), value.strip())
    return ExperimentConfig.model_validate(data)


# ___ Helpers ___

_FILE_SUFFIXES = CSV_SUFFIXES + BINARY_SUFFIXES + (".json",)


def output_path(config: ExperimentConfig, default_name: str) -> Path:
    """
    File of a command's main output

    An output with a file suffix is used as is, anything else is a
    directory that receives default_name.
    """
    out = Path(config.output or ".")
    if out.suffix.lower() in _FILE_SUFFIXES:
        out.parent.mkdir(parents=True, exist_ok=True)
        return out
    out.mkdir(parents=True, exist_ok=True)
    return out / default_name


def metadata(
    config: ExperimentConfig, command: str, started: float, **payload
) -> Dict[str, Any]:
    record = {
        "experiment_id": config.experiment_id,
        "toolkit_version": __version__,
        "command": command,
        "config": config.echo(),
        "wall_clock_sec": time.monotonic() - started,
    }
    record.update(payload)
    return record


def run_cells(func: Callable, cells: Sequence[tuple], workers: int) -> List[Any]:
    """Run func(*cell) for every cell in a thread pool, in cell order"""
    results: List[Any] = []
    last = time.monotonic()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for done, result in enumerate(pool.map(lambda cell: func(*cell), cells), 1):
            results.append(result)
            now = time.monotonic()
            if now - last >= PROGRESS_PERIOD:
                logger.info("Grid cells done: %d/%d", done, len(cells))
                last = now
    return results


def gap_grid(
    config: ExperimentConfig,
    spec: ManifoldSpec,
    group: GroupSpec,
    source: Optional[PointCloud] = None,
) -> List[Tuple[int, GapEstimate]]:
    """Gap of every (n, seed) cell, ordered by (n, seed)"""
    q = config.quantize

    def cell(n: int, seed: int) -> GapEstimate:
        if config.mode == GapMode.OPTIMAL:
            return optimal_gap(
                spec,
                group,
                n,
                seed,
                restarts=q.restarts,
                reference_size=q.reference_size,
                max_iter=q.max_iter,
                tol=q.tol,
            )
        return gap_cell(
            spec, group, n, seed, config.n_eval, config.metric, source, config.group.K
        )

    cells = [(n, seed) for n in config.n_grid for seed in sorted(config.seeds)]
    results = run_cells(cell, cells, config.workers)
    rows = [(n, est) for (n, _), est in zip(cells, results)]
    return sorted(rows, key=lambda row: (row[0], row[1].seed))


def fit_payload(
    config: ExperimentConfig,
    spec: ManifoldSpec,
    group: GroupSpec,
    rows: List[Tuple[int, GapEstimate]],
) -> Dict[str, Any]:
    fit = fit_loglog(mean_curve(rows), drop_smallest=config.drop_smallest)
    per_seed = fit_per_seed(rows, drop_smallest=config.drop_smallest)
    summary = summarize_dims(per_seed.values())
    payload = {
        "fit": fit.model_dump(mode="json"),
        "per_seed": {str(seed): f.model_dump(mode="json") for seed, f in per_seed.items()},
        "dim_summary": summary.model_dump(mode="json"),
        "hypotheses": {"constant_orbit_volume": group.has_constant_orbit_volume},
        "predicted": predicted_payload(config, spec, group),
    }
    if not group.has_constant_orbit_volume:
        logger.warning(
            "Orbits of '%s' do not have a constant volume; the slope is "
            "reported without correction",
            group.label,
        )
    logger.info(
        "slope %.4f, estimated dim %s (per seed %s +- %s)",
        fit.slope, fit.estimated_dim, summary.mean, summary.std,
    )
    return payload


def predicted_payload(
    config: ExperimentConfig, spec: ManifoldSpec, group: GroupSpec
) -> Optional[Dict[str, Any]]:
    """Theoretical gap overlay, when the constants are known"""
    d = spec.intrinsic_dim - group.quotient_dim_reduction
    if d < 1 or not group.has_constant_orbit_volume:
        return None
    try:
        measure = spec.measure
    except ValueError:
        return None
    # the quotient volume is the manifold volume over the orbit volume
    volume = group.orbit_volume()
    mode = "optimal" if config.mode == GapMode.OPTIMAL else "random"
    return {
        "d": d,
        "mode": mode,
        "constant_kind": predicted_gap_kind(d, mode).value,
        "values": [
            [n, predicted_gap(d, n, measure / volume, volume, mode)]
            for n in config.n_grid
        ],
    }


# ___ Commands ___


def cmd_sample(config: ExperimentConfig):
    """Draw a uniform sample of a manifold"""
    started = time.monotonic()
    spec = config.manifold.build()
    cloud = sample_uniform(spec, config.n, config.seed)
    path = output_path(config, "sample.csv")
    write_cloud(path, cloud)
    write_json(
        path.with_suffix(".json"),
        metadata(config, "sample", started, n_points=cloud.n, ambient_dim=cloud.ambient_dim),
    )
    logger.info("Sampled %d points of '%s' into %s", cloud.n, spec.kind.value, path)


def cmd_quantize(config: ExperimentConfig):
    """Optimal dataset of size n by Lloyd iterations"""
    started = time.monotonic()
    spec = _manifold(config)
    group = config.group.build(spec)
    q = config.quantize
    result = optimal_dataset(
        spec,
        group,
        config.n,
        config.seed,
        restarts=q.restarts,
        reference_size=q.reference_size,
        max_iter=q.max_iter,
        tol=q.tol,
    )
    path = output_path(config, "centroids.csv")
    write_cloud(path, result.centroids)
    write_json(
        path.with_suffix(".json"),
        metadata(
            config,
            "quantize",
            started,
            quantization_error=result.quantization_error,
            std_error=result.std_error,
            iterations=result.iterations,
            converged=result.converged,
        ),
    )
    logger.info(
        "Quantization error %.6e (%d iterations)",
        result.quantization_error, result.iterations,
    )


def cmd_gap(config: ExperimentConfig):
    """Gap of a single (n, seed) cell"""
    started = time.monotonic()
    spec = _manifold(config)
    group = config.group.build(spec)
    single = config.model_copy(update={"n_grid": [config.n], "seeds": [config.seed]})
    rows = gap_grid(single, spec, group)
    est = rows[0][1]
    print(",".join(GAP_CSV_HEADER))
    print(",".join(map(str, est.csv_row())))
    if config.output:
        path = output_path(config, "gap.csv")
        write_gap_csv(path, rows)
        write_json(
            path.with_suffix(".json"),
            metadata(config, "gap", started, gap=est.model_dump(mode="json")),
        )


def cmd_scaling(config: ExperimentConfig):
    """Gap curve over n_grid x seeds and its log-log fit"""
    started = time.monotonic()
    spec = _manifold(config)
    group = config.group.build(spec)
    rows = gap_grid(config, spec, group)
    path = output_path(config, "gaps.csv")
    write_gap_csv(path, rows)
    payload = fit_payload(config, spec, group, rows)
    write_fit_csv(
        path.with_name(path.stem + "_fit.csv"),
        FIT_CSV_HEADER,
        fit_loglog(mean_curve(rows), config.drop_smallest).csv_row(),
    )
    write_json(path.with_suffix(".json"), metadata(config, "scaling", started, **payload))


def cmd_dimfit(config: ExperimentConfig):
    """
    Intrinsic dimension of an ingested cloud

    Duplicates are removed, the cloud is split 50/50 by a seeded shuffle;
    datasets are drawn from the first half and evaluated against the
    second. No normalization is applied: a global scale only moves the
    intercept.
    """
    started = time.monotonic()
    if not config.input:
        raise ConfigError("dimfit needs an input cloud (--input)")
    cloud = deduplicate(read_cloud(config.input))
    needed = 2 * max(config.n_grid)
    if cloud.n < needed:
        raise ConfigError(
            f"Input has {cloud.n} distinct points, the grid needs at least {needed}"
        )
    order = make_rng(config.seed, "split").permutation(cloud.n)
    half = cloud.n // 2
    train = PointCloud(points=cloud.points[order[:half]])
    held_out = PointCloud(points=cloud.points[order[half:]])
    spec = ManifoldSpec.external(held_out)
    group = config.group.build(spec)
    if config.mode == GapMode.OPTIMAL:
        raise ConfigError("dimfit estimates random gaps only")

    rows = gap_grid(config, spec, group, source=train)
    path = output_path(config, "dimfit.csv")
    write_gap_csv(path, rows)
    payload = fit_payload(config, spec, group, rows)
    payload["predicted"] = None
    payload["input_points"] = cloud.n
    payload["twonn_dim"] = twonn_dimension(train)
    write_json(path.with_suffix(".json"), metadata(config, "dimfit", started, **payload))


def cmd_diffuse(config: ExperimentConfig):
    """Reverse flow of the exact score of an orbit-augmented dataset"""
    started = time.monotonic()
    spec = config.manifold.build()
    group = config.group.build(spec)
    diff = config.diffusion
    if config.input:
        dataset = read_cloud(config.input)
    else:
        dataset = sample_uniform(spec, diff.dataset_size, config.seed)
    field = ScoreField(
        dataset=dataset,
        group=group,
        quadrature_K=diff.K or config.group.K,
        schedule=Schedule.of(diff.schedule, diff.T),
    )
    result = reverse_sample(field, diff.n_samples, config.seed, trace=diff.trace)
    err_max, err_mean = endpoint_orbit_error(result.endpoints, dataset, group)
    payload: Dict[str, Any] = {
        "orbit_error_max": err_max,
        "orbit_error_mean": err_mean,
        "quadrature_K": field.K,
        "diverged": list(result.diverged),
    }
    if group.kind == GroupKind.ROTATION:
        n = result.endpoints.n
        bound = 3.0 * (2.0 * math.pi / n * math.log(max(n, 2)))
        angular = max_angular_gap(result.endpoints, group)
        payload["max_angular_gap"] = angular
        payload["angular_gap_bound"] = bound
        payload["angular_coverage"] = angular < bound
    if not config.input:
        n_eval = config.n_eval
        payload["endpoint_gap"] = gap(
            spec, PredictionSpace.diffusion_endpoints(result.endpoints), n_eval, config.seed
        ).value
        payload["orbit_gap"] = gap(
            spec, PredictionSpace.for_group(dataset, group), n_eval, config.seed,
            Metric.SQ_EUCLIDEAN,
        ).value

    path = output_path(config, "endpoints.csv")
    write_cloud(path, result.endpoints)
    if diff.trace:
        write_trace_csv(
            path.with_name(path.stem + "_trace.csv"), result.trace, result.sample_ids
        )
    write_json(path.with_suffix(".json"), metadata(config, "diffuse", started, **payload))
    logger.info("Endpoint orbit error: max %.3e, mean %.3e", err_max, err_mean)


def cmd_constants(config: ExperimentConfig):
    """Table of J_d, J*_d and n_eff for d = 1..10"""
    header = ["d", "J_random", "J_optimal", "J_optimal_kind", "n", "n_eff"]
    if config.empirical:
        header.append("J_optimal_empirical")
    q = config.quantize
    lines = [",".join(header)]
    for d in range(1, 11):
        c = ZadorConstants.of(d)
        row = [
            str(d),
            repr(c.J_random),
            repr(c.J_optimal),
            c.J_optimal_kind.value,
            str(config.n),
            repr(effective_sample_size(d, config.n)),
        ]
        if config.empirical:
            value = ""
            if d <= config.empirical:
                estimate, _ = empirical_j_optimal(
                    d,
                    n_values=config.n_grid,
                    seed=config.seed,
                    restarts=q.restarts,
                    reference_size=q.reference_size,
                    max_iter=q.max_iter,
                    tol=q.tol,
                )
                value = repr(estimate)
            row.append(value)
        lines.append(",".join(row))
    text = "\n".join(lines) + "\n"
    if config.output:
        output_path(config, "constants.csv").write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _manifold(config: ExperimentConfig) -> ManifoldSpec:
    if config.manifold.kind == ManifoldKind.EXTERNAL:
        if not config.input:
            raise ConfigError("An external manifold needs an input cloud (--input)")
        return config.manifold.build(read_cloud(config.input))
    return config.manifold.build()


COMMANDS: Dict[str, Callable[[ExperimentConfig], None]] = {
    "sample": cmd_sample,
    "quantize": cmd_quantize,
    "gap": cmd_gap,
    "scaling": cmd_scaling,
    "dimfit": cmd_dimfit,
    "diffuse": cmd_diffuse,
    "constants": cmd_constants,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="equigap",
        description="Representation gap experiments on point-cloud manifolds",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in COMMANDS.items():
        p = sub.add_parser(name, help=(func.__doc__ or name).strip().splitlines()[0])
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument(
            "--set", action="append", metavar="KEY=VALUE", help="Override a key"
        )
        p.add_argument("--manifold", choices=[k.value for k in ManifoldKind])
        p.add_argument("--dim", type=int)
        p.add_argument("--ambient", type=int)
        p.add_argument("--side", type=float)
        p.add_argument("--periodic", action="store_const", const=True)
        p.add_argument("--r", type=float)
        p.add_argument("--group", choices=[k.value for k in GroupKind])
        p.add_argument("--axis", help="Comma-separated axes")
        p.add_argument("--period", type=float)
        p.add_argument("--K", type=int)
        p.add_argument("--restarts", type=int)
        p.add_argument("--reference-size", type=int)
        p.add_argument("--n", type=int)
        p.add_argument("--n-grid", help="Comma-separated dataset sizes")
        p.add_argument("--seeds", help="Comma-separated seeds")
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=[m.value for m in GapMode])
        p.add_argument("--n-eval", type=int)
        p.add_argument("--metric", choices=[m.value for m in Metric])
        p.add_argument("--grid-size", type=int)
        p.add_argument("--drop-smallest", type=int)
        p.add_argument("--empirical", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--T", type=int)
        p.add_argument("--schedule", choices=[k.value for k in ScheduleKind])
        p.add_argument("--n-samples", type=int)
        p.add_argument("--dataset-size", type=int)
        p.add_argument("--trace", action="store_const", const=True)
        p.add_argument("--input", help="Point cloud file (.csv, .bin)")
        p.add_argument("--out", help="Output file or directory")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = load_config(args)
        COMMANDS[args.command](config)
    except NumericalError as e:
        logger.error("Numerical failure: %s", e)
        return EXIT_NUMERICAL
    except (ConfigError, ValidationError, ValueError) as e:
        logger.error("Invalid configuration: %s", e)
        return EXIT_CONFIG
    except OSError as e:
        logger.error("I/O error: %s", e)
        return EXIT_IO
    return EXIT_OK
