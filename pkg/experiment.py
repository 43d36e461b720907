import concurrent.futures
import configparser
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from errors import ConfigError
from oracles import DEFAULT_PILOT_SAMPLES, StreamPurpose, make_stream
from problems import (
    DATA_SPARSITY,
    DEFAULT_NOISE,
    EVAL_SAMPLES,
    PROBLEM_KINDS,
    build_problem,
    estimate_parameters,
    evaluate_solution,
)
from prox_geometry import Geometry
from solvers import (
    DEFAULT_RUNS,
    SolverConfig,
    StepsizePolicy,
    pg_solve,
    rspg_solve,
    rspgf_solve,
    two_phase_rspg,
    two_phase_rspg_v,
)

logger = logging.getLogger(__name__)

ALGORITHMS = ("PG", "RSPG", "2-RSPG", "2-RSPG-V", "RSPGF")
DEFAULT_BUDGETS = (1000, 5000, 25000)
DEFAULT_REPLICATIONS = 20
METRICS = ("mapping_norm_sq", "objective", "zero_ratio")
PROGRESS_EVERY = 20

_SECTION_KEYS = {
    "experiment": {"algorithms", "budgets", "replications", "runs", "post_samples",
                   "eval_samples", "pilot_samples", "seed"},
    "problem": {"kind", "n", "noise", "seed", "sparsity", "name", "box"},
    "output": {"dir", "formats", "timings"},
}


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    kind: str
    n: int
    noise: float = DEFAULT_NOISE
    seed: int = 0
    sparsity: float = DATA_SPARSITY
    box: float = None


@dataclass(frozen=True)
class ExperimentConfig:
    scenarios: tuple
    algorithms: tuple = ALGORITHMS
    budgets: tuple = DEFAULT_BUDGETS
    replications: int = DEFAULT_REPLICATIONS
    runs: int = DEFAULT_RUNS
    post_samples: object = "half"
    eval_samples: int = EVAL_SAMPLES
    pilot_samples: int = DEFAULT_PILOT_SAMPLES
    master_seed: int = 0
    output_dir: str = "results"
    formats: tuple = ("csv", "json")
    record_timings: bool = False

    def __post_init__(self):
        if not self.scenarios:
            raise ConfigError("At least one [problem] section is required")
        for scenario in self.scenarios:
            if scenario.kind not in PROBLEM_KINDS:
                raise ConfigError(f"Unknown problem kind {scenario.kind!r}")
            if scenario.n < 1:
                raise ConfigError(f"Scenario {scenario.name}: n must be positive")
            if scenario.box is not None and (scenario.kind != "quadratic" or not scenario.box > 0):
                raise ConfigError(f"Scenario {scenario.name}: box needs kind quadratic and a positive half-width")
        names = [s.name for s in self.scenarios]
        if len(set(names)) != len(names):
            raise ConfigError(f"Scenario names must be unique, got {names}")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown or not self.algorithms:
            raise ConfigError(f"Unknown algorithms {unknown}; expected a subset of {ALGORITHMS}")
        if not self.budgets or any(b < 1 for b in self.budgets):
            raise ConfigError(f"Budgets must be positive, got {self.budgets}")
        if self.replications < 1:
            raise ConfigError(f"Replications must be at least 1, got {self.replications}")
        if self.runs < 1:
            raise ConfigError(f"Runs per two-phase solve must be at least 1, got {self.runs}")
        if self.post_samples != "half" and (not isinstance(self.post_samples, int) or self.post_samples < 1):
            raise ConfigError(f"post_samples must be 'half' or a positive integer, got {self.post_samples}")
        if self.eval_samples < 1:
            raise ConfigError("eval_samples must be positive")
        if self.pilot_samples < 2:
            raise ConfigError("pilot_samples must be at least 2")
        if self.master_seed < 0:
            raise ConfigError("Seed must be nonnegative")
        bad = [f for f in self.formats if f not in ("csv", "json")]
        if bad or not self.formats:
            raise ConfigError(f"Unsupported output formats {bad}")


def _split_list(value):
    return tuple(part.strip() for part in value.split(",") if part.strip())


def _parse_int(section, key, value):
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be an integer, got {value!r}") from None


def _parse_float(section, key, value):
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be a number, got {value!r}") from None


def _check_keys(section_name, kind, section):
    unknown = set(section.keys()) - _SECTION_KEYS[kind]
    if unknown:
        raise ConfigError(f"Unknown keys in [{section_name}]: {sorted(unknown)}")


def parse_experiment_config(text, source="<string>"):
    """
    Parse an INI manifest. Scenarios come from [problem] or [problem NAME]
    sections, run settings from [experiment], destinations from [output].
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"Cannot parse {source}: {e}") from None

    settings = {}
    scenarios = []
    for section_name in parser.sections():
        section = parser[section_name]
        head = section_name.split()[0]
        if head not in _SECTION_KEYS:
            raise ConfigError(f"Unknown section [{section_name}] in {source}")
        _check_keys(section_name, head, section)
        if head == "problem":
            default_name = section_name.split(maxsplit=1)[1] if " " in section_name else section.get("kind")
            if "kind" not in section or "n" not in section:
                raise ConfigError(f"[{section_name}] needs kind and n")
            scenarios.append(ScenarioConfig(
                name=section.get("name", default_name),
                kind=section["kind"].strip(),
                n=_parse_int(section_name, "n", section["n"]),
                noise=_parse_float(section_name, "noise", section.get("noise", str(DEFAULT_NOISE))),
                seed=_parse_int(section_name, "seed", section.get("seed", "0")),
                sparsity=_parse_float(section_name, "sparsity", section.get("sparsity", str(DATA_SPARSITY))),
                box=_parse_float(section_name, "box", section["box"]) if "box" in section else None,
            ))
        elif head == "experiment":
            for key, value in section.items():
                if key == "algorithms":
                    settings["algorithms"] = _split_list(value)
                elif key == "budgets":
                    settings["budgets"] = tuple(_parse_int(section_name, key, v) for v in _split_list(value))
                elif key == "post_samples":
                    settings[key] = "half" if value.strip() == "half" else _parse_int(section_name, key, value)
                elif key == "seed":
                    settings["master_seed"] = _parse_int(section_name, key, value)
                else:
                    settings[key] = _parse_int(section_name, key, value)
        else:
            if "dir" in section:
                settings["output_dir"] = section["dir"].strip()
            if "formats" in section:
                settings["formats"] = _split_list(section["formats"])
            if "timings" in section:
                settings["record_timings"] = section.getboolean("timings")
    return ExperimentConfig(scenarios=tuple(scenarios), **settings)


def load_experiment_config(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from None
    return parse_experiment_config(text, source=str(path))


@dataclass(frozen=True)
class ReportRow:
    scenario: str
    n: int
    noise: float
    algorithm: str
    NS: int
    replication: int
    mapping_norm_sq: float
    objective: float
    zero_ratio: float = None
    sfo_calls: int = 0
    post_calls: int = 0
    wall_ms: float = None

    def sort_key(self):
        return (self.scenario, ALGORITHMS.index(self.algorithm), self.NS, self.replication)


@dataclass(frozen=True)
class SkippedCell:
    scenario: str
    algorithm: str
    NS: int
    reason: str


@dataclass
class ExperimentReport:
    rows: list
    skipped: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def aggregates(self):
        return aggregate_rows(self.rows)


def cell_statistics(values):
    """Mean and unbiased sample variance; variance is None for a single value."""
    values = np.asarray(values, dtype=float)
    mean = float(np.mean(values))
    var = float(np.var(values, ddof=1)) if values.size > 1 else None
    return mean, var


def aggregate_rows(rows):
    """
    Mean and variance per (scenario, algorithm, NS, metric), computed from rows
    in replication order so the result does not depend on row order.
    """
    cells = {}
    for row in sorted(rows, key=ReportRow.sort_key):
        cells.setdefault((row.scenario, row.algorithm, row.NS), []).append(row)
    out = []
    for (scenario, algorithm, NS), cell_rows in cells.items():
        for metric in METRICS:
            values = [getattr(r, metric) for r in cell_rows if getattr(r, metric) is not None]
            if not values:
                continue
            mean, var = cell_statistics(values)
            out.append({"scenario": scenario, "algorithm": algorithm, "NS": NS, "metric": metric,
                        "count": len(values), "mean": mean, "var": var})
    return out


def summarize(report, metric="mapping_norm_sq"):
    """
    One row per (scenario, NS) with a mean and a variance column per algorithm.
    """
    if not report.rows:
        raise ConfigError("Cannot summarize an empty report")
    present = sorted({r.algorithm for r in report.rows}, key=ALGORITHMS.index)
    table = {}
    for agg in report.aggregates():
        if agg["metric"] != metric:
            continue
        row = table.setdefault((agg["scenario"], agg["NS"]), {"scenario": agg["scenario"], "NS": agg["NS"]})
        row[f"{agg['algorithm']} mean"] = agg["mean"]
        row[f"{agg['algorithm']} var"] = agg["var"]
    out = []
    for key in sorted(table):
        row = table[key]
        for algorithm in present:
            row.setdefault(f"{algorithm} mean", None)
            row.setdefault(f"{algorithm} var", None)
        out.append(row)
    return out


@dataclass(frozen=True)
class ScenarioContext:
    index: int
    scenario: ScenarioConfig
    problem: object
    params: object
    geometry: Geometry


def _post_samples(config, iterations):
    if config.post_samples == "half":
        return max(1, iterations // 2)
    return int(config.post_samples)


def _base_solver_config(context, total_budget, master_seed):
    params = context.params
    return SolverConfig(
        total_budget=total_budget,
        lipschitz=params.lipschitz,
        alpha=context.geometry.modulus_alpha,
        sigma=params.sigma,
        d_tilde=params.d_tilde,
        master_seed=master_seed,
        gradient_bound=params.gradient_bound,
        record_trajectory=context.scenario.kind == "s3vm",
    )


def solve_cell(context, algorithm, budget, config, stream_key):
    """Derive (m, N) from the budget and run one replication of `algorithm`."""
    problem, geometry = context.problem, context.geometry
    if algorithm == "PG":
        solver_config = _base_solver_config(context, budget, config.master_seed)
        solver_config = replace(solver_config, stepsize=StepsizePolicy.constant(
            solver_config.alpha / solver_config.lipschitz))
        return pg_solve(problem, geometry, solver_config, budget)
    if algorithm == "RSPG":
        return rspg_solve(problem, geometry, _base_solver_config(context, budget, config.master_seed),
                          stream_key=stream_key)
    if algorithm == "2-RSPG":
        # Each of the S runs gets NS/S calls
        per_run = budget // config.runs
        if per_run < 1:
            raise ConfigError(f"Budget {budget} is smaller than the run count {config.runs}")
        solver_config = _base_solver_config(context, per_run, config.master_seed)
        T = None if config.post_samples == "half" else int(config.post_samples)
        return two_phase_rspg(problem, geometry, solver_config, S=config.runs, T=T, stream_key=stream_key)
    if algorithm == "2-RSPG-V":
        # Full budget on one trajectory; the solver sizes the batch for NS/S
        solver_config = _base_solver_config(context, budget, config.master_seed)
        T = None if config.post_samples == "half" else int(config.post_samples)
        return two_phase_rspg_v(problem, geometry, solver_config, S=config.runs, T=T, stream_key=stream_key)
    if algorithm == "RSPGF":
        return rspgf_solve(problem, geometry, _base_solver_config(context, budget, config.master_seed),
                           stream_key=stream_key)
    raise ConfigError(f"Unknown algorithm {algorithm!r}")


def _run_replication(context, algorithm, budget, replication, config):
    key = (context.index, ALGORITHMS.index(algorithm), budget, replication)
    started = time.perf_counter()
    run = solve_cell(context, algorithm, budget, config, key)
    rng = make_stream(config.master_seed, StreamPurpose.EVALUATION, *key)
    metrics = evaluate_solution(context.problem, context.geometry, run.output_x, run.output_gamma,
                                config.eval_samples, rng)
    if context.scenario.kind == "s3vm":
        _check_bias_box(context, run)
    elapsed = (time.perf_counter() - started) * 1000.0 if config.record_timings else None
    return ReportRow(
        scenario=context.scenario.name,
        n=context.scenario.n,
        noise=context.scenario.noise,
        algorithm=algorithm,
        NS=budget,
        replication=replication,
        mapping_norm_sq=metrics.mapping_norm_sq,
        objective=metrics.objective,
        zero_ratio=metrics.zero_ratio,
        sfo_calls=run.sfo_calls + run.szo_calls,
        post_calls=run.post_calls,
        wall_ms=elapsed,
    )


def _check_bias_box(context, run):
    points = list(run.trajectory or [])
    for sub in run.phase_metadata.get("runs", []):
        points.extend(sub.trajectory or [])
    points.append(run.output_x)
    lo, hi = context.problem.data.bias_interval
    worst = max(max(lo - p[-1], p[-1] - hi) for p in points)
    if worst > 1e-12:
        raise RuntimeError(f"{run.algorithm} left the bias interval by {worst:.3e}")


def prepare_scenarios(config):
    contexts = []
    geometry = Geometry.euclidean()
    for index, scenario in enumerate(config.scenarios):
        problem = build_problem(scenario.kind, scenario.n, noise=scenario.noise, seed=scenario.seed,
                                sparsity=scenario.sparsity, name=scenario.name, box=scenario.box)
        rng = make_stream(config.master_seed, StreamPurpose.PILOT, index)
        params = estimate_parameters(problem, problem.x1, config.pilot_samples, rng)
        contexts.append(ScenarioContext(index, scenario, problem, params, geometry))
    return contexts


def run_experiment(config, threads=1):
    """
    Run every (scenario, algorithm, budget, replication) task on a thread pool.
    Rows are sorted by key afterwards; invalid cells are recorded as skipped.
    """
    # 1. Pilot estimates per scenario
    contexts = prepare_scenarios(config)
    tasks = [(context, algorithm, budget, rep)
             for context in contexts
             for algorithm in config.algorithms
             for budget in config.budgets
             for rep in range(config.replications)]
    logger.info(f"Running {len(tasks)} replications on {threads} threads...")

    # 2. Run cells on the pool
    rows = []
    skipped = {}
    failures = []
    completed = 0
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, int(threads))) as executor:
        future_to_task = {executor.submit(_run_replication, *task, config): task for task in tasks}
        for future in concurrent.futures.as_completed(future_to_task):
            context, algorithm, budget, rep = future_to_task[future]
            try:
                rows.append(future.result())
            except ConfigError as e:
                cell = (context.scenario.name, algorithm, budget)
                if cell not in skipped:
                    logger.warning(f"Skipping cell {cell}: {e}")
                    skipped[cell] = SkippedCell(*cell, reason=str(e))
            except Exception as e:
                logger.error(f"Error in cell {(context.scenario.name, algorithm, budget, rep)}: {e}")
                failures.append(e)
            completed += 1
            if completed % PROGRESS_EVERY == 0:
                logger.info(f"Completed {completed}/{len(tasks)} replications...")
    if failures:
        raise failures[0]

    # 3. Deterministic order regardless of thread count
    rows.sort(key=ReportRow.sort_key)
    skipped_cells = [skipped[k] for k in sorted(skipped, key=lambda c: (c[0], ALGORITHMS.index(c[1]), c[2]))]
    metadata = {
        "master_seed": config.master_seed,
        "config": _config_dict(config),
        "pilot": {c.scenario.name: c.params.as_dict() for c in contexts},
    }
    logger.info(f"Experiment complete. {len(rows)} rows, {len(skipped_cells)} skipped cells.")
    return ExperimentReport(rows=rows, skipped=skipped_cells, metadata=metadata)


def _config_dict(config):
    out = asdict(config)
    out["scenarios"] = [asdict(s) for s in config.scenarios]
    for key in ("algorithms", "budgets", "formats"):
        out[key] = list(out[key])
    out.pop("output_dir")
    out.pop("record_timings")
    return out
