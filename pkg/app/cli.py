"""
Linha de comando: simulate, estimate, evaluate e interpolate.

    python -m app.cli simulate --config cenario.json --out runs/sim
    python -m app.cli estimate --scenario runs/sim --backend gp --out runs/gp
    python -m app.cli evaluate --scenario runs/sim --estimate runs/gp
    python -m app.cli interpolate --estimate runs/gp --times 1.0,2.5

Códigos de saída: 0 sucesso, 2 uso/configuração, 3 falha numérica.
Logs vão para stderr; stdout fica só com os dados.
"""
import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from app import __version__
from app.backends import restore_estimator, run_estimation
from app.config import RunManifest, ScenarioConfig, SolverConfig, load_scenario_config, parse_scenario_config
from app.errors import EstimationError, InvalidArgumentError, NoConvergenceError, OutOfDomainError
from app.sim import InitialPrior, draw_initial_prior, evaluate, generate_scenario, sample_measurements, sensor_times
from app import storage

logger = logging.getLogger(__name__)

TRUTH_HZ = 100.0
DEFAULT_QUERY_HZ = 100.0


def version_string() -> str:
    return f"ctestim-{__version__}"


# --- simulate ---

def simulate_scenario(config: ScenarioConfig, out: Path) -> RunManifest:
    out.mkdir(parents=True, exist_ok=True)
    truth = generate_scenario(config)
    measurements = sample_measurements(truth, config)
    prior = draw_initial_prior(truth, config)

    times = sensor_times(config.duration, TRUTH_HZ)
    poses, vels, _ = truth.sample_many(times)
    rows = [(float(t), *p.tolist(), *v.tolist()) for t, p, v in zip(times, poses, vels)]
    storage.write_csv(out / storage.TRUTH_FILE, storage.TRUTH_HEADER, rows)
    storage.write_measurements(out / storage.MEASUREMENTS_FILE, measurements)
    storage.write_landmarks(out / storage.LANDMARKS_FILE, truth.landmarks)

    manifest = RunManifest(
        command="simulate",
        version=version_string(),
        seed=config.seed,
        config=config.model_dump(mode="json"),
        initial_prior={
            "t": prior.t,
            "pose": list(prior.pose),
            "velocity": list(prior.velocity),
            "sigma_pose": list(prior.sigma_pose),
            "sigma_velocity": list(prior.sigma_velocity),
        },
        metrics={"measurements": len(measurements), "landmarks": len(truth.landmarks)},
    )
    storage.write_json_atomic(out / storage.MANIFEST_FILE, manifest.model_dump(mode="json"))
    return manifest


def cmd_simulate(args) -> int:
    config = load_scenario_config(args.config)
    logger.info(f"[CLI] simulate seed={config.seed} duração={config.duration}s -> {args.out}")
    simulate_scenario(config, Path(args.out))
    return 0


# --- estimate ---

def _estimator_overrides(args) -> Dict[str, Any]:
    overrides = {}
    for flag, field in (("backend", "backend"), ("order", "order"), ("knot_hz", "knot_hz"),
                        ("prior", "prior"), ("state_hz", "state_hz")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    if getattr(args, "qc", None) is not None:
        overrides["qc"] = [args.qc] * 3
    if getattr(args, "sensors", None) is not None:
        overrides["sensors"] = [s.strip() for s in args.sensors.split(",") if s.strip() != ""]
    return overrides


def load_scenario_dir(scenario_dir: Path):
    manifest = storage.read_json(scenario_dir / storage.MANIFEST_FILE)
    if manifest.get("command") != "simulate" or "initial_prior" not in manifest:
        raise InvalidArgumentError(f"{scenario_dir} não é um diretório de cenário")
    config = parse_scenario_config(manifest["config"])
    p = manifest["initial_prior"]
    prior = InitialPrior(p["t"], tuple(p["pose"]), tuple(p["velocity"]), tuple(p["sigma_pose"]), tuple(p["sigma_velocity"]))
    measurements = storage.read_measurements(scenario_dir / storage.MEASUREMENTS_FILE)
    landmarks = storage.read_landmarks(scenario_dir / storage.LANDMARKS_FILE)
    return config, prior, measurements, landmarks


def estimate_scenario(scenario_dir: Path, out: Path, overrides: Dict[str, Any],
                      solver: SolverConfig, query_hz: float = DEFAULT_QUERY_HZ) -> RunManifest:
    started = time.perf_counter()
    config, prior, measurements, landmarks = load_scenario_dir(scenario_dir)
    data = config.model_dump(mode="json")
    data["estimator"].update(overrides)
    config = parse_scenario_config(data)
    out.mkdir(parents=True, exist_ok=True)

    manifest = RunManifest(command="estimate", version=version_string(), seed=config.seed,
                           backend=config.estimator.backend, config=config.model_dump(mode="json"),
                           query_hz=query_hz)
    failure: Optional[NoConvergenceError] = None
    try:
        estimator, report = run_estimation(config, measurements, landmarks, prior, solver)
    except NoConvergenceError as e:
        failure = e
        estimator, report = getattr(e, "estimator", None), e.report
        manifest.error = e.to_dict()
    manifest.solve_report = report
    manifest.timings["solve_s"] = report.wall_time_s if report else 0.0

    if estimator is not None:
        rows = estimator.estimate_rows(query_hz)
        storage.write_csv(out / storage.ESTIMATE_FILE, storage.ESTIMATE_HEADER, rows)
        storage.write_csv(out / storage.VARIABLES_FILE, storage.VARIABLE_HEADER, estimator.variable_rows())
        posterior = estimator.posterior()
        if posterior is not None:
            storage.write_posterior(out / storage.POSTERIOR_FILE, posterior)
        table = storage.read_estimate_table(out / storage.ESTIMATE_FILE)
        manifest.metrics = evaluate(table, generate_scenario(config), query_hz)

    manifest.timings["total_s"] = time.perf_counter() - started
    storage.write_json_atomic(out / storage.MANIFEST_FILE, manifest.model_dump(mode="json"))
    if failure is not None:
        raise failure
    return manifest


def _solver_config(args) -> SolverConfig:
    data = {"threads": args.threads}
    if args.max_iter is not None:
        data["max_iter"] = args.max_iter
    return SolverConfig(**data)


def cmd_estimate(args) -> int:
    logger.info(f"[CLI] estimate {args.scenario} backend={args.backend} -> {args.out}")
    estimate_scenario(Path(args.scenario), Path(args.out), _estimator_overrides(args), _solver_config(args), args.query_hz)
    return 0


# --- evaluate ---

def evaluate_dirs(scenario_dir: Path, estimate_dir: Path) -> Dict[str, Any]:
    config, _, _, _ = load_scenario_dir(scenario_dir)
    table = storage.read_estimate_table(estimate_dir / storage.ESTIMATE_FILE)
    manifest_path = estimate_dir / storage.MANIFEST_FILE
    manifest = storage.read_json(manifest_path) if manifest_path.exists() else {}
    query_hz = manifest.get("query_hz") or DEFAULT_QUERY_HZ
    metrics = evaluate(table, generate_scenario(config), query_hz)
    metrics["runtime_s"] = manifest.get("timings", {}).get("total_s")
    return metrics


def cmd_evaluate(args) -> int:
    metrics = evaluate_dirs(Path(args.scenario), Path(args.estimate))
    print(json.dumps(metrics, sort_keys=True))
    return 0


# --- interpolate ---

def parse_times(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip() != ""]
    except ValueError:
        raise InvalidArgumentError(f"Lista de tempos inválida: {text}")


def interpolate_rows(estimate_dir: Path, times: Sequence[float]) -> List[tuple]:
    manifest = storage.read_json(estimate_dir / storage.MANIFEST_FILE)
    if "config" not in manifest:
        raise InvalidArgumentError(f"{estimate_dir} não é um diretório de estimativa")
    config = parse_scenario_config(manifest["config"])
    variables = storage.read_variables(estimate_dir / storage.VARIABLES_FILE)
    posterior = storage.read_posterior(estimate_dir / storage.POSTERIOR_FILE)
    estimator = restore_estimator(config.estimator, config.duration, variables, posterior)

    lo, hi = estimator.domain
    outside = [t for t in times if not estimator.contains(t)]
    if outside:
        raise OutOfDomainError(f"Tempos fora do domínio [{lo}, {hi}]: {', '.join(repr(t) for t in outside)}",
                               (lo, hi), outside)
    rows = []
    for t in times:
        s = estimator.sample(t)
        cov = (None,) * 4 if s.covariance is None else (s.covariance[0, 0], s.covariance[0, 1],
                                                        s.covariance[1, 1], s.covariance[2, 2])
        rows.append((t, *s.pose.tolist(), *cov))
    return rows


def cmd_interpolate(args) -> int:
    rows = interpolate_rows(Path(args.estimate), parse_times(args.times))
    storage.write_csv(sys.stdout, storage.ESTIMATE_HEADER, rows)
    return 0


# --- parser ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctestim", description="Estimação de trajetórias em tempo contínuo")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Gera cenário e medidas")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="Roda um estimador sobre um cenário")
    p.add_argument("--scenario", required=True)
    p.add_argument("--backend", choices=["li", "spline", "gp"])
    p.add_argument("--out", required=True)
    p.add_argument("--order", type=int)
    p.add_argument("--knot-hz", type=float)
    p.add_argument("--prior", choices=["wnoa", "wnoj"])
    p.add_argument("--state-hz", type=float)
    p.add_argument("--qc", type=float)
    p.add_argument("--sensors", help="Lista separada por vírgulas (gyro,accel,rb)")
    p.add_argument("--query-hz", type=float, default=DEFAULT_QUERY_HZ)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("evaluate", help="Métricas de uma estimativa contra a verdade")
    p.add_argument("--scenario", required=True)
    p.add_argument("--estimate", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("interpolate", help="Consulta a estimativa em tempos arbitrários")
    p.add_argument("--estimate", required=True)
    p.add_argument("--times", required=True)
    p.set_defaults(func=cmd_interpolate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EstimationError as e:
        logger.error(f"[CLI] {type(e).__name__}: {e.message}")
        print(f"erro: {e.message}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        # validação pydantic de flags (ex.: --threads 0)
        print(f"erro: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
