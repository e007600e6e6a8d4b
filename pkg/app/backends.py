"""
Backends de estimação: interpolação linear generalizada (li), B-spline (spline)
e processo gaussiano (gp). Cada backend monta o Problem, inicializa as
variáveis por dead reckoning, resolve e responde consultas no tempo.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app import gp as gpmod
from app.config import EstimatorConfig, ScenarioConfig, SolveReport, SolverConfig
from app.errors import ConfigError, InvalidArgumentError, NoConvergenceError
from app.factors import (AccelModel, Factor, GyroModel, InitialPriorModel, Landmark, MeasurementModel,
                         MotionPriorFactor, RangeBearingModel, bind_interpolated, bind_segments, gp_interpolator,
                         spline_interpolator)
from app.manifold import SE2, ManifoldElement, glerp, wrap_angle
from app.sim import ACCEL, GYRO, RANGE_BEARING, EstimateSample, InitialPrior, Measurement, sensor_times
from app.solver import CovarianceRecovery, Problem, optimize
from app.spline import KnotVector, SplineTrajectory, control_point_times, eval_lie_many, segment_for_time, uniform_knots

logger = logging.getLogger(__name__)

VARIABLE_COLUMNS = ("kind", "index", "t", "x", "y", "theta", "vx", "vy", "omega", "ax", "ay", "alpha")


# --- Dead reckoning ---

@dataclass(frozen=True, eq=False)
class DeadReckoning:
    times: np.ndarray
    # theta desembrulhado para interpolação
    poses: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray

    def _interp(self, table: np.ndarray, t: float) -> np.ndarray:
        return np.array([np.interp(t, self.times, table[:, c]) for c in range(table.shape[1])])

    def pose(self, t: float) -> np.ndarray:
        p = self._interp(self.poses, t)
        p[2] = wrap_angle(p[2])
        return p

    def velocity(self, t: float) -> np.ndarray:
        return self._interp(self.velocities, t)

    def acceleration(self, t: float) -> np.ndarray:
        return self._interp(self.accelerations, t)


def dead_reckon(prior: InitialPrior, measurements: Sequence[Measurement]) -> DeadReckoning:
    """
    Euler para frente sobre giroscópio/acelerômetro a partir da média do prior inicial.

    v' = a_medida - w x v (velocidade linear no corpo), p' = R(theta) v, theta' = w.
    """
    gyro = [(m.t, m.value[0]) for m in measurements if m.type == GYRO and m.t >= prior.t]
    accel = [(m.t, m.value[0], m.value[1]) for m in measurements if m.type == ACCEL and m.t >= prior.t]
    times = np.array([prior.t] + [t for t, _ in gyro if t > prior.t])
    omega = np.interp(times, [t for t, _ in gyro], [w for _, w in gyro]) if gyro else np.full(times.shape, prior.velocity[2])
    if accel:
        acc = np.column_stack([np.interp(times, [a[0] for a in accel], [a[c] for a in accel]) for c in (1, 2)])
    else:
        acc = np.zeros((times.size, 2))

    n = times.size
    poses = np.zeros((n, 3))
    vels = np.zeros((n, 3))
    accs = np.zeros((n, 3))
    poses[0] = prior.pose
    v = np.array(prior.velocity[:2], dtype=float)
    for j in range(n):
        w = omega[j]
        v_dot = np.array([acc[j, 0] + w * v[1], acc[j, 1] - w * v[0]])
        vels[j] = (v[0], v[1], w)
        accs[j] = (v_dot[0], v_dot[1], 0.0)
        if j + 1 < n:
            h = times[j + 1] - times[j]
            c, s = math.cos(poses[j, 2]), math.sin(poses[j, 2])
            poses[j + 1] = (poses[j, 0] + h * (c * v[0] - s * v[1]),
                            poses[j, 1] + h * (s * v[0] + c * v[1]),
                            poses[j, 2] + h * w)
            v = v + h * v_dot
    return DeadReckoning(times, poses, vels, accs)


# --- Backends ---

def _world_covariance(pose: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """
    Perturbação à direita (corpo) -> (dp no mundo, dtheta).
    """
    c, s = math.cos(pose[2]), math.sin(pose[2])
    T = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    out = T @ cov @ T.T
    return 0.5 * (out + out.T)


def _row(kind: str, index: int, t: float, pose, vel=None, acc=None) -> tuple:
    vel = (None,) * 3 if vel is None else tuple(float(v) for v in vel)
    acc = (None,) * 3 if acc is None else tuple(float(v) for v in acc)
    return (kind, index, float(t), float(pose[0]), float(pose[1]), float(pose[2])) + vel + acc


class Estimator:
    backend = ""

    def __init__(self, config: EstimatorConfig, duration: float):
        self.config = config
        self.duration = duration
        self.descriptor = SE2()
        self.problem = Problem()
        self.keys: List[int] = []

    # --- construção ---

    def initialize(self, dr: DeadReckoning) -> None:
        raise NotImplementedError

    def interpolator(self, stamp: float):
        raise NotImplementedError

    def add_motion_factors(self) -> None:
        pass

    def add_factors(self, measurements: Sequence[Measurement], landmarks: Sequence[Landmark],
                    prior: InitialPrior, scenario: ScenarioConfig) -> None:
        floor = self.config.sigma_floor

        def var(*sigmas):
            return np.diag([max(float(s), floor) ** 2 for s in sigmas])

        by_id: Dict[int, Landmark] = {lm.id: lm for lm in landmarks}
        self.add_motion_factors()
        prior_model = InitialPriorModel(prior.t, np.concatenate([prior.pose, prior.velocity]),
                                        var(*prior.sigma_pose, *prior.sigma_velocity))
        self.problem.add_factor(bind_interpolated(prior_model, self))

        models: List[MeasurementModel] = []
        skipped = 0
        for m in measurements:
            if m.type not in (GYRO, ACCEL, RANGE_BEARING):
                raise InvalidArgumentError(f"Tipo de medida desconhecido: {m.type}")
            if m.type not in self.config.sensors:
                skipped += 1
                continue
            if m.type == GYRO:
                model = GyroModel(m.t, m.value, var(scenario.sigma_gyro))
            elif m.type == ACCEL:
                model = AccelModel(m.t, m.value, var(scenario.sigma_accel, scenario.sigma_accel))
            else:
                if m.landmark_id not in by_id:
                    raise InvalidArgumentError(f"Medida em t={m.t} referencia landmark inexistente {m.landmark_id}")
                model = RangeBearingModel(m.t, m.value, var(scenario.sigma_range, scenario.sigma_bearing),
                                          landmark=by_id[m.landmark_id])
            models.append(model)
        if skipped:
            logger.info(f"[{self.backend.upper()}] {skipped} medidas fora de estimator.sensors ({', '.join(self.config.sensors)})")
        for factor in self.bind_measurements(models):
            self.problem.add_factor(factor)
        logger.info(f"[{self.backend.upper()}] Problema montado: {len(self.problem.variables)} variáveis, "
                    f"{len(self.problem.factors)} fatores")

    def bind_measurements(self, models: Sequence[MeasurementModel]) -> List[Factor]:
        """
        Um fator por medida; backends de spline agrupam por segmento.

        Medidas que exigem derivada acima da fornecida pela trajetória
        levantam UnsupportedError.
        """
        return [bind_interpolated(model, self) for model in models]

    # --- solução e consulta ---

    def solve(self, config: Optional[SolverConfig] = None) -> SolveReport:
        try:
            return optimize(self.problem, config)
        finally:
            self.refresh()

    def refresh(self) -> None:
        raise NotImplementedError

    @property
    def domain(self) -> Tuple[float, float]:
        raise NotImplementedError

    def contains(self, t: float) -> bool:
        # todos os backends aceitam o fim do intervalo
        lo, hi = self.domain
        return lo <= t <= hi

    def sample(self, t: float) -> EstimateSample:
        raise NotImplementedError

    def samples(self, times: Sequence[float]) -> List[EstimateSample]:
        return [self.sample(float(t)) for t in times]

    def variable_rows(self) -> List[tuple]:
        raise NotImplementedError

    def posterior(self) -> Optional[dict]:
        return None

    def estimate_rows(self, query_hz: float) -> List[tuple]:
        rows = []
        times = sensor_times(self.duration, query_hz)
        for t, s in zip(times, self.samples(times)):
            if s.covariance is None:
                cov = (None,) * 4
            else:
                c = s.covariance
                cov = (float(c[0, 0]), float(c[0, 1]), float(c[1, 1]), float(c[2, 2]))
            rows.append((float(t), float(s.pose[0]), float(s.pose[1]), float(s.pose[2])) + cov)
        return rows


class SplineEstimator(Estimator):
    backend = "spline"

    def __init__(self, config: EstimatorConfig, duration: float):
        super().__init__(config, duration)
        k = config.order
        if config.knots is not None:
            knot_vec = KnotVector(config.knots)
            n_control = len(knot_vec) - k + 2
            uniform = False
        else:
            knot_vec, n_control = uniform_knots(0.0, duration, config.knot_hz, k)
            uniform = config.uniform
        if n_control < k:
            raise ConfigError(f"Knots insuficientes para um spline de ordem {k}", field="estimator.knots")
        identity = ManifoldElement(self.descriptor, self.descriptor.identity())
        self.spline = SplineTrajectory(self.descriptor, k, knot_vec, (identity,) * n_control, uniform, closed=True)
        lo, hi = self.spline.domain
        if lo > 0.0 or hi < duration:
            raise ConfigError(f"Domínio do spline [{lo}, {hi}] não cobre [0, {duration}]", field="estimator.knots")

    def initialize(self, dr: DeadReckoning) -> None:
        times = control_point_times(self.spline)
        points = [dr.pose(float(np.clip(t, dr.times[0], dr.times[-1]))) for t in times]
        self.keys = [self.problem.add_variable(self.descriptor, p, label=f"cp[{j}]", time=float(t))
                     for j, (p, t) in enumerate(zip(points, times))]
        self.refresh()

    def interpolator(self, stamp: float):
        return spline_interpolator(self.spline, self.keys, stamp)

    def bind_measurements(self, models: Sequence[MeasurementModel]) -> List[Factor]:
        return bind_segments(models, self.spline, self.keys)

    def refresh(self) -> None:
        values = self.problem.values()
        if self.keys:
            self.spline = self.spline.with_control_points([values[k] for k in self.keys])

    @property
    def domain(self) -> Tuple[float, float]:
        return self.spline.domain

    def sample(self, t: float) -> EstimateSample:
        return self.samples([t])[0]

    def samples(self, times: Sequence[float]) -> List[EstimateSample]:
        poses = eval_lie_many(self.spline, times, 0).value
        return [EstimateSample(np.array(p)) for p in poses]

    def variable_rows(self) -> List[tuple]:
        times = control_point_times(self.spline)
        return [_row("control_point", j, times[j], cp.data) for j, cp in enumerate(self.spline.control_points)]

    @classmethod
    def restore(cls, config: EstimatorConfig, duration: float, rows: Sequence[dict],
                posterior: Optional[dict] = None) -> "SplineEstimator":
        est = cls(config, duration)
        est.spline = est.spline.with_control_points([(r["x"], r["y"], r["theta"]) for r in rows])
        return est


class LinearInterpolationEstimator(Estimator):
    """
    Poses discretas numa grade uniforme de knot_hz, consultadas por GLERP (spline de ordem 2 fechado).

    A grade não segue os tempos de cada medida; com knot_hz = rb_rate (10 Hz
    nos dois padrões) ela coincide com os tempos de range-bearing. A trajetória
    só tem primeira derivada, então o acelerômetro precisa ficar fora de
    estimator.sensors.
    """
    backend = "li"

    def __init__(self, config: EstimatorConfig, duration: float, times: Optional[Sequence[float]] = None):
        super().__init__(config, duration)
        times = gpmod.support_times(0.0, duration, config.knot_hz) if times is None else np.asarray(times, dtype=float)
        identity = ManifoldElement(self.descriptor, self.descriptor.identity())
        self.spline = SplineTrajectory(self.descriptor, 2, KnotVector(times), (identity,) * len(times), closed=True)

    def initialize(self, dr: DeadReckoning) -> None:
        times = self.spline.knots.times
        self.keys = [self.problem.add_variable(self.descriptor, dr.pose(float(np.clip(t, dr.times[0], dr.times[-1]))),
                                               label=f"pose[{j}]", time=float(t))
                     for j, t in enumerate(times)]
        self.refresh()

    def interpolator(self, stamp: float):
        return spline_interpolator(self.spline, self.keys, stamp)

    def bind_measurements(self, models: Sequence[MeasurementModel]) -> List[Factor]:
        return bind_segments(models, self.spline, self.keys)

    def refresh(self) -> None:
        values = self.problem.values()
        if self.keys:
            self.spline = self.spline.with_control_points([values[k] for k in self.keys])

    @property
    def domain(self) -> Tuple[float, float]:
        return self.spline.domain

    def sample(self, t: float) -> EstimateSample:
        i, u = segment_for_time(self.spline, t)
        cps = self.spline.control_points
        return EstimateSample(np.array(glerp(cps[i], cps[i + 1], u).data))

    def variable_rows(self) -> List[tuple]:
        times = self.spline.knots.times
        return [_row("pose", j, times[j], cp.data) for j, cp in enumerate(self.spline.control_points)]

    @classmethod
    def restore(cls, config: EstimatorConfig, duration: float, rows: Sequence[dict],
                posterior: Optional[dict] = None) -> "LinearInterpolationEstimator":
        est = cls(config, duration, [r["t"] for r in rows])
        est.spline = est.spline.with_control_points([(r["x"], r["y"], r["theta"]) for r in rows])
        return est


class GpEstimator(Estimator):
    backend = "gp"

    def __init__(self, config: EstimatorConfig, duration: float, times: Optional[Sequence[float]] = None):
        super().__init__(config, duration)
        self.prior = gpmod.GpPriorModel.from_name(config.prior, np.diag(config.qc))
        if self.prior.dof != self.descriptor.dof:
            raise ConfigError(f"qc precisa de {self.descriptor.dof} entradas", field="estimator.qc")
        self.state_descriptor = self.prior.state_descriptor(self.descriptor)
        times = gpmod.support_times(0.0, duration, config.state_hz) if times is None else np.asarray(times, dtype=float)
        blocks = self.prior.derivative_blocks
        zero = np.zeros(self.state_descriptor.ambient_dim)
        states = tuple(gpmod.state_from_array(self.descriptor, blocks, float(t), zero) for t in times)
        self.traj = gpmod.GpTrajectory(self.descriptor, self.prior, states)
        self.joints: Optional[List[np.ndarray]] = None

    def initialize(self, dr: DeadReckoning) -> None:
        blocks = self.prior.derivative_blocks
        for j, t in enumerate(self.traj.times):
            tc = float(np.clip(t, dr.times[0], dr.times[-1]))
            parts = [dr.pose(tc), dr.velocity(tc)] + ([dr.acceleration(tc)] if blocks == 3 else [])
            self.keys.append(self.problem.add_variable(self.state_descriptor, np.concatenate(parts),
                                                       label=f"state[{j}]", time=float(t)))
        self.refresh()

    def add_motion_factors(self) -> None:
        times = self.traj.times
        for j in range(len(self.keys) - 1):
            self.problem.add_factor(MotionPriorFactor(self.prior, self.descriptor, (self.keys[j], self.keys[j + 1]),
                                                      float(times[j + 1] - times[j])))

    def interpolator(self, stamp: float):
        return gp_interpolator(self.traj, self.keys, stamp)

    def refresh(self) -> None:
        values = self.problem.values()
        if self.keys:
            self.traj = self.traj.with_states([values[k] for k in self.keys])

    def solve(self, config: Optional[SolverConfig] = None) -> SolveReport:
        report = super().solve(config)
        threads = config.threads if config else 1
        recovery = CovarianceRecovery(self.problem, threads)
        self.joints = [recovery.joint([self.keys[j], self.keys[j + 1]]) for j in range(len(self.keys) - 1)]
        return report

    @property
    def domain(self) -> Tuple[float, float]:
        return self.traj.domain

    def sample(self, t: float) -> EstimateSample:
        state = gpmod.interpolate_mean(self.traj, t)
        pose = np.array(state.element.data)
        if self.joints is None:
            return EstimateSample(pose)
        i = self.traj.segment_for_time(t)
        cov = gpmod.interpolate_covariance(self.traj, t, self.joints[i])
        return EstimateSample(pose, _world_covariance(pose, cov[:3, :3]))

    def variable_rows(self) -> List[tuple]:
        rows = []
        for j, s in enumerate(self.traj.states):
            rows.append(_row("support_state", j, s.time, s.element.data, s.velocity, s.acceleration))
        return rows

    def posterior(self) -> Optional[dict]:
        if self.joints is None:
            return None
        return {
            "times": np.asarray(self.traj.times),
            "joint": np.stack(self.joints),
            "qc": np.asarray(self.prior.qc),
            "derivative_blocks": np.array(self.prior.derivative_blocks),
        }

    @classmethod
    def restore(cls, config: EstimatorConfig, duration: float, rows: Sequence[dict],
                posterior: Optional[dict] = None) -> "GpEstimator":
        est = cls(config, duration, [r["t"] for r in rows])
        blocks = est.prior.derivative_blocks
        raws = []
        for r in rows:
            parts = [r["x"], r["y"], r["theta"], r["vx"], r["vy"], r["omega"]]
            if blocks == 3:
                parts += [r["ax"], r["ay"], r["alpha"]]
            raws.append(np.array(parts, dtype=float))
        est.traj = est.traj.with_states(raws)
        if posterior is not None:
            est.joints = list(np.asarray(posterior["joint"], dtype=float))
        return est


BACKENDS = {
    "li": LinearInterpolationEstimator,
    "spline": SplineEstimator,
    "gp": GpEstimator,
}


def make_estimator(config: EstimatorConfig, duration: float) -> Estimator:
    if config.backend not in BACKENDS:
        raise ConfigError(f"Backend desconhecido: {config.backend}", field="estimator.backend")
    return BACKENDS[config.backend](config, duration)


def run_estimation(scenario: ScenarioConfig, measurements: Sequence[Measurement], landmarks: Sequence[Landmark],
                   prior: InitialPrior, solver: Optional[SolverConfig] = None) -> Tuple[Estimator, SolveReport]:
    estimator = make_estimator(scenario.estimator, scenario.duration)
    estimator.initialize(dead_reckon(prior, measurements))
    estimator.add_factors(measurements, landmarks, prior, scenario)
    try:
        report = estimator.solve(solver)
    except NoConvergenceError as e:
        e.estimator = estimator
        raise
    return estimator, report


def restore_estimator(config: EstimatorConfig, duration: float, rows: Sequence[dict],
                      posterior: Optional[dict] = None) -> Estimator:
    if config.backend not in BACKENDS:
        raise ConfigError(f"Backend desconhecido: {config.backend}", field="estimator.backend")
    return BACKENDS[config.backend].restore(config, duration, rows, posterior)
