"""
Gerador determinístico de cenários 2D: trajetória verdade por spline SE(2) de
ordem alta, campo de landmarks e medidas ruidosas de giroscópio, acelerômetro
e range-bearing. Métricas de avaliação (RMSE e NEES).
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np

from app.config import ScenarioConfig
from app.errors import ConfigError, InvalidArgumentError, OutOfDomainError
from app.factors import Landmark, body_acceleration
from app.manifold import SE2, ManifoldElement, glerp, wrap_angle
from app.spline import SplineTrajectory, eval_lie, eval_lie_many, uniform_knots

logger = logging.getLogger(__name__)

# Passo máximo da caminhada aleatória por knot (corpo: frente, lado; e rumo)
_STEP_FORWARD = (0.2, 0.9)
_STEP_LATERAL = 0.1
_STEP_HEADING = 0.3

GYRO = "gyro"
ACCEL = "accel"
RANGE_BEARING = "rb"
_SENSOR_ORDER = {GYRO: 0, ACCEL: 1, RANGE_BEARING: 2}


@dataclass(frozen=True)
class TruthSample:
    t: float
    pose: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray


@dataclass(frozen=True, eq=False)
class GroundTruth:
    spline: SplineTrajectory
    landmarks: Tuple[Landmark, ...]
    duration: float

    def sample(self, t: float) -> TruthSample:
        s = eval_lie(self.spline, t, 2)
        return TruthSample(t, np.array(s.element.data), np.array(s.velocity.data), np.array(s.acceleration.data))

    def sample_many(self, times: Sequence[float]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Poses, velocidades e acelerações (uma linha por tempo), avaliadas em lote.
        """
        res = eval_lie_many(self.spline, times, 2)
        return res.value, res.velocity, res.acceleration


@dataclass(frozen=True)
class Measurement:
    type: str
    t: float
    value: Tuple[float, ...]
    landmark_id: Optional[int] = None


@dataclass(frozen=True)
class InitialPrior:
    t: float
    pose: Tuple[float, float, float]
    velocity: Tuple[float, float, float]
    sigma_pose: Tuple[float, float, float]
    sigma_velocity: Tuple[float, float, float]


def _streams(seed: int) -> List[np.random.Generator]:
    # caminhada, landmarks, giroscópio, acelerômetro, range-bearing, prior inicial
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(6)]


def generate_scenario(config: ScenarioConfig) -> GroundTruth:
    if config.duration <= 2.0 / config.truth_knot_hz:
        raise ConfigError("duration precisa ser maior que 2/truth_knot_hz", field="duration")
    if config.truth_order < config.estimator.order + 2:
        logger.warning(f"[SIM] Ordem da verdade ({config.truth_order}) < ordem do estimador + 2 "
                       f"({config.estimator.order + 2}); o estimador pode representar a verdade exatamente")
    walk, lm_rng = _streams(config.seed)[:2]
    desc = SE2()
    knots, n_control = uniform_knots(0.0, config.duration, config.truth_knot_hz, config.truth_order)

    points = np.zeros((n_control, 3))
    for j in range(1, n_control):
        x, y, theta = points[j - 1]
        fwd = walk.uniform(*_STEP_FORWARD)
        lat = walk.uniform(-_STEP_LATERAL, _STEP_LATERAL)
        dtheta = walk.uniform(-_STEP_HEADING, _STEP_HEADING)
        c, s = math.cos(theta), math.sin(theta)
        points[j] = (x + c * fwd - s * lat, y + s * fwd + c * lat, wrap_angle(theta + dtheta))
    control = tuple(ManifoldElement(desc, p) for p in points)
    spline = SplineTrajectory(desc, config.truth_order, knots, control, closed=True)

    half = config.field_extent / 2.0
    positions = lm_rng.uniform(-half, half, size=(config.landmark_count, 2))
    landmarks = tuple(Landmark(i, (float(p[0]), float(p[1]))) for i, p in enumerate(positions))
    logger.info(f"[SIM] Cenário gerado: {n_control} pontos de controle, {len(landmarks)} landmarks")
    return GroundTruth(spline, landmarks, config.duration)


def sensor_times(duration: float, rate: float) -> np.ndarray:
    return np.arange(int(math.floor(duration * rate + 1e-9)) + 1) / rate


def sample_measurements(truth: GroundTruth, config: ScenarioConfig) -> List[Measurement]:
    _, _, gyro_rng, accel_rng, rb_rng, _ = _streams(config.seed)
    out: List[Measurement] = []

    times = sensor_times(truth.duration, config.gyro_rate)
    _, vels, _ = truth.sample_many(times)
    for t, v in zip(times, vels):
        out.append(Measurement(GYRO, float(t), (float(v[2] + gyro_rng.normal(0.0, config.sigma_gyro)),)))

    times = sensor_times(truth.duration, config.accel_rate)
    _, vels, accs = truth.sample_many(times)
    for t, v, acc in zip(times, vels, accs):
        a, _, _ = body_acceleration(v, acc)
        noise = accel_rng.normal(0.0, config.sigma_accel, size=2)
        out.append(Measurement(ACCEL, float(t), (float(a[0] + noise[0]), float(a[1] + noise[1]))))

    lm_xy = np.array([lm.position for lm in truth.landmarks]).reshape(-1, 2)
    times = sensor_times(truth.duration, config.rb_rate)
    poses, _, _ = truth.sample_many(times)
    for t, pose in zip(times, poses):
        delta = lm_xy - pose[:2]
        dist = np.hypot(delta[:, 0], delta[:, 1])
        visible = np.flatnonzero((dist < config.visible_range) & (dist > 0.0))
        if visible.size == 0:
            continue
        j = int(visible[rb_rng.integers(visible.size)])
        bearing = wrap_angle(math.atan2(delta[j, 1], delta[j, 0]) - pose[2])
        noise = rb_rng.normal(0.0, [config.sigma_range, config.sigma_bearing])
        out.append(Measurement(RANGE_BEARING, float(t),
                               (float(dist[j] + noise[0]), float(wrap_angle(bearing + noise[1]))),
                               truth.landmarks[j].id))

    out.sort(key=lambda m: (m.t, _SENSOR_ORDER[m.type]))
    logger.info(f"[SIM] {len(out)} medidas amostradas")
    return out


def draw_initial_prior(truth: GroundTruth, config: ScenarioConfig) -> InitialPrior:
    """
    Média do prior inicial: estado verdade em t=0 perturbado pelos desvios configurados.
    """
    rng = _streams(config.seed)[5]
    s = truth.sample(0.0)
    desc = SE2()
    pose = desc.boxplus(s.pose, rng.normal(0.0, config.initial_sigma_pose))
    vel = s.velocity + rng.normal(0.0, config.initial_sigma_velocity)
    return InitialPrior(0.0, tuple(float(v) for v in pose), tuple(float(v) for v in vel),
                        tuple(config.initial_sigma_pose), tuple(config.initial_sigma_velocity))


# --- Avaliação ---

@dataclass(frozen=True)
class EstimateSample:
    pose: np.ndarray
    # covariância de (dp no mundo, dtheta); None quando o backend não fornece
    covariance: Optional[np.ndarray] = None


class TrajectoryEstimate(Protocol):
    @property
    def domain(self) -> Tuple[float, float]:
        ...

    def sample(self, t: float) -> EstimateSample:
        ...


@dataclass(frozen=True, eq=False)
class TabulatedTrajectory:
    """
    Linhas de estimate.csv consultadas por GLERP entre linhas vizinhas.
    """
    times: np.ndarray
    poses: np.ndarray
    covariances: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.times) < 1 or np.any(np.diff(self.times) <= 0.0):
            raise InvalidArgumentError("Tempos da trajetória tabelada precisam ser estritamente crescentes")

    @property
    def domain(self) -> Tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def sample(self, t: float) -> EstimateSample:
        lo, hi = self.domain
        if not (lo <= t <= hi):
            raise OutOfDomainError(f"Tempo {t} fora da trajetória tabelada [{lo}, {hi}]", (lo, hi), [t])
        i = min(int(np.searchsorted(self.times, t, side="right")) - 1, len(self.times) - 1)
        cov = None
        if t == self.times[i] or i == len(self.times) - 1:
            pose = np.array(self.poses[i])
            if self.covariances is not None:
                cov = np.array(self.covariances[i])
        else:
            alpha = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
            desc = SE2()
            pose = np.array(glerp(ManifoldElement(desc, self.poses[i]), ManifoldElement(desc, self.poses[i + 1]), alpha).data)
            if self.covariances is not None:
                cov = (1.0 - alpha) * self.covariances[i] + alpha * self.covariances[i + 1]
        if cov is not None and not np.all(np.isfinite(cov)):
            cov = None
        return EstimateSample(pose, cov)


def evaluate(estimate: TrajectoryEstimate, truth: GroundTruth, query_rate: float) -> dict:
    """
    RMSE de posição e rumo em consultas uniformes e NEES médio onde há covariância.
    """
    if query_rate <= 0.0:
        raise InvalidArgumentError(f"Frequência de consulta inválida: {query_rate}")
    times = sensor_times(truth.duration, query_rate)
    lo, hi = estimate.domain
    if lo > times[0] or hi < times[-1]:
        missing = (float(times[0]), lo) if lo > times[0] else (hi, float(times[-1]))
        raise OutOfDomainError(
            f"A estimativa cobre [{lo}, {hi}] mas a avaliação exige [{times[0]}, {times[-1]}]; "
            f"intervalo descoberto {missing}", missing, [float(times[0]), float(times[-1])])

    truth_poses, _, _ = truth.sample_many(times)
    pos_sq, head_sq, nees = [], [], []
    for t, truth_pose in zip(times, truth_poses):
        est = estimate.sample(float(t))
        err = np.array([truth_pose[0] - est.pose[0], truth_pose[1] - est.pose[1],
                        wrap_angle(truth_pose[2] - est.pose[2])])
        pos_sq.append(err[0] ** 2 + err[1] ** 2)
        head_sq.append(err[2] ** 2)
        if est.covariance is not None:
            nees.append(float(err @ np.linalg.solve(est.covariance, err)))
    return {
        "position_rmse": float(np.sqrt(np.mean(pos_sq))),
        "heading_rmse": float(np.sqrt(np.mean(head_sq))),
        "mean_nees": float(np.mean(nees)) if nees else None,
    }
