"""
Fatores do grafo: modelos de medida (giroscópio, acelerômetro, range-bearing,
pose, prior inicial), prior de movimento GP e amarração por interpolação.

Um MeasurementModel avalia o resíduo sobre um InterpolatedState (pose,
velocidade e aceleração no tempo da medida, com Jacobianos em relação às
variáveis amarradas). O interpolador vem do backend: k pontos de controle
para splines, um ou dois estados de suporte para GP.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import ClassVar, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.linalg import block_diag

from app import gp as gpmod
from app.errors import (DegenerateGeometryError, EstimationError, FactorEvaluationError,
                        InvalidArgumentError, UnsupportedError)
from app.manifold import GroupDescriptor, GroupKind, wrap_angle
from app.spline import SplineTrajectory, cumulative_eval, cumulative_eval_batch, segment_for_time

logger = logging.getLogger(__name__)


class FactorKind(str, Enum):
    GYRO = "gyro"
    ACCEL = "accel"
    RANGE_BEARING = "rb"
    POSE = "pose"
    INITIAL_PRIOR = "initial_prior"
    MOTION_PRIOR = "motion_prior"


@dataclass(frozen=True)
class Landmark:
    id: int
    position: Tuple[float, float]


def sqrt_information(cov: np.ndarray) -> np.ndarray:
    """
    Fator triangular inferior L com Σ^-1 = L L^T; o resíduo branqueado é L^T e.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise InvalidArgumentError("Covariância de ruído precisa ser simétrica")
    try:
        return np.linalg.cholesky(np.linalg.inv(0.5 * (cov + cov.T)))
    except np.linalg.LinAlgError as e:
        raise InvalidArgumentError(f"Covariância de ruído não é definida positiva: {e}")


# --- Resíduos ---

def _angular_index(desc: GroupDescriptor) -> int:
    if desc.kind == GroupKind.SE2:
        return 2
    if desc.kind == GroupKind.SO2:
        return 0
    raise UnsupportedError(f"Giroscópio exige trajetória em SO2/SE2, recebeu {desc}")


def gyro_residual(desc: GroupDescriptor, velocity: np.ndarray, z: float) -> Tuple[np.ndarray, np.ndarray]:
    idx = _angular_index(desc)
    d_vel = np.zeros((1, desc.dof))
    d_vel[0, idx] = 1.0
    return np.array([velocity[idx] - float(np.ravel(z)[0])]), d_vel


def body_acceleration(velocity: np.ndarray, acceleration: np.ndarray):
    """
    Aceleração linear no corpo R^T p'' = (a_x - w v_y, a_y + w v_x) e Jacobianos em (v, a).
    """
    vx, vy, w = velocity
    value = np.array([acceleration[0] - w * vy, acceleration[1] + w * vx])
    d_vel = np.array([[0.0, -w, -vy],
                      [w, 0.0, vx]])
    d_acc = np.array([[1.0, 0.0, 0.0],
                      [0.0, 1.0, 0.0]])
    return value, d_vel, d_acc


def accel_residual(velocity: np.ndarray, acceleration: np.ndarray, z: np.ndarray):
    value, d_vel, d_acc = body_acceleration(velocity, acceleration)
    return value - np.asarray(z, dtype=float), d_vel, d_acc


def range_bearing_residual(pose: np.ndarray, landmark: Sequence[float], z: Sequence[float]):
    px, py, theta = pose
    dx, dy = landmark[0] - px, landmark[1] - py
    r2 = dx * dx + dy * dy
    if r2 == 0.0:
        raise DegenerateGeometryError(f"Landmark coincide com a posição ({px}, {py})")
    r = np.sqrt(r2)
    bearing = wrap_angle(np.arctan2(dy, dx) - theta)
    e = np.array([r - z[0], wrap_angle(bearing - z[1])])
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    d_pose = np.zeros((2, 3))
    d_pose[0, :2] = -np.array([dx, dy]) / r @ rot
    d_pose[1, :2] = np.array([dy, -dx]) / r2 @ rot
    d_pose[1, 2] = -1.0
    return e, d_pose


def pose_residual(desc: GroupDescriptor, pose: np.ndarray, z: np.ndarray):
    e = desc.boxminus(pose, np.asarray(z, dtype=float))
    return e, desc.jr_inv(e)


def initial_prior_residual(desc: GroupDescriptor, state: np.ndarray, mean: np.ndarray):
    """
    e = state ⊟ mean; para estados compostos as derivadas entram como diferenças.
    """
    return pose_residual(desc, state, mean)


# --- Estado interpolado ---

@dataclass(frozen=True, eq=False)
class InterpolatedState:
    descriptor: GroupDescriptor
    pose: np.ndarray
    velocity: Optional[np.ndarray]
    acceleration: Optional[np.ndarray]
    d_pose: List[np.ndarray]
    d_velocity: Optional[List[np.ndarray]] = None
    d_acceleration: Optional[List[np.ndarray]] = None

    def chain(self, d_pose: Optional[np.ndarray] = None, d_velocity: Optional[np.ndarray] = None,
              d_acceleration: Optional[np.ndarray] = None) -> List[np.ndarray]:
        """
        Compõe Jacobianos do resíduo em (pose, v, a) com os da interpolação, por variável.
        """
        out = []
        for m in range(len(self.d_pose)):
            j = None
            for de, dx in ((d_pose, self.d_pose), (d_velocity, self.d_velocity), (d_acceleration, self.d_acceleration)):
                if de is None:
                    continue
                term = de @ dx[m]
                j = term if j is None else j + term
            out.append(j)
        return out


class Interpolator(Protocol):
    descriptor: GroupDescriptor
    keys: Tuple[int, ...]
    max_deriv: int

    def __call__(self, values: Sequence[np.ndarray], deriv: int) -> InterpolatedState:
        ...


class InterpolationBackend(Protocol):
    def interpolator(self, stamp: float) -> Interpolator:
        ...


@dataclass(frozen=True, eq=False)
class SplineInterpolator:
    """
    Amarra os k pontos de controle do segmento que contém o tempo.
    """
    descriptor: GroupDescriptor
    keys: Tuple[int, ...]
    mtilde: np.ndarray
    u: float
    dt: float
    max_deriv: int = 2

    def __call__(self, values: Sequence[np.ndarray], deriv: int) -> InterpolatedState:
        res = cumulative_eval(self.descriptor, np.stack(values), self.mtilde, self.u, self.dt, deriv, jacobians=True)
        return InterpolatedState(self.descriptor, res.value, res.velocity, res.acceleration,
                                 res.d_value, res.d_velocity, res.d_acceleration)


def spline_interpolator(spline: SplineTrajectory, keys: Sequence[int], stamp: float) -> SplineInterpolator:
    i, u = segment_for_time(spline, stamp)
    k = spline.order
    if k == 1:
        dt = 1.0
    else:
        left, right = spline.segment_interval(i)
        dt = right - left
    return SplineInterpolator(spline.descriptor, tuple(keys[i:i + k]), spline.cumulative(i).entries, u, dt,
                              max_deriv=min(2, k - 1))


@dataclass(frozen=True, eq=False)
class SplineSegment:
    """
    Como SplineInterpolator, mas para vários tempos do mesmo segmento de uma vez.
    """
    descriptor: GroupDescriptor
    keys: Tuple[int, ...]
    mtilde: np.ndarray
    u: np.ndarray
    dt: float
    max_deriv: int = 2

    def __call__(self, values: Sequence[np.ndarray], deriv: int) -> List[InterpolatedState]:
        res = cumulative_eval_batch(self.descriptor, np.stack(values), self.mtilde, self.u, self.dt, deriv,
                                    jacobians=True)

        def pick(blocks, m):
            return None if blocks is None else [b[m] for b in blocks]

        return [InterpolatedState(self.descriptor, res.value[m],
                                  None if res.velocity is None else res.velocity[m],
                                  None if res.acceleration is None else res.acceleration[m],
                                  pick(res.d_value, m), pick(res.d_velocity, m), pick(res.d_acceleration, m))
                for m in range(self.u.size)]


@dataclass(frozen=True, eq=False)
class GpInterpolator:
    """
    Amarra os dois estados de suporte do segmento (ou apenas um, no tempo de suporte).
    """
    descriptor: GroupDescriptor
    prior: gpmod.GpPriorModel
    keys: Tuple[int, ...]
    lam: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None

    @property
    def max_deriv(self) -> int:
        return self.prior.derivative_blocks - 1

    def __call__(self, values: Sequence[np.ndarray], deriv: int) -> InterpolatedState:
        desc, blocks = self.descriptor, self.prior.derivative_blocks
        dof, amb = desc.dof, desc.ambient_dim
        n = blocks * dof
        if deriv > blocks - 1:
            raise UnsupportedError(f"Prior {self.prior.name} não fornece derivada de ordem {deriv}")
        if len(self.keys) == 1:
            raw = np.asarray(values[0], dtype=float)
            jacs = [np.eye(n)]
        else:
            raw, j_i, j_ip1, _ = gpmod.interpolate_raw(self.prior, desc, values[0], values[1],
                                                      self.lam, self.psi, jacobians=True)
            jacs = [j_i, j_ip1]

        def rows(b):
            return [j[b * dof:(b + 1) * dof] for j in jacs]

        vel = raw[amb:amb + dof] if blocks > 1 else None
        acc = raw[amb + dof:amb + 2 * dof] if blocks > 2 else None
        return InterpolatedState(desc, raw[:amb], vel, acc, rows(0),
                                 rows(1) if blocks > 1 else None, rows(2) if blocks > 2 else None)


def gp_interpolator(traj: gpmod.GpTrajectory, keys: Sequence[int], stamp: float) -> GpInterpolator:
    i = traj.segment_for_time(stamp)
    t_i, t_ip1 = traj.times[i], traj.times[i + 1]
    if stamp == t_i:
        return GpInterpolator(traj.descriptor, traj.prior, (keys[i],))
    if stamp == t_ip1:
        return GpInterpolator(traj.descriptor, traj.prior, (keys[i + 1],))
    lam, psi = gpmod.lambda_psi(traj.prior, t_i, t_ip1, stamp)
    return GpInterpolator(traj.descriptor, traj.prior, (keys[i], keys[i + 1]), lam, psi)


# --- Fatores ---

class Factor:
    """
    Interface comum: keys, dim, covariance e evaluate(values) -> (e, [J por key]).
    """
    kind: FactorKind
    keys: Tuple[int, ...]
    covariance: np.ndarray

    @property
    def name(self) -> str:
        return f"{self.kind.value}{self.keys}"

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]

    def evaluate(self, values: Sequence[np.ndarray]) -> Tuple[np.ndarray, List[np.ndarray]]:
        raise NotImplementedError

    def sqrt_info(self) -> np.ndarray:
        cached = self.__dict__.get("_sqrt_info")
        if cached is None:
            cached = sqrt_information(self.covariance)
            object.__setattr__(self, "_sqrt_info", cached)
        return cached

    def linearize(self, values: Sequence[np.ndarray]) -> Tuple[np.ndarray, List[np.ndarray]]:
        """
        Resíduo e Jacobianos branqueados (L^T e, L^T J).
        """
        e, jacs = self._checked_evaluate(values)
        lt = self.sqrt_info().T
        return lt @ e, [lt @ j for j in jacs]

    def cost(self, values: Sequence[np.ndarray]) -> float:
        e, _ = self._checked_evaluate(values)
        w = self.sqrt_info().T @ e
        return float(w @ w)

    def _checked_evaluate(self, values: Sequence[np.ndarray]) -> Tuple[np.ndarray, List[np.ndarray]]:
        try:
            return self.evaluate(values)
        except FactorEvaluationError:
            raise
        except EstimationError as exc:
            raise FactorEvaluationError(f"Falha ao avaliar o fator {self.name}: {exc.message}", factor=self.name)


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    kind: ClassVar[FactorKind]
    deriv: ClassVar[int] = 0
    stamp: float
    measurement: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "measurement", np.atleast_1d(np.asarray(self.measurement, dtype=float)))
        object.__setattr__(self, "covariance", np.atleast_2d(np.asarray(self.covariance, dtype=float)))

    def residual(self, sample: InterpolatedState) -> Tuple[np.ndarray, List[np.ndarray]]:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class GyroModel(MeasurementModel):
    kind: ClassVar[FactorKind] = FactorKind.GYRO
    deriv: ClassVar[int] = 1

    def residual(self, sample):
        e, d_vel = gyro_residual(sample.descriptor, sample.velocity, self.measurement[0])
        return e, sample.chain(d_velocity=d_vel)


@dataclass(frozen=True, eq=False)
class AccelModel(MeasurementModel):
    kind: ClassVar[FactorKind] = FactorKind.ACCEL
    deriv: ClassVar[int] = 2

    def residual(self, sample):
        if sample.descriptor.kind != GroupKind.SE2:
            raise UnsupportedError(f"Acelerômetro exige trajetória SE2, recebeu {sample.descriptor}")
        e, d_vel, d_acc = accel_residual(sample.velocity, sample.acceleration, self.measurement)
        return e, sample.chain(d_velocity=d_vel, d_acceleration=d_acc)


@dataclass(frozen=True, eq=False)
class RangeBearingModel(MeasurementModel):
    kind: ClassVar[FactorKind] = FactorKind.RANGE_BEARING
    landmark: Landmark = None

    def residual(self, sample):
        if sample.descriptor.kind != GroupKind.SE2:
            raise UnsupportedError(f"Range-bearing exige trajetória SE2, recebeu {sample.descriptor}")
        e, d_pose = range_bearing_residual(sample.pose, self.landmark.position, self.measurement)
        return e, sample.chain(d_pose=d_pose)


@dataclass(frozen=True, eq=False)
class PoseModel(MeasurementModel):
    kind: ClassVar[FactorKind] = FactorKind.POSE

    def residual(self, sample):
        e, d_pose = pose_residual(sample.descriptor, sample.pose, self.measurement)
        return e, sample.chain(d_pose=d_pose)


@dataclass(frozen=True, eq=False)
class InitialPriorModel(MeasurementModel):
    """
    Prior no estado inicial: measurement = [pose, v (opcional), a (opcional)].
    O número de derivadas vem do tamanho da média.
    """
    kind: ClassVar[FactorKind] = FactorKind.INITIAL_PRIOR

    def derivs_for(self, desc: GroupDescriptor) -> int:
        extra = self.measurement.shape[0] - desc.ambient_dim
        if extra < 0 or extra % desc.dof:
            raise InvalidArgumentError(f"Média do prior inicial com tamanho {self.measurement.shape[0]} incompatível com {desc}")
        return extra // desc.dof

    def residual(self, sample):
        desc = sample.descriptor
        amb, dof = desc.ambient_dim, desc.dof
        e_pose, d_pose = pose_residual(desc, sample.pose, self.measurement[:amb])
        parts, jac_rows = [e_pose], [sample.chain(d_pose=d_pose)]
        derivs = self.derivs_for(desc)
        eye = np.eye(dof)
        if derivs >= 1:
            parts.append(sample.velocity - self.measurement[amb:amb + dof])
            jac_rows.append(sample.chain(d_velocity=eye))
        if derivs >= 2:
            parts.append(sample.acceleration - self.measurement[amb + dof:amb + 2 * dof])
            jac_rows.append(sample.chain(d_acceleration=eye))
        jacs = [np.vstack([rows[m] for rows in jac_rows]) for m in range(len(jac_rows[0]))]
        return np.concatenate(parts), jacs


@dataclass(eq=False)
class BoundFactor(Factor):
    model: MeasurementModel
    interpolator: Interpolator
    deriv: int = 0

    @property
    def kind(self) -> FactorKind:
        return self.model.kind

    @property
    def keys(self) -> Tuple[int, ...]:
        return self.interpolator.keys

    @property
    def covariance(self) -> np.ndarray:
        return self.model.covariance

    @property
    def stamp(self) -> float:
        return self.model.stamp

    @property
    def name(self) -> str:
        return f"{self.kind.value}@{self.stamp:.6f}{self.keys}"

    def evaluate(self, values):
        sample = self.interpolator(values, self.deriv)
        return self.model.residual(sample)


def _required_deriv(model: MeasurementModel, desc: GroupDescriptor, max_deriv: int, stamp: float) -> int:
    deriv = model.derivs_for(desc) if isinstance(model, InitialPriorModel) else model.deriv
    if deriv > max_deriv:
        raise UnsupportedError(
            f"Fator {model.kind.value} em t={stamp} exige derivada {deriv}, a trajetória fornece até {max_deriv}")
    return deriv


def bind_interpolated(model: MeasurementModel, backend: InterpolationBackend, stamp: Optional[float] = None) -> BoundFactor:
    stamp = model.stamp if stamp is None else stamp
    interp = backend.interpolator(stamp)
    return BoundFactor(model, interp, _required_deriv(model, interp.descriptor, interp.max_deriv, stamp))


@dataclass(eq=False)
class SegmentFactor(Factor):
    """
    Medidas de um mesmo tipo caídas num mesmo segmento do spline, avaliadas em lote.

    Σ é bloco-diagonal (uma medida por bloco); o erro de avaliação aponta a medida.
    """
    models: Tuple[MeasurementModel, ...]
    interpolator: SplineSegment
    deriv: int = 0
    covariance: np.ndarray = field(init=False)

    def __post_init__(self):
        self.covariance = block_diag(*[m.covariance for m in self.models])
        self._sqrt_info = block_diag(*[sqrt_information(m.covariance) for m in self.models])

    @property
    def kind(self) -> FactorKind:
        return self.models[0].kind

    @property
    def keys(self) -> Tuple[int, ...]:
        return self.interpolator.keys

    @property
    def name(self) -> str:
        return f"{self.kind.value}@[{self.models[0].stamp:.6f}, {self.models[-1].stamp:.6f}]{self.keys}"

    def evaluate(self, values):
        states = self.interpolator(values, self.deriv)
        errors, rows = [], []
        for model, sample in zip(self.models, states):
            try:
                e, jacs = model.residual(sample)
            except EstimationError as exc:
                name = f"{model.kind.value}@{model.stamp:.6f}{self.keys}"
                raise FactorEvaluationError(f"Falha ao avaliar o fator {name}: {exc.message}", factor=name)
            errors.append(e)
            rows.append(jacs)
        return np.concatenate(errors), [np.vstack([r[m] for r in rows]) for m in range(len(self.keys))]


def bind_segments(models: Sequence[MeasurementModel], spline: SplineTrajectory,
                  keys: Sequence[int]) -> List[SegmentFactor]:
    """
    Agrupa as medidas por (segmento, tipo) na ordem de chegada e amarra cada grupo
    aos k pontos de controle do segmento.
    """
    k = spline.order
    max_deriv = min(2, k - 1)
    groups: Dict[Tuple[int, FactorKind], List[Tuple[MeasurementModel, float, int]]] = {}
    for model in models:
        deriv = _required_deriv(model, spline.descriptor, max_deriv, model.stamp)
        i, u = segment_for_time(spline, model.stamp)
        groups.setdefault((i, model.kind), []).append((model, u, deriv))

    factors = []
    for (i, _), members in groups.items():
        dt = 1.0 if k == 1 else spline.segment_interval(i)[1] - spline.segment_interval(i)[0]
        segment = SplineSegment(spline.descriptor, tuple(keys[i:i + k]), spline.cumulative(i).entries,
                                np.array([u for _, u, _ in members]), dt, max_deriv)
        factors.append(SegmentFactor(tuple(m for m, _, _ in members), segment, max(d for _, _, d in members)))
    return factors


@dataclass(eq=False)
class MotionPriorFactor(Factor):
    """
    Fator binário do prior GP entre estados de suporte consecutivos, Σ = Q(dt).
    """
    prior: gpmod.GpPriorModel
    descriptor: GroupDescriptor
    keys: Tuple[int, int]
    dt: float
    covariance: np.ndarray = field(init=False)

    kind: ClassVar[FactorKind] = FactorKind.MOTION_PRIOR

    def __post_init__(self):
        if self.dt <= 0.0:
            raise InvalidArgumentError(f"Fator de prior com dt <= 0: {self.dt}")
        self.covariance = gpmod.process_noise(self.prior, self.dt)
        self._sqrt_info = np.linalg.cholesky(gpmod.process_noise_inv(self.prior, self.dt))

    def evaluate(self, values):
        e, j_i, j_ip1 = gpmod.prior_residual_raw(self.prior, self.descriptor, self.dt, values[0], values[1])
        return e, [j_i, j_ip1]
