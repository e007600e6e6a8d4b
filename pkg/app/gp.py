"""
Trajetórias por processo gaussiano temporal exatamente esparso (priors WNOA/WNOJ).

O estado de suporte é empilhado por blocos: [x, x', x''] (WNOJ) ou [x, x'] (WNOA).
Em grupos de Lie cada segmento [t_i, t_{i+1}) trabalha no espaço tangente local
ancorado em x(t_i):
    xi    = x ⊟ x_i
    xi'   = J_r(xi)^-1 x'
    xi''  = d/dt(J_r(xi)^-1) x' + J_r(xi)^-1 x''
"""
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve

from app.errors import InvalidArgumentError, OutOfDomainError
from app.manifold import GroupDescriptor, ManifoldElement, Product, TangentVector, VectorSpace

logger = logging.getLogger(__name__)

WNOA = "wnoa"
WNOJ = "wnoj"
_BLOCKS = {WNOA: 2, WNOJ: 3}


@dataclass(frozen=True, eq=False)
class GpPriorModel:
    derivative_blocks: int
    qc: np.ndarray

    def __post_init__(self):
        if self.derivative_blocks not in (2, 3):
            raise InvalidArgumentError(f"derivative_blocks precisa ser 2 (WNOA) ou 3 (WNOJ), recebeu {self.derivative_blocks}")
        qc = np.atleast_2d(np.array(self.qc, dtype=float))
        if qc.shape[0] != qc.shape[1]:
            raise InvalidArgumentError(f"Q_C precisa ser quadrada, recebeu {qc.shape}")
        if not np.allclose(qc, qc.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(qc).max())):
            raise InvalidArgumentError("Q_C precisa ser simétrica")
        if np.linalg.eigvalsh(qc).min() <= 0.0:
            raise InvalidArgumentError("Q_C precisa ser definida positiva")
        qc.setflags(write=False)
        object.__setattr__(self, "qc", qc)

    @classmethod
    def from_name(cls, name: str, qc) -> "GpPriorModel":
        if name not in _BLOCKS:
            raise InvalidArgumentError(f"Prior desconhecido: {name} (use wnoa ou wnoj)")
        return cls(_BLOCKS[name], qc)

    @property
    def name(self) -> str:
        return WNOA if self.derivative_blocks == 2 else WNOJ

    @property
    def dof(self) -> int:
        return self.qc.shape[0]

    @property
    def state_dim(self) -> int:
        return self.derivative_blocks * self.dof

    def state_descriptor(self, desc: GroupDescriptor) -> GroupDescriptor:
        """
        Descritor da variável do solver: Product(desc, R^dof[, R^dof]).
        """
        return Product(desc, *[VectorSpace(desc.dof)] * (self.derivative_blocks - 1))


@dataclass(frozen=True, eq=False)
class SupportState:
    time: float
    element: ManifoldElement
    derivatives: Tuple[TangentVector, ...] = ()

    def __post_init__(self):
        derivs = tuple(d if isinstance(d, TangentVector) else TangentVector(self.element.descriptor, d)
                       for d in self.derivatives)
        for d in derivs:
            if d.descriptor.dof != self.element.descriptor.dof:
                raise InvalidArgumentError("Derivada com dimensão diferente do estado")
        object.__setattr__(self, "time", float(self.time))
        object.__setattr__(self, "derivatives", derivs)

    @property
    def velocity(self) -> Optional[np.ndarray]:
        return self.derivatives[0].data if self.derivatives else None

    @property
    def acceleration(self) -> Optional[np.ndarray]:
        return self.derivatives[1].data if len(self.derivatives) > 1 else None

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.element.data] + [d.data for d in self.derivatives])


def state_from_array(desc: GroupDescriptor, blocks: int, time: float, raw: np.ndarray) -> SupportState:
    raw = np.asarray(raw, dtype=float)
    amb, dof = desc.ambient_dim, desc.dof
    derivs = [TangentVector(desc, raw[amb + b * dof: amb + (b + 1) * dof]) for b in range(blocks - 1)]
    return SupportState(time, ManifoldElement(desc, raw[:amb]), tuple(derivs))


@dataclass(frozen=True, eq=False)
class GpTrajectory:
    descriptor: GroupDescriptor
    prior: GpPriorModel
    states: Tuple[SupportState, ...]

    def __post_init__(self):
        states = tuple(self.states)
        if len(states) < 2:
            raise InvalidArgumentError(f"Trajetória GP precisa de pelo menos 2 estados, recebeu {len(states)}")
        if self.prior.dof != self.descriptor.dof:
            raise InvalidArgumentError(f"Q_C com dimensão {self.prior.dof}, esperado {self.descriptor.dof}")
        for s in states:
            if s.element.descriptor != self.descriptor:
                raise InvalidArgumentError(f"Estado em {s.element.descriptor}, esperado {self.descriptor}")
            if len(s.derivatives) != self.prior.derivative_blocks - 1:
                raise InvalidArgumentError(
                    f"Estado com {len(s.derivatives)} derivadas, o prior {self.prior.name} exige {self.prior.derivative_blocks - 1}")
        times = np.array([s.time for s in states])
        if np.any(np.diff(times) <= 0.0):
            raise InvalidArgumentError("Os tempos dos estados de suporte precisam ser estritamente crescentes")
        times.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "_times", times)

    @property
    def times(self) -> np.ndarray:
        return self._times

    @property
    def domain(self) -> Tuple[float, float]:
        return float(self._times[0]), float(self._times[-1])

    def segment_for_time(self, t: float) -> int:
        lo, hi = self.domain
        if not (lo <= t <= hi):
            raise OutOfDomainError(f"Tempo {t} fora do domínio da trajetória GP [{lo}, {hi}]", (lo, hi), [t])
        return min(int(np.searchsorted(self._times, t, side="right")) - 1, len(self.states) - 2)

    def with_states(self, raws: Sequence[np.ndarray]) -> "GpTrajectory":
        B = self.prior.derivative_blocks
        states = tuple(state_from_array(self.descriptor, B, s.time, raw) for s, raw in zip(self.states, raws))
        return GpTrajectory(self.descriptor, self.prior, states)


def support_times(start: float, end: float, hz: float) -> np.ndarray:
    """
    Tempos uniformes a partir de start; o último é o primeiro >= end.

    Com (end - start) * hz inteiro o último tempo é exatamente end, e nenhum
    estado fica além do intervalo sem medidas que o amarrem.
    """
    if hz <= 0.0:
        raise InvalidArgumentError(f"Frequência de estados inválida: {hz}")
    n = max(1, int(math.ceil((end - start) * hz - 1e-9))) + 1
    return start + np.arange(n) / hz


# --- Modelo de processo ---

def _scalar_transition(blocks: int, dt: float) -> np.ndarray:
    out = np.zeros((blocks, blocks))
    for r in range(blocks):
        for c in range(r, blocks):
            out[r, c] = dt ** (c - r) / math.factorial(c - r)
    return out


def _scalar_noise(blocks: int, dt: float) -> np.ndarray:
    out = np.zeros((blocks, blocks))
    for r in range(blocks):
        for c in range(blocks):
            p = 2 * blocks - 1 - r - c
            out[r, c] = dt ** p / (p * math.factorial(blocks - 1 - r) * math.factorial(blocks - 1 - c))
    return out


def _scalar_noise_inv(blocks: int, dt: float) -> np.ndarray:
    if blocks == 2:
        return np.array([[12.0 / dt ** 3, -6.0 / dt ** 2],
                         [-6.0 / dt ** 2, 4.0 / dt]])
    return np.array([[720.0 / dt ** 5, -360.0 / dt ** 4, 60.0 / dt ** 3],
                     [-360.0 / dt ** 4, 192.0 / dt ** 3, -36.0 / dt ** 2],
                     [60.0 / dt ** 3, -36.0 / dt ** 2, 9.0 / dt]])


def transition(prior: GpPriorModel, dt: float) -> np.ndarray:
    if dt < 0.0:
        raise InvalidArgumentError(f"dt precisa ser >= 0, recebeu {dt}")
    return np.kron(_scalar_transition(prior.derivative_blocks, dt), np.eye(prior.dof))


def _noise(prior: GpPriorModel, dt: float, qc: Optional[np.ndarray]) -> np.ndarray:
    qc = prior.qc if qc is None else np.atleast_2d(np.asarray(qc, dtype=float))
    return np.kron(_scalar_noise(prior.derivative_blocks, dt), qc)


def process_noise(prior: GpPriorModel, dt: float, qc: Optional[np.ndarray] = None) -> np.ndarray:
    if dt <= 0.0:
        raise InvalidArgumentError(f"Q(dt) é singular para dt <= 0, recebeu {dt}")
    return _noise(prior, dt, qc)


def process_noise_inv(prior: GpPriorModel, dt: float, qc: Optional[np.ndarray] = None) -> np.ndarray:
    if dt <= 0.0:
        raise InvalidArgumentError(f"Q(dt) é singular para dt <= 0, recebeu {dt}")
    qc = prior.qc if qc is None else np.atleast_2d(np.asarray(qc, dtype=float))
    return np.kron(_scalar_noise_inv(prior.derivative_blocks, dt), np.linalg.inv(qc))


def prior_covariance(prior: GpPriorModel, times: Sequence[float], p0: np.ndarray) -> List[np.ndarray]:
    """
    Marginais do prior nos tempos dados: P_{i+1} = Phi P_i Phi^T + Q.
    """
    out = [np.array(p0, dtype=float)]
    for t0, t1 in zip(times[:-1], times[1:]):
        phi = transition(prior, t1 - t0)
        out.append(phi @ out[-1] @ phi.T + process_noise(prior, t1 - t0))
    return out


def lambda_psi(prior: GpPriorModel, t_i: float, t_ip1: float, t: float,
               qc: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pesos de interpolação Λ(t), Ψ(t) do segmento [t_i, t_{i+1}).

    Ψ = Q(t - t_i) Φ(t_{i+1} - t)^T Q(t_{i+1} - t_i)^-1, obtido resolvendo contra Q.
    """
    if not (t_i <= t < t_ip1):
        raise OutOfDomainError(f"Tempo {t} fora do segmento [{t_i}, {t_ip1})", (t_i, t_ip1), [t])
    q_t = _noise(prior, t - t_i, qc)
    q_seg = _noise(prior, t_ip1 - t_i, qc)
    phi_end = transition(prior, t_ip1 - t)
    psi = solve(q_seg, phi_end @ q_t, assume_a="pos").T
    lam = transition(prior, t - t_i) - psi @ transition(prior, t_ip1 - t_i)
    return lam, psi


def interpolation_noise(prior: GpPriorModel, t_i: float, t_ip1: float, t: float, psi: np.ndarray,
                        qc: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Q(t - t_i) - Ψ Q(t_{i+1} - t_i) Ψ^T, parcela do prior na covariância interpolada.
    """
    q_t = _noise(prior, t - t_i, qc)
    q_seg = _noise(prior, t_ip1 - t_i, qc)
    out = q_t - psi @ q_seg @ psi.T
    return 0.5 * (out + out.T)


# --- Mapeamento local/global ---

def _columns(partials: np.ndarray, w: np.ndarray) -> np.ndarray:
    """
    Matriz cujas colunas são (∂J_r/∂xi_k) w.
    """
    return np.einsum("kij,j->ik", partials, w)


def _curvature(second: np.ndarray, xi_dot: np.ndarray) -> np.ndarray:
    """
    ∂h/∂xi com h = sum_k xi'_k (∂J_r/∂xi_k) xi'.
    """
    return np.einsum("k,klij,j->il", xi_dot, second, xi_dot)


def _local_with_jacobians(desc: GroupDescriptor, blocks: int, ref_raw: np.ndarray, raw: np.ndarray):
    """
    Ξ = (xi, xi', xi'') de um estado global no referencial local de ref.

    Retorna (Ξ, ∂Ξ/∂x_ref, ∂Ξ/∂S) com perturbações à direita nas poses.
    Com J = J_r(xi) e h = sum_k xi'_k (∂J/∂xi_k) xi':
        xi' = J^-1 x'
        xi'' = J^-1 (x'' - h)
    """
    amb, dof = desc.ambient_dim, desc.dof
    n = blocks * dof
    ref_raw = np.asarray(ref_raw, dtype=float)
    raw = np.asarray(raw, dtype=float)
    xi = desc.boxminus(raw[:amb], ref_raw[:amb])
    d_ref = np.zeros((n, dof))
    d_state = np.zeros((n, n))
    if desc.is_vector_space:
        local = np.concatenate([xi, raw[amb:amb + (blocks - 1) * dof]])
        d_ref[:dof] = -np.eye(dof)
        d_state[:] = np.eye(n)
        return local, d_ref, d_state

    jr_inv = desc.jr_inv(xi)
    dxi_dx = jr_inv
    dxi_dref = -desc.jr_inv(-xi)
    d_ref[:dof] = dxi_dref
    d_state[:dof, :dof] = dxi_dx
    if blocks == 1:
        return xi, d_ref, d_state

    partials = desc.jr_partials(xi)
    vel = raw[amb:amb + dof]
    xi_dot = jr_inv @ vel
    dxidot_dxi = -jr_inv @ _columns(partials, xi_dot)
    d_ref[dof:2 * dof] = dxidot_dxi @ dxi_dref
    d_state[dof:2 * dof, :dof] = dxidot_dxi @ dxi_dx
    d_state[dof:2 * dof, dof:2 * dof] = jr_inv
    if blocks == 2:
        return np.concatenate([xi, xi_dot]), d_ref, d_state

    acc = raw[amb + dof:amb + 2 * dof]
    jr_dot = np.tensordot(xi_dot, partials, axes=1)
    xi_ddot = jr_inv @ (acc - jr_dot @ xi_dot)
    # derivadas parciais de xi'' com xi' fixo, depois a cadeia por xi'(xi, x')
    dxiddot_dxidot = -jr_inv @ (_columns(partials, xi_dot) + jr_dot)
    dxiddot_dxi = (-jr_inv @ (_columns(partials, xi_ddot) + _curvature(desc.jr_second_partials(xi), xi_dot))
                   + dxiddot_dxidot @ dxidot_dxi)
    d_ref[2 * dof:] = dxiddot_dxi @ dxi_dref
    d_state[2 * dof:, :dof] = dxiddot_dxi @ dxi_dx
    d_state[2 * dof:, dof:2 * dof] = dxiddot_dxidot @ jr_inv
    d_state[2 * dof:, 2 * dof:] = jr_inv
    return np.concatenate([xi, xi_dot, xi_ddot]), d_ref, d_state


def _global_with_jacobians(desc: GroupDescriptor, blocks: int, ref_raw: np.ndarray, local: np.ndarray):
    """
    Inverso de _local_with_jacobians: x = x_ref ⊞ xi, x' = J xi', x'' = J xi'' + h.

    Retorna (S, ∂S/∂x_ref, ∂S/∂Ξ).
    """
    amb, dof = desc.ambient_dim, desc.dof
    n = blocks * dof
    local = np.asarray(local, dtype=float)
    xi = local[:dof]
    element = desc.boxplus(np.asarray(ref_raw, dtype=float)[:amb], xi)
    j_ref = np.zeros((n, dof))
    j_local = np.zeros((n, n))
    if desc.is_vector_space:
        j_ref[:dof] = np.eye(dof)
        j_local[:] = np.eye(n)
        return np.concatenate([element, local[dof:]]), j_ref, j_local

    jr = desc.jr(xi)
    j_ref[:dof] = desc.adjoint(desc.exp(-xi))
    j_local[:dof, :dof] = jr
    if blocks == 1:
        return element, j_ref, j_local

    partials = desc.jr_partials(xi)
    xi_dot = local[dof:2 * dof]
    vel = jr @ xi_dot
    j_local[dof:2 * dof, :dof] = _columns(partials, xi_dot)
    j_local[dof:2 * dof, dof:2 * dof] = jr
    if blocks == 2:
        return np.concatenate([element, vel]), j_ref, j_local

    xi_ddot = local[2 * dof:3 * dof]
    jr_dot = np.tensordot(xi_dot, partials, axes=1)
    acc = jr @ xi_ddot + jr_dot @ xi_dot
    j_local[2 * dof:, :dof] = _columns(partials, xi_ddot) + _curvature(desc.jr_second_partials(xi), xi_dot)
    j_local[2 * dof:, dof:2 * dof] = _columns(partials, xi_dot) + jr_dot
    j_local[2 * dof:, 2 * dof:] = jr
    return np.concatenate([element, vel, acc]), j_ref, j_local


def local_from_global(s_ref: SupportState, s: SupportState) -> np.ndarray:
    """
    Estado local de s no referencial de s_ref. Para s = s_ref o resultado
    é (0, x', x'') porque J_r(0) = I e h(0, ·) = 0.
    """
    if s.element.descriptor != s_ref.element.descriptor or len(s.derivatives) != len(s_ref.derivatives):
        raise InvalidArgumentError("Estados de referência e alvo incompatíveis")
    blocks = len(s.derivatives) + 1
    local, _, _ = _local_with_jacobians(s.element.descriptor, blocks, s_ref.to_array(), s.to_array())
    return local


def global_from_local(s_ref: SupportState, local: np.ndarray, time: Optional[float] = None) -> SupportState:
    desc = s_ref.element.descriptor
    blocks = len(s_ref.derivatives) + 1
    local = np.asarray(local, dtype=float).reshape(-1)
    if local.shape[0] != blocks * desc.dof:
        raise InvalidArgumentError(f"Estado local com dimensão {local.shape[0]}, esperado {blocks * desc.dof}")
    raw, _, _ = _global_with_jacobians(desc, blocks, s_ref.to_array(), local)
    return state_from_array(desc, blocks, s_ref.time if time is None else time, raw)


@lru_cache(maxsize=8192)
def _local_pair_cached(desc: GroupDescriptor, blocks: int, raw_i: bytes, raw_ip1: bytes):
    a = np.frombuffer(raw_i)
    b = np.frombuffer(raw_ip1)
    dof = desc.dof
    n = blocks * dof
    xi_i, ref_i, state_i = _local_with_jacobians(desc, blocks, a, a)
    xi_ip1, ref_ip1, state_ip1 = _local_with_jacobians(desc, blocks, a, b)
    jac = np.zeros((2 * n, 2 * n))
    jac[:n, :n] = state_i
    jac[:n, :dof] += ref_i
    jac[n:, :dof] = ref_ip1
    jac[n:, n:] = state_ip1
    value = np.concatenate([xi_i, xi_ip1])
    value.setflags(write=False)
    jac.setflags(write=False)
    return value, jac


def local_pair(desc: GroupDescriptor, blocks: int, raw_i: np.ndarray, raw_ip1: np.ndarray):
    """
    (Ξ_i, Ξ_{i+1}) no referencial local de x_i e o Jacobiano em relação a (S_i, S_{i+1}).

    Cache por par de estados: o mesmo segmento serve vários fatores.
    """
    return _local_pair_cached(desc, blocks, np.ascontiguousarray(raw_i, dtype=float).tobytes(),
                              np.ascontiguousarray(raw_ip1, dtype=float).tobytes())


def global_jacobians(desc: GroupDescriptor, blocks: int, ref_raw: np.ndarray, local: np.ndarray):
    """
    Estado global a partir do local e seus Jacobianos em relação a x_ref e a Ξ.
    """
    return _global_with_jacobians(desc, blocks, ref_raw, local)


# --- Resíduo do prior ---

def prior_residual_raw(prior: GpPriorModel, desc: GroupDescriptor, dt: float,
                       raw_i: np.ndarray, raw_ip1: np.ndarray):
    """
    e = Φ(dt) Ξ_i - Ξ_{i+1} e os Jacobianos em relação a S_i e S_{i+1}.
    """
    blocks = prior.derivative_blocks
    n = blocks * desc.dof
    pair, jac = local_pair(desc, blocks, raw_i, raw_ip1)
    phi = transition(prior, dt)
    e = phi @ pair[:n] - pair[n:]
    j_full = np.hstack([phi, -np.eye(n)]) @ jac
    return e, j_full[:, :n], j_full[:, n:]


def prior_residual(prior: GpPriorModel, s_i: SupportState, s_ip1: SupportState):
    if s_ip1.time <= s_i.time:
        raise InvalidArgumentError(f"Tempos não crescentes no resíduo do prior: {s_i.time} >= {s_ip1.time}")
    desc = s_i.element.descriptor
    return prior_residual_raw(prior, desc, s_ip1.time - s_i.time, s_i.to_array(), s_ip1.to_array())


# --- Interpolação a posteriori ---

def interpolate_raw(prior: GpPriorModel, desc: GroupDescriptor, raw_i: np.ndarray, raw_ip1: np.ndarray,
                    lam: np.ndarray, psi: np.ndarray, jacobians: bool = False):
    """
    Estado interpolado (array cru) e, opcionalmente, Jacobianos em relação a
    (S_i, S_{i+1}) e a Ξ(t) (este último para propagar Q na covariância).
    """
    blocks = prior.derivative_blocks
    n = blocks * desc.dof
    pair, jac = local_pair(desc, blocks, raw_i, raw_ip1)
    local = lam @ pair[:n] + psi @ pair[n:]
    if not jacobians:
        raw, _, _ = _global_with_jacobians(desc, blocks, raw_i, local)
        return raw, None, None, None
    raw, j_ref, j_local = global_jacobians(desc, blocks, raw_i, local)
    j_pair = j_local @ np.hstack([lam, psi]) @ jac
    j_pair[:, :desc.dof] += j_ref
    return raw, j_pair[:, :n], j_pair[:, n:], j_local


def interpolate_mean(traj: GpTrajectory, t: float) -> SupportState:
    i = traj.segment_for_time(t)
    s_i, s_ip1 = traj.states[i], traj.states[i + 1]
    if t == s_i.time:
        return s_i
    if t == s_ip1.time:
        return s_ip1
    lam, psi = lambda_psi(traj.prior, s_i.time, s_ip1.time, t)
    raw, _, _, _ = interpolate_raw(traj.prior, traj.descriptor, s_i.to_array(), s_ip1.to_array(), lam, psi)
    return state_from_array(traj.descriptor, traj.prior.derivative_blocks, t, raw)


def interpolate_covariance(traj: GpTrajectory, t: float, posterior_blocks: np.ndarray) -> np.ndarray:
    """
    Covariância a posteriori em t a partir da covariância conjunta de (S_i, S_{i+1}).

    Em grupos de Lie a conjunta e o resultado estão nas perturbações à direita
    dos estados globais; o mapeamento passa pelos Jacobianos local/global.
    """
    n = traj.prior.state_dim
    joint = np.asarray(posterior_blocks, dtype=float)
    if joint.shape != (2 * n, 2 * n):
        raise InvalidArgumentError(f"Covariância conjunta precisa ser {2 * n}x{2 * n}, recebeu {joint.shape}")
    scale = max(1.0, float(np.abs(joint).max()))
    if not np.allclose(joint, joint.T, rtol=0.0, atol=1e-9 * scale):
        raise InvalidArgumentError("Covariância conjunta não é simétrica")
    i = traj.segment_for_time(t)
    s_i, s_ip1 = traj.states[i], traj.states[i + 1]
    if t == s_i.time:
        return joint[:n, :n].copy()
    if t == s_ip1.time:
        return joint[n:, n:].copy()
    lam, psi = lambda_psi(traj.prior, s_i.time, s_ip1.time, t)
    _, j_i, j_ip1, j_local = interpolate_raw(traj.prior, traj.descriptor, s_i.to_array(), s_ip1.to_array(),
                                             lam, psi, jacobians=True)
    j = np.hstack([j_i, j_ip1])
    q = interpolation_noise(traj.prior, s_i.time, s_ip1.time, t, psi)
    out = j @ joint @ j.T + j_local @ q @ j_local.T
    return 0.5 * (out + out.T)
