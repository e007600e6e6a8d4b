"""
B-splines temporais de ordem k sobre espaços vetoriais e grupos de Lie.

Convenção da matriz de mistura: linha j = j-ésimo dos k pontos de controle,
coluna n = potência de u, e lambda(u) = M @ [1, u, ..., u^(k-1)].
O segmento i usa os pontos (x_i, ..., x_{i+k-1}) e vale em [t_{i+k-2}, t_{i+k-1});
em splines fechados (closed=True) o último segmento inclui também o knot final.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from app.errors import InvalidArgumentError, OutOfDomainError, UnsupportedError
from app.manifold import GroupDescriptor, ManifoldElement, TangentVector

logger = logging.getLogger(__name__)

MAX_DERIV = 2


@dataclass(frozen=True, eq=False)
class KnotVector:
    times: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        if times.size > 1 and np.any(np.diff(times) <= 0.0):
            raise InvalidArgumentError("Os knots precisam ser estritamente crescentes")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    def __len__(self) -> int:
        return int(self.times.size)

    def at(self, j: int) -> float:
        """
        Knot t_j com extrapolação uniforme fora do vetor (t_-1 = -inf quando vazio).
        """
        n = self.times.size
        if 0 <= j < n:
            return float(self.times[j])
        if n < 2:
            return -math.inf if j < 0 else math.inf
        if j < 0:
            return float(self.times[0] + j * (self.times[1] - self.times[0]))
        return float(self.times[-1] + (j - n + 1) * (self.times[-1] - self.times[-2]))


@dataclass(frozen=True, eq=False)
class BlendingMatrix:
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise InvalidArgumentError(f"Matriz de mistura precisa ser quadrada, recebeu {entries.shape}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def order(self) -> int:
        return self.entries.shape[0]

    def weights(self, u: float, deriv: int = 0, dt: float = 1.0) -> np.ndarray:
        """
        Coeficientes lambda(u) (ou sua derivada temporal de ordem deriv).
        """
        lam = self.entries @ power_vector(self.order, u, deriv)
        return lam / dt ** deriv if deriv else lam


def power_vector(k: int, u: float, deriv: int = 0) -> np.ndarray:
    """
    [1, u, ..., u^(k-1)] derivado deriv vezes em u.
    """
    out = np.zeros(k)
    for n in range(deriv, k):
        out[n] = math.perm(n, deriv) * u ** (n - deriv)
    return out


def power_matrix(k: int, u: np.ndarray, deriv: int = 0) -> np.ndarray:
    """
    Uma linha de power_vector por valor de u, formato (N, k).
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    out = np.zeros((u.size, k))
    for n in range(deriv, k):
        out[:, n] = math.perm(n, deriv) * u ** (n - deriv)
    return out


@lru_cache(maxsize=None)
def _uniform_entries(k: int) -> Tuple[Tuple[float, ...], ...]:
    rows = []
    norm = math.factorial(k - 1)
    for s in range(k):
        row = []
        for n in range(k):
            acc = 0
            for l in range(s, k):
                acc += (-1) ** (l - s) * math.comb(k, l - s) * (k - 1 - l) ** (k - 1 - n)
            row.append(math.comb(k - 1, n) * acc / norm)
        rows.append(tuple(row))
    return tuple(rows)


def uniform_blending_matrix(k: int) -> BlendingMatrix:
    if k < 1:
        raise InvalidArgumentError(f"Ordem do spline precisa ser >= 1, recebeu {k}")
    return BlendingMatrix(np.array(_uniform_entries(int(k))))


def nonuniform_blending_matrix(k: int, knot_window: Sequence[float]) -> BlendingMatrix:
    """
    Matriz de mistura de um segmento não uniforme a partir dos 2(k-1) knots ao redor.

    Recursão de Cox-de Boor feita sobre coeficientes de polinômios em u
    (a forma matricial de Qin, já transposta para a nossa convenção).
    """
    if k < 1:
        raise InvalidArgumentError(f"Ordem do spline precisa ser >= 1, recebeu {k}")
    window = np.asarray(knot_window, dtype=float).reshape(-1)
    if window.size != 2 * (k - 1):
        raise InvalidArgumentError(f"Janela de knots precisa ter {2 * (k - 1)} valores, recebeu {window.size}")
    if np.any(np.diff(window) <= 0.0):
        raise InvalidArgumentError("A janela de knots precisa ser estritamente crescente")
    if k == 1:
        return BlendingMatrix(np.ones((1, 1)))

    # Os knots externos nunca influenciam o segmento; só completam a recursão
    knots = np.concatenate([[window[0] - 1.0], window, [window[-1] + 1.0]])
    m = k - 1
    r = k - 1
    delta = knots[r + 1] - knots[r]

    basis = {r: np.eye(k)[0]}
    for d in range(1, m + 1):
        nxt = {}
        for p in range(r - d, r + 1):
            poly = np.zeros(k)
            left = basis.get(p)
            if left is not None:
                den = knots[p + d] - knots[p]
                poly += ((knots[r] - knots[p]) * left + delta * _shift(left)) / den
            right = basis.get(p + 1)
            if right is not None:
                den = knots[p + d + 1] - knots[p + 1]
                poly += ((knots[p + d + 1] - knots[r]) * right - delta * _shift(right)) / den
            nxt[p] = poly
        basis = nxt
    return BlendingMatrix(np.vstack([basis[r - m + j] for j in range(k)]))


def _shift(poly: np.ndarray) -> np.ndarray:
    out = np.zeros_like(poly)
    out[1:] = poly[:-1]
    return out


def cumulative_matrix(M: BlendingMatrix) -> BlendingMatrix:
    entries = M.entries
    return BlendingMatrix(np.flip(np.cumsum(np.flip(entries, axis=0), axis=0), axis=0))


def uniform_knots(start: float, end: float, hz: float, order: int) -> Tuple[KnotVector, int]:
    """
    Knots uniformes e número de pontos de controle cujo domínio cobre [start, end].

    Com (end - start) * hz inteiro o domínio termina exatamente em end; o
    spline deve então ser montado com closed=True para aceitar t = end.
    Um segmento a mais deixaria o último ponto de controle sem peso algum.
    """
    if order < 2:
        raise InvalidArgumentError("Layout uniforme exige ordem >= 2")
    if hz <= 0.0:
        raise InvalidArgumentError(f"Frequência de knots inválida: {hz}")
    n_segments = max(1, int(math.ceil((end - start) * hz - 1e-9)))
    n_control = n_segments + order - 1
    n_knots = n_control + order - 2
    times = start + (np.arange(n_knots) - (order - 2)) / hz
    return KnotVector(times), n_control


class LieSample(NamedTuple):
    element: ManifoldElement
    velocity: Optional[TangentVector]
    acceleration: Optional[TangentVector]


@dataclass(frozen=True, eq=False)
class SplineTrajectory:
    descriptor: GroupDescriptor
    order: int
    knots: KnotVector
    control_points: Tuple[ManifoldElement, ...]
    uniform: bool = True
    # Com closed=True o último knot pertence ao domínio (u = 1 no último segmento)
    closed: bool = False
    _matrices: List[BlendingMatrix] = field(default=None, init=False, repr=False)
    _cumulative: List[BlendingMatrix] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        k, n = self.order, len(self.control_points)
        if k < 1:
            raise InvalidArgumentError(f"Ordem do spline precisa ser >= 1, recebeu {k}")
        if n < k:
            raise InvalidArgumentError(f"São necessários pelo menos {k} pontos de controle, recebeu {n}")
        expected = n if k == 1 else n + k - 2
        if len(self.knots) != expected:
            raise InvalidArgumentError(f"Spline de ordem {k} com {n} pontos de controle precisa de {expected} knots, recebeu {len(self.knots)}")
        for cp in self.control_points:
            if cp.descriptor != self.descriptor:
                raise InvalidArgumentError(f"Ponto de controle em {cp.descriptor}, esperado {self.descriptor}")

        if self.uniform or k <= 2:
            shared = uniform_blending_matrix(k)
            matrices = [shared] * (n - k + 1)
        else:
            t = self.knots.times
            matrices = [nonuniform_blending_matrix(k, t[i:i + 2 * (k - 1)]) for i in range(n - k + 1)]
        object.__setattr__(self, "_matrices", matrices)
        object.__setattr__(self, "_cumulative", [cumulative_matrix(M) for M in matrices])

    @property
    def num_segments(self) -> int:
        return len(self.control_points) - self.order + 1

    @property
    def domain(self) -> Tuple[float, float]:
        k, n = self.order, len(self.control_points)
        if k == 1:
            return -math.inf, float(self.knots.times[n - 1])
        return float(self.knots.times[k - 2]), float(self.knots.times[n - 1])

    def blending(self, i: int) -> BlendingMatrix:
        return self._matrices[i]

    def cumulative(self, i: int) -> BlendingMatrix:
        return self._cumulative[i]

    def segment_interval(self, i: int) -> Tuple[float, float]:
        k = self.order
        return self.knots.at(i + k - 2), self.knots.at(i + k - 1)

    def points(self, i: int) -> np.ndarray:
        return np.stack([cp.data for cp in self.control_points[i:i + self.order]])

    def with_control_points(self, values: Sequence[np.ndarray]) -> "SplineTrajectory":
        cps = tuple(ManifoldElement(self.descriptor, v) for v in values)
        return SplineTrajectory(self.descriptor, self.order, self.knots, cps, self.uniform, self.closed)

    def contains(self, t: float) -> bool:
        lo, hi = self.domain
        return lo <= t < hi or (self.closed and t == hi)


def segment_for_time(spline: SplineTrajectory, t: float) -> Tuple[int, float]:
    lo, hi = spline.domain
    if not spline.contains(t):
        bracket = "]" if spline.closed else ")"
        raise OutOfDomainError(f"Tempo {t} fora do domínio do spline [{lo}, {hi}{bracket}", (lo, hi), [t])
    k = spline.order
    if t == hi:
        return (len(spline.control_points) - 1, 0.0) if k == 1 else (spline.num_segments - 1, 1.0)
    times = spline.knots.times
    if k == 1:
        return int(np.searchsorted(times, t, side="right")), 0.0
    j = int(np.searchsorted(times, t, side="right")) - 1
    i = min(j - (k - 2), spline.num_segments - 1)
    left, right = spline.segment_interval(i)
    return i, (t - left) / (right - left)


def _segment_dt(spline: SplineTrajectory, i: int) -> float:
    if spline.order == 1:
        return 1.0
    left, right = spline.segment_interval(i)
    return right - left


def _check_deriv(deriv: int) -> None:
    if deriv < 0 or deriv > MAX_DERIV:
        raise UnsupportedError(f"Derivada de ordem {deriv} não suportada (máximo {MAX_DERIV})")


def eval_vector(spline: SplineTrajectory, t: float, deriv: int = 0) -> np.ndarray:
    _check_deriv(deriv)
    if not spline.descriptor.is_vector_space:
        raise InvalidArgumentError(f"eval_vector exige espaço vetorial, recebeu {spline.descriptor}")
    i, u = segment_for_time(spline, t)
    if spline.order == 1 and deriv > 0:
        return np.zeros(spline.descriptor.dof)
    lam = spline.blending(i).weights(u, deriv, _segment_dt(spline, i))
    return lam @ spline.points(i)


class CumulativeResult(NamedTuple):
    value: np.ndarray
    velocity: Optional[np.ndarray]
    acceleration: Optional[np.ndarray]
    # Jacobianos em relação à perturbação à direita de cada um dos k pontos
    d_value: Optional[List[np.ndarray]]
    d_velocity: Optional[List[np.ndarray]]
    d_acceleration: Optional[List[np.ndarray]]


def cumulative_eval_batch(desc: GroupDescriptor, points: np.ndarray, mtilde: np.ndarray, u: np.ndarray,
                          dt: float, deriv: int = 0, jacobians: bool = False) -> CumulativeResult:
    """
    Avaliação cumulativa x_i ∘ A_1 ∘ ... ∘ A_{k-1} de um segmento em vários u de uma vez.

    Velocidade/aceleração saem no referencial do corpo e os Jacobianos são
    analíticos pela regra da cadeia. Todo campo ganha um eixo inicial N
    (um por valor de u); os incrementos d_j entre pontos de controle e seus
    J_r^-1 são calculados uma única vez por chamada.
    """
    k = points.shape[0]
    dof = desc.dof
    u = np.asarray(u, dtype=float).reshape(-1)
    n = u.size
    eye = np.eye(dof)
    lam = power_matrix(k, u, 0) @ mtilde.T
    dlam = power_matrix(k, u, 1) @ mtilde.T / dt if deriv >= 1 else None
    ddlam = power_matrix(k, u, 2) @ mtilde.T / dt ** 2 if deriv >= 2 else None

    d = [None] + [desc.boxminus(points[j], points[j - 1]) for j in range(1, k)]
    A = [None] + [desc.exp_batch(lam[:, j, None] * d[j]) for j in range(1, k)]

    # Produtos sufixo S_j = A_{j+1} ∘ ... ∘ A_{k-1}
    suffix = [None] * k
    suffix[k - 1] = np.tile(desc.identity(), (n, 1))
    for j in range(k - 2, -1, -1):
        suffix[j] = desc.compose_batch(A[j + 1], suffix[j + 1])
    value = desc.compose_batch(np.tile(points[0], (n, 1)), suffix[0])

    vel = np.zeros((n, dof)) if deriv >= 1 else None
    acc = np.zeros((n, dof)) if deriv >= 2 else None
    jv = [np.zeros((n, dof, dof)) for _ in range(k)] if (jacobians and deriv >= 1) else None
    ja = [np.zeros((n, dof, dof)) for _ in range(k)] if (jacobians and deriv >= 2) else None

    if deriv >= 1:
        for j in range(1, k):
            ad_inv = desc.adjoint_batch(desc.inverse_batch(A[j]))
            eta = dlam[:, j, None] * d[j]
            v_prev = vel
            vel = np.einsum("nij,nj->ni", ad_inv, v_prev) + eta
            if deriv >= 2:
                a_prev = acc
                acc = (np.einsum("nij,nj->ni", ad_inv, a_prev) + ddlam[:, j, None] * d[j]
                       + np.einsum("nij,nj->ni", desc.small_adjoint_batch(vel), eta))
            if jacobians:
                jr_neg = desc.jr_batch(-lam[:, j, None] * d[j])
                for l in range(1, j):
                    jv[l] = ad_inv @ jv[l]
                jv[j] = (lam[:, j, None, None] * (ad_inv @ desc.small_adjoint_batch(v_prev) @ jr_neg)
                         + dlam[:, j, None, None] * eye)
                if deriv >= 2:
                    ad_eta = desc.small_adjoint_batch(eta)
                    for l in range(1, j):
                        ja[l] = ad_inv @ ja[l] - ad_eta @ jv[l]
                    ja[j] = (lam[:, j, None, None] * (ad_inv @ desc.small_adjoint_batch(a_prev) @ jr_neg)
                             + ddlam[:, j, None, None] * eye
                             + dlam[:, j, None, None] * desc.small_adjoint_batch(vel) - ad_eta @ jv[j])

    d_value = d_velocity = d_acceleration = None
    if jacobians:
        jd = [None] + [desc.adjoint_batch(desc.inverse_batch(suffix[j]))
                       @ (lam[:, j, None, None] * desc.jr_batch(lam[:, j, None] * d[j]))
                       for j in range(1, k)]
        jr_inv_d = [None] + [desc.jr_inv(d[j]) for j in range(1, k)]
        jl_inv_d = [None] + [desc.jr_inv(-d[j]) for j in range(1, k)]

        def chain(jd_list, base):
            out = []
            for m in range(k):
                jm = base.copy() if m == 0 else np.zeros((n, dof, dof))
                if m >= 1:
                    jm += jd_list[m] @ jr_inv_d[m]
                if m + 1 <= k - 1:
                    jm -= jd_list[m + 1] @ jl_inv_d[m + 1]
                out.append(jm)
            return out

        d_value = chain(jd, desc.adjoint_batch(desc.inverse_batch(suffix[0])))
        zero = np.zeros((n, dof, dof))
        if jv is not None:
            d_velocity = chain(jv, zero)
        if ja is not None:
            d_acceleration = chain(ja, zero)
    return CumulativeResult(value, vel, acc, d_value, d_velocity, d_acceleration)


def take_sample(res: CumulativeResult, m: int) -> CumulativeResult:
    """
    Fatia a amostra m de um resultado em lote.
    """
    def pick(field_):
        if field_ is None:
            return None
        if isinstance(field_, list):
            return [block[m] for block in field_]
        return field_[m]

    return CumulativeResult(*(pick(f) for f in res))


def cumulative_eval(desc: GroupDescriptor, points: np.ndarray, mtilde: np.ndarray, u: float,
                    dt: float, deriv: int = 0, jacobians: bool = False) -> CumulativeResult:
    res = cumulative_eval_batch(desc, points, mtilde, np.array([u], dtype=float), dt, deriv, jacobians)
    return take_sample(res, 0)


def _evaluate(spline: SplineTrajectory, t: float, deriv: int, jacobians: bool) -> CumulativeResult:
    _check_deriv(deriv)
    i, u = segment_for_time(spline, t)
    return cumulative_eval(spline.descriptor, spline.points(i), spline.cumulative(i).entries,
                           u, _segment_dt(spline, i), deriv, jacobians)


def eval_lie(spline: SplineTrajectory, t: float, deriv: int = 0) -> LieSample:
    res = _evaluate(spline, t, deriv, jacobians=False)
    desc = spline.descriptor
    vel = TangentVector(desc, res.velocity) if res.velocity is not None else None
    acc = TangentVector(desc, res.acceleration) if res.acceleration is not None else None
    return LieSample(ManifoldElement(desc, res.value), vel, acc)


def eval_lie_many(spline: SplineTrajectory, times: Sequence[float], deriv: int = 0) -> CumulativeResult:
    """
    eval_lie em vários tempos, com um lote por segmento. Linhas na ordem de times.
    """
    _check_deriv(deriv)
    times = np.asarray(times, dtype=float).reshape(-1)
    desc = spline.descriptor
    n = times.size
    value = np.zeros((n, desc.ambient_dim))
    vel = np.zeros((n, desc.dof)) if deriv >= 1 else None
    acc = np.zeros((n, desc.dof)) if deriv >= 2 else None
    located = [segment_for_time(spline, float(t)) for t in times]
    segments = np.array([i for i, _ in located], dtype=int)
    us = np.array([u for _, u in located], dtype=float)
    for i in np.unique(segments):
        idx = np.flatnonzero(segments == i)
        res = cumulative_eval_batch(desc, spline.points(i), spline.cumulative(i).entries, us[idx],
                                    _segment_dt(spline, i), deriv)
        value[idx] = res.value
        if vel is not None:
            vel[idx] = res.velocity
        if acc is not None:
            acc[idx] = res.acceleration
    return CumulativeResult(value, vel, acc, None, None, None)


def control_point_jacobians(spline: SplineTrajectory, t: float, deriv: int = 0) -> List[np.ndarray]:
    res = _evaluate(spline, t, deriv, jacobians=True)
    return [res.d_value, res.d_velocity, res.d_acceleration][deriv]


def control_point_times(spline: SplineTrajectory) -> np.ndarray:
    """
    Tempo dominante de cada ponto de controle: meio do seu suporte [t_{j-1}, t_{j+k-1}).
    """
    k = spline.order
    return np.array([0.5 * (spline.knots.at(j - 1) + spline.knots.at(j + k - 1))
                     for j in range(len(spline.control_points))])
