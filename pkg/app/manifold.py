"""
Álgebra de grupos de Lie compostos: espaço vetorial, SO(2), SE(2) e produtos.

Convenção à direita em todo o pacote:
    boxplus(x, tau)  = x ∘ Exp(tau)
    boxminus(y, x)   = Log(x^-1 ∘ y)

SO(2) é armazenado como ângulo em (-pi, pi]; SE(2) como (x, y, theta).
As operações sobre arrays crus ficam nos métodos de GroupDescriptor (usados
pelos módulos spline/gp/factors no laço interno); as funções do módulo
trabalham com os tipos ManifoldElement/TangentVector.
"""
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from scipy.linalg import block_diag

from app.errors import InvalidArgumentError

# Abaixo deste ângulo usamos séries de Taylor nas fórmulas de SE(2)
_SMALL_ANGLE = 1e-3
# As derivadas de J_r dividem por theta^4; a série vale até aqui
_SERIES_ANGLE = 5e-2


def wrap_angle(a):
    """
    Normaliza ângulo(s) para o intervalo (-pi, pi].
    """
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


class GroupKind(str, Enum):
    VECTOR = "vector"
    SO2 = "so2"
    SE2 = "se2"
    PRODUCT = "product"


@dataclass(frozen=True)
class GroupDescriptor:
    """
    Descreve o grupo de um estado. Produtos são achatados na ordem de declaração.
    """
    kind: GroupKind
    size: int = 0
    parts: Tuple["GroupDescriptor", ...] = ()

    # --- Dimensões ---

    @cached_property
    def dof(self) -> int:
        if self.kind == GroupKind.VECTOR:
            return self.size
        if self.kind == GroupKind.SO2:
            return 1
        if self.kind == GroupKind.SE2:
            return 3
        return sum(p.dof for p in self.parts)

    @cached_property
    def ambient_dim(self) -> int:
        if self.kind == GroupKind.PRODUCT:
            return sum(p.ambient_dim for p in self.parts)
        return self.dof

    @cached_property
    def is_vector_space(self) -> bool:
        if self.kind == GroupKind.PRODUCT:
            return all(p.is_vector_space for p in self.parts)
        return self.kind == GroupKind.VECTOR

    @cached_property
    def is_abelian(self) -> bool:
        if self.kind == GroupKind.PRODUCT:
            return all(p.is_abelian for p in self.parts)
        return self.kind in (GroupKind.VECTOR, GroupKind.SO2)

    @cached_property
    def tangent_slices(self) -> List[slice]:
        return _slices([p.dof for p in self.parts])

    @cached_property
    def ambient_slices(self) -> List[slice]:
        return _slices([p.ambient_dim for p in self.parts])

    def __str__(self) -> str:
        if self.kind == GroupKind.VECTOR:
            return f"R{self.size}"
        if self.kind == GroupKind.PRODUCT:
            return "x".join(str(p) for p in self.parts)
        return self.kind.value.upper()

    # --- Operações sobre arrays crus ---

    def identity(self) -> np.ndarray:
        return np.zeros(self.ambient_dim)

    def wrap(self, x: np.ndarray) -> np.ndarray:
        x = np.array(x, dtype=float)
        if self.kind == GroupKind.SO2:
            x[0] = wrap_angle(x[0])
        elif self.kind == GroupKind.SE2:
            x[2] = wrap_angle(x[2])
        elif self.kind == GroupKind.PRODUCT:
            for p, sl in zip(self.parts, self.ambient_slices):
                x[sl] = p.wrap(x[sl])
        return x

    def exp(self, tau: np.ndarray) -> np.ndarray:
        if self.kind == GroupKind.VECTOR:
            return np.array(tau, dtype=float)
        if self.kind == GroupKind.SO2:
            return wrap_angle(np.array(tau, dtype=float).reshape(1))
        if self.kind == GroupKind.SE2:
            return _se2_exp(tau)
        return np.concatenate([p.exp(tau[sl]) for p, sl in zip(self.parts, self.tangent_slices)])

    def log(self, x: np.ndarray) -> np.ndarray:
        if self.kind == GroupKind.VECTOR:
            return np.array(x, dtype=float)
        if self.kind == GroupKind.SO2:
            return wrap_angle(np.array(x, dtype=float).reshape(1))
        if self.kind == GroupKind.SE2:
            return _se2_log(x)
        return np.concatenate([p.log(x[sl]) for p, sl in zip(self.parts, self.ambient_slices)])

    def compose(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.kind == GroupKind.VECTOR:
            return a + b
        if self.kind == GroupKind.SO2:
            return wrap_angle(a + b).reshape(1)
        if self.kind == GroupKind.SE2:
            c, s = np.cos(a[2]), np.sin(a[2])
            return np.array([a[0] + c * b[0] - s * b[1],
                             a[1] + s * b[0] + c * b[1],
                             wrap_angle(a[2] + b[2])])
        return np.concatenate([p.compose(a[sl], b[sl]) for p, sl in zip(self.parts, self.ambient_slices)])

    def inverse(self, a: np.ndarray) -> np.ndarray:
        if self.kind == GroupKind.VECTOR:
            return -np.asarray(a, dtype=float)
        if self.kind == GroupKind.SO2:
            return wrap_angle(-np.asarray(a, dtype=float)).reshape(1)
        if self.kind == GroupKind.SE2:
            c, s = np.cos(a[2]), np.sin(a[2])
            return np.array([-(c * a[0] + s * a[1]),
                             -(-s * a[0] + c * a[1]),
                             wrap_angle(-a[2])])
        return np.concatenate([p.inverse(a[sl]) for p, sl in zip(self.parts, self.ambient_slices)])

    def boxplus(self, x: np.ndarray, tau: np.ndarray) -> np.ndarray:
        if self.kind == GroupKind.VECTOR:
            return x + tau
        return self.compose(x, self.exp(tau))

    def boxminus(self, y: np.ndarray, x: np.ndarray) -> np.ndarray:
        if self.kind == GroupKind.VECTOR:
            return y - x
        return self.log(self.compose(self.inverse(x), y))

    def jr(self, tau: np.ndarray) -> np.ndarray:
        if self.kind in (GroupKind.VECTOR, GroupKind.SO2):
            return np.eye(self.dof)
        if self.kind == GroupKind.SE2:
            return _se2_jr(tau)
        return block_diag(*[p.jr(tau[sl]) for p, sl in zip(self.parts, self.tangent_slices)])

    def jr_inv(self, tau: np.ndarray) -> np.ndarray:
        if self.kind in (GroupKind.VECTOR, GroupKind.SO2):
            return np.eye(self.dof)
        if self.kind == GroupKind.SE2:
            return _se2_jr_inv(tau)
        return block_diag(*[p.jr_inv(tau[sl]) for p, sl in zip(self.parts, self.tangent_slices)])

    def jr_partials(self, tau: np.ndarray) -> np.ndarray:
        """
        out[k] = ∂J_r/∂tau_k, formato (dof, dof, dof).
        """
        n = self.dof
        if self.kind in (GroupKind.VECTOR, GroupKind.SO2):
            return np.zeros((n, n, n))
        if self.kind == GroupKind.SE2:
            return _se2_jr_partials(tau)
        out = np.zeros((n, n, n))
        for p, sl in zip(self.parts, self.tangent_slices):
            out[sl, sl, sl] = p.jr_partials(tau[sl])
        return out

    def jr_second_partials(self, tau: np.ndarray) -> np.ndarray:
        """
        out[k, l] = ∂²J_r/∂tau_k∂tau_l, formato (dof, dof, dof, dof).
        """
        n = self.dof
        if self.kind in (GroupKind.VECTOR, GroupKind.SO2):
            return np.zeros((n, n, n, n))
        if self.kind == GroupKind.SE2:
            return _se2_jr_second_partials(tau)
        out = np.zeros((n, n, n, n))
        for p, sl in zip(self.parts, self.tangent_slices):
            out[sl, sl, sl, sl] = p.jr_second_partials(tau[sl])
        return out

    def djr_inv_dt(self, tau: np.ndarray, tau_dot: np.ndarray) -> np.ndarray:
        if self.is_abelian:
            return np.zeros((self.dof, self.dof))
        jr_inv = self.jr_inv(tau)
        jr_dot = np.tensordot(np.asarray(tau_dot, dtype=float), self.jr_partials(tau), axes=1)
        return -jr_inv @ jr_dot @ jr_inv

    def adjoint(self, x: np.ndarray) -> np.ndarray:
        if self.kind in (GroupKind.VECTOR, GroupKind.SO2):
            return np.eye(self.dof)
        if self.kind == GroupKind.SE2:
            c, s = np.cos(x[2]), np.sin(x[2])
            return np.array([[c, -s, x[1]],
                             [s, c, -x[0]],
                             [0.0, 0.0, 1.0]])
        return block_diag(*[p.adjoint(x[sl]) for p, sl in zip(self.parts, self.ambient_slices)])

    def small_adjoint(self, tau: np.ndarray) -> np.ndarray:
        if self.kind in (GroupKind.VECTOR, GroupKind.SO2):
            return np.zeros((self.dof, self.dof))
        if self.kind == GroupKind.SE2:
            return np.array([[0.0, -tau[2], tau[1]],
                             [tau[2], 0.0, -tau[0]],
                             [0.0, 0.0, 0.0]])
        return block_diag(*[p.small_adjoint(tau[sl]) for p, sl in zip(self.parts, self.tangent_slices)])

    # --- Operações em lote: arrays (N, ...) com uma linha por amostra ---

    def exp_batch(self, tau: np.ndarray) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        if self.kind == GroupKind.VECTOR:
            return tau.copy()
        if self.kind == GroupKind.SO2:
            return wrap_angle(tau)
        if self.kind == GroupKind.SE2:
            a, b, _, _ = _se2_abcd_batch(tau[:, 2])
            return np.column_stack([a * tau[:, 0] - b * tau[:, 1], b * tau[:, 0] + a * tau[:, 1], wrap_angle(tau[:, 2])])
        return np.concatenate([p.exp_batch(tau[:, sl]) for p, sl in zip(self.parts, self.tangent_slices)], axis=1)

    def compose_batch(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.kind == GroupKind.VECTOR:
            return a + b
        if self.kind == GroupKind.SO2:
            return wrap_angle(a + b)
        if self.kind == GroupKind.SE2:
            c, s = np.cos(a[:, 2]), np.sin(a[:, 2])
            return np.column_stack([a[:, 0] + c * b[:, 0] - s * b[:, 1],
                                    a[:, 1] + s * b[:, 0] + c * b[:, 1],
                                    wrap_angle(a[:, 2] + b[:, 2])])
        return np.concatenate([p.compose_batch(a[:, sl], b[:, sl]) for p, sl in zip(self.parts, self.ambient_slices)],
                              axis=1)

    def inverse_batch(self, a: np.ndarray) -> np.ndarray:
        if self.kind == GroupKind.VECTOR:
            return -a
        if self.kind == GroupKind.SO2:
            return wrap_angle(-a)
        if self.kind == GroupKind.SE2:
            c, s = np.cos(a[:, 2]), np.sin(a[:, 2])
            return np.column_stack([-(c * a[:, 0] + s * a[:, 1]), s * a[:, 0] - c * a[:, 1], wrap_angle(-a[:, 2])])
        return np.concatenate([p.inverse_batch(a[:, sl]) for p, sl in zip(self.parts, self.ambient_slices)], axis=1)

    def adjoint_batch(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        if self.kind in (GroupKind.VECTOR, GroupKind.SO2):
            return np.broadcast_to(np.eye(self.dof), (n, self.dof, self.dof)).copy()
        if self.kind == GroupKind.SE2:
            c, s = np.cos(x[:, 2]), np.sin(x[:, 2])
            out = np.zeros((n, 3, 3))
            out[:, 0, 0] = c
            out[:, 0, 1] = -s
            out[:, 0, 2] = x[:, 1]
            out[:, 1, 0] = s
            out[:, 1, 1] = c
            out[:, 1, 2] = -x[:, 0]
            out[:, 2, 2] = 1.0
            return out
        return self._block_batch(n, [p.adjoint_batch(x[:, sl]) for p, sl in zip(self.parts, self.ambient_slices)])

    def small_adjoint_batch(self, tau: np.ndarray) -> np.ndarray:
        n = tau.shape[0]
        if self.kind in (GroupKind.VECTOR, GroupKind.SO2):
            return np.zeros((n, self.dof, self.dof))
        if self.kind == GroupKind.SE2:
            out = np.zeros((n, 3, 3))
            out[:, 0, 1] = -tau[:, 2]
            out[:, 0, 2] = tau[:, 1]
            out[:, 1, 0] = tau[:, 2]
            out[:, 1, 2] = -tau[:, 0]
            return out
        return self._block_batch(n, [p.small_adjoint_batch(tau[:, sl]) for p, sl in zip(self.parts, self.tangent_slices)])

    def jr_batch(self, tau: np.ndarray) -> np.ndarray:
        n = tau.shape[0]
        if self.kind in (GroupKind.VECTOR, GroupKind.SO2):
            return np.broadcast_to(np.eye(self.dof), (n, self.dof, self.dof)).copy()
        if self.kind == GroupKind.SE2:
            a, b, c, d = _se2_abcd_batch(tau[:, 2])
            r1, r2 = tau[:, 0], tau[:, 1]
            out = np.zeros((n, 3, 3))
            out[:, 0, 0] = a
            out[:, 0, 1] = b
            out[:, 0, 2] = r1 * c - r2 * d
            out[:, 1, 0] = -b
            out[:, 1, 1] = a
            out[:, 1, 2] = r1 * d + r2 * c
            out[:, 2, 2] = 1.0
            return out
        return self._block_batch(n, [p.jr_batch(tau[:, sl]) for p, sl in zip(self.parts, self.tangent_slices)])

    def _block_batch(self, n: int, blocks: List[np.ndarray]) -> np.ndarray:
        out = np.zeros((n, self.dof, self.dof))
        for block, sl in zip(blocks, self.tangent_slices):
            out[:, sl, sl] = block
        return out


def VectorSpace(n: int) -> GroupDescriptor:
    if n < 1:
        raise InvalidArgumentError(f"Dimensão de espaço vetorial inválida: {n}")
    return GroupDescriptor(GroupKind.VECTOR, size=int(n))


def SO2() -> GroupDescriptor:
    return GroupDescriptor(GroupKind.SO2)


def SE2() -> GroupDescriptor:
    return GroupDescriptor(GroupKind.SE2)


def Product(*parts: GroupDescriptor) -> GroupDescriptor:
    if not parts:
        raise InvalidArgumentError("Produto precisa de pelo menos um fator")
    return GroupDescriptor(GroupKind.PRODUCT, parts=tuple(parts))


def _slices(sizes: List[int]) -> List[slice]:
    out, start = [], 0
    for n in sizes:
        out.append(slice(start, start + n))
        start += n
    return out


# --- SE(2) ---

def _se2_coeffs(theta: float) -> Tuple[float, float]:
    """
    Retorna (sin(t)/t, (1 - cos(t))/t) com série de Taylor perto de zero.
    """
    if abs(theta) < _SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0 + t2 * t2 / 120.0, theta / 2.0 - theta * t2 / 24.0 + theta * t2 * t2 / 720.0
    return np.sin(theta) / theta, (1.0 - np.cos(theta)) / theta


def _se2_exp(tau: np.ndarray) -> np.ndarray:
    rho_x, rho_y, theta = float(tau[0]), float(tau[1]), float(tau[2])
    a, b = _se2_coeffs(theta)
    return np.array([a * rho_x - b * rho_y, b * rho_x + a * rho_y, float(wrap_angle(theta))])


def _se2_log(x: np.ndarray) -> np.ndarray:
    theta = float(wrap_angle(x[2]))
    a, b = _se2_coeffs(theta)
    det = a * a + b * b
    return np.array([(a * x[0] + b * x[1]) / det, (-b * x[0] + a * x[1]) / det, theta])


def _se2_jr(tau: np.ndarray) -> np.ndarray:
    r1, r2, th = float(tau[0]), float(tau[1]), float(tau[2])
    a, b = _se2_coeffs(th)
    if abs(th) < _SMALL_ANGLE:
        t2 = th * th
        c1 = r1 * (th / 6.0 - th * t2 / 120.0) + r2 * (-0.5 + t2 / 24.0 - t2 * t2 / 720.0)
        c2 = r1 * (0.5 - t2 / 24.0 + t2 * t2 / 720.0) + r2 * (th / 6.0 - th * t2 / 120.0)
    else:
        s, c = np.sin(th), np.cos(th)
        c1 = (th * r1 - r2 + r2 * c - r1 * s) / (th * th)
        c2 = (r1 + th * r2 - r1 * c - r2 * s) / (th * th)
    return np.array([[a, b, c1],
                     [-b, a, c2],
                     [0.0, 0.0, 1.0]])


def _se2_jr_inv(tau: np.ndarray) -> np.ndarray:
    jr = _se2_jr(tau)
    a, b = jr[0, 0], jr[0, 1]
    det = a * a + b * b
    a_inv = np.array([[a, -b], [b, a]]) / det
    out = np.eye(3)
    out[:2, :2] = a_inv
    out[:2, 2] = -a_inv @ jr[:2, 2]
    return out


def _se2_scalars(theta: float) -> np.ndarray:
    """
    Linhas: valor, 1a e 2a derivada em theta de
    a = sin/t, b = (1 - cos)/t, c = (t - sin)/t^2, d = (1 - cos)/t^2.

    J_r(rho, theta) = [[a, b, rho1 c - rho2 d], [-b, a, rho1 d + rho2 c], [0, 0, 1]].
    """
    t = float(theta)
    if abs(t) < _SERIES_ANGLE:
        t2 = t * t
        t4 = t2 * t2
        t6 = t4 * t2
        return np.array([
            [1.0 - t2 / 6.0 + t4 / 120.0 - t6 / 5040.0,
             t * (0.5 - t2 / 24.0 + t4 / 720.0 - t6 / 40320.0),
             t * (1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t6 / 362880.0),
             0.5 - t2 / 24.0 + t4 / 720.0 - t6 / 40320.0],
            [t * (-1.0 / 3.0 + t2 / 30.0 - t4 / 840.0 + t6 / 45360.0),
             0.5 - t2 / 8.0 + t4 / 144.0 - t6 / 5760.0,
             1.0 / 6.0 - t2 / 40.0 + t4 / 1008.0 - t6 / 51840.0,
             t * (-1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0 + t6 / 453600.0)],
            [-1.0 / 3.0 + t2 / 10.0 - t4 / 168.0 + t6 / 6480.0,
             t * (-0.25 + t2 / 36.0 - t4 / 960.0 + t6 / 50400.0),
             t * (-0.05 + t2 / 252.0 - t4 / 8640.0),
             -1.0 / 12.0 + t2 / 60.0 - t4 / 1344.0 + t6 / 64800.0],
        ])
    s, c = np.sin(t), np.cos(t)
    t2, t3, t4 = t * t, t ** 3, t ** 4
    return np.array([
        [s / t, (1.0 - c) / t, (t - s) / t2, (1.0 - c) / t2],
        [(t * c - s) / t2, (t * s - 1.0 + c) / t2, (2.0 * s - t - t * c) / t3, (t * s - 2.0 + 2.0 * c) / t3],
        [(2.0 * s - 2.0 * t * c - t2 * s) / t3,
         (t2 * c - 2.0 * t * s + 2.0 - 2.0 * c) / t3,
         (4.0 * t * c + 2.0 * t + t2 * s - 6.0 * s) / t4,
         (t2 * c - 4.0 * t * s + 6.0 - 6.0 * c) / t4],
    ])


def _se2_abcd_batch(theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Versão vetorizada da primeira linha de _se2_scalars.
    """
    t = np.asarray(theta, dtype=float)
    small = np.abs(t) < _SERIES_ANGLE
    safe = np.where(small, 1.0, t)
    s, c = np.sin(safe), np.cos(safe)
    t2 = t * t
    t4 = t2 * t2
    t6 = t4 * t2
    a = np.where(small, 1.0 - t2 / 6.0 + t4 / 120.0 - t6 / 5040.0, s / safe)
    b = np.where(small, t * (0.5 - t2 / 24.0 + t4 / 720.0 - t6 / 40320.0), (1.0 - c) / safe)
    cc = np.where(small, t * (1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t6 / 362880.0), (safe - s) / (safe * safe))
    d = np.where(small, 0.5 - t2 / 24.0 + t4 / 720.0 - t6 / 40320.0, (1.0 - c) / (safe * safe))
    return a, b, cc, d


def _se2_jr_theta(row: np.ndarray, r1: float, r2: float) -> np.ndarray:
    a, b, c, d = row
    return np.array([[a, b, r1 * c - r2 * d],
                     [-b, a, r1 * d + r2 * c],
                     [0.0, 0.0, 0.0]])


def _se2_rho_column(c: float, d: float) -> Tuple[np.ndarray, np.ndarray]:
    # ∂/∂rho1 e ∂/∂rho2 só mexem na terceira coluna
    d_r1 = np.zeros((3, 3))
    d_r2 = np.zeros((3, 3))
    d_r1[:2, 2] = (c, d)
    d_r2[:2, 2] = (-d, c)
    return d_r1, d_r2


def _se2_jr_partials(tau: np.ndarray) -> np.ndarray:
    r1, r2, th = float(tau[0]), float(tau[1]), float(tau[2])
    f = _se2_scalars(th)
    d_r1, d_r2 = _se2_rho_column(f[0, 2], f[0, 3])
    return np.stack([d_r1, d_r2, _se2_jr_theta(f[1], r1, r2)])


def _se2_jr_second_partials(tau: np.ndarray) -> np.ndarray:
    r1, r2, th = float(tau[0]), float(tau[1]), float(tau[2])
    f = _se2_scalars(th)
    out = np.zeros((3, 3, 3, 3))
    d_r1, d_r2 = _se2_rho_column(f[1, 2], f[1, 3])
    out[0, 2] = out[2, 0] = d_r1
    out[1, 2] = out[2, 1] = d_r2
    out[2, 2] = _se2_jr_theta(f[2], r1, r2)
    return out


# --- Tipos públicos ---

@dataclass(frozen=True, eq=False)
class ManifoldElement:
    descriptor: GroupDescriptor
    data: np.ndarray = field(repr=True)

    def __post_init__(self):
        raw = np.asarray(self.data, dtype=float).reshape(-1)
        if raw.shape[0] != self.descriptor.ambient_dim:
            raise InvalidArgumentError(
                f"Elemento de {self.descriptor} precisa de {self.descriptor.ambient_dim} valores, recebeu {raw.shape[0]}")
        wrapped = self.descriptor.wrap(raw)
        wrapped.setflags(write=False)
        object.__setattr__(self, "data", wrapped)


@dataclass(frozen=True, eq=False)
class TangentVector:
    descriptor: GroupDescriptor
    data: np.ndarray

    def __post_init__(self):
        raw = np.array(self.data, dtype=float).reshape(-1)
        if raw.shape[0] != self.descriptor.dof:
            raise InvalidArgumentError(
                f"Vetor tangente de {self.descriptor} precisa de {self.descriptor.dof} valores, recebeu {raw.shape[0]}")
        raw.setflags(write=False)
        object.__setattr__(self, "data", raw)


TangentLike = Union[TangentVector, np.ndarray, List[float], Tuple[float, ...]]


def _tangent_array(desc: GroupDescriptor, tau: TangentLike) -> np.ndarray:
    if isinstance(tau, TangentVector):
        if tau.descriptor != desc:
            raise InvalidArgumentError(f"Descritor do vetor tangente ({tau.descriptor}) difere de {desc}")
        return np.asarray(tau.data)
    arr = np.asarray(tau, dtype=float).reshape(-1)
    if arr.shape[0] != desc.dof:
        raise InvalidArgumentError(f"Vetor tangente com dimensão {arr.shape[0]}, esperado {desc.dof} para {desc}")
    return arr


def _same_group(a: ManifoldElement, b: ManifoldElement) -> GroupDescriptor:
    if a.descriptor != b.descriptor:
        raise InvalidArgumentError(f"Descritores incompatíveis: {a.descriptor} e {b.descriptor}")
    return a.descriptor


def identity(desc: GroupDescriptor) -> ManifoldElement:
    return ManifoldElement(desc, desc.identity())


def exp(desc: GroupDescriptor, tau: TangentLike) -> ManifoldElement:
    return ManifoldElement(desc, desc.exp(_tangent_array(desc, tau)))


def log(x: ManifoldElement) -> TangentVector:
    return TangentVector(x.descriptor, x.descriptor.log(x.data))


def compose(a: ManifoldElement, b: ManifoldElement) -> ManifoldElement:
    desc = _same_group(a, b)
    return ManifoldElement(desc, desc.compose(a.data, b.data))


def inverse(a: ManifoldElement) -> ManifoldElement:
    return ManifoldElement(a.descriptor, a.descriptor.inverse(a.data))


def boxplus(x: ManifoldElement, tau: TangentLike) -> ManifoldElement:
    desc = x.descriptor
    return ManifoldElement(desc, desc.boxplus(x.data, _tangent_array(desc, tau)))


def boxminus(y: ManifoldElement, x: ManifoldElement) -> TangentVector:
    desc = _same_group(y, x)
    return TangentVector(desc, desc.boxminus(y.data, x.data))


def right_jacobian(desc: GroupDescriptor, tau: TangentLike) -> np.ndarray:
    return desc.jr(_tangent_array(desc, tau))


def right_jacobian_inv(desc: GroupDescriptor, tau: TangentLike) -> np.ndarray:
    return desc.jr_inv(_tangent_array(desc, tau))


def djr_inv_dt(desc: GroupDescriptor, tau: TangentLike, tau_dot: TangentLike) -> np.ndarray:
    """
    d/dt (J_r(xi(t))^-1) com xi(t) = tau + t * tau_dot.

    Zero para grupos abelianos (J_r constante). Nos demais sai de
    d(J^-1) = -J^-1 dJ J^-1 com dJ = sum_k tau_dot_k ∂J_r/∂tau_k.
    """
    return desc.djr_inv_dt(_tangent_array(desc, tau), _tangent_array(desc, tau_dot))


def adjoint(x: ManifoldElement) -> np.ndarray:
    return x.descriptor.adjoint(x.data)


def small_adjoint(desc: GroupDescriptor, tau: TangentLike) -> np.ndarray:
    return desc.small_adjoint(_tangent_array(desc, tau))


def glerp(x_i: ManifoldElement, x_ip1: ManifoldElement, alpha: float) -> ManifoldElement:
    """
    Interpolação linear generalizada: x_i ⊞ (alpha · (x_ip1 ⊟ x_i)).

    alpha fora de [0, 1] extrapola com a mesma taxa constante.
    """
    desc = _same_group(x_i, x_ip1)
    if desc.kind == GroupKind.VECTOR:
        return ManifoldElement(desc, (1.0 - alpha) * x_i.data + alpha * x_ip1.data)
    delta = desc.boxminus(x_ip1.data, x_i.data)
    return ManifoldElement(desc, desc.boxplus(x_i.data, alpha * delta))


def numerical_jacobian(f: Callable[[np.ndarray], np.ndarray], x0: np.ndarray,
                       desc_in: GroupDescriptor, desc_out: Optional[GroupDescriptor] = None,
                       h: float = 1e-6) -> np.ndarray:
    """
    Jacobiano por diferenças centrais sob perturbações à direita.

    f recebe e devolve arrays crus; com desc_out=None a saída é tratada como
    vetor (subtração comum), senão usa boxminus de desc_out.
    """
    x0 = np.asarray(x0, dtype=float)
    columns = []
    for j in range(desc_in.dof):
        step = np.zeros(desc_in.dof)
        step[j] = h
        f_plus = f(desc_in.boxplus(x0, step))
        f_minus = f(desc_in.boxplus(x0, -step))
        if desc_out is None:
            diff = np.asarray(f_plus) - np.asarray(f_minus)
        else:
            diff = desc_out.boxminus(f_plus, f_minus)
        columns.append(diff / (2.0 * h))
    return np.column_stack(columns)
