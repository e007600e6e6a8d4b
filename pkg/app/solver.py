"""
Estimação MAP em lote: linearização do grafo de fatores, Gauss-Newton com
amortecimento Levenberg-Marquardt, atualização por retração (boxplus) e
recuperação de covariância pela aproximação de Laplace.

Equações normais montadas como J^T J esparso, com os fatores empilhados na
ordem de inserção; fatoração Cholesky em banda após reordenação
Cuthill-McKee reversa.
"""
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded
from scipy.sparse.csgraph import reverse_cuthill_mckee

from app.config import SolveReport, SolverConfig
from app.errors import InvalidArgumentError, NoConvergenceError, RankDeficiencyError
from app.factors import Factor
from app.manifold import GroupDescriptor

logger = logging.getLogger(__name__)


@dataclass
class Variable:
    key: int
    descriptor: GroupDescriptor
    value: np.ndarray
    label: str
    time: Optional[float] = None
    fixed: bool = False


@dataclass
class Problem:
    variables: List[Variable] = field(default_factory=list)
    factors: List[Factor] = field(default_factory=list)

    def add_variable(self, descriptor: GroupDescriptor, value, label: Optional[str] = None,
                     time: Optional[float] = None, fixed: bool = False) -> int:
        key = len(self.variables)
        value = descriptor.wrap(np.asarray(value, dtype=float).reshape(-1))
        if value.shape[0] != descriptor.ambient_dim:
            raise InvalidArgumentError(f"Valor inicial com dimensão {value.shape[0]}, esperado {descriptor.ambient_dim}")
        self.variables.append(Variable(key, descriptor, value, label or f"x{key}", time, fixed))
        return key

    def add_factor(self, factor: Factor) -> None:
        for k in factor.keys:
            if not 0 <= k < len(self.variables):
                raise InvalidArgumentError(f"Fator {factor.name} referencia variável inexistente {k}")
        self.factors.append(factor)

    def fix(self, key: int) -> None:
        self.variables[key].fixed = True

    def values(self) -> List[np.ndarray]:
        return [v.value for v in self.variables]

    def set_values(self, values: Sequence[np.ndarray]) -> None:
        for var, value in zip(self.variables, values):
            var.value = value

    def layout(self) -> Tuple[Dict[int, slice], int]:
        """
        Offset de cada variável livre no vetor tangente global (ordem de inserção).
        """
        offsets, n = {}, 0
        for var in self.variables:
            if not var.fixed:
                offsets[var.key] = slice(n, n + var.descriptor.dof)
                n += var.descriptor.dof
        return offsets, n


@dataclass
class NormalEquations:
    H: sparse.csc_matrix
    b: np.ndarray
    cost: float
    offsets: Dict[int, slice]


def _factor_values(values: Sequence[np.ndarray], factor: Factor) -> List[np.ndarray]:
    return [values[k] for k in factor.keys]


def _map_ordered(fn, items, threads: int):
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def linearize(problem: Problem, values: Optional[Sequence[np.ndarray]] = None, threads: int = 1) -> NormalEquations:
    """
    H = J^T J e b = -J^T e com J e e já branqueados, empilhados na ordem dos fatores.
    """
    values = problem.values() if values is None else values
    offsets, n = problem.layout()
    results = _map_ordered(lambda f: f.linearize(_factor_values(values, f)), problem.factors, threads)

    rows, cols, data, residuals = [], [], [], []
    cost = 0.0
    start = 0
    for factor, (e, jacs) in zip(problem.factors, results):
        cost += float(e @ e)
        m = e.shape[0]
        for k, j in zip(factor.keys, jacs):
            sl = offsets.get(k)
            if sl is None:
                continue
            width = sl.stop - sl.start
            rows.append(np.repeat(np.arange(start, start + m), width))
            cols.append(np.tile(np.arange(sl.start, sl.stop), m))
            data.append(np.asarray(j, dtype=float).ravel())
        residuals.append(e)
        start += m

    if data:
        J = sparse.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(start, n)).tocsr()
        e_all = np.concatenate(residuals)
        H = (J.T @ J).tocsc()
        b = -(J.T @ e_all)
    else:
        H = sparse.csc_matrix((n, n))
        b = np.zeros(n)
    return NormalEquations(H, np.asarray(b, dtype=float).reshape(-1), cost, offsets)


def total_cost(problem: Problem, values: Sequence[np.ndarray], threads: int = 1) -> float:
    costs = _map_ordered(lambda f: f.cost(_factor_values(values, f)), problem.factors, threads)
    return float(sum(costs))


class BandedCholesky:
    """
    Cholesky em banda de H (simétrica) após reordenação RCM.
    """

    def __init__(self, H, block_names: Optional[Sequence[Tuple[str, slice]]] = None):
        H = sparse.csr_matrix(H)
        n = H.shape[0]
        self.n = n
        self.block_names = list(block_names or [])
        if n == 0:
            self.perm = np.zeros(0, dtype=int)
            self.factor = None
            return
        self.perm = reverse_cuthill_mckee(H, symmetric_mode=True).astype(int)
        hp = H[self.perm][:, self.perm].tocoo()
        upper = hp.row <= hp.col
        r, c, v = hp.row[upper], hp.col[upper], hp.data[upper]
        bandwidth = int((c - r).max()) if r.size else 0
        ab = np.zeros((bandwidth + 1, n))
        np.add.at(ab, (bandwidth + r - c, c), v)
        try:
            self.factor = cholesky_banded(ab, lower=False)
        except LinAlgError as e:
            raise RankDeficiencyError(
                f"Equações normais singulares ou indefinidas: {e}", self._blocks_from_error(str(e), H))

    def _blocks_from_error(self, message: str, H) -> List[str]:
        diag = np.abs(H.diagonal())
        suspects = set(np.flatnonzero(diag == 0.0).tolist())
        match = re.search(r"(\d+)", message)
        if match:
            pivot = int(match.group(1)) - 1
            if 0 <= pivot < self.n:
                suspects.add(int(self.perm[pivot]))
        if not self.block_names:
            return [str(i) for i in sorted(suspects)]
        return [name for name, sl in self.block_names if any(sl.start <= i < sl.stop for i in suspects)]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self.n == 0:
            return np.zeros_like(rhs)
        x = cho_solve_banded((self.factor, False), rhs[self.perm])
        out = np.empty_like(x)
        out[self.perm] = x
        return out


def solve_normal_equations(H, b: np.ndarray, block_names: Optional[Sequence[Tuple[str, slice]]] = None) -> np.ndarray:
    H = sparse.csc_matrix(H)
    if H.shape[0] != H.shape[1] or H.shape[0] != np.asarray(b).shape[0]:
        raise InvalidArgumentError(f"Dimensões incompatíveis: H {H.shape}, b {np.asarray(b).shape}")
    return BandedCholesky(H, block_names).solve(b)


def _block_names(problem: Problem, offsets: Dict[int, slice]) -> List[Tuple[str, slice]]:
    return [(problem.variables[k].label, sl) for k, sl in offsets.items()]


def _check_coverage(problem: Problem) -> None:
    touched = set()
    for f in problem.factors:
        touched.update(f.keys)
    loose = [v.label for v in problem.variables if not v.fixed and v.key not in touched]
    if loose:
        raise RankDeficiencyError(f"Variáveis sem nenhum fator: {', '.join(loose[:10])}", loose)


def retract(problem: Problem, values: Sequence[np.ndarray], delta: np.ndarray,
            offsets: Dict[int, slice]) -> List[np.ndarray]:
    out = list(values)
    for key, sl in offsets.items():
        desc = problem.variables[key].descriptor
        out[key] = desc.boxplus(values[key], delta[sl])
    return out


def optimize(problem: Problem, config: Optional[SolverConfig] = None) -> SolveReport:
    config = config or SolverConfig()
    started = time.perf_counter()
    _check_coverage(problem)

    values = problem.values()
    ne = linearize(problem, values, config.threads)
    names = _block_names(problem, ne.offsets)
    cost = ne.cost
    report = SolveReport(initial_cost=cost, final_cost=cost, cost_trace=[cost])
    lam = 0.0
    logger.info(f"[SOLVER] Início: {len(problem.variables)} variáveis, {len(problem.factors)} fatores, custo {cost:.6e}")

    for it in range(1, config.max_iter + 1):
        if ne.b.size == 0 or np.abs(ne.b).max() < config.grad_tol:
            report.reason = "gradient"
            break
        diag = ne.H.diagonal()
        stalled = False
        while True:
            H = ne.H + sparse.diags(lam * diag) if lam > 0.0 else ne.H
            delta = solve_normal_equations(H, ne.b, names)
            trial = retract(problem, values, delta, ne.offsets)
            # a linearização do passo serve à próxima iteração se ele for aceito
            trial_ne = linearize(problem, trial, config.threads)
            trial_cost = trial_ne.cost
            if trial_cost <= cost:
                break
            if trial_cost - cost <= config.cost_tol * cost:
                # aumento no nível do arredondamento: já estamos no mínimo
                stalled = True
                break
            lam = config.lm_lambda0 if lam == 0.0 else lam * config.lm_scale
            logger.debug(f"[SOLVER] Passo rejeitado (custo {trial_cost:.6e} > {cost:.6e}), lambda={lam:.1e}")
            if lam > config.lm_lambda_max:
                problem.set_values(values)
                report.lm_lambda = lam
                report.wall_time_s = time.perf_counter() - started
                raise NoConvergenceError(f"Amortecimento LM excedeu {config.lm_lambda_max:.0e} sem reduzir o custo", report)
        if stalled:
            report.reason = "cost"
            break

        rel = (cost - trial_cost) / cost if cost > 0.0 else 0.0
        step = float(np.linalg.norm(delta))
        values, cost, ne = trial, trial_cost, trial_ne
        report.iterations = it
        report.final_cost = cost
        report.cost_trace.append(cost)
        report.lm_lambda = lam
        logger.info(f"[SOLVER] Iteração {it}: custo {cost:.6e}, passo {step:.3e}, lambda {lam:.1e}")
        if lam > 0.0:
            lam /= config.lm_scale
            if lam < config.lm_lambda0:
                lam = 0.0

        if rel < config.cost_tol:
            report.reason = "cost"
            break
        if step < config.step_tol:
            report.reason = "step"
            break
    else:
        report.reason = "max_iter"

    problem.set_values(values)
    report.wall_time_s = time.perf_counter() - started
    logger.info(f"[SOLVER] Fim ({report.reason}): {report.iterations} iterações, custo {report.final_cost:.6e}")
    return report


class CovarianceRecovery:
    """
    Fatoração de H no ponto atual, reutilizada para extrair blocos de H^-1.
    """

    def __init__(self, problem: Problem, threads: int = 1):
        self.problem = problem
        ne = linearize(problem, threads=threads)
        self.offsets = ne.offsets
        self.chol = BandedCholesky(ne.H, _block_names(problem, ne.offsets))

    def joint(self, keys: Sequence[int]) -> np.ndarray:
        idx = []
        for k in keys:
            if k not in self.offsets:
                raise InvalidArgumentError(f"Variável {self.problem.variables[k].label} está fixa ou não existe")
            sl = self.offsets[k]
            idx.extend(range(sl.start, sl.stop))
        idx = np.asarray(idx, dtype=int)
        rhs = np.zeros((self.chol.n, idx.size))
        rhs[idx, np.arange(idx.size)] = 1.0
        cols = self.chol.solve(rhs)
        out = cols[idx]
        return 0.5 * (out + out.T)


def recover_covariance(problem: Problem, query: Sequence[int], threads: int = 1) -> np.ndarray:
    return CovarianceRecovery(problem, threads).joint(query)
