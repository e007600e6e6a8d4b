"""
Oráculos independentes usados só nos testes: diferenças centrais, de Boor
e suavizador RTS para a cadeia linear 1D (prior WNOA).
"""
import math

import numpy as np


def central_difference(f, x0, h=1e-6):
    """
    Jacobiano de f: R^n -> R^m por diferenças centrais comuns.
    """
    x0 = np.asarray(x0, dtype=float)
    cols = []
    for j in range(x0.size):
        step = np.zeros_like(x0)
        step[j] = h
        cols.append((np.asarray(f(x0 + step)) - np.asarray(f(x0 - step))) / (2.0 * h))
    return np.column_stack(cols)


def de_boor(knots, coeffs, degree, t):
    """
    Avaliação de de Boor clássica com o vetor de knots completo (len = n + degree + 1).
    """
    knots = np.asarray(knots, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    n = len(coeffs)
    span = int(np.searchsorted(knots, t, side="right")) - 1
    span = min(max(span, degree), n - 1)
    d = [coeffs[j + span - degree].copy() for j in range(degree + 1)]
    for r in range(1, degree + 1):
        for j in range(degree, r - 1, -1):
            i = j + span - degree
            alpha = (t - knots[i]) / (knots[i + degree + 1 - r] - knots[i])
            d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j]
    return d[degree]


def wnoa_matrices(dt, qc=1.0):
    phi = np.array([[1.0, dt], [0.0, 1.0]])
    q = qc * np.array([[dt ** 3 / 3.0, dt ** 2 / 2.0], [dt ** 2 / 2.0, dt]])
    return phi, q


def rts_smoother(times, measurements, sigma, p0_mean, p0_cov, qc=1.0):
    """
    Filtro de Kalman + RTS sobre a grade `times` para o estado [p, v] com
    medidas de posição {t: z}. Retorna (médias, covariâncias) suavizadas.
    """
    n = len(times)
    H = np.array([[1.0, 0.0]])
    R = np.array([[sigma ** 2]])
    xf, pf, xp, pp = [], [], [], []
    x, P = np.asarray(p0_mean, dtype=float), np.asarray(p0_cov, dtype=float)
    for i, t in enumerate(times):
        if i > 0:
            phi, q = wnoa_matrices(times[i] - times[i - 1], qc)
            x, P = phi @ x, phi @ P @ phi.T + q
        xp.append(x)
        pp.append(P)
        z = measurements.get(t)
        if z is not None:
            S = H @ P @ H.T + R
            K = P @ H.T @ np.linalg.inv(S)
            x = x + (K @ (np.array([z]) - H @ x)).ravel()
            P = (np.eye(2) - K @ H) @ P
        xf.append(x)
        pf.append(P)

    xs, ps = [None] * n, [None] * n
    xs[-1], ps[-1] = xf[-1], pf[-1]
    for i in range(n - 2, -1, -1):
        phi, _ = wnoa_matrices(times[i + 1] - times[i], qc)
        G = pf[i] @ phi.T @ np.linalg.inv(pp[i + 1])
        xs[i] = xf[i] + G @ (xs[i + 1] - xp[i + 1])
        ps[i] = pf[i] + G @ (ps[i + 1] - pp[i + 1]) @ G.T
    return xs, ps


def trapezoid_noise(blocks, dt, steps=10_000):
    """
    ∫_0^dt Φ(dt, s) L L^T Φ(dt, s)^T ds escalar por trapézios.
    """
    s = np.linspace(0.0, dt, steps + 1)
    vals = []
    for si in s:
        tau = dt - si
        col = np.array([tau ** (blocks - 1 - r) / math.factorial(blocks - 1 - r) for r in range(blocks)])
        vals.append(np.outer(col, col))
    vals = np.array(vals)
    h = dt / steps
    return h * (vals[0] / 2.0 + vals[1:-1].sum(axis=0) + vals[-1] / 2.0)
