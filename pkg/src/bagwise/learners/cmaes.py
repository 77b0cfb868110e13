"""Covariance matrix adaptation evolution strategy, (mu/mu_w, lambda)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..bagcore import BagwiseError


@dataclass(frozen=True)
class CmaEsConfig:
    population: int = 13
    max_iter: int = 1000
    initial_step: float = 0.3
    seed: int = 0
    target_value: float | None = None   # stop early when best <= target

    def __post_init__(self):
        if self.population < 2:
            raise BagwiseError("CMA-ES population must be >= 2")


def cmaes_minimize(f, dim: int, config: CmaEsConfig, x0=None):
    """Minimize f over R^dim; returns (best point, best value).

    Standard weighted-recombination CMA-ES with cumulative step-size
    adaptation and rank-one plus rank-mu covariance updates. Deterministic
    given config.seed.
    """
    rng = np.random.default_rng(config.seed)
    mean = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=float).copy()
    if not np.isfinite(f(mean)):
        raise BagwiseError("cmaes_minimize: objective not finite at start")
    sigma = config.initial_step
    lam = config.population
    mu = lam // 2
    weights = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    weights /= weights.sum()
    mueff = 1.0 / np.sum(weights ** 2)

    cc = (4 + mueff / dim) / (dim + 4 + 2 * mueff / dim)
    cs = (mueff + 2) / (dim + mueff + 5)
    c1 = 2 / ((dim + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((dim + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, np.sqrt((mueff - 1) / (dim + 1)) - 1) + cs
    chi_n = np.sqrt(dim) * (1 - 1 / (4 * dim) + 1 / (21 * dim ** 2))

    pc = np.zeros(dim)
    ps = np.zeros(dim)
    C = np.eye(dim)
    best_x = mean.copy()
    best_f = float(f(mean))
    eigen_stale = 0
    B, D = np.eye(dim), np.ones(dim)

    for it in range(config.max_iter):
        if eigen_stale == 0:
            C = (C + C.T) / 2.0
            evals, B = np.linalg.eigh(C)
            D = np.sqrt(np.maximum(evals, 1e-20))
        eigen_stale = (eigen_stale + 1) % max(1, int(1 / (10 * dim * (c1 + cmu))))

        z = rng.standard_normal((lam, dim))
        y = z * D @ B.T                     # samples of N(0, C)
        xs = mean + sigma * y
        fs = np.array([f(x) for x in xs])
        order = np.argsort(fs, kind="stable")
        if fs[order[0]] < best_f:
            best_f = float(fs[order[0]])
            best_x = xs[order[0]].copy()
        if config.target_value is not None and best_f <= config.target_value:
            break

        y_sel = y[order[:mu]]
        y_w = weights @ y_sel
        mean = mean + sigma * y_w

        # step-size path uses C^(-1/2) * y_w
        c_invsqrt_yw = B @ ((B.T @ y_w) / D)
        ps = (1 - cs) * ps + np.sqrt(cs * (2 - cs) * mueff) * c_invsqrt_yw
        hsig = (np.linalg.norm(ps) /
                np.sqrt(1 - (1 - cs) ** (2 * (it + 1)))) < (1.4 + 2 / (dim + 1)) * chi_n
        pc = (1 - cc) * pc + hsig * np.sqrt(cc * (2 - cc) * mueff) * y_w

        rank_mu = (y_sel * weights[:, None]).T @ y_sel
        C = ((1 - c1 - cmu) * C
             + c1 * (np.outer(pc, pc) + (not hsig) * cc * (2 - cc) * C)
             + cmu * rank_mu)
        sigma *= np.exp((cs / damps) * (np.linalg.norm(ps) / chi_n - 1))
        if sigma < 1e-16 or not np.isfinite(sigma):
            break
    return best_x, best_f
