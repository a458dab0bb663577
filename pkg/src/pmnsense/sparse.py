"""Dictionaries and joint-sparse (MMV) recovery.

Both solvers work on ``Y = Phi @ X`` where ``X`` has few non-zero blocks of
``block_size`` consecutive rows, shared across all measurement columns.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .waveform import Allocation, OfdmGrid, SymbolFrame


class SolverError(RuntimeError):
    pass


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class Dictionary:
    matrix: np.ndarray
    block_size: int = 1
    grid_meta: np.ndarray | None = None  # delay bin of every block

    def __post_init__(self):
        if self.matrix.shape[1] % self.block_size:
            raise ValueError("column count is not a multiple of the block size")
        if self.grid_meta is None:
            object.__setattr__(self, "grid_meta", np.arange(self.n_blocks))

    @property
    def n_blocks(self) -> int:
        return self.matrix.shape[1] // self.block_size

    def block(self, i: int) -> np.ndarray:
        b = self.block_size
        return self.matrix[:, i * b:(i + 1) * b]

    def reblock(self, block_size: int, grid_meta=None) -> "Dictionary":
        """Same columns grouped into blocks of a different size."""
        if grid_meta is None:
            ratio = self.block_size / block_size
            grid_meta = np.repeat(self.grid_meta, int(ratio)) if ratio >= 1 else None
        return Dictionary(self.matrix, block_size, grid_meta)


@dataclass(frozen=True, eq=False)
class MmvProblem:
    """``noise_floor``: per-entry noise power; ``None`` learns it, ``0`` means noiseless."""

    observations: np.ndarray
    dictionary: Dictionary
    noise_floor: float | None = None

    def __post_init__(self):
        Y = np.asarray(self.observations)
        if Y.ndim == 1:
            Y = Y[:, None]
        object.__setattr__(self, "observations", Y)
        if Y.shape[0] != self.dictionary.matrix.shape[0]:
            raise ValueError("observation rows do not match dictionary rows")


@dataclass(frozen=True, eq=False)
class SparseSolution:
    support: tuple[int, ...]
    coeffs: np.ndarray  # (len(support), block_size, M_obs)
    block_size: int
    n_blocks: int
    iterations: int = 0
    converged: bool = True
    noise_var: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def block_power(self) -> np.ndarray:
        if not self.support:
            return np.zeros(0)
        return np.mean(np.abs(self.coeffs) ** 2, axis=(1, 2))

    def dense(self) -> np.ndarray:
        m_obs = self.coeffs.shape[2] if self.coeffs.ndim == 3 else 1
        X = np.zeros((self.n_blocks * self.block_size, m_obs), dtype=complex)
        b = self.block_size
        for i, c in zip(self.support, self.coeffs):
            X[i * b:(i + 1) * b] = c
        return X

    def block_dict(self) -> dict[int, np.ndarray]:
        return {int(i): c for i, c in zip(self.support, self.coeffs)}

    def residual(self, problem: MmvProblem) -> np.ndarray:
        return problem.observations - problem.dictionary.matrix @ self.dense()


def build_partial_dft(alloc_or_subcarriers, grid: OfdmGrid, n_bins: int | None = None) -> Dictionary:
    """Columns ``exp(-j 2 pi n q / (g N))`` over the used subcarriers ``n``."""
    n_bins = grid.fine_size if n_bins is None else n_bins
    if n_bins > grid.fine_size:
        raise ValueError(f"at most {grid.fine_size} delay bins on this grid")
    sc = alloc_or_subcarriers.subcarriers if isinstance(alloc_or_subcarriers, Allocation) \
        else np.asarray(alloc_or_subcarriers)
    F = np.exp(-2j * np.pi * np.outer(sc, np.arange(n_bins)) / grid.fine_size)
    return Dictionary(F, 1, np.arange(n_bins))


def build_direct_dictionary(frame: SymbolFrame, t: int, grid: OfdmGrid, n_bins: int | None = None) -> Dictionary:
    """Row ``n`` equals ``x_{n,t}^T (c_n^T kron I_{M_T K})``; one block per delay bin."""
    F = build_partial_dft(frame.subcarriers, grid, n_bins).matrix
    x = frame.block(t)
    width = x.shape[1]
    W = (F[:, :, None] * x[:, None, :]).reshape(F.shape[0], F.shape[1] * width)
    return Dictionary(W, width, np.arange(F.shape[1]))


def _block_norms(dic: Dictionary) -> np.ndarray:
    b = dic.block_size
    col = np.sum(np.abs(dic.matrix) ** 2, axis=0)
    return np.sqrt(col.reshape(-1, b).sum(axis=1))


def mmv_omp(problem: MmvProblem, max_sparsity: int | None = None,
            residual_tol: float | None = None) -> SparseSolution:
    """Block orthogonal matching pursuit over all measurement columns.

    Stops when ``max_sparsity`` blocks are selected or the residual energy per
    entry drops to ``residual_tol`` (defaults to the problem noise floor, or a
    tiny fraction of the observation energy when noiseless).
    """
    dic = problem.dictionary
    Y = problem.observations
    Phi = dic.matrix
    b = dic.block_size
    n_rows, m_obs = Y.shape
    energy = float(np.sum(np.abs(Y) ** 2))
    if max_sparsity is None:
        max_sparsity = max(1, n_rows // b)
    max_sparsity = min(max_sparsity, dic.n_blocks, n_rows // b)
    if residual_tol is None:
        nf = problem.noise_floor or 0.0
        residual_tol = max(nf, 1e-24 * energy / Y.size)
    empty = SparseSolution((), np.zeros((0, b, m_obs), complex), b, dic.n_blocks)
    if energy == 0.0:
        return empty

    norms = _block_norms(dic)
    norms = np.where(norms > 0, norms, np.inf)
    support: list[int] = []
    R = Y.copy()
    coef = None
    it = 0
    prev = energy
    while len(support) < max_sparsity and np.sum(np.abs(R) ** 2) / R.size > residual_tol:
        corr = Phi.conj().T @ R
        score = np.sqrt(np.sum(np.abs(corr) ** 2, axis=1).reshape(-1, b).sum(axis=1)) / norms
        score[support] = -1.0
        best = int(np.argmax(score))  # first maximum -> lowest index on ties
        if score[best] <= 0:
            if not support:
                raise SolverError("observations are orthogonal to every dictionary block")
            break
        support.append(best)
        cols = (np.array(support)[:, None] * b + np.arange(b)).ravel()
        coef, *_ = np.linalg.lstsq(Phi[:, cols], Y, rcond=None)
        R = Y - Phi[:, cols] @ coef
        it += 1
        cur = float(np.sum(np.abs(R) ** 2))
        if it == 1 and cur >= prev * (1 - 1e-12):
            raise SolverError("residual did not decrease on the first selection")
        prev = cur
    if not support:
        return empty
    order = np.argsort(support)
    coeffs = coef.reshape(len(support), b, m_obs)[order]
    return SparseSolution(tuple(int(support[i]) for i in order), coeffs, b, dic.n_blocks, it, True,
                          prev / Y.size, {"selection_order": tuple(support)})


def block_sbl(problem: MmvProblem, max_iter: int = 200, tol: float = 1e-6, prune: float = 1e-4,
              learn_noise: bool | None = None, detect: float = 1.0) -> SparseSolution:
    """Block sparse Bayesian learning with shared-support MMV likelihood.

    Each block ``i`` has prior ``CN(0, gamma_i I)`` on every measurement
    column; hyperparameters follow the MacKay fixed-point evidence update.
    Blocks are pruned once ``gamma_i < prune * min(max(gamma), noise_var)``
    (see notes in the README on why the threshold tracks the noise level), or
    once ``gamma_i < detect * noise_var / n_rows``: such a block stays below
    the noise even after coherent gain over every row, so it cannot be told
    apart from noise and only slows convergence.
    """
    dic = problem.dictionary
    b = dic.block_size
    Y = problem.observations
    n_rows, m_obs = Y.shape
    empty = SparseSolution((), np.zeros((0, b, m_obs), complex), b, dic.n_blocks)
    y_pow = float(np.mean(np.abs(Y) ** 2))
    if y_pow == 0.0:
        return empty

    # Scale so observations have unit mean power and columns mean-square-1 entries.
    col_scale = np.sqrt(np.sum(np.abs(dic.matrix) ** 2, axis=0) / n_rows)
    col_scale = np.where(col_scale > 0, col_scale, 1.0)
    blk_scale = np.sqrt((col_scale ** 2).reshape(-1, b).mean(axis=1))
    Phi = dic.matrix / np.repeat(blk_scale, b)
    y_scale = np.sqrt(y_pow)
    Yn = Y / y_scale

    if learn_noise is None:
        learn_noise = problem.noise_floor is None
    if problem.noise_floor is None:
        lam = 0.1
    else:
        lam = max(problem.noise_floor / y_pow, 1e-12)
    lam_min = 1e-12

    n_blocks = dic.n_blocks
    gamma = np.ones(n_blocks)
    active = np.arange(n_blocks)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        cols = (active[:, None] * b + np.arange(b)).ravel()
        P = Phi[:, cols]
        g = np.repeat(gamma[active], b)
        C = lam * np.eye(n_rows) + (P * g) @ P.conj().T
        CiP = np.linalg.solve(C, P)
        mu = g[:, None] * (CiP.conj().T @ Yn)  # C hermitian
        q = np.real(np.sum(P.conj() * CiP, axis=0))
        gq = (g * q).reshape(-1, b).sum(axis=1)
        mu2 = (np.sum(np.abs(mu) ** 2, axis=1) / m_obs).reshape(-1, b).sum(axis=1)
        old = gamma[active]
        new = mu2 / np.maximum(gq, 1e-300)
        if learn_noise:
            resid = Yn - P @ mu
            dof = max(n_rows - float(np.sum(g * q)), 1e-3)
            lam = max(float(np.sum(np.abs(resid) ** 2)) / m_obs / dof, lam_min)
        threshold = max(prune * min(float(new.max()), lam), detect * lam / n_rows)
        keep = new > threshold
        if not keep.any():
            gamma[:] = 0.0
            active = active[:0]
            converged = True
            break
        change = np.max(np.abs(new[keep] - old[keep]) / np.maximum(old[keep], 1e-300))
        gamma[active] = np.where(keep, new, 0.0)
        active = active[keep]
        if change < tol and keep.all():
            converged = True
            break

    if active.size == 0:
        return SparseSolution((), np.zeros((0, b, m_obs), complex), b, n_blocks, it, converged, lam * y_pow)
    if not converged:
        warnings.warn(f"block SBL did not converge in {max_iter} iterations; returning last iterate",
                      ConvergenceWarning, stacklevel=2)
    cols = (active[:, None] * b + np.arange(b)).ravel()
    P = Phi[:, cols]
    g = np.repeat(gamma[active], b)
    C = lam * np.eye(n_rows) + (P * g) @ P.conj().T
    mu = g[:, None] * (P.conj().T @ np.linalg.solve(C, Yn))
    mu = mu / np.repeat(blk_scale[active], b)[:, None] * y_scale
    coeffs = mu.reshape(active.size, b, m_obs)
    return SparseSolution(tuple(int(i) for i in active), coeffs, b, n_blocks, it, converged, lam * y_pow,
                          {"gamma": gamma[active] * y_pow})
