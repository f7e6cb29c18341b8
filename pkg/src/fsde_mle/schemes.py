"""Discretizations of the fractional SDE and of its error limits.

Every solver works on a block of paths at once.  State arrays have shape
``(paths, n + 1, d)`` with row ``k`` holding the value at ``t_k = k T / n``.

Randomness is organised per path: path ``i`` of a run with seed ``s`` draws
stream ``c`` from ``SeedSequence([s, i, c])``.  Streams are

====  ===============================================
0     Brownian increments on the fine grid
1     interval Gaussians of the kernel-exact schemes
2     the independent Brownian motion of the Y limit
3     Z draws of the R limit
====  ===============================================

so a path's numbers never depend on how many other paths run or on how the
work is split.  Paths are processed in fixed blocks of :data:`BLOCK` paths,
spread over ``FSDE_MLE_WORKERS`` threads and merged in block order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from . import _kernels, _quad
from .errors import CapExceeded, CholeskyFailure, DimensionMismatch, InvalidParams, NonFinite
from .kernel import KernelTable, build_kernel_table, kernel_values
from .models import ModelSpec, is_negative_definite

__all__ = [
    "BLOCK",
    "PathBundle",
    "IntervalGaussians",
    "generate_increments",
    "generate_b_increments",
    "path_rng",
    "solve_mle",
    "reference_solution",
    "sample_interval_gaussians",
    "solve_variant_kmle",
    "solve_auxiliary",
    "solve_limit_sve",
    "sample_r_tilde",
    "draw_r_tilde",
]

BLOCK = 256
STREAM_W, STREAM_G, STREAM_B, STREAM_Z = 0, 1, 2, 3
MAX_GAUSSIAN_D = 2
MAX_GAUSSIAN_N = 512


def workers() -> int:
    env = os.environ.get("FSDE_MLE_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise InvalidParams(f"FSDE_MLE_WORKERS must be an integer, got {env!r}") from exc
    return max(1, min(8, os.cpu_count() or 1))


def path_rng(seed: int, path: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(path), int(stream)]))


def _blocks(paths: int):
    return [slice(a, min(a + BLOCK, paths)) for a in range(0, paths, BLOCK)]


def _map_blocks(fn, paths: int) -> list:
    blocks = _blocks(paths)
    w = min(workers(), len(blocks))
    if w <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=w) as pool:
        return list(pool.map(fn, blocks))


def _raise_nonfinite(X, offset, what):
    bad = ~np.isfinite(X).reshape(X.shape[0], -1).all(axis=1)
    if bad.any():
        idx = (np.flatnonzero(bad) + offset).tolist()
        raise NonFinite(f"{what}: {len(idx)} path(s) left the finite range", idx)


# increments ------------------------------------------------------------------


@dataclass
class PathBundle:
    """Coupled Brownian increments of a batch of paths, plus scheme outputs.

    ``fine_increments`` has ``refine`` sub-increments per coarse cell, and
    each coarse increment is the sum of its sub-increments.  With
    ``refine == 1`` both names refer to the same array.  Solvers record
    their output in ``states`` under the scheme name.
    """

    seed: int
    n: int
    refine: int
    T: float
    path_offset: int
    increments: np.ndarray
    fine_increments: np.ndarray
    states: dict = field(default_factory=dict)

    @property
    def paths(self) -> int:
        return self.increments.shape[0]

    @property
    def m(self) -> int:
        return self.increments.shape[2]

    @property
    def h(self) -> float:
        return self.T / self.n

    def path_indices(self) -> np.ndarray:
        return np.arange(self.path_offset, self.path_offset + self.paths)


def generate_increments(seed: int, n: int, m: int, refine: int = 1, paths: int = 1,
                        T: float = 1.0, path_offset: int = 0) -> PathBundle:
    """Draw Brownian increments for ``paths`` paths on ``n`` cells of ``[0, T]``.

    Path ``i`` (global index ``path_offset + i``) draws its ``n * refine``
    fine increments from stream 0 of its own generator, so any subset of
    paths can be regenerated on its own.
    """
    if n < 1 or refine < 1 or m < 1 or paths < 1:
        raise InvalidParams("n, m, refine and paths must all be >= 1")
    scale = np.sqrt(T / (n * refine))
    fine = np.empty((paths, n * refine, m))
    for i in range(paths):
        fine[i] = path_rng(seed, path_offset + i, STREAM_W).standard_normal((n * refine, m))
    fine *= scale
    coarse = fine if refine == 1 else fine.reshape(paths, n, refine, m).sum(axis=2)
    return PathBundle(int(seed), n, refine, float(T), path_offset, coarse, fine)


def generate_b_increments(seed: int, n: int, m: int, paths: int, T: float = 1.0,
                          path_offset: int = 0) -> np.ndarray:
    """Increments of the ``m x m`` Brownian motion ``B`` of the Y limit; ``(paths, n, m, m)``.

    Entry ``[..., q, l]`` is the increment of ``B^{q,l}``.
    """
    out = np.empty((paths, n, m, m))
    for i in range(paths):
        out[i] = path_rng(seed, path_offset + i, STREAM_B).standard_normal((n, m, m))
    return out * np.sqrt(T / n)


# Mittag-Leffler Euler --------------------------------------------------------


def _check(model: ModelSpec, table: KernelTable, n: int | None = None):
    if not is_negative_definite(model.A):
        raise InvalidParams("A must be negative definite")
    if table.alpha != model.alpha or not np.array_equal(table.A, model.A) or table.T != model.T:
        raise InvalidParams("kernel table was built for a different model")
    if n is not None and table.n != n:
        raise InvalidParams(f"kernel table has n={table.n}, increments have n={n}")


def _reversed_kernel(table: KernelTable) -> np.ndarray:
    # rev[i] = K((n - i) h)^T, so rev[n-k:] lines up with F_0 .. F_{k-1}
    return np.ascontiguousarray(table.k_at_grid[1:][::-1].transpose(0, 2, 1))


def _volterra(table: KernelTable, base: np.ndarray, paths: int, forcing) -> np.ndarray:
    """``X_k = base_k + sum_{j<k} K((k-j) h) F_j`` with ``F_j = forcing(sl, j, X_j)``."""
    rev = _reversed_kernel(table)
    n, d = table.n, table.d

    def run(sl):
        p = sl.stop - sl.start
        X = np.empty((p, n + 1, d))
        F = np.empty((p, n, d))
        X[:, 0] = base[0]
        for k in range(1, n + 1):
            F[:, k - 1] = forcing(sl, k - 1, X[:, k - 1])
            X[:, k] = base[k] + _kernels.conv_step(rev, F, k)
        return X

    return np.concatenate(_map_blocks(run, paths))


def _decay_term(model, table):
    return np.einsum("kab,b->ka", table.decay, model.x0)


def _mle_states(model, table, dW, offset, what):
    h = table.h

    def forcing(sl, j, x):
        return h * model.drift(x) + np.einsum("pam,pm->pa", model.diffusion(x), dW[sl, j])

    X = _volterra(table, _decay_term(model, table), dW.shape[0], forcing)
    _raise_nonfinite(X, offset, what)
    return X


def solve_mle(model: ModelSpec, table: KernelTable, bundle: PathBundle) -> np.ndarray:
    """Mittag-Leffler Euler states on the coarse grid; shape ``(paths, n+1, d)``.

    ``X_k = E_{alpha,1}(A t_k^alpha) x0 + sum_{j<k} K((k-j) h) (h b(X_j) + sigma(X_j) dW_j)``.
    Only kernel values at positive grid lags are used.
    """
    _check(model, table, bundle.n)
    X = _mle_states(model, table, bundle.increments, bundle.path_offset, "MLE")
    bundle.states["mle"] = X
    return X


def reference_solution(model: ModelSpec, bundle: PathBundle, *, table: KernelTable | None = None,
                       return_fine: bool = False):
    """Mittag-Leffler Euler on the fine grid, restricted to the coarse grid.

    Uses ``bundle.fine_increments`` with ``n * refine`` steps, so the coarse
    scheme and this proxy see the same Brownian path.  With
    ``return_fine=True`` the full fine path is returned as a second value.
    """
    nf = bundle.n * bundle.refine
    if table is None:
        table = build_kernel_table(model, nf, with_cells=False)
    _check(model, table, nf)
    Xf = _mle_states(model, table, bundle.fine_increments, bundle.path_offset, "reference")
    X = Xf[:, :: bundle.refine]
    bundle.states["ref"] = X
    return (X, Xf) if return_fine else X


# interval Gaussians ------------------------------------------------------------


def _pivoted_factor(S: np.ndarray) -> np.ndarray:
    """Return ``F`` with ``F F^T = S`` and as few columns as the rank allows."""
    scale = float(np.max(np.diag(S))) if S.size else 0.0
    if scale <= 0:
        return np.zeros((S.shape[0], 0))
    c, piv, rank, info = lapack.dpstrf(S, lower=1, tol=1e-14 * scale)
    if info < 0:
        raise CholeskyFailure(f"dpstrf rejected argument {-info}")
    L = np.tril(c)[:, :rank]
    F = np.empty_like(L)
    F[piv - 1] = L
    if np.max(np.abs(F @ F.T - S)) <= 1e-9 * scale:
        return F
    # reduced-rank fallback: clip the spectrum
    lam, Q = np.linalg.eigh(0.5 * (S + S.T))
    if lam[0] < -1e-8 * scale:
        raise CholeskyFailure(f"covariance has eigenvalue {lam[0]:.3e}")
    keep = lam > 1e-14 * scale
    return Q[:, keep] * np.sqrt(lam[keep])


@dataclass(frozen=True, eq=False)
class IntervalGaussians:
    """Joint law of ``G_{j,k} = int_{t_j}^{t_{j+1}} K(t_k - s) dW_s`` given the increments.

    The law of the vector ``(G_{j,k})_k`` depends on the cell only through
    the lags ``r = k - j``.  ``cov`` holds
    ``Cov(G_r^{ab}, G_{r'}^{ce})`` with rows ordered by ``(r - 1, a, b)``,
    ``cross[:, i]`` the covariance with the ``i``-th fine sub-increment of
    the cell.  Draws condition on the observed sub-increments, so the
    kernel-exact schemes stay coupled to the Brownian path of the MLE.

    Draws are produced per cell and path block by :meth:`cell_draws`, from
    stream 1 of each path's generator; the same path always sees the same
    draws.
    """

    n: int
    d: int
    m: int
    h: float
    refine: int
    targets: np.ndarray
    cov: np.ndarray
    cross: np.ndarray
    factors: tuple
    draw_offsets: np.ndarray
    first_target: np.ndarray
    seed: int
    path_offset: int
    fine_increments: np.ndarray

    def rows(self, j: int) -> np.ndarray:
        lags = self.targets[self.first_target[j]:] - j
        dd = self.d * self.d
        return ((lags - 1)[:, None] * dd + np.arange(dd)[None, :]).ravel()

    def block_normals(self, sl: slice) -> np.ndarray:
        total = int(self.draw_offsets[-1]) * self.m
        out = np.empty((sl.stop - sl.start, total))
        for q, i in enumerate(range(sl.start, sl.stop)):
            out[q] = path_rng(self.seed, self.path_offset + i, STREAM_G).standard_normal(total)
        return out

    def cell_draws(self, j: int, sl: slice, normals: np.ndarray | None = None) -> np.ndarray:
        """Draws for cell ``j`` and the paths in ``sl``.

        Returns shape ``(paths, targets after t_j, d, d, m)``; entry
        ``[p, t, a, b, l]`` is ``int_{t_j}^{t_{j+1}} K^{ab}(t_k - s) dW^l_s``
        for the ``t``-th target ``k > j``.
        """
        if normals is None:
            normals = self.block_normals(sl)
        rows = self.rows(j)
        M, m, d = self.refine, self.m, self.d
        dWf = self.fine_increments[sl, j * M:(j + 1) * M]  # (p, M, m)
        mean = np.einsum("si,pil->psl", self.cross[rows], dWf) * (M / self.h)
        F = self.factors[j]
        a, b = self.draw_offsets[j] * m, self.draw_offsets[j + 1] * m
        z = normals[:, a:b].reshape(-1, F.shape[1], m)
        G = mean + np.einsum("sr,prl->psl", F, z)
        return G.reshape(G.shape[0], -1, d, d, m)

    def materialize(self, sl: slice | None = None) -> np.ndarray:
        """All draws as ``(paths, n, len(targets), d, d, m)``; zero where ``t_k <= t_j``."""
        sl = sl or slice(0, self.fine_increments.shape[0])
        normals = self.block_normals(sl)
        out = np.zeros((sl.stop - sl.start, self.n, len(self.targets), self.d, self.d, self.m))
        for j in range(self.n):
            out[:, j, self.first_target[j]:] = self.cell_draws(j, sl, normals)
        return out


def _interval_moments(alpha, A, n, h, M, q=16):
    """Quadrature Gram matrices of ``w -> K((r-1) h + w)`` on ``[0, h]``.

    ``w`` runs backwards in time within the cell (``w = t_{j+1} - s``), so
    the sub-interval touching ``w = 0`` is the last fine sub-increment.
    That sub-interval carries the ``w**(alpha-1)`` singularity of the first
    lag and uses a graded rule; the others use Gauss-Legendre.
    """
    d = A.shape[0]
    hs = h / M
    parts = [_quad.graded(hs, 2 * alpha - 1, levels=40, q=q)]
    parts += [_quad.gauss(i * hs, (i + 1) * hs, q) for i in range(1, M)]
    w = np.concatenate([p[0] for p in parts])
    wt = np.concatenate([p[1] for p in parts])
    owner = np.concatenate([np.full(p[0].size, M - 1 - i) for i, p in enumerate(parts)])
    lags = (np.arange(n) * h)[:, None] + w[None, :]  # (n, Q)
    Kv = kernel_values(alpha, A, lags.ravel()).reshape(n, w.size, d * d)
    V = Kv.transpose(0, 2, 1).reshape(n * d * d, w.size)  # rows (r-1, a, b)
    cov = (V * wt) @ V.T
    cross = np.zeros((n * d * d, M))
    for i in range(M):
        sel = owner == i
        cross[:, i] = V[:, sel] @ wt[sel]
    return 0.5 * (cov + cov.T), cross


def sample_interval_gaussians(model: ModelSpec, table: KernelTable, bundle: PathBundle,
                              targets=None) -> IntervalGaussians:
    """Prepare conditional draws of the interval Gaussians.

    Parameters
    ----------
    targets : iterable of int, optional
        Grid indices ``k`` at which states will be needed; default all of
        ``1 .. n``.  The kernel-exact variant needs every index, the
        auxiliary scheme only the ones it reports.

    Conditioning on the ``refine`` sub-increments of each cell goes
    through the Schur complement
    ``cov - cross (M / h) cross^T``, which is factored once by pivoted
    Cholesky (rank revealing) and reused by every cell.
    """
    _check(model, table, bundle.n)
    n, d, m, M, h = bundle.n, model.d, bundle.m, bundle.refine, table.h
    if d > MAX_GAUSSIAN_D or n > MAX_GAUSSIAN_N:
        raise CapExceeded(f"interval Gaussians support d <= {MAX_GAUSSIAN_D}, "
                          f"n <= {MAX_GAUSSIAN_N}; got d={d}, n={n}")
    targets = np.arange(1, n + 1) if targets is None else np.unique(np.asarray(targets, int))
    if targets.size == 0 or targets[0] < 1 or targets[-1] > n:
        raise InvalidParams("targets must be grid indices in 1 .. n")
    cov, cross = _interval_moments(model.alpha, model.A, n, h, M)
    cond = cov - (cross * (M / h)) @ cross.T
    F = _pivoted_factor(0.5 * (cond + cond.T))
    rank = F.shape[1]
    first = np.searchsorted(targets, np.arange(n), side="right")
    factors, sizes = [], []
    dd = d * d
    for j in range(n):
        lags = targets[first[j]:] - j
        rows = ((lags - 1)[:, None] * dd + np.arange(dd)[None, :]).ravel()
        Fs = F[rows]
        if rows.size < rank:
            # fewer rows than columns: an equivalent square factor is cheaper to draw
            Fs = scipy.linalg.qr(Fs.T, mode="r")[0][: rows.size].T
        factors.append(np.ascontiguousarray(Fs))
        sizes.append(Fs.shape[1])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    return IntervalGaussians(n, d, m, h, M, targets, cov, cross, tuple(factors), offsets,
                             first, bundle.seed, bundle.path_offset, bundle.fine_increments)


def _exact_kernel_states(model, table, ig, paths, offset, coefficient_states, what):
    """Shared loop of the kernel-exact schemes.

    ``coefficient_states`` gives the states at which the coefficients are
    frozen; ``None`` means the scheme's own past (the variant scheme).
    """
    n, d = table.n, table.d
    targets = ig.targets
    base = _decay_term(model, table)
    cells = table.cell_integrals

    def run(sl):
        p = sl.stop - sl.start
        normals = ig.block_normals(sl)
        acc = np.zeros((p, targets.size, d))
        own = np.empty((p, n + 1, d)) if coefficient_states is None else None
        if own is not None:
            own[:, 0] = model.x0
        for j in range(n):
            x = own[:, j] if own is not None else coefficient_states[sl, j]
            t0 = ig.first_target[j]
            tail = acc[:, t0:]
            _kernels.push_shared(tail, np.ascontiguousarray(cells[targets[t0:] - j - 1]),
                                 np.ascontiguousarray(model.drift(x), dtype=float))
            _kernels.push_paths(tail, ig.cell_draws(j, sl, normals),
                                np.ascontiguousarray(model.diffusion(x), dtype=float))
            if own is not None:
                own[:, j + 1] = base[j + 1] + acc[:, j]
        return own if own is not None else base[targets] + acc

    out = np.concatenate(_map_blocks(run, paths))
    _raise_nonfinite(out, offset, what)
    return out


def solve_variant_kmle(model: ModelSpec, table: KernelTable, bundle: PathBundle,
                       ig: IntervalGaussians) -> np.ndarray:
    """Kernel-exact variant: coefficients frozen at its own left endpoints.

    ``Xbar_k = E_{alpha,1}(A t_k^alpha) x0 + sum_j (int_{cell j} K(t_k - s) ds) b(Xbar_j)
    + sum_j G_{j,k} sigma(Xbar_j)``; shape ``(paths, n+1, d)``.
    """
    _check(model, table, bundle.n)
    if ig.targets.size != bundle.n:
        raise InvalidParams("the variant scheme needs interval Gaussians for every grid target")
    X = _exact_kernel_states(model, table, ig, bundle.paths, bundle.path_offset, None, "KMLE")
    bundle.states["kmle"] = X
    return X


def solve_auxiliary(model: ModelSpec, table: KernelTable, bundle: PathBundle,
                    ig: IntervalGaussians, xhat: np.ndarray) -> np.ndarray:
    """Auxiliary kernel-exact scheme with coefficients taken from the MLE states ``xhat``.

    Returns states at ``ig.targets`` only; shape ``(paths, len(targets), d)``.
    """
    _check(model, table, bundle.n)
    if xhat.shape != (bundle.paths, bundle.n + 1, model.d):
        raise DimensionMismatch(f"xhat has shape {xhat.shape}")
    X = _exact_kernel_states(model, table, ig, bundle.paths, bundle.path_offset, xhat, "auxiliary")
    bundle.states["aux"] = X
    return X


# limits ----------------------------------------------------------------------


def solve_limit_sve(model: ModelSpec, table: KernelTable, x_path: np.ndarray,
                    w_increments: np.ndarray, b_increments: np.ndarray, kappa1: float,
                    path_offset: int = 0) -> np.ndarray:
    """Left-rectangle discretization of the linear limit equation of ``n^(alpha-1/2)(X - Xtilde)``.

    ``Y_k = sum_{j<k} K((k-j) h) F_j`` with ``Y_0 = 0`` and

        F_j = h Db(X_j) Y_j + sum_l Dsigma_l(X_j) Y_j dW^l_j
              + kappa1 sum_{l,k,q} d_k sigma_l(X_j) sigma^k_q(X_j) dB^{q,l}_j

    where ``x_path`` stands in for the exact solution on the grid of ``table``
    and ``b_increments`` (``(paths, n, m, m)``, entry ``[q, l]``) are
    independent of ``w_increments``.
    """
    _check(model, table)
    n, d = table.n, table.d
    P = x_path.shape[0]
    m = w_increments.shape[-1]
    if x_path.shape != (P, n + 1, d) or w_increments.shape[:2] != (P, n) \
            or b_increments.shape != (P, n, m, m):
        raise DimensionMismatch("limit SVE inputs do not share the grid of the kernel table")
    h = table.h

    def forcing(sl, j, y):
        x = x_path[sl, j]
        jb = model.drift_jacobian(x)
        js = model.diffusion_jacobian(x)
        sig = model.diffusion(x)
        out = h * np.einsum("pjk,pk->pj", jb, y)
        out += np.einsum("pjlk,pk,pl->pj", js, y, w_increments[sl, j])
        out += kappa1 * np.einsum("pjlk,pkq,pql->pj", js, sig, b_increments[sl, j])
        return out

    Y = _volterra(table, np.zeros((n + 1, d)), P, forcing)
    _raise_nonfinite(Y, path_offset, "limit SVE")
    return Y


def sample_r_tilde(model: ModelSpec, x_t, kappa2: float, z_draws) -> np.ndarray:
    """Draw the limit of the remainder error at one time.

    ``R^i = kappa2 sum_{j,l} sigma^j_l(x_t) Z^{ij}_l``, where ``Z^{ij}_l``
    has unit variance only for ``i == j`` and all diagonal entries with
    the same ``l`` are perfectly correlated.  So ``Z^{ij}_l = delta_ij xi_l``
    with ``xi_l`` read from ``z_draws[..., 0, 0, l]``.

    ``x_t`` has shape ``(..., d)`` and ``z_draws`` shape ``(..., d, d, m)``
    or ``(..., d*d*m)``; returns ``(..., d)``.
    """
    x_t = np.asarray(x_t, dtype=float)
    d, m = model.d, model.m
    z = np.asarray(z_draws, dtype=float)
    if x_t.shape[-1] != d:
        raise DimensionMismatch(f"x_t must end in dimension {d}")
    if z.shape[-3:] != (d, d, m):
        if z.shape[-1] != d * d * m:
            raise DimensionMismatch(f"z_draws must hold d*d*m = {d * d * m} values per draw")
        z = z.reshape(z.shape[:-1] + (d, d, m))
    xi = z[..., 0, 0, :]
    return kappa2 * np.einsum("...jl,...l->...j", model.diffusion(x_t), xi)


def draw_r_tilde(model: ModelSpec, x_t, kappa2: float, count: int, seed: int) -> np.ndarray:
    """``count`` independent draws at the fixed state ``x_t``; shape ``(count, d)``."""
    z = path_rng(seed, 0, STREAM_Z).standard_normal((count, model.d, model.d, model.m))
    x = np.broadcast_to(np.asarray(x_t, dtype=float), (count, model.d))
    return sample_r_tilde(model, x, kappa2, z)
