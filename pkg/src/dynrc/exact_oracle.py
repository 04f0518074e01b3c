"""Exact analysis of the full system (walker, configuration) on tiny tori.

State ``x * 2**|E| + k`` is the walker at vertex index ``x`` with configuration
code ``k`` (bit e set iff edge e is open).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg
from scipy.stats import poisson

from .random_cluster import CapacityError, RCParams, components_table, exact_rc_distribution
from .torus import TorusSpec, torus

STATE_CAP = 1 << 20


class ModelError(ValueError):
    pass


@dataclass
class FullStateSpace:
    spec: TorusSpec
    nv: int
    ne: int

    @property
    def size(self):
        return self.nv << self.ne

    def index(self, x, k):
        return (x << self.ne) | k

    def split(self, i):
        return i >> self.ne, i & ((1 << self.ne) - 1)


@dataclass
class GeneratorMatrix:
    space: FullStateSpace
    params: RCParams
    Q: sp.csr_matrix


def state_space(spec: TorusSpec) -> FullStateSpace:
    t = torus(spec)
    sp_ = FullStateSpace(spec, t.nv, t.ne)
    if sp_.size > STATE_CAP:
        raise CapacityError(f"{sp_.size} states exceed the cap {STATE_CAP}")
    return sp_


def build_generator(spec: TorusSpec, params: RCParams, walker_rate: float = 1.0) -> GeneratorMatrix:
    space = state_space(spec)
    t = torus(spec)
    ne, nv = t.ne, t.nv
    kappa = components_table(spec)
    ncfg = 1 << ne
    ks = np.arange(ncfg)
    rows, cols, vals = [], [], []
    mu = params.mu
    # environment moves, identical for every walker position
    for e in range(ne):
        bit = 1 << e
        cut = kappa[ks & ~bit] != kappa[ks | bit]
        pe = np.where(cut, params.p_cut, params.p)
        is_open = (ks & bit) != 0
        target = ks ^ bit
        rate = np.where(is_open, mu * (1 - pe), mu * pe)
        for x in range(nv):
            base = x << ne
            rows.append(base + ks)
            cols.append(base + target)
            vals.append(rate)
    # walker moves across open edges
    jr = walker_rate / (2 * t.d)
    for x in range(nv):
        for w, e in zip(t.nbr[x], t.inc[x]):
            m = (ks >> e) & 1 == 1
            rows.append((x << ne) + ks[m])
            cols.append((w << ne) + ks[m])
            vals.append(np.full(m.sum(), jr))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    n = space.size
    off = sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    Q = (off + sp.diags(diag)).tocsr()
    return GeneratorMatrix(space, params, Q)


def product_stationary(spec: TorusSpec, params: RCParams) -> np.ndarray:
    """pi x upsilon: uniform walker times the random cluster measure."""
    nv = torus(spec).nv
    return np.tile(exact_rc_distribution(spec, params), nv) / nv


def stationary_distribution(G: GeneratorMatrix) -> np.ndarray:
    """Solve pi Q = 0 with one balance equation replaced by sum(pi) = 1."""
    A = G.Q.T.tolil()
    n = A.shape[0]
    A[n - 1, :] = np.ones(n)
    b = np.zeros(n)
    b[n - 1] = 1.0
    return scipy.sparse.linalg.spsolve(A.tocsc(), b)


def detailed_balance_error(G: GeneratorMatrix, pi: np.ndarray) -> float:
    """max |pi_i Q_ij - pi_j Q_ji| over off-diagonal pairs."""
    F = sp.diags(pi) @ G.Q
    D = (F - F.T).tocoo()
    return float(np.abs(D.data).max()) if D.nnz else 0.0


def _uniformized(Q):
    lam = float(np.max(-Q.diagonal()))
    if lam <= 0:
        lam = 1.0
    P = sp.identity(Q.shape[0], format="csr") + Q / lam
    return lam, P.T.tocsr()


def distribution_at(G: GeneratorMatrix, init, t: float, tol: float = 1e-12) -> np.ndarray:
    """init @ exp(tQ) by uniformization; Poisson tails beyond tol are dropped."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    v = np.asarray(init, dtype=float)
    if t == 0:
        return v.copy()
    lam, PT = _uniformized(G.Q)
    m = lam * t
    kmax = int(poisson.isf(tol / 2, m)) + 1
    kmin = max(0, int(poisson.ppf(tol / 2, m)) - 1)
    w = poisson.pmf(np.arange(kmax + 1), m)
    out = np.zeros_like(v)
    cur = v
    for k in range(kmax + 1):
        if k >= kmin:
            out += w[k] * cur
        cur = PT @ cur
    return out


def point_mass(G: GeneratorMatrix, i: int) -> np.ndarray:
    v = np.zeros(G.space.size)
    v[i] = 1.0
    return v


def tv(a, b) -> float:
    return 0.5 * float(np.abs(np.asarray(a) - np.asarray(b)).sum())


@dataclass
class TVCurve:
    grid: list
    tv: list
    t_mix: float


def tv_curve(G: GeneratorMatrix, starts, grid, pi=None, threshold: float = 0.25) -> TVCurve:
    """Worst-case TV over the start states on a sorted time grid."""
    grid = list(grid)
    if grid != sorted(grid):
        raise ValueError("grid must be sorted")
    if pi is None:
        pi = stationary_distribution(G)
    worst = [0.0] * len(grid)
    for s in starts:
        cur = point_mass(G, s)
        last = 0.0
        for j, t in enumerate(grid):
            cur = distribution_at(G, cur, t - last)
            last = t
            worst[j] = max(worst[j], tv(cur, pi))
    tmix = next((t for t, x in zip(grid, worst) if x < threshold), math.inf)
    return TVCurve(grid, worst, tmix)


@dataclass
class Spectral:
    gap: float
    t_rel: float
    dirichlet: float
    variance: float

    @property
    def dirichlet_bound(self):
        """Var(f)/E(f,f); a lower bound on t_rel."""
        return self.variance / self.dirichlet if self.dirichlet > 0 else math.inf


def distance_to_origin(spec: TorusSpec) -> np.ndarray:
    t = torus(spec)
    sp_ = state_space(spec)
    fx = np.array([t.dist(x, 0) for x in range(t.nv)], dtype=float)
    return np.repeat(fx, 1 << sp_.ne)


def dirichlet_form(G: GeneratorMatrix, pi, f) -> float:
    Q = G.Q.tocoo()
    m = Q.row != Q.col
    r, c, q = Q.row[m], Q.col[m], Q.data[m]
    return 0.5 * float(np.sum(pi[r] * q * (f[c] - f[r]) ** 2))


def spectral_quantities(G: GeneratorMatrix, pi=None, f=None, tol: float = 1e-10) -> Spectral:
    if pi is None:
        pi = stationary_distribution(G)
    if detailed_balance_error(G, pi) > tol:
        raise ModelError("generator is not reversible with respect to pi")
    Q = G.Q.toarray()
    s = np.sqrt(pi)
    S = (s[:, None] * Q) / s[None, :]
    S = 0.5 * (S + S.T)
    ev = np.sort(scipy.linalg.eigvalsh(-S))
    gap = float(ev[1])
    if f is None:
        f = distance_to_origin(G.space.spec)
    mean = float(pi @ f)
    var = float(pi @ (f - mean) ** 2)
    return Spectral(gap, 1.0 / gap, dirichlet_form(G, pi, f), var)


def walker_marginal(G: GeneratorMatrix, dist) -> np.ndarray:
    return np.asarray(dist).reshape(G.space.nv, -1).sum(axis=1)
