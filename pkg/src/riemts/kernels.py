"""Reproducing kernels, kernel matrices, diagonal loading and semidefinite embedding.

Kernel specs are small frozen dataclasses that round-trip through plain dicts::

    {"kind": "gaussian", "variance": 1.0}
    {"kind": "multi", "terms": [{"weight": 0.5, "spec": {...}}, ...]}

Kernels act on *row* vectors (one node's time profile within a window), so a
kernel matrix over an ``(N, tau_w)`` data block is ``N x N``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from .errors import ConvergenceError

RELAX = 1.6


@dataclass(frozen=True)
class LinearKernel:
    kind = "linear"

    def to_dict(self):
        return {"kind": "linear"}


@dataclass(frozen=True)
class PolynomialKernel:
    degree: int = 2
    kind = "polynomial"

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError(f"polynomial degree must be a positive integer, got {self.degree}")

    def to_dict(self):
        return {"kind": "polynomial", "degree": int(self.degree)}


@dataclass(frozen=True)
class GaussianKernel:
    variance: float = 1.0
    kind = "gaussian"

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"gaussian variance must be positive, got {self.variance}")

    def to_dict(self):
        return {"kind": "gaussian", "variance": float(self.variance)}


@dataclass(frozen=True)
class MultiKernel:
    """Positively weighted sum of kernels."""

    terms: tuple = ()
    kind = "multi"

    def __post_init__(self):
        terms = tuple((float(w), s) for w, s in self.terms)
        if not terms:
            raise ValueError("multi-kernel needs at least one term")
        if any(not w > 0 for w, _ in terms):
            raise ValueError("multi-kernel weights must be strictly positive")
        object.__setattr__(self, "terms", terms)

    def to_dict(self):
        return {
            "kind": "multi",
            "terms": [{"weight": w, "spec": s.to_dict()} for w, s in self.terms],
        }


@dataclass(frozen=True)
class SDEKernel:
    """Kernel matrix learned by semidefinite embedding with ``neighbors`` per node.

    Not a pointwise kernel: only :func:`kernel_matrix` understands it.
    """

    neighbors: int = 3
    tol: float = 1e-5
    max_iter: int = 5000
    kind = "sde"

    def to_dict(self):
        return {"kind": "sde", "neighbors": int(self.neighbors), "tol": self.tol,
                "max_iter": int(self.max_iter)}


def kernel_from_dict(d):
    kind = d["kind"]
    if kind == "linear":
        return LinearKernel()
    if kind == "polynomial":
        return PolynomialKernel(int(d.get("degree", 2)))
    if kind == "gaussian":
        return GaussianKernel(float(d["variance"]))
    if kind == "multi":
        return MultiKernel(tuple((t["weight"], kernel_from_dict(t["spec"])) for t in d["terms"]))
    if kind == "sde":
        return SDEKernel(int(d["neighbors"]), float(d.get("tol", 1e-5)), int(d.get("max_iter", 5000)))
    raise ValueError(f"unknown kernel kind {kind!r}")


def gaussian_grid(first=0.25, step=0.01, count=376):
    """Equal-weight average of Gaussian kernels with variances first, first+step, ...

    ``gaussian_grid()`` spans 0.25..4 (376 kernels); ``gaussian_grid(count=76)``
    spans 0.25..1.
    """
    variances = first + step * np.arange(count)
    return MultiKernel(tuple((1.0 / count, GaussianKernel(float(v))) for v in variances))


# --------------------------------------------------------------------------


def kernel_eval(spec, y, y2):
    """Evaluate ``kappa(y, y2)`` for two row vectors."""
    y = np.asarray(y, dtype=float).ravel()
    y2 = np.asarray(y2, dtype=float).ravel()
    if y.shape != y2.shape:
        raise ValueError(f"kernel arguments differ in length: {y.size} vs {y2.size}")
    if isinstance(spec, LinearKernel):
        return float(y @ y2)
    if isinstance(spec, PolynomialKernel):
        return float((y @ y2 + 1.0) ** spec.degree)
    if isinstance(spec, GaussianKernel):
        return float(np.exp(-np.sum((y - y2) ** 2) / (2.0 * spec.variance)))
    if isinstance(spec, MultiKernel):
        return float(sum(w * kernel_eval(s, y, y2) for w, s in spec.terms))
    if isinstance(spec, SDEKernel):
        raise TypeError("SDE kernels are learned as whole matrices; use kernel_matrix")
    raise TypeError(f"not a kernel spec: {spec!r}")


@dataclass
class KernelMatrix:
    matrix: np.ndarray
    loaded: bool = False
    epsilon: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.matrix.shape[0]


def _raw_kernel_matrix(spec, rows):
    if isinstance(spec, LinearKernel):
        return rows @ rows.T
    if isinstance(spec, PolynomialKernel):
        return (rows @ rows.T + 1.0) ** spec.degree
    if isinstance(spec, GaussianKernel):
        return np.exp(-_sqdist(rows) / (2.0 * spec.variance))
    if isinstance(spec, MultiKernel):
        # Gaussian terms share one distance matrix
        sq = None
        out = np.zeros((len(rows), len(rows)))
        for w, s in spec.terms:
            if isinstance(s, GaussianKernel):
                if sq is None:
                    sq = _sqdist(rows)
                out += w * np.exp(-sq / (2.0 * s.variance))
            else:
                out += w * _raw_kernel_matrix(s, rows)
        return out
    raise TypeError(f"not a kernel spec: {spec!r}")


def _sqdist(rows):
    g = rows @ rows.T
    d = np.diag(g)
    return np.maximum(d[:, None] + d[None, :] - 2.0 * g, 0.0)


def kernel_matrix(spec, rows):
    """Kernel matrix whose ``(i, j)`` entry is ``kappa(rows[i], rows[j])``."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if isinstance(spec, SDEKernel):
        return sde_learn(rows, spec.neighbors, tol=spec.tol, max_iter=spec.max_iter)
    k = _raw_kernel_matrix(spec, rows)
    return KernelMatrix(0.5 * (k + k.T))


def diagonal_load(k, rel_eps=1e-6, threshold=1e-10, eps=None):
    """Add ``eps * I`` when the kernel matrix is (numerically) singular.

    Loading triggers when the smallest eigenvalue is below
    ``threshold * trace / N``. The default magnitude is relative,
    ``rel_eps * trace / N``; pass ``eps`` for an absolute value. Any slightly
    negative roundoff eigenvalue is lifted as well, so the result has minimum
    eigenvalue at least ``eps``.
    """
    if not isinstance(k, KernelMatrix):
        k = KernelMatrix(np.asarray(k, dtype=float))
    m = k.matrix
    n = m.shape[0]
    scale = np.trace(m) / n
    if not scale > 0:
        scale = 1.0
    lam_min = np.linalg.eigvalsh(m)[0]
    if lam_min >= threshold * scale:
        return KernelMatrix(m, k.loaded, k.epsilon, dict(k.info))
    e = rel_eps * scale if eps is None else float(eps)
    shift = e + max(0.0, -lam_min)
    return KernelMatrix(m + shift * np.eye(n), True, k.epsilon + shift, dict(k.info))


# --------------------------------------------------------------------------
# semidefinite embedding


def sde_neighborhoods(rows, p):
    """Index sets: each node plus its ``p`` nearest other nodes (ties -> lower index)."""
    rows = np.asarray(rows, dtype=float)
    n = len(rows)
    d = cdist(rows, rows)
    hoods = []
    for i in range(n):
        order = np.lexsort((np.arange(n), d[i]))
        others = [j for j in order if j != i][:p]
        hoods.append(sorted([i] + others))
    return hoods


def sde_constraint_pairs(rows, p):
    """Pairs that share at least one neighborhood, bridged to a connected graph.

    When the neighborhood graph splits into several components the trace
    objective is unbounded, so the closest pair between the current component
    of node 0 and the rest is added until the graph is connected.
    """
    rows = np.asarray(rows, dtype=float)
    n = len(rows)
    adj = np.zeros((n, n), dtype=bool)
    for hood in sde_neighborhoods(rows, p):
        for a in hood:
            for b in hood:
                if a < b:
                    adj[a, b] = True
    d = cdist(rows, rows)
    bridges = 0
    while True:
        ncomp, lab = connected_components(adj | adj.T, directed=False)
        if ncomp == 1:
            break
        inside = lab == lab[0]
        sub = d[np.ix_(inside, ~inside)]
        a, b = np.unravel_index(np.argmin(sub), sub.shape)
        ia, ib = np.flatnonzero(inside)[a], np.flatnonzero(~inside)[b]
        adj[min(ia, ib), max(ia, ib)] = True
        bridges += 1
    pairs = np.argwhere(adj)
    return pairs, bridges


def sde_learn(rows, p, tol=1e-5, max_iter=5000, rho=None):
    """Learn a kernel matrix by semidefinite embedding.

    Solves ``max trace(K)`` subject to ``K`` PSD, ``sum(K) = 0`` and
    ``K_ii - 2 K_ij + K_jj = ||y_i - y_j||^2`` for every pair sharing a
    neighborhood, using ADMM with the splitting ``K`` (affine set) / ``Z``
    (PSD cone). The affine projection is an exact least-squares projection.
    The returned matrix is the PSD iterate, so positive semidefiniteness holds
    exactly; the affine residuals are checked against ``tol * (rhs + 1)``.

    Parameters
    ----------
    rows : ndarray, shape (N, tau)
    p : int
        Number of nearest other nodes in each neighborhood, ``1 <= p < N``.

    Raises
    ------
    ConvergenceError
        When the constraints are not met within ``max_iter`` iterations; the
        worst scaled residual is attached.
    """
    rows = np.asarray(rows, dtype=float)
    n = len(rows)
    if not 1 <= p < n:
        raise ValueError(f"need 1 <= P < N, got P={p}, N={n}")
    pairs, bridges = sde_constraint_pairs(rows, p)
    sq = np.sum((rows[pairs[:, 0]] - rows[pairs[:, 1]]) ** 2, axis=1)

    # constraint operator on vec(K) (row-major, full matrix)
    m = len(pairs)
    a = np.zeros((m + 1, n * n))
    i, j = pairs[:, 0], pairs[:, 1]
    r = np.arange(m)
    a[r, i * n + i] += 1.0
    a[r, j * n + j] += 1.0
    a[r, i * n + j] -= 1.0
    a[r, j * n + i] -= 1.0
    a[m, :] = 1.0
    b = np.concatenate([sq, [0.0]])
    scale = np.linalg.norm(a, axis=1)
    a /= scale[:, None]
    b = b / scale
    a_pinv = np.linalg.pinv(a)

    def project_affine(x):
        v = x.ravel()
        v = v - a_pinv @ (a @ v - b)
        k = v.reshape(n, n)
        return 0.5 * (k + k.T)

    def project_psd(x):
        w, v = np.linalg.eigh(0.5 * (x + x.T))
        out = (v * np.maximum(w, 0.0)) @ v.T
        return 0.5 * (out + out.T)

    limit = tol * (np.concatenate([sq, [0.0]]) + 1.0)

    def residuals(k):
        lhs = k[i, i] - 2.0 * k[i, j] + k[j, j]
        return np.abs(np.concatenate([lhs - sq, [k.sum()]]))

    if rho is None:
        rho = 1.0 / max(np.mean(sq), 1e-12)
    # warm start from the centered linear Gram matrix, a feasible point
    centered = rows - rows.mean(axis=0)
    z = centered @ centered.T
    u = np.zeros_like(z)
    eye = np.eye(n)
    for it in range(1, max_iter + 1):
        k = project_affine(z - u + eye / rho)
        # over-relaxation
        k = RELAX * k + (1.0 - RELAX) * z
        z_new = project_psd(k + u)
        u += k - z_new
        dz = np.linalg.norm(z_new - z)
        z = z_new
        if it % 10 == 0 or it == max_iter:
            res = residuals(z)
            if np.all(res <= limit) and dz <= tol * max(1.0, np.linalg.norm(z)):
                break
            # residual balancing; u is the scaled dual, so it scales inversely with rho
            primal, dual = np.linalg.norm(k - z), rho * dz
            if primal > 10.0 * dual:
                rho *= 2.0
                u /= 2.0
            elif dual > 10.0 * primal:
                rho /= 2.0
                u *= 2.0
    res = residuals(z)
    polished = False
    if not np.all(res <= limit):
        z, polished = _polish_factor(z, pairs, sq, limit)
        res = residuals(z)
    if not np.all(res <= limit):
        worst = float(np.max(res / (np.concatenate([sq, [0.0]]) + 1.0)))
        raise ConvergenceError(
            f"SDE did not reach constraint tolerance in {max_iter} iterations "
            f"(worst scaled residual {worst:.3g})",
            residual=worst,
        )
    return KernelMatrix(z, info={"iterations": it, "pairs": m, "bridges": bridges,
                                 "polished": polished, "objective": float(np.trace(z))})


def _polish_factor(k, pairs, sq, limit, max_steps=50):
    """Restore feasibility of a nearly feasible PSD iterate.

    Writes ``K = V V^T`` with the significant eigenpairs of ``K`` and takes
    minimum-norm Gauss-Newton steps on ``V`` for the equality constraints, so
    the result stays PSD by construction and moves as little as possible.
    """
    w, q = np.linalg.eigh(k)
    keep = w > 1e-10 * max(w[-1], 1e-300)
    v = q[:, keep] * np.sqrt(w[keep])
    n, r = v.shape
    i, j = pairs[:, 0], pairs[:, 1]
    rhs = np.concatenate([sq, [0.0]])
    for _ in range(max_steps):
        g = v @ v.T
        c = np.concatenate([g[i, i] - 2.0 * g[i, j] + g[j, j], [g.sum()]]) - rhs
        if np.all(np.abs(c) <= 0.1 * limit):
            break
        # d/dV of ||v_i - v_j||^2 and of ||sum_i v_i||^2
        jac = np.zeros((len(c), n, r))
        diff = v[i] - v[j]
        rows = np.arange(len(pairs))
        jac[rows, i] += 2.0 * diff
        jac[rows, j] -= 2.0 * diff
        jac[-1] += 2.0 * v.sum(axis=0)
        step = np.linalg.lstsq(jac.reshape(len(c), -1), -c, rcond=None)[0]
        v = v + step.reshape(n, r)
    out = v @ v.T
    return 0.5 * (out + out.T), True
