"""Clustering of manifold-valued sequences.

The main method, :func:`gct`, builds an affinity from two kinds of local
evidence gathered in the tangent space at every point:

* affine sparse-coding weights over the point's nearest neighbors, and
* angles between each neighbor's log vector and a local PCA estimate of the
  tangent space of the submanifold the point sits on.

Spectral clustering of that affinity yields the labels. Three baselines share
the distance and spectral machinery: :func:`smc` (sparse weights only),
:func:`scr` (Gaussian of geodesic distance) and :func:`kmeans_embedded`.
"""

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csgraph
from scipy.sparse.linalg import eigsh
from sklearn.cluster import KMeans

from .errors import ConfigurationError, ConvergenceError

METHODS = ("gct", "smc", "scr", "kmeans")
DENSE_EIGH_MAX = 600


@dataclass(frozen=True)
class GCTConfig:
    """Parameters of GCT and SMC.

    ``penalty`` scales the weighted l1 term of the sparse-coding objective
    (1 reproduces the plain objective). ``seed`` drives the k-means restarts.
    """

    K: int = 2
    n_neighbors: int = 16
    sigma_d: float = 1.0
    sigma_a: float = 1.0
    eta: float = 0.5
    tol: float = 1e-10
    max_iter: int = 10000
    penalty: float = 1.0
    n_init: int = 20
    seed: int = 0

    def validate(self, n_points=None):
        if self.K < 1:
            raise ConfigurationError("K must be at least 1")
        if self.n_neighbors < 2:
            raise ConfigurationError("n_neighbors must be at least 2")
        if n_points is not None and self.n_neighbors >= n_points:
            raise ConfigurationError(
                f"n_neighbors={self.n_neighbors} must be smaller than the number of points {n_points}"
            )
        if not 0.0 < self.eta < 1.0:
            raise ConfigurationError("eta must lie in (0, 1)")
        if self.sigma_d <= 0 or self.sigma_a <= 0 or self.penalty <= 0:
            raise ConfigurationError("sigma_d, sigma_a and penalty must be positive")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ClusterLabels:
    labels: np.ndarray
    method: str = ""
    affinity: np.ndarray | None = None
    accuracy: float | None = None
    info: dict = field(default_factory=dict)

    def score(self, truth):
        self.accuracy = clustering_accuracy(self.labels, truth)
        return self.accuracy


# --------------------------------------------------------------------------
# neighborhoods


def _points_and_manifold(seq):
    return seq.points, seq.manifold


def nearest_neighbors(distances, t, n_neighbors, rtol=1e-12):
    """Indices of the ``n_neighbors`` points closest to point ``t``, excluding ``t``.

    ``distances`` is a row or a full pairwise matrix. Distances equal within
    ``rtol`` (relative to the row maximum) count as ties, which go to the
    lower index.
    """
    d = np.asarray(distances, dtype=float)
    row = d[t] if d.ndim == 2 else d
    n = len(row)
    if n_neighbors >= n:
        raise ConfigurationError(f"cannot pick {n_neighbors} neighbors among {n - 1} other points")
    scale = max(float(np.max(row)), np.finfo(float).tiny)
    key = np.round(row / (rtol * scale))
    key[t] = np.inf
    return np.lexsort((np.arange(n), key))[:n_neighbors]


def neighbor_table(distances, n_neighbors):
    return np.array([nearest_neighbors(distances, t, n_neighbors) for t in range(len(distances))])


def tangent_coordinates(seq, neighbors):
    """Log-map coordinates of each point's neighbors, shape ``(n, k, d)``."""
    pts, man = _points_and_manifold(seq)
    return np.array([man.log_coords(pts[t], pts[nb]) for t, nb in enumerate(neighbors)])


# --------------------------------------------------------------------------
# sparse coding


def _prox_affine_l1(z, thr):
    """Row-wise ``argmin 0.5||a - z||^2 + sum thr_i |a_i|`` subject to ``sum a = 1``.

    The minimizer is ``soft(z - mu, thr)`` with the scalar ``mu`` chosen so
    the entries sum to one; ``mu`` is found exactly from the breakpoints of
    that piecewise-linear, non-increasing sum.
    """
    n, k = z.shape
    bps = np.sort(np.concatenate([z - thr, z + thr], axis=1), axis=1)      # (n, 2k)
    shifted = z[:, None, :] - bps[:, :, None]                               # (n, 2k, k)
    g = np.sum(np.sign(shifted) * np.maximum(np.abs(shifted) - thr[:, None, :], 0.0), axis=2)
    # g decreases along the breakpoints; find the first breakpoint with g <= 1
    below = g <= 1.0
    j = np.argmax(below, axis=1)
    rows = np.arange(n)
    mu = np.empty(n)
    # left of every breakpoint the sum has slope -k; right of every one it is also -k
    first = j == 0
    mu[first] = bps[first, 0] + (g[first, 0] - 1.0) / k
    none = ~below.any(axis=1)
    mu[none] = bps[none, -1] + (g[none, -1] - 1.0) / k
    mid = ~first & ~none
    if mid.any():
        r = rows[mid]
        jm = j[mid]
        b0, b1 = bps[r, jm - 1], bps[r, jm]
        g0, g1 = g[r, jm - 1], g[r, jm]
        span = g0 - g1
        frac = np.where(span > 0, (g0 - 1.0) / np.where(span > 0, span, 1.0), 0.0)
        mu[mid] = b0 + frac * (b1 - b0)
    s = z - mu[:, None]
    a = np.sign(s) * np.maximum(np.abs(s) - thr, 0.0)
    # large thresholds cancel against mu; put the rounding slack on the largest entry
    big = np.argmax(np.abs(a), axis=1)
    a[rows, big] += 1.0 - a.sum(axis=1)
    return a


def sparse_objective(alpha, gram, weights, penalty=1.0):
    alpha = np.atleast_2d(alpha)
    gram = gram if gram.ndim == 3 else gram[None]
    weights = np.atleast_2d(weights)
    fit = np.einsum("ni,nij,nj->n", alpha, gram, alpha)
    return fit + penalty * np.sum(weights * np.abs(alpha), axis=1)


def _polish(alpha, gram, w, penalty, tol):
    """Solve the KKT system on the support and signs of ``alpha``; None if inconsistent."""
    k = len(alpha)
    supp = np.abs(alpha) > 1e-12 * max(1.0, np.max(np.abs(alpha)))
    if not supp.any():
        return None
    s = np.sign(alpha[supp])
    q = int(supp.sum())
    a = np.zeros((q + 1, q + 1))
    a[:q, :q] = 2.0 * gram[np.ix_(supp, supp)]
    a[:q, q] = 1.0
    a[q, :q] = 1.0
    rhs = np.concatenate([-penalty * w[supp] * s, [1.0]])
    try:
        sol = linalg.solve(a, rhs, assume_a="sym")
    except (linalg.LinAlgError, ValueError):
        sol = np.linalg.lstsq(a, rhs, rcond=None)[0]
    if not np.allclose(a @ sol, rhs, atol=1e-9, rtol=0):
        return None
    out = np.zeros(k)
    out[supp] = sol[:q]
    mu = sol[q]
    if np.any(np.sign(out[supp]) != s):
        return None
    grad = 2.0 * gram @ out + mu
    off = ~supp
    if np.any(np.abs(grad[off]) > penalty * w[off] * (1 + 1e-9) + tol):
        return None
    return out


def sparse_code_batch(vectors, sigma_d=1.0, penalty=1.0, tol=1e-10, max_iter=10000):
    """Affine weighted-l1 sparse codes for a batch of tangent neighborhoods.

    For each stack of neighbor log vectors ``v_1..v_k`` solves::

        min_a ||sum_i a_i v_i||^2 + penalty * sum_i exp(||v_i|| / sigma_d) |a_i|
        s.t.  sum_i a_i = 1

    by accelerated proximal gradient with adaptive restart (the prox of the
    weighted l1 term plus the affine constraint is exact), followed by a KKT
    solve on the detected support.

    Parameters
    ----------
    vectors : ndarray, shape (n, k, d)

    Returns
    -------
    alpha : ndarray, shape (n, k)
    """
    v = np.asarray(vectors, dtype=float)
    if v.ndim == 2:
        v = v[None]
    n, k, _ = v.shape
    if k < 2:
        raise ConfigurationError("sparse coding needs at least two neighbors")
    norms = np.linalg.norm(v, axis=2)
    w = np.exp(norms / sigma_d)
    gram = np.einsum("nid,njd->nij", v, v)
    alpha = np.zeros((n, k))

    zero = norms == 0.0
    dup = zero.any(axis=1)
    alpha[dup] = zero[dup] / zero[dup].sum(axis=1, keepdims=True)

    todo = np.flatnonzero(~dup)
    if todo.size:
        g = gram[todo]
        lip = 2.0 * np.linalg.eigvalsh(g)[:, -1]
        lip = np.maximum(lip, 1e-300)
        step = 1.0 / lip
        thr = penalty * w[todo] * step[:, None]
        wt = w[todo]
        # start from the cheapest single neighbor
        x = np.zeros((len(todo), k))
        x[np.arange(len(todo)), np.argmin(wt * 1.0 + norms[todo] ** 2, axis=1)] = 1.0
        y = x.copy()
        tk = np.ones(len(todo))
        active = np.ones(len(todo), bool)
        fx = sparse_objective(x, g, wt, penalty)
        it = 0
        while active.any() and it < max_iter:
            it += 1
            a = np.flatnonzero(active)
            grad = 2.0 * np.einsum("nij,nj->ni", g[a], y[a])
            xn = _prox_affine_l1(y[a] - step[a, None] * grad, thr[a])
            fn = sparse_objective(xn, g[a], wt[a], penalty)
            # adaptive restart when the objective goes up
            restart = fn > fx[a]
            tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk[a] ** 2))
            mom = ((tk[a] - 1.0) / tn)[:, None]
            yn = xn + mom * (xn - x[a])
            yn[restart] = xn[restart]
            tn[restart] = 1.0
            delta = np.max(np.abs(xn - x[a]), axis=1)
            x[a], y[a], tk[a], fx[a] = xn, yn, tn, fn
            done = delta <= tol * np.maximum(1.0, np.max(np.abs(xn), axis=1))
            active[a[done]] = False
        for row, idx in enumerate(todo):
            cand = _polish(x[row], g[row], wt[row], penalty, 1e-9)
            if cand is not None:
                fc = sparse_objective(cand, g[row], wt[row], penalty)[0]
                if fc <= fx[row] + 1e-12 * max(1.0, abs(fx[row])):
                    x[row] = cand
                    continue
            if active[row]:
                raise ConvergenceError(
                    f"sparse coding did not converge in {max_iter} iterations "
                    f"(objective {fx[row]:.12g})", residual=float(fx[row]),
                )
        alpha[todo] = x
    return alpha


def local_sparse_code(seq, t, neighbors, sigma_d=1.0, penalty=1.0, tol=1e-10, max_iter=10000):
    """Sparse affine weights of point ``t`` over ``neighbors``, a length-k array."""
    pts, man = _points_and_manifold(seq)
    v = man.log_coords(pts[t], pts[np.asarray(neighbors)])
    return sparse_code_batch(v[None], sigma_d, penalty, tol, max_iter)[0]


# --------------------------------------------------------------------------
# local tangent estimates and angles


def local_pca_basis(vectors, eta):
    """Orthonormal basis (columns) of the eigenvectors of the local correlation
    matrix of ``vectors`` (k x d) whose eigenvalues are at least ``eta * lambda_max``."""
    v = np.asarray(vectors, dtype=float)
    _, s, vt = np.linalg.svd(v, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise ValueError("local correlation matrix is zero: all neighbors coincide with the point")
    lam = s ** 2 / max(len(v) - 1, 1)
    keep = lam >= eta * lam[0]
    return vt[keep].T


def local_pca(seq, t, neighbors, eta):
    pts, man = _points_and_manifold(seq)
    return local_pca_basis(man.log_coords(pts[t], pts[np.asarray(neighbors)]), eta)


def geodesic_angle(v, basis):
    """Angle in ``[0, pi/2]`` between tangent vector(s) ``v`` and ``span(basis)``.

    Zero vectors get angle 0.
    """
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    proj = v @ basis
    inside = np.linalg.norm(proj, axis=1)
    outside = np.linalg.norm(v - proj @ basis.T, axis=1)
    theta = np.arctan2(outside, inside)
    theta[(inside == 0) & (outside == 0)] = 0.0
    return theta[0] if single else theta


# --------------------------------------------------------------------------
# affinities and spectral clustering


def neighbor_mask(neighbors, n):
    mask = np.zeros((n, n), bool)
    rows = np.repeat(np.arange(n), neighbors.shape[1])
    mask[rows, neighbors.ravel()] = True
    return mask | mask.T


def gct_affinity(alpha, theta, sigma_a=1.0, mask=None):
    """Affinity ``exp(|a_tu| + |a_ut|) * exp(-(theta_tu + theta_ut) / sigma_a)``.

    ``alpha`` and ``theta`` are full ``n x n`` matrices indexed (point,
    neighbor). Entries outside ``mask`` (and the diagonal) are zero.
    """
    alpha = np.asarray(alpha, dtype=float)
    theta = np.asarray(theta, dtype=float)
    a = np.abs(alpha)
    w = np.exp(a + a.T) * np.exp(-(theta + theta.T) / sigma_a)
    if mask is not None:
        w = np.where(mask, w, 0.0)
    np.fill_diagonal(w, 0.0)
    return w


def smc_affinity(alpha, mask=None):
    a = np.abs(np.asarray(alpha, dtype=float))
    w = np.exp(a + a.T)
    if mask is not None:
        w = np.where(mask, w, 0.0)
    np.fill_diagonal(w, 0.0)
    return w


def _kmeans(x, k, seed, n_init):
    return KMeans(n_clusters=k, n_init=n_init, random_state=seed).fit_predict(x)


def spectral_embedding(w, k):
    """Row-normalized top-``k`` eigenvectors of ``D^-1/2 W D^-1/2``.

    These are the eigenvectors of the ``k`` smallest eigenvalues of the
    symmetric normalized Laplacian ``I - D^-1/2 W D^-1/2``.
    """
    w = np.asarray(w, dtype=float)
    n = len(w)
    deg = w.sum(axis=1)
    dinv = np.zeros(n)
    pos = deg > 0
    dinv[pos] = 1.0 / np.sqrt(deg[pos])
    m = w * dinv[:, None] * dinv[None, :]
    m = 0.5 * (m + m.T)
    if n <= DENSE_EIGH_MAX or k >= n - 1:
        _, vecs = linalg.eigh(m, subset_by_index=[n - k, n - 1])
    else:
        v0 = np.full(n, 1.0 / np.sqrt(n))
        _, vecs = eigsh(m, k=k, which="LA", v0=v0, tol=1e-12, maxiter=100 * n)
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    return np.divide(vecs, norms, out=np.zeros_like(vecs), where=norms > 0)


def spectral_cluster(w, k, seed=0, n_init=20):
    """Normalized spectral clustering of a symmetric nonnegative affinity."""
    w = np.asarray(w, dtype=float)
    n = len(w)
    if k == 1:
        return np.zeros(n, dtype=int)
    ncomp, _ = csgraph.connected_components(w > 0, directed=False)
    if ncomp > k:
        warnings.warn(f"affinity graph has {ncomp} connected components for K={k}",
                      RuntimeWarning, stacklevel=2)
    emb = spectral_embedding(w, k)
    return _kmeans(emb, k, seed, n_init)


# --------------------------------------------------------------------------
# methods


def _pairwise(seq, distances):
    if distances is None:
        return seq.manifold.pairwise_distances(seq.points)
    return np.asarray(distances, dtype=float)


@dataclass
class LocalEvidence:
    """Per-point neighborhoods, tangent coordinates and sparse codes.

    Shared by :func:`gct` and :func:`smc` so both can reuse one computation.
    """

    neighbors: np.ndarray
    coords: np.ndarray
    codes: np.ndarray

    @property
    def n(self):
        return len(self.neighbors)

    def alpha_matrix(self):
        n, k = self.neighbors.shape
        alpha = np.zeros((n, n))
        alpha[np.repeat(np.arange(n), k), self.neighbors.ravel()] = self.codes.ravel()
        return alpha

    def theta_matrix(self, eta):
        n = self.n
        theta = np.full((n, n), np.pi / 2)
        for t in range(n):
            nb = self.neighbors[t]
            if not np.any(self.coords[t]):
                theta[t, nb] = 0.0
                continue
            theta[t, nb] = geodesic_angle(self.coords[t], local_pca_basis(self.coords[t], eta))
        return theta

    def mask(self):
        return neighbor_mask(self.neighbors, self.n)


def local_evidence(seq, cfg, distances=None):
    """Neighbors, log-map coordinates and sparse codes for every point."""
    cfg.validate(len(seq))
    d = _pairwise(seq, distances)
    nbrs = neighbor_table(d, cfg.n_neighbors)
    try:
        coords = tangent_coordinates(seq, nbrs)
    except ValueError as exc:
        raise type(exc)(f"log map step failed: {exc}") from exc
    try:
        codes = sparse_code_batch(coords, cfg.sigma_d, cfg.penalty, cfg.tol, cfg.max_iter)
    except ConvergenceError as exc:
        raise ConvergenceError(f"sparse coding step failed: {exc}", exc.residual) from exc
    return LocalEvidence(nbrs, coords, codes)


def gct(seq, cfg, distances=None, evidence=None):
    """Cluster a :class:`~riemts.features.FeatureSequence` with GCT.

    ``distances`` optionally supplies the precomputed pairwise geodesic
    distance matrix, and ``evidence`` a precomputed :class:`LocalEvidence`,
    so several methods can share them.
    """
    if cfg.K == 1:
        return ClusterLabels(np.zeros(len(seq), dtype=int), "gct")
    ev = evidence if evidence is not None else local_evidence(seq, cfg, distances)
    alpha = ev.alpha_matrix()
    w = gct_affinity(alpha, ev.theta_matrix(cfg.eta), cfg.sigma_a, ev.mask())
    labels = spectral_cluster(w, cfg.K, cfg.seed, cfg.n_init)
    return ClusterLabels(labels, "gct", w, info={"alpha": alpha})


def smc(seq, cfg, distances=None, evidence=None):
    """Sparse-weights-only baseline: affinity ``exp(|a_tu| + |a_ut|)`` on the neighbor graph."""
    if cfg.K == 1:
        return ClusterLabels(np.zeros(len(seq), dtype=int), "smc")
    ev = evidence if evidence is not None else local_evidence(seq, cfg, distances)
    w = smc_affinity(ev.alpha_matrix(), ev.mask())
    return ClusterLabels(spectral_cluster(w, cfg.K, cfg.seed, cfg.n_init), "smc", w)


def scr_affinity(distances, sigma=None):
    d = np.asarray(distances, dtype=float)
    if sigma is None:
        iu = np.triu_indices(len(d), 1)
        sigma = float(np.median(d[iu])) if iu[0].size else 1.0
        if sigma <= 0:
            sigma = 1.0
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    w = np.exp(-d ** 2 / (2.0 * sigma ** 2))
    return 0.5 * (w + w.T), sigma


def scr(seq, k, sigma=None, seed=0, n_init=20, distances=None):
    """Spectral clustering of the dense Gaussian-of-geodesic-distance affinity.

    ``sigma=None`` uses the median pairwise distance.
    """
    w, sigma = scr_affinity(_pairwise(seq, distances), sigma)
    return ClusterLabels(spectral_cluster(w, k, seed, n_init), "scr", w, info={"sigma": sigma})


def kmeans_embedded(seq, k, seed=0, n_init=20):
    """k-means on a Euclidean embedding of the points.

    Subspaces embed as vectorized projectors ``U U^T``; PD matrices as their
    upper triangles with off-diagonals scaled by sqrt(2).
    """
    x = seq.manifold.embed(seq.points)
    if k == 1:
        return ClusterLabels(np.zeros(len(x), dtype=int), "kmeans")
    return ClusterLabels(_kmeans(x, k, seed, n_init), "kmeans")


def run_method(method, seq, cfg, distances=None, scr_sigma=None, evidence=None):
    """Dispatch by method name; ``cfg`` supplies K, seed and restarts for all methods."""
    if method == "gct":
        return gct(seq, cfg, distances, evidence)
    if method == "smc":
        return smc(seq, cfg, distances, evidence)
    if method == "scr":
        return scr(seq, cfg.K, scr_sigma, cfg.seed, cfg.n_init, distances)
    if method == "kmeans":
        return kmeans_embedded(seq, cfg.K, cfg.seed, cfg.n_init)
    raise ConfigurationError(f"unknown method {method!r}; choose from {METHODS}")


def clustering_accuracy(predicted, truth, n_clusters=None):
    """Fraction of matching labels under the best one-to-one relabeling."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ValueError(f"label vectors differ in length: {predicted.shape} vs {truth.shape}")
    if n_clusters is not None and predicted.size and (
        predicted.min() < 0 or predicted.max() >= n_clusters
    ):
        raise ValueError(f"predicted labels fall outside 0..{n_clusters - 1}")
    if predicted.size == 0:
        return 1.0
    pv, pi = np.unique(predicted, return_inverse=True)
    tv, ti = np.unique(truth, return_inverse=True)
    conf = np.zeros((len(pv), len(tv)))
    np.add.at(conf, (pi, ti), 1)
    r, c = linear_sum_assignment(conf, maximize=True)
    return float(conf[r, c].sum() / predicted.size)
