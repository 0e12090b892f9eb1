"""Riemannian primitives on the Grassmannian Gr(n, r) and the SPD manifold PD(N).

Points are plain numpy arrays: a Grassmann point is an ``(n, r)`` matrix with
orthonormal columns standing for its column space, an SPD point is a symmetric
positive-definite ``(N, N)`` matrix. Tangent vectors are ambient matrices of
the same shape as the base point (the horizontal lift for Gr, a symmetric
matrix for PD).

Grassmann geometry uses the canonical metric, so the geodesic distance is the
2-norm of the principal angles. PD uses the affine-invariant metric
``<U, V>_M = tr(M^-1 U M^-1 V)``.

The Grassmann logarithm is the usual closed form: with ``M = U^T Y``, take the
thin SVD ``(I - U U^T) Y M^-1 = Q S V^T`` and return ``Q arctan(S) V^T``.
(Gallivan et al. give an equivalent procedure working on a full orthogonal
completion of ``U``; this form only needs the ``n x r`` representative.)
"""

import numpy as np

from .errors import CutLocusError, DimensionMismatchError, NotSPDError

ORTHO_TOL = 1e-10
SYM_TOL = 1e-12
CUT_LOCUS_MARGIN = 1e-8
SQRT2 = np.sqrt(2.0)


# --------------------------------------------------------------------------
# validation helpers


def check_grassmann(u, tol=ORTHO_TOL):
    u = np.asarray(u, dtype=float)
    if u.ndim != 2:
        raise ValueError(f"Grassmann basis must be 2-D, got shape {u.shape}")
    n, r = u.shape
    if not 0 < r < n:
        raise ValueError(f"need 0 < r < n for Gr(n, r), got n={n}, r={r}")
    err = np.linalg.norm(u.T @ u - np.eye(r))
    if err > tol:
        raise ValueError(f"basis columns are not orthonormal (||U^T U - I||_F = {err:.3g})")
    return u


def orthonormalize(x):
    """Orthonormal basis for the column space of ``x`` (QR with positive R diagonal)."""
    q, r = np.linalg.qr(np.asarray(x, dtype=float))
    s = np.sign(np.diag(r))
    s[s == 0] = 1.0
    return q * s


def check_spd(m, name="matrix"):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    scale = max(np.linalg.norm(m), np.finfo(float).tiny)
    asym = np.linalg.norm(m - m.T) / scale
    if asym > SYM_TOL:
        raise ValueError(f"{name} is not symmetric (relative asymmetry {asym:.3g})")
    m = 0.5 * (m + m.T)
    w = np.linalg.eigvalsh(m)
    if not w[0] > 0:
        raise NotSPDError(w[0], f"{name} is not positive definite (min eigenvalue {w[0]:.6g})")
    return m


def _ordered(a, b):
    # fixed argument order so distances are exactly symmetric in floating point
    return (b, a) if a.tobytes() > b.tobytes() else (a, b)


def _same_shape(a, b, what="points"):
    if a.shape != b.shape:
        raise DimensionMismatchError(a.shape, b.shape, what)


# --------------------------------------------------------------------------
# Grassmannian


def principal_angles(a, b):
    """Principal angles between span(a) and span(b), ascending.

    Cosines come from ``a^T b`` and sines from the residual ``b - a a^T b``;
    combining them with ``arctan2`` keeps full precision for both tiny and
    near-orthogonal angles (plain ``arccos`` loses ~1e-8 near zero).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _same_shape(a, b)
    return _principal_angles_batch(a, b[None])[0]


def _principal_angles_batch(u, ys):
    # u: (n, r); ys: (k, n, r) -> (k, r) angles ascending
    m = u.T @ ys
    resid = ys - u @ m
    cos2 = np.linalg.eigvalsh(np.swapaxes(m, 1, 2) @ m)[:, ::-1]
    sin2 = np.linalg.eigvalsh(np.swapaxes(resid, 1, 2) @ resid)
    cos = np.sqrt(np.clip(cos2, 0.0, 1.0))
    sin = np.sqrt(np.clip(sin2, 0.0, 1.0))
    return np.arctan2(sin, cos)


def grassmann_distance(a, b):
    """Geodesic (arc-length) distance between two subspaces.

    Parameters
    ----------
    a, b : ndarray, shape (n, r)
        Orthonormal bases.

    Returns
    -------
    float
        ``||theta||_2`` over the principal angles ``theta``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _same_shape(a, b)
    return float(np.linalg.norm(principal_angles(*_ordered(a, b))))


def grassmann_log(base, target):
    """Logarithm map ``log_base(target)`` as an ``(n, r)`` horizontal tangent.

    Raises :class:`CutLocusError` when the largest principal angle is within
    1e-8 of pi/2, where the map is not defined.
    """
    base = np.asarray(base, dtype=float)
    target = np.asarray(target, dtype=float)
    _same_shape(base, target)
    return _grassmann_log_batch(base, target[None])[0]


def _grassmann_log_batch(u, ys):
    n, r = u.shape
    angles = _principal_angles_batch(u, ys)
    worst = angles.max() if angles.size else 0.0
    if worst >= np.pi / 2 - CUT_LOCUS_MARGIN:
        raise CutLocusError(worst)
    m = np.einsum("nr,knl->krl", u, ys)
    resid = ys - np.einsum("nr,krl->knl", u, m)
    # resid @ inv(m), solved as m^T x^T = resid^T
    b = np.linalg.solve(np.transpose(m, (0, 2, 1)), np.transpose(resid, (0, 2, 1)))
    b = np.transpose(b, (0, 2, 1))
    q, s, vt = np.linalg.svd(b, full_matrices=False)
    v = np.einsum("knr,kr,krl->knl", q, np.arctan(s), vt)
    # remove roundoff from horizontality
    return v - np.einsum("nr,krl->knl", u, np.einsum("nr,knl->krl", u, v))


def grassmann_exp(base, v):
    """Exponential map: follow the geodesic from ``base`` with velocity ``v``."""
    base = np.asarray(base, dtype=float)
    v = np.asarray(v, dtype=float)
    _same_shape(base, v, "base point and tangent")
    q, s, vt = np.linalg.svd(v, full_matrices=False)
    y = (base @ vt.T) * np.cos(s) @ vt + (q * np.sin(s)) @ vt
    return orthonormalize(y)


def check_grassmann_tangent(base, v, tol=ORTHO_TOL):
    err = np.linalg.norm(base.T @ v)
    if err > tol:
        raise ValueError(f"tangent is not horizontal at base (||U^T V|| = {err:.3g})")
    return v


# --------------------------------------------------------------------------
# SPD manifold


def _sqrt_and_invsqrt(m):
    w, v = np.linalg.eigh(m)
    if not w[0] > 0:
        raise NotSPDError(w[0])
    r = np.sqrt(w)
    return (v * r) @ v.T, (v / r) @ v.T


def _sym_fun(m, fun):
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    out = (v * fun(w)) @ v.T
    return 0.5 * (out + out.T)


def spd_log(base, target):
    """Affine-invariant logarithm ``G logm(G^-1 M' G^-1) G`` with ``G = base^(1/2)``.

    ``G`` is the symmetric square root from an eigendecomposition (not a
    triangular Cholesky factor; the formula needs ``G`` symmetric).
    """
    base = check_spd(base, "base")
    target = check_spd(target, "target")
    _same_shape(base, target)
    g, gi = _sqrt_and_invsqrt(base)
    inner = _sym_fun(gi @ target @ gi, np.log)
    out = g @ inner @ g
    return 0.5 * (out + out.T)


def spd_exp(base, v):
    base = check_spd(base, "base")
    v = np.asarray(v, dtype=float)
    _same_shape(base, v, "base point and tangent")
    v = 0.5 * (v + v.T)
    g, gi = _sqrt_and_invsqrt(base)
    out = g @ _sym_fun(gi @ v @ gi, np.exp) @ g
    return 0.5 * (out + out.T)


def spd_distance(a, b):
    """Affine-invariant distance ``||logm(a^-1/2 b a^-1/2)||_F``."""
    a = check_spd(a, "a")
    b = check_spd(b, "b")
    _same_shape(a, b)
    a, b = _ordered(a, b)
    _, ai = _sqrt_and_invsqrt(a)
    w = np.linalg.eigvalsh(ai @ b @ ai)
    return float(np.sqrt(np.sum(np.log(w) ** 2)))


def sym_to_vec(s):
    """Upper-triangular vectorization with off-diagonals scaled by sqrt(2).

    Works on a single ``(N, N)`` matrix or a stack ``(k, N, N)``; Euclidean
    inner products of the outputs equal Frobenius inner products of the inputs.
    """
    s = np.asarray(s, dtype=float)
    n = s.shape[-1]
    iu = np.triu_indices(n)
    scale = np.where(iu[0] == iu[1], 1.0, SQRT2)
    return s[..., iu[0], iu[1]] * scale


def vec_to_sym(x, n):
    x = np.asarray(x, dtype=float)
    iu = np.triu_indices(n)
    scale = np.where(iu[0] == iu[1], 1.0, SQRT2)
    out = np.zeros(x.shape[:-1] + (n, n))
    out[..., iu[0], iu[1]] = x / scale
    out[..., iu[1], iu[0]] = x / scale
    return out


# --------------------------------------------------------------------------
# manifold objects used by the feature / clustering layers


class Grassmann:
    """Gr(n, r) with batched helpers for whole point sequences."""

    kind = "grassmann"

    def __init__(self, n, r):
        if not 0 < r < n:
            raise ValueError(f"need 0 < r < n for Gr(n, r), got n={n}, r={r}")
        self.n = int(n)
        self.r = int(r)

    @property
    def point_shape(self):
        return (self.n, self.r)

    @property
    def tag(self):
        return f"Gr({self.n},{self.r})"

    @property
    def tangent_dim(self):
        """Length of the tangent coordinate vectors (flattened horizontal lift)."""
        return self.n * self.r

    def __eq__(self, other):
        return isinstance(other, Grassmann) and (self.n, self.r) == (other.n, other.r)

    def __repr__(self):
        return self.tag

    def check_point(self, u):
        if u.shape != self.point_shape:
            raise DimensionMismatchError(u.shape, self.point_shape)
        return check_grassmann(u)

    def dist(self, a, b):
        return grassmann_distance(a, b)

    def log(self, base, target):
        return grassmann_log(base, target)

    def exp(self, base, v):
        return grassmann_exp(base, v)

    def pairwise_distances(self, points):
        points = np.asarray(points, dtype=float)
        k = len(points)
        d = np.zeros((k, k))
        for i in range(k - 1):
            ang = _principal_angles_batch(points[i], points[i + 1:])
            d[i, i + 1:] = np.sqrt(np.sum(ang**2, axis=1))
        return d + d.T

    def log_coords(self, base, targets):
        """Tangent coordinates of ``log_base(target)`` for a stack of targets, shape (k, n*r)."""
        targets = np.asarray(targets, dtype=float)
        if len(targets) == 0:
            return np.zeros((0, self.tangent_dim))
        return _grassmann_log_batch(base, targets).reshape(len(targets), -1)

    def embed(self, points):
        """Projection-matrix embedding ``vec(U U^T)`` (isometric up to a constant)."""
        points = np.asarray(points, dtype=float)
        return np.einsum("kir,kjr->kij", points, points).reshape(len(points), -1)

    def random_point(self, rng):
        return orthonormalize(rng.standard_normal(self.point_shape))

    def random_tangent(self, base, rng, scale=1.0):
        v = rng.standard_normal(self.point_shape)
        v -= base @ (base.T @ v)
        return scale * v


class SPD:
    """PD(N) under the affine-invariant metric.

    Tangent coordinates at ``M`` are taken in the whitened frame,
    ``sym_to_vec(logm(M^-1/2 X M^-1/2))``, so their Euclidean norm equals the
    Riemannian norm of the tangent vector (and the geodesic distance).
    """

    kind = "spd"

    def __init__(self, n):
        if n < 1:
            raise ValueError("PD(N) needs N >= 1")
        self.n = int(n)

    @property
    def point_shape(self):
        return (self.n, self.n)

    @property
    def tag(self):
        return f"PD({self.n})"

    @property
    def tangent_dim(self):
        return self.n * (self.n + 1) // 2

    def __eq__(self, other):
        return isinstance(other, SPD) and self.n == other.n

    def __repr__(self):
        return self.tag

    def check_point(self, m):
        if m.shape != self.point_shape:
            raise DimensionMismatchError(m.shape, self.point_shape)
        return check_spd(m)

    def dist(self, a, b):
        return spd_distance(a, b)

    def log(self, base, target):
        return spd_log(base, target)

    def exp(self, base, v):
        return spd_exp(base, v)

    @staticmethod
    def _whitened_eigs(base, targets):
        _, bi = _sqrt_and_invsqrt(base)
        c = np.einsum("ij,kjl,lm->kim", bi, targets, bi)
        c = 0.5 * (c + np.transpose(c, (0, 2, 1)))
        return np.linalg.eigh(c)

    def pairwise_distances(self, points):
        points = np.asarray(points, dtype=float)
        k = len(points)
        d = np.zeros((k, k))
        for i in range(k - 1):
            _, bi = _sqrt_and_invsqrt(points[i])
            c = bi @ points[i + 1:] @ bi
            w = np.linalg.eigvalsh(0.5 * (c + np.transpose(c, (0, 2, 1))))
            if np.any(w <= 0):
                raise NotSPDError(w.min())
            d[i, i + 1:] = np.sqrt(np.sum(np.log(w) ** 2, axis=1))
        return d + d.T

    def log_coords(self, base, targets):
        targets = np.asarray(targets, dtype=float)
        if len(targets) == 0:
            return np.zeros((0, self.tangent_dim))
        w, v = self._whitened_eigs(base, targets)
        if np.any(w <= 0):
            raise NotSPDError(w.min())
        logs = np.einsum("kij,kj,klj->kil", v, np.log(w), v)
        return sym_to_vec(logs)

    def embed(self, points):
        return sym_to_vec(np.asarray(points, dtype=float))

    def random_point(self, rng, spread=1.0):
        a = rng.standard_normal(self.point_shape) * spread / np.sqrt(self.n)
        return _sym_fun(a + a.T, np.exp)

    def random_tangent(self, base, rng, scale=1.0):
        a = rng.standard_normal(self.point_shape)
        return scale * 0.5 * (a + a.T)


def manifold_from_tag(tag):
    """Parse ``"Gr(n,r)"`` or ``"PD(N)"`` back into a manifold object."""
    tag = tag.replace(" ", "")
    if tag.startswith("Gr(") and tag.endswith(")"):
        n, r = (int(x) for x in tag[3:-1].split(","))
        return Grassmann(n, r)
    if tag.startswith("PD(") and tag.endswith(")"):
        return SPD(int(tag[3:-1]))
    raise ValueError(f"unknown manifold tag {tag!r}")
