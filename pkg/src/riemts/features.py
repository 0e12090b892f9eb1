"""Sliding-window feature extraction.

Two families of features are produced from an ``N_G x T`` series:

* observability subspaces of a low-order state-space (ARMA) fit, as points of
  Gr(m N_G, p rho), see :func:`extract_grassmann_sequence`;
* kernel partial-correlation matrices and their relatives (``kPC``, ``Cov``,
  ``ICov``, ``Corr``) as points of PD(N_G), see :func:`extract_spd_sequence`.

Window start indices are 0-based: window ``t`` covers columns ``t .. t+tau_w-1``.
"""

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConfigurationError, RankDeficiencyError, SingularKernelError
from .kernels import KernelMatrix, diagonal_load, kernel_matrix
from .manifolds import SPD, Grassmann, manifold_from_tag

SPD_VARIANTS = ("kPC", "Cov", "ICov", "Corr")
PINV_RCOND = 1e-10
GAP_WARN = 1e-6


@dataclass(frozen=True)
class WindowConfig:
    """Window and ARMA parameters for observability features.

    ``tau_f=None`` uses every sample of the window,
    ``tau_f = tau_w - tau_b - m + 1``.
    """

    tau_w: int = 80
    m: int = 3
    p: int = 1
    rho: int = 3
    tau_f: int | None = 20
    tau_b: int = 20

    @property
    def order(self):
        return self.p * self.rho

    @property
    def forward(self):
        if self.tau_f is None:
            return self.tau_w - self.tau_b - self.m + 1
        return self.tau_f

    def validate(self, n_nodes=None):
        for name in ("tau_w", "m", "p", "rho", "tau_b"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.forward < 1:
            raise ConfigurationError(
                f"window too short: tau_w={self.tau_w} leaves no forward columns "
                f"(need tau_w >= tau_f + tau_b + m - 1)"
            )
        need = self.forward + self.tau_b + self.m - 1
        if self.tau_w < need:
            raise ConfigurationError(
                f"window too short: tau_w={self.tau_w} < tau_f + tau_b + m - 1 = {need}"
            )
        if n_nodes is not None:
            bound = min(self.m * n_nodes - 1, self.tau_b * n_nodes, self.forward)
            if self.order > bound:
                raise ConfigurationError(
                    f"p*rho={self.order} exceeds the attainable rank {bound} for N_G={n_nodes}"
                )
        return self

    def to_dict(self):
        return {"tau_w": self.tau_w, "m": self.m, "p": self.p, "rho": self.rho,
                "tau_f": self.tau_f, "tau_b": self.tau_b}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("tau_w", "m", "p", "rho", "tau_f", "tau_b") if k in d})


@dataclass
class FeatureSequence:
    """Ordered manifold points with window starts and optional ground truth."""

    points: np.ndarray
    manifold: object
    window_starts: np.ndarray
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.window_starts = np.asarray(self.window_starts, dtype=int)
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if len(self.labels) != len(self.points):
                raise ValueError("labels and points differ in length")
        if self.points.shape[1:] != self.manifold.point_shape:
            raise ValueError(
                f"points of shape {self.points.shape[1:]} do not live on {self.manifold.tag}"
            )

    def __len__(self):
        return len(self.points)

    @property
    def manifold_tag(self):
        return self.manifold.tag

    def subset(self, idx):
        idx = np.asarray(idx)
        return FeatureSequence(self.points[idx], self.manifold, self.window_starts[idx],
                               None if self.labels is None else self.labels[idx], dict(self.meta))

    def save(self, path):
        """Write one CSV per point plus ``manifest.json``."""
        os.makedirs(path, exist_ok=True)
        files = []
        for k, x in enumerate(self.points):
            name = f"point_{k:05d}.csv"
            np.savetxt(os.path.join(path, name), x, delimiter=",", fmt="%.17g")
            files.append(name)
        manifest = {
            "manifold": self.manifold.tag,
            "shape": list(self.manifold.point_shape),
            "count": len(self),
            "window_starts": self.window_starts.tolist(),
            "labels": None if self.labels is None else self.labels.tolist(),
            "files": files,
            "meta": self.meta,
        }
        with open(os.path.join(path, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(os.path.join(path, "manifest.json")) as fh:
            manifest = json.load(fh)
        manifold = manifold_from_tag(manifest["manifold"])
        shape = tuple(manifest["shape"])
        pts = np.array([
            np.loadtxt(os.path.join(path, f), delimiter=",", ndmin=2).reshape(shape)
            for f in manifest["files"]
        ]).reshape((-1,) + shape)
        labels = manifest["labels"]
        return cls(pts, manifold, manifest["window_starts"],
                   None if labels is None else np.asarray(labels), manifest.get("meta", {}))


def concatenate(sequences):
    """Join sequences that live on the same manifold (e.g. one per subject)."""
    sequences = list(sequences)
    man = sequences[0].manifold
    if any(s.manifold != man for s in sequences):
        raise ValueError("cannot concatenate sequences from different manifolds")
    labels = None
    if all(s.labels is not None for s in sequences):
        labels = np.concatenate([s.labels for s in sequences])
    return FeatureSequence(
        np.concatenate([s.points for s in sequences]),
        man,
        np.concatenate([s.window_starts for s in sequences]),
        labels,
        {"segments": [len(s) for s in sequences]},
    )


def window_labels(labels, tau_w, step=1):
    """Majority label of each window; ties go to the label seen first in the window."""
    labels = np.asarray(labels)
    values, codes = np.unique(labels, return_inverse=True)
    n_win = len(labels) - tau_w + 1
    out = []
    for t in range(0, n_win, step):
        w = codes[t:t + tau_w]
        counts = np.bincount(w, minlength=len(values))
        best = counts.max()
        winners = set(np.flatnonzero(counts == best))
        first = next(c for c in w if c in winners)
        out.append(values[first])
    return np.asarray(out)


def _windows(n_samples, tau_w, step):
    if n_samples < tau_w:
        raise ConfigurationError(f"series of length {n_samples} is shorter than the window {tau_w}")
    return np.arange(0, n_samples - tau_w + 1, step)


# --------------------------------------------------------------------------
# observability subspaces


def center_series(y):
    """Remove each node's mean over the whole series."""
    y = np.asarray(y, dtype=float)
    return y - y.mean(axis=1, keepdims=True)


def build_forward_backward(yt, cfg):
    """Stacked forward and backward Hankel-type matrices of one window.

    With ``tau = tau_b`` (0-based within the window), column ``j`` of the
    forward matrix stacks ``y[tau+j], ..., y[tau+j+m-1]`` and column ``j`` of
    the backward matrix stacks ``y[tau+j-1], y[tau+j-2], ..., y[tau+j-tau_b]``.

    Returns
    -------
    yf : ndarray, shape (m*N_G, tau_f)
    yb : ndarray, shape (tau_b*N_G, tau_f)
    """
    yt = np.atleast_2d(np.asarray(yt, dtype=float))
    n, length = yt.shape
    cfg.validate()
    tau_f, tau_b, m = cfg.forward, cfg.tau_b, cfg.m
    need = tau_f + tau_b + m - 1
    if length < need:
        raise ConfigurationError(
            f"window too short: {length} samples < tau_f + tau_b + m - 1 = {need}"
        )
    j = np.arange(tau_f)
    fwd_idx = tau_b + j[None, :] + np.arange(m)[:, None]          # (m, tau_f)
    bwd_idx = tau_b - 1 + j[None, :] - np.arange(tau_b)[:, None]  # (tau_b, tau_f)
    yf = yt[:, fwd_idx].transpose(1, 0, 2).reshape(m * n, tau_f)
    yb = yt[:, bwd_idx].transpose(1, 0, 2).reshape(tau_b * n, tau_f)
    return yf, yb


def fix_signs(u):
    """Flip columns so each one's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(u), axis=0)
    s = np.sign(u[idx, np.arange(u.shape[1])])
    s[s == 0] = 1.0
    return u * s


def estimate_observability(yt, cfg, window=None, return_spectrum=False):
    """Orthonormal basis of the estimated observability column space.

    Takes the leading ``p*rho`` left singular vectors of
    ``(1/tau_f) Yf Yb^T`` (best rank-``p*rho`` approximation).
    """
    yf, yb = build_forward_backward(yt, cfg)
    h = yf @ yb.T / cfg.forward
    u, s, _ = np.linalg.svd(h, full_matrices=False)
    k = cfg.order
    rank = int(np.sum(s > PINV_RCOND * s[0])) if s.size and s[0] > 0 else 0
    if rank < k:
        raise RankDeficiencyError(k, s, window)
    if k < len(s) and (s[k - 1] - s[k]) <= GAP_WARN * s[0]:
        warnings.warn(
            f"ill-conditioned subspace cut: singular values {s[k - 1]:.6g} and {s[k]:.6g} "
            f"(gap {s[k - 1] - s[k]:.3g}) at order {k}",
            RuntimeWarning, stacklevel=2,
        )
    basis = fix_signs(u[:, :k])
    return (basis, s) if return_spectrum else basis


def extract_grassmann_sequence(y, cfg, labels=None, step=1):
    """One observability subspace per window start; points in Gr(m N_G, p rho)."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n, length = y.shape
    cfg.validate(n)
    starts = _windows(length, cfg.tau_w, step)
    pts = np.empty((len(starts), cfg.m * n, cfg.order))
    for k, t in enumerate(starts):
        pts[k] = estimate_observability(y[:, t:t + cfg.tau_w], cfg, window=int(t))
    lab = None if labels is None else window_labels(labels, cfg.tau_w, step)
    return FeatureSequence(pts, Grassmann(cfg.m * n, cfg.order), starts, lab,
                           {"feature": "OB", "window": cfg.to_dict()})


# --------------------------------------------------------------------------
# kernel partial correlations


def _as_array(k):
    return k.matrix if isinstance(k, KernelMatrix) else np.asarray(k, dtype=float)


def kpc_matrix(k):
    """The PD matrix ``diag(K^-1)^-1/2 K^-1 diag(K^-1)^-1/2``.

    Off-diagonal entry ``(i, j)`` equals minus the kernel partial correlation
    of nodes ``i`` and ``j``; the diagonal is one.

    Raises
    ------
    SingularKernelError
        If ``K`` is not positive definite. Load it with
        :func:`~riemts.kernels.diagonal_load` first; nothing is loaded here.
    """
    k = _as_array(k)
    try:
        c = linalg.cho_factor(k, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularKernelError("kernel matrix is singular; apply diagonal loading first") from exc
    kinv = linalg.cho_solve(c, np.eye(len(k)))
    kinv = 0.5 * (kinv + kinv.T)
    d = 1.0 / np.sqrt(np.diag(kinv))
    g = kinv * d[:, None] * d[None, :]
    g = 0.5 * (g + g.T)
    np.fill_diagonal(g, 1.0)
    return g


def kpc_from_matrix(gamma):
    """Kernel partial correlations from a ``kpc_matrix`` output (zero diagonal)."""
    out = -np.asarray(gamma, dtype=float).copy()
    np.fill_diagonal(out, 0.0)
    return out


def kpc_schur(k, i, j, rcond=PINV_RCOND):
    """Kernel partial correlation of nodes ``i, j`` via the generalized Schur complement.

    Works for singular ``K`` (pseudoinverse of the conditioning block). If
    either residual norm vanishes the partial correlation is 0.
    """
    k = _as_array(k)
    n = len(k)
    if i == j:
        raise ValueError("kpc_schur needs two distinct nodes")
    pair = [i, j]
    rest = [v for v in range(n) if v not in pair]
    s = k[np.ix_(pair, pair)].copy()
    if rest:
        b = k[np.ix_(pair, rest)]
        s -= b @ np.linalg.pinv(k[np.ix_(rest, rest)], rcond=rcond, hermitian=True) @ b.T
    scale = max(abs(k[i, i]), abs(k[j, j]), np.finfo(float).tiny)
    if s[0, 0] <= rcond * scale or s[1, 1] <= rcond * scale:
        return 0.0
    val = 0.5 * (s[0, 1] + s[1, 0]) / np.sqrt(s[0, 0] * s[1, 1])
    return float(np.clip(val, -1.0, 1.0))


def partial_correlation(rows, i, j, rcond=PINV_RCOND):
    """Sample partial correlation of rows ``i, j`` from explicit LS residuals."""
    rows = np.asarray(rows, dtype=float)
    rest = np.delete(rows, [i, j], axis=0)
    if len(rest):
        proj = np.linalg.pinv(rest, rcond=rcond) @ rest
        ri = rows[i] - rows[i] @ proj
        rj = rows[j] - rows[j] @ proj
    else:
        ri, rj = rows[i], rows[j]
    ni, nj = np.linalg.norm(ri), np.linalg.norm(rj)
    if ni == 0 or nj == 0:
        return 0.0
    return float(ri @ rj / (ni * nj))


def spd_feature(window, centered_window, spec, variant, rel_eps=1e-6, threshold=1e-10):
    """The PD feature of one window for a given variant."""
    if variant == "Corr":
        km = diagonal_load(kernel_matrix(spec, window), rel_eps, threshold)
        return km.matrix, km
    km = diagonal_load(kernel_matrix(spec, centered_window), rel_eps, threshold)
    if variant == "Cov":
        return km.matrix, km
    if variant == "ICov":
        inv = linalg.cho_solve(linalg.cho_factor(km.matrix, lower=True), np.eye(km.n))
        return 0.5 * (inv + inv.T), km
    if variant == "kPC":
        return kpc_matrix(km), km
    raise ConfigurationError(f"unknown SPD variant {variant!r}; choose from {SPD_VARIANTS}")


def extract_spd_sequence(y, spec, variant, tau_w, labels=None, step=1, rel_eps=1e-6,
                         threshold=1e-10):
    """PD(N_G) features per window.

    The series is centered once over all samples; each window's rows feed the
    kernel, which is diagonally loaded when singular. ``Corr`` uses the
    uncentered rows instead.
    """
    if variant not in SPD_VARIANTS:
        raise ConfigurationError(f"unknown SPD variant {variant!r}; choose from {SPD_VARIANTS}")
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n, length = y.shape
    yc = center_series(y)
    starts = _windows(length, tau_w, step)
    pts = np.empty((len(starts), n, n))
    loaded = 0
    for k, t in enumerate(starts):
        sl = slice(t, t + tau_w)
        pts[k], km = spd_feature(y[:, sl], yc[:, sl], spec, variant, rel_eps, threshold)
        loaded += km.loaded
    lab = None if labels is None else window_labels(labels, tau_w, step)
    return FeatureSequence(pts, SPD(n), starts, lab,
                           {"feature": variant, "kernel": spec.to_dict(), "tau_w": tau_w,
                            "loaded_windows": loaded})
