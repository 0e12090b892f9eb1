"""Synthetic network time series.

Two generators:

* :func:`gen_block_state_series`, a piecewise-stationary network in which
  nodes that share a task share a common signal, mixed with node-specific
  noise and a slowly varying AR(1) process, then passed through a
  hemodynamic filter;
* :func:`gen_wilson_cowan`, delay-coupled Wilson-Cowan excitatory/inhibitory
  oscillators integrated with Heun's method.

All randomness comes from ``numpy.random.Generator`` objects built from an
explicit seed.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import signal, stats
from scipy.special import expit

from .errors import ConfigurationError, DivergenceError

MAX_GROUPS = 3
# alpha, gamma_1..gamma_5, sigma^2
WC_DEFAULTS = (1 / 8, 16.0, 12.0, 15.0, 3.0, 1.1, 1e-10)
# (zeta, theta) pairs; the rate ceilings 0.9945 and 0.9994 equal
# 1 - 1/(1 + exp(zeta*theta)) for the excitatory and inhibitory pair respectively
EXCITATORY_SIGMOID = (1.3, 4.0)
INHIBITORY_SIGMOID = (2.0, 3.7)
SPEED_M_PER_S = 8.0


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# --------------------------------------------------------------------------
# block-state generator


@dataclass(frozen=True)
class StateSchedule:
    """Sequence of network states.

    Each state is ``(duration, groups)`` where ``groups[v]`` is the task index
    (0, 1 or 2) of node ``v`` during that state.
    """

    states: tuple
    n_nodes: int

    def __post_init__(self):
        states = tuple((int(d), tuple(int(g) for g in grp)) for d, grp in self.states)
        object.__setattr__(self, "states", states)
        for d, grp in states:
            if d < 1:
                raise ConfigurationError("state durations must be positive")
            if len(grp) != self.n_nodes:
                raise ConfigurationError(f"partition covers {len(grp)} nodes, expected {self.n_nodes}")
            if min(grp) < 0 or len(set(grp)) > MAX_GROUPS:
                raise ConfigurationError(f"each state allows at most {MAX_GROUPS} task groups")

    @property
    def length(self):
        return sum(d for d, _ in self.states)

    @property
    def n_states(self):
        return len(self.states)

    def labels(self):
        return np.concatenate([np.full(d, k) for k, (d, _) in enumerate(self.states)])

    def to_dict(self):
        return {"n_nodes": self.n_nodes,
                "states": [{"duration": d, "groups": list(g)} for d, g in self.states]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple((s["duration"], s["groups"]) for s in d["states"]), d["n_nodes"])


DEFAULT_PARTITIONS = (
    (0, 0, 0, 1, 1, 1, 2, 2, 2, 2),
    (0, 1, 2, 0, 1, 2, 0, 1, 2, 0),
    (0, 0, 0, 0, 0, 1, 1, 1, 1, 1),
    (0, 0, 1, 1, 2, 2, 2, 0, 0, 1),
)


def default_schedule(duration=500, n_nodes=10):
    """Four states over ten nodes, each with its own task partition."""
    if n_nodes != 10:
        rng = np.random.default_rng(n_nodes)
        parts = [tuple(int(x) for x in rng.integers(0, 3, n_nodes)) for _ in range(4)]
    else:
        parts = DEFAULT_PARTITIONS
    return StateSchedule(tuple((duration, p) for p in parts), n_nodes)


def ar_phase_series(length, n_nodes, theta0, dtheta, rng):
    """Per-node AR(1) with coefficient ``cos(theta_t)``, ``theta_t = theta0 + t*dtheta``.

    ``y_t = cos(theta_t) y_{t-1} + sqrt(1 - cos^2 theta_t) v_t`` started from a
    standard normal draw, so each sample has unit variance.
    """
    c = np.cos(theta0 + dtheta * np.arange(1, length + 1))
    s = np.sqrt(np.clip(1.0 - c ** 2, 0.0, None))
    v = rng.standard_normal((n_nodes, length))
    y = np.empty((n_nodes, length))
    prev = rng.standard_normal(n_nodes)
    for t in range(length):
        prev = c[t] * prev + s[t] * v[:, t]
        y[:, t] = prev
    return y


def block_state_components(schedule, theta0=0.0, dtheta=None, seed=0):
    """Unmixed ingredients of :func:`gen_block_state_series`.

    Returns a dict with ``task`` (each node's copy of its group signal),
    ``unique``, ``ar`` (all ``N_G x T``) and ``labels``.
    """
    rng = _rng(seed)
    n, length = schedule.n_nodes, schedule.length
    if dtheta is None:
        dtheta = 2.0 * np.pi / length
    task = np.empty((n, length))
    start = 0
    for dur, groups in schedule.states:
        sig = rng.standard_normal((MAX_GROUPS, dur))
        task[:, start:start + dur] = sig[np.asarray(groups)]
        start += dur
    unique = rng.standard_normal((n, length))
    ar = ar_phase_series(length, n, theta0, dtheta, rng)
    return {"task": task, "unique": unique, "ar": ar, "labels": schedule.labels()}


def double_gamma_hrf(tr=2.0, length_s=32.0, peak=6.0, undershoot=16.0, ratio=1 / 6):
    """Canonical double-gamma hemodynamic response sampled every ``tr`` seconds, unit sum."""
    t = np.arange(0.0, length_s + 1e-9, tr)
    h = stats.gamma.pdf(t, peak) - ratio * stats.gamma.pdf(t, undershoot)
    return h / h.sum()


def hrf_filter(y, hrf="double-gamma", tr=2.0):
    if hrf == "none":
        return np.array(y, dtype=float)
    if hrf != "double-gamma":
        raise ConfigurationError(f"unknown hrf {hrf!r}; choose 'double-gamma' or 'none'")
    return signal.lfilter(double_gamma_hrf(tr), [1.0], y, axis=1)


def gen_block_state_series(schedule, dtheta=None, theta0=0.0, weights=(0.6, 0.2, 0.2), seed=0,
                           hrf="double-gamma", tr=2.0):
    """Block-state network series and the per-sample state labels.

    Each node mixes its task signal, a node-specific white signal and its own
    AR process with ``weights``, and the mix is filtered by the hemodynamic
    response (``hrf="none"`` skips it).

    Returns
    -------
    y : ndarray, shape (N_G, T)
    labels : ndarray, shape (T,)
    """
    if len(weights) != 3:
        raise ConfigurationError("weights must have three entries (task, unique, AR)")
    comp = block_state_components(schedule, theta0, dtheta, seed)
    a, b, c = weights
    mix = a * comp["task"] + b * comp["unique"] + c * comp["ar"]
    return hrf_filter(mix, hrf, tr), comp["labels"]


# --------------------------------------------------------------------------
# noise


def add_noise_snr(y, snr_db, seed=0):
    """Add white Gaussian noise at an exact mean-square signal-to-noise ratio.

    The realized noise is rescaled so ``10 log10(mean(y^2) / mean(n^2))``
    equals ``snr_db``. ``snr_db=inf`` returns a copy of ``y``.
    """
    y = np.asarray(y, dtype=float)
    if np.isinf(snr_db) and snr_db > 0:
        return y.copy()
    p_sig = np.mean(y ** 2)
    if p_sig == 0:
        raise ValueError("cannot set an SNR for a zero-power signal")
    noise = _rng(seed).standard_normal(y.shape)
    noise *= np.sqrt(p_sig / 10.0 ** (snr_db / 10.0) / np.mean(noise ** 2))
    return y + noise


def measured_snr_db(clean, noisy):
    clean = np.asarray(clean, dtype=float)
    return 10.0 * np.log10(np.mean(clean ** 2) / np.mean((np.asarray(noisy) - clean) ** 2))


# --------------------------------------------------------------------------
# Wilson-Cowan network


def sigmoid(q, zeta, theta):
    """Shifted logistic with ``sigmoid(0) = 0``."""
    return expit(zeta * (q - theta)) - expit(-zeta * theta)


def delays_from_distances(distances_mm, speed=SPEED_M_PER_S, dt=1e-3):
    """Conduction delays in samples: ``round(distance / speed / dt)``."""
    d = np.asarray(distances_mm, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    return np.rint(d * 1e-3 / speed / dt).astype(int)


def validate_adjacency(b, tol=1e-8):
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {b.shape}")
    if np.any(b < 0):
        raise ValueError("adjacency has negative weights")
    if np.max(np.abs(b - b.T), initial=0.0) > tol:
        raise ValueError("adjacency is not symmetric")
    return 0.5 * (b + b.T)


def load_adjacency(path, distances=None, delays=None, speed=SPEED_M_PER_S, dt=1e-3):
    """Read a weighted adjacency CSV and derive integer delays.

    ``distances`` (CSV path or array, millimetres) is converted with ``speed``
    and ``dt``; ``delays`` (samples) is taken as is. Without either, all
    delays are zero.
    """
    b = validate_adjacency(np.loadtxt(path, delimiter=",", ndmin=2))
    n = len(b)
    if distances is not None:
        dist = np.loadtxt(distances, delimiter=",", ndmin=2) if isinstance(distances, str) else distances
        d = delays_from_distances(dist, speed, dt)
    elif delays is not None:
        d = np.loadtxt(delays, delimiter=",", ndmin=2) if isinstance(delays, str) else delays
        d = np.asarray(d)
        if np.any(d < 0) or np.any(d != np.rint(d)):
            raise ValueError("delays must be nonnegative integers")
        d = d.astype(int)
    else:
        d = np.zeros((n, n), dtype=int)
    if d.shape != b.shape:
        raise ValueError(f"delay matrix shape {d.shape} does not match adjacency {b.shape}")
    return b, d


def community_network(n_nodes, n_communities, rng, p_in=0.8, p_out=0.05, extent_mm=120.0,
                      spread_mm=15.0, scale=1.0):
    """Random modular adjacency with node coordinates.

    Nodes are split into contiguous communities; within-community links
    appear with probability ``p_in`` and cross links with ``p_out``, weights
    uniform in [0.5, 1]. Weights are scaled so the largest weighted degree
    is ``scale``.
    Communities sit at random centres in a cube of side ``extent_mm``.

    Returns
    -------
    b : ndarray (N, N)
    distances_mm : ndarray (N, N)
    """
    rng = _rng(rng)
    comm = np.repeat(np.arange(n_communities), int(np.ceil(n_nodes / n_communities)))[:n_nodes]
    same = comm[:, None] == comm[None, :]
    prob = np.where(same, p_in, p_out)
    link = np.triu(rng.random((n_nodes, n_nodes)) < prob, 1)
    w = np.triu(rng.uniform(0.5, 1.0, (n_nodes, n_nodes)), 1) * link
    b = w + w.T
    deg = b.sum(axis=1).max()
    if deg > 0:
        b *= scale / deg
    centres = rng.uniform(0.0, extent_mm, (n_communities, 3))
    xyz = centres[comm] + spread_mm * rng.standard_normal((n_nodes, 3))
    dist = np.linalg.norm(xyz[:, None, :] - xyz[None, :, :], axis=2)
    return b, dist


@dataclass
class WilsonCowanParams:
    """Parameters of the delay-coupled Wilson-Cowan network.

    ``y`` is the excitatory and ``x`` the inhibitory rate. Time constants are
    expressed in milliseconds, so a sample step ``dt`` in seconds advances the
    model clock by ``dt / time_unit``. With the default sigmoids and zero
    coupling a node driven by ``mu = 1.25`` settles on a limit cycle.
    """

    b: np.ndarray
    d: np.ndarray | None = None
    mu: np.ndarray | None = None
    alpha: float = WC_DEFAULTS[0]
    gammas: tuple = WC_DEFAULTS[1:6]
    sigma2: float = WC_DEFAULTS[6]
    zeta_x: float = INHIBITORY_SIGMOID[0]
    theta_x: float = INHIBITORY_SIGMOID[1]
    zeta_y: float = EXCITATORY_SIGMOID[0]
    theta_y: float = EXCITATORY_SIGMOID[1]
    dt: float = 1e-3
    time_unit: float = 1e-3
    x0: float = 0.1
    y0: float = 0.1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.b = validate_adjacency(self.b)
        n = len(self.b)
        self.d = np.zeros((n, n), dtype=int) if self.d is None else np.asarray(self.d)
        if self.d.shape != (n, n) or np.any(self.d < 0) or np.any(self.d != np.rint(self.d)):
            raise ValueError("delays must be an N x N matrix of nonnegative integers")
        self.d = self.d.astype(int)
        if self.mu is None:
            self.mu = np.zeros(n)
            self.mu[0] = 1.25
        self.mu = np.asarray(self.mu, dtype=float)
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")

    @property
    def n_nodes(self):
        return len(self.b)


def gen_wilson_cowan(params, n_samples, seed=0, return_inhibitory=False):
    """Integrate the network with Heun's method and return excitatory rates.

    Delayed coupling terms read a history buffer that holds the initial
    value before time 0. The noise increment ``sqrt(h) sigma xi`` is drawn
    once per step and shared by predictor and corrector.

    Returns
    -------
    y : ndarray, shape (N_G, n_samples)
        Excitatory rates at steps ``0 .. n_samples-1`` (step 0 is the initial state).
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be at least 1")
    p = params
    rng = _rng(seed)
    n = p.n_nodes
    h = p.dt / p.time_unit
    g1, g2, g3, g4, g5 = p.gammas
    sig = np.sqrt(p.sigma2 * h)
    dmax = int(p.d.max(initial=0))
    hist = np.empty((dmax + n_samples + 1, n))
    hist[: dmax + 1] = p.y0
    cols = np.arange(n)[None, :]
    bz = p.b != 0

    def delayed(step, y_now):
        # y_{v'}(step - d_{vv'}); d = 0 reads the supplied current state
        idx = dmax + step - p.d
        vals = hist[idx, np.broadcast_to(cols, p.d.shape)]
        zero = p.d == 0
        if zero.any():
            vals = np.where(zero, y_now[None, :], vals)
        return np.sum(np.where(bz, p.b * vals, 0.0), axis=1)

    def rhs(y, x, coup):
        dy = -p.alpha * y + (0.9945 - y) / 8.0 * sigmoid(g1 * y - g2 * x + g5 * coup + p.mu,
                                                         p.zeta_y, p.theta_y)
        dx = -p.alpha * x + (0.9994 - x) / 8.0 * sigmoid(g3 * y - g4 * x, p.zeta_x, p.theta_x)
        return dy, dx

    y = np.full(n, p.y0, dtype=float)
    x = np.full(n, p.x0, dtype=float)
    out_y = np.empty((n, n_samples))
    out_x = np.empty((n, n_samples)) if return_inhibitory else None
    for k in range(n_samples):
        out_y[:, k] = y
        if return_inhibitory:
            out_x[:, k] = x
        if k == n_samples - 1:
            break
        hist[dmax + k] = y
        ny, nx = sig * rng.standard_normal(n), sig * rng.standard_normal(n)
        dy, dx = rhs(y, x, delayed(k, y))
        yp, xp = y + h * dy + ny, x + h * dx + nx
        dy2, dx2 = rhs(yp, xp, delayed(k + 1, yp))
        y = y + 0.5 * h * (dy + dy2) + ny
        x = x + 0.5 * h * (dx + dx2) + nx
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise DivergenceError(k + 1)
    return (out_y, out_x) if return_inhibitory else out_y


def wilson_cowan_segments(y, n_initial=500, n_oscillation=500):
    """First ``n_initial`` samples joined with the last ``n_oscillation`` samples."""
    y = np.asarray(y)
    if y.shape[1] < n_initial + n_oscillation:
        raise ConfigurationError("simulation shorter than the requested segments")
    return np.concatenate([y[:, :n_initial], y[:, y.shape[1] - n_oscillation:]], axis=1)
