"""Fixed-point (belief propagation) solver for the chain dual.

The stationarity conditions of the shield-local free energy on a chain turn
into message equations between neighboring clusters: with Lambda_k the
exponential of minus the cluster Hamiltonian (over T), and odot the log-space
product,

    m_{k -> k-1}  prop  Tr_last(Lambda_k o m_{k+1->k} o m_{k-1->k}) o m_{k-1->k}^{-1}
    m_{k -> k+1}  prop  Tr_first(Lambda_k o m_{k+1->k} o m_{k-1->k}) o m_{k+1->k}^{-1}
    rho_k         prop  Lambda_k o m_{k+1->k} o m_{k-1->k}

The inverse factors are retained; they only drop out when partial trace and
the log-space product commute (classical case). `BPConfig.retain_inverse`
can disable them to reproduce the cancellation some earlier treatments
assumed, which shifts the fixed point on non-commuting chains.

Messages are positive definite operators on the n-site overlaps, normalized
to unit trace after every update (normalization absorbs the scalar
multipliers). Damping is a convex combination in log space, which preserves
positivity exactly. Open chains use identity messages beyond both ends.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from medbound.lattice import LatticeSpec, ModelSpec, build_lattice, ti_chain_geometry
from medbound.opalg import (
    EIG_FLOOR,
    embed_mat,
    entropy_mat,
    logm_psd,
    ptrace_mat,
    sym,
    trace_product,
)

__all__ = [
    "BPConfig",
    "Message",
    "BPState",
    "BPProblem",
    "bp_ti_problem",
    "bp_chain_problem",
    "bp_update",
    "bp_fixed_point",
    "beliefs_from_messages",
    "belief_consistency",
    "bp_free_energy",
]


@dataclass(frozen=True)
class BPConfig:
    damping: float = 0.5            # log-space step toward the new message
    tol_residual: float = 1e-8
    max_iters: int = 10000
    retain_inverse: bool = True

    def __post_init__(self):
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must be in (0, 1]")
        if self.tol_residual <= 0 or self.max_iters < 1:
            raise ValueError("bad tolerance or iteration limit")


@dataclass(frozen=True)
class Message:
    direction: str      # "left" | "right"
    sites: tuple
    mat: np.ndarray = field(repr=False)


@dataclass(eq=False)
class BPState:
    messages: dict
    residual: float
    iterations: int
    converged: bool
    meta: dict = field(default_factory=dict)


@dataclass(eq=False)
class BPProblem:
    kind: str            # "ti" | "chain"
    n: int
    T: float
    log_lambda: dict     # cluster key -> -H_k / T
    clusters: dict       # cluster key -> site labels
    meta: dict = field(default_factory=dict)

    @property
    def cluster_keys(self):
        return sorted(self.clusters) if self.kind == "chain" else ["ti"]


def bp_ti_problem(model: ModelSpec, n: int, T: float) -> BPProblem:
    """Translation-invariant chain with an n-site window (cluster of n+1)."""
    if T <= 0:
        raise ValueError("temperature must be positive")
    geo = ti_chain_geometry(model, int(n))
    return BPProblem(kind="ti", n=int(n), T=T,
                     log_lambda={"ti": -geo.ham / T},
                     clusters={"ti": geo.labels},
                     meta={"model": model, "schedule": "jacobi"})


def bp_chain_problem(spec: LatticeSpec, model: ModelSpec, n: int, T: float) -> BPProblem:
    """Finite open chain: clusters are the length-(n+1) windows; terms that
    end before the first full window are folded into the first cluster."""
    if spec.kind != "chain" or spec.boundary != "open":
        raise ValueError("the dual solver runs on finite open chains (or ti)")
    if T <= 0:
        raise ValueError("temperature must be positive")
    terms, sites = build_lattice(spec, model)
    n = int(n)
    n_sites = len(sites)
    if n < 1 or n + 1 > n_sites:
        raise ValueError("window must satisfy 1 <= n <= N-1")
    clusters = {k: tuple(range(k - n, k + 1)) for k in range(n, n_sites)}
    log_lambda = {}
    for k, labels in clusters.items():
        idx = {s: i for i, s in enumerate(labels)}
        dims = (2,) * len(labels)
        ham = np.zeros((2 ** len(labels), 2 ** len(labels)))
        for t in terms:
            top = max(t.support)
            target = max(top, n)
            if target != k:
                continue
            ham = ham + embed_mat(t.mat, dims, tuple(idx[s] for s in t.support))
        log_lambda[k] = -sym(ham) / T
    return BPProblem(kind="chain", n=n, T=T, log_lambda=log_lambda,
                     clusters=clusters,
                     meta={"model": model, "schedule": "forward-backward sweep"})


# ---------------------------------------------------------------------------
# message algebra
# ---------------------------------------------------------------------------

def _normalize(mat: np.ndarray) -> np.ndarray:
    return sym(mat) / float(np.real(np.trace(mat)))


def _identity_message(dim: int) -> np.ndarray:
    return np.eye(dim) / dim


def _cluster_state_log(problem, key, m_right_in, m_left_in):
    """log of the unnormalized belief: log Lambda + embedded message logs."""
    n = problem.n
    dims = (2,) * (n + 1)
    first = tuple(range(n))
    last = tuple(range(1, n + 1))
    log_rho = np.array(problem.log_lambda[key])
    if m_right_in is not None:
        log_rho = log_rho + embed_mat(logm_psd(m_right_in, EIG_FLOOR), dims, first)
    if m_left_in is not None:
        log_rho = log_rho + embed_mat(logm_psd(m_left_in, EIG_FLOOR), dims, last)
    return sym(log_rho)


def _normalized_exp(log_mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(sym(log_mat))
    w = np.exp(vals - vals[-1])
    return sym((vecs * (w / w.sum())) @ vecs.conj().T)


def _outgoing(problem, key, m_right_in, m_left_in, retain_inverse):
    """Both outgoing messages of one cluster from its incoming pair."""
    n = problem.n
    dims = (2,) * (n + 1)
    first = tuple(range(n))
    last = tuple(range(1, n + 1))
    if retain_inverse:
        rho = _normalized_exp(_cluster_state_log(problem, key, m_right_in, m_left_in))
        marg_first = ptrace_mat(rho, dims, first)
        marg_last = ptrace_mat(rho, dims, last)
        log_left = logm_psd(marg_first, EIG_FLOOR)
        if m_right_in is not None:
            log_left = log_left - logm_psd(m_right_in, EIG_FLOOR)
        log_right = logm_psd(marg_last, EIG_FLOOR)
        if m_left_in is not None:
            log_right = log_right - logm_psd(m_left_in, EIG_FLOOR)
        out_left = _normalized_exp(log_left)
        out_right = _normalized_exp(log_right)
    else:
        # the cancellation assumed when partial trace and the log-space
        # product are treated as commuting: each outgoing message sees only
        # the message arriving from the opposite side
        rho_l = _normalized_exp(_cluster_state_log(problem, key, None, m_left_in))
        rho_r = _normalized_exp(_cluster_state_log(problem, key, m_right_in, None))
        out_left = _normalize(ptrace_mat(rho_l, dims, first))
        out_right = _normalize(ptrace_mat(rho_r, dims, last))
    return out_left, out_right


def _incoming(problem, messages, key):
    """(from-left right-moving, from-right left-moving) or None at the ends."""
    if problem.kind == "ti":
        return messages["R"], messages["L"]
    keys = problem.cluster_keys
    m_right_in = messages[("R", key - 1)] if key > keys[0] else None
    m_left_in = messages[("L", key + 1)] if key < keys[-1] else None
    return m_right_in, m_left_in


def bp_update(k, state: BPState, problem: BPProblem,
              config: BPConfig | None = None) -> dict:
    """Outgoing messages of cluster k given the current state (undamped)."""
    config = config or BPConfig()
    m_right_in, m_left_in = _incoming(problem, state.messages, k)
    for m in (m_right_in, m_left_in):
        if m is not None and np.linalg.eigvalsh(sym(m))[0] <= 0.0:
            raise ValueError("incoming message is singular")
    out_left, out_right = _outgoing(problem, k, m_right_in, m_left_in,
                                    config.retain_inverse)
    if problem.kind == "ti":
        return {"L": out_left, "R": out_right}
    return {("L", k): out_left, ("R", k): out_right}


def _damp(old: np.ndarray, new: np.ndarray, alpha: float) -> np.ndarray:
    if alpha >= 1.0:
        return _normalize(new)
    log_mix = (1.0 - alpha) * logm_psd(old, EIG_FLOOR) + alpha * logm_psd(new, EIG_FLOOR)
    return _normalized_exp(log_mix)


def _trace_distance_mat(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.linalg.eigvalsh(sym(a - b))).sum())


def bp_fixed_point(problem: BPProblem, config: BPConfig | None = None) -> BPState:
    """Iterate the message equations to a fixed point.

    Finite chains sweep forward (right-moving messages) then backward
    (left-moving); the translation-invariant pair is updated jointly.
    The residual is the largest trace-distance change per full round.
    """
    config = config or BPConfig()
    dim = 2 ** problem.n
    if problem.kind == "ti":
        messages = {"L": _identity_message(dim), "R": _identity_message(dim)}
    else:
        # keyed by sender: ('R', k) goes k -> k+1, ('L', k) goes k -> k-1
        keys = problem.cluster_keys
        messages = {}
        for k in keys[:-1]:
            messages[("R", k)] = _identity_message(dim)
        for k in keys[1:]:
            messages[("L", k)] = _identity_message(dim)

    state = BPState(messages=messages, residual=math.inf, iterations=0,
                    converged=False, meta={"schedule": problem.meta.get("schedule")})
    for it in range(1, config.max_iters + 1):
        residual = 0.0
        if problem.kind == "ti":
            new = bp_update("ti", state, problem, config)
            for name in ("L", "R"):
                mixed = _damp(state.messages[name], new[name], config.damping)
                residual = max(residual, _trace_distance_mat(mixed, state.messages[name]))
                state.messages[name] = mixed
        else:
            keys = problem.cluster_keys
            for k in keys[:-1]:        # forward sweep: right-moving
                new = bp_update(k, state, problem, config)[("R", k)]
                mixed = _damp(state.messages[("R", k)], new, config.damping)
                residual = max(residual, _trace_distance_mat(mixed, state.messages[("R", k)]))
                state.messages[("R", k)] = mixed
            for k in reversed(keys[1:]):   # backward sweep: left-moving
                new = bp_update(k, state, problem, config)[("L", k)]
                mixed = _damp(state.messages[("L", k)], new, config.damping)
                residual = max(residual, _trace_distance_mat(mixed, state.messages[("L", k)]))
                state.messages[("L", k)] = mixed
        state.residual = residual
        state.iterations = it
        if residual <= config.tol_residual:
            state.converged = True
            break
    return state


def beliefs_from_messages(state: BPState, problem: BPProblem):
    """Cluster beliefs rho_k and overlap beliefs sigma_k.

    sigma_k comes from the product of the two messages crossing the edge,
    which is the stationarity condition for the overlap state."""
    n = problem.n
    dims = (2,) * (n + 1)
    beliefs = {}
    overlaps = {}
    if problem.kind == "ti":
        mR, mL = state.messages["R"], state.messages["L"]
        beliefs["ti"] = _normalized_exp(_cluster_state_log(problem, "ti", mR, mL))
        overlaps["ti"] = _normalized_exp(logm_psd(mL, EIG_FLOOR) + logm_psd(mR, EIG_FLOOR))
        return beliefs, overlaps
    keys = problem.cluster_keys
    for k in keys:
        m_right_in, m_left_in = _incoming(problem, state.messages, k)
        beliefs[k] = _normalized_exp(_cluster_state_log(problem, k, m_right_in, m_left_in))
    for k in keys[1:]:
        overlaps[k] = _normalized_exp(
            logm_psd(state.messages[("L", k)], EIG_FLOOR)
            + logm_psd(state.messages[("R", k - 1)], EIG_FLOOR))
    return beliefs, overlaps


def belief_consistency(state: BPState, problem: BPProblem) -> float:
    """Largest trace distance between cluster marginals and the overlap
    beliefs; at an exact fixed point this vanishes."""
    n = problem.n
    dims = (2,) * (n + 1)
    first = tuple(range(n))
    last = tuple(range(1, n + 1))
    beliefs, overlaps = beliefs_from_messages(state, problem)
    worst = 0.0
    if problem.kind == "ti":
        rho = beliefs["ti"]
        sig = overlaps["ti"]
        worst = max(_trace_distance_mat(ptrace_mat(rho, dims, first), sig),
                    _trace_distance_mat(ptrace_mat(rho, dims, last), sig))
        return worst
    keys = problem.cluster_keys
    for k in keys:
        rho = beliefs[k]
        if k in overlaps:
            worst = max(worst, _trace_distance_mat(
                ptrace_mat(rho, dims, first), overlaps[k]))
        if k + 1 in overlaps:
            worst = max(worst, _trace_distance_mat(
                ptrace_mat(rho, dims, last), overlaps[k + 1]))
    return worst


def bp_free_energy(state: BPState, problem: BPProblem) -> float:
    """Shield-local free energy evaluated at the beliefs (per site for the
    translation-invariant chain, total for a finite chain)."""
    if not state.converged:
        warnings.warn("evaluating the free energy on a non-converged state",
                      RuntimeWarning, stacklevel=2)
    n = problem.n
    dims = (2,) * (n + 1)
    first = tuple(range(n))
    T = problem.T
    beliefs, _ = beliefs_from_messages(state, problem)
    if problem.kind == "ti":
        rho = beliefs["ti"]
        ham = -T * problem.log_lambda["ti"]
        e = trace_product(rho, ham)
        s = entropy_mat(rho) - entropy_mat(ptrace_mat(rho, dims, first))
        return e - T * s
    keys = problem.cluster_keys
    e = 0.0
    s_m = 0.0
    for k in keys:
        rho = beliefs[k]
        e += trace_product(rho, -T * problem.log_lambda[k])
        s_m += entropy_mat(rho)
        if k > keys[0]:
            s_m -= entropy_mat(ptrace_mat(rho, dims, first))
    return e - T * s_m
