"""Zero-forcing downlink, log-det throughput and the channel correlation metric."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import NetworkChannel

log = logging.getLogger(__name__)

# relative diagonal loading applied when the Gram matrix is numerically singular
LOADING = 1e-9
RANK_TOL = 1e-12


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class BeamformerSet:
    full: np.ndarray  # (M*N_t, U*N_u)
    n_ue: int
    regularized: bool = False

    @property
    def n_users(self) -> int:
        return self.full.shape[1] // self.n_ue

    def user(self, u: int) -> np.ndarray:
        return self.full[:, u * self.n_ue:(u + 1) * self.n_ue]

    @property
    def per_user(self) -> list[np.ndarray]:
        return [self.user(u) for u in range(self.n_users)]

    @property
    def norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(w) for w in self.per_user])


@dataclass(frozen=True)
class SlotThroughput:
    per_user: tuple[float, ...]

    @property
    def total(self) -> float:
        return float(sum(self.per_user))


def zf_weights(h_est: NetworkChannel | np.ndarray, n_ue: int | None = None) -> BeamformerSet:
    """``W = H^H (H H^H)^-1``, with diagonal loading when ``H`` loses row rank."""
    if isinstance(h_est, NetworkChannel):
        n_ue = h_est.n_ue
        h = h_est.stacked
    else:
        h = np.asarray(h_est)
        n_ue = n_ue or h.shape[0]
    rows, cols = h.shape
    if rows > cols:
        log.warning("ZF infeasible: %d streams but only %d transmit antennas", rows, cols)
    gram = h @ h.conj().T
    eig = np.linalg.eigvalsh(gram)
    regularized = bool(eig[-1] <= 0.0 or eig[0] <= RANK_TOL * eig[-1])
    if regularized:
        delta = LOADING * np.real(np.trace(gram)) / rows
        if delta <= 0.0:
            raise NumericError("cannot beamform on an all-zero channel")
        gram = gram + delta * np.eye(rows)
    w = h.conj().T @ np.linalg.solve(gram, np.eye(rows, dtype=complex))
    return BeamformerSet(w, n_ue, regularized)


def _projected(h_u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``h_u w / ||w||_F``; its Gram matrix equals ``h_u (w w^H / ||w||^2) h_u^H``."""
    nrm = float(np.linalg.norm(w))
    if nrm == 0.0:
        raise ValueError("beamformer has zero norm")
    return (h_u @ w) / nrm


def _hermitian_part(r: np.ndarray) -> np.ndarray:
    return (r + r.conj().T) / 2.0


def signal_covariance(h_true_u: np.ndarray, w_u: np.ndarray, p_u: float) -> np.ndarray:
    g = _projected(h_true_u, w_u)
    return _hermitian_part(p_u * g @ g.conj().T)


def interference_covariance(
    h_true_u: np.ndarray,
    w_others: Sequence[np.ndarray],
    powers: Sequence[float],
    noise_power: float,
) -> np.ndarray:
    n = h_true_u.shape[0]
    r = noise_power * np.eye(n, dtype=complex)
    for w, p in zip(w_others, powers):
        g = _projected(h_true_u, w)
        r = r + p * g @ g.conj().T
    return _hermitian_part(r)


def log2det(a: np.ndarray) -> float:
    """log2 det of a Hermitian positive-definite matrix via Cholesky."""
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"matrix not positive definite (cond={np.linalg.cond(a):.3e})") from exc
    val = 2.0 * float(np.sum(np.log2(np.real(np.diag(chol)))))
    if not math.isfinite(val):
        raise NumericError(f"non-finite log-determinant (cond={np.linalg.cond(a):.3e})")
    return val


def user_throughput(r_s: np.ndarray, r_i: np.ndarray) -> float:
    """``log2 det(R_S + R_I) - log2 det(R_I)`` in bits/s/Hz, clipped at zero."""
    return max(0.0, log2det(r_s + r_i) - log2det(r_i))


def slot_throughput(
    h_true: NetworkChannel, bf: BeamformerSet, p_m: float, noise_power: float
) -> SlotThroughput:
    """Per-user throughput with equal per-user power ``p_u = M * p_m``."""
    p_u = h_true.n_aps * p_m
    ws = bf.per_user
    out = []
    for u in range(h_true.n_users):
        hu = h_true.user(u)
        others = [w for v, w in enumerate(ws) if v != u]
        r_s = signal_covariance(hu, ws[u], p_u)
        r_i = interference_covariance(hu, others, [p_u] * len(others), noise_power)
        out.append(user_throughput(r_s, r_i))
    return SlotThroughput(tuple(out))


def channel_correlation(h_true: NetworkChannel, h_est: NetworkChannel, mode: str = "magnitude") -> float:
    """Mean over users of ``|tr(h h_est^H)| / (||h||_F ||h_est||_F)``.

    ``mode="real"`` uses the real part of the trace instead of its magnitude.
    Users with an all-zero block are skipped.
    """
    if h_true.shape != h_est.shape:
        raise ValueError("channel shapes differ")
    vals = []
    for u in range(h_true.n_users):
        h, g = h_true.user(u), h_est.user(u)
        denom = np.linalg.norm(h) * np.linalg.norm(g)
        if denom == 0.0:
            log.warning("user %d has a zero channel block; skipped in correlation", u)
            continue
        tr = np.vdot(g, h)  # trace(h g^H)
        vals.append((abs(tr) if mode == "magnitude" else tr.real) / denom)
    if not vals:
        return float("nan")
    return float(np.mean(vals))
