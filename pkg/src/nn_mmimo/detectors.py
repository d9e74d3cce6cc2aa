"""Noncoherent ML detection over slot pairs, plus the benchmark receivers.

The exact block detector minimizes

    tr(R_T^-1 Y^H Y) + M ln det R_T,      R_T = X^H D X + sigma^2 I_T,

over candidate transmit blocks.  For the two-slot codeword structure the
Gram reduces to the scalars a (reference), b (data energy) and c (cross sum),
giving the equivalent pairwise metric

    [a ||y2||^2 + b ||y1||^2 - 2 Re(c y2^H y1)] / (ab - |c|^2)
        + M ln(ab - |c|^2),

with a shared across the codebook.  Baselines: a one-shot amplitude detector
over a max-min-spaced sum set, a coherent zero-forcing receiver fed by
least-squares channel estimates from orthogonal pilots, and a two-user
differential PSK receiver with scaled rings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constellations import RateAllocation, build_qam_udcg
from .mustm import Codebook, SystemProfile

__all__ = [
    "DetectionResult",
    "DegenerateDesignError",
    "ml_noncoherent_pairwise",
    "ml_pairwise_batch",
    "pairwise_metrics",
    "ml_noncoherent_generic",
    "MedDesign",
    "build_med_design",
    "med_symbols",
    "med_oneshot_detect",
    "med_detect_batch",
    "ZfLsDesign",
    "build_zf_ls_design",
    "zf_ls_coherent_detect",
    "zf_ls_detect_batch",
    "DpskDesign",
    "build_dpsk_design",
    "dpsk_symbols",
    "dpsk_noncoherent_detect",
    "dpsk_detect_batch",
]


class DegenerateDesignError(ValueError):
    """A baseline design has a colliding (non-identifiable) sum set."""


@dataclass(frozen=True)
class DetectionResult:
    decided_index: int
    decided_bits: np.ndarray
    metric: float


# ---------------------------------------------------------------------------
# Proposed scheme: pairwise and generic noncoherent ML
# ---------------------------------------------------------------------------

def pairwise_metrics(y1: np.ndarray, y2: np.ndarray, cb: Codebook) -> np.ndarray:
    """Decision metric of every codeword for one received slot pair."""
    idx = ml_pairwise_batch(y1[:, None], y2[:, None], cb, return_metrics=True)
    return idx[0]


def ml_pairwise_batch(
    y1: np.ndarray,
    y2: np.ndarray,
    cb: Codebook,
    return_metrics: bool = False,
):
    """Vectorized pairwise detection; y1, y2 are (M, n_trials) arrays.

    Returns the argmin codeword index per trial (ties to the lowest index),
    or the full (n_trials, size) metric table when asked.
    """
    a = cb.ref_gram
    b = cb.data_gram
    c = cb.cross
    det = a * b - np.abs(c) ** 2
    log_det = np.log(det)
    m = y1.shape[0]
    n1 = np.sum(np.abs(y1) ** 2, axis=0)
    n2 = np.sum(np.abs(y2) ** 2, axis=0)
    z = np.sum(np.conj(y2) * y1, axis=0)  # y2^H y1 per trial
    quad = (
        a * n2[:, None]
        + n1[:, None] * b[None, :]
        - 2.0 * np.real(z[:, None] * c[None, :])
    )
    metrics = quad / det[None, :] + m * log_det[None, :]
    if return_metrics:
        return metrics
    return np.argmin(metrics, axis=1)


def ml_noncoherent_pairwise(
    y1: np.ndarray, y2: np.ndarray, cb: Codebook
) -> DetectionResult:
    """Two-slot noncoherent ML decision for one frame."""
    metrics = ml_pairwise_batch(y1[:, None], y2[:, None], cb, return_metrics=True)[0]
    idx = int(np.argmin(metrics))
    return DetectionResult(idx, cb.bits(idx), float(metrics[idx]))


def ml_noncoherent_generic(
    y_block: np.ndarray, candidates, profile: SystemProfile
) -> int:
    """Exact block detector over explicit K x T candidates (T small).

    Uses the T x T reduction tr(R_T^-1 Y^H Y) + M ln det R_T; ties break to
    the lowest candidate index.
    """
    y = np.asarray(y_block)
    m = y.shape[0]
    yhy = y.conj().T @ y
    gains = np.asarray(profile.gains, dtype=float)
    sigma2 = profile.noise_power
    best_metric, best_idx = np.inf, -1
    for i, cand in enumerate(candidates):
        xm = np.asarray(getattr(cand, "x_matrix", cand))
        r = xm.conj().T @ (gains[:, None] * xm)
        r[np.diag_indices_from(r)] += sigma2
        sign, logdet = np.linalg.slogdet(r)
        if sign <= 0:
            raise np.linalg.LinAlgError("candidate Gram is not positive definite")
        metric = float(np.real(np.trace(np.linalg.solve(r, yhy))) + m * logdet)
        if metric < best_metric:
            best_metric, best_idx = metric, i
    return best_idx


# ---------------------------------------------------------------------------
# One-shot amplitude baseline (max-min spaced sum set)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MedDesign:
    """Per-user on/off amplitudes and the induced received sum set.

    Binary-weighted received energy steps maximize the minimum spacing of
    the 2^K subset sums under the per-user average power caps.  This is a
    reconstruction of the one-shot amplitude-only receiver family (phase is
    lost in a single slot), flagged as such in run reports.
    """

    amplitudes: np.ndarray
    weights: np.ndarray
    sum_levels: np.ndarray
    min_gap: float
    note: str = field(
        default="one-shot amplitude baseline; constellation scaling reconstructed "
        "as binary-weighted max-min sum spacing under the same power caps",
    )

    @property
    def n_users(self) -> int:
        return self.amplitudes.size


def _subset_sums(weights: np.ndarray) -> np.ndarray:
    k = weights.size
    words = np.arange(1 << k)
    levels = np.zeros(1 << k)
    for u in range(k):
        bit = (words >> (k - 1 - u)) & 1
        levels = levels + bit * weights[u]
    return levels


def build_med_design(profile: SystemProfile, amplitudes=None) -> MedDesign:
    """Choose on-levels {0, a_k}; bits ride on amplitude only.

    With equiprobable bits the average power is a_k^2 / 2, so the received
    energy step w_k = beta_k a_k^2 may reach 2 P_k beta_k.  Binary weights
    w_k = 2^(k-1) delta give the largest min gap delta; stronger users carry
    the larger weights (profile users are sorted ascending).
    """
    beta = np.asarray(profile.gains, dtype=float)
    caps = profile.effective_caps
    k = profile.n_users
    if amplitudes is None:
        delta = float(np.min(2.0 * caps / (2.0 ** np.arange(k))))
        weights = delta * 2.0 ** np.arange(k)
        amplitudes = np.sqrt(weights / beta)
    else:
        amplitudes = np.asarray(amplitudes, dtype=float)
        if np.any(amplitudes**2 / 2.0 > np.asarray(profile.power_caps) * 1.0000001):
            raise ValueError("amplitudes violate the average power caps")
        weights = beta * amplitudes**2
    levels = _subset_sums(weights)
    sorted_levels = np.sort(levels)
    gaps = np.diff(sorted_levels)
    min_gap = float(gaps.min()) if gaps.size else np.inf
    if min_gap <= 1e-9 * max(sorted_levels.max(), 1e-300):
        raise DegenerateDesignError(
            "sum set has colliding levels; bit patterns are not identifiable"
        )
    return MedDesign(
        amplitudes=amplitudes, weights=weights, sum_levels=levels, min_gap=min_gap
    )


def med_symbols(bits: np.ndarray, design: MedDesign) -> np.ndarray:
    """Transmit vector for one slot: user k sends a_k on bit 1, else 0."""
    return design.amplitudes * np.asarray(bits, dtype=float)


def med_detect_batch(y: np.ndarray, design: MedDesign, sigma2: float) -> np.ndarray:
    """Energy detection per trial; y is (M, n_trials)."""
    m = y.shape[0]
    z = np.sum(np.abs(y) ** 2, axis=0) / m - sigma2
    return np.argmin(np.abs(z[:, None] - design.sum_levels[None, :]), axis=1)


def med_oneshot_detect(
    y: np.ndarray, design: MedDesign, sigma2: float
) -> DetectionResult:
    idx = int(med_detect_batch(y[:, None], design, sigma2)[0])
    k = design.n_users
    bits = np.array([(idx >> (k - 1 - u)) & 1 for u in range(k)], dtype=np.int8)
    z = float(np.sum(np.abs(y) ** 2) / y.size - sigma2)
    return DetectionResult(idx, bits, abs(z - design.sum_levels[idx]))


# ---------------------------------------------------------------------------
# Coherent zero-forcing baseline with LS channel estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ZfLsDesign:
    """Orthogonal pilots plus per-user square QAM for the data slot."""

    pilot_matrix: np.ndarray  # K x K, row k at power P_k per slot
    user_points: np.ndarray   # (K, 2^bits) data constellations, bit-ordered
    bits_per_symbol: int
    ls_filter: np.ndarray     # X_p^H (X_p X_p^H)^-1, applied to pilot receives

    @property
    def n_users(self) -> int:
        return self.pilot_matrix.shape[0]

    def bit_table(self) -> np.ndarray:
        n = self.bits_per_symbol
        words = np.arange(1 << n)
        cols = [(words >> (n - 1 - b)) & 1 for b in range(n)]
        return np.stack(cols, axis=1).astype(np.int8)


def build_zf_ls_design(
    profile: SystemProfile, bits_i: int = 3, bits_q: int = 3
) -> ZfLsDesign:
    """DFT pilots at full per-user power and Gray-labelled square QAM data.

    The data constellation of user k is the 2^(bits_i+bits_q) grid scaled so
    its average power meets P_k with equality.
    """
    k = profile.n_users
    p_caps = np.asarray(profile.power_caps, dtype=float)
    t = np.arange(k)
    pilots = np.sqrt(p_caps)[:, None] * np.exp(-2j * np.pi * np.outer(t, t) / k)
    gram = pilots @ pilots.conj().T
    ls_filter = pilots.conj().T @ np.linalg.inv(gram)

    single = build_qam_udcg(RateAllocation.of([bits_i], [bits_q]), 1.0)
    base = single.user_points_bit_ordered(0)
    base_energy = float(np.mean(np.abs(base) ** 2))
    user_points = np.stack(
        [base * np.sqrt(p / base_energy) for p in p_caps], axis=0
    )
    return ZfLsDesign(
        pilot_matrix=pilots,
        user_points=user_points,
        bits_per_symbol=bits_i + bits_q,
        ls_filter=ls_filter,
    )


def zf_ls_detect_batch(
    y_pilot: np.ndarray, y_data: np.ndarray, design: ZfLsDesign
) -> tuple[np.ndarray, np.ndarray]:
    """LS estimate, zero-forcing solve, per-user slicing.

    y_pilot is (n, M, K), y_data is (n, M).  Returns per-user symbol labels
    (n, K) and an erasure mask (n,) for rank-deficient estimates (counted as
    errors by callers).
    """
    h_hat = y_pilot @ design.ls_filter  # (n, M, K)
    gram = np.swapaxes(h_hat.conj(), 1, 2) @ h_hat  # (n, K, K)
    rhs = np.einsum("nmk,nm->nk", h_hat.conj(), y_data)
    dets = np.linalg.det(gram)
    erased = ~np.isfinite(dets) | (np.abs(dets) <= 0.0)
    safe_gram = gram.copy()
    safe_gram[erased] = np.eye(design.n_users)
    x_hat = np.linalg.solve(safe_gram, rhs[..., None])[..., 0]  # (n, K)
    dist = np.abs(x_hat[:, :, None] - design.user_points[None, :, :])
    labels = np.argmin(dist, axis=2)
    return labels, erased


def zf_ls_coherent_detect(
    y_pilot: np.ndarray, y_data: np.ndarray, design: ZfLsDesign
) -> DetectionResult:
    """Single-frame convenience wrapper; bits are users' fields concatenated."""
    labels, erased = zf_ls_detect_batch(
        y_pilot[None, ...], y_data[None, ...], design
    )
    table = design.bit_table()
    bits = np.concatenate([table[labels[0, u]] for u in range(design.n_users)])
    index = 0
    for lab in labels[0]:
        index = (index << design.bits_per_symbol) | int(lab)
    metric = float(bool(erased[0]))
    return DetectionResult(index, bits, metric)


# ---------------------------------------------------------------------------
# Differential PSK baseline with scaled rings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DpskDesign:
    """Per-user PSK rings; information rides on the slot-to-slot phase step.

    The receiver sees the cross statistic sum_k beta_k A_k^2 u_k, so the
    effective sum constellation is K scaled PSK rings; the ring ratio keeps
    those 8^K points distinct.
    """

    amplitudes: np.ndarray
    ring_gains: np.ndarray
    psk_points: np.ndarray       # phase steps in Gray-label order
    candidates: np.ndarray       # effective cross terms, canonical bit order
    bits_per_user: int
    min_gap: float

    @property
    def n_users(self) -> int:
        return self.amplitudes.size


def build_dpsk_design(
    profile: SystemProfile,
    psk_order: int = 8,
    ring_scale: float = 1.765,
    total_power: float | None = None,
) -> DpskDesign:
    """Scaled-ring differential PSK for K users.

    Effective ring gains follow ring_scale^(k-1); transmit amplitudes are
    normalized either to a given total average power or to the per-user caps.
    A colliding effective sum set (e.g. ring_scale = 1 with two users) is
    rejected.
    """
    from .constellations import gray_decode

    beta = np.asarray(profile.gains, dtype=float)
    k = profile.n_users
    ratios = ring_scale ** np.arange(k)
    if total_power is not None:
        base = total_power / np.sum(ratios / beta)
    else:
        base = float(np.min(np.asarray(profile.power_caps) * beta / ratios))
    ring_gains = base * ratios
    amplitudes = np.sqrt(ring_gains / beta)

    bits = int(np.log2(psk_order))
    if 1 << bits != psk_order:
        raise ValueError("PSK order must be a power of two")
    angles = 2.0 * np.pi * np.arange(psk_order) / psk_order
    points = np.exp(1j * angles)
    psk_points = np.array([points[gray_decode(lbl)] for lbl in range(psk_order)])

    size = psk_order**k
    candidates = np.zeros(size, dtype=complex)
    for u in range(k):
        words = np.arange(size)
        labels = (words // psk_order ** (k - 1 - u)) % psk_order
        candidates = candidates + ring_gains[u] * psk_points[labels]
    diffs = np.abs(candidates[:, None] - candidates[None, :])
    np.fill_diagonal(diffs, np.inf)
    min_gap = float(diffs.min())
    if min_gap <= 1e-9 * np.abs(candidates).max():
        raise DegenerateDesignError(
            f"effective sum set collides at ring scale {ring_scale}"
        )
    return DpskDesign(
        amplitudes=amplitudes,
        ring_gains=ring_gains,
        psk_points=psk_points,
        candidates=candidates,
        bits_per_user=bits,
        min_gap=min_gap,
    )


def dpsk_symbols(index: int, design: DpskDesign) -> np.ndarray:
    """Per-user phase steps encoded by a (K * bits_per_user)-bit word index."""
    k = design.n_users
    order = design.psk_points.size
    out = np.empty(k, dtype=complex)
    for u in range(k):
        label = (index // order ** (k - 1 - u)) % order
        out[u] = design.psk_points[label]
    return out


def dpsk_detect_batch(
    y1: np.ndarray, y2: np.ndarray, design: DpskDesign, sigma2: float
) -> np.ndarray:
    """Pairwise noncoherent metric over the effective sum set; (M, n) inputs."""
    a = float(np.sum(design.ring_gains) + sigma2)
    c = design.candidates
    det = a * a - np.abs(c) ** 2
    log_det = np.log(det)
    m = y1.shape[0]
    n1 = np.sum(np.abs(y1) ** 2, axis=0)
    n2 = np.sum(np.abs(y2) ** 2, axis=0)
    z = np.sum(np.conj(y2) * y1, axis=0)
    quad = a * (n1[:, None] + n2[:, None]) - 2.0 * np.real(z[:, None] * c[None, :])
    metrics = quad / det[None, :] + m * log_det[None, :]
    return np.argmin(metrics, axis=1)


def dpsk_noncoherent_detect(
    y1: np.ndarray, y2: np.ndarray, design: DpskDesign, sigma2: float
) -> DetectionResult:
    idx = int(dpsk_detect_batch(y1[:, None], y2[:, None], design, sigma2)[0])
    k = design.n_users
    order = design.psk_points.size
    bits: list[int] = []
    for u in range(k):
        label = (idx // order ** (k - 1 - u)) % order
        bits.extend(int(b) for b in format(label, f"0{design.bits_per_user}b"))
    return DetectionResult(idx, np.asarray(bits, dtype=np.int8), 0.0)
