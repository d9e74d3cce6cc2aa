"""Uniquely-factorable multiuser space-time modulation over two slots.

Each frame carries one known reference slot followed by information slots.
For users with power scalars p_k, large-scale gains beta_k and information
symbols s_k drawn from a UDCG, the pre-compensation codeword and the
transmitted block are

    S_2 = [ 1/sqrt(p_k) | sqrt(p_k) s_k ],      X_2 = D^(-1/2) P S_2,

with D = diag(beta) and P a user-to-stream permutation matrix.  The key
statistic is the 2x2 Gram matrix

    R_2 = X_2^H D X_2 + sigma^2 I
        = [[ sum 1/p_k + sigma^2,          sum s_k            ],
           [ conj(sum s_k),       sum p_k |s_k|^2 + sigma^2  ]],

which is independent of the permutation and, through unique decomposability
of the sums, identifies the codeword: equal Grams imply equal codewords.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .constellations import (
    RateAllocation,
    UdcgDecomposition,
    build_qam_udcg,
    sub_constellation_energies,
)

__all__ = [
    "SystemProfile",
    "SignalMatrix",
    "Codebook",
    "PowerConstraintError",
    "PairScanCapExceeded",
    "encode",
    "gram",
    "gram_from_stats",
    "build_codebook",
    "verify_identifiability",
    "codebook_to_json",
    "codebook_from_json",
]

# Theorem-optimal powers sit exactly on the feasibility boundary; allow a hair
# of slack so float rounding cannot reject them.
_FEAS_SLACK = 1.0 + 1e-9

DEFAULT_PAIR_SCAN_CAP = 2**20


class PowerConstraintError(ValueError):
    """A power vector violates the per-user average power box."""


class PairScanCapExceeded(RuntimeError):
    """The pairwise identifiability scan would exceed its comparison cap."""


@dataclass(frozen=True)
class SystemProfile:
    """Per-user power caps P_k (W), large-scale gains beta_k, noise power (W).

    Users must be indexed so that P_k beta_k is nondecreasing; use
    :meth:`from_unsorted` to sort arbitrary inputs and keep the index map.
    """

    power_caps: tuple[float, ...]
    gains: tuple[float, ...]
    noise_power: float

    def __post_init__(self):
        p = np.asarray(self.power_caps, dtype=float)
        b = np.asarray(self.gains, dtype=float)
        if p.shape != b.shape or p.ndim != 1 or p.size == 0:
            raise ValueError("power caps and gains must be equal-length vectors")
        if np.any(p <= 0) or np.any(b <= 0) or self.noise_power <= 0:
            raise ValueError("powers, gains and noise power must be positive")
        pb = p * b
        if np.any(np.diff(pb) < -1e-12 * pb.max()):
            raise ValueError(
                "users must be sorted by ascending P_k * beta_k "
                "(use SystemProfile.from_unsorted)"
            )

    @classmethod
    def from_unsorted(cls, power_caps, gains, noise_power):
        """Sort users by P_k beta_k; returns (profile, order) with order such
        that profile user i is input user order[i]."""
        p = np.asarray(power_caps, dtype=float)
        b = np.asarray(gains, dtype=float)
        order = np.argsort(p * b, kind="stable")
        prof = cls(tuple(p[order]), tuple(b[order]), float(noise_power))
        return prof, order

    @property
    def n_users(self) -> int:
        return len(self.power_caps)

    @property
    def effective_caps(self) -> np.ndarray:
        """P_k beta_k, the received-power budget of each user."""
        return np.asarray(self.power_caps) * np.asarray(self.gains)

    def gain_matrix(self) -> np.ndarray:
        return np.diag(np.asarray(self.gains, dtype=float))


@dataclass(frozen=True)
class SignalMatrix:
    """One codeword: pre-compensation S_2 and transmitted X_2 (both K x 2)."""

    s_matrix: np.ndarray
    x_matrix: np.ndarray

    def __post_init__(self):
        if self.s_matrix.shape != self.x_matrix.shape or self.s_matrix.shape[1] != 2:
            raise ValueError("signal matrices must be K x 2 and share a shape")


def power_box(
    decomposition: UdcgDecomposition, profile: SystemProfile, pi: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Feasible [lower, upper] interval of each p_k for a given assignment.

    Stream k is transmitted by user pi^-1(k); its reference-slot power forces
    p_k >= 1/(P beta) and its data-slot average power forces
    p_k <= P beta / (E_k d^2).
    """
    energies = sub_constellation_energies(decomposition)
    d2 = decomposition.d**2
    inv_pi = np.empty_like(pi)
    inv_pi[pi] = np.arange(pi.size)
    caps = profile.effective_caps[inv_pi]
    lower = 1.0 / caps
    upper = caps / (energies * d2)
    return lower, upper


def check_power_feasibility(
    p: np.ndarray,
    decomposition: UdcgDecomposition,
    profile: SystemProfile,
    pi: np.ndarray,
) -> None:
    """Raise :class:`PowerConstraintError` naming the first violated bound."""
    p = np.asarray(p, dtype=float)
    if p.size != profile.n_users or np.any(~np.isfinite(p)) or np.any(p <= 0):
        raise PowerConstraintError("power vector must be finite and positive")
    lower, upper = power_box(decomposition, profile, pi)
    for k in range(p.size):
        if p[k] * _FEAS_SLACK < lower[k]:
            raise PowerConstraintError(
                f"p[{k}]={p[k]:.6g} below reference-slot bound {lower[k]:.6g} "
                f"(slot-1 power would exceed the cap)"
            )
        if p[k] > upper[k] * _FEAS_SLACK:
            raise PowerConstraintError(
                f"p[{k}]={p[k]:.6g} above data-slot bound {upper[k]:.6g} "
                f"(slot-2 average power would exceed the cap)"
            )


def _validate_permutation(pi, n_users: int) -> np.ndarray:
    pi = np.asarray(pi, dtype=int)
    if sorted(pi.tolist()) != list(range(n_users)):
        raise ValueError("pi must be a permutation of 0..K-1")
    return pi


def encode(
    info_bits,
    decomposition: UdcgDecomposition,
    p,
    pi,
    profile: SystemProfile,
) -> SignalMatrix:
    """Build the S_2 / X_2 pair for one information word.

    ``pi[k]`` is the stream (sub-constellation index) transmitted by user k.
    The power vector is validated against the per-user average power box
    before anything is built.
    """
    pi = _validate_permutation(pi, profile.n_users)
    p = np.asarray(p, dtype=float)
    check_power_feasibility(p, decomposition, profile, pi)
    symbols = decomposition.symbols_from_bits(info_bits)
    s_matrix = np.column_stack([1.0 / np.sqrt(p), np.sqrt(p) * symbols])
    scale = 1.0 / np.sqrt(np.asarray(profile.gains, dtype=float))
    x_matrix = scale[:, None] * s_matrix[pi, :]
    return SignalMatrix(s_matrix=s_matrix, x_matrix=x_matrix)


def gram(x: SignalMatrix, profile: SystemProfile) -> np.ndarray:
    """Dense-path Gram R_2 = X_2^H D X_2 + sigma^2 I (Hermitian PD)."""
    xm = x.x_matrix if isinstance(x, SignalMatrix) else np.asarray(x)
    d = np.asarray(profile.gains, dtype=float)
    r = xm.conj().T @ (d[:, None] * xm)
    r[np.diag_indices_from(r)] += profile.noise_power
    return r


def gram_from_stats(p, symbols, noise_power: float) -> np.ndarray:
    """Closed-form Gram from (p, s): permutation-free statistics."""
    p = np.asarray(p, dtype=float)
    s = np.asarray(symbols, dtype=complex)
    a = np.sum(1.0 / p) + noise_power
    b = np.sum(p * np.abs(s) ** 2) + noise_power
    c = np.sum(s)
    return np.array([[a, c], [np.conj(c), b]], dtype=complex)


class Codebook:
    """All 2^N codewords of a (decomposition, p, pi, profile) design.

    Entry order is the canonical bit order: entry i encodes the N-bit word
    ``i`` (user fields concatenated, in-phase before quadrature, Gray-labelled
    levels).  Gram statistics shared by the detectors are precomputed:
    ``ref_gram`` (a), per-entry ``data_gram`` (b) and ``cross`` (c).
    """

    def __init__(
        self,
        decomposition: UdcgDecomposition,
        p,
        pi,
        profile: SystemProfile,
    ):
        self.decomposition = decomposition
        self.profile = profile
        self.pi = _validate_permutation(pi, profile.n_users)
        self.p = np.asarray(p, dtype=float)
        check_power_feasibility(self.p, decomposition, profile, self.pi)

        n = decomposition.rate_allocation.total_bits
        self.n_bits = n
        self.size = 1 << n
        words = np.arange(self.size)
        alloc = decomposition.rate_allocation
        sym = np.empty((self.size, alloc.n_users), dtype=complex)
        shift = n
        for k, nk in enumerate(alloc.bits_per_user):
            shift -= nk
            labels = (words >> shift) & ((1 << nk) - 1)
            sym[:, k] = decomposition.user_points_bit_ordered(k)[labels]
        self.symbols = sym

        sigma2 = profile.noise_power
        self.ref_gram = float(np.sum(1.0 / self.p) + sigma2)
        self.data_gram = (np.abs(sym) ** 2) @ self.p + sigma2
        self.cross = sym.sum(axis=1)

        self._ref_column = 1.0 / np.sqrt(self.p)
        self._gain_scale = 1.0 / np.sqrt(np.asarray(profile.gains, dtype=float))

    @property
    def entries(self) -> list[SignalMatrix]:
        return [self.entry(i) for i in range(self.size)]

    def entry(self, index: int) -> SignalMatrix:
        s_matrix = np.column_stack(
            [self._ref_column, np.sqrt(self.p) * self.symbols[index]]
        )
        x_matrix = self._gain_scale[:, None] * s_matrix[self.pi, :]
        return SignalMatrix(s_matrix=s_matrix, x_matrix=x_matrix)

    def bits(self, index: int) -> np.ndarray:
        return np.array(
            [(index >> (self.n_bits - 1 - b)) & 1 for b in range(self.n_bits)],
            dtype=np.int8,
        )

    def bit_table(self) -> np.ndarray:
        """(size, N) matrix of all bit labels."""
        words = np.arange(self.size)
        cols = [
            (words >> (self.n_bits - 1 - b)) & 1 for b in range(self.n_bits)
        ]
        return np.stack(cols, axis=1).astype(np.int8)

    def user_bit_slices(self) -> list[slice]:
        """Position of each user's bit field inside the N-bit word."""
        alloc = self.decomposition.rate_allocation
        slices, pos = [], 0
        for nk in alloc.bits_per_user:
            slices.append(slice(pos, pos + nk))
            pos += nk
        return slices


def build_codebook(
    decomposition: UdcgDecomposition, p, pi, profile: SystemProfile
) -> Codebook:
    return Codebook(decomposition, p, pi, profile)


def verify_identifiability(
    cb: Codebook,
    tol: float = 1e-10,
    cap: int = DEFAULT_PAIR_SCAN_CAP,
) -> bool:
    """Exhaustive Gram-pair scan: equal Grams (within ``tol``, entrywise
    absolute) must imply equal codewords.

    Raises :class:`PairScanCapExceeded` when size^2 exceeds ``cap``.
    """
    n = cb.size
    if n * n > cap:
        raise PairScanCapExceeded(f"{n}^2 pair comparisons exceed cap {cap}")
    b = cb.data_gram
    c = cb.cross
    # The reference statistic is shared, so Gram equality reduces to the
    # data-energy and cross terms agreeing.
    for chunk in range(0, n, 1024):
        sl = slice(chunk, min(chunk + 1024, n))
        equal = (np.abs(b[sl, None] - b[None, :]) <= tol) & (
            np.abs(c[sl, None] - c[None, :]) <= tol
        )
        idx_i, idx_j = np.nonzero(equal)
        idx_i = idx_i + sl.start
        if np.any(idx_i != idx_j):
            return False
    return True


def codebook_to_json(cb: Codebook) -> str:
    """Serialize a codebook design (not the enumerated entries, which are
    reproducible) with points as [re, im] pairs."""
    alloc = cb.decomposition.rate_allocation
    doc = {
        "rate_allocation": {
            "inphase_bits": list(alloc.inphase_bits),
            "quadrature_bits": list(alloc.quadrature_bits),
        },
        "d": cb.decomposition.d,
        "powers": cb.p.tolist(),
        "permutation": cb.pi.tolist(),
        "profile": {
            "power_caps": list(cb.profile.power_caps),
            "gains": list(cb.profile.gains),
            "noise_power": cb.profile.noise_power,
        },
        "sub_constellations": [
            [[z.real, z.imag] for z in c.points]
            for c in cb.decomposition.sub_constellations
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def codebook_from_json(text: str) -> Codebook:
    doc = json.loads(text)
    alloc = RateAllocation.of(
        doc["rate_allocation"]["inphase_bits"],
        doc["rate_allocation"]["quadrature_bits"],
    )
    decomposition = build_qam_udcg(alloc, doc["d"])
    stored = [
        sorted((complex(re, im) for re, im in pts), key=lambda z: (z.real, z.imag))
        for pts in doc["sub_constellations"]
    ]
    rebuilt = [sorted(c.points, key=lambda z: (z.real, z.imag))
               for c in decomposition.sub_constellations]
    if any(
        not np.allclose(a, b, rtol=1e-12, atol=0)
        for a, b in zip(stored, rebuilt)
    ):
        raise ValueError("stored sub-constellations do not match the canonical build")
    prof = SystemProfile(
        tuple(doc["profile"]["power_caps"]),
        tuple(doc["profile"]["gains"]),
        float(doc["profile"]["noise_power"]),
    )
    return Codebook(decomposition, doc["powers"], doc["permutation"], prof)
