"""Monte Carlo BER sweeps over antenna counts, distances and drops.

A drop fixes user placement and shadowing; trials within a drop redraw
fading and noise per frame.  The power/assignment design is re-solved per
drop from the realized large-scale gains (the receiver is assumed to know
them).  Randomness is keyed by (stream, drop, M, block) so results are
byte-identical across thread counts, and drops share placement, shadowing,
bit and fading streams across schemes and antenna grids (common random
numbers).

CSV rows carry exactly: scheme,M,distance_m,drop,trials,bits,bit_errors,ber.
The JSON summary echoes the configuration and adds Wilson confidence
half-widths, per-user error splits and rate accounting.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .channel import (
    PropagationParams,
    Stream,
    draw_shadowing_db,
    draw_small_scale,
    large_scale_gains,
    noise_power,
    place_users_uniform,
    substream,
)
from .constellations import RateAllocation, build_qam_udcg, sub_constellation_energies
from .detectors import (
    build_dpsk_design,
    build_med_design,
    build_zf_ls_design,
    dpsk_detect_batch,
    med_detect_batch,
    ml_pairwise_batch,
    zf_ls_detect_batch,
)
from .mustm import Codebook, SystemProfile
from .optimizer import solve_design

__all__ = [
    "RunConfig",
    "BerRecord",
    "ConfigError",
    "load_config",
    "run_sweep",
    "emit_csv",
    "emit_json_summary",
    "parse_csv",
    "wilson_halfwidth",
    "KNOWN_SCHEMES",
]

KNOWN_SCHEMES = ("proposed", "med", "zf-ls", "dpsk")

_Z95 = 1.959963984540054


class ConfigError(ValueError):
    """The run configuration is missing, malformed or inconsistent."""


@dataclass(frozen=True)
class RunConfig:
    schemes: tuple[str, ...]
    rate_allocation: RateAllocation
    m_grid: tuple[int, ...]
    trials: int
    drops: int
    master_seed: int
    power_caps_w: tuple[float, ...]
    propagation: PropagationParams
    distances_m: tuple[float, ...] | None = None
    data_slots: int = 1
    dpsk_ring_scale: float = 1.765
    shadowing: bool = True
    ci_rel_target: float = 0.1
    batch_size: int = 512
    threads: int = 1
    out_dir: str | None = None

    def __post_init__(self):
        if not self.schemes:
            raise ConfigError("at least one scheme is required")
        for s in self.schemes:
            if s not in KNOWN_SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}; known: {KNOWN_SCHEMES}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.drops < 1:
            raise ConfigError("drops must be at least 1")
        if len(self.m_grid) == 0 or any(
            b <= a for a, b in zip(self.m_grid, self.m_grid[1:])
        ):
            raise ConfigError("m_grid must be non-empty and strictly increasing")
        if any(m < 1 for m in self.m_grid):
            raise ConfigError("antenna counts must be positive")
        if any(p <= 0 for p in self.power_caps_w):
            raise ConfigError("power caps must be positive")
        if len(self.power_caps_w) != self.rate_allocation.n_users:
            raise ConfigError("one power cap per user is required")
        if self.data_slots < 1:
            raise ConfigError("data_slots must be at least 1")
        if self.distances_m is not None and any(
            d < self.propagation.reference_distance_m for d in self.distances_m
        ):
            raise ConfigError("distances must be at least the reference distance")

    @property
    def n_users(self) -> int:
        return self.rate_allocation.n_users

    @property
    def noise_power_w(self) -> float:
        return noise_power(self.propagation)


_PROP_KEYS = {
    "reference_distance_m",
    "carrier_frequency_hz",
    "path_loss_exponent",
    "shadowing_std_db",
    "cell_radius_m",
    "bandwidth_hz",
    "noise_figure_db",
    "reference_temperature_k",
}


def load_config(source) -> RunConfig:
    """Build a RunConfig from a flat JSON document (path or dict).

    Propagation keys default to the standard evaluation profile and may be
    overridden individually.  ``power_caps_w`` may be a scalar (shared cap)
    or a per-user list.
    """
    if isinstance(source, (str, os.PathLike)):
        if not os.path.exists(source):
            raise ConfigError(f"config file not found: {source}")
        try:
            with open(source) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    elif isinstance(source, dict):
        doc = dict(source)
    else:
        raise ConfigError("config source must be a path or a dict")

    try:
        alloc_raw = doc["rate_allocation"]
        alloc = RateAllocation.of(
            [pair[0] for pair in alloc_raw], [pair[1] for pair in alloc_raw]
        )
        caps = doc.get("power_caps_w", 0.316)
        if isinstance(caps, (int, float)):
            caps = [float(caps)] * alloc.n_users
        prop = PropagationParams(
            **{k: doc[k] for k in _PROP_KEYS if k in doc}
        )
        distances = doc.get("distances_m")
        cfg = RunConfig(
            schemes=tuple(doc.get("schemes", ["proposed"])),
            rate_allocation=alloc,
            m_grid=tuple(int(m) for m in doc["m_grid"]),
            trials=int(doc["trials"]),
            drops=int(doc.get("drops", 100)),
            master_seed=int(doc.get("seed", 0)),
            power_caps_w=tuple(float(p) for p in caps),
            propagation=prop,
            distances_m=tuple(float(d) for d in distances) if distances else None,
            data_slots=int(doc.get("data_slots", 1)),
            dpsk_ring_scale=float(doc.get("dpsk_ring_scale", 1.765)),
            shadowing=bool(doc.get("shadowing", True)),
            ci_rel_target=float(doc.get("ci_rel_target", 0.1)),
            batch_size=int(doc.get("batch_size", 512)),
            threads=int(doc.get("threads", 1)),
            out_dir=doc.get("out_dir"),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad config: {exc}") from exc
    return cfg


@dataclass(frozen=True)
class BerRecord:
    """One Monte Carlo cell: a (scheme, M, distance, drop) measurement."""

    scheme: str
    m: int
    distance_m: float | None
    drop: int
    trials: int
    bits: int
    bit_errors: int
    per_user_bits: tuple[int, ...] = field(default=())
    per_user_errors: tuple[int, ...] = field(default=())

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else math.nan

    @property
    def per_user_ber(self) -> tuple[float, ...]:
        return tuple(
            e / b if b else math.nan
            for e, b in zip(self.per_user_errors, self.per_user_bits)
        )


def wilson_halfwidth(errors: int, n: int, z: float = _Z95) -> float:
    """Half-width of the Wilson score interval for a binomial proportion."""
    if n == 0:
        return math.inf
    p_hat = errors / n
    denom = 1.0 + z * z / n
    return (z / denom) * math.sqrt(p_hat * (1 - p_hat) / n + z * z / (4 * n * n))


def wilson_interval(errors: int, n: int, z: float = _Z95) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    p_hat = errors / n
    denom = 1.0 + z * z / n
    centre = (p_hat + z * z / (2 * n)) / denom
    half = wilson_halfwidth(errors, n, z)
    return (max(0.0, centre - half), min(1.0, centre + half))


# ---------------------------------------------------------------------------
# Per-cell simulation
# ---------------------------------------------------------------------------

def _drop_profile(cfg: RunConfig, drop: int, distance: float | None):
    prop = cfg.propagation
    k = cfg.n_users
    if distance is None:
        rng = substream(cfg.master_seed, Stream.PLACEMENT, drop)
        distances = place_users_uniform(k, prop, rng)
    else:
        distances = np.full(k, float(distance))
    if cfg.shadowing and prop.shadowing_std_db > 0:
        psi = draw_shadowing_db(k, prop, substream(cfg.master_seed, Stream.SHADOWING, drop))
    else:
        psi = np.zeros(k)
    beta = large_scale_gains(distances, psi, prop)
    profile, order = SystemProfile.from_unsorted(
        cfg.power_caps_w, beta, cfg.noise_power_w
    )
    return profile, order


def _count_bit_errors(true_words, decided_words, bit_table, user_slices):
    """Returns (total_errors, per_user_errors) for word index arrays."""
    diff = bit_table[true_words] ^ bit_table[decided_words]
    per_user = np.array(
        [int(diff[:, sl].sum()) for sl in user_slices], dtype=np.int64
    )
    return int(diff.sum()), per_user


def _proposed_codebook(cfg: RunConfig, profile: SystemProfile) -> Codebook:
    design_basis = build_qam_udcg(cfg.rate_allocation, 1.0)
    solution = solve_design(profile, design_basis)
    scaled = build_qam_udcg(cfg.rate_allocation, solution.d_star)
    return Codebook(scaled, solution.p_star, solution.pi_star, profile)


def _proposed_total_power(cfg: RunConfig, profile: SystemProfile) -> float:
    """Sum over users of the (slot-flat) transmit power at the optimum."""
    basis = build_qam_udcg(cfg.rate_allocation, 1.0)
    solution = solve_design(profile, basis)
    energies = sub_constellation_energies(basis)
    return float(
        np.sum(np.sqrt(energies) * solution.d_star / np.asarray(profile.gains))
    )


def _run_cell(cfg: RunConfig, scheme: str, m: int, distance, drop: int) -> BerRecord:
    profile, _ = _drop_profile(cfg, drop, distance)
    k = profile.n_users
    seed = cfg.master_seed
    sigma2 = profile.noise_power

    if scheme == "proposed":
        cb = _proposed_codebook(cfg, profile)
        bit_table = cb.bit_table()
        user_slices = cb.user_bit_slices()
        bits_per_user_frame = np.array(
            [cfg.data_slots * n for n in cfg.rate_allocation.bits_per_user],
            dtype=np.int64,
        )
        ref = 1.0 / np.sqrt(cb.p)
        data_cols = np.sqrt(cb.p)[None, :] * cb.symbols  # (size, K)

        def simulate(n, block):
            fad = substream(seed, Stream.FADING, drop, m, block)
            noi = substream(seed, Stream.NOISE, drop, m, block)
            bits_rng = substream(seed, Stream.BITS, drop, m, block)
            g = draw_small_scale(m * n, k, fad).reshape(n, m, k)
            scale = math.sqrt(sigma2 / 2.0)
            y1 = g @ ref + scale * (
                noi.standard_normal((n, m)) + 1j * noi.standard_normal((n, m))
            )
            total = 0
            per_user = np.zeros(k, dtype=np.int64)
            for _slot in range(cfg.data_slots):
                words = bits_rng.integers(0, cb.size, size=n)
                x2 = data_cols[words]  # (n, K)
                y2 = np.einsum("nmk,nk->nm", g, x2) + scale * (
                    noi.standard_normal((n, m)) + 1j * noi.standard_normal((n, m))
                )
                decided = ml_pairwise_batch(y1.T, y2.T, cb)
                t, pu = _count_bit_errors(words, decided, bit_table, user_slices)
                total += t
                per_user += pu
            return total, per_user

    elif scheme == "med":
        design = build_med_design(profile)
        bits_per_user_frame = np.ones(k, dtype=np.int64)
        h_scale = np.sqrt(np.asarray(profile.gains))

        def simulate(n, block):
            fad = substream(seed, Stream.FADING, drop, m, block)
            noi = substream(seed, Stream.NOISE, drop, m, block)
            bits_rng = substream(seed, Stream.BITS, drop, m, block)
            g = draw_small_scale(m * n, k, fad).reshape(n, m, k)
            bits = bits_rng.integers(0, 2, size=(n, k))
            x = bits * design.amplitudes[None, :]
            scale = math.sqrt(sigma2 / 2.0)
            y = np.einsum("nmk,nk->nm", g * h_scale[None, None, :], x) + scale * (
                noi.standard_normal((n, m)) + 1j * noi.standard_normal((n, m))
            )
            decided = med_detect_batch(y.T, design, sigma2)
            shifts = k - 1 - np.arange(k)
            dec_bits = (decided[:, None] >> shifts[None, :]) & 1
            diff = dec_bits != bits
            return int(diff.sum()), diff.sum(axis=0).astype(np.int64)

    elif scheme == "zf-ls":
        design = build_zf_ls_design(profile)
        bits_per_user_frame = np.full(k, design.bits_per_symbol, dtype=np.int64)
        h_scale = np.sqrt(np.asarray(profile.gains))
        table = design.bit_table()

        def simulate(n, block):
            fad = substream(seed, Stream.FADING, drop, m, block)
            noi = substream(seed, Stream.NOISE, drop, m, block)
            bits_rng = substream(seed, Stream.BITS, drop, m, block)
            g = draw_small_scale(m * n, k, fad).reshape(n, m, k)
            h = g * h_scale[None, None, :]
            scale = math.sqrt(sigma2 / 2.0)
            y_pilot = h @ design.pilot_matrix + scale * (
                noi.standard_normal((n, m, k)) + 1j * noi.standard_normal((n, m, k))
            )
            labels_true = bits_rng.integers(0, design.user_points.shape[1], size=(n, k))
            x_data = np.take_along_axis(
                design.user_points, labels_true.T, axis=1
            ).T  # (n, K)
            y_data = np.einsum("nmk,nk->nm", h, x_data) + scale * (
                noi.standard_normal((n, m)) + 1j * noi.standard_normal((n, m))
            )
            labels_hat, erased = zf_ls_detect_batch(y_pilot, y_data, design)
            diff_bits = table[labels_hat] ^ table[labels_true]  # (n, K, bits)
            diff_bits[erased] = 1  # an erased frame loses every bit
            errors_per_user = diff_bits.sum(axis=(0, 2)).astype(np.int64)
            return int(errors_per_user.sum()), errors_per_user

    elif scheme == "dpsk":
        budget = _proposed_total_power(cfg, profile)
        design = build_dpsk_design(
            profile, ring_scale=cfg.dpsk_ring_scale, total_power=budget
        )
        bits_per_user_frame = np.full(k, design.bits_per_user, dtype=np.int64)
        h_scale = np.sqrt(np.asarray(profile.gains))
        order = design.psk_points.size
        size = order**k
        labels_of = np.stack(
            [
                (np.arange(size) // order ** (k - 1 - u)) % order
                for u in range(k)
            ],
            axis=1,
        )
        psk_bit_table = np.stack(
            [
                [(lbl >> (design.bits_per_user - 1 - b)) & 1 for b in range(design.bits_per_user)]
                for lbl in range(order)
            ]
        ).astype(np.int8)

        def simulate(n, block):
            fad = substream(seed, Stream.FADING, drop, m, block)
            noi = substream(seed, Stream.NOISE, drop, m, block)
            bits_rng = substream(seed, Stream.BITS, drop, m, block)
            g = draw_small_scale(m * n, k, fad).reshape(n, m, k)
            h = g * h_scale[None, None, :]
            scale = math.sqrt(sigma2 / 2.0)
            words = bits_rng.integers(0, size, size=n)
            steps = design.psk_points[labels_of[words]]  # (n, K)
            x1 = np.broadcast_to(design.amplitudes.astype(complex), (n, k))
            x2 = design.amplitudes[None, :] * steps
            y1 = np.einsum("nmk,nk->nm", h, x1) + scale * (
                noi.standard_normal((n, m)) + 1j * noi.standard_normal((n, m))
            )
            y2 = np.einsum("nmk,nk->nm", h, x2) + scale * (
                noi.standard_normal((n, m)) + 1j * noi.standard_normal((n, m))
            )
            decided = dpsk_detect_batch(y1.T, y2.T, design, sigma2)
            diff = psk_bit_table[labels_of[words]] ^ psk_bit_table[labels_of[decided]]
            return int(diff.sum()), diff.sum(axis=(0, 2)).astype(np.int64)

    else:  # pragma: no cover - guarded by RunConfig validation
        raise ConfigError(f"unknown scheme {scheme!r}")

    n_bits = int(bits_per_user_frame.sum())
    total_errors = 0
    per_user_errors = np.zeros(k, dtype=np.int64)
    trials_done = 0
    block = 0
    while trials_done < cfg.trials:
        n = min(cfg.batch_size, cfg.trials - trials_done)
        errs, per_user = simulate(n, block)
        total_errors += errs
        per_user_errors += per_user
        trials_done += n
        block += 1
        bits_so_far = trials_done * n_bits
        if total_errors > 0:
            ber = total_errors / bits_so_far
            if wilson_halfwidth(total_errors, bits_so_far) < cfg.ci_rel_target * ber:
                break

    return BerRecord(
        scheme=scheme,
        m=m,
        distance_m=distance,
        drop=drop,
        trials=trials_done,
        bits=trials_done * n_bits,
        bit_errors=total_errors,
        per_user_bits=tuple(int(trials_done * b) for b in bits_per_user_frame),
        per_user_errors=tuple(int(e) for e in per_user_errors),
    )


def run_sweep(cfg: RunConfig) -> list[BerRecord]:
    """Simulate every (scheme, M, distance, drop) cell of the configuration.

    Cells execute on a thread pool when cfg.threads > 1; outputs do not
    depend on the schedule because every cell derives its own substreams.
    """
    distances = cfg.distances_m if cfg.distances_m is not None else (None,)
    cells = [
        (scheme, m, dist, drop)
        for scheme in cfg.schemes
        for m in cfg.m_grid
        for dist in distances
        for drop in range(cfg.drops)
    ]
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            records = list(
                pool.map(lambda c: _run_cell(cfg, *c), cells)
            )
    else:
        records = [_run_cell(cfg, *cell) for cell in cells]
    keyed = sorted(
        records,
        key=lambda r: (
            r.scheme,
            r.m,
            r.distance_m if r.distance_m is not None else -1.0,
            r.drop,
        ),
    )
    return keyed


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("scheme", "M", "distance_m", "drop", "trials", "bits", "bit_errors", "ber")


def emit_csv(records: list[BerRecord], path) -> None:
    if not records:
        raise ValueError("no records to emit")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.scheme,
                    r.m,
                    "" if r.distance_m is None else repr(float(r.distance_m)),
                    r.drop,
                    r.trials,
                    r.bits,
                    r.bit_errors,
                    repr(r.ber),
                ]
            )


def parse_csv(path) -> list[BerRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = BerRecord(
                scheme=row["scheme"],
                m=int(row["M"]),
                distance_m=float(row["distance_m"]) if row["distance_m"] else None,
                drop=int(row["drop"]),
                trials=int(row["trials"]),
                bits=int(row["bits"]),
                bit_errors=int(row["bit_errors"]),
            )
            if not math.isclose(rec.ber, float(row["ber"]), rel_tol=1e-12):
                raise ValueError("ber column inconsistent with counts")
            out.append(rec)
    return out


def emit_json_summary(records: list[BerRecord], path, cfg: RunConfig | None = None) -> None:
    if not records:
        raise ValueError("no records to emit")
    cells = []
    for r in records:
        lo, hi = wilson_interval(r.bit_errors, r.bits)
        cells.append(
            {
                "scheme": r.scheme,
                "M": r.m,
                "distance_m": r.distance_m,
                "drop": r.drop,
                "trials": r.trials,
                "bits": r.bits,
                "bit_errors": r.bit_errors,
                "ber": r.ber,
                "wilson_halfwidth": wilson_halfwidth(r.bit_errors, r.bits),
                "wilson_interval": [lo, hi],
                "per_user_bits": list(r.per_user_bits),
                "per_user_errors": list(r.per_user_errors),
            }
        )
    doc = {"version": __version__, "cells": cells}
    if cfg is not None:
        n = cfg.rate_allocation.total_bits
        t = cfg.data_slots + 1
        doc["config"] = _config_echo(cfg)
        doc["rate_accounting"] = {
            "bits_per_frame": n * cfg.data_slots,
            "frame_slots": t,
            "bits_per_data_slot": n,
            "bits_per_slot_with_reference_overhead": n * cfg.data_slots / t,
        }
        if "med" in cfg.schemes:
            doc["notes"] = [
                "med is a reconstructed one-shot amplitude baseline: binary-weighted "
                "max-min sum spacing under the same power caps (original scaling is "
                "external to this codebase)"
            ]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_echo(cfg: RunConfig) -> dict:
    return {
        "schemes": list(cfg.schemes),
        "rate_allocation": [
            [i, q]
            for i, q in zip(
                cfg.rate_allocation.inphase_bits, cfg.rate_allocation.quadrature_bits
            )
        ],
        "m_grid": list(cfg.m_grid),
        "distances_m": None if cfg.distances_m is None else list(cfg.distances_m),
        "trials": cfg.trials,
        "drops": cfg.drops,
        "seed": cfg.master_seed,
        "power_caps_w": list(cfg.power_caps_w),
        "data_slots": cfg.data_slots,
        "dpsk_ring_scale": cfg.dpsk_ring_scale,
        "shadowing": cfg.shadowing,
        "ci_rel_target": cfg.ci_rel_target,
        "batch_size": cfg.batch_size,
        "propagation": {
            "reference_distance_m": cfg.propagation.reference_distance_m,
            "carrier_frequency_hz": cfg.propagation.carrier_frequency_hz,
            "path_loss_exponent": cfg.propagation.path_loss_exponent,
            "shadowing_std_db": cfg.propagation.shadowing_std_db,
            "cell_radius_m": cfg.propagation.cell_radius_m,
            "bandwidth_hz": cfg.propagation.bandwidth_hz,
            "noise_figure_db": cfg.propagation.noise_figure_db,
            "reference_temperature_k": cfg.propagation.reference_temperature_k,
        },
        "noise_power_w": cfg.noise_power_w,
    }
