"""Command-line front end: design, verify, sweep and kl subcommands.

Exit codes: 0 success, 2 configuration/usage error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .channel import large_scale_gains, noise_power
from .constellations import (
    all_rate_allocations,
    build_qam_udcg,
    verify_unique_decomposition,
)
from .harness import ConfigError, emit_csv, emit_json_summary, load_config, run_sweep
from .mustm import Codebook, SystemProfile, verify_identifiability
from .optimizer import (
    kl_breakdown,
    kl_divergence,
    maximin_ratio_bruteforce,
    solve_design,
    worst_case_pair_bruteforce,
    worst_case_pair_closed_form,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, help="path to a flat JSON run config")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--threads", type=int, help="worker threads (or NN_MMIMO_THREADS)")
    parser.add_argument("--out", type=str, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nn-mmimo",
        description="noncoherent multiuser massive-MIMO design and simulation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_design = sub.add_parser("design", help="print the closed-form power design")
    _add_common(p_design)

    p_verify = sub.add_parser(
        "verify", help="run identifiability and optimizer oracle suites"
    )
    _add_common(p_verify)
    p_verify.add_argument("--max-bits", type=int, default=6)
    p_verify.add_argument("--max-users", type=int, default=3)

    p_sweep = sub.add_parser("sweep", help="run the Monte Carlo BER sweep")
    _add_common(p_sweep)

    p_kl = sub.add_parser("kl", help="evaluate the KL divergence of two codewords")
    _add_common(p_kl)
    p_kl.add_argument("--pair", type=int, nargs=2, metavar=("I", "J"), required=True)

    return parser


def _resolve_threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("NN_MMIMO_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"bad NN_MMIMO_THREADS value: {env!r}") from exc
    return 1


def _load(args):
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = int(args.seed)
    overrides["threads"] = _resolve_threads(args)
    if args.out is not None:
        overrides["out_dir"] = args.out
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    return cfg


def _design_inputs(cfg):
    """Profile for a deterministic drop: users at configured distances, no
    shadowing draw (the design depends only on large-scale statistics)."""
    if cfg.distances_m is None:
        raise ConfigError("design requires distances_m in the config")
    if len(cfg.distances_m) != cfg.n_users:
        raise ConfigError("design requires one distance per user")
    beta = large_scale_gains(
        np.asarray(cfg.distances_m), np.zeros(cfg.n_users), cfg.propagation
    )
    profile, order = SystemProfile.from_unsorted(
        cfg.power_caps_w, beta, noise_power(cfg.propagation)
    )
    return profile, order


def cmd_design(args) -> int:
    cfg = _load(args)
    profile, order = _design_inputs(cfg)
    basis = build_qam_udcg(cfg.rate_allocation, 1.0)
    sol = solve_design(profile, basis)
    doc = {
        "d_star": sol.d_star,
        "p_star": sol.p_star.tolist(),
        "pi_star": sol.pi_star.tolist(),
        "worst_pair_value": sol.worst_pair_value,
        "binding_users": list(sol.binding_users),
        "user_order_by_effective_cap": order.tolist(),
        "gains": list(profile.gains),
        "noise_power_w": profile.noise_power,
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    max_bits = args.max_bits
    max_users = args.max_users
    failures = []

    from .constellations import sub_constellation_energies

    for alloc in all_rate_allocations(max_bits, max_users):
        u = build_qam_udcg(alloc, 1.0)
        if not verify_unique_decomposition(u):
            failures.append(f"unique decomposition failed: {alloc}")
            continue
        # any positive feasible power works for these structural checks
        energies = sub_constellation_energies(u)
        p = 1.0 / np.sqrt(energies)
        cap = 2.0 * float(np.sqrt(energies).max())
        profile = SystemProfile(
            (cap,) * alloc.n_users, (1.0,) * alloc.n_users, 0.25
        )
        cb = Codebook(u, p, np.arange(alloc.n_users), profile)
        if not verify_identifiability(cb):
            failures.append(f"identifiability failed: {alloc}")
        closed = worst_case_pair_closed_form(u, p, profile.noise_power)
        brute = worst_case_pair_bruteforce(u, p, profile.noise_power)
        if abs(closed.value - brute.value) > 1e-9 * max(brute.value, 1e-30):
            failures.append(f"worst-pair mismatch: {alloc}")

    rng = np.random.default_rng(7)
    for _ in range(20):
        k = int(rng.integers(2, 7))
        a = np.sort(rng.uniform(0.5, 4.0, size=k))
        b = np.sort(rng.uniform(0.5, 4.0, size=k))
        best, _ = maximin_ratio_bruteforce(a, b)
        if float(np.min(a / b)) < best - 1e-12:
            failures.append("identity assignment beaten by a permutation")
            break

    for msg in failures:
        print(f"FAIL {msg}", file=sys.stderr)
    if failures:
        return EXIT_VERIFY
    print(f"verify: all checks passed (N <= {max_bits}, K <= {max_users})")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    records = run_sweep(cfg)
    out_dir = cfg.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "ber.csv")
    json_path = os.path.join(out_dir, "summary.json")
    emit_csv(records, csv_path)
    emit_json_summary(records, json_path, cfg)
    print(f"wrote {csv_path} and {json_path} ({len(records)} cells)")
    return EXIT_OK


def cmd_kl(args) -> int:
    cfg = _load(args)
    profile, _ = _design_inputs(cfg)
    basis = build_qam_udcg(cfg.rate_allocation, 1.0)
    sol = solve_design(profile, basis)
    scaled = build_qam_udcg(cfg.rate_allocation, sol.d_star)
    cb = Codebook(scaled, sol.p_star, sol.pi_star, profile)
    i, j = args.pair
    if not (0 <= i < cb.size and 0 <= j < cb.size):
        raise ConfigError(f"codeword indices must lie in [0, {cb.size})")
    value = kl_divergence(cb.entry(i), cb.entry(j), profile)
    split = kl_breakdown(cb.p, cb.symbols[i], cb.symbols[j], profile.noise_power)
    print(
        json.dumps(
            {
                "pair": [i, j],
                "kl_single_antenna": value,
                "f1": split.f1,
                "f2": split.f2,
            },
            indent=2,
        )
    )
    return EXIT_OK


_COMMANDS = {
    "design": cmd_design,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
    "kl": cmd_kl,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage; normalize its code
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(cli_main())
