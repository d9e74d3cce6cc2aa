"""Noncoherent non-orthogonal multiuser massive MIMO toolkit.

Builds uniquely-decomposable PAM/QAM constellation groups, the two-slot
reference+data multiuser modulation on top of them, the pairwise noncoherent
ML detector that needs only large-scale channel statistics, the closed-form
max-min KL-divergence power/assignment design with brute-force oracles, and
a reproducible Monte Carlo BER harness with three benchmark receivers.
"""

__version__ = "0.1.0"

from .constellations import (  # noqa: F401
    Constellation,
    RateAllocation,
    UdcgDecomposition,
    build_pam_udcg,
    build_qam_udcg,
    normalized_energy,
    sub_constellation_energies,
    verify_unique_decomposition,
)
from .mustm import (  # noqa: F401
    Codebook,
    SignalMatrix,
    SystemProfile,
    build_codebook,
    encode,
    gram,
    gram_from_stats,
    verify_identifiability,
)
from .optimizer import (  # noqa: F401
    DesignSolution,
    KlBreakdown,
    kl_breakdown,
    kl_divergence,
    maximin_ratio_assignment,
    solve_design,
    solve_design_bruteforce,
    worst_case_pair_bruteforce,
    worst_case_pair_closed_form,
)
from .channel import (  # noqa: F401
    ChannelRealization,
    PropagationParams,
    noise_power,
    path_loss_linear,
    place_users_uniform,
    substream,
    transmit,
)
from .detectors import (  # noqa: F401
    DetectionResult,
    build_dpsk_design,
    build_med_design,
    build_zf_ls_design,
    dpsk_noncoherent_detect,
    med_oneshot_detect,
    ml_noncoherent_generic,
    ml_noncoherent_pairwise,
    zf_ls_coherent_detect,
)
from .harness import (  # noqa: F401
    BerRecord,
    RunConfig,
    emit_csv,
    emit_json_summary,
    load_config,
    run_sweep,
)
