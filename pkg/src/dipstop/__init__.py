"""Single-image denoising with unbiased risk estimates and automatic stopping.

Fit a randomly initialized hourglass network to one noisy observation,
optimize a Stein (Gaussian) or Poisson unbiased risk estimate instead of
the raw data fit, average the iterates, and stop when the windowed loss
first crosses zero. Ground-truth-based degrees-of-freedom diagnostics
explain where the stopping rule lands.
"""

from .errors import (
    CapabilityError,
    ConfigError,
    DipstopError,
    DomainError,
    IOFailureError,
    NonFiniteLossError,
    ShapeError,
    SizeError,
)
from .diagnostics import (
    CrossingReport,
    RunCurves,
    TrajectoryBundle,
    build_bundle,
    crossing_report,
    export_curves,
    import_curves,
)
from .image import Image, NoiseSpec, QualityReport
from .io import read_image, write_image
from .metrics import evaluate, psnr, ssim
from .network import ArchSpec, DenoiserNetwork, forward, init_network, load_checkpoint, save_checkpoint
from .noise import add_gaussian_noise, add_poisson_noise, apply_noise
from .optimizer import (
    DenoiseResult,
    RunConfig,
    RunTrace,
    TraceRecord,
    ema_update,
    iteration_rng,
    optimize,
    read_trace,
    run_baseline_dip,
    write_trace_csv,
    write_trace_ndjson,
    zero_crossing_index,
)
from .phantoms import PHANTOM_KINDS, generate_phantom
from .probes import ProbeVector, make_probe
from .risk import (
    RiskEstimate,
    df_gt,
    estimate_optimism,
    mc_divergence,
    mse,
    pure_loss,
    sample_ste_randomness,
    ste_loss,
    sure_loss,
)

__version__ = "0.1.0"

__all__ = [
    "ArchSpec",
    "CapabilityError",
    "ConfigError",
    "CrossingReport",
    "DenoiseResult",
    "DenoiserNetwork",
    "DipstopError",
    "DomainError",
    "IOFailureError",
    "Image",
    "NoiseSpec",
    "NonFiniteLossError",
    "PHANTOM_KINDS",
    "ProbeVector",
    "QualityReport",
    "RiskEstimate",
    "RunConfig",
    "RunCurves",
    "RunTrace",
    "ShapeError",
    "SizeError",
    "TraceRecord",
    "TrajectoryBundle",
    "add_gaussian_noise",
    "add_poisson_noise",
    "apply_noise",
    "build_bundle",
    "crossing_report",
    "df_gt",
    "ema_update",
    "estimate_optimism",
    "evaluate",
    "export_curves",
    "forward",
    "generate_phantom",
    "import_curves",
    "init_network",
    "iteration_rng",
    "load_checkpoint",
    "make_probe",
    "mc_divergence",
    "mse",
    "optimize",
    "psnr",
    "pure_loss",
    "read_image",
    "read_trace",
    "run_baseline_dip",
    "sample_ste_randomness",
    "save_checkpoint",
    "ssim",
    "ste_loss",
    "sure_loss",
    "write_image",
    "write_trace_csv",
    "write_trace_ndjson",
    "zero_crossing_index",
    "__version__",
]
