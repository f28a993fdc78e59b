"""Sampling-free probabilistic GRU: deterministic mean/variance propagation.

Lazy re-exports keep `import spgru` light so the CLI can pin BLAS thread
environment variables before numpy loads.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "Family": "families",
    "NaturalParams": "families",
    "MomentTensor": "families",
    "to_moments": "families",
    "from_moments": "families",
    "sample": "families",
    "NmmConstants": "moments",
    "LinearLayerParams": "moments",
    "lmm": "moments",
    "nmm_sigmoid_gauss": "moments",
    "nmm_tanh_gauss": "moments",
    "nmm_gamma": "moments",
    "nmm_poisson": "moments",
    "Tape": "autodiff",
    "Var": "autodiff",
    "grad_check": "autodiff",
    "NetworkConfig": "cell",
    "SpGruParams": "cell",
    "CellState": "cell",
    "cell_step": "cell",
    "unroll": "cell",
    "init_params": "cell",
    "TrainConfig": "training",
    "OptimState": "training",
    "adam_step": "training",
    "train": "training",
    "loss_bce_mean": "training",
    "loss_gaussian_nll": "training",
    "TrajectoryConfig": "data",
    "SequenceBatch": "data",
    "generate": "data",
    "deviation_suite": "data",
    "load_idx": "data",
    "uncertainty_metric": "metrics",
    "UncertaintyMetric": "metrics",
    "save_checkpoint": "checkpoint",
    "load_checkpoint": "checkpoint",
    "RunConfig": "config",
    "load_config": "config",
    "parse_config": "config",
}


def __getattr__(name):
    mod = _EXPORTS.get(name)
    if mod is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    import importlib

    return getattr(importlib.import_module(f".{mod}", __name__), name)


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
