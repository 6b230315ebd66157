"""Robust multilinear principal component analysis for tensor data.

The package fits Tucker-style low multilinear rank models that tolerate
cellwise outliers, casewise outliers and missing cells, and provides the
classical (non-robust) fit, outlier diagnostics, and a simulation benchmark.

Submodules are imported lazily so that the command line entry point can pin
threading environment variables before numpy is loaded.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "unfold": "tensor",
    "fold": "tensor",
    "vec": "tensor",
    "mode_product": "tensor",
    "multi_mode_product": "tensor",
    "contracted_product": "tensor",
    "inner": "tensor",
    "frobenius_norm": "tensor",
    "kron_all": "tensor",
    "pseudo_solve": "tensor",
    "RhoSpec": "kernels",
    "MScaleSpec": "kernels",
    "mscale": "kernels",
    "mscale_grid": "kernels",
    "MpcaModel": "mpca",
    "mpca_fit": "mpca",
    "mpca_reconstruct": "mpca",
    "ScreenResult": "screening",
    "screen": "screening",
    "select_clean_subset": "screening",
    "RompcaConfig": "solver",
    "RompcaModel": "solver",
    "irls_fit": "solver",
    "initialize": "solver",
    "select_ranks": "solver",
    "impute_samples": "solver",
    "DiagnosticsReport": "diagnostics",
    "build_report": "diagnostics",
    "cellmap": "diagnostics",
    "slice_cellmap": "diagnostics",
    "case_cutoff": "diagnostics",
    "residual_distance_table": "diagnostics",
    "SimDataset": "simulation",
    "generate_clean": "simulation",
    "contaminate_cellwise": "simulation",
    "contaminate_casewise": "simulation",
    "add_missing": "simulation",
    "make_scenario_dataset": "simulation",
    "mse_regular": "simulation",
    "BenchmarkConfig": "simulation",
    "run_benchmark": "simulation",
    "write_dataset": "fileio",
    "read_dataset": "fileio",
    "save_model": "fileio",
    "load_model": "fileio",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    if name in _EXPORTS:
        import importlib

        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        value = getattr(module, name)
        globals()[name] = value
        return value
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return __all__
