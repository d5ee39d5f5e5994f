"""Meta-gradient pseudo-label training for semi-supervised classification."""

from ._core import (
    Dataset,
    MlpClassifier,
    exact_meta_gradient,
    first_order_meta_gradient,
    fit,
    gen_blobs,
    gen_two_moons,
    gradcheck_sweep,
    hypergrad_oracle,
    hypergrad_triangle,
    init_pseudo_labels,
    load_csv,
    mixup,
    run_suite,
    sample_beta,
    suite_names,
)

__all__ = [
    "Dataset",
    "MlpClassifier",
    "exact_meta_gradient",
    "first_order_meta_gradient",
    "fit",
    "gen_blobs",
    "gen_two_moons",
    "gradcheck_sweep",
    "hypergrad_oracle",
    "hypergrad_triangle",
    "init_pseudo_labels",
    "load_csv",
    "mixup",
    "run_suite",
    "sample_beta",
    "suite_names",
]
