from .base import (
    DomainObjective,
    MultiDomainProblem,
    TotalObjective,
    sample_domain_minibatch,
    total_gradient,
    total_loss,
)
from .fakeflat import FakeFlatDomain, FakeFlatLandscape, build_fake_flat
from .mlp import (
    MlpObjective,
    SyntheticDomainDataset,
    init_mlp_params,
    make_shifted_blob_dataset,
    mlp_problem_from_dataset,
)
from .quadratic import LinearObjective, QuadraticDomainEnsemble, QuadraticObjective
from .statloss import POINTWISE_FAMILIES, FiniteSupportStatLoss

__all__ = [
    "DomainObjective",
    "MultiDomainProblem",
    "TotalObjective",
    "total_loss",
    "total_gradient",
    "sample_domain_minibatch",
    "FakeFlatDomain",
    "FakeFlatLandscape",
    "build_fake_flat",
    "QuadraticObjective",
    "LinearObjective",
    "QuadraticDomainEnsemble",
    "FiniteSupportStatLoss",
    "POINTWISE_FAMILIES",
    "MlpObjective",
    "SyntheticDomainDataset",
    "make_shifted_blob_dataset",
    "mlp_problem_from_dataset",
    "init_mlp_params",
]
