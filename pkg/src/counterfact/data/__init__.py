"""Dataset schema, Israel-format CSV ingestion and synthetic bundles."""

from counterfact.data.loader import load_dataset, save_dataset
from counterfact.data.schema import (
    AGE_LABELS,
    REFERENCE_AGE_LABEL,
    AgeGroup,
    DataError,
    ObservedDataset,
    derive_vacc_fractions,
    derive_waning_dist,
)
from counterfact.data.synthetic import SyntheticSpec, generate_synthetic, write_bundle

__all__ = [
    "AGE_LABELS",
    "REFERENCE_AGE_LABEL",
    "AgeGroup",
    "DataError",
    "ObservedDataset",
    "SyntheticSpec",
    "derive_vacc_fractions",
    "derive_waning_dist",
    "generate_synthetic",
    "load_dataset",
    "save_dataset",
    "write_bundle",
]
