from .fileio import HDTError, hdt_decode, hdt_encode, hdt_read, hdt_write, pgm_export, read_pgm
from .metrics import (
    CSV_COLUMNS,
    MetricReport,
    accuracy,
    boundary,
    confusion,
    dice,
    hd95,
    iou,
    recall,
    surface_distances,
    write_csv,
)
from .synthetic import SyntheticDataset, gen_synthetic

__all__ = [
    "CSV_COLUMNS",
    "HDTError",
    "MetricReport",
    "SyntheticDataset",
    "accuracy",
    "boundary",
    "confusion",
    "dice",
    "gen_synthetic",
    "hd95",
    "hdt_decode",
    "hdt_encode",
    "hdt_read",
    "hdt_write",
    "iou",
    "pgm_export",
    "read_pgm",
    "recall",
    "surface_distances",
    "write_csv",
]
