"""Python front end for the rgsym C++ core."""

import csv
import io
import json

from ._core import (
    CumulantExpansionInvalid,
    DomainError,
    IoError,
    NonFiniteError,
    RgsymError,
    ShapeError,
    code_version,
    dataset,
    decimate,
    linear_surface,
    reconstruct_density,
    scale_cumulant,
)
from . import _core

__version__ = code_version()


def cumulants(samples, max_order=4):
    """Cumulant tensors of a sample array, as a dict with keys g1..g<max_order>."""
    return json.loads(_core.cumulants_json(samples, max_order))


def symmetry_residuals(w0, w1, w2, b1=0.0, b2=0.0, tol=1e-4):
    return json.loads(_core.symmetry_residuals(w0, w1, w2, b1, b2, tol))


def certificate_grid_search(alpha=0.5, columns_same=False, step=0.05):
    return json.loads(_core.certificate_grid_search_json(alpha, columns_same, step))


def normalised_kl(net_samples, truth_samples):
    return json.loads(_core.normalised_kl_json(net_samples, truth_samples))


def run_experiment(config):
    """Run an experiment from a config dict. Returns (rows, manifest)."""
    text, manifest = _core.run_experiment_json(json.dumps(config))
    return list(csv.DictReader(io.StringIO(text))), json.loads(manifest)


__all__ = [
    "CumulantExpansionInvalid",
    "DomainError",
    "IoError",
    "NonFiniteError",
    "RgsymError",
    "ShapeError",
    "certificate_grid_search",
    "code_version",
    "cumulants",
    "dataset",
    "decimate",
    "linear_surface",
    "normalised_kl",
    "reconstruct_density",
    "run_experiment",
    "scale_cumulant",
    "symmetry_residuals",
]
