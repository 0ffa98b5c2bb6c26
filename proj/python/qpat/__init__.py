"""Optical inversion for quantitative photoacoustic tomography.

The C++ extension module does the work; this package adds small conveniences
for passing nested configuration as plain dicts.
"""

import json as _json

from ._qpat import (
    InterpolationOperator,
    QpatConfigError,
    QpatNumericalError,
    TetMesh,
    __version__,
    build_interpolation,
    diffusivity,
    generate_box_mesh,
    load_mesh,
    r_value,
    save_mesh,
    test2_phantom_json,
)
from ._qpat import check_jacobian as _check_jacobian
from ._qpat import forward as _forward
from ._qpat import rasterize_phantom as _rasterize_phantom
from ._qpat import reconstruct as _reconstruct
from ._qpat import simulate as _simulate


def _as_json(obj):
    if isinstance(obj, str):
        return obj
    return _json.dumps(obj)


def test2_phantom():
    """The Test-2 desk phantom as a dict."""
    return _json.loads(test2_phantom_json())


def rasterize_phantom(mesh, phantom):
    return _rasterize_phantom(mesh, _as_json(phantom))


def forward(mesh, kappa, mu, illuminations):
    return _forward(mesh, kappa, mu, _as_json(illuminations))


def simulate(
    fine,
    phantom,
    illuminations,
    coarse,
    noise_level=0.01,
    seed=0,
    sigma_floor=1e-12,
    model_error_sigma=True,
):
    return _simulate(
        fine,
        _as_json(phantom),
        _as_json(illuminations),
        coarse,
        noise_level,
        seed,
        sigma_floor,
        model_error_sigma,
    )


def reconstruct(coarse, chi, sigma, illuminations, recon=None):
    return _reconstruct(coarse, chi, sigma, _as_json(illuminations), _as_json(recon or {}))


def check_jacobian(mesh, illuminations, seed=0):
    return _check_jacobian(mesh, _as_json(illuminations), seed)


__all__ = [
    "InterpolationOperator",
    "QpatConfigError",
    "QpatNumericalError",
    "TetMesh",
    "__version__",
    "build_interpolation",
    "check_jacobian",
    "diffusivity",
    "forward",
    "generate_box_mesh",
    "load_mesh",
    "r_value",
    "rasterize_phantom",
    "reconstruct",
    "save_mesh",
    "simulate",
    "test2_phantom",
    "test2_phantom_json",
]
