"""Golden tensor dumps for the CFSB edge branch, frequency branch and fusion.

Every fixture directory holds its inputs, its parameters and the expected
output, each as one dump file.  Inputs and parameters are rounded to
float32 before the reference is computed, so the stored files describe
the computation exactly; only the stored output carries float32 rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .. import oracles
from .. import tensorio
from ..cfsb import CfsbParams, cfsb_forward, cfsb_spatial_branch
from ..params import ConvParams
from ..spectral import FreqFilterParams, cfsb_freq_branch
from ..tensor import Tensor

FIXTURE_SEED = 20240611
CHANNELS = 4
EXTENTS = (8, 8)
NAMES = ("edge_branch", "freq_branch", "fusion")
SUFFIX = ".fsdt"


def _f32(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def fixture_arrays(seed: int = FIXTURE_SEED) -> dict[str, np.ndarray]:
    """Inputs and parameters shared by all three fixtures."""
    rng = np.random.default_rng(seed)
    c = CHANNELS
    u = lambda *s, scale=0.3: _f32(rng.uniform(-scale, scale, size=s))
    return {
        "x": u(c, *EXTENTS, scale=1.0),
        "spatial1.weight": u(c, c, 3, 3),
        "spatial1.bias": u(c),
        "spatial2.weight": u(c, c, 3, 3),
        "spatial2.bias": u(c),
        "freq_mask.weight": u(2 * c, 2 * c, 1, 1),
        "freq_mask.bias": u(2 * c),
        "freq_out.weight": u(c, c, 1, 1),
        "freq_out.bias": u(c),
        "fuse.weight": u(c, c, 1, 1),
        "fuse.bias": u(c),
    }


def reference_outputs(a: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Step-by-step composition from the loop-based reference kernels."""
    conv1 = (a["spatial1.weight"], a["spatial1.bias"])
    conv2 = (a["spatial2.weight"], a["spatial2.bias"])
    outer = (a["freq_out.weight"], a["freq_out.bias"])
    fuse = (a["fuse.weight"], a["fuse.bias"])
    mw, mb = a["freq_mask.weight"], a["freq_mask.bias"]
    spatial = oracles.spatial_branch(a["x"], conv1, conv2)
    freq = oracles.freq_branch(a["x"], mw, mb, outer)
    return {
        "edge_branch": spatial,
        "freq_branch": freq,
        "fusion": oracles.conv1x1(spatial + freq, *fuse),
    }


def cfsb_params(a: dict[str, np.ndarray]) -> CfsbParams:
    conv = lambda n: ConvParams.from_arrays(a[f"{n}.weight"], a[f"{n}.bias"])
    return CfsbParams(
        spatial_conv1=conv("spatial1"),
        spatial_conv2=conv("spatial2"),
        freq_filter=FreqFilterParams(Tensor(a["freq_mask.weight"]), Tensor(a["freq_mask.bias"])),
        freq_conv=conv("freq_out"),
        fuse_conv=conv("fuse"),
    )


def implementation_outputs(a: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    p = cfsb_params(a)
    x = Tensor(a["x"])
    return {
        "edge_branch": cfsb_spatial_branch(x, p).data,
        "freq_branch": cfsb_freq_branch(x, p.freq_filter, p.freq_conv).data,
        "fusion": cfsb_forward(x, p).data,
    }


@dataclass
class Fixture:
    name: str
    inputs: dict
    expected: np.ndarray


def dump_fixtures(directory: Union[str, Path], seed: int = FIXTURE_SEED) -> list[Path]:
    """Write ``<dir>/<name>/<tensor>.fsdt`` for every fixture; returns the paths."""
    root = Path(directory)
    arrays = fixture_arrays(seed)
    outputs = reference_outputs(arrays)
    written = []
    for name in NAMES:
        sub = root / name
        sub.mkdir(parents=True, exist_ok=True)
        for key, arr in list(arrays.items()) + [("expected", outputs[name])]:
            path = sub / f"{key}{SUFFIX}"
            tensorio.save(path, arr)
            written.append(path)
    return written


def load_fixture(directory: Union[str, Path], name: str) -> Fixture:
    sub = Path(directory) / name
    inputs = {p.name[: -len(SUFFIX)]: tensorio.load(p) for p in sorted(sub.glob(f"*{SUFFIX}"))}
    expected = inputs.pop("expected")
    return Fixture(name, inputs, expected)


def check_fixtures(directory: Union[str, Path], rtol: float = 1e-5, atol: float = 1e-6) -> dict[str, float]:
    """Max abs deviation of the implementation from each stored output.

    Raises ``AssertionError`` when any fixture falls outside tolerance.
    """
    out = {}
    for name in NAMES:
        fx = load_fixture(directory, name)
        got = implementation_outputs(fx.inputs)[name]
        np.testing.assert_allclose(got, fx.expected, rtol=rtol, atol=atol, err_msg=name)
        out[name] = float(np.abs(got - fx.expected).max())
    return out
