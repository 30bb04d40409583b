"""Randomized train-vs-deploy agreement for RepConv and RepC3."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..params import ParamStore
from ..pyramid import deploy, deploy_repc3, make_repc3, make_repconv, repc3_forward, repconv_forward
from ..tensor import Tensor


@dataclass
class ReparamReport:
    trials: int
    max_diff_repconv: float
    max_diff_repc3: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.max_diff_repconv, self.max_diff_repc3) < self.tol

    def as_record(self) -> dict:
        return {
            "check": "reparam",
            "trials": self.trials,
            "max_diff_repconv": self.max_diff_repconv,
            "max_diff_repc3": self.max_diff_repc3,
            "tol": self.tol,
            "passed": self.passed,
        }


def verify_reparameterization(trials: int = 50, seed: int = 0, tol: float = 1e-6) -> ReparamReport:
    """Max-norm gap between branch and merged outputs over random instances.

    Channel counts, spatial extents, stride, identity branch and activation
    are all drawn per trial.
    """
    rng = np.random.default_rng(seed)
    worst_conv = worst_c3 = 0.0
    for t in range(trials):
        c_in = int(rng.integers(1, 7))
        identity = bool(rng.integers(2))
        c_out = c_in if identity else int(rng.integers(1, 7))
        stride = 1 if identity else int(rng.integers(1, 3))
        h, w = (int(v) for v in rng.integers(3, 10, size=2))
        act = bool(rng.integers(2))
        store = ParamStore(int(rng.integers(1 << 31)))
        p = make_repconv(store.scope("rc"), c_in, c_out, identity=identity, stride=stride)
        x = Tensor(rng.standard_normal((c_in, h, w)))
        train = repconv_forward(x, p, act=act, mode="train").data
        deploy(p)
        merged = repconv_forward(x, p, act=act, mode="deploy").data
        worst_conv = max(worst_conv, float(np.abs(train - merged).max()))

        hid = int(rng.integers(1, 6))
        c3 = make_repc3(store.scope("c3"), c_in, c_out, n=int(rng.integers(1, 4)), hidden=hid)
        train = repc3_forward(x, c3, act=act, mode="train").data
        deploy_repc3(c3)
        merged = repc3_forward(x, c3, act=act, mode="deploy").data
        worst_c3 = max(worst_c3, float(np.abs(train - merged).max()))
    return ReparamReport(trials, worst_conv, worst_c3, tol)
