"""Finite-difference checks over every differentiable operation.

Each case builds toy inputs (and, for blocks, randomly initialized
parameters) from a seed and hands them to :func:`grad_check`.  Block
parameters are passed as ordinary inputs and rebound into their container
on every evaluation, so their gradients are checked too.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .. import tensor as T
from ..attention import (
    da_aifi,
    deformable_attention,
    make_da_aifi,
    make_deform_attn,
    make_shab,
    make_shsa,
    shab_forward,
    shsa_forward,
)
from ..cfsb import cfsb_forward, cfsb_spatial_branch, make_cfsb
from ..gradcheck import GradReport, grad_check
from ..losses import focaler_eiou_loss_t, l1_box_loss_t, varifocal_loss_t
from ..params import ParamStore, rebind
from ..pyramid import (
    FeaturePyramid,
    fsfpn_forward,
    make_fsfpn,
    make_repc3,
    make_repconv,
    repc3_forward,
    repconv_forward,
    sni_upsample,
    spdconv,
)
from ..spectral import Spectrum, cfsb_freq_branch, dft2, freq_filter, idft2
from ..tensor import Tensor
from .config import RunConfig


@dataclass
class Case:
    fn: Callable[..., Tensor]
    inputs: dict
    max_elements: Optional[int] = None


CaseBuilder = Callable[[np.random.Generator, RunConfig], Case]


def _block_case(store: ParamStore, container, forward, data: dict, rng, max_elements=None) -> Case:
    """Check ``forward(container, *data tensors)`` w.r.t. data and every parameter."""
    # redraw parameters around their init, at a scale that keeps activations O(1);
    # zero/one-initialized tensors get perturbed too so nothing sits at a special value
    for name, t in store.items():
        init = store.meta(name)
        if init.kind == "uniform":
            t.data = rng.uniform(-1.5, 1.5, size=t.shape) / np.sqrt(max(init.fan_in, 1))
        else:
            t.data = t.data + rng.uniform(-0.3, 0.3, size=t.shape)
    names = list(store.names())
    olds = [store._tensors[n] for n in names]
    n_data = len(data)

    def fn(*ts):
        mapping = {id(o): t for o, t in zip(olds, ts[n_data:])}
        return forward(rebind(container, mapping), *ts[:n_data])

    inputs = dict(data)
    inputs.update({n: t.data.copy() for n, t in zip(names, olds)})
    return Case(fn, inputs, max_elements)


def _normal(rng, *shape, scale=1.0):
    return rng.standard_normal(shape) * scale


# ------------------------------------------------------------------ cases


def _conv2d(rng, cfg):
    return Case(
        lambda x, w, b: T.conv2d(x, w, b, stride=2, padding=1),
        {"x": _normal(rng, 3, 7, 7), "weight": _normal(rng, 4, 3, 3, 3), "bias": _normal(rng, 4)},
    )


def _conv2d_grouped(rng, cfg):
    return Case(
        lambda x, w, b: T.conv2d(x, w, b, stride=1, padding=1, groups=2),
        {"x": _normal(rng, 4, 5, 5), "weight": _normal(rng, 6, 2, 3, 3), "bias": _normal(rng, 6)},
    )


def _softmax(rng, cfg):
    return Case(lambda x: T.softmax(x, axis=-1), {"x": _normal(rng, 4, 6, scale=2.0)})


def _layer_norm(rng, cfg):
    return Case(
        lambda x, g, b: T.layer_norm(x, g, b),
        {"x": _normal(rng, 5, 8), "gamma": 1 + _normal(rng, 8, scale=0.3), "beta": _normal(rng, 8)},
    )


def _bilinear(rng, cfg):
    # keep points off the integer lattice where the interpolant has kinks
    pts = rng.uniform(-0.8, 5.8, size=(7, 2))
    pts += 0.1 * (np.abs(pts - np.round(pts)) < 0.05)
    return Case(lambda f, p: T.bilinear_sample(f, p), {"feature": _normal(rng, 3, 5, 6), "points": pts})


def _dft2(rng, cfg):
    return Case(lambda x: T.stack([s for s in _parts(dft2(x))]), {"x": _normal(rng, 2, 4, 8)})


def _parts(s: Spectrum):
    return (s.real, s.imag)


def _idft2(rng, cfg):
    def fn(re, im):
        return idft2(Spectrum(re, im, tuple(re.shape[1:])))

    return Case(fn, {"real": _normal(rng, 2, 8, 4), "imag": _normal(rng, 2, 8, 4)})


def _freq_filter(rng, cfg):
    from ..spectral import FreqFilterParams

    def fn(re, im, w, b):
        out = freq_filter(Spectrum(re, im, tuple(re.shape[1:])), FreqFilterParams(w, b))
        return T.stack(list(_parts(out)))

    c = 2
    return Case(
        fn,
        {
            "real": _normal(rng, c, 4, 4),
            "imag": _normal(rng, c, 4, 4),
            "mask_weight": _normal(rng, 2 * c, 2 * c, 1, 1),
            "mask_bias": _normal(rng, 2 * c),
        },
    )


def _cfsb_spatial(rng, cfg):
    store = ParamStore(int(rng.integers(1 << 31)))
    p = make_cfsb(store, 3)
    return _block_case(store, p, lambda p, x: cfsb_spatial_branch(x, p), {"x": _normal(rng, 3, 6, 6)}, rng, 24)


def _cfsb_freq(rng, cfg):
    store = ParamStore(int(rng.integers(1 << 31)))
    p = make_cfsb(store, 3)
    return _block_case(
        store, p, lambda p, x: cfsb_freq_branch(x, p.freq_filter, p.freq_conv), {"x": _normal(rng, 3, 4, 8)}, rng, 24
    )


def _cfsb(rng, cfg):
    store = ParamStore(int(rng.integers(1 << 31)))
    p = make_cfsb(store, 3)
    return _block_case(store, p, lambda p, x: cfsb_forward(x, p, act=True), {"x": _normal(rng, 3, 4, 4)}, rng, 16)


def _shsa(rng, cfg):
    store = ParamStore(int(rng.integers(1 << 31)))
    p = make_shsa(store, 4, d_attn=3)
    return _block_case(store, p, lambda p, x: shsa_forward(x, p), {"x": _normal(rng, 4, 3, 4)}, rng, 24)


def _shab(rng, cfg):
    store = ParamStore(int(rng.integers(1 << 31)))
    p = make_shab(store, 8)
    return _block_case(store, p, lambda p, x: shab_forward(x, p, act=True), {"x": _normal(rng, 8, 3, 3)}, rng, 16)


def _deform(rng, cfg):
    store = ParamStore(int(rng.integers(1 << 31)))
    d, m, k = 8, 2, 3
    p = make_deform_attn(store, d, heads=m, points=k)
    data = {
        "queries": _normal(rng, 5, d, scale=0.5),
        "reference_points": rng.uniform(0.1, 0.9, size=(5, 2)),
        "value_map": _normal(rng, d, 4, 5),
    }
    case = _block_case(store, p, lambda p, q, r, v: deformable_attention(q, r, v, p), data, rng, 16)
    # small offsets keep sampling points inside the map, away from the border
    for name in case.inputs:
        if "offset" in name:
            case.inputs[name] *= 0.2
    return case


def _da_aifi(rng, cfg):
    store = ParamStore(int(rng.integers(1 << 31)))
    d = 8
    p = make_da_aifi(store, d, heads=2, points=2, ffn_mult=2)
    case = _block_case(store, p, lambda p, x: da_aifi(x, p), {"p5": _normal(rng, d, 3, 3)}, rng, 12)
    for name in case.inputs:
        if "offset" in name:
            case.inputs[name] *= 0.2
    return case


def _spdconv(rng, cfg):
    store = ParamStore(int(rng.integers(1 << 31)))
    p = store.conv("spd", 8, 3, 3)
    return _block_case(store, p, lambda p, x: spdconv(x, p), {"x": _normal(rng, 2, 6, 4)}, rng)


def _sni(rng, cfg):
    return Case(lambda x: sni_upsample(x, (6, 8), cfg.sni_variant), {"x": _normal(rng, 3, 3, 4)})


def _repconv(rng, cfg):
    store = ParamStore(int(rng.integers(1 << 31)))
    p = make_repconv(store, 3, 3, identity=True)
    return _block_case(store, p, lambda p, x: repconv_forward(x, p, act=True, mode="train"), {"x": _normal(rng, 3, 5, 5)}, rng)


def _repc3(rng, cfg):
    store = ParamStore(int(rng.integers(1 << 31)))
    p = make_repc3(store, 4, 3, n=2, hidden=2)
    return _block_case(store, p, lambda p, x: repc3_forward(x, p, act=True, mode="train"), {"x": _normal(rng, 4, 4, 4)}, rng, 16)


def _fsfpn(rng, cfg):
    store = ParamStore(int(rng.integers(1 << 31)))
    chans = {"P4": 3, "P5": 4}
    p = make_fsfpn(store, chans, hidden=2, use_cfsb=True, bu_cfsb=True, repc3_depth=1)
    data = {"P4": _normal(rng, 3, 4, 4), "P5": _normal(rng, 4, 2, 2)}

    def forward(p, p4, p5):
        out = fsfpn_forward(FeaturePyramid({"P4": p4, "P5": p5}), p, cfg.sni_variant, act=True)
        return T.concat([T.reshape(out[n], (-1,)) for n in out.names()], axis=0)

    return _block_case(store, p, forward, data, rng, 8)


def _boxes(rng, n):
    """Overlapping box pairs with IoU strictly inside the focaler interval."""
    gt = np.column_stack([rng.uniform(0.3, 0.7, (n, 2)), rng.uniform(0.1, 0.3, (n, 2))])
    pred = gt + np.column_stack([rng.uniform(-0.03, 0.03, (n, 2)), rng.uniform(-0.04, 0.04, (n, 2))])
    return pred, gt


def _vfl(rng, cfg):
    logits = _normal(rng, 6, 2, scale=1.5)
    pos = rng.uniform(size=(6, 2)) < 0.4
    q = rng.uniform(0.2, 0.9, size=(6, 2))
    return Case(lambda z: varifocal_loss_t(z, q, pos, cfg.vfl_alpha, cfg.vfl_gamma), {"logits": logits})


def _l1(rng, cfg):
    pred, gt = _boxes(rng, 5)
    return Case(lambda p, g: l1_box_loss_t(p, g), {"pred": pred, "gt": gt})


def _focaler(rng, cfg):
    pred, gt = _boxes(rng, 5)
    return Case(lambda p, g: focaler_eiou_loss_t(p, g, cfg.focaler_d, cfg.focaler_u), {"pred": pred, "gt": gt})


OPS: dict[str, CaseBuilder] = {
    "conv2d": _conv2d,
    "conv2d_grouped": _conv2d_grouped,
    "softmax": _softmax,
    "layer_norm": _layer_norm,
    "bilinear_sample": _bilinear,
    "dft2": _dft2,
    "idft2": _idft2,
    "freq_filter": _freq_filter,
    "cfsb_spatial_branch": _cfsb_spatial,
    "cfsb_freq_branch": _cfsb_freq,
    "cfsb_forward": _cfsb,
    "shsa": _shsa,
    "shab": _shab,
    "deformable_attention": _deform,
    "da_aifi": _da_aifi,
    "spdconv": _spdconv,
    "sni_upsample": _sni,
    "repconv": _repconv,
    "repc3": _repc3,
    "fsfpn_forward": _fsfpn,
    "varifocal_loss": _vfl,
    "l1_box_loss": _l1,
    "focaler_eiou_loss": _focaler,
}


def corrupted_case(rng: np.random.Generator, cfg: RunConfig) -> Case:
    """Negative control: ``tanh`` whose backward is off by 10%."""

    def bad_tanh(x: Tensor) -> Tensor:
        y = np.tanh(x.data)
        return T.record("bad_tanh", y, (x,), lambda g: (1.1 * g * (1 - y * y),))

    return Case(bad_tanh, {"x": _normal(rng, 6)})


# ----------------------------------------------------------------- runner


@dataclass
class SuiteReport:
    records: list[dict] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.records)

    def failures(self) -> list[dict]:
        return [r for r in self.records if not r["passed"]]

    def worst_by_op(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for r in self.records:
            out[r["op"]] = max(out.get(r["op"], 0.0), r["max_rel_error"])
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1


def run_case(name: str, builder: CaseBuilder, seed: int, cfg: RunConfig, eps: float, tol: float, extended=True) -> GradReport:
    rng = np.random.default_rng([seed, _stable_hash(name)])
    case = builder(rng, cfg)
    return grad_check(
        case.fn, case.inputs, eps=eps, tol=tol, op=name, seed=seed, max_elements=case.max_elements, extended=extended
    )


def _stable_hash(name: str) -> int:
    return int.from_bytes(name.encode()[:8].ljust(8, b"\0"), "little") ^ len(name)


def run_grad_suite(
    cfg: Optional[RunConfig] = None,
    seeds: Sequence[int] = (0, 1, 2),
    eps: float = 1e-5,
    tol: float = 1e-4,
    ops: Optional[dict[str, CaseBuilder]] = None,
) -> SuiteReport:
    """Run every case for every seed; one record per (op, seed)."""
    cfg = cfg or RunConfig()
    ops = OPS if ops is None else ops
    report = SuiteReport()
    start = time.perf_counter()
    for name, builder in ops.items():
        for seed in seeds:
            rec = run_case(name, builder, seed, cfg, eps, tol).as_record()
            rec["seed"] = int(seed)
            report.records.append(rec)
    report.seconds = time.perf_counter() - start
    return report


def eps_sweep(
    name: str = "repconv",
    eps_values: Sequence[float] = (1e-4, 1e-5, 1e-6),
    seed: int = 0,
    cfg: Optional[RunConfig] = None,
) -> dict[float, float]:
    """Worst relative error of one case per step size, with float64 differences.

    Plain double precision exposes both error sources of a central
    difference: truncation growing like eps**2 and rounding like 1/eps.
    """
    cfg = cfg or RunConfig()
    return {e: run_case(name, OPS[name], seed, cfg, e, 1.0, extended=False).worst for e in eps_values}
