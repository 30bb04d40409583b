import json

import numpy as np
import pytest

from fsdetr.harness.gradsuite import OPS, SuiteReport, corrupted_case, eps_sweep, run_grad_suite

REQUIRED = {
    "conv2d", "softmax", "bilinear_sample", "dft2", "idft2", "freq_filter", "cfsb_spatial_branch",
    "cfsb_freq_branch", "cfsb_forward", "shsa", "shab", "deformable_attention", "da_aifi", "spdconv",
    "sni_upsample", "repconv", "repc3", "fsfpn_forward", "varifocal_loss", "l1_box_loss", "focaler_eiou_loss",
}


def test_every_operation_registered():
    assert REQUIRED <= set(OPS)


def test_small_ops_pass_and_report():
    names = ["conv2d", "softmax", "sni_upsample", "l1_box_loss"]
    report = run_grad_suite(seeds=(0,), ops={n: OPS[n] for n in names})
    assert report.passed and report.exit_code == 0
    assert set(report.worst_by_op()) == set(names)
    rows = [json.loads(line) for line in report.to_jsonl().splitlines()]
    assert all("max_rel_error" in r and r["seed"] == 0 for r in rows)


def test_negative_control_fails():
    report = run_grad_suite(seeds=(0, 1), ops={"corrupted": corrupted_case})
    assert not report.passed and report.exit_code == 1
    assert len(report.failures()) == 2
    assert report.worst_by_op()["corrupted"] > 0.05


def test_empty_report_passes():
    assert SuiteReport().passed


def test_eps_sweep_minimum_near_1e5():
    errs = eps_sweep("repconv", (1e-4, 1e-5, 1e-6))
    assert min(errs, key=errs.get) == 1e-5
