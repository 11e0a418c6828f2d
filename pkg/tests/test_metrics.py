import math

import numpy as np
import pytest

from refpcc.codec import LOSSLESS, compress, decompress
from refpcc.errors import ParameterError
from refpcc.geom import PointCloud
from refpcc.metrics import (PSNR_CAP, QualityReport, chamfer, chamfer_sym, compression_report,
                            estimate_normals, format_table, psnr_point_to_plane)
from refpcc.refstore import ReferenceDataset

from conftest import random_cloud_points


def test_chamfer_examples():
    assert chamfer([[0, 0, 0]], [[0, 0, 0.4]]) == pytest.approx(0.4, rel=1e-15)
    assert chamfer_sym([[0, 0, 0]], [[0, 0, 0.4], [0, 0, -0.4]]) == pytest.approx(0.4)
    p = np.random.default_rng(0).random((100, 3))
    assert chamfer(p, p) == 0.0
    with pytest.raises(ParameterError):
        chamfer(np.zeros((0, 3)), p)


def test_chamfer_matches_quadratic_oracle(rng):
    for _ in range(3):
        p, q = rng.random((2000, 3)), rng.random((1800, 3)) * 1.1
        dist = np.sqrt(((p[:, None, :] - q[None, :, :]) ** 2).sum(axis=2))
        expected = dist.min(axis=1).mean()
        assert abs(chamfer(p, q) - expected) <= 1e-12 * expected
        sym = (expected + dist.min(axis=0).mean()) / 2
        assert abs(chamfer_sym(p, q) - sym) <= 1e-12 * sym
        assert chamfer_sym(p, q) == chamfer_sym(q, p)


def test_chamfer_zero_iff_subset(rng):
    p = rng.random((300, 3))
    assert chamfer(p[:100], p) == 0.0
    assert chamfer(p, p[:100]) > 0.0


def grid(n=40, spacing=0.1):
    u, v = np.meshgrid(np.arange(n) * spacing, np.arange(n) * spacing, indexing="ij")
    return np.stack([u.ravel(), v.ravel(), np.zeros(n * n)], axis=1)


def test_normals_on_plane():
    normals, planar = estimate_normals(grid())
    assert planar.all()
    assert np.allclose(np.abs(normals[:, 2]), 1.0)


def test_normals_degenerate_line():
    line = np.stack([np.arange(50.0), np.zeros(50), np.zeros(50)], axis=1)
    _, planar = estimate_normals(line)
    assert not planar.any()
    assert psnr_point_to_plane(line, line + [0, 0, 0.1]) is None


def test_psnr_identity_and_in_plane_shift():
    g = grid()
    assert psnr_point_to_plane(g, g) == PSNR_CAP
    assert psnr_point_to_plane(g, g + [0.03, 0, 0]) == PSNR_CAP


def test_psnr_lifted_plane_closed_form():
    g = grid()
    diag = float(np.linalg.norm(g.max(axis=0) - g.min(axis=0)))
    got = psnr_point_to_plane(g, g + [0, 0, 0.01])
    assert got == pytest.approx(10 * math.log10(diag**2 / 1e-4), abs=1e-9)


def test_psnr_monotone_in_out_of_plane_noise():
    g = grid()
    noise = np.random.default_rng(5).standard_normal(len(g))
    values = []
    for amp in (0.001, 0.005, 0.01, 0.05, 0.1):
        lifted = g.copy()
        lifted[:, 2] += amp * noise
        values.append(psnr_point_to_plane(g, lifted))
    assert all(a > b for a, b in zip(values, values[1:]))


def test_psnr_needs_enough_points():
    with pytest.raises(ParameterError):
        psnr_point_to_plane(np.zeros((5, 3)), np.zeros((5, 3)))


def test_compression_report_lossless(rng):
    cloud = PointCloud(random_cloud_points(rng, 2000), id=4)
    c = compress(cloud, None, None, LOSSLESS)
    rep = compression_report(cloud, c, decompress(c))
    assert rep.chamfer_sym == 0.0
    assert rep.raw_bytes == 12 * 2000
    assert rep.compression_ratio == 12 * 2000 / len(c)
    assert QualityReport.from_record(rep.to_record()) == rep
    assert "ratio" in format_table([rep])


def test_self_compression_ratio_at_50k(rng):
    cloud = PointCloud(random_cloud_points(rng, 50_000), id=1)
    c = compress(cloud, ReferenceDataset.from_clouds([cloud]), None)
    rep = compression_report(cloud, c, decompress(c, ReferenceDataset.from_clouds([cloud])))
    assert rep.compression_ratio >= 100
    assert rep.chamfer_sym == 0.0
