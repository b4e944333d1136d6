"""Acceptance criteria, one test each.

The terminal summary prints one PASS/FAIL line per criterion, taken from the
first line of each docstring.
"""

import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import integrate, stats
from threadpoolctl import threadpool_limits

from nskrig.basis import empirical_cov, eof_decompose, kl_truncated_cov
from nskrig.convolution import (
    ConvolutionGrid,
    discrete_convolution_cov,
    simulate_discrete_convolution,
    simulate_gp,
)
from nskrig.engine import ModelFit, SpatialDataset, basis_grid, fit_two_stage, krige, log_likelihood, trend_design
from nskrig.fields import (
    ConstantKernelField,
    CovariateKernelField,
    CovariateScalarField,
    KernelMatrix,
    MixtureKernelField,
    MixtureScalarField,
)
from nskrig.nonstationary import NonstationarySpec, build_cov_matrix, cov_H
from nskrig.stationary import IsotropicParams, StationarySpec, correlation, exponential, matern, nnd_check

FAMILIES = [("exponential", 0.5), ("matern", 1.5), ("gaussian", 0.5)]


def random_kernel(rng, d=2):
    if d == 1:
        return KernelMatrix([[rng.uniform(0.02, 1.5)]])
    return KernelMatrix.from_spectral(*np.exp(rng.uniform(-5, -1, 2)), rng.uniform(0, np.pi))


def random_ns_spec(rng, X):
    """Random C^NS spec with a mixture or covariate-driven kernel field."""
    family, nu = FAMILIES[rng.integers(3)]
    if rng.uniform() < 0.5:
        M = int(rng.integers(1, 7))
        B = rng.uniform(size=(M, 2)) + 1e-9 * np.arange(M)[:, None]
        kernel = MixtureKernelField(B, [random_kernel(rng) for _ in range(M)], rng.uniform(0.05, 0.5))
        sigma = MixtureScalarField(B, rng.uniform(0.3, 3.0, M), rng.uniform(0.05, 0.5))
        Z = None
    else:
        Z = rng.normal(size=(len(X), 2))
        kernel = CovariateKernelField(
            np.r_[rng.uniform(-5, -1), rng.normal(0, 0.5, 2)],
            np.r_[rng.uniform(-5, -1), rng.normal(0, 0.5, 2)],
            np.r_[rng.uniform(0, np.pi), rng.normal(0, 1.0, 2)],
        )
        sigma = CovariateScalarField(np.r_[0.0, rng.normal(0, 0.5, 2)])
    return NonstationarySpec(kernel, sigma, nu, family), Z


def test_criterion_1_validity_suite():
    """criterion 1: 50 random C^NS configurations pass nnd_check (tol 1e-8 max diag) in < 10 s"""
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    for case in range(50):
        X = rng.uniform(size=(int(rng.integers(2, 41)), 2))
        spec, Z = random_ns_spec(rng, X)
        C = build_cov_matrix(spec, X, Z)
        ok, lam = nnd_check(C, tol=1e-8)
        assert ok, f"case {case}: min eigenvalue {lam} ({spec.family})"
    assert time.perf_counter() - start < 10.0


def test_criterion_2_stationary_reduction():
    """criterion 2: constant-field C^NS equals sigma^2 g(|Sigma^-1/2 h|) to 1e-12; Matern(0.5) = exponential to 1e-10"""
    rng = np.random.default_rng(2)
    for _ in range(100):
        family, nu = FAMILIES[rng.integers(3)]
        K = random_kernel(rng)
        sigma = rng.uniform(0.5, 2.0)
        spec = NonstationarySpec(ConstantKernelField(K), sigma, nu, family)
        s, s2 = rng.uniform(size=(2, 2))
        w, V = np.linalg.eigh(K.matrix)
        r = np.linalg.norm((V / np.sqrt(w)).T @ (s - s2))
        expected = sigma**2 * correlation(r, family, nu)
        assert abs(spec.cross(s[None], s2[None])[0, 0] - expected) <= 1e-12
    h = np.linspace(0.0, 10.0, 1000)
    for var, phi in ((1.0, 1.0), (2.3, 0.17), (0.4, 4.0)):
        diff = matern(h, IsotropicParams(var, phi, 0.5)) - exponential(h, var, phi)
        assert np.max(np.abs(diff)) <= 1e-10


def test_criterion_3_closed_form_vs_quadrature():
    """criterion 3: cov_H matches adaptive quadrature of the kernel convolution integral to 1e-6 (10 d=1 cases)"""
    rng = np.random.default_rng(3)
    for _ in range(10):
        M = int(rng.integers(1, 4))
        B = np.sort(rng.uniform(-2, 2, M))[:, None] + 1e-6 * np.arange(M)[:, None]
        field = MixtureKernelField(B, [random_kernel(rng, 1) for _ in range(M)], rng.uniform(0.3, 1.5))
        s, s2 = rng.uniform(-2, 2, 2)
        v1 = field.evaluate(np.array([[s]]))[0, 0, 0]
        v2 = field.evaluate(np.array([[s2]]))[0, 0, 0]
        integrand = lambda u: stats.norm.pdf(u, s, np.sqrt(v1)) * stats.norm.pdf(u, s2, np.sqrt(v2))
        ref, _ = integrate.quad(integrand, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12)
        assert abs(cov_H([s], [s2], field) - ref) <= 1e-6


def test_criterion_4_simulator_consistency():
    """criterion 4: 2e4 discrete-convolution realizations match discrete_convolution_cov within 3 MC SE in < 60 s"""
    start = time.perf_counter()
    g = np.linspace(-0.2, 1.2, 5)
    grid = ConvolutionGrid(np.column_stack([a.ravel() for a in np.meshgrid(g, g)]), noise_variance=1.0)
    B = np.array([[0.2, 0.2], [0.8, 0.3], [0.5, 0.8]])
    field = MixtureKernelField(B, [KernelMatrix.from_spectral(0.12, 0.04, a) for a in (0.2, 1.2, 2.4)], 0.3)
    X = np.array([[0.1, 0.1], [0.3, 0.5], [0.5, 0.5], [0.9, 0.2], [0.6, 0.9]])
    N = 20_000
    Y = simulate_discrete_convolution(field, grid, X, seed=4, replicates=N).values
    C = np.array([[discrete_convolution_cov(field, grid, a, b) for b in X] for a in X])
    emp = Y.T @ Y / N
    se = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C**2) / N)
    assert np.all(np.abs(emp - C) <= 3 * se), np.max(np.abs(emp - C) / se)
    assert time.perf_counter() - start < 60.0


def test_criterion_5_kriging_exactness():
    """criterion 5: with zero nugget, kriging at 200 observed sites reproduces the data to 1e-8 sd(y), SE <= 1e-6"""
    rng = np.random.default_rng(5)
    X = rng.uniform(size=(200, 2))
    B = basis_grid(X, 4)
    spec = NonstationarySpec(MixtureKernelField(B, [random_kernel(rng) for _ in B]), 1.3, family="exponential")
    data = SpatialDataset(X, simulate_gp(spec, X, seed=5).values)
    fit = ModelFit(spec, 0.0, "constant", np.zeros(1), 0.0)
    res = krige(fit, data, X)
    y = data.values[0]
    assert np.max(np.abs(res.mean - y)) <= 1e-8 * np.std(y)
    assert np.max(res.se) <= 1e-6


def test_criterion_6_kl_eof():
    """criterion 6: full-rank EOF reconstruction to 1e-10, monotone truncation error, spectral truncation beats random projections"""
    rng = np.random.default_rng(6)
    for _ in range(20):
        n = int(rng.integers(2, 16))
        C = empirical_cov(rng.normal(size=(int(rng.integers(1, 40)), n)) @ rng.normal(size=(n, n)))
        b = eof_decompose(C)
        full = kl_truncated_cov(b, n)
        assert np.linalg.norm(C.matrix - full) / np.linalg.norm(C.matrix) <= 1e-10
        errs = [np.linalg.norm(C.matrix - kl_truncated_cov(b, L)) for L in range(1, n + 1)]
        assert all(e2 <= e1 + 1e-12 * errs[0] for e1, e2 in zip(errs, errs[1:]))
    G = rng.normal(size=(6, 6))
    C6 = G @ G.T
    b = eof_decompose(C6)
    for L in range(1, 6):
        best = np.linalg.norm(C6 - kl_truncated_cov(b, L))
        for _ in range(20):
            Q, _ = np.linalg.qr(rng.normal(size=(6, L)))
            assert best <= np.linalg.norm(C6 - Q @ Q.T @ C6 @ Q @ Q.T) + 1e-12


def angle_gap(a, b):
    return abs((a - b + np.pi / 2) % np.pi - np.pi / 2)


@pytest.mark.slow
def test_criterion_7_local_recovery():
    """criterion 7: local kernels recover a 30 deg, 9:1 anisotropy (angle 15 deg, log-eigenvalues 25%); two-stage fit < 120 s"""
    seed = 0
    major, minor, angle = 0.09, 0.01, np.deg2rad(30.0)
    truth = NonstationarySpec(ConstantKernelField(KernelMatrix.from_spectral(major, minor, angle)), 1.0,
                              family="gaussian")
    X = np.random.default_rng(seed).uniform(size=(500, 2))
    data = SpatialDataset(X, simulate_gp(truth, X, seed=seed, nugget=0.01).values)
    B, radius = basis_grid(X, 4), 0.35
    counts = [(np.linalg.norm(X - b, axis=1) <= radius).sum() for b in B]
    assert min(counts) >= 100
    with threadpool_limits(limits=1):
        start = time.perf_counter()
        fit = fit_two_stage(data, B, radius)
        elapsed = time.perf_counter() - start
    assert elapsed < 120.0
    for m, K in enumerate(fit.spec.kernel.kernels):
        a, b, th = K.spectral()
        assert angle_gap(th, angle) <= np.deg2rad(15.0), (m, np.rad2deg(th))
        for est, true in ((a, major), (b, minor)):
            assert abs(np.log(est) - np.log(true)) <= 0.25 * abs(np.log(true)), (m, est, true)
            # the stricter reading, 25% on the eigenvalues themselves, holds as well
            assert abs(est / true - 1) <= 0.25, (m, est, true)


def test_criterion_8_likelihood_oracle():
    """criterion 8: log_likelihood matches a dense-inverse reference to 1e-9 (20 cases), replicate additivity to 1e-10"""
    rng = np.random.default_rng(8)
    for case in range(20):
        n = int(rng.integers(1, 31))
        X = rng.uniform(size=(n, 2))
        if case % 2:
            spec, Z = random_ns_spec(rng, X)
        else:
            family, nu = FAMILIES[rng.integers(3)]
            spec, Z = StationarySpec(rng.uniform(0.5, 2), rng.uniform(0.05, 0.5), family, nu), None
        nugget = rng.uniform(0.01, 0.5)
        Y = rng.normal(size=(3, n))
        data = SpatialDataset(X, Y, Z)
        C = build_cov_matrix(spec, X, Z) + nugget * np.eye(n)
        Ci = np.linalg.inv(C)
        logdet = np.linalg.slogdet(C)[1]
        trend = ("zero", "constant", "linear")[case % 3]
        D = trend_design(X, trend)
        beta = np.linalg.lstsq(D.T @ Ci @ D, D.T @ Ci @ Y.mean(axis=0), rcond=None)[0] if D.shape[1] else np.zeros(0)
        R = Y - D @ beta
        ref = sum(-0.5 * n * np.log(2 * np.pi) - 0.5 * logdet - 0.5 * r @ Ci @ r for r in R)
        got = log_likelihood(data, spec, nugget, trend)
        assert abs(got - ref) <= 1e-9 * abs(ref)
        singles = sum(log_likelihood(SpatialDataset(X, y, Z), spec, nugget, "zero") for y in Y)
        assert abs(log_likelihood(data, spec, nugget, "zero") - singles) <= 1e-10 * abs(singles)


def test_criterion_9_end_to_end_determinism(tmp_path):
    """criterion 9: simulate -> fit -> predict is byte-identical across two runs with the same seed and config"""
    config = {
        "spec": {"type": "stationary", "variance": 1.0, "range": 0.2, "family": "matern", "smoothness": 1.5},
        "n": 120, "nugget": 0.05, "grid": None,
        "model": {"family": "matern", "kind": "stationary", "smoothness": 1.5},
        "data": "out/realization.csv", "fit": "out/fit.json",
    }
    outputs = []
    for run in ("first", "second"):
        work = tmp_path / run
        work.mkdir()
        (work / "run.json").write_text(json.dumps(config))
        for mode, extra in (("simulate", []), ("fit", []), ("predict", ["--grid", "0,1,0,1,12,10"])):
            cmd = [sys.executable, "-m", "nskrig", mode, "--config", str(work / "run.json"),
                   "--seed", "2024", "--out", str(work / "out"), *extra]
            done = subprocess.run(cmd, capture_output=True, text=True, cwd=work, check=False)
            assert done.returncode == 0, done.stderr
        outputs.append({f: (work / "out" / f).read_bytes() for f in sorted(os.listdir(work / "out"))})
    assert list(outputs[0]) == ["fit.json", "fit_report.txt", "predictions.csv", "realization.csv"]
    assert outputs[0] == outputs[1]
