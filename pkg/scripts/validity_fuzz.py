"""Fuzz C^NS covariance matrices for nonnegative definiteness.

Draws random mixture and covariate-driven kernel fields, builds the
covariance matrix at random locations and reports the smallest eigenvalue
relative to the largest diagonal entry.

    python3 scripts/validity_fuzz.py --cases 2000 --max-n 60
"""

import argparse
import time

import numpy as np

from nskrig.fields import CovariateKernelField, CovariateScalarField, KernelMatrix, MixtureKernelField, MixtureScalarField
from nskrig.nonstationary import NonstationarySpec, build_cov_matrix
from nskrig.stationary import nnd_check

FAMILIES = [("exponential", 0.5), ("matern", 1.5), ("matern", 3.0), ("gaussian", 0.5)]


def random_spec(rng, X):
    family, nu = FAMILIES[rng.integers(len(FAMILIES))]
    if rng.uniform() < 0.5:
        M = int(rng.integers(1, 9))
        B = rng.uniform(size=(M, 2)) + 1e-9 * np.arange(M)[:, None]
        kernels = [KernelMatrix.from_spectral(*np.exp(rng.uniform(-6, 0, 2)), rng.uniform(0, np.pi)) for _ in B]
        return NonstationarySpec(MixtureKernelField(B, kernels, rng.uniform(0.03, 0.6)),
                                 MixtureScalarField(B, rng.uniform(0.2, 5.0, M)), nu, family), None
    Z = rng.normal(size=(len(X), 2))
    coef = lambda lo, hi, slope: np.r_[rng.uniform(lo, hi), rng.normal(0, slope, 2)]
    kernel = CovariateKernelField(coef(-6, 0, 0.7), coef(-6, 0, 0.7), coef(0, np.pi, 1.5))
    return NonstationarySpec(kernel, CovariateScalarField(coef(-1, 1, 0.5)), nu, family), Z


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cases", type=int, default=500)
    ap.add_argument("--max-n", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--tol", type=float, default=1e-8)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    worst, failures = np.inf, 0
    start = time.perf_counter()
    for case in range(args.cases):
        X = rng.uniform(size=(int(rng.integers(2, args.max_n + 1)), 2))
        spec, Z = random_spec(rng, X)
        C = build_cov_matrix(spec, X, Z)
        ok, lam = nnd_check(C, args.tol)
        worst = min(worst, lam / np.max(np.diag(C)))
        if not ok:
            failures += 1
            print(f"case {case}: FAIL min eigenvalue {lam:.3e} family={spec.family} n={len(X)}")
    print(f"{args.cases} cases, {failures} failures, worst relative min eigenvalue {worst:.3e}, "
          f"{time.perf_counter() - start:.1f}s")


if __name__ == "__main__":
    main()
