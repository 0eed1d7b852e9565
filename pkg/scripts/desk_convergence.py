"""PPXA iteration counts on the desk instance across noise levels.

16x16x8, L=4, R=2, 8 frames, ML-fitted parameters, default solver
settings (gamma=200, weights 1/4, eps=1e-4).

    python scripts/desk_convergence.py --sigmas 10 30 60 --seeds 3
"""
import argparse
import time

import numpy as np

from uwrsense import EncodingOperator, NoiseCovariance, SolverConfig, WaveletSpec, nmse, sense_wls, solve_4d
from uwrsense.hyperparams import estimate_all
from uwrsense.simulator import (
    AcquisitionSpec,
    Ellipsoid,
    acquire,
    correlated_cov,
    head_phantom,
    make_coils,
    make_phantom,
    make_series,
)


def run(sigma, seed, dims=(16, 16, 8), coils=4, R=2, frames=8):
    base = make_phantom(head_phantom(dims, seed=seed))
    sens = make_coils(dims, coils, seed=seed, R=R, support=np.abs(base) > 0)
    acq = AcquisitionSpec(coils=coils, R=R, frames=frames, psi_true=correlated_cov(coils, sigma),
                          drift=0.01, activation=0.05,
                          activation_region=Ellipsoid((0.25, -0.1, 0.0), (0.2, 0.2, 0.3)), seed=seed)
    truth = make_series(base, acq)
    d = acquire(truth, sens, acq)
    enc, psi = EncodingOperator.from_sens(sens, R), NoiseCovariance(acq.psi_true)
    ref = sense_wls(d, enc, psi)
    hp = estimate_all(ref, WaveletSpec.symmlet8())
    t0 = time.perf_counter()
    res = solve_4d(d, enc, psi, hp.spatial, hp.temporal, SolverConfig(), init=ref)
    return res, nmse(ref, truth), nmse(res.images, truth), time.perf_counter() - t0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sigmas", type=float, nargs="+", default=[10.0, 30.0, 60.0])
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args(argv)
    print(" sigma seed  iters conv   sense NMSE   4D NMSE   time")
    for sigma in args.sigmas:
        for seed in range(args.seeds):
            res, e_ref, e_4d, dt = run(sigma, seed)
            print(f"{sigma:6.1f} {seed:4d} {res.iterations:6d} {str(res.converged):5s} "
                  f"{e_ref:11.3e} {e_4d:9.3e} {dt:5.1f}s")


if __name__ == "__main__":
    main()
