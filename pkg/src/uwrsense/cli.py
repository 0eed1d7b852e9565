"""Command-line front end: simulate, calibrate, estimate, reconstruct, metrics."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import hyperparams as hpm
from .core import CoilDataset, NoiseCovariance, ReconError, SenseGeometry, nmse, psnr
from .ppxa import Diverged, SolverConfig, solve_3d, solve_4d
from .pvol import PvolError, read_cov, read_pvol, read_sidecar, write_cov, write_pvol
from .sense import EncodingOperator, estimate_noise_cov, estimate_sensitivities, sense_wls
from .simulator import (
    AcquisitionSpec,
    Ellipsoid,
    acquire,
    correlated_cov,
    head_phantom,
    make_coils,
    make_phantom,
    make_series,
    noise_scan,
    reference_coil_images,
)
from .wavelet3d import WaveletSpec

log = logging.getLogger("uwrsense")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _dims(text):
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError("dims must be X,Y,Z with positive integers")
    return dims


def _sha(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _file_sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ------------------------------------------------------------------ simulate


def cmd_simulate(args):
    X, Y, Z = args.dims
    if args.accel < 1 or Y % args.accel:
        raise UsageError(f"R must divide Y (R={args.accel}, Y={Y})")
    spec = WaveletSpec.from_name(args.wavelet, args.j_max)
    spec.check_dims(args.dims)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    phantom = head_phantom(args.dims, seed=args.seed)
    base = make_phantom(phantom)
    coils = make_coils(args.dims, args.coils, seed=args.seed, R=args.accel, support=np.abs(base) > 0)
    corr = correlated_cov(args.coils, 1.0, args.noise_corr)
    acq = AcquisitionSpec(
        coils=args.coils, R=args.accel, frames=args.frames,
        psi_true=corr * args.noise_scale**2 if args.noise_scale > 0 else None,
        drift=args.drift, activation=args.activation, block_length=args.block_length,
        activation_region=Ellipsoid((0.25, -0.1, 0.0), (0.2, 0.2, 0.3)), seed=args.seed,
    )
    series = make_series(base, acq)
    data = acquire(series, coils, acq)
    # the noise-only scan uses unit-scale correlation when data noise is disabled
    scan_acq = AcquisitionSpec(coils=args.coils, psi_true=acq.psi_true if acq.psi_true is not None else corr,
                               seed=args.seed)
    noise = noise_scan(scan_acq, args.noise_samples)

    psi_true = acq.psi_true if acq.psi_true is not None else np.zeros_like(corr)
    common = {
        "dims": [X, Y, Z], "R": args.accel, "coils": args.coils, "frames": args.frames,
        "seed": args.seed, "noise_scale": args.noise_scale, "noise_corr": args.noise_corr,
        "psi_true": {"re": psi_true.real.tolist(), "im": psi_true.imag.tolist()},
        "drift": args.drift, "activation": args.activation, "block_length": args.block_length,
    }
    files = {
        "truth": write_pvol(out / "truth.pvol", series[None], sidecar={**common, "kind": "truth"}),
        "coils": write_pvol(out / "coils.pvol", reference_coil_images(base, coils)[:, None],
                            sidecar={**common, "kind": "coil_reference_images"}),
        "data": write_pvol(out / "data.pvol", data.data, sidecar={**common, "kind": "coil_data"}),
        "noise": write_pvol(out / "noise.pvol", noise[:, None, :, None, None],
                            sidecar={**common, "kind": "noise_scan"}),
    }
    for name, path in files.items():
        print(f"{name:6s} {path}  sha256={_file_sha(path)[:16]}")
    return EXIT_OK


# ------------------------------------------------------------------ calibrate


def cmd_calibrate(args):
    coil_images = read_pvol(args.coil_images)[:, 0]
    sens = estimate_sensitivities(coil_images, args.threshold)
    noise = read_pvol(args.noise).reshape(coil_images.shape[0], -1)
    psi = estimate_noise_cov(noise)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pvol(out / "sens.pvol", sens[:, None],
               sidecar={"kind": "sensitivities", "sos_threshold": args.threshold,
                        "source": str(args.coil_images)})
    write_cov(out / "cov.json", psi.psi, {"source": str(args.noise), "loading": 1e-8})
    print(f"sens {out / 'sens.pvol'}\ncov  {out / 'cov.json'}")
    return EXIT_OK


# ------------------------------------------------------------------ loading


def load_problem(args):
    if not args.sens:
        raise UsageError("sensitivities required (--sens)")
    if not args.cov:
        raise UsageError("noise covariance required (--cov)")
    raw = read_pvol(args.data)
    meta = read_sidecar(args.data)
    sens = read_pvol(args.sens)[:, 0]
    R = int(args.accel or meta.get("R", 0))
    if R < 1:
        raise UsageError("reduction factor unknown: pass --accel")
    Y = sens.shape[2]
    if Y % R or raw.shape[3] * R != Y:
        raise ReconError(f"R must divide Y and match the data (R={R}, Y={Y}, reduced={raw.shape[3]})")
    geom = SenseGeometry(R, Y)
    d = CoilDataset(raw, geom)
    enc = EncodingOperator(sens, geom)
    psi = NoiseCovariance(read_cov(args.cov))
    if psi.coils != d.coils or enc.coils != d.coils:
        raise ReconError("coil count differs between data, sensitivities and covariance")
    return d, enc, psi


# ------------------------------------------------------------------ estimate


def cmd_estimate(args):
    d, enc, psi = load_problem(args)
    spec = WaveletSpec.from_name(args.wavelet, args.j_max)
    ref = sense_wls(d, enc, psi)
    hp = hpm.estimate_all(ref, spec, mask_threshold=args.mask_threshold)
    doc = hp.to_dict()
    doc["provenance"] = {
        "reference": "sense_wls", "data": str(args.data), "data_sha256": _file_sha(args.data),
        "sens": str(args.sens), "cov": str(args.cov), "frames": d.frames, "R": enc.R,
    }
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"params {args.out}  mask fraction {hp.mask_fraction:.3f}")
    return EXIT_OK


# ------------------------------------------------------------------ reconstruct


def reconstruct(method, d, enc, psi, hp, config, spec, progress=None):
    """Run one method; returns images ``(T, X, Y, Z)`` and the per-frame solver logs."""
    if method == "sense":
        return sense_wls(d, enc, psi), []
    if method == "uwr3d":
        frames, logs = [], []
        for t in range(d.frames):
            res = solve_3d(d.frame(t), enc, psi, hp.spatial, config, spec=spec, progress=progress)
            frames.append(res.images[0])
            logs.append(res)
        return np.stack(frames), logs
    if method == "uwr4d":
        res = solve_4d(d, enc, psi, hp.spatial, hp.temporal, config, spec=spec, progress=progress)
        return res.images, [res]
    raise UsageError(f"unknown method {method!r}")


def cmd_reconstruct(args):
    start = time.perf_counter()
    d, enc, psi = load_problem(args)
    spec = WaveletSpec.from_name(args.wavelet, args.j_max)
    config = SolverConfig(gamma=args.gamma, epsilon=args.epsilon, max_iters=args.max_iters,
                          lam=args.relaxation, threads=args.threads)
    hp = None
    if args.method != "sense":
        if args.params:
            hp = hpm.HyperParams.from_dict(json.loads(Path(args.params).read_text()))
        else:
            hp = hpm.estimate_all(sense_wls(d, enc, psi), spec, mask_threshold=args.mask_threshold)

    def progress(rec):
        log.info("iter %3d  J=%.6e  rel=%.3e", rec.n, rec.criterion, rec.rel_change)

    images, logs = reconstruct(args.method, d, enc, psi, hp, config, spec, progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    recon_path = write_pvol(out / "recon.pvol", images[None],
                            sidecar={"kind": "reconstruction", "method": args.method, "R": enc.R})
    manifest = {
        "command": "reconstruct",
        "method": args.method,
        "solver": config.to_dict() if args.method != "sense" else None,
        "wavelet": {"family": spec.family, "j_max": spec.j_max},
        "params": hp.to_dict() if hp is not None else None,
        "inputs": {"data": str(args.data), "sens": str(args.sens), "cov": str(args.cov),
                   "params": str(args.params) if args.params else None},
        "outputs": {"recon": str(recon_path)},
        "iterations": [
            [{"n": r.n, "J": r.criterion, "rel_change": r.rel_change} for r in res.history]
            for res in logs
        ],
        "converged": [res.converged for res in logs],
    }
    manifest["config_hash"] = _sha({k: manifest[k] for k in ("method", "solver", "wavelet", "params")})
    if args.truth:
        truth = read_pvol(args.truth)[0]
        manifest["nmse"] = nmse(images, truth)
    if args.dump_slice:
        dump_slice(out / "slice.pgm", images, *args.dump_slice)
    manifest["wall_time_s"] = time.perf_counter() - start
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"recon {recon_path}")
    if "nmse" in manifest:
        print(f"nmse {manifest['nmse']:.6e}")
    return EXIT_OK


def dump_slice(path, images, z, t):
    """Write ``|images[t, :, :, z]|`` as an 8-bit binary PGM (rows = y)."""
    img = np.abs(images[t, :, :, z]).T
    scaled = np.round(255 * img / max(img.max(), np.finfo(float).tiny)).astype(np.uint8)
    h, w = scaled.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + scaled.tobytes())


# ------------------------------------------------------------------ metrics


def cmd_metrics(args):
    est = read_pvol(args.estimate)[0]
    truth = read_pvol(args.truth)[0]
    if est.shape != truth.shape:
        raise ReconError(f"dimension mismatch: {est.shape} vs {truth.shape}")
    if args.magnitude:
        est, truth = np.abs(est), np.abs(truth)
    report = {
        "nmse": nmse(est, truth),
        "psnr": psnr(est, truth),
        "frames": [
            {"t": t, "nmse": nmse(est[t], truth[t]), "psnr": psnr(est[t], truth[t])}
            for t in range(truth.shape[0])
        ],
        "magnitude": bool(args.magnitude),
    }
    if args.json:
        print(json.dumps(_json_safe(report), indent=2))
    else:
        print(f"NMSE {report['nmse']:.6e}   PSNR {_fmt_db(report['psnr'])}")
        print(" t        NMSE      PSNR")
        for row in report["frames"]:
            print(f"{row['t']:2d}  {row['nmse']:.4e}  {_fmt_db(row['psnr'])}")
    return EXIT_OK


def _fmt_db(v):
    return "inf" if np.isinf(v) else f"{v:.2f} dB"


def _json_safe(obj):
    if isinstance(obj, float) and np.isinf(obj):
        return "inf"
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


# ------------------------------------------------------------------ parser


def _add_problem_args(p):
    p.add_argument("--data", required=True)
    p.add_argument("--sens")
    p.add_argument("--cov")
    p.add_argument("--accel", type=int, help="reduction factor (default: from the data sidecar)")
    p.add_argument("--wavelet", default="symmlet8", choices=["symmlet8", "haar"])
    p.add_argument("--j-max", type=int, default=3)
    p.add_argument("--mask-threshold", type=float, default=0.1)


def build_parser():
    parser = argparse.ArgumentParser(prog="uwrsense", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic acquisition")
    p.add_argument("--dims", type=_dims, required=True)
    p.add_argument("--coils", type=int, required=True)
    p.add_argument("--accel", type=int, required=True)
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--noise-scale", type=float, default=0.0)
    p.add_argument("--noise-corr", type=float, default=0.3)
    p.add_argument("--noise-samples", type=int, default=4096)
    p.add_argument("--drift", type=float, default=0.01)
    p.add_argument("--activation", type=float, default=0.05)
    p.add_argument("--block-length", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--wavelet", default="symmlet8", choices=["symmlet8", "haar"])
    p.add_argument("--j-max", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="sensitivities and noise covariance from reference scans")
    p.add_argument("--coil-images", required=True)
    p.add_argument("--noise", required=True)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("estimate", help="ML regularization parameters from a SENSE reference")
    _add_problem_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    defaults = SolverConfig()
    p = sub.add_parser("reconstruct", help="reconstruct full-FOV images")
    p.add_argument("--method", choices=["sense", "uwr3d", "uwr4d"], default="uwr4d")
    _add_problem_args(p)
    p.add_argument("--params")
    p.add_argument("--gamma", type=float, default=defaults.gamma)
    p.add_argument("--epsilon", type=float, default=defaults.epsilon)
    p.add_argument("--max-iters", type=int, default=defaults.max_iters)
    p.add_argument("--relaxation", type=float, default=defaults.lam)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--truth", help="ground truth PVOL; NMSE goes into the manifest")
    p.add_argument("--dump-slice", nargs=2, type=int, metavar=("Z", "T"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("metrics", help="compare a reconstruction with ground truth")
    p.add_argument("--estimate", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--magnitude", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Diverged as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ReconError, PvolError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
