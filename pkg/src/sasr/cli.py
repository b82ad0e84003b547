"""Command line entry point.

Exit codes: 0 success, 1 usage/configuration, 2 data or file format,
3 numerical failure. Every subcommand writes a resolved configuration
manifest next to its outputs so runs can be reproduced from disk.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dti as dti_mod
from . import io, metrics, phantom, sh, train
from .core import Volume4D, extract_slice_triples, make_coord_grid, normalize_b0
from .errors import ConfigurationError, DataError, NumericalError, SasrError
from .model import ModelConfig, DecoderConfig, ExtractorConfig, SuperResolver
from .sampling import QSubset, check_scale, downsample_x, select_subset


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out_dir: Path, command: str, args: dict):
    io.write_json(out_dir / f"{command}_config.json", {"command": command, **args})


def _load_dataset(args):
    vol = io.read_volume(args.dwi)
    table = io.read_gradient_table(args.bvals, args.bvecs)
    if len(table) != vol.shape[3]:
        raise DataError(
            f"{vol.shape[3]} volume channels but {len(table)} table rows"
        )
    return vol, table


def cmd_phantom(args) -> int:
    out = _out_dir(args.out_dir)
    spec = phantom.default_phantom(
        args.size, depth=args.depth, noise_sigma=args.noise_sigma, seed=args.seed
    )
    table = phantom.default_table(args.dirs, bval=args.bval, seed=args.seed)
    vol, truth = phantom.generate(spec, table)
    io.write_volume(out / "dwi.nii", vol)
    io.write_gradient_table(out / "bvals", out / "bvecs", table)
    io.write_nifti(out / "truth_fa.nii", truth["fa"], spec.spacing)
    io.write_nifti(out / "truth_md.nii", truth["md"], spec.spacing)
    io.write_nifti(out / "truth_tensor.nii", truth["tensor"], spec.spacing)
    io.write_nifti(out / "truth_mask.nii", truth["mask"].astype(np.float64), spec.spacing)
    _manifest(out, "phantom", {
        "size": args.size, "depth": args.depth, "dirs": args.dirs,
        "bval": args.bval, "noise_sigma": args.noise_sigma, "seed": args.seed,
    })
    print(f"phantom {vol.shape} with {args.dirs} directions -> {out}")
    return 0


def cmd_degrade(args) -> int:
    out = _out_dir(args.out_dir)
    check_scale(args.scale)
    vol, table = _load_dataset(args)
    dwi_idx = table.dwi_indices
    if args.subset is not None:
        q = select_subset(table, args.subset)
        keep_dwi = q.indices
    else:
        keep_dwi = dwi_idx
    b0_idx = np.flatnonzero(table.b0_mask)
    keep = np.concatenate([b0_idx, keep_dwi])
    sub_vol = Volume4D(np.ascontiguousarray(vol.data[..., keep]), vol.spacing)
    sub_table = type(table)(table.bvals[keep], table.dirs[keep])
    rng = None
    if args.noise_sigma > 0:
        rng = np.random.Generator(np.random.Philox(args.seed))
    lr = downsample_x(sub_vol, args.scale, noise_sigma=args.noise_sigma, rng=rng)
    io.write_volume(out / "lr_dwi.nii", lr)
    io.write_gradient_table(out / "bvals", out / "bvecs", sub_table)
    io.write_json(out / "subset.json", {
        "dwi_indices": [int(i) for i in keep_dwi],
        "n_dwi_total": int(dwi_idx.size),
    })
    _manifest(out, "degrade", {
        "dwi": str(args.dwi), "scale": args.scale, "subset": args.subset,
        "noise_sigma": args.noise_sigma, "seed": args.seed,
        "lr_shape": list(lr.shape),
    })
    print(f"degraded {vol.shape[:2]} -> {lr.shape[:2]} at scale {args.scale} -> {out}")
    return 0


def _model_config(args, counts) -> ModelConfig:
    return ModelConfig(
        extractor=ExtractorConfig(
            base_channels=args.base_channels, num_blocks=args.blocks,
            growth=args.growth, layers_per_block=args.layers_per_block,
        ),
        decoder=DecoderConfig(hidden=args.hidden),
        n_iters=args.n_iters, sh_order=args.order,
        shared_weights=args.shared_weights,
    )


def cmd_train(args) -> int:
    out = _out_dir(args.out_dir)
    vol, table = _load_dataset(args)
    norm_vol, dwi_table = normalize_b0(vol, table)
    cfg = train.TrainConfig(
        epochs=args.epochs, steps_per_epoch=args.steps, batch_size=args.batch_size,
        patch_hr=args.patch, scale_range=(args.scale_min, args.scale_max),
        q_counts=tuple(args.q_dirs) if args.q_dirs else (),
        lambda_d=args.lambda_d, wavelet_levels=args.wavelet_levels,
        val_fraction=args.val_fraction, val_scale=args.val_scale, seed=args.seed,
        lr_initial=args.lr, lr_after=args.lr_after,
        lr_switch_epoch=args.lr_switch_epoch,
    )
    data = train.split_triples(norm_vol, dwi_table, cfg.val_fraction)
    counts = train._resolve_q_counts(cfg, len(dwi_table))
    if len(set(counts)) != 1:
        raise ConfigurationError(
            f"subset sizes {sorted(set(counts))} differ; the extractor input "
            "width is fixed by the subset size"
        )
    model_cfg = _model_config(args, counts)
    model = SuperResolver(model_cfg, n_channels=counts[0], seed=args.seed)
    record, best = train.train_loop(model, data, cfg, log=print)
    meta = {
        "model": {
            "base_channels": model_cfg.extractor.base_channels,
            "num_blocks": model_cfg.extractor.num_blocks,
            "growth": model_cfg.extractor.growth,
            "layers_per_block": model_cfg.extractor.layers_per_block,
            "hidden": model_cfg.decoder.hidden,
            "n_iters": model_cfg.n_iters,
            "sh_order": model_cfg.sh_order,
            "shared_weights": model_cfg.shared_weights,
            "n_channels": counts[0],
        },
        "table": {
            "bvals": [float(b) for b in dwi_table.bvals],
            "dirs": [[float(v) for v in d] for d in dwi_table.dirs],
        },
        "best_epoch": record.best_epoch,
        "best_val_psnr": record.best_val_psnr,
        "seed": args.seed,
    }
    io.save_checkpoint(out / "checkpoint.json", best, meta)
    io.write_json(out / "train_record.json", record.as_dict())
    _manifest(out, "train", {
        "dwi": str(args.dwi), "epochs": cfg.epochs, "steps_per_epoch": cfg.steps_per_epoch,
        "batch_size": cfg.batch_size, "patch_hr": cfg.patch_hr,
        "scale_range": list(cfg.scale_range), "q_counts": list(counts),
        "lambda_d": cfg.lambda_d, "n_iters": model_cfg.n_iters,
        "sh_order": model_cfg.sh_order, "hidden": model_cfg.decoder.hidden,
        "base_channels": model_cfg.extractor.base_channels,
        "seed": args.seed, "val_fraction": cfg.val_fraction,
        "val_scale": cfg.val_scale, "lr_initial": cfg.lr_initial,
        "lr_after": cfg.lr_after, "lr_switch_epoch": cfg.lr_switch_epoch,
    })
    print(
        f"trained {cfg.epochs} epochs, best val PSNR "
        f"{record.best_val_psnr:.3f} dB at epoch {record.best_epoch + 1} -> {out}"
    )
    return 0


def _rebuild_model(meta: dict) -> SuperResolver:
    m = meta["model"]
    cfg = ModelConfig(
        extractor=ExtractorConfig(
            base_channels=m["base_channels"], num_blocks=m["num_blocks"],
            growth=m["growth"], layers_per_block=m["layers_per_block"],
        ),
        decoder=DecoderConfig(hidden=m["hidden"]),
        n_iters=m["n_iters"], sh_order=m["sh_order"],
        shared_weights=m["shared_weights"],
    )
    return SuperResolver(cfg, n_channels=m["n_channels"], seed=0)


def _match_subset(lr_dirs: np.ndarray, ref_dirs: np.ndarray):
    """Map LR directions onto reference table rows by |dot| (antipodal)."""
    matched = []
    for d in lr_dirs:
        dots = np.abs(ref_dirs @ d)
        j = int(np.argmax(dots))
        if dots[j] < 1.0 - 1e-6:
            raise DataError(
                f"direction {d} not found in the checkpoint table "
                f"(best |dot| {dots[j]:.8f})"
            )
        matched.append(j)
    if len(set(matched)) != len(matched):
        raise DataError("duplicate directions after matching the checkpoint table")
    return np.array(matched, dtype=np.intp)


def cmd_superres(args) -> int:
    from .core import GradientTable

    out = _out_dir(args.out_dir)
    check_scale(args.scale)
    weights, meta = io.load_checkpoint(args.checkpoint)
    model = _rebuild_model(meta)
    model.load_weights(weights)
    ref_table = GradientTable(
        np.array(meta["table"]["bvals"]), np.array(meta["table"]["dirs"])
    )
    vol, table = _load_dataset(args)
    norm_vol, lr_table = normalize_b0(vol, table)
    if len(lr_table) != model.n_channels:
        raise DataError(
            f"{len(lr_table)} LR directions but the model expects {model.n_channels}"
        )
    matched = _match_subset(lr_table.dirs, ref_table.dirs)
    perm = np.argsort(matched)
    q = QSubset(matched[perm], len(ref_table))
    h1, w1 = norm_vol.shape[0], norm_vol.shape[1]
    h2 = int(round(h1 * args.scale))
    w2 = int(round(w1 * args.scale))
    order = model.cfg.sh_order
    basis_full = sh.eval_basis(ref_table.dirs, order)
    triples = extract_slice_triples(norm_vol)
    n_coeff = sh.n_coeffs(order)
    coeffs = np.empty((h2, w2, len(triples), n_coeff), dtype=np.float64)
    synth = np.empty((h2, w2, len(triples), len(ref_table)), dtype=np.float64)
    grid = make_coord_grid(h2, w2)
    for ti, triple in enumerate(triples):
        i_lr = triple.vol.data[..., perm]
        c, _ = model.forward(i_lr, args.scale, q, ref_table, grid)
        cmap = c.values.reshape(h2, w2, n_coeff)
        coeffs[:, :, ti] = cmap
        synth[:, :, ti] = cmap @ basis_full.T
    sp = norm_vol.spacing
    out_spacing = (sp[0] * h1 / h2, sp[1] * w1 / w2, sp[2])
    io.write_nifti(out / "sr_dwi.nii", synth, out_spacing)
    io.write_nifti(out / "sr_coeffs.nii", coeffs, out_spacing)
    io.write_gradient_table(out / "bvals", out / "bvecs", ref_table)
    _manifest(out, "superres", {
        "dwi": str(args.dwi), "checkpoint": str(args.checkpoint),
        "scale": args.scale, "hr_shape": [h2, w2, len(triples)],
        "first_slice": 1, "sh_order": order,
    })
    print(f"reconstructed {h2}x{w2}x{len(triples)} at {len(ref_table)} directions -> {out}")
    return 0


def cmd_shfit(args) -> int:
    out = _out_dir(args.out_dir)
    vol, table = _load_dataset(args)
    norm_vol, dwi_table = normalize_b0(vol, table)
    basis = sh.eval_basis(dwi_table.dirs, args.order)
    coeffs = sh.fit_sh(norm_vol.data, basis, lb_lambda=args.lb_lambda)
    io.write_nifti(out / "coeffs.nii", coeffs, norm_vol.spacing)
    if args.synth_bvecs is not None:
        raw = np.loadtxt(args.synth_bvecs, dtype=np.float64, ndmin=2)
        if raw.shape[0] != 3:
            raise DataError(f"{args.synth_bvecs}: expected 3 rows of components")
        dirs = raw.T
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(norms == 0):
            raise DataError(f"{args.synth_bvecs}: zero direction vector")
        dirs = dirs / norms[:, None]
    else:
        dirs = dwi_table.dirs
    synth = sh.synth_sh(coeffs, sh.eval_basis(dirs, args.order))
    io.write_nifti(out / "synth.nii", synth, norm_vol.spacing)
    _manifest(out, "shfit", {
        "dwi": str(args.dwi), "order": args.order, "lb_lambda": args.lb_lambda,
        "synth_bvecs": None if args.synth_bvecs is None else str(args.synth_bvecs),
        "n_synth_dirs": int(dirs.shape[0]),
    })
    print(f"fit order {args.order} coefficients {coeffs.shape} -> {out}")
    return 0


def cmd_dti(args) -> int:
    out = _out_dir(args.out_dir)
    vol, table = _load_dataset(args)
    if table.b0_mask.any():
        tensor6 = dti_mod.fit_volume(vol, table)
    else:
        # no b=0 rows: the volume holds attenuation ratios (superres
        # output), so the reference signal is unit
        tensor6 = dti_mod.fit_tensor(vol.data, 1.0, table)
    fa, md, qc = dti_mod.scalar_maps(tensor6)
    io.write_nifti(out / "fa.nii", fa, vol.spacing)
    io.write_nifti(out / "md.nii", md, vol.spacing)
    io.write_nifti(out / "tensor.nii", tensor6, vol.spacing)
    io.write_nifti(out / "qc_negative.nii", qc.astype(np.float64), vol.spacing)
    _manifest(out, "dti", {
        "dwi": str(args.dwi), "n_dwi": int(table.dwi_indices.size),
        "s0": "b0-mean" if table.b0_mask.any() else "unit",
        "negative_fraction": float(qc.mean()),
    })
    print(f"tensor maps {fa.shape} ({qc.mean():.2%} negative) -> {out}")
    return 0


def cmd_metrics(args) -> int:
    test = io.read_volume(args.test)
    ref = io.read_volume(args.ref)
    report = metrics.volume_metrics(test, ref)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    io.write_json(out_path, report.as_dict())
    _manifest(out_path.parent, "metrics", {
        "test": str(args.test), "ref": str(args.ref), "out": str(args.out),
    })
    print(
        f"psnr {report.psnr_db:.3f} dB ssim {report.ssim:.4f} "
        f"nrmse {report.nrmse:.4f} -> {out_path}"
    )
    return 0


def cmd_render(args) -> int:
    data, _, _ = io.read_nifti(args.input)
    if data.ndim == 3:
        data = data[:, :, :, None]
    z, n = args.slice, args.channel
    if not 0 <= z < data.shape[2]:
        raise DataError(f"slice {z} out of range for {data.shape[2]} slices")
    if not 0 <= n < data.shape[3]:
        raise DataError(f"channel {n} out of range for {data.shape[3]} channels")
    img = data[:, :, z, n]
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    io.write_pgm(out_path, img, lo=args.lo, hi=args.hi)
    _manifest(out_path.parent, "render", {
        "input": str(args.input), "slice": z, "channel": n,
        "lo": args.lo, "hi": args.hi, "out": str(args.out),
    })
    print(f"rendered slice {z} channel {n} -> {out_path}")
    return 0


def cmd_report(args) -> int:
    out = _out_dir(args.out_dir)
    metrics_dict = io.read_json(args.metrics) if args.metrics else None
    record_dict = io.read_json(args.record) if args.record else None
    from .report import render_report

    written = render_report(out, metrics_dict, record_dict)
    _manifest(out, "report", {
        "metrics": None if args.metrics is None else str(args.metrics),
        "record": None if args.record is None else str(args.record),
        "written": [p.name for p in written],
    })
    print(f"report: {', '.join(p.name for p in written)} -> {out}")
    return 0


def _add_dataset_args(p):
    p.add_argument("--dwi", required=True, help="4-D DWI NIfTI volume")
    p.add_argument("--bvals", required=True, help="b-values text file")
    p.add_argument("--bvecs", required=True, help="gradient directions text file")


def build_parser() -> _Parser:
    parser = _Parser(prog="sasr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic tensor phantom")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--depth", type=int, default=9)
    p.add_argument("--dirs", type=int, default=90)
    p.add_argument("--bval", type=float, default=1000.0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("degrade", help="Fourier-truncate a volume in plane")
    _add_dataset_args(p)
    p.add_argument("--scale", type=float, required=True)
    p.add_argument("--subset", type=int, default=None,
                   help="keep only this many well-spread directions")
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="train the reconstruction model")
    _add_dataset_args(p)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--steps", type=int, default=1, help="optimizer steps per epoch")
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--patch", type=int, default=32)
    p.add_argument("--scale-min", type=float, default=2.0)
    p.add_argument("--scale-max", type=float, default=3.0)
    p.add_argument("--q-dirs", type=int, nargs="*", default=None,
                   help="sampled direction counts (default: a third of the table)")
    p.add_argument("--lambda-d", type=float, default=0.1)
    p.add_argument("--wavelet-levels", type=int, default=3)
    p.add_argument("--n-iters", type=int, default=2)
    p.add_argument("--order", type=int, default=6)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--base-channels", type=int, default=16)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--growth", type=int, default=8)
    p.add_argument("--layers-per-block", type=int, default=3)
    p.add_argument("--shared-weights", action="store_true")
    p.add_argument("--val-fraction", type=float, default=0.25)
    p.add_argument("--val-scale", type=float, default=2.0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lr-after", type=float, default=1e-5)
    p.add_argument("--lr-switch-epoch", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("superres", help="reconstruct HR coefficient fields")
    _add_dataset_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scale", type=float, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_superres)

    p = sub.add_parser("shfit", help="per-voxel spherical harmonic fit")
    _add_dataset_args(p)
    p.add_argument("--order", type=int, default=6)
    p.add_argument("--lb-lambda", type=float, default=0.006)
    p.add_argument("--synth-bvecs", default=None,
                   help="synthesize at these directions instead of the input set")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_shfit)

    p = sub.add_parser("dti", help="tensor fit with FA/MD maps")
    _add_dataset_args(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_dti)

    p = sub.add_parser("metrics", help="score two volumes")
    p.add_argument("--test", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True, help="JSON report path")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("render", help="write one slice/channel as PGM")
    p.add_argument("--input", required=True)
    p.add_argument("--slice", type=int, default=0)
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--lo", type=float, default=None)
    p.add_argument("--hi", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("report", help="render figures and delimited metrics")
    p.add_argument("--metrics", default=None, help="metrics JSON from `metrics`")
    p.add_argument("--record", default=None, help="train_record.json from `train`")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:  # FormatError subclasses DataError
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SasrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
