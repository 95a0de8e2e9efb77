"""Command line front end.

Subcommands: convolve, scalespace, detect, simulate, match,
experiment <kind>, plot. Options may come from the command line or from a
`key = value` config file (--config); command line values win. Exit codes:
0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import scalespace as _scalespace
from .camera import (AcquisitionSpec, make_translation_series,
                     simulate_snapshot, synthetic_reference,
                     write_series_manifest)
from .experiments import (EXPERIMENT_KINDS, ExperimentSpec, run_experiment)
from .extrema import detect_keypoints, read_keypoints_csv, write_keypoints_csv
from .image import read_image, write_image
from .plotdata import emit_plot_data
from .scalespace import (ScaleSpaceConfig, build_scale_space,
                         dct_gaussian_convolve, dump_scale_space,
                         sampled_kernel_convolve)
from .stability import (MatchTolerance, occurrence_matrix,
                        write_occurrence_csv, write_stability_csv)


class ConfigError(Exception):
    pass


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat `key = value` text; blank lines and # comments ignored."""
    mapping: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def _coerce(value: str, target_type):
    if target_type is int:
        return int(value)
    if target_type is float:
        return float(value)  # accepts "inf"
    if target_type is str:
        return value
    raise ConfigError(f"cannot coerce {value!r}")


def build_experiment_spec(kind: str, mapping: dict[str, str],
                          out_dir: str, seed: int | None) -> ExperimentSpec:
    """ExperimentSpec from a flat config mapping, with type coercion."""
    kwargs = {"kind": kind, "out_dir": out_dir}
    if seed is not None:
        kwargs["seed"] = seed
    known = {f.name: f for f in fields(ExperimentSpec)}
    for key, raw in mapping.items():
        if key in ("kind", "out_dir"):
            continue
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        f = known[key]
        try:
            if isinstance(f.default, tuple):
                elem = int if all(isinstance(v, int) for v in f.default) else float
                kwargs[key] = tuple(_coerce(v.strip(), elem)
                                    for v in raw.split(",") if v.strip())
            elif isinstance(f.default, bool):
                kwargs[key] = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(f.default, int) and not isinstance(f.default, bool):
                kwargs[key] = int(raw)
            elif isinstance(f.default, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from exc
    try:
        return ExperimentSpec(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _scale_space_config(args) -> ScaleSpaceConfig:
    try:
        return ScaleSpaceConfig(n_oct=args.n_oct, n_spo=args.n_spo,
                                sigma_min=args.sigma_min,
                                delta_min=args.delta_min, c=args.c,
                                kappa=args.kappa)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-oct", type=int, default=1)
    p.add_argument("--n-spo", type=int, default=3)
    p.add_argument("--sigma-min", type=float, default=0.8)
    p.add_argument("--delta-min", type=float, default=0.5)
    p.add_argument("--c", type=float, default=0.5)
    p.add_argument("--kappa", type=float, default=2.0 ** (1.0 / 3.0))


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scalelab")
    parser.add_argument("--threads", type=int, default=0,
                        help="FFT worker threads (0 = all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convolve", help="Gaussian-convolve an image")
    p.add_argument("input")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--method", choices=("dct", "sampled"), default="dct")
    p.add_argument("--out", required=True)

    p = sub.add_parser("scalespace", help="build and dump a scale-space")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    _add_config_args(p)

    p = sub.add_parser("detect", help="detect DoG keypoints")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    _add_config_args(p)
    p.add_argument("--m-offset", type=float, default=0.6)
    p.add_argument("--n-interp", type=float, default=2.0)
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--contrast-threshold", type=float, default=None)
    p.add_argument("--edge-ratio", type=float, default=None)

    p = sub.add_parser("simulate", help="simulate camera snapshots")
    p.add_argument("--reference", default="",
                   help="reference image (default: synthetic)")
    p.add_argument("--reference-size", type=int, default=2048)
    p.add_argument("--c", type=float, default=1.1)
    p.add_argument("--s-factor", type=float, default=10.0)
    p.add_argument("--n-images", type=int, default=1)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("match", help="occurrence matrix from keypoint CSVs")
    p.add_argument("csvs", nargs="+")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--ratio-r", type=float, default=2.0 ** 0.5)
    p.add_argument("--out", required=True)

    p = sub.add_parser("experiment", help="run a study and emit CSVs")
    p.add_argument("kind", choices=EXPERIMENT_KINDS)
    p.add_argument("--config", default="")
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("plot", help="emit plot data and SVG for a runner CSV")
    p.add_argument("csv")
    p.add_argument("--out", default=None)
    return parser


def _run(args) -> None:
    if args.command == "convolve":
        img = read_image(args.input)
        conv = dct_gaussian_convolve if args.method == "dct" else sampled_kernel_convolve
        write_image(conv(img, args.sigma), args.out)

    elif args.command == "scalespace":
        img = read_image(args.input)
        config = _scale_space_config(args)
        annotated = img if img.blur is not None else \
            type(img)(img.samples, delta=img.delta, blur=config.c)
        ss = build_scale_space(annotated, config)
        dump_scale_space(ss, args.out)

    elif args.command == "detect":
        img = read_image(args.input)
        config = _scale_space_config(args)
        annotated = img if img.blur is not None else \
            type(img)(img.samples, delta=img.delta, blur=config.c)
        kps = detect_keypoints(annotated, config, m_offset=args.m_offset,
                               n_interp=args.n_interp,
                               refine_extrema=not args.no_refine,
                               contrast_threshold=args.contrast_threshold,
                               edge_ratio=args.edge_ratio)
        write_keypoints_csv(kps, args.out)

    elif args.command == "simulate":
        if args.reference:
            ref = read_image(args.reference)
        else:
            ref = synthetic_reference(args.reference_size, args.reference_size,
                                      args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.n_images == 1:
            spec = AcquisitionSpec(c=args.c, s_factor=args.s_factor,
                                   noise_sigma=args.noise_sigma, seed=args.seed)
            img = simulate_snapshot(ref, spec)
            write_image(img, out / "img000.pfm")
        else:
            images, records = make_translation_series(
                ref, args.c, args.s_factor, args.n_images, args.seed)
            for i, img in enumerate(images):
                name = f"img{i:03d}.pfm"
                write_image(img, out / name)
                records[i].filename = name
            write_series_manifest(records, out / "manifest.csv")

    elif args.command == "match":
        if len(args.csvs) < 2:
            raise ConfigError("match needs at least 2 keypoint CSVs")
        sets = [read_keypoints_csv(p) for p in args.csvs]
        tol = MatchTolerance(epsilon=args.epsilon, ratio_r=args.ratio_r)
        matrix = occurrence_matrix(sets, tol,
                                   labels=[Path(p).stem for p in args.csvs])
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_occurrence_csv(matrix, out / "occurrence.csv")
        write_stability_csv(matrix, out / "stability.csv")

    elif args.command == "experiment":
        mapping = parse_config_file(args.config) if args.config else {}
        spec = build_experiment_spec(args.kind, mapping, args.out, args.seed)
        run_experiment(spec)

    elif args.command == "plot":
        emit_plot_data(args.csv, args.out)


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    if args.threads:
        _scalespace.set_fft_workers(args.threads)
    try:
        _run(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
