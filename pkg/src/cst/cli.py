"""Command-line pipeline: ``cst simulate | reconstruct | edges | support | density | analyze``.

Every command reads the files written by the previous stage, writes its own
outputs into ``--out-dir`` and records a ``manifest_<command>.json`` beside
them. Exit codes: 0 success, 1 unexpected error, 2 usage, 3 missing input,
4 malformed file, 5 stage mismatch, 6 pipeline failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np
import scipy.fft

from . import __version__
from . import io as cio
from .analysis import (edge_strength_ratio, singularity_order_map, sobolev_partial_norms,
                       tangency_curve, vline_fourier_coefficients)
from .forward import add_noise, compton_forward
from .grid import GridSpec, ScanGeometry, rasterize
from .phantom import BUILTIN_NAMES, PhantomSpec, builtin_phantom
from .physics import PhysicsParams, lambda_weight
from .postproc import (EdgeConfig, close_boundary, detect_edges, estimate_density, fill_support,
                       p_metric, true_support, EdgeMap, SupportMask)
from .raytransforms import KernelSpec, VLineParams, radon_forward
from .recon import METHODS, ReconConfig, ReconstructionError, fbp_lambda, landweber, tv_reconstruct

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_FORMAT = 4
EXIT_STAGE = 5
EXIT_PIPELINE = 6


class UsageError(Exception):
    """Conflicting or invalid flags."""


class StageMismatchError(Exception):
    """An input file comes from the wrong pipeline stage."""


class PipelineError(Exception):
    """A stage ran but could not produce a meaningful result."""


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("CST_THREADS")
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise UsageError(f"CST_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("CST_THREADS must be >= 1")
    return n


def _positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def _require(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input file not found: {p}")
    return p


def _phantom(args) -> PhantomSpec:
    if getattr(args, "phantom_file", None):
        if args.phantom:
            raise UsageError("give either --phantom or --phantom-file, not both")
        return cio.load_phantom(_require(args.phantom_file))
    if not args.phantom:
        raise UsageError("a phantom is required (--phantom NAME or --phantom-file JSON)")
    params = {}
    if getattr(args, "radius", None) is not None:
        params["radius"] = args.radius
    if getattr(args, "sigma_blob", None) is not None:
        params["sigma"] = args.sigma_blob
    return builtin_phantom(args.phantom, getattr(args, "density", 1.0), **params)


def _physics(args) -> PhysicsParams:
    explicit = [n for n in ("atten_a", "atten_b") if getattr(args, n, None) is not None]
    if args.physics_file:
        if explicit or args.water or args.klein_nishina:
            raise UsageError("--physics-file cannot be combined with --atten-a/--atten-b/--water/--klein-nishina")
        return cio.load_physics(_require(args.physics_file))
    if args.water:
        if explicit:
            raise UsageError("--water derives a and b; do not also pass --atten-a/--atten-b")
        return PhysicsParams.water(args.energy, args.psi, args.unit_cm, **_lambda(args))
    a = 1.0 if args.atten_a is None else args.atten_a
    b = 1.0 if args.atten_b is None else args.atten_b
    return PhysicsParams(energy=args.energy, psi=args.psi, a=a, b=b, **_lambda(args))


def _lambda(args) -> dict:
    mode = "klein_nishina" if args.klein_nishina else "constant"
    return {"lambda_mode": mode, "lambda_value": args.lambda_value}


def _vline(args, phys: PhysicsParams) -> VLineParams:
    kernel = KernelSpec("disk", radius=args.kernel_radius) if args.kernel_radius > 0 else KernelSpec()
    return VLineParams.from_physics(phys, nu=args.nu, kernel=kernel)


def _geometry(args) -> ScanGeometry:
    return ScanGeometry(ns=args.ns, ntheta=args.ntheta)


def _read_sinogram(path, stages=None):
    b, meta = cio.read_sinogram_with_meta(_require(path))
    if stages and meta.get("stage") not in stages:
        raise StageMismatchError(f"{path}: expected a sinogram from stage {sorted(stages)}, "
                                 f"found stage {meta.get('stage')!r}")
    return b, meta


def _read_image(path, stages=None):
    p = _require(path)
    try:
        img, meta = cio.read_image_with_meta(p)
    except cio.MagicMismatchError as exc:
        raise StageMismatchError(str(exc)) from None
    if stages and meta.get("stage") not in stages:
        raise StageMismatchError(f"{path}: expected an image from stage {sorted(stages)}, "
                                 f"found stage {meta.get('stage')!r}")
    return img, meta


def _git_blob_sha1(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


class Run:
    """Collects inputs and outputs of one command and writes its manifest."""

    def __init__(self, args, command: str):
        self.args = args
        self.command = command
        self.out = Path(args.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: list[str] = []
        self.outputs: list[Path] = []
        self.config: dict = {}
        self.t0 = time.time()

    def path(self, name: str) -> Path:
        return self.out / name

    def input(self, path):
        self.inputs.append(str(path))

    def wrote(self, path):
        self.outputs.append(Path(path))
        return path

    def manifest(self, extra: dict | None = None) -> Path:
        files = {}
        for p in self.outputs:
            data = p.read_bytes()
            files[p.name] = {"path": str(p), "sha256": hashlib.sha256(data).hexdigest(),
                             "git_blob": _git_blob_sha1(data)}
        listing = "".join(f"{n} {files[n]['git_blob']}\n" for n in sorted(files)).encode()
        snapshot = {k: v for k, v in vars(self.args).items() if k not in ("func", "argv")}
        data = {
            "command": self.command,
            "argv": list(getattr(self.args, "argv", [])),
            "version": __version__,
            "config": {"flags": snapshot, **self.config},
            "seed": self.args.seed,
            "inputs": self.inputs,
            "outputs": files,
            "artifact_hash": hashlib.sha1(listing).hexdigest(),
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(self.t0)),
            "wall_time_s": round(time.time() - self.t0, 3),
        }
        if extra:
            data["results"] = extra
        return cio.export_json(data, self.path(f"manifest_{self.command}.json"))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    run = Run(args, "simulate")
    spec = _phantom(args)
    phys = _physics(args)
    vp = _vline(args, phys)
    geom = _geometry(args)
    if args.gamma < 0:
        raise UsageError("--gamma must be non-negative")
    f = rasterize(spec, args.n)
    nonlinear = compton_forward(f, geom, phys, vp)
    linear = radon_forward(f, geom)
    noisy = add_noise(nonlinear, args.gamma, args.seed)
    pre = args.prefix
    meta = {"command": "simulate", "phantom": spec.name or "custom"}
    run.wrote(cio.write_image(f, run.path(f"{pre}_phantom.cst"), dict(meta, stage="phantom")))
    run.wrote(cio.write_sinogram(nonlinear, run.path(f"{pre}_nonlinear.cst"), dict(meta, stage="nonlinear")))
    run.wrote(cio.write_sinogram(linear, run.path(f"{pre}_linear.cst"), dict(meta, stage="linear")))
    run.wrote(cio.write_sinogram(noisy, run.path(f"{pre}_noisy.cst"),
                                 dict(meta, stage="noisy", gamma=args.gamma, seed=args.seed)))
    if spec.name == "" or args.phantom_file:
        run.wrote(cio.export_json(spec.to_dict(), run.path(f"{pre}_phantom.json")))
    if not args.no_preview:
        run.wrote(cio.export_pgm(f, run.path(f"{pre}_phantom.pgm")))
        for name, b in (("nonlinear", nonlinear), ("linear", linear), ("noisy", noisy)):
            run.wrote(cio.export_pgm(b, run.path(f"{pre}_{name}.pgm")))
    run.config.update(phantom=spec.to_dict(), physics=phys.to_dict(),
                      geometry=cio.geometry_to_dict(geom), lambda_weight=lambda_weight(phys))
    run.manifest()
    print(f"wrote {len(run.outputs)} files to {run.out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    run = Run(args, "reconstruct")
    b, _ = _read_sinogram(args.sinogram)
    run.input(args.sinogram)
    method = "fbp_lambda" if args.method == "fbp" else args.method
    cfg = ReconConfig(method, args.iterations, args.relaxation, args.tv_lambda, args.tv_beta,
                      args.derivative_order)
    grid = GridSpec(args.n, args.n)
    table = {}
    try:
        if cfg.method == "fbp_lambda":
            img = fbp_lambda(b, b.geom, cfg.derivative_order, grid)
        elif cfg.method == "landweber":
            res = landweber(b, b.geom, cfg, grid)
            img = res.image
            table = {"iteration": np.arange(res.residuals.size), "residual": res.residuals}
        else:
            res = tv_reconstruct(b, b.geom, cfg, grid)
            img = res.image
            table = {"iteration": np.arange(res.objective.size), "objective": res.objective}
    except ReconstructionError as exc:
        raise PipelineError(str(exc)) from None
    stem = f"recon_{cfg.method}"
    run.wrote(cio.write_image(img, run.path(f"{stem}.cst"),
                              {"stage": "reconstruction", "method": cfg.method, "command": "reconstruct"}))
    if table:
        run.wrote(cio.export_csv(table, run.path(f"{stem}_trace.csv")))
    if not args.no_preview:
        run.wrote(cio.export_pgm(img, run.path(f"{stem}.pgm")))
    run.config["recon"] = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    run.manifest()
    print(f"wrote {run.path(stem + '.cst')}")
    return EXIT_OK


def cmd_edges(args) -> int:
    run = Run(args, "edges")
    img, meta = _read_image(args.image, {"reconstruction", "phantom"})
    run.input(args.image)
    cfg = EdgeConfig(args.low, args.high, args.sigma, args.nms_radius)
    e = detect_edges(img, cfg)
    tag = meta.get("method", meta.get("stage"))
    run.wrote(cio.write_image(e.to_image(), run.path(f"edges_{tag}.cst"),
                              {"stage": "edges", "method": tag, "command": "edges"}))
    if not args.no_preview:
        run.wrote(cio.export_pgm(e, run.path(f"edges_{tag}.pgm")))
    run.config["edges"] = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    run.manifest({"edge_pixels": int(e.mask.sum())})
    print(f"edge pixels: {int(e.mask.sum())}")
    return EXIT_OK


def cmd_support(args) -> int:
    run = Run(args, "support")
    img, meta = _read_image(args.edges, {"edges"})
    run.input(args.edges)
    e = EdgeMap(img.values > 0.5, img.spec)
    s = fill_support(close_boundary(e, args.closing_radius))
    tag = meta.get("method", "edges")
    run.wrote(cio.write_image(s.to_image(), run.path(f"support_{tag}.cst"),
                              {"stage": "support", "method": tag, "command": "support",
                               "component_count": s.component_count}))
    if not args.no_preview:
        run.wrote(cio.export_pgm(s, run.path(f"support_{tag}.pgm")))
    results = {"component_count": s.component_count, "touches_border": s.touches_border,
               "enclosed": s.enclosed,
               "pixels": int(s.mask.sum())}
    p = None
    if args.truth or args.truth_file:
        truth_args = argparse.Namespace(phantom=args.truth, phantom_file=args.truth_file)
        p = p_metric(s, true_support(_phantom(truth_args), s.spec))
        results["p"] = p
    run.manifest(results)
    if s.failed:
        raise PipelineError("boundary did not enclose a region (support is empty or leaks to the border)")
    print(f"support pixels: {results['pixels']}, components: {s.component_count}")
    if p is not None:
        print(f"p = {p:.4f}")
    return EXIT_OK


def cmd_density(args) -> int:
    run = Run(args, "density")
    img, _ = _read_image(args.support, {"support"})
    b, _ = _read_sinogram(args.sinogram)
    run.input(args.support)
    run.input(args.sinogram)
    phys = _physics(args)
    vp = _vline(args, phys)
    mask = SupportMask(img.values > 0.5, img.spec)
    if not mask.mask.any():
        raise PipelineError("support mask is empty")
    est = estimate_density(mask, b, b.geom, phys, vp, u_m=args.u_max, n_grid=args.n_grid)
    run.wrote(cio.export_csv({"ne": est.ne_grid, "residual": est.residuals},
                             run.path("density_residuals.csv")))
    res = {"ne_hat": est.ne_hat, "refined": est.refined}
    run.wrote(cio.export_json(res, run.path("density.json")))
    run.config["physics"] = phys.to_dict()
    run.manifest(res)
    print(f"{est.ne_hat:.6f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    return {"sobolev": _analyze_sobolev, "vline-fourier": _analyze_vline_fourier,
            "sing-order": _analyze_sing_order, "edge-ratio": _analyze_edge_ratio}[args.analysis](args)


def _analyze_sobolev(args) -> int:
    run = Run(args, "analyze_sobolev")
    if args.image:
        img, _ = _read_image(args.image)
        run.input(args.image)
    else:
        img = rasterize(_phantom(args), args.n)
    rep = sobolev_partial_norms(img, args.alpha)
    run.wrote(cio.export_csv({"cutoff": rep.cutoffs, "partial_norm": rep.partial_norms},
                             run.path("sobolev.csv")))
    res = {"alpha": rep.alpha, "fitted_order": rep.fitted_order, **rep.diagnostics}
    run.wrote(cio.export_json(res, run.path("sobolev.json")))
    run.manifest(res)
    print(f"fitted Sobolev order: {rep.fitted_order:.4f}")
    return EXIT_OK


def _analyze_vline_fourier(args) -> int:
    run = Run(args, "analyze_vline_fourier")
    if not args.phantom and not args.phantom_file:
        args.phantom = "gaussian"
    f = rasterize(_phantom(args), args.n)
    p = VLineParams(args.a, args.b, args.psi, args.nu, KernelSpec())
    rep = vline_fourier_coefficients(f, p, args.k_max, args.nphi, tuple(args.taper) if args.taper else None)
    ks = rep.k
    table = {"k": ks,
             "field_norm": [rep.norm(k) for k in ks],
             "relative_error": [rep.relative_error(k) for k in ks],
             "median_ratio": [rep.median_ratio(k) for k in ks]}
    run.wrote(cio.export_csv(table, run.path("vline_fourier.csv")))
    res = {"a": args.a, "b": args.b, "psi": args.psi, "nphi": args.nphi,
           "norm_ratio_to_k0": [rep.norm(k) / rep.norm(0) for k in ks]}
    run.wrote(cio.export_json(dict(res, **{k: list(map(float, v)) for k, v in table.items()}),
                              run.path("vline_fourier.json")))
    run.manifest(res)
    print(f"k=0 relative error: {table['relative_error'][0]:.4f}")
    return EXIT_OK


def _analyze_sing_order(args) -> int:
    run = Run(args, "analyze_sing_order")
    b, _ = _read_sinogram(args.sinogram)
    run.input(args.sinogram)
    m = singularity_order_map(b, args.window)
    j, i = np.nonzero(m.flags)
    run.wrote(cio.export_csv({"theta": b.geom.theta[j], "s": b.geom.s[i], "order": m.orders[j, i],
                              "confidence": m.confidence[j, i]}, run.path("sing_order_flags.csv")))
    run.wrote(cio.write_sinogram(b.with_values(m.flags.astype(float)), run.path("sing_order_flags.cst"),
                                 {"stage": "singularity_flags", "command": "analyze"}))
    orders = np.where(np.isfinite(m.orders), m.orders, np.nan)
    res = {"window": m.window, "flagged_bins": int(m.flags.sum()), "valid_bins": int(m.valid.sum()),
           "median_flagged_order": float(np.median(m.orders[m.flags])) if m.flags.any() else None,
           "median_valid_order": float(np.nanmedian(orders[m.valid])) if m.valid.any() else None}
    run.wrote(cio.export_json(res, run.path("sing_order.json")))
    run.manifest(res)
    print(f"flagged bins: {res['flagged_bins']}")
    return EXIT_OK


def _analyze_edge_ratio(args) -> int:
    run = Run(args, "analyze_edge_ratio")
    bn, _ = _read_sinogram(args.nonlinear)
    bl, _ = _read_sinogram(args.linear)
    run.input(args.nonlinear)
    run.input(args.linear)
    if bn.geom != bl.geom:
        raise UsageError("the two sinograms must share a scan geometry")
    spec = _phantom(args)
    outer = [s for s in spec.shapes if s.sign > 0]
    inner = [s for s in spec.shapes if s.sign < 0]
    if not outer or not inner:
        raise UsageError("edge-ratio needs a phantom with an outer (positive) and an inner (negative) shape")
    try:
        r = edge_strength_ratio(bn, bl, tangency_curve(inner[0], bn.geom), tangency_curve(outer[0], bn.geom))
    except ValueError as exc:
        raise PipelineError(str(exc)) from None
    res = {"ratio_nl": r.ratio_nl, "ratio_lin": r.ratio_lin}
    run.wrote(cio.export_json(res, run.path("edge_ratio.json")))
    run.wrote(cio.export_csv({"ratio_nl": [r.ratio_nl], "ratio_lin": [r.ratio_lin]}, run.path("edge_ratio.csv")))
    run.manifest(res)
    print(f"ratio_nl = {r.ratio_nl:.4f}")
    print(f"ratio_lin = {r.ratio_lin:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--out-dir", default=d("."), help="directory for outputs and the manifest (default: .)")
    parser.add_argument("--seed", type=int, default=d(0), help="noise seed (default: 0)")
    parser.add_argument("--threads", type=_positive_int, default=d(None),
                        help="FFT worker threads (default: $CST_THREADS or 1)")


def _phantom_flags(p: argparse.ArgumentParser, required_note: str = "") -> None:
    p.add_argument("--phantom", choices=BUILTIN_NAMES, help=f"built-in phantom{required_note}")
    p.add_argument("--phantom-file", help="phantom JSON (see schemas/phantom.schema.json)")
    p.add_argument("--density", type=float, default=1.0, help="relative electron density (default 1)")
    p.add_argument("--radius", type=float, help="disk radius for --phantom disk")
    p.add_argument("--sigma-blob", type=float, help="standard deviation for --phantom gaussian")


def _physics_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--physics-file", help="physics JSON (see schemas/physics.schema.json)")
    p.add_argument("--energy", type=float, default=1.17, help="source energy in MeV (default 1.17)")
    p.add_argument("--psi", type=float, default=math.pi / 4, help="opening half-angle in radians (default pi/4)")
    p.add_argument("--atten-a", type=float, help="attenuation weight at the source energy (default 1)")
    p.add_argument("--atten-b", type=float, help="attenuation weight at the scattered energy (default 1)")
    p.add_argument("--water", action="store_true",
                   help="derive a and b from the Compton cross-section of water")
    p.add_argument("--unit-cm", type=float, default=25.0, help="centimetres per unit length for --water")
    p.add_argument("--lambda", dest="lambda_value", type=float, default=1.0,
                   help="constant intensity factor lambda (default 1)")
    p.add_argument("--klein-nishina", action="store_true",
                   help="use I0 times the Klein-Nishina cross-section as lambda")
    p.add_argument("--kernel-radius", type=float, default=0.02,
                   help="radius of the disk smoothing kernel; 0 for none (default 0.02)")
    p.add_argument("--nu", type=float, default=4.0, help="V-line leg length (default 4)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cst", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cst {__version__}")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    preview = argparse.ArgumentParser(add_help=False)
    preview.add_argument("--no-preview", action="store_true", help="skip PGM previews")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", parents=[common, preview],
                       help="rasterize a phantom and write non-linear, linear and noisy sinograms")
    _phantom_flags(p)
    _physics_flags(p)
    p.add_argument("--n", type=_positive_int, default=200, help="image size N for an N x N grid (default 200)")
    p.add_argument("--ns", type=_positive_int, default=282, help="number of offsets s (default 282)")
    p.add_argument("--ntheta", type=_positive_int, default=360, help="number of angles (default 360)")
    p.add_argument("--gamma", type=float, default=0.01, help="relative noise level (default 0.01)")
    p.add_argument("--prefix", default="sim", help="output file prefix (default sim)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", parents=[common, preview], help="reconstruct an image from a sinogram")
    p.add_argument("sinogram", help="sinogram file (.cst)")
    p.add_argument("--method", choices=METHODS + ("fbp",), default="tv",
                   help="reconstruction method; 'fbp' is short for fbp_lambda (default tv)")
    p.add_argument("--iterations", "--iters", type=_positive_int, help="iterations (default: landweber 200, tv 300)")
    p.add_argument("--relaxation", "--relax", type=float, help="Landweber/TV initial step (default 1/||A||^2)")
    p.add_argument("--tv-lambda", type=float, default=0.02, help="TV weight (default 0.02)")
    p.add_argument("--tv-beta", type=float, default=0.05, help="TV smoothing parameter (default 0.05)")
    p.add_argument("--derivative-order", "--deriv-order", type=int, choices=(1, 2), default=2,
                   help="s-derivative order of the lambda filter (default 2)")
    p.add_argument("--n", type=_positive_int, default=200, help="output image size (default 200)")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("edges", parents=[common, preview], help="Canny-style edge map of a reconstruction")
    p.add_argument("image", help="reconstruction or phantom image (.cst)")
    p.add_argument("--low", type=float, default=0.7, help="low hysteresis quantile (default 0.7)")
    p.add_argument("--high", type=float, default=0.9, help="high hysteresis quantile (default 0.9)")
    p.add_argument("--sigma", type=float, default=1.0, help="Gaussian pre-smoothing in pixels (default 1)")
    p.add_argument("--nms-radius", type=_positive_int, default=3,
                   help="non-maximum suppression reach in pixels (default 3)")
    p.set_defaults(func=cmd_edges)

    p = sub.add_parser("support", parents=[common, preview], help="close an edge map and fill the support")
    p.add_argument("edges", help="edge map (.cst) written by 'cst edges'")
    p.add_argument("--closing-radius", type=_positive_int, default=2, help="closing disk radius (default 2)")
    p.add_argument("--truth", choices=BUILTIN_NAMES, help="built-in phantom to score against (prints p)")
    p.add_argument("--truth-file", help="phantom JSON to score against (prints p)")
    p.set_defaults(func=cmd_support)

    p = sub.add_parser("density", parents=[common], help="least-squares density value on a support")
    p.add_argument("--support", required=True, help="support mask (.cst) written by 'cst support'")
    p.add_argument("--sinogram", required=True, help="measured sinogram (.cst)")
    _physics_flags(p)
    p.add_argument("--u-max", "--umax", type=float, default=2.0, help="upper end of the density scan (default 2)")
    p.add_argument("--n-grid", "--ngrid", type=_positive_int, default=201, help="scan points (default 201)")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("analyze", parents=[common], help="spectral and microlocal diagnostics")
    asub = p.add_subparsers(dest="analysis", required=True, metavar="ANALYSIS")
    q = asub.add_parser("sobolev", parents=[common], help="Sobolev partial norms and fitted order")
    q.add_argument("--image", help="image file (.cst); otherwise rasterize --phantom")
    _phantom_flags(q)
    q.add_argument("--n", type=_positive_int, default=200)
    q.add_argument("--alpha", type=float, default=0.0, help="Sobolev weight exponent (default 0)")
    q = asub.add_parser("vline-fourier", parents=[common], help="angular harmonics of the V-line transform")
    _phantom_flags(q, " (default gaussian)")
    q.add_argument("--n", type=_positive_int, default=200)
    q.add_argument("--k-max", type=int, default=3)
    q.add_argument("--nphi", type=_positive_int, default=256)
    q.add_argument("--a", type=float, default=1.0)
    q.add_argument("--b", type=float, default=1.0)
    q.add_argument("--psi", type=float, default=math.pi / 4)
    q.add_argument("--nu", type=float, default=8.0)
    q.add_argument("--taper", type=float, nargs=2, metavar=("R0", "R1"),
                   help="radial taper applied before measuring spectra; use for k >= 1 (e.g. 0.5 0.95)")
    q = asub.add_parser("sing-order", parents=[common], help="local singularity orders of a sinogram")
    q.add_argument("sinogram", help="sinogram file (.cst)")
    q.add_argument("--window", type=int, default=64, help="window length, power of two >= 16 (default 64)")
    q = asub.add_parser("edge-ratio", parents=[common], help="inner/outer tangency edge strengths")
    q.add_argument("--nonlinear", required=True, help="non-linear sinogram (.cst)")
    q.add_argument("--linear", required=True, help="linear sinogram (.cst)")
    _phantom_flags(q, " giving the tangency curves")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        argv = sys.argv[1:] if argv is None else list(argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    try:
        with scipy.fft.set_workers(_threads(args)):
            return args.func(args)
    except UsageError as exc:
        print(f"cst: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"cst: error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except StageMismatchError as exc:
        print(f"cst: stage mismatch: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except cio.CSTFormatError as exc:
        print(f"cst: format error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except jsonschema.ValidationError as exc:
        print(f"cst: invalid configuration file: {exc.message}", file=sys.stderr)
        return EXIT_FORMAT
    except PipelineError as exc:
        print(f"cst: pipeline failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except (ValueError, json.JSONDecodeError) as exc:
        # invalid flag values surface as ValueError from the config types
        print(f"cst: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"cst: unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
