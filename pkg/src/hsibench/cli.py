"""Batch command-line interface.

Subcommands cover the full benchmark loop:

    simulate     render clean / degraded RGB observations from spectral cubes
    fit          train a reconstruction baseline on (RGB, cube) pairs
    reconstruct  apply a fitted model (or the pseudoinverse) to observations
    evaluate     score reconstructions against ground truth, build leaderboard
    report       render Markdown/CSV tables from evaluation outputs

Conventions shared by all subcommands:

- A TOML config file (``--config`` flag, or the ``HSIBENCH_CONFIG``
  environment variable as the default path) supplies run settings; any
  command-line flag overrides its config-file counterpart.
- Every output artifact embeds a 12-hex-digit hash of the resolved semantic
  configuration (seeds, track, noise, compression, metric knobs, camera
  hash — never filesystem paths, so identical runs into different
  directories stay byte-identical). Text artifacts carry it as a comment
  line; binary artifacts are covered by the run's ``provenance.json``.
- Exit codes: 0 success, 1 at least one per-scene failure, 2 usage or
  config error.
- ``--jobs`` caps worker threads; scene results are merged in manifest
  order, so output never depends on the worker count.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from hsibench import __version__
from hsibench.baselines import (
    BasisModel,
    LinearModel,
    clamp_nonnegative,
    fit_basis,
    fit_linear,
    load_model,
    predict_basis,
    predict_linear,
    pseudoinverse_estimate,
    save_model,
)
from hsibench.camera import (
    NoiseParams,
    percentile_white_level,
    project_clean,
    real_world_jpeg,
)
from hsibench.core import DEFAULT_GRID, CameraResponse, HsiCube, Rgb8Image, RgbImage
from hsibench.dataset import (
    Manifest,
    SceneRecord,
    css_to_text,
    load_manifest,
    read_css,
    read_cube,
    read_rgb8,
    read_rgb_float,
    save_manifest,
    write_css,
    write_cube,
    write_rgb_float,
)
from hsibench.metrics import MetricConfig, mrae, rmse
from hsibench.presets import DEFAULT_NOISE, default_css
from hsibench.report import (
    build_leaderboard,
    leaderboard_from_csv,
    leaderboard_to_csv,
    leaderboard_to_text,
    parse_aux_means,
    render_report,
)
from hsibench.robustness import run_aux_suite, scene_noise_seed

TRACKS = ("clean", "real_world")
SUBSAMPLINGS = ("4:4:4", "4:2:2", "4:2:0")

_CONFIG_SCHEMA = {
    "run": {"track", "output_dir", "css_path", "jobs"},
    "noise": {"photon_gain", "dark_sigma", "seed"},
    "jpeg": {"quality", "subsampling"},
    "simulate": {"white_level", "percentile"},
    "metrics": {"denom_floor", "cluster_count", "cluster_seed", "tau"},
    "shuffle": {"patch", "seed"},
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except OSError as exc:
        raise click.UsageError(f"cannot read config file: {exc}")
    except tomllib.TOMLDecodeError as exc:
        raise click.UsageError(f"invalid config file {path}: {exc}")
    for section, values in cfg.items():
        if section not in _CONFIG_SCHEMA:
            raise click.UsageError(f"unknown config section [{section}] in {path}")
        if not isinstance(values, dict):
            raise click.UsageError(f"config section [{section}] must be a table")
        for key in values:
            if key not in _CONFIG_SCHEMA[section]:
                raise click.UsageError(f"unknown config key {section}.{key} in {path}")
    return cfg


def _pick(flag_value, cfg: dict, section: str, key: str, default):
    if flag_value is not None:
        return flag_value
    return cfg.get(section, {}).get(key, default)


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings for one command invocation."""

    track: str
    output_dir: Path
    css_path: str | None
    noise: NoiseParams
    jpeg_quality: int
    jpeg_subsampling: str
    white_level: float | None  # None = derive from the data
    white_percentile: float
    metrics: MetricConfig
    shuffle_patch: int
    shuffle_seed: int
    jobs: int

    def semantic_dict(self) -> dict:
        """The hash preimage: every knob that affects artifact bytes, no
        filesystem locations."""
        return {
            "track": self.track,
            "noise": {
                "photon_gain": self.noise.photon_gain,
                "dark_sigma": self.noise.dark_sigma,
                "seed": self.noise.seed,
            },
            "jpeg": {"quality": self.jpeg_quality, "subsampling": self.jpeg_subsampling},
            "white_level": self.white_level,
            "white_percentile": self.white_percentile,
            "metrics": {
                "denom_floor": self.metrics.denom_floor,
                "cluster_count": self.metrics.cluster_count,
                "cluster_seed": self.metrics.cluster_seed,
                "tau": self.metrics.tau,
            },
            "shuffle": {"patch": self.shuffle_patch, "seed": self.shuffle_seed},
        }


def _resolve_run_config(cfg: dict, *, track, output, css, seed, photon_gain, dark_sigma,
                        quality, subsampling, white_level, jobs) -> RunConfig:
    out = _pick(output, cfg, "run", "output_dir", None)
    if out is None:
        raise click.UsageError("no output directory: pass --output or set run.output_dir")
    track = _pick(track, cfg, "run", "track", "clean")
    if track not in TRACKS + ("both",):
        raise click.UsageError(f"run.track must be one of {TRACKS + ('both',)}, got {track!r}")
    subsampling = _pick(subsampling, cfg, "jpeg", "subsampling", "4:2:0")
    if subsampling not in SUBSAMPLINGS:
        raise click.UsageError(f"jpeg.subsampling must be one of {SUBSAMPLINGS}")
    quality = int(_pick(quality, cfg, "jpeg", "quality", 95))
    if not 1 <= quality <= 100:
        raise click.UsageError("jpeg.quality must be in 1..100")
    wl = _pick(white_level, cfg, "simulate", "white_level", None)
    if wl is not None and wl <= 0:
        wl = None  # 0 means "derive from the data"
    try:
        noise = NoiseParams(
            photon_gain=float(_pick(photon_gain, cfg, "noise", "photon_gain",
                                    DEFAULT_NOISE.photon_gain)),
            dark_sigma=float(_pick(dark_sigma, cfg, "noise", "dark_sigma",
                                   DEFAULT_NOISE.dark_sigma)),
            seed=int(_pick(seed, cfg, "noise", "seed", DEFAULT_NOISE.seed)),
        )
        metric_cfg = MetricConfig(
            denom_floor=float(cfg.get("metrics", {}).get("denom_floor", 1e-8)),
            cluster_count=int(cfg.get("metrics", {}).get("cluster_count", 1000)),
            cluster_seed=int(cfg.get("metrics", {}).get("cluster_seed", 0)),
            tau=float(cfg.get("metrics", {}).get("tau", 10.0)),
        )
    except ValueError as exc:
        raise click.UsageError(f"invalid config value: {exc}")
    return RunConfig(
        track=track,
        output_dir=Path(out),
        css_path=_pick(css, cfg, "run", "css_path", None),
        noise=noise,
        jpeg_quality=quality,
        jpeg_subsampling=subsampling,
        white_level=None if wl is None else float(wl),
        white_percentile=float(cfg.get("simulate", {}).get("percentile", 99.9)),
        metrics=metric_cfg,
        shuffle_patch=int(cfg.get("shuffle", {}).get("patch", 4)),
        shuffle_seed=int(cfg.get("shuffle", {}).get("seed", 0)),
        jobs=max(1, int(_pick(jobs, cfg, "run", "jobs", 1))),
    )


def _config_hash(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _resolve_css(run: RunConfig, manifest: Manifest | None = None) -> CameraResponse:
    """Explicit table if configured; otherwise the built-in synthetic camera
    on the dataset's wavelength grid (peeked from the first readable cube)."""
    if run.css_path is not None:
        try:
            return read_css(run.css_path)
        except (OSError, ValueError) as exc:
            raise click.UsageError(f"cannot load camera sensitivities: {exc}")
    grid = DEFAULT_GRID
    if manifest is not None:
        for scene in manifest:
            if scene.cube is None:
                continue
            try:
                grid = read_cube(manifest.resolve(scene.cube)).grid
                break
            except (OSError, ValueError):
                continue
    return default_css(grid)


def _write_provenance(outdir: Path, payload: dict) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    (outdir / "provenance.json").write_text(text)


def _ordered_map(fn, items, jobs: int) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _report_failures(failures: list) -> None:
    """Print per-scene failures and exit 1 if there are any."""
    if failures:
        for scene_id, message in failures:
            click.echo(f"FAILED {scene_id}: {message}", err=True)
        click.echo(f"{len(failures)} scene(s) failed", err=True)
        sys.exit(1)


# ---------------------------------------------------------------------------
# observations and reconstructors
# ---------------------------------------------------------------------------


def _observation_rgb(obs: RgbImage | Rgb8Image) -> RgbImage:
    """Model-input domain: linear RGB as-is; 8-bit codes normalized to [0,1]
    (the degraded track's models see code values, not absolute radiance)."""
    if isinstance(obs, RgbImage):
        return obs
    if isinstance(obs, Rgb8Image):
        return RgbImage(obs.data.astype(np.float64) / 255.0)
    raise TypeError(f"expected an RGB observation, got {type(obs).__name__}")


def _load_observation(manifest: Manifest, scene: SceneRecord, track: str,
                      css: CameraResponse | None):
    """The observation a reconstructor consumes for this scene and track."""
    if track == "clean":
        if scene.rgb_clean is not None:
            return read_rgb_float(manifest.resolve(scene.rgb_clean))
        if scene.cube is not None and css is not None:
            return project_clean(read_cube(manifest.resolve(scene.cube)), css)
        raise ValueError("no clean observation: need rgb_clean, or a cube plus sensitivities")
    if scene.rgb_real is not None:
        return read_rgb8(manifest.resolve(scene.rgb_real), white_level=1.0)
    raise ValueError("no degraded observation: scene has no rgb_real path")


def _make_reconstructor(model_spec: str, css: CameraResponse | None):
    """Build obs -> HsiCube from a model file path or the literal 'pinv'."""
    if model_spec == "pinv":
        if css is None:
            raise click.UsageError("the pseudoinverse needs camera sensitivities (--css)")
        return lambda obs: pseudoinverse_estimate(css, _observation_rgb(obs)), "pinv"
    try:
        model = load_model(model_spec)
    except (OSError, ValueError) as exc:
        raise click.UsageError(f"cannot load model: {exc}")
    if isinstance(model, LinearModel):
        return lambda obs: predict_linear(model, _observation_rgb(obs)), "linear"
    return lambda obs: predict_basis(model, _observation_rgb(obs)), "basis"


def _parse_named_specs(specs: tuple[str, ...], flag: str) -> dict:
    out: dict = {}
    for spec in specs:
        name, sep, value = spec.partition("=")
        if not sep or not name or not value:
            raise click.UsageError(f"{flag} expects NAME=VALUE, got {spec!r}")
        if name in out:
            raise click.UsageError(f"duplicate {flag} name {name!r}")
        out[name] = value
    return out


# ---------------------------------------------------------------------------
# command group
# ---------------------------------------------------------------------------


@click.group()
@click.version_option(version=__version__, prog_name="hsibench")
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False),
    envvar="HSIBENCH_CONFIG",
    default=None,
    help="TOML config file; flags override its values.",
)
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    """Benchmark toolkit for spectral reconstruction from RGB images."""
    ctx.obj = _load_config_file(config_path)


_COMMON = [
    click.option("--track", type=click.Choice(TRACKS + ("both",)), default=None,
                 help="Which observation track to process."),
    click.option("--output", type=click.Path(file_okay=False), default=None,
                 help="Output directory."),
    click.option("--css", type=click.Path(exists=True, dir_okay=False), default=None,
                 help="Camera sensitivity table (default: built-in synthetic camera)."),
    click.option("--seed", type=int, default=None, help="Base noise seed."),
    click.option("--photon-gain", type=float, default=None,
                 help="Photons per unit radiance (0 disables shot noise)."),
    click.option("--dark-sigma", type=float, default=None,
                 help="Additive sensor noise level (0 disables)."),
    click.option("--quality", type=int, default=None, help="JPEG quality 1..100."),
    click.option("--subsampling", type=click.Choice(SUBSAMPLINGS), default=None,
                 help="JPEG chroma subsampling."),
    click.option("--white-level", type=float, default=None,
                 help="Linear value mapped to code 255 (0 = derive from data)."),
    click.option("--jobs", type=int, default=None, help="Worker thread cap."),
]


def _with_common(fn):
    for deco in reversed(_COMMON):
        fn = deco(fn)
    return fn


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@_with_common
@click.pass_context
def simulate(ctx, manifest_path, track, output, css, seed, photon_gain, dark_sigma,
             quality, subsampling, white_level, jobs):
    """Render RGB observations for every scene in MANIFEST_PATH.

    Writes <id>_clean.npy (lossless linear RGB) and/or <id>_real.jpg
    (mosaic + noise + demosaic + quantize + JPEG), a manifest referencing
    them, the camera table used, and a provenance sidecar. Scenes whose
    cube cannot be read are reported and skipped (exit code 1).
    """
    run = _resolve_run_config(ctx.obj, track=track, output=output, css=css, seed=seed,
                              photon_gain=photon_gain, dark_sigma=dark_sigma,
                              quality=quality, subsampling=subsampling,
                              white_level=white_level, jobs=jobs)
    manifest = load_manifest(manifest_path, check_paths=False)
    camera = _resolve_css(run, manifest)
    css_hash = _sha256_text(css_to_text(camera))
    config_hash = _config_hash({"command": "simulate", "css_sha256": css_hash,
                                **run.semantic_dict()})
    do_clean = run.track in ("clean", "both")
    do_real = run.track in ("real_world", "both")

    outdir = run.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    write_css(camera, outdir / "css.csv")

    def load_and_project(scene: SceneRecord):
        if scene.cube is None:
            return scene, None, None, "scene has no cube path"
        try:
            cube = read_cube(manifest.resolve(scene.cube))
            return scene, cube, project_clean(cube, camera), None
        except (OSError, ValueError) as exc:
            return scene, None, None, str(exc)

    loaded = _ordered_map(load_and_project, manifest, run.jobs)
    failures = [(scene.id, msg) for scene, _, _, msg in loaded if msg]
    good = [(scene, cube, rgb) for scene, cube, rgb, msg in loaded if msg is None]

    resolved_white = run.white_level
    if do_real and resolved_white is None:
        if not good:
            _report_failures(failures or [("<all>", "no readable cubes")])
        resolved_white = percentile_white_level(
            [rgb for _, _, rgb in good], run.white_percentile
        )

    def render(item):
        scene, cube, rgb = item
        record = {"id": scene.id}
        if do_clean:
            name = f"{scene.id}_clean.npy"
            write_rgb_float(rgb, outdir / name)
            record["clean"] = name
        if do_real:
            name = f"{scene.id}_real.jpg"
            params = NoiseParams(run.noise.photon_gain, run.noise.dark_sigma,
                                 scene_noise_seed(run.noise.seed, scene.id))
            blob = real_world_jpeg(cube, camera, params, resolved_white,
                                   run.jpeg_quality, run.jpeg_subsampling)
            (outdir / name).write_bytes(blob)
            record["real"] = name
        return record

    records = _ordered_map(render, good, run.jobs)

    out_scenes = []
    by_id = {r["id"]: r for r in records}
    for scene, _, _ in good:
        rec = by_id[scene.id]
        cube_rel = Path(os.path.relpath(manifest.resolve(scene.cube), outdir)).as_posix()
        out_scenes.append(SceneRecord(
            id=scene.id,
            cube=cube_rel,
            rgb_clean=rec.get("clean"),
            rgb_real=rec.get("real"),
            tags=scene.tags,
        ))
    save_manifest(Manifest(outdir, tuple(out_scenes)), outdir / "manifest.jsonl",
                  comment=f"config_hash={config_hash}")

    _write_provenance(outdir, {
        "command": "simulate",
        "config_hash": config_hash,
        "config": run.semantic_dict(),
        "css": {"file": "css.csv", "sha256": css_hash},
        "white_level": resolved_white,
        "scenes": {r["id"]: {k: v for k, v in r.items() if k != "id"} for r in records},
        "errors": [{"scene": s, "message": m} for s, m in failures],
    })
    click.echo(f"simulated {len(records)} scene(s) into {outdir} [{config_hash}]")
    _report_failures(failures)


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_kind", type=click.Choice(["linear", "basis"]),
              required=True, help="Baseline family to fit.")
@click.option("--order", type=click.IntRange(1, 2), default=1,
              help="Feature order: 1 = rgb, 2 = rgb + squares + products.")
@click.option("--ridge-lambda", type=float, default=1e-8, help="Ridge strength.")
@click.option("--k", type=int, default=10, help="Basis size (basis model only).")
@click.option("--iterations", type=int, default=10,
              help="Alternating refinement passes (basis model only).")
@click.option("--objective", type=click.Choice(["plain", "css_prior"]), default="plain",
              help="Basis fit objective; css_prior also weighs camera-space agreement.")
@click.option("--tau", type=float, default=10.0,
              help="Camera-space weight for the css_prior objective.")
@click.option("--tag", default=None, help="Train only on scenes carrying this tag.")
@click.option("--name", "model_name", default="model", help="Output file stem.")
@_with_common
@click.pass_context
def fit(ctx, manifest_path, model_kind, order, ridge_lambda, k, iterations, objective,
        tau, tag, model_name, track, output, css, seed, photon_gain, dark_sigma,
        quality, subsampling, white_level, jobs):
    """Fit a reconstruction baseline on the scenes of MANIFEST_PATH.

    Pairs each scene's track observation with its ground-truth cube.
    Writes <name>.sbmd plus <name>.meta.json with the training scores.
    An incomplete training set aborts without writing a model.
    """
    run = _resolve_run_config(ctx.obj, track=track, output=output, css=css, seed=seed,
                              photon_gain=photon_gain, dark_sigma=dark_sigma,
                              quality=quality, subsampling=subsampling,
                              white_level=white_level, jobs=jobs)
    if run.track == "both":
        raise click.UsageError("fit needs a single track: clean or real_world")
    manifest = load_manifest(manifest_path, check_paths=False)
    if tag is not None:
        manifest = manifest.filter_by_tag(tag)
        if len(manifest) == 0:
            raise click.UsageError(f"no scene carries tag {tag!r}")
    camera = _resolve_css(run, manifest)
    css_hash = _sha256_text(css_to_text(camera))
    config_hash = _config_hash({
        "command": "fit", "css_sha256": css_hash, "model": model_kind,
        "order": order, "ridge_lambda": ridge_lambda, "k": k,
        "iterations": iterations, "objective": objective, "tau": tau, "tag": tag,
        **run.semantic_dict(),
    })

    def load_pair(scene: SceneRecord):
        try:
            if scene.cube is None:
                raise ValueError("scene has no cube path")
            cube = read_cube(manifest.resolve(scene.cube))
            obs = _load_observation(manifest, scene, run.track, camera)
            return scene.id, (_observation_rgb(obs), cube), None
        except (OSError, ValueError) as exc:
            return scene.id, None, str(exc)

    loaded = _ordered_map(load_pair, manifest, run.jobs)
    failures = [(sid, msg) for sid, _, msg in loaded if msg]
    if failures:
        click.echo("training set incomplete; no model written", err=True)
        _report_failures(failures)
    pairs = [pair for _, pair, _ in loaded]
    if not pairs:
        raise click.UsageError("manifest has no scenes to train on")

    try:
        if model_kind == "linear":
            model = fit_linear(pairs, feature_order=order, ridge_lambda=ridge_lambda)
            predict = predict_linear
            hyper = {"feature_order": order, "ridge_lambda": ridge_lambda}
        else:
            model = fit_basis(pairs, k=k, ridge_lambda=ridge_lambda,
                              iterations=iterations, objective=objective,
                              css=camera if objective == "css_prior" else None,
                              tau=tau, feature_order=order)
            predict = predict_basis
            hyper = {"feature_order": order, "ridge_lambda": ridge_lambda, "k": model.k,
                     "iterations": iterations, "objective": objective,
                     "tau": tau if objective == "css_prior" else None}
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise click.ClickException(f"fit failed: {exc}")

    scores = [(mrae(cube, predict(model, rgb), run.metrics),
               rmse(cube, predict(model, rgb))) for rgb, cube in pairs]
    training_mrae = float(np.mean([s[0] for s in scores]))
    training_rmse = float(np.mean([s[1] for s in scores]))

    outdir = run.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    save_model(model, outdir / f"{model_name}.sbmd")
    meta = {
        "command": "fit",
        "config_hash": config_hash,
        "config": run.semantic_dict(),
        "css": {"sha256": css_hash},
        "model": {"file": f"{model_name}.sbmd", "kind": model_kind, **hyper},
        "training": {"scenes": len(pairs), "mrae": training_mrae, "rmse": training_rmse},
    }
    (outdir / f"{model_name}.meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n"
    )
    click.echo(
        f"fit {model_kind} on {len(pairs)} scene(s): training MRAE {training_mrae:.6g}"
        f" [{config_hash}]"
    )


# ---------------------------------------------------------------------------
# reconstruct
# ---------------------------------------------------------------------------


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_spec", required=True,
              help="Model file, or 'pinv' for the closed-form pseudoinverse.")
@click.option("--clamp/--no-clamp", default=False,
              help="Zero out negative spectral values (off by default: clamping "
                   "breaks exact camera-space consistency).")
@_with_common
@click.pass_context
def reconstruct(ctx, manifest_path, model_spec, clamp, track, output, css, seed,
                photon_gain, dark_sigma, quality, subsampling, white_level, jobs):
    """Reconstruct a spectral cube for every scene in MANIFEST_PATH.

    Reads the track's observation per scene, applies the model, and writes
    <id>_rec.bhsc files plus a provenance sidecar.
    """
    run = _resolve_run_config(ctx.obj, track=track, output=output, css=css, seed=seed,
                              photon_gain=photon_gain, dark_sigma=dark_sigma,
                              quality=quality, subsampling=subsampling,
                              white_level=white_level, jobs=jobs)
    if run.track == "both":
        raise click.UsageError("reconstruct needs a single track: clean or real_world")
    manifest = load_manifest(manifest_path, check_paths=False)
    camera = _resolve_css(run, manifest)
    reconstructor, model_tag = _make_reconstructor(model_spec, camera)
    model_hash = (
        "pinv" if model_spec == "pinv"
        else hashlib.sha256(Path(model_spec).read_bytes()).hexdigest()
    )
    config_hash = _config_hash({
        "command": "reconstruct", "model_sha256": model_hash, "clamp": clamp,
        "css_sha256": _sha256_text(css_to_text(camera)), **run.semantic_dict(),
    })
    outdir = run.output_dir
    outdir.mkdir(parents=True, exist_ok=True)

    def process(scene: SceneRecord):
        try:
            obs = _load_observation(manifest, scene, run.track, camera)
            rec = reconstructor(obs)
            if not isinstance(rec, HsiCube):
                raise ValueError("model did not produce a cube")
            if clamp:
                rec = clamp_nonnegative(rec)
            name = f"{scene.id}_rec.bhsc"
            write_cube(rec, outdir / name)
            return scene.id, name, None
        except (OSError, ValueError) as exc:
            return scene.id, None, str(exc)

    results = _ordered_map(process, manifest, run.jobs)
    failures = [(sid, msg) for sid, _, msg in results if msg]
    written = {sid: name for sid, name, msg in results if msg is None}

    _write_provenance(outdir, {
        "command": "reconstruct",
        "config_hash": config_hash,
        "config": run.semantic_dict(),
        "model": {"spec": model_tag, "sha256": model_hash, "clamp": clamp},
        "scenes": written,
        "errors": [{"scene": s, "message": m} for s, m in failures],
    })
    click.echo(f"reconstructed {len(written)} scene(s) into {outdir} [{config_hash}]")
    _report_failures(failures)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--rec", "rec_specs", multiple=True, required=True,
              help="NAME=DIR of reconstructions (<id>_rec.bhsc files); repeatable.")
@click.option("--model", "model_specs", multiple=True,
              help="NAME=MODEL_PATH (or NAME=pinv) enabling auxiliary columns "
                   "for that method; repeatable.")
@click.option("--aux", "with_aux", is_flag=True,
              help="Run the robustness suite for every method given via --model.")
@click.option("--pooled", is_flag=True,
              help="Pool all pixels across scenes instead of averaging per-scene scores.")
@_with_common
@click.pass_context
def evaluate(ctx, manifest_path, rec_specs, model_specs, with_aux, pooled, track,
             output, css, seed, photon_gain, dark_sigma, quality, subsampling,
             white_level, jobs):
    """Score reconstructions against the ground-truth cubes of MANIFEST_PATH.

    Ranks methods by MRAE (RMSE reported, never ranked on) and writes
    leaderboard.csv / leaderboard.txt; with --aux, also aux_<name>.csv/.txt
    per method. Scenes that cannot be scored are excluded from the means
    and reported (exit code 1).
    """
    run = _resolve_run_config(ctx.obj, track=track, output=output, css=css, seed=seed,
                              photon_gain=photon_gain, dark_sigma=dark_sigma,
                              quality=quality, subsampling=subsampling,
                              white_level=white_level, jobs=jobs)
    if run.track == "both":
        raise click.UsageError("evaluate needs a single track: clean or real_world")
    methods = _parse_named_specs(rec_specs, "--rec")
    models = _parse_named_specs(model_specs, "--model")
    for name in models:
        if name not in methods:
            raise click.UsageError(f"--model name {name!r} has no matching --rec")
    if with_aux and not models:
        raise click.UsageError("--aux needs at least one --model NAME=PATH")
    manifest = load_manifest(manifest_path, check_paths=False)
    camera = _resolve_css(run, manifest)
    css_hash = _sha256_text(css_to_text(camera))
    config_hash = _config_hash({
        "command": "evaluate", "css_sha256": css_hash, "pooled": pooled,
        "methods": sorted(methods), **run.semantic_dict(),
    })
    outdir = run.output_dir
    outdir.mkdir(parents=True, exist_ok=True)

    def load_gt(scene: SceneRecord):
        if scene.cube is None:
            return scene.id, None, "scene has no cube path"
        try:
            return scene.id, read_cube(manifest.resolve(scene.cube)), None
        except (OSError, ValueError) as exc:
            return scene.id, None, str(exc)

    gt_loaded = _ordered_map(load_gt, manifest, run.jobs)
    failures = [(sid, msg) for sid, _, msg in gt_loaded if msg]
    gt_cubes = [(sid, cube) for sid, cube, msg in gt_loaded if msg is None]

    scores = []
    per_method: dict = {}
    for name in sorted(methods):
        rec_dir = Path(methods[name])

        def score_scene(item):
            sid, gt = item
            try:
                rec = read_cube(rec_dir / f"{sid}_rec.bhsc")
                return sid, (
                    mrae(gt, rec, run.metrics),
                    rmse(gt, rec),
                    float(np.sum(np.abs(gt.data - rec.data)
                                 / np.maximum(gt.data, run.metrics.denom_floor))),
                    float(np.sum((gt.data - rec.data) ** 2)),
                    gt.data.size,
                ), None
            except (OSError, ValueError) as exc:
                return sid, None, str(exc)

        results = _ordered_map(score_scene, gt_cubes, run.jobs)
        failures += [(f"{name}/{sid}", msg) for sid, _, msg in results if msg]
        valid = [(sid, vals) for sid, vals, msg in results if msg is None]
        if not valid:
            failures.append((name, "no scene could be scored"))
            continue
        if pooled:
            total = sum(v[4] for _, v in valid)
            method_mrae = sum(v[2] for _, v in valid) / total
            method_rmse = float(np.sqrt(sum(v[3] for _, v in valid) / total))
        else:
            method_mrae = float(np.mean([v[0] for _, v in valid]))
            method_rmse = float(np.mean([v[1] for _, v in valid]))
        per_method[name] = {
            "mrae": method_mrae,
            "rmse": method_rmse,
            "scenes": [sid for sid, _ in valid],
        }
        scores.append((name, method_mrae, method_rmse))

    board = build_leaderboard(scores)
    comment = f"# config_hash={config_hash}\n"
    (outdir / "leaderboard.csv").write_text(comment + leaderboard_to_csv(board))
    (outdir / "leaderboard.txt").write_text(comment + leaderboard_to_text(board))

    aux_files = {}
    for name in sorted(models) if with_aux else []:
        reconstructor, _ = _make_reconstructor(models[name], camera)
        report = run_aux_suite(
            manifest, reconstructor, camera, run.noise, run.metrics,
            track=run.track, white_level=run.white_level,
            jpeg_quality=run.jpeg_quality, jpeg_subsampling=run.jpeg_subsampling,
            shuffle_patch=run.shuffle_patch, shuffle_seed=run.shuffle_seed,
        )
        (outdir / f"aux_{name}.csv").write_text(comment + report.to_csv())
        (outdir / f"aux_{name}.txt").write_text(comment + report.to_text())
        aux_files[name] = f"aux_{name}.csv"
        failures += [(f"aux:{name}/{sid}", msg) for sid, msg in report.errors]

    _write_provenance(outdir, {
        "command": "evaluate",
        "config_hash": config_hash,
        "config": run.semantic_dict(),
        "css": {"sha256": css_hash},
        "pooled": pooled,
        "methods": per_method,
        "aux": aux_files,
        "errors": [{"scene": s, "message": m} for s, m in failures],
    })
    click.echo(leaderboard_to_text(board), nl=False)
    _report_failures(failures)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@main.command()
@click.option("--leaderboard", "board_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="leaderboard.csv produced by evaluate.")
@click.option("--aux", "aux_specs", multiple=True,
              help="NAME=AUX_CSV adding a robustness row for that method; repeatable.")
@click.option("--output", type=click.Path(file_okay=False), default=None,
              help="Output directory (default: alongside the leaderboard).")
@click.option("--heading", default="Spectral reconstruction benchmark",
              help="Top-level report heading.")
def report(board_path, aux_specs, output, heading):
    """Render Markdown and CSV tables from evaluation outputs."""
    try:
        board = leaderboard_from_csv(Path(board_path).read_text())
    except (OSError, ValueError) as exc:
        raise click.UsageError(f"cannot read leaderboard: {exc}")
    aux_means = {}
    for name, path in _parse_named_specs(tuple(aux_specs), "--aux").items():
        try:
            aux_means[name] = parse_aux_means(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise click.UsageError(f"cannot read aux table for {name!r}: {exc}")

    config_hash = _config_hash({
        "command": "report",
        "heading": heading,
        "leaderboard": [
            {"method": r.method, "mrae": r.mrae, "rmse": r.rmse} for r in board.rows
        ],
        "aux": {n: m for n, m in sorted(aux_means.items())},
    })
    outdir = Path(output) if output is not None else Path(board_path).parent
    outdir.mkdir(parents=True, exist_ok=True)
    markdown = (
        f"<!-- config_hash={config_hash} -->\n"
        + render_report(board, aux_means or None, heading=heading)
    )
    (outdir / "report.md").write_text(markdown)
    (outdir / "report.csv").write_text(
        f"# config_hash={config_hash}\n" + leaderboard_to_csv(board)
    )
    click.echo(f"report written to {outdir / 'report.md'} [{config_hash}]")


if __name__ == "__main__":
    main()
