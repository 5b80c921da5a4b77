"""
Shape Space Toolkit - Main Orchestrator

This is the entry point that chains the toolkit's stages into commands:

    synth       generate a synthetic corpus              -> corpus/ (PLY + landmarks + manifest)
    train       resample -> GPA -> train models          -> model_global.bin, model_local.bin
    fit         load model -> align -> fit each target   -> fit_<id>.ply, report.json, curves.csv
    evaluate    resample -> GPA -> quality, CV, occlusion -> report.json, curves.csv
    roundtrip   wavelet forward -> inverse self-test     -> report.json

ORCHESTRATION PATTERN:
- Sequential execution: each stage's output is the next stage's input
- Error handling: every stage logs its own failure; the command prints it and
  turns it into an exit code (0 success, 1 validation, 2 runtime)
- One run directory per run: the resolved config is routed first, so even a
  failed run records what it tried to do

Commands share a run directory by default, so

    python main.py synth --run-name demo --levels 3
    python main.py train --run-name demo --levels 3
    python main.py fit   --run-name demo --levels 3 --model local --max-level 0 1 2 3

runs the whole pipeline on one corpus.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from shapespace.errors import ConfigValidationError, InsufficientDataError, ShapeSpaceError
from shapespace.evaluation import (
    EvaluationReport, compactness, compactness_curve, cross_validate_10fold,
    cumulative_error_curve, fit_model, generalization, landmark_distance, map_jobs, occlusion_study,
    specificity, surface_distance,
)
from shapespace.fitting import FitConfig, initial_align, level_sweep
from shapespace.geometry import LandmarkSet, NearestNeighborIndex, PointCloud
from shapespace.logger import pipeline_logger
from shapespace.meshio import load_landmarks, load_mesh, load_point_cloud
from shapespace.modelio import load_model
from shapespace.models import TrainingSet, global_trainer, local_trainer, train_global, train_local
from shapespace.router import RunRouter
from shapespace.run_config import load_run_config
from shapespace.subdivision import SubdivisionHierarchy, resample_to_grid
from shapespace.synth import (
    DEFAULT_FACTORS, OCCLUSION_PRESETS, BumpFactor, SynthSpec, add_noise, densify_grid,
    generate_corpus, grid_index, load_corpus, occlude, occlusion_region, write_corpus,
)
from shapespace.utils import summary_stats
from shapespace.wavelet import forward, inverse_vertices

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

ROUNDTRIP_TOLERANCE = 1e-10


def _banner(title, char="="):
    print(f"\n{char * 60}")
    print(title)
    print(f"{char * 60}")


def _stage(i, n, text):
    print(f"\n[Stage {i}/{n}] {text}...")


def _landmark_vertex_ids(grid, landmarks):
    """Vertex nearest to each present landmark of one resampled shape."""
    index = NearestNeighborIndex(PointCloud(grid.vertices))
    return {label: int(index.nearest(landmarks.position(label))[0])
            for label in landmarks.present_labels()}


class ShapeSpacePipeline:
    """
    Runs one command against a validated RunConfig.
    """

    def __init__(self, run_config):
        """Initialize the router and logger for this run."""
        self.config = run_config
        self.run_id = run_config.paths.run_name
        self.router = RunRouter(run_config.paths.run_name, run_config.paths.runs_dir)
        self.logger = pipeline_logger

    # ------------------------------------------------------------------
    # shared helpers
    # ------------------------------------------------------------------

    def _hierarchy(self):
        h = self.config.hierarchy
        return SubdivisionHierarchy((h.base_rows, h.base_cols), h.levels)

    def _corpus_dir(self):
        if self.config.paths.corpus_dir:
            return Path(self.config.paths.corpus_dir)
        return self.router.run_dir / "corpus"

    def _model_path(self, kind):
        explicit = getattr(self.config.paths, f"model_{kind}")
        return Path(explicit) if explicit else self.router.run_dir / f"model_{kind}.bin"

    def _fit_config(self):
        f = self.config.fit
        return FitConfig(f.tau, f.c, f.max_iterations, f.samples_per_parameter, f.max_level, f.tolerance)

    def _global_d(self, data):
        cap = min(3 * data.n - 1, data.T - 1)
        d = self.config.train.d
        if d > cap:
            self.logger.log_warning(self.run_id, "TRAIN_GLOBAL", "d capped by the training set rank",
                                    {"requested": d, "used": cap})
            print(f"  ! d={d} capped to {cap} (T={data.T})")
        return min(d, cap)

    def _training_set(self, hierarchy):
        """
        Load the corpus, resample every mesh onto the hierarchy's grid and
        (unless disabled) GPA-align the result.

        Returns:
            (TrainingSet, landmark vertex ids)
        """
        meshes, landmark_sets, manifest = load_corpus(self._corpus_dir() / "manifest.json")
        grids = [resample_to_grid(mesh, lms, hierarchy, run_id=f"{self.run_id}_{i:03d}")
                 for i, (mesh, lms) in enumerate(zip(meshes, landmark_sets))]
        entries = manifest["shapes"]
        subject_ids = [e.get("subject_id", f"subject_{i:03d}") for i, e in enumerate(entries)]
        labels = [e["label"] for e in entries] if all("label" in e for e in entries) else None
        data = TrainingSet.from_meshes(grids, subject_ids, labels,
                                       provenance={"corpus": str(self._corpus_dir())})
        ids = _landmark_vertex_ids(grids[0], landmark_sets[0])
        print(f"✓ Resampled {data.T} shapes onto a {hierarchy.dims()[0]}x{hierarchy.dims()[1]} grid")

        if self.config.train.gpa:
            data = data.gpa_aligned(run_id=self.run_id)
            print(f"✓ GPA converged in {data.provenance['gpa_iterations']} iterations")
        else:
            data.aligned = True
            print("  GPA skipped (corpus taken as aligned)")
        return data, ids

    # ------------------------------------------------------------------
    # commands
    # ------------------------------------------------------------------

    def run(self, command):
        """
        Run one command end to end.

        Returns:
            dict: the report written to report.json
        """
        self.logger.log_start(self.run_id, command)
        _banner(f"{command.upper()}: {self.run_id}")

        with self.logger.timed(command.upper(), self.run_id):
            self.router.route_config(self.config)
            report = getattr(self, f"cmd_{command}")()
            report = dict(report, command=command)
            path = self.router.route_report(report)
        self.logger.log_complete(self.run_id, path)

        _banner(f"✓ {command} completed: {self.router.run_dir}")
        stats = self.router.get_routing_stats()
        for kind, count in stats.items():
            if count > 0:
                print(f"  {kind}: {count}")
        return report

    def cmd_synth(self):
        s = self.config.synth
        h = self.config.hierarchy
        factors = DEFAULT_FACTORS
        if s.factors:
            factors = tuple(BumpFactor(tuple(f.center_uv), f.radius, tuple(f.amplitude), f.mirrored)
                            for f in s.factors)
        spec = SynthSpec((h.base_rows, h.base_cols), h.levels, s.T, s.width, s.height, factors,
                         s.noise_stddev, s.pose_jitter, s.seed)

        _stage(1, 2, "Generating corpus")
        corpus = generate_corpus(spec, run_id=self.run_id)
        print(f"✓ {spec.T} shapes, {corpus.hierarchy.n} vertices, {len(spec.factors)} latent factors")

        _stage(2, 2, "Writing corpus")
        manifest = write_corpus(corpus, self._corpus_dir(), run_id=self.run_id)
        print(f"✓ Manifest written to: {manifest}")

        return {
            "spec": spec.to_dict(),
            "T": spec.T,
            "n": corpus.hierarchy.n,
            "latents": corpus.latents,
        }

    def cmd_train(self):
        hierarchy = self._hierarchy()
        _stage(1, 3, "Loading and aligning corpus")
        data, ids = self._training_set(hierarchy)

        _stage(2, 3, "Training models")
        report = {"T": data.T, "n": data.n, "landmark_ids": ids, "models": {}}
        models = []
        for kind in self.config.train.models:
            if kind == "global":
                d = self._global_d(data)
                model = train_global(data, d, ids, run_id=self.run_id)
                explained = compactness(model, d)
                print(f"✓ Global PCA model: d={d}, explains {explained:.4f} of the variance")
                report["models"]["global"] = {"d": d, "compactness": explained,
                                              "eigenvalues": model.eigenvalues}
            else:
                model = train_local(data, hierarchy, ids, run_id=self.run_id)
                zero = int((model.stddevs == 0).sum())
                print(f"✓ Local wavelet model: {model.d} parameters, {zero} with zero variance")
                report["models"]["local"] = {"d": model.d, "levels": hierarchy.levels,
                                             "zero_variance_parameters": zero}
            models.append(model)

        _stage(3, 3, "Routing models")
        for model in models:
            path = self.router.route_model(model)
            report["models"][model.kind]["file"] = path.name
            print(f"✓ {model.kind} model saved to: {path}")
        return report

    def _fit_targets(self, model):
        """
        Targets as dicts: id, cloud, init landmarks, eval landmarks, truth.

        A target file is fitted as given; otherwise corpus shapes are densely
        sampled and optionally corrupted with noise and an occlusion preset.
        """
        paths = self.config.paths
        f = self.config.fit
        if paths.target:
            landmarks = load_landmarks(paths.target_landmarks) if paths.target_landmarks else None
            return [{"id": "target", "cloud": load_point_cloud(paths.target),
                     "init": landmarks, "eval": landmarks, "truth": None}]

        meshes, landmark_sets, manifest = load_corpus(self._corpus_dir() / "manifest.json")
        spec = manifest.get("spec")
        corpus_h = SubdivisionHierarchy(tuple(spec["base_dims"]), spec["levels"]) if spec else None
        if f.occlusion and corpus_h is None:
            raise ConfigValidationError("fit.occlusion: occlusion presets need a synthetic corpus")

        targets = []
        for i in (f.targets or [0]):
            if not 0 <= i < len(meshes):
                raise ConfigValidationError(f"fit.targets: index {i} outside a corpus of {len(meshes)} shapes")
            mesh, lms = meshes[i], landmark_sets[i]
            points = mesh.vertices
            if corpus_h is not None and mesh.n == corpus_h.n:
                points = densify_grid(mesh.vertices, corpus_h.dims())
            cloud = PointCloud(points)
            if f.noise_stddev > 0:
                cloud = add_noise(cloud, f.noise_stddev, seed=f.seed + i)
            if f.occlusion:
                preset = OCCLUSION_PRESETS[f.occlusion]
                region = occlusion_region(preset, mesh.vertices, corpus_h)
                cloud = occlude(cloud, region, preset.outliers, seed=f.seed + i)
            init_labels = manifest.get("init_landmarks") or lms.labels
            eval_labels = manifest.get("eval_landmarks") or lms.labels
            targets.append({
                "id": f"{i:03d}",
                "cloud": cloud,
                "init": lms.subset(init_labels),
                "eval": lms.subset(eval_labels),
                "truth": mesh.vertices if mesh.n == model.n else None,
            })
        return targets

    def cmd_fit(self):
        f = self.config.fit
        _stage(1, 4, f"Loading {f.model} model")
        model = load_model(self._model_path(f.model), kind=f.model, run_id=self.run_id)
        print(f"✓ {f.model} model: n={model.n}, d={model.d}")
        if f.max_level_sweep and f.model != "local":
            raise ConfigValidationError("fit.max_level_sweep: level sweeps need the local model")
        fit_config = self._fit_config()

        _stage(2, 4, "Preparing targets")
        targets = self._fit_targets(model)
        print(f"✓ {len(targets)} target(s)")

        _stage(3, 4, "Fitting")

        def fit_one(target):
            tag = f"{self.run_id}_{target['id']}"
            init = None
            if target["init"] is not None and len(target["init"].present_labels()) > 0:
                init = initial_align(model, target["init"], run_id=tag)
            if f.max_level_sweep:
                rows = level_sweep(model, target["cloud"], fit_config, init, f.max_level_sweep, run_id=tag)
                return target, rows[-1]["result"], rows
            return target, fit_model(model, target["cloud"], fit_config, init, tag), None

        outcomes = map_jobs(fit_one, targets, self.config.jobs)

        _stage(4, 4, "Measuring and routing fits")
        report = {"model": f.model, "fit_config": fit_config.to_dict(), "targets": {}}
        all_errors = []
        bound = fit_config.c * model.stddevs
        for target, result, sweep in outcomes:
            fitted = result.target_vertices
            surface = surface_distance(fitted, target["cloud"])
            entry = {
                "fit": result.summary(),
                "init_transform": result.init_transform.to_dict(),
                "surface_distance_mm": summary_stats(surface),
                "bound_violations": int((np.abs(result.params.values) > bound).sum()),
            }
            if target["truth"] is not None:
                per_vertex = np.linalg.norm(fitted - target["truth"], axis=1)
                entry["vertex_error_mm"] = summary_stats(per_vertex)
            else:
                per_vertex = surface
            all_errors.append(per_vertex)
            lms = target["eval"]
            if lms is not None and set(lms.present_labels()) & set(model.landmark_ids):
                distances = landmark_distance(fitted, model.landmark_ids, lms)
                entry["landmark_errors_mm"] = {"labels": distances,
                                               "summary": summary_stats(list(distances.values()))}
            if sweep:
                entry["level_sweep"] = [{k: v for k, v in row.items() if k not in ("result", "seconds")}
                                        for row in sweep]
                self._print_sweep(target["id"], sweep)

            self.router.route_fit(target["id"], model.mesh(fitted), per_vertex)
            report["targets"][target["id"]] = entry
            print(f"✓ {target['id']}: energy {result.final_energy:.4f}, "
                  f"surface {surface.mean():.4f} mm, per-vertex {per_vertex.mean():.4f} mm")

        curves = EvaluationReport(cumulative_error_curve={
            f.model: cumulative_error_curve(np.concatenate(all_errors))})
        self.router.route_curves(curves.curves_frame())
        return report

    @staticmethod
    def _print_sweep(target_id, rows):
        print(f"\n  Level sweep for target {target_id}:")
        print(f"  {'level':>5}  {'energy':>14}  {'surface mm':>10}  {'evaluations':>11}  {'seconds':>8}")
        for row in rows:
            print(f"  {row['max_level']:>5}  {row['final_energy']:>14.4f}  {row['mean_surface_mm']:>10.4f}"
                  f"  {row['energy_evaluations']:>11}  {row['seconds']:>8.2f}")

    def cmd_evaluate(self):
        e = self.config.evaluate
        hierarchy = self._hierarchy()
        fit_config = self._fit_config()
        report = EvaluationReport()

        _stage(1, 5, "Loading and aligning corpus")
        data, ids = self._training_set(hierarchy)
        d = self._global_d(data)

        _stage(2, 5, "Training models")
        models = {"global": train_global(data, d, ids, run_id=self.run_id),
                  "local": train_local(data, hierarchy, ids, run_id=self.run_id)}
        report.compactness_curve["global"] = compactness_curve(models["global"])
        print(f"✓ Trained global (d={d}) and local ({models['local'].d} parameters) models")

        _stage(3, 5, "Model quality")
        trainers = {"global": global_trainer(d, ids), "local": local_trainer(hierarchy, ids)}
        for name, model in models.items():
            try:
                report.generalization[name] = generalization(data, trainers[name], run_id=self.run_id)
            except InsufficientDataError as err:
                self.logger.log_warning(self.run_id, "EVALUATE", str(err))
            report.specificity[name] = specificity(model, data, e.specificity_samples, e.seed,
                                                   run_id=self.run_id)
            gen = report.generalization.get(name)
            gen_text = f"{gen[0]:.4f} mm" if gen else "skipped"
            print(f"✓ {name}: generalization {gen_text}, specificity {report.specificity[name][0]:.4f} mm")

        _stage(4, 5, "Cross-validation")
        if e.cross_validate:
            try:
                cv = cross_validate_10fold(data, trainers, fit_config, e.seed, e.folds,
                                           self.config.jobs, run_id=self.run_id)
                for name, errors in cv.errors.items():
                    per_vertex = errors.reshape(-1, data.n).mean(axis=0)
                    report.per_vertex_error[name] = per_vertex
                    report.cumulative_error_curve[name] = cumulative_error_curve(errors)
                    self.router.route_fit(f"cv_error_{name}", models[name].mesh(models[name].mean_shape),
                                          per_vertex)
                    print(f"✓ {name}: mean held-out vertex error {errors.mean():.4f} mm")
                report.extras["cross_validation"] = cv.to_dict()
            except InsufficientDataError as err:
                self.logger.log_warning(self.run_id, "EVALUATE", str(err))
                report.extras["cross_validation"] = {"skipped": str(err)}
                print(f"  ! skipped: {err}")
        else:
            print("  skipped (disabled)")

        _stage(5, 5, "Occlusion study")
        report.extras["occlusion"] = self._occlusion(data, hierarchy, ids, d, fit_config)

        self.router.route_curves(report.curves_frame())
        return report.to_dict()

    def _occlusion(self, data, hierarchy, ids, d, fit_config):
        """Hold out the first shapes as targets and train on the rest."""
        e = self.config.evaluate
        count = min(e.occlusion_trials, data.T // 2, data.T - 2)
        if count < 1:
            print("  skipped (not enough shapes)")
            return {"skipped": f"needs at least 3 shapes, got {data.T}"}
        if count < e.occlusion_trials:
            self.logger.log_warning(self.run_id, "EVALUATE", "occlusion trials reduced to fit the corpus",
                                    {"requested": e.occlusion_trials, "used": count})

        train = data.subset(range(count, data.T))
        models = {"global": train_global(train, min(d, train.T - 1), ids, run_id=self.run_id),
                  "local": train_local(train, hierarchy, ids, run_id=self.run_id)}
        dims = hierarchy.dims()
        targets = [(truth, PointCloud(densify_grid(truth, dims))) for truth in data.shapes[:count]]
        control_vertex = grid_index(hierarchy, e.control_uv)

        study = occlusion_study(
            models, targets,
            region=lambda truth: occlusion_region(e.occlusion_preset, truth, hierarchy),
            control=lambda truth: (truth[control_vertex], e.control_radius),
            fit_config=fit_config, jobs=self.config.jobs, run_id=self.run_id,
            outliers=OCCLUSION_PRESETS[e.occlusion_preset].outliers,
        )
        for name, value in study.mean_degradation().items():
            print(f"✓ {name}: mean control-region degradation {value:.4f} mm over {count} trials")
        return dict(study.to_dict(), preset=e.occlusion_preset)

    def cmd_roundtrip(self):
        hierarchy = self._hierarchy()
        paths = self.config.paths

        _stage(1, 2, "Loading grid")
        if paths.input_mesh:
            mesh = load_mesh(paths.input_mesh)
            landmarks = load_landmarks(paths.target_landmarks) if paths.target_landmarks else LandmarkSet()
            grid = resample_to_grid(mesh, landmarks, hierarchy, run_id=self.run_id).vertices
            source = Path(paths.input_mesh).name
        else:
            spec = SynthSpec(hierarchy.base_dims, hierarchy.levels, T=2, seed=self.config.synth.seed)
            grid = generate_corpus(spec, run_id=self.run_id).training.shapes[0]
            source = "synthetic"
        print(f"✓ {source}: {hierarchy.n} vertices, {hierarchy.levels} levels")

        _stage(2, 2, "Forward and inverse transform")
        start = time.perf_counter()
        rebuilt = inverse_vertices(forward(grid, hierarchy).coeffs, hierarchy)
        seconds = time.perf_counter() - start
        diff = np.linalg.norm(rebuilt - grid, axis=1)
        relative_rms = float(np.sqrt((diff ** 2).mean() / max((grid ** 2).sum(axis=1).mean(), 1e-300)))
        print(f"✓ max reconstruction error {diff.max():.3e} mm, relative RMS {relative_rms:.3e} "
              f"({seconds:.3f} s)")
        if relative_rms >= ROUNDTRIP_TOLERANCE:
            raise ShapeSpaceError(f"reconstruction error {relative_rms:.3e} exceeds {ROUNDTRIP_TOLERANCE:g}")
        return {
            "source": source,
            "n": hierarchy.n,
            "levels": hierarchy.levels,
            "max_reconstruction_error_mm": float(diff.max()),
            "relative_rms": relative_rms,
        }


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises on bad arguments instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(message)


def _flag(parser, flag, key, **kwargs):
    """Register a flag that overrides the dotted config key `key`."""
    parser.add_argument(flag, dest=key.replace(".", "__"), default=None, **kwargs)


def _hierarchy_flags(parser):
    _flag(parser, "--base-rows", "hierarchy.base_rows", type=int, help="base mesh rows")
    _flag(parser, "--base-cols", "hierarchy.base_cols", type=int, help="base mesh columns")
    _flag(parser, "--levels", "hierarchy.levels", type=int, help="subdivision levels J")


def _fit_flags(parser):
    _flag(parser, "--tau", "fit.tau", type=float, help="truncation distance, mm")
    _flag(parser, "--c", "fit.c", type=float, help="hyper-box half-width in stddevs")
    _flag(parser, "--max-iterations", "fit.max_iterations", type=int, help="global fit outer iterations")
    _flag(parser, "--samples", "fit.samples_per_parameter", type=int, help="local fit samples per parameter")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    _flag(common, "--run-name", "paths.run_name", help="run directory name")
    _flag(common, "--runs-dir", "paths.runs_dir", help="parent directory of run directories")
    common.add_argument("--jobs", type=int, default=None, help="parallel fits")

    parser = _Parser(prog="main.py", description="Statistical shape spaces: synthesise, train, fit, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    _hierarchy_flags(p)
    _flag(p, "--T", "synth.T", type=int, help="number of shapes")
    _flag(p, "--noise", "synth.noise_stddev", type=float, help="per-vertex noise stddev, mm")
    _flag(p, "--pose-jitter", "synth.pose_jitter", type=float, help="rotation stddev, rad")
    _flag(p, "--seed", "synth.seed", type=int)
    _flag(p, "--out", "paths.corpus_dir", help="corpus directory (default: <run>/corpus)")

    p = sub.add_parser("train", parents=[common], help="train models from a corpus")
    _hierarchy_flags(p)
    _flag(p, "--corpus", "paths.corpus_dir", help="corpus directory with manifest.json")
    _flag(p, "--models", "train.models", nargs="+", choices=["global", "local"])
    _flag(p, "--d", "train.d", type=int, help="global model components")
    p.add_argument("--no-gpa", dest="train__gpa", action="store_const", const=False, default=None,
                   help="take the corpus as already aligned")

    p = sub.add_parser("fit", parents=[common], help="fit a model to targets")
    _fit_flags(p)
    _flag(p, "--model", "fit.model", choices=["global", "local"])
    _flag(p, "--model-file", "paths.model_global", help="global model file")
    _flag(p, "--local-model-file", "paths.model_local", help="local model file")
    _flag(p, "--corpus", "paths.corpus_dir", help="corpus directory with manifest.json")
    _flag(p, "--target", "paths.target", help="target mesh or point cloud (OBJ/PLY)")
    _flag(p, "--target-landmarks", "paths.target_landmarks", help="target landmark file")
    _flag(p, "--targets", "fit.targets", type=int, nargs="+", help="corpus shape indices")
    _flag(p, "--noise", "fit.noise_stddev", type=float, help="target noise stddev, mm")
    _flag(p, "--occlusion", "fit.occlusion", choices=sorted(OCCLUSION_PRESETS))
    _flag(p, "--seed", "fit.seed", type=int)
    p.add_argument("--max-level", dest="max_level", type=int, nargs="+", default=None,
                   help="local fit max level; several values run a level sweep")

    p = sub.add_parser("evaluate", parents=[common], help="model quality, cross-validation, occlusion")
    _hierarchy_flags(p)
    _fit_flags(p)
    _flag(p, "--corpus", "paths.corpus_dir", help="corpus directory with manifest.json")
    _flag(p, "--d", "train.d", type=int, help="global model components")
    _flag(p, "--folds", "evaluate.folds", type=int)
    _flag(p, "--specificity-samples", "evaluate.specificity_samples", type=int)
    _flag(p, "--occlusion-preset", "evaluate.occlusion_preset", choices=sorted(OCCLUSION_PRESETS))
    _flag(p, "--occlusion-trials", "evaluate.occlusion_trials", type=int)
    _flag(p, "--seed", "evaluate.seed", type=int)
    p.add_argument("--no-cross-validate", dest="evaluate__cross_validate", action="store_const",
                   const=False, default=None)

    p = sub.add_parser("roundtrip", parents=[common], help="wavelet forward/inverse self-test")
    _hierarchy_flags(p)
    _flag(p, "--input", "paths.input_mesh", help="grid mesh (default: a synthetic patch)")
    _flag(p, "--landmarks", "paths.target_landmarks", help="corner landmarks for non-grid meshes")
    return parser


def overrides_from_args(args):
    """Dotted config overrides from parsed flags; unset flags are left out."""
    overrides = {dest.replace("__", "."): value for dest, value in vars(args).items()
                 if "__" in dest and value is not None}
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    levels = getattr(args, "max_level", None)
    if levels:
        if len(levels) == 1:
            overrides["fit.max_level"] = levels[0]
        else:
            overrides["fit.max_level_sweep"] = levels
    return overrides


def main(argv=None):
    """
    Main entry point. Returns the exit code.
    """
    try:
        args = build_parser().parse_args(argv)
        run_config = load_run_config(args.config, overrides_from_args(args))
    except (UsageError, ConfigValidationError, FileNotFoundError) as e:
        print(f"✗ {e}", file=sys.stderr)
        return EXIT_VALIDATION

    try:
        ShapeSpacePipeline(run_config).run(args.command)
        return EXIT_OK
    except (ConfigValidationError, FileNotFoundError) as e:
        print(f"\n✗ {args.command} failed: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:
        print(f"\n✗ {args.command} failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
