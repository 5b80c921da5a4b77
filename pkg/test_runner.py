"""
Test Runner - Demonstrates Fitting on Diverse Targets

This file fits both shape models to held-out synthetic faces under five
conditions to show the pipeline works beyond the clean case:

1. Clean - dense samples of the true surface (happy path)
2. Noisy - Gaussian noise plus 2% uniform outliers
3. Left eye covered by a hand - region removed, outlier blob in front of it
4. Mouth covered by a hand - region removed, outlier blob in front of it
5. Hair - large region at the top removed, no replacement points

WHY 5 SCENARIOS?
- Proves the fits are not brittle: every one starts from a landmark alignment
  in the target's own pose
- Shows the truncated energy ignoring outliers
- Shows how the two models differ when part of the data is missing
- Every scenario checks the hyper-box, so no fit leaves the learned space
"""

import numpy as np

from shapespace.evaluation import fit_model, landmark_distance, surface_distance
from shapespace.fitting import FitConfig, initial_align
from shapespace.geometry import PointCloud
from shapespace.models import train_global, train_local
from shapespace.synth import (
    EVAL_LANDMARKS, INIT_LANDMARKS, OCCLUSION_PRESETS, SynthSpec, add_noise, densify_grid,
    generate_corpus, occlude, occlusion_region,
)

TRAIN_SHAPES = 20
HELD_OUT = 3

spec = SynthSpec(levels=3, T=TRAIN_SHAPES + HELD_OUT, noise_stddev=0.05, pose_jitter=0.05, seed=7)
corpus = generate_corpus(spec, run_id="test_runner")
hierarchy = corpus.hierarchy

# Train on the first shapes; the rest stay in their own pose as targets
training = corpus.training.subset(range(TRAIN_SHAPES)).gpa_aligned(run_id="test_runner")
models = {
    "global": train_global(training, 10, corpus.landmark_ids, run_id="test_runner"),
    "local": train_local(training, hierarchy, corpus.landmark_ids, run_id="test_runner"),
}
fit_config = FitConfig(samples_per_parameter=16, max_level=2)


def make_target(t, scenario):
    """Point cloud for one held-out shape under one scenario."""
    truth = corpus.training.shapes[t]
    cloud = PointCloud(densify_grid(truth, hierarchy.dims()))
    if scenario == "noisy":
        cloud = add_noise(cloud, 0.5, outlier_fraction=0.02, seed=t)
    elif scenario in OCCLUSION_PRESETS:
        preset = OCCLUSION_PRESETS[scenario]
        cloud = occlude(cloud, occlusion_region(preset, truth, hierarchy), preset.outliers, seed=t)
    return truth, cloud


scenarios = ["clean", "noisy", "left_eye_hand", "mouth_hand", "hair"]


def run_scenario(scenario):
    """
    Fit both models to every held-out shape under one scenario.

    Returns:
        dict: per-model mean vertex, surface and landmark errors plus status
    """
    results = {"scenario": scenario, "models": {}, "status": "success"}
    try:
        for name, model in models.items():
            vertex, surface, landmark, violations = [], [], [], 0
            for t in range(TRAIN_SHAPES, TRAIN_SHAPES + HELD_OUT):
                truth, cloud = make_target(t, scenario)
                landmarks = corpus.landmarks[t]
                init = initial_align(model, landmarks.subset(INIT_LANDMARKS), run_id=f"{scenario}_{t}")
                result = fit_model(model, cloud, fit_config, init, run_id=f"{scenario}_{name}_{t}")
                fitted = result.target_vertices
                bound = fit_config.c * model.stddevs
                violations += int((np.abs(result.params.values) > bound).sum())
                vertex.append(np.linalg.norm(fitted - truth, axis=1).mean())
                surface.append(np.median(surface_distance(fitted, cloud)))
                errors = landmark_distance(fitted, model.landmark_ids, landmarks.subset(EVAL_LANDMARKS))
                landmark.append(np.mean(list(errors.values())))
            results["models"][name] = {
                "vertex_mm": float(np.mean(vertex)),
                "median_surface_mm": float(np.mean(surface)),
                "landmark_mm": float(np.mean(landmark)),
                "bound_violations": violations,
            }
            if violations or not np.isfinite(vertex).all():
                results["status"] = "failed"
                results["error"] = f"{name}: {violations} bound violations"
    except Exception as e:
        results["status"] = "failed"
        results["error"] = f"{type(e).__name__}: {e}"
    return results


def run_tests():
    """
    Run all scenarios through align -> fit -> measure.
    """
    print("\n" + "=" * 70)
    print("SHAPE SPACE FITTING - TEST SUITE")
    print("=" * 70)
    print(f"\nTraining shapes: {TRAIN_SHAPES}, held-out targets: {HELD_OUT}, "
          f"grid {hierarchy.dims()[0]}x{hierarchy.dims()[1]}")
    print("\nScenarios:")
    print("  1. Clean - dense samples of the true surface")
    print("  2. Noisy - 0.5 mm noise plus 2% outliers")
    print("  3. Left eye covered by a hand")
    print("  4. Mouth covered by a hand")
    print("  5. Hair over the top of the face")
    print("\n" + "=" * 70 + "\n")

    results = []
    for i, scenario in enumerate(scenarios, 1):
        print(f"[Scenario {i}/{len(scenarios)}] {scenario}...")
        results.append(run_scenario(scenario))

    print("\n" + "=" * 70)
    print("DETAILED TEST RESULTS")
    print("=" * 70 + "\n")

    for i, result in enumerate(results, 1):
        print(f"Scenario {i}: {result['scenario']}")
        print(f"Status: {'✓ PASSED' if result['status'] == 'success' else '✗ FAILED'}")
        for name, row in result["models"].items():
            print(f"  - {name:6s}: vertex {row['vertex_mm']:.3f} mm, "
                  f"median surface {row['median_surface_mm']:.3f} mm, "
                  f"landmarks {row['landmark_mm']:.3f} mm")
        if result["status"] != "success":
            print(f"  - Error: {result.get('error')}")
        print()

    success_count = sum(1 for r in results if r["status"] == "success")
    success_rate = (success_count / len(results)) * 100

    print("=" * 70)
    print(f"SUCCESS RATE: {success_count}/{len(results)} ({success_rate:.1f}%)")
    print("=" * 70 + "\n")

    return results


if __name__ == "__main__":
    results = run_tests()

    print("\n" + "=" * 70)
    print("NEXT STEPS")
    print("=" * 70)
    print("\n1. Run 'python main.py synth --levels 3' to write a corpus to disk")
    print("2. Run 'python main.py evaluate --levels 3' for compactness, generalization,")
    print("   specificity, cross-validation and the occlusion study")
    print("3. Check 'logs/shapespace_processing.log' for per-stage details")
    print("\n" + "=" * 70 + "\n")
