"""Smoke test for the cperf_py extension module.

Expects `cargo build -p cperf-py` to have produced the shared library;
copies it under an importable name and exercises every exported symbol.
Run from anywhere: `python3 python/smoke_test.py`.
"""

import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def locate_library():
    candidates = [
        os.path.join(ROOT, "target", profile, name)
        for profile in ("debug", "release")
        for name in ("libcperf_py.so", "libcperf_py.dylib", "cperf_py.dll")
    ]
    hits = [path for path in candidates if os.path.exists(path)]
    if not hits:
        sys.exit("extension library not found; run `cargo build -p cperf-py` first")
    return max(hits, key=os.path.getmtime)


STAGING = tempfile.mkdtemp(prefix="cperf-py-")
shutil.copy(locate_library(), os.path.join(STAGING, "cperf_py.so"))
sys.path.insert(0, STAGING)

import cperf_py  # noqa: E402


def check(condition, message):
    if not condition:
        sys.exit(f"FAIL: {message}")
    print(f"ok: {message}")


def expect_value_error(fn, message):
    try:
        fn()
    except ValueError:
        print(f"ok: {message}")
        return
    sys.exit(f"FAIL: {message} (no ValueError raised)")


# module constants and option defaults
check(cperf_py.IGNORE_ID == 0xFFFF, "IGNORE_ID is the u16 sentinel")
options = cperf_py.ComparisonOptions()
check(options.patch_size == 128, "default patch size")
check(options.threshold == 0.75, "default similarity threshold")
check(options.metric is None, "metric defaults to the mode-dependent choice")
check("patch_size=128" in repr(options), "repr lists the knobs")

cones = cperf_py.preset_options("cones")
check(cones.anchor_scale == 2.0, "cones preset widens the anchor window")
check(cones.threshold == 0.8, "cones preset raises the threshold")
check(cones.min_batch == 4, "cones preset raises the batch minimum")
expect_value_error(lambda: cperf_py.preset_options("town"), "unknown preset rejected")

# pixel similarity on flat grids
check(cperf_py.pixel_similarity([0, 1, 2, 3], [0, 1, 2, 3], 2) == 1.0,
      "identical grids score 1")
check(cperf_py.pixel_similarity([0, 0, 0, 0], [0, 0, 0, 1], 2) == 0.75,
      "one differing cell in four scores 0.75")
ignore = cperf_py.IGNORE_ID
check(cperf_py.pixel_similarity([ignore, 0], [ignore, 0], 2) == 1.0,
      "ignore cells match each other")
check(cperf_py.pixel_similarity([ignore, 0], [0, 0], 2) == 0.5,
      "ignore cells never match real labels")
expect_value_error(lambda: cperf_py.pixel_similarity([0, 1, 2], [0, 1], 1),
                   "shape mismatch rejected")

# synthetic data round trip
work = tempfile.mkdtemp(prefix="cperf-data-")
clean = cperf_py.generate_dataset(os.path.join(work, "a"), images=5, size=40,
                                  classes=3, pattern="blocks", corrupt=0.0, seed=3)
noisy = cperf_py.generate_dataset(os.path.join(work, "b"), images=5, size=40,
                                  classes=3, pattern="blocks", corrupt=0.25, seed=3)
check(clean["samples"] == 5, "synthetic tree holds the requested image count")
check(clean["name"] == noisy["name"],
      "corruption level does not change the dataset identity")

info = cperf_py.dataset_info(clean["manifest"])
check(info["mode"] == "segmentation", "blocks pattern is a segmentation dataset")
check(info["classes"] == 3, "legend carries the requested classes")
check(info["unmapped_pixels"] == 0, "synthetic rasters map cleanly")

# full comparison, segmentation
run_options = cperf_py.ComparisonOptions()
run_options.patch_size = 10
run_options.patches_per_image = 6
run_options.threshold = 0.7
run_options.seed = 2
run_options.bootstrap = 200
outcome = cperf_py.compare(clean["manifest"], noisy["manifest"], run_options)
result = outcome["result"]
check(result["cperf_difference"] > 0.0, "corrupted side shows a positive gap")
check(result["batches_formed"] >= 1, "batches formed")
ci = result["bootstrap_ci"]
check(ci["low"] <= result["cperf_difference"] <= ci["high"],
      "bootstrap interval brackets the estimate")
check(result["config_echo"]["spec"]["patch_size"] == 10, "config echo keeps the knobs")
check(outcome["stats"]["patches_a"] > 0, "run stats count sampled patches")

self_outcome = cperf_py.compare(clean["manifest"], clean["manifest"], run_options)
check(self_outcome["result"]["cperf_difference"] == 0.0,
      "self-comparison is exactly zero")
check(math.isfinite(self_outcome["result"]["cperf_difference"]), "difference is finite")

# full comparison, detection
det_a = cperf_py.generate_dataset(os.path.join(work, "da"), images=6, size=48,
                                  classes=2, pattern="scattered_boxes", seed=5)
det_b = cperf_py.generate_dataset(os.path.join(work, "db"), images=6, size=48,
                                  classes=2, pattern="scattered_boxes",
                                  corrupt=0.3, seed=5)
det_options = cperf_py.ComparisonOptions()
det_options.threshold = 0.6
det_options.anchor_scale = 2.0
det_outcome = cperf_py.compare(det_a["manifest"], det_b["manifest"], det_options)
check(det_outcome["result"]["per_class"], "detection runs report per-class gaps")
check(det_outcome["result"]["config_echo"]["metric"] == "detection_hit",
      "detection defaults to the hit-rate metric")

# error surfaces
bad = cperf_py.ComparisonOptions()
bad.estimator = "median"
expect_value_error(lambda: cperf_py.compare(clean["manifest"], noisy["manifest"], bad),
                   "unknown estimator rejected")
far = cperf_py.generate_dataset(os.path.join(work, "far"), images=5, size=40,
                                classes=3, pattern="blocks", seed=77)
strict = cperf_py.ComparisonOptions()
strict.patch_size = 10
strict.patches_per_image = 4
strict.threshold = 1.0
strict.min_batch = 6
expect_value_error(lambda: cperf_py.compare(clean["manifest"], far["manifest"], strict),
                   "disjoint content raises instead of fabricating batches")
expect_value_error(
    lambda: cperf_py.generate_dataset(os.path.join(work, "x"), images=0, size=40,
                                      classes=3),
    "empty synthetic spec rejected")

print("smoke test passed")
