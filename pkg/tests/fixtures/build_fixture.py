"""Regenerate the bundled end-to-end fixture (12 images, 2 experts, 2 models x 2 runs)."""

from pathlib import Path

from cadebench.core import load_manifest
from cadebench.synthetic import fabricate_predictions, make_dataset

HERE = Path(__file__).parent / "e2e"
MODELS = {"proposed": (0.45, (11, 12)), "baseline": (0.2, (21, 22))}


def build(root: Path = HERE) -> Path:
    manifest_path = make_dataset(root / "data", n=12, seed=7, size=128, n_experts=2, name="fixture")
    manifest = load_manifest(manifest_path)
    for model, (skill, seeds) in MODELS.items():
        for run, seed in enumerate(seeds):
            fabricate_predictions(manifest, root / "pred" / model / f"run{run}.csv", seed=seed,
                                  skill=skill, map_size=32)
    return manifest_path


if __name__ == "__main__":
    print(build())
