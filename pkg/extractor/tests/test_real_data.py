"""Optional real-data check. Needs downloaded datasets, real encoder weights,
and hours of compute; enable with CCMA_REAL_DATA=1. Not part of CI.
"""

import json
import os
from pathlib import Path

import pytest

requires_real_data = pytest.mark.skipif(
    os.environ.get("CCMA_REAL_DATA") != "1",
    reason="set CCMA_REAL_DATA=1 to run the full CIFAR-100 pipeline",
)


@requires_real_data
def test_cifar100_full_pipeline(tmp_path):
    from ccma_extractor.extract import ExtractionJob, run_job
    from ccma.harness import ExperimentConfig, run_experiment

    out = tmp_path / "cifar100"
    manifest = run_job(
        ExtractionJob(
            dataset="cifar100",
            teacher="hf-clip:openai/clip-vit-large-patch14",
            student="hf-vision:facebook/dinov2-giant",
            out_dir=out,
            data_root=os.environ.get("CCMA_DATA_ROOT", "."),
            download=True,
            batch_size=256,
        )
    )
    cfg = ExperimentConfig.from_dict(
        {
            "dataset": {"caches": manifest["caches"]},
            "strategy": "ccma",
            "variant": "V1",
            "rounds": 20,
            "batch": 100,
            "seeds": [1, 10, 100, 1000, 10000],
            "tau": 0.01,
        }
    )
    result = run_experiment(cfg)
    finals = [records[-1].test_acc for records in result.per_seed.values()]
    final_mean = sum(finals) / len(finals)
    print(json.dumps({"final_mean_acc": final_mean}))
    assert abs(final_mean - 0.916) <= 0.010
