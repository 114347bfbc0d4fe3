import json
import os

import numpy as np
import pytest

from mriseg.cli import main
from mriseg.errors import ConfigError
from mriseg.morphology import apply_mask
from mriseg.nifti import read_nifti, write_nifti
from mriseg.pipeline import STAGES, PipelineConfig, StageToggles, run_benchmark, run_pipeline, sha256_file
from mriseg.segmentation import run_engine


def _cfg(**kw):
    kw.setdefault("crop_dims", (64, 64, 64))
    return PipelineConfig(**kw)


def _template(ph):
    return apply_mask(ph.volume, ph.brain_mask)


def test_full_pipeline_noise_free(clean_phantom, tmp_path):
    ph = clean_phantom
    cfg = _cfg(out_dir=str(tmp_path))
    res = run_pipeline(cfg, ph.volume, ph.brain_mask, template=_template(ph), truth=ph.truth,
                       template_mask=ph.brain_mask)
    assert res.provenance["stages"][1]["gain"] == 1.0
    assert all(v["dice"] == 1.0 for v in res.report.per_class.values())
    assert res.provenance["stage_order"] == list(STAGES)
    assert np.unique(res.labels.labels).size <= 4
    names = set(os.listdir(tmp_path))
    assert {"provenance.json", "labels.nii", "transform.json", "report.json", "cropped.nii"} <= names
    prov = json.loads((tmp_path / "provenance.json").read_text())
    assert prov["status"] == "ok"
    assert prov["outputs"]["labels.nii"] == sha256_file(tmp_path / "labels.nii")


def test_provenance_reproducible(clean_phantom, tmp_path):
    ph = clean_phantom
    runs = []
    for name in ("a", "b"):
        cfg = _cfg(out_dir=str(tmp_path / name), stages=StageToggles(register=False))
        runs.append(run_pipeline(cfg, ph.volume, ph.brain_mask, template=_template(ph)).provenance)
    assert runs[0]["outputs"] == runs[1]["outputs"]
    assert runs[0]["config_hash"] != PipelineConfig().config_hash()


def test_segment_only_equals_engine(noisy_phantom):
    ph = noisy_phantom
    stages = StageToggles(extract=False, normalize=False, register=False, crop=False)
    for engine in ("otsu", "kmeans+hmrf"):
        res = run_pipeline(_cfg(stages=stages, engine=engine), ph.volume, ph.brain_mask)
        assert res.labels == run_engine(engine, ph.volume, ph.brain_mask).labels
        assert res.provenance["stage_order"] == ["segment"]


def test_missing_template_is_config_error(clean_phantom):
    with pytest.raises(ConfigError):
        run_pipeline(_cfg(), clean_phantom.volume, clean_phantom.brain_mask)


def test_centroids_replace_template(clean_phantom):
    ph = clean_phantom
    cfg = _cfg(template_centroids=(30.0, 55.0, 80.0), stages=StageToggles(register=False))
    res = run_pipeline(cfg, ph.volume, ph.brain_mask, truth=ph.truth)
    assert res.provenance["stages"][1]["gain"] == pytest.approx(0.5)
    assert res.report.macro["dice"] == 1.0


def test_failed_stage_writes_provenance(clean_phantom, tmp_path):
    ph = clean_phantom
    cfg = _cfg(out_dir=str(tmp_path), crop_dims=(100, 100, 100))
    with pytest.raises(Exception) as info:
        run_pipeline(cfg, ph.volume, ph.brain_mask, template=_template(ph))
    assert info.value.stage == "crop"
    prov = json.loads((tmp_path / "provenance.json").read_text())
    assert prov["status"] == "failed" and prov["stage_order"] == ["extract", "normalize", "register"]


def test_config_json_round_trip(tmp_path):
    cfg = _cfg(engine="fcm", seed=4)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = PipelineConfig.from_json(path)
    assert back.to_dict() == cfg.to_dict() and back.config_hash() == cfg.config_hash()
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"bogus": 1})


def test_benchmark_outputs(tmp_path):
    reports = run_benchmark(PipelineConfig(), ["kmeans", "kmeans+hmrf"], str(tmp_path), dims=(48, 48, 48))
    assert (tmp_path / "benchmark.json").exists() and (tmp_path / "benchmark.csv").exists()
    km, hm = reports
    assert hm.macro["dice"] > km.macro["dice"]
    with pytest.raises(ConfigError):
        run_benchmark(PipelineConfig(), ["nope"])


# command line

@pytest.fixture(scope="module")
def phantom_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ph")
    assert main(["phantom", "--out", str(out), "--seed", "1", "--dims", "48", "48", "48",
                 "--noise-sigma", "2", "--cohort", "40"]) == 0
    return out


def test_cli_phantom_files(phantom_dir):
    names = set(os.listdir(phantom_dir))
    assert {"phantom.nii", "truth.nii", "brain_mask.nii", "head_mask.nii", "phantom.json", "cohort.csv"} <= names
    assert read_nifti(phantom_dir / "phantom.nii").shape == (48, 48, 48)


def test_cli_segment_and_evaluate(phantom_dir, tmp_path, capsys):
    d = phantom_dir
    seg = tmp_path / "seg"
    assert main(["segment", "--out", str(seg), "--seed", "0", "--input", str(d / "phantom.nii"),
                 "--mask", str(d / "brain_mask.nii"), "--truth", str(d / "truth.nii"), "--engine", "otsu"]) == 0
    macro = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert macro["dice"] > 0.99
    ev = tmp_path / "ev"
    assert main(["evaluate", "--out", str(ev), "--input", str(seg / "labels.nii"),
                 "--truth", str(d / "truth.nii"), "--mask", str(d / "brain_mask.nii")]) == 0
    assert json.loads(capsys.readouterr().out.strip())["dice"] == macro["dice"]


def test_cli_preprocess(phantom_dir, tmp_path):
    d = phantom_dir
    out = tmp_path / "pre"
    assert main(["preprocess", "--out", str(out), "--input", str(d / "phantom.nii"),
                 "--mask", str(d / "brain_mask.nii"), "--template", str(d / "phantom.nii"),
                 "--template-mask", str(d / "brain_mask.nii"), "--register-on", "raw",
                 "--crop-dims", "40,40,40"]) == 0
    assert read_nifti(out / "cropped.nii").shape == (40, 40, 40)
    assert "labels.nii" not in os.listdir(out)


def test_cli_exit_codes(phantom_dir, tmp_path):
    d = phantom_dir
    # normalization without a template
    assert main(["preprocess", "--out", str(tmp_path), "--input", str(d / "phantom.nii")]) == 2
    assert main(["segment", "--out", str(tmp_path), "--seed", "0", "--input", str(tmp_path / "missing.nii")]) == 2
    bad = tmp_path / "bad.nii"
    bad.write_bytes(b"\0" * 100)
    assert main(["segment", "--out", str(tmp_path), "--seed", "0", "--input", str(bad)]) == 3
    assert main(["benchmark", "--out", str(tmp_path), "--seed", "0", "--engines", "nope"]) == 2
    with pytest.raises(SystemExit):
        main(["segment", "--out", str(tmp_path), "--seed", "-1", "--input", "x"])


def test_cli_split_and_augment(phantom_dir, tmp_path, capsys):
    d = phantom_dir
    assert main(["split", "--out", str(tmp_path), "--seed", "0", "--cohort", str(d / "cohort.csv")]) == 0
    counts = json.loads(capsys.readouterr().out)
    assert [counts[p]["total"] for p in ("train", "val", "test")] == [24, 8, 8]
    aug = tmp_path / "aug"
    assert main(["augment", "--out", str(aug), "--seed", "5", "--subject", "2", "--input", str(d / "phantom.nii"),
                 "--labels", str(d / "truth.nii")]) == 0
    params = json.loads((aug / "augmentation.json").read_text())
    assert set(params) >= {"translation", "rotation_deg", "shear_deg", "scale", "flip_axial"}
    labels = read_nifti(aug / "augmented_labels.nii")
    assert np.unique(labels.labels).size <= 4


def test_cli_benchmark(tmp_path, capsys):
    assert main(["benchmark", "--out", str(tmp_path), "--seed", "0", "--engines", "otsu,kmeans",
                 "--dims", "32", "32", "32"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [ln.split(":")[0] for ln in lines] == ["otsu", "kmeans"]


def test_written_labels_are_label_intent(clean_phantom, tmp_path):
    write_nifti(clean_phantom.truth, tmp_path / "t.nii")
    assert read_nifti(tmp_path / "t.nii") == clean_phantom.truth
