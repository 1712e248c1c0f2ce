import numpy as np
import pytest

from pdseg import pgm
from pdseg.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, main
from pdseg.report import read_csv, read_manifest


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "corpus"
    code = main(["gen-data", "--cases", "12", "--size", "16", "--radius", "2", "4",
                 "--seed", "21", "--out", str(out)])
    assert code == EXIT_OK
    return out


@pytest.fixture(scope="module")
def denoiser_ckpt(tmp_path_factory, corpus):
    out = tmp_path_factory.mktemp("runs") / "denoiser.ckpt"
    code = main(["train", "--kind", "diffusion", "--data", str(corpus), "--out", str(out),
                 "--timesteps", "12", "--epochs", "2", "--batch-size", "4",
                 "--base-channels", "8", "--seed", "3"])
    assert code == EXIT_OK
    return out


@pytest.fixture(scope="module")
def preseg_ckpt(tmp_path_factory, corpus):
    out = tmp_path_factory.mktemp("runs") / "preseg.ckpt"
    code = main(["train", "--kind", "preseg", "--data", str(corpus), "--out", str(out),
                 "--epochs", "2", "--batch-size", "4", "--base-channels", "8", "--seed", "4"])
    assert code == EXIT_OK
    return out


def test_gen_data_outputs(corpus):
    assert (corpus / "manifest.csv").is_file()
    assert (corpus / "threshold_baseline.csv").is_file()
    manifest = read_manifest(corpus / "run_manifest.txt")
    assert manifest["command"] == "gen-data"
    assert manifest["options"]["cases"] == 12
    assert "corpus" in manifest["hashes"]


def test_gen_data_rerun_is_bit_identical(corpus, tmp_path):
    redo = tmp_path / "again"
    code = main(["rerun", "--manifest", str(corpus / "run_manifest.txt"), "--out", str(redo)])
    assert code == EXIT_OK
    original = read_manifest(corpus / "run_manifest.txt")["hashes"]
    repeated = read_manifest(redo / "run_manifest.txt")["hashes"]
    assert original == repeated
    assert (redo / "manifest.csv").read_bytes() == (corpus / "manifest.csv").read_bytes()


def test_gen_data_zero_cases_is_usage_error(tmp_path):
    assert main(["gen-data", "--cases", "0", "--out", str(tmp_path / "x")]) == EXIT_USAGE


def test_unknown_flag_is_usage_error(tmp_path):
    assert main(["gen-data", "--nope", "1", "--out", str(tmp_path / "x")]) == EXIT_USAGE


def test_train_writes_loss_curve(denoiser_ckpt):
    rows = read_csv(denoiser_ckpt.with_suffix(".losses.csv"))
    assert [set(r) for r in rows] == [{"epoch", "train_loss", "val_loss"}] * len(rows)
    manifest = read_manifest(denoiser_ckpt.with_suffix(".manifest.txt"))
    assert manifest["options"]["timesteps"] == 12
    assert "checkpoint" in manifest["hashes"]


def test_train_missing_corpus_is_io_error(tmp_path):
    code = main(["train", "--kind", "preseg", "--data", str(tmp_path / "void"),
                 "--out", str(tmp_path / "p.ckpt"), "--epochs", "1"])
    assert code == EXIT_IO


def test_sample_vanilla_metrics_and_maps(corpus, denoiser_ckpt, tmp_path):
    out = tmp_path / "vanilla"
    code = main(["sample", "--method", "vanilla", "--data", str(corpus),
                 "--denoiser", str(denoiser_ckpt), "--ensemble", "2",
                 "--seed", "5", "--out", str(out)])
    assert code == EXIT_OK
    rows = read_csv(out / "metrics.csv")
    data_rows, mean_rows = rows[:-1], rows[-1:]
    assert mean_rows[0]["case_id"] == "mean"
    for row in data_rows:
        assert row["method"] == "vanilla"
        assert row["t_prime"] == ""
        assert int(row["nfe"]) == 2 * 12
        maps = sorted((out / "maps").glob(f"{row['case_id']}_*.pgm"))
        assert len(maps) == 3


def test_sample_pd_with_oracle_preseg(corpus, denoiser_ckpt, tmp_path):
    out = tmp_path / "pd"
    code = main(["sample", "--method", "pd", "--t-prime", "4", "--data", str(corpus),
                 "--denoiser", str(denoiser_ckpt), "--preseg-oracle-dice", "0.9",
                 "--ensemble", "2", "--seed", "5", "--out", str(out)])
    assert code == EXIT_OK
    for row in read_csv(out / "metrics.csv")[:-1]:
        assert int(row["nfe"]) == 2 * 4
        assert row["t_prime"] == "4"


def test_sample_single_member_uncertainty_map_is_zero(corpus, denoiser_ckpt, tmp_path):
    out = tmp_path / "one"
    code = main(["sample", "--method", "pd", "--t-prime", "3", "--data", str(corpus),
                 "--denoiser", str(denoiser_ckpt), "--preseg-oracle-dice", "1.0",
                 "--ensemble", "1", "--seed", "6", "--limit", "2", "--out", str(out)])
    assert code == EXIT_OK
    for path in (out / "maps").glob("*_uncertainty.pgm"):
        values, _ = pgm.read_pgm(path)
        assert np.all(values == 0)


def test_sample_pd_without_t_prime_is_usage_error(corpus, denoiser_ckpt, tmp_path):
    code = main(["sample", "--method", "pd", "--data", str(corpus),
                 "--denoiser", str(denoiser_ckpt), "--preseg-oracle-dice", "0.9",
                 "--out", str(tmp_path / "x")])
    assert code == EXIT_USAGE


def test_sample_pd_needs_exactly_one_preseg_source(corpus, denoiser_ckpt, preseg_ckpt, tmp_path):
    base = ["sample", "--method", "pd", "--t-prime", "3", "--data", str(corpus),
            "--denoiser", str(denoiser_ckpt), "--out", str(tmp_path / "x")]
    assert main(base) == EXIT_USAGE
    assert main(base + ["--preseg", str(preseg_ckpt), "--preseg-oracle-dice", "0.5"]) == EXIT_USAGE


def test_sample_missing_checkpoint_is_io_error(corpus, tmp_path):
    code = main(["sample", "--method", "vanilla", "--data", str(corpus),
                 "--denoiser", str(tmp_path / "ghost.ckpt"), "--out", str(tmp_path / "x")])
    assert code == EXIT_IO


def test_sample_rerun_reproduces_csv(corpus, denoiser_ckpt, preseg_ckpt, tmp_path):
    out = tmp_path / "first"
    code = main(["sample", "--method", "pd", "--t-prime", "4", "--data", str(corpus),
                 "--denoiser", str(denoiser_ckpt), "--preseg", str(preseg_ckpt),
                 "--ensemble", "2", "--seed", "11", "--out", str(out)])
    assert code == EXIT_OK
    redo = tmp_path / "second"
    assert main(["rerun", "--manifest", str(out / "run_manifest.txt"), "--out", str(redo)]) == EXIT_OK
    assert (redo / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()
    for path in sorted((out / "maps").glob("*.pgm")):
        assert (redo / "maps" / path.name).read_bytes() == path.read_bytes()


def test_sweep_tprime_csv_and_svg(corpus, denoiser_ckpt, preseg_ckpt, tmp_path):
    out = tmp_path / "sw"
    code = main(["sweep", "--kind", "tprime", "--grid", "2,5,9", "--data", str(corpus),
                 "--denoiser", str(denoiser_ckpt), "--preseg", str(preseg_ckpt),
                 "--ensemble", "2", "--seed", "12", "--limit", "3", "--out", str(out)])
    assert code == EXIT_OK
    rows = read_csv(out / "sweep.csv")
    assert [r["t_prime"] for r in rows] == ["2", "5", "9"]
    assert [float(r["nfe_per_case"]) for r in rows] == [4.0, 10.0, 18.0]
    svg = (out / "sweep_dice.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg
    assert (out / "sweep_uncertainty.svg").is_file()


def test_sweep_ensemble_and_preseg_quality(corpus, denoiser_ckpt, preseg_ckpt, tmp_path):
    out = tmp_path / "se"
    code = main(["sweep", "--kind", "ensemble", "--grid", "1,3", "--data", str(corpus),
                 "--denoiser", str(denoiser_ckpt), "--preseg", str(preseg_ckpt),
                 "--t-prime", "4", "--seed", "13", "--limit", "3", "--out", str(out)])
    assert code == EXIT_OK
    rows = read_csv(out / "sweep.csv")
    assert [r["ensemble_size"] for r in rows] == ["1", "3"]

    out2 = tmp_path / "spq"
    code = main(["sweep", "--kind", "preseg-quality", "--grid", "0.0,1.0", "--data", str(corpus),
                 "--denoiser", str(denoiser_ckpt), "--t-prime", "4",
                 "--ensemble", "2", "--seed", "14", "--limit", "3", "--out", str(out2)])
    assert code == EXIT_OK
    rows = read_csv(out2 / "sweep.csv")
    assert [r["target_dice"] for r in rows] == ["0.0", "1.0"]
    assert float(rows[0]["mean_dice"]) <= float(rows[1]["mean_dice"])


def test_sweep_empty_grid_is_usage_error(corpus, denoiser_ckpt, preseg_ckpt, tmp_path):
    code = main(["sweep", "--kind", "tprime", "--grid", ",", "--data", str(corpus),
                 "--denoiser", str(denoiser_ckpt), "--preseg", str(preseg_ckpt),
                 "--out", str(tmp_path / "x")])
    assert code == EXIT_USAGE


def test_oracle_check_command(tmp_path):
    out = tmp_path / "oc"
    code = main(["oracle-check", "--timesteps", "60", "--t-prime", "20", "--trials", "400",
                 "--grid-side", "6", "--out", str(out)])
    assert code == EXIT_OK
    rows = read_csv(out / "oracle_checks.csv")
    assert all(r["passed"] == "True" for r in rows)


def test_rerun_rejects_non_manifest(tmp_path):
    path = tmp_path / "junk.txt"
    path.write_text("not a manifest\n")
    assert main(["rerun", "--manifest", str(path)]) == EXIT_USAGE
