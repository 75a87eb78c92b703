import pytest

from marginal_correspondence.cli import EXIT_ERROR, EXIT_OK, build_config, build_parser, main
from marginal_correspondence.records import CSV_COLUMNS, parse_rows

TINY_CONF = """\
# small enough for unit tests
image_size = 16
encoder_channels = 4, 4, 4
scm_dim = 3
steps = 1
batch_size = 1
log_every = 1
eval_pairs = 1
"""


@pytest.fixture
def conf(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    path = tmp_path / "tiny.conf"
    path.write_text(TINY_CONF, encoding="utf-8")
    return path


@pytest.fixture
def trained(conf, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--config", str(conf), "--out", str(out), "--scm", "on"]) == EXIT_OK
    return out


class TestTrainEval:
    def test_train_outputs(self, capsys, trained):
        assert {p.name for p in trained.iterdir()} == {"config.txt", "metrics.csv", "final.ckpt"}
        assert "top1=" in capsys.readouterr().out

    def test_eval_prints_csv(self, conf, trained, tmp_path, capsys):
        capsys.readouterr()
        code = main(
            [
                "eval",
                "--config", str(conf),
                "--checkpoint", str(trained / "final.ckpt"),
                "--seeds", "4,5",
                "--out", str(tmp_path / "eval"),
            ]
        )
        assert code == EXIT_OK
        text = capsys.readouterr().out
        assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
        rows = parse_rows(text)
        assert len(rows) == 1 and rows[0].scm is True
        assert (tmp_path / "eval" / "eval.csv").read_text(encoding="utf-8") == text

    def test_corrupt_checkpoint_is_an_error(self, conf, tmp_path):
        (tmp_path / "broken.ckpt").write_bytes(b"NOPE")
        assert main(["eval", "--config", str(conf), "--checkpoint", str(tmp_path / "broken.ckpt")]) == EXIT_ERROR


class TestWarp:
    def test_dumps_images_and_heatmap(self, conf, trained, tmp_path):
        out = tmp_path / "warp"
        code = main(
            [
                "warp",
                "--config", str(conf),
                "--checkpoint", str(trained / "final.ckpt"),
                "--pair-seed", "3",
                "--scm-position", "5",
                "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        names = {p.name for p in out.iterdir()}
        assert names == {
            "condition.ppm",
            "exemplar.ppm",
            "ground_truth.ppm",
            "warped.ppm",
            "warped_cells.ppm",
            "scm_5.pgm",
        }
        assert (out / "warped.ppm").read_bytes().startswith(b"P6\n16 16\n255\n")

    def test_untrained_warp(self, conf, tmp_path):
        assert main(["warp", "--config", str(conf), "--out", str(tmp_path / "w")]) == EXIT_OK
        assert (tmp_path / "w" / "warped.ppm").exists()

    def test_position_out_of_range(self, conf, tmp_path, capsys):
        code = main(["warp", "--config", str(conf), "--scm-position", "16", "--out", str(tmp_path / "w")])
        assert code == EXIT_ERROR
        assert "--scm-position" in capsys.readouterr().err


class TestErrors:
    def test_invalid_margin(self, conf):
        assert main(["train", "--config", str(conf), "--margin", "2.0"]) == EXIT_ERROR

    def test_unknown_config_key(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        path = tmp_path / "typo.conf"
        path.write_text("stpes = 3\n", encoding="utf-8")
        assert main(["train", "--config", str(path)]) == EXIT_ERROR
        assert "typo.conf:1" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert main(["train", "--config", str(tmp_path / "absent.conf")]) == EXIT_ERROR

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            main(["fit"])


class TestPrecedence:
    def test_flags_beat_file_beat_environment(self, conf, monkeypatch):
        monkeypatch.setenv("MCL_STEPS", "7")
        monkeypatch.setenv("MCL_SEED", "4")
        monkeypatch.setenv("MCL_MARGIN", "0.2")
        args = build_parser().parse_args(["train", "--config", str(conf), "--margin", "0.3"])
        config = build_config(args)
        assert config.steps == 1
        assert config.seed == 4
        assert config.margin == 0.3

    def test_scm_and_task_flags(self, conf):
        args = build_parser().parse_args(["train", "--config", str(conf), "--scm", "on", "--task", "gradient-shapes"])
        config = build_config(args)
        assert config.scm is True and config.task == "shapes"


class TestChecksAndExperiments:
    def test_gradcheck_subset(self, capsys):
        assert main(["gradcheck", "--instances", "1", "--cases", "gram,softmax_rows"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "gram" in out and "softmax_rows" in out

    def test_sweep_margin_writes_table(self, conf, tmp_path):
        out = tmp_path / "sweep"
        code = main(["sweep-margin", "--config", str(conf), "--margins", "0.1,0.2", "--seeds", "1", "--out", str(out)])
        assert code == EXIT_OK
        table = (out / "sweep-margin.txt").read_text(encoding="utf-8")
        assert "m=0.1" in table and "m=0.2" in table

    def test_ablate(self, conf, capsys):
        assert main(["ablate", "--config", str(conf), "--margins", "0.3", "--seeds", "1"]) == EXIT_OK
        out = capsys.readouterr().out
        for label in ("baseline", "+MCL(0.3)", "+SCM", "+MCL(0.3)+SCM"):
            assert label in out
