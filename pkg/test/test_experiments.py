import math

import pytest

from marginal_correspondence.config import ExperimentConfig
from marginal_correspondence.errors import ConfigError
from marginal_correspondence.experiments import run_ablation, sweep_margin

TINY = ExperimentConfig(
    image_size=16,
    encoder_channels=(4, 4, 4),
    scm_dim=3,
    steps=1,
    batch_size=1,
    log_every=1,
    eval_pairs=1,
)


class TestSweep:
    def test_one_row_per_margin(self):
        report = sweep_margin(TINY.with_overrides(loss="infonce"), margins=[0.1, 0.3], seeds=[1, 2])
        assert [row.label for row in report.table] == ["m=0.1", "m=0.3"]
        for row in report.table:
            assert row.seeds == 2
            assert row.loss == "mcl"
        assert report.row("m=0.3").margin == 0.3
        assert [r.seed for r in report.runs["m=0.1"]] == [1, 2]

    def test_table_text(self):
        report = sweep_margin(TINY, margins=[0.2], seeds=[1])
        text = report.format()
        assert text.splitlines()[0] == "margin sweep"
        assert "m=0.2" in text
        assert "±" in text

    def test_writes_run_directories(self, tmp_path):
        sweep_margin(TINY, margins=[0.2], seeds=[3], out_dir=tmp_path)
        assert (tmp_path / "mosaic-mcl-m0.2-noscm-s3" / "metrics.csv").exists()

    @pytest.mark.parametrize("margins", [[], [-0.1], [math.pi / 2]])
    def test_bad_margins(self, margins):
        with pytest.raises(ConfigError):
            sweep_margin(TINY, margins=margins, seeds=[1])

    def test_parallel_matches_serial(self):
        serial = sweep_margin(TINY, margins=[0.1, 0.4], seeds=[1])
        parallel = sweep_margin(TINY, margins=[0.1, 0.4], seeds=[1], workers=2)
        assert serial.table == parallel.table


class TestAblation:
    def test_row_labels_and_settings(self):
        report = run_ablation(TINY, margins=[0.1, 0.4], seeds=[1])
        labels = [row.label for row in report.table]
        assert labels == ["baseline", "+MCL(0.1)", "+MCL(0.4)", "+SCM", "+MCL(0.4)+SCM"]
        assert (report.row("baseline").loss, report.row("baseline").scm) == ("none", False)
        assert (report.row("+SCM").loss, report.row("+SCM").scm) == ("none", True)
        assert (report.row("+MCL(0.4)+SCM").loss, report.row("+MCL(0.4)+SCM").scm) == ("mcl", True)
        assert report.format().splitlines()[0] == "ablation"

    def test_unknown_row(self):
        report = run_ablation(TINY, margins=[0.2], seeds=[1])
        with pytest.raises(KeyError):
            report.row("+MCL(0.3)")
