"""Run configuration, staged pipeline caching, and the CLI surface."""

import dataclasses
import json

import numpy as np
import pytest

from twostream.cli import main
from twostream.config import (STRATEGIES, RunConfig, load_run_config,
                              parse_config_text)
from twostream.errors import (ConfigError, ConvergenceError, DataError,
                              FormatError)
from twostream.pgm import read_pgm
from twostream.pipeline import (RunPaths, evaluate_strategy, run_all,
                                run_compute_flow, run_gen_data, run_pipeline,
                                run_train)

MINI = dict(counts=(2,) * 6, train_fraction=0.5, num_frames=12, epochs=3,
            batch_size=8, sample_count=3)

MINI_CFG_TEXT = """\
# miniature run (see MINI in this test module)
dataset.counts = 2,2,2,2,2,2
dataset.train_fraction = 0.5
dataset.num_frames = 12
train.epochs = 3
train.batch_size = 8
eval.sample_count = 3
"""


def mini_config(out_dir, **overrides) -> RunConfig:
    return RunConfig(out_dir=out_dir, **{**MINI, **overrides})


@pytest.fixture(scope="module")
def mini_run(tmp_path_factory):
    """One fully populated run-all output directory, shared read-only."""
    out = tmp_path_factory.mktemp("mini_run")
    config = mini_config(out)
    reports = run_all(config)
    return out, config, reports


class TestConfigParsing:
    def test_values_comments_and_blanks(self):
        text = "\n# full line comment\nrun.seed = 7  # trailing\n\n"
        assert parse_config_text(text) == {"run.seed": "7"}

    def test_missing_equals_is_format_error(self):
        with pytest.raises(FormatError, match="config:2"):
            parse_config_text("run.seed = 1\nrun.jobs 4\n")

    def test_key_without_section_rejected(self):
        with pytest.raises(FormatError, match="no section"):
            parse_config_text("seed = 1\n")

    def test_unknown_key_names_file_and_line(self):
        with pytest.raises(ConfigError, match=r"config:1: unknown key"):
            parse_config_text("dataset.shapes = 9\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("run.seed = 1\nrun.seed = 2\n")

    def test_empty_value_rejected(self):
        with pytest.raises(FormatError, match="empty value"):
            parse_config_text("run.seed =\n")

    def test_file_values_applied(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("train.epochs = 7\nflow.levels = auto\n")
        config = load_run_config(tmp_path / "out", config_path=path)
        assert config.epochs == 7
        assert config.flow_levels is None

    def test_overrides_beat_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("run.seed = 3\nrun.strategy = late\n")
        config = load_run_config(tmp_path / "out", config_path=path,
                                 seed=11, strategy=None)
        assert config.seed == 11
        assert config.strategy == "late"

    def test_missing_file_is_data_error(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_run_config(tmp_path, config_path=tmp_path / "no.cfg")

    def test_bad_value_names_key(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("train.epochs = banana\n")
        with pytest.raises(ConfigError, match="train.epochs"):
            load_run_config(tmp_path / "out", config_path=path)

    def test_bad_counts_length(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("dataset.counts = 1,2,3\n")
        with pytest.raises(ConfigError, match="counts"):
            load_run_config(tmp_path / "out", config_path=path)

    def test_canonical_text_round_trips(self, tmp_path):
        config = mini_config(tmp_path, seed=5)
        path = tmp_path / "canon.cfg"
        path.write_text(config.canonical_text())
        again = load_run_config(tmp_path, config_path=path)
        assert again == config

    def test_invalid_strategy_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="strategy"):
            RunConfig(out_dir=tmp_path, strategy="both")

    def test_window_must_fit_clip(self, tmp_path):
        with pytest.raises(ConfigError, match="flow window"):
            RunConfig(out_dir=tmp_path, num_frames=5, stack_length=5)

    def test_nested_validation_runs_early(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig(out_dir=tmp_path, learning_rate=-1.0)
        with pytest.raises(ConfigError):
            RunConfig(out_dir=tmp_path, flow_pyramid_scale=0.2)


class TestConfigHash:
    def test_placement_knobs_do_not_change_hash(self, tmp_path):
        config = mini_config(tmp_path)
        moved = dataclasses.replace(config, jobs=4, strategy="late",
                                    out_dir=tmp_path / "elsewhere")
        assert moved.config_hash() == config.config_hash()

    def test_semantic_change_changes_hash(self, tmp_path):
        config = mini_config(tmp_path)
        assert dataclasses.replace(config, seed=1).config_hash() \
            != config.config_hash()
        assert dataclasses.replace(config, clip_mag=4.0).config_hash() \
            != config.config_hash()

    def test_derived_seeds_distinct_and_stable(self, tmp_path):
        config = mini_config(tmp_path)
        seeds = [config.weight_seed(k) for k in ("spatial", "temporal",
                                                 "early")]
        seeds += [config.sgd_seed(k) for k in ("spatial", "temporal",
                                               "early")]
        assert len(set(seeds)) == len(seeds)
        assert seeds == [mini_config(tmp_path).weight_seed(k)
                         for k in ("spatial", "temporal", "early")] \
            + [mini_config(tmp_path).sgd_seed(k)
               for k in ("spatial", "temporal", "early")]


class TestPipelineArtifacts:
    def test_layout_complete(self, mini_run):
        out, config, reports = mini_run
        paths = RunPaths(out)
        assert paths.manifest_path.is_file()
        assert len(list(paths.flow_dir.glob("*.flow"))) == 12
        for kind in ("spatial", "temporal", "early"):
            assert paths.stream_path(kind).is_file()
            assert paths.history_path(kind).is_file()
        assert paths.svm_path.is_file()
        for strategy in STRATEGIES:
            assert paths.report_path(strategy).is_file()
            assert paths.confusion_csv_path(strategy).is_file()
            assert paths.confusion_pgm_path(strategy).is_file()
        assert (out / "reports" / "comparison.csv").is_file()
        assert (out / "effective_config.txt").is_file()
        assert (out / "run_manifest.txt").is_file()
        assert not paths.lock_path.exists()

    def test_reports_cover_all_strategies_in_order(self, mini_run):
        _, _, reports = mini_run
        assert [r.method for r in reports] == list(STRATEGIES)

    def test_run_manifest_records_hash_and_seeds(self, mini_run):
        out, config, _ = mini_run
        text = (out / "run_manifest.txt").read_text()
        lines = dict(line.split("=", 1) for line in text.splitlines())
        assert lines["config_hash"] == config.config_hash()
        assert int(lines["weights.temporal"]) == config.weight_seed("temporal")
        assert lines["strategies"] == ",".join(STRATEGIES)

    def test_effective_config_reloads_identically(self, mini_run):
        out, config, _ = mini_run
        again = load_run_config(out, config_path=out / "effective_config.txt")
        assert again == dataclasses.replace(config, out_dir=out)

    def test_comparison_csv_matches_report_rows(self, mini_run):
        out, _, _ = mini_run
        lines = (out / "reports" / "comparison.csv").read_text().splitlines()
        assert lines[0].startswith("method,C0")
        assert [line.split(",")[0] for line in lines[1:]] == list(STRATEGIES)


class TestPipelineCaching:
    def test_rerun_reuses_everything_and_reports_match(self, mini_run):
        out, config, _ = mini_run
        before = {p.name: p.read_bytes()
                  for p in sorted((out / "reports").glob("*"))}
        log = []
        run_all(config, log=log.append)
        assert all(" cached" in line for line in log
                   if line.startswith("[") and "evaluate" not in line)
        after = {p.name: p.read_bytes()
                 for p in sorted((out / "reports").glob("*"))}
        assert before == after

    def test_artifact_corruption_invalidates_stage(self, mini_run):
        out, config, _ = mini_run
        victim = sorted(out.glob("flow/*.flow"))[0]
        good = victim.read_bytes()
        victim.write_bytes(good[:64])
        log = []
        run_all(config, log=log.append)
        assert "[flow] running" in log
        assert victim.read_bytes() == good

    def test_stamp_corruption_invalidates_stage(self, mini_run):
        out, config, _ = mini_run
        stamp = out / "cache" / "svm.stamp"
        stamp.write_text("{broken")
        log = []
        run_all(config, log=log.append)
        assert "[svm] running" in log
        assert json.loads(stamp.read_text())["files"]

    def test_config_change_retrains_but_keeps_flow(self, mini_run):
        out, config, _ = mini_run
        log = []
        run_all(dataclasses.replace(config, epochs=4), log=log.append)
        assert "[dataset] cached" in log
        assert "[flow] cached" in log
        assert "[stream:spatial] running" in log
        # restore the fixture's models for later tests
        run_all(config)

    def test_lock_blocks_second_run(self, mini_run):
        out, config, _ = mini_run
        lock = RunPaths(out).lock_path
        lock.write_text("held\n")
        try:
            with pytest.raises(DataError, match="locked"):
                run_all(config)
        finally:
            lock.unlink()

    def test_spatial_only_skips_flow(self, tmp_path):
        config = mini_config(tmp_path / "sp", strategy="spatial_only",
                             epochs=1)
        run_pipeline(config)
        paths = RunPaths(config.out_dir)
        assert not paths.flow_dir.exists()
        assert paths.stream_path("spatial").is_file()
        assert paths.report_path("spatial_only").is_file()

    def test_jobs_do_not_change_flow_bytes(self, mini_run, tmp_path):
        out, config, _ = mini_run
        parallel = dataclasses.replace(config, out_dir=tmp_path / "par",
                                       jobs=2)
        run_compute_flow(parallel)
        for path in sorted(out.glob("flow/*.flow")):
            twin = parallel.out_dir / "flow" / path.name
            assert twin.read_bytes() == path.read_bytes()


class TestPipelineFailures:
    def test_divergence_names_stage(self, tmp_path):
        # One step at this rate pushes weights far enough that the next
        # forward pass overflows float32 into non-finite logits.
        config = mini_config(tmp_path / "div", strategy="spatial_only",
                             epochs=2, learning_rate=1e20)
        with np.errstate(all="ignore"), \
                pytest.raises(ConvergenceError, match="stage stream:spatial"):
            run_train(config)

    def test_eval_without_models_names_checkpoint(self, tmp_path):
        config = mini_config(tmp_path / "no_models", strategy="mid")
        run_gen_data(config)
        with pytest.raises(DataError, match=r"spatial\.stream"):
            evaluate_strategy(config, "mid")

    def test_eval_without_dataset_names_manifest(self, tmp_path):
        config = mini_config(tmp_path / "empty")
        with pytest.raises(DataError, match="manifest"):
            evaluate_strategy(config, "spatial_only")


class TestCli:
    def test_gen_data_and_render(self, tmp_path, capsys):
        cfg_file = tmp_path / "mini.cfg"
        cfg_file.write_text(MINI_CFG_TEXT)
        out = tmp_path / "run"
        assert main(["gen-data", "--out", str(out), "--config",
                     str(cfg_file)]) == 0
        assert "manifest.tsv" in capsys.readouterr().out
        assert (out / "dataset" / "manifest.tsv").is_file()

    def test_eval_and_run_all_on_shared_run(self, mini_run, tmp_path, capsys):
        out, _, _ = mini_run
        cfg_file = tmp_path / "mini.cfg"
        cfg_file.write_text(MINI_CFG_TEXT)
        assert main(["eval", "--out", str(out), "--config", str(cfg_file),
                     "--strategy", "mid"]) == 0
        text = capsys.readouterr().out
        assert "mid" in text and "Total" in text

        assert main(["run-all", "--out", str(out), "--config",
                     str(cfg_file)]) == 0
        text = capsys.readouterr().out
        table = [line for line in text.splitlines()
                 if line.split()[:1] and line.split()[0] in STRATEGIES]
        assert len(table) == 5

    def test_render_confusion_cell_size(self, mini_run, capsys):
        out, _, _ = mini_run
        assert main(["render-confusion", "--out", str(out), "--strategy",
                     "mid", "--cell", "4"]) == 0
        image = read_pgm(RunPaths(out).confusion_pgm_path("mid"))
        assert image.shape == (24, 24)

    def test_render_confusion_missing_csv_exits_2(self, tmp_path, capsys):
        assert main(["render-confusion", "--out", str(tmp_path),
                     "--strategy", "late"]) == 2

    def test_eval_missing_checkpoint_exits_2(self, tmp_path, capsys):
        cfg_file = tmp_path / "mini.cfg"
        cfg_file.write_text(MINI_CFG_TEXT)
        out = tmp_path / "run"
        assert main(["gen-data", "--out", str(out), "--config",
                     str(cfg_file)]) == 0
        assert main(["eval", "--out", str(out), "--config", str(cfg_file),
                     "--strategy", "spatial_only"]) == 2
        assert "spatial.stream" in capsys.readouterr().err

    def test_usage_errors_exit_1(self, tmp_path, capsys):
        assert main(["train"]) == 1
        assert main(["train", "--out", str(tmp_path), "--bogus"]) == 1
        assert main(["no-such-command"]) == 1
        assert main(["eval", "--out", str(tmp_path), "--strategy",
                     "sideways"]) == 1

    def test_bad_config_value_exits_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("train.epochs = banana\n")
        assert main(["gen-data", "--out", str(tmp_path / "o"), "--config",
                     str(bad)]) == 1
        assert "train.epochs" in capsys.readouterr().err

    def test_missing_config_file_exits_2(self, tmp_path, capsys):
        assert main(["gen-data", "--out", str(tmp_path / "o"), "--config",
                     str(tmp_path / "no.cfg")]) == 2

    def test_divergence_exits_3(self, tmp_path, capsys):
        cfg_file = tmp_path / "explode.cfg"
        cfg_file.write_text(MINI_CFG_TEXT.replace(
            "train.epochs = 3", "train.epochs = 2")
            + "train.learning_rate = 1e20\n")
        out = tmp_path / "run"
        with np.errstate(all="ignore"):
            code = main(["train", "--out", str(out), "--config",
                         str(cfg_file), "--strategy", "spatial_only"])
        assert code == 3
        assert "stage stream:spatial" in capsys.readouterr().err

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["--version"])
        assert excinfo.value.code == 0
        assert "twostream" in capsys.readouterr().out
