import json
import re

import numpy as np
import pytest

from errseq import (
    HarnessError,
    ModelConfig,
    SynthConfig,
    emit_report,
    expand_grid,
    generate_corpus,
    report_from_folds,
    run_config,
    run_fold,
    run_grid,
    save_corpus,
)
from errseq.cli import main
from errseq.harness import (
    REPORT_COLUMNS,
    config_id,
    fit_transforms,
    fold_seed,
    format_msd,
    render_csv,
    render_markdown,
    transform_checksum,
)


def tiny_corpus(participants=3, seed=42, profile="separable"):
    return generate_corpus(
        SynthConfig(
            participants=participants,
            frames_per_stage=100,
            dims={"facial": 4, "audio": 3},
            seed=seed,
            profile=profile,
        )
    )


def tiny_config(**kw):
    base = dict(
        scheme="error_detection",
        cell="gru",
        fusion="early",
        modalities=("facial", "audio"),
        representation="raw",
        hidden=4,
        epochs=2,
        seed=42,
    )
    base.update(kw)
    return ModelConfig(**base)


def test_config_id_is_stable_and_sensitive():
    a = config_id(tiny_config())
    assert a == config_id(tiny_config())
    assert a != config_id(tiny_config(seed=43))
    assert len(a) == 16


def test_fold_seed_depends_on_participant():
    assert fold_seed(42, "p00") != fold_seed(42, "p01")
    assert fold_seed(42, "p00") == fold_seed(42, "p00")


def test_run_fold_is_deterministic():
    corpus = tiny_corpus()
    a = run_fold(corpus, "p00", tiny_config())
    b = run_fold(corpus, "p00", tiny_config())
    assert a.metrics == b.metrics
    assert a.train == b.train and a.val == b.val and a.test == b.test
    assert a.transform_checksum == b.transform_checksum
    assert a.best_epoch == b.best_epoch
    assert a.config.seed == fold_seed(42, "p00")


def test_run_fold_partition_is_disjoint():
    fr = run_fold(tiny_corpus(), "p01", tiny_config())
    train, val, test = set(fr.train), set(fr.val), set(fr.test)
    assert not train & val and not train & test and not val & test
    assert sum(fr.test_class_counts.values()) == len(fr.test)
    assert fr.wall_time > 0


def test_run_fold_missing_modality_is_a_split_error():
    from errseq import SplitError

    with pytest.raises(SplitError, match="lacks"):
        run_fold(tiny_corpus(), "p00", tiny_config(modalities=("facial", "text")))


def test_run_config_covers_all_participants():
    corpus = tiny_corpus()
    result = run_config(corpus, tiny_config())
    assert len(result.folds) + len(result.skipped) == len(corpus.sessions)
    assert result.folds, "expected at least one completed fold"
    agg = result.aggregate()
    accs = [f.metrics.accuracy for f in result.folds]
    assert abs(agg["accuracy"][0] - float(np.mean(accs))) < 1e-12


def test_transform_checksum_tracks_training_rows_only():
    corpus = tiny_corpus()
    cfg = tiny_config(representation="normalized")
    from errseq import label_frames, make_windows, split

    session = corpus.session("p00")
    windows = make_windows(session, label_frames(session), cfg.window, cfg.stride)
    plan = split(windows, cfg.scheme, seed=7)
    fitted = fit_transforms(cfg, windows, plan.train)
    checksum = transform_checksum(cfg, fitted)
    for i in plan.test:
        for m in windows[i].features:
            windows[i].features[m][:] = 1e6
    refit = fit_transforms(cfg, windows, plan.train)
    assert transform_checksum(cfg, refit) == checksum


def test_expand_grid_cartesian_product():
    spec = {
        "scheme": ["error_detection", "multiple_error_detection"],
        "cell": ["lstm", "gru"],
        "modalities": [["facial"], ["facial", "audio"]],
        "representation": "raw",
        "epochs": 2,
    }
    configs = expand_grid(spec)
    assert len(configs) == 8
    assert len({config_id(c) for c in configs}) == 8
    schemes = {c.scheme for c in configs}
    assert schemes == {"error_detection", "multiple_error_detection"}
    assert all(c.epochs == 2 for c in configs)


def test_expand_grid_single_config():
    configs = expand_grid({"scheme": "error_detection"})
    assert len(configs) == 1
    assert configs[0].modalities == ("facial", "pose", "audio", "text")


def test_expand_grid_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown config keys"):
        expand_grid({"scheme": "error_detection", "momentum": 0.9})
    with pytest.raises(ValueError, match="scheme"):
        expand_grid({"cell": "lstm"})
    with pytest.raises(ValueError, match="empty sweep"):
        expand_grid({"scheme": "error_detection", "cell": []})


def test_run_grid_persists_and_resumes(tmp_path):
    corpus = tiny_corpus()
    configs = [tiny_config()]
    report = run_grid(corpus, configs, tmp_path)
    folds_file = tmp_path / "folds.jsonl"
    first = folds_file.read_text()
    assert len(first.strip().splitlines()) == len(corpus.sessions)

    # resuming recomputes nothing and appends nothing
    report2 = run_grid(corpus, configs, tmp_path)
    assert folds_file.read_text() == first
    agg1 = report.results[0].aggregate()
    agg2 = report2.results[0].aggregate()
    assert agg1 == agg2


def test_run_grid_resume_preserves_metrics_bitwise(tmp_path):
    corpus = tiny_corpus()
    cfg = tiny_config()
    fresh = run_grid(corpus, [cfg], tmp_path / "a").results[0]
    resumed = run_grid(corpus, [cfg], tmp_path / "a").results[0]
    for f1, f2 in zip(fresh.folds, resumed.folds):
        assert f1.metrics == f2.metrics
        assert f1.train == f2.train


def test_run_grid_writes_checkpoints(tmp_path):
    corpus = tiny_corpus(participants=2)
    cfg = tiny_config()
    run_grid(corpus, [cfg], tmp_path)
    cid = config_id(cfg)
    ckpts = sorted(p.name for p in (tmp_path / "checkpoints" / cid).iterdir())
    assert ckpts == ["p00.ckpt", "p01.ckpt"]


def test_report_from_folds_round_trip(tmp_path):
    corpus = tiny_corpus()
    cfg = tiny_config()
    live = run_grid(corpus, [cfg], tmp_path)
    rebuilt = report_from_folds(tmp_path)
    assert render_csv(rebuilt) == render_csv(live)
    with pytest.raises(FileNotFoundError):
        report_from_folds(tmp_path / "empty")


def test_format_msd():
    assert format_msd(0.9346, 0.0325) == "0.935 ± 0.033"
    assert format_msd(1.0, 0.0) == "1.000 ± 0.000"


def test_csv_report_layout(tmp_path):
    report = run_grid(tiny_corpus(participants=2), [tiny_config()], tmp_path)
    text = render_csv(report)
    lines = text.strip().splitlines()
    header = lines[0].split(",")
    assert header == list(REPORT_COLUMNS) + ["best"]
    row = lines[1].split(",")
    assert row[0] == "GRU"
    assert row[1] == "Error Detection"
    assert row[2] == "facial+audio"
    assert row[3] == "raw"
    assert row[4] == "early"
    for cell in row[5:9]:
        assert re.fullmatch(r"\d\.\d{3} ± \d\.\d{3}", cell)
    assert row[9] == "yes"


def test_markdown_report_grouping(tmp_path):
    corpus = tiny_corpus(participants=2)
    configs = [
        tiny_config(),
        tiny_config(cell="lstm"),
        tiny_config(scheme="multiple_error_detection"),
    ]
    report = run_grid(corpus, configs, tmp_path)
    text = render_markdown(report)
    lines = text.strip().splitlines()
    assert lines[0] == (
        "| Model | Classification | Modalities | Representation | Fusion "
        "| Accuracy | Precision | Recall | F1 |"
    )
    assert lines[1] == "|" + "---|" * 9
    assert "| *Error Detection* |" in text
    assert "| *Multiple Error Detection* |" in text
    assert text.index("*Error Detection*") < text.index("*Multiple Error Detection*")
    # one best model per (scheme, cell) group is bolded
    assert text.count("**GRU**") == 2
    assert text.count("**LSTM**") == 1


def test_emit_report_writes_files(tmp_path):
    report = run_grid(tiny_corpus(participants=2), [tiny_config()], tmp_path)
    csv_path = emit_report(report, "csv", tmp_path / "report.csv")
    md_path = emit_report(report, "markdown", tmp_path / "report.md")
    assert csv_path.read_text().startswith("model,")
    assert md_path.read_text().startswith("| Model |")
    with pytest.raises(ValueError):
        emit_report(report, "pdf", tmp_path / "report.pdf")


def test_aggregate_error_when_every_fold_skipped():
    corpus = tiny_corpus(participants=1)
    # window longer than any session: every fold raises SplitError
    with pytest.raises(HarnessError, match="skipped"):
        run_config(corpus, tiny_config(window=1000))


def write_corpus_and_config(tmp_path, config=None):
    corpus_dir = tmp_path / "corpus"
    save_corpus(tiny_corpus(participants=2), corpus_dir)
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(
        json.dumps(
            config
            or {
                "scheme": "error_detection",
                "cell": "gru",
                "modalities": ["facial", "audio"],
                "representation": "raw",
                "hidden": 4,
                "epochs": 2,
            }
        )
    )
    return corpus_dir, cfg_path


def test_cli_synth_validate_round_trip(tmp_path, capsys):
    out = tmp_path / "corpus"
    assert main(["synth", "--out", str(out), "--participants", "2", "--seed", "7"]) == 0
    assert main(["validate", "--corpus", str(out)]) == 0
    captured = capsys.readouterr()
    assert "corpus ok: 2 participants" in captured.out


def test_cli_run_and_report(tmp_path, capsys):
    corpus_dir, cfg_path = write_corpus_and_config(tmp_path)
    out = tmp_path / "run"
    code = main(
        ["run", "--corpus", str(corpus_dir), "--config", str(cfg_path), "--out", str(out)]
    )
    assert code == 0
    assert (out / "folds.jsonl").exists()
    assert (out / "report.csv").exists()
    assert (out / "report.md").exists()
    assert main(["report", "--in", str(out), "--format", "markdown"]) == 0
    capsys.readouterr()


def test_cli_run_rejects_sweeping_config(tmp_path):
    corpus_dir, cfg_path = write_corpus_and_config(
        tmp_path,
        config={"scheme": ["error_detection", "multiple_error_detection"], "epochs": 2},
    )
    code = main(
        ["run", "--corpus", str(corpus_dir), "--config", str(cfg_path), "--out", str(tmp_path / "o")]
    )
    assert code == 1


def test_cli_grid_accepts_sweeps(tmp_path, capsys):
    corpus_dir, cfg_path = write_corpus_and_config(
        tmp_path,
        config={
            "scheme": "error_detection",
            "cell": ["gru", "lstm"],
            "modalities": ["facial"],
            "representation": "raw",
            "hidden": 4,
            "epochs": 2,
        },
    )
    out = tmp_path / "grid"
    code = main(
        ["grid", "--corpus", str(corpus_dir), "--config", str(cfg_path), "--out", str(out)]
    )
    assert code == 0
    text = (out / "report.csv").read_text()
    assert text.count("\n") == 3  # header + 2 config rows
    capsys.readouterr()


def test_cli_error_exit_codes(tmp_path, capsys):
    # invalid corpus -> 1
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "manifest.json").write_text("{not json")
    assert main(["validate", "--corpus", str(bad)]) == 1
    # missing config file -> 1
    corpus_dir = tmp_path / "corpus"
    save_corpus(tiny_corpus(participants=1), corpus_dir)
    assert (
        main(
            [
                "run",
                "--corpus",
                str(corpus_dir),
                "--config",
                str(tmp_path / "none.json"),
                "--out",
                str(tmp_path / "o"),
            ]
        )
        == 1
    )
    # report on a directory without folds -> 1 (bad input, nothing ran)
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["report", "--in", str(empty)]) == 1
    capsys.readouterr()


def test_cli_synth_null_profile(tmp_path, capsys):
    out = tmp_path / "null"
    assert main(["synth", "--out", str(out), "--participants", "1", "--profile", "null"]) == 0
    capsys.readouterr()
