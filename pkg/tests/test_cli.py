"""End-to-end tests of the command-line interface.

Each subcommand is driven through main() the way a shell would use it, and
the assertions check the documented contract: exit code 0 on success
(including a run suspended while waiting for labels), 1 on runtime errors,
2 on configuration or usage errors; delimited tables plus rendered figures
in the output directory; byte-identical reruns for identical inputs.
"""

import os

import numpy as np
import pytest

from alcurator.cli import main
from alcurator.config import config_digest, read_config
from alcurator.descriptor import (
    DescriptorMatrix,
    format_feature_table,
    parse_feature_table,
)
from alcurator.loop import experiment_run_dir
from alcurator.moldata import (
    Dataset,
    Molecule,
    format_label_table,
    make_pool,
    parse_label_table,
    parse_xyz_blocks,
    synth_dataset,
)
from alcurator.report import (
    HISTORY_HEADER,
    NOISE_GRID_HEADER,
    SAVINGS_HEADER,
    parse_aggregate_csv,
)

BASE = {
    "dataset.source": "synthetic",
    "synth.pool_size": "200",
    "synth.noise_sd": "0.05",
    "strategy": "random",
    "run.seeds": "0",
    "pool.n_test": "40",
    "schedule.kind": "CONST",
    "schedule.n_const": "10",
    "schedule.n_init": "10",
    "gp.optimize": "false",
    "gp.length_scale": "2.5",
    "gp.signal_variance": "5.0",
    "gp.noise": "1e-10",
    "run.max_train": "40",
}


def _cfg_text(**over):
    entries = dict(BASE)
    for key, value in over.items():
        if value is None:
            entries.pop(key, None)
        else:
            entries[key] = value
    return "\n".join(f"{k} = {v}" for k, v in entries.items()) + "\n"


def _write_cfg(tmp_path, name="run.cfg", **over):
    path = tmp_path / name
    path.write_text(_cfg_text(**over))
    return str(path)


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


class TestRunCommand:
    def test_success_writes_tables_and_figure(self, tmp_path, capsys):
        cfg_path = _write_cfg(tmp_path)
        out = str(tmp_path / "runs")
        code = main(["run", "--config", cfg_path, "--out", out])
        captured = capsys.readouterr()
        assert code == 0
        cfg = read_config(cfg_path)
        run_dir = experiment_run_dir(out, cfg)
        assert f"config digest: {config_digest(cfg)}" in captured.out
        assert f"run directory: {run_dir}" in captured.out
        assert "seed 0: complete (train size 40, 3 iterations)" in captured.out
        for name in ("config.txt", "seed0.csv", "aggregate.csv",
                     "learning_curve.png", "checkpoint_seed0.json"):
            assert os.path.exists(os.path.join(run_dir, name)), name
        with open(os.path.join(run_dir, "seed0.csv")) as fh:
            assert fh.readline().rstrip("\n") == HISTORY_HEADER
        # No target configured, so no classification figure.
        assert not os.path.exists(os.path.join(run_dir, "classification.png"))

    def test_target_adds_the_classification_figure(self, tmp_path, capsys):
        cfg_path = _write_cfg(tmp_path, **{"target.epsilon": "-9.5"})
        out = str(tmp_path / "runs")
        assert main(["run", "--config", cfg_path, "--out", out]) == 0
        run_dir = experiment_run_dir(out, read_config(cfg_path))
        assert os.path.exists(os.path.join(run_dir, "classification.png"))
        capsys.readouterr()

    def test_reruns_write_identical_tables(self, tmp_path, capsys):
        cfg_path = _write_cfg(tmp_path, **{"run.seeds": "0, 1"})
        cfg = read_config(cfg_path)
        outs = [str(tmp_path / "a"), str(tmp_path / "b")]
        for out in outs:
            assert main(["run", "--config", cfg_path, "--out", out]) == 0
        dirs = [experiment_run_dir(out, cfg) for out in outs]
        for name in ("seed0.csv", "seed1.csv", "aggregate.csv", "config.txt"):
            assert _read(os.path.join(dirs[0], name)) == (
                _read(os.path.join(dirs[1], name))
            ), name
        capsys.readouterr()

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.cfg"
        cfg_path.write_text(_cfg_text() + "spelling.mistake = 1\n")
        code = main(["run", "--config", str(cfg_path), "--out", str(tmp_path)])
        captured = capsys.readouterr()
        assert code == 2
        assert captured.err.startswith("config error:")
        assert "spelling.mistake" in captured.err

    def test_missing_config_file_exits_2(self, tmp_path, capsys):
        code = main(
            ["run", "--config", str(tmp_path / "none.cfg"), "--out", str(tmp_path)]
        )
        captured = capsys.readouterr()
        assert code == 2
        assert "config: cannot read" in captured.err

    def test_failing_seed_exits_1_and_names_the_seed(self, tmp_path, capsys):
        cfg_path = _write_cfg(tmp_path, **{"gp.max_exact_train": "8"})
        code = main(["run", "--config", cfg_path, "--out", str(tmp_path / "r")])
        captured = capsys.readouterr()
        assert code == 1
        assert "error: seed 0:" in captured.err
        assert "exceeds the exact-solver cap" in captured.err

    def test_resume_of_a_finished_run_reports_complete(self, tmp_path, capsys):
        cfg_path = _write_cfg(tmp_path)
        out = str(tmp_path / "runs")
        assert main(["run", "--config", cfg_path, "--out", out]) == 0
        capsys.readouterr()
        code = main(["run", "--config", cfg_path, "--out", out, "--resume"])
        captured = capsys.readouterr()
        assert code == 0
        assert "seed 0: complete" in captured.out

    def test_usage_error_exits_2(self):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code == 2


class TestSynthCommand:
    def test_writes_feature_and_label_tables(self, tmp_path, capsys):
        cfg_path = _write_cfg(tmp_path)
        out = str(tmp_path / "pool")
        code = main(["synth", "--config", cfg_path, "--out", out])
        captured = capsys.readouterr()
        assert code == 0
        assert "generated 200 molecules" in captured.out
        ids, matrix = parse_feature_table(
            open(os.path.join(out, "features.tsv")).read()
        )
        labels = parse_label_table(open(os.path.join(out, "labels.tsv")).read())
        assert len(ids) == 200 and len(matrix) == 200
        assert set(labels) == set(ids)
        assert os.path.exists(os.path.join(out, "labels_hist.png"))
        cfg = read_config(cfg_path)
        dataset = synth_dataset(cfg.dataset.synth, cfg.dataset.synth_seed)
        assert matrix.config_hash == dataset.feature_hash
        np.testing.assert_allclose(matrix.values, dataset.features, rtol=1e-15)

    def test_same_seed_is_byte_identical_and_new_seed_differs(
        self, tmp_path, capsys
    ):
        cfg_path = _write_cfg(tmp_path)
        for out in ("p1", "p2"):
            assert main(["synth", "--config", cfg_path, "--out",
                         str(tmp_path / out)]) == 0
        assert _read(tmp_path / "p1" / "features.tsv") == (
            _read(tmp_path / "p2" / "features.tsv")
        )
        assert _read(tmp_path / "p1" / "labels.tsv") == (
            _read(tmp_path / "p2" / "labels.tsv")
        )
        other_cfg = _write_cfg(tmp_path, name="other.cfg", **{"synth.seed": "9"})
        assert main(["synth", "--config", other_cfg, "--out",
                     str(tmp_path / "p3")]) == 0
        assert _read(tmp_path / "p1" / "labels.tsv") != (
            _read(tmp_path / "p3" / "labels.tsv")
        )
        capsys.readouterr()

    def test_non_synthetic_source_exits_2(self, tmp_path, capsys):
        xyz = tmp_path / "pool.xyz"
        xyz.write_text("1\nid=a label=-9.0\nH 0 0 0\n")
        cfg_path = _write_cfg(
            tmp_path,
            **{
                "dataset.source": "xyz",
                "dataset.xyz_path": str(xyz),
                "synth.pool_size": None,
                "synth.noise_sd": None,
            },
        )
        code = main(["synth", "--config", cfg_path, "--out", str(tmp_path / "o")])
        captured = capsys.readouterr()
        assert code == 2
        assert "needs dataset.source = synthetic" in captured.err

    def test_zero_pool_size_exits_2(self, tmp_path, capsys):
        cfg_path = _write_cfg(tmp_path, **{"synth.pool_size": "0"})
        code = main(["synth", "--config", cfg_path, "--out", str(tmp_path / "o")])
        captured = capsys.readouterr()
        assert code == 2
        assert "synth.pool_size" in captured.err

    def test_target_fraction_reports_the_threshold(self, tmp_path, capsys):
        cfg_path = _write_cfg(tmp_path, **{"target.fraction": "0.3"})
        code = main(["synth", "--config", cfg_path, "--out", str(tmp_path / "o")])
        captured = capsys.readouterr()
        assert code == 0
        assert "threshold" in captured.out
        assert "in range" in captured.out


class TestNoiseGridCommand:
    def test_writes_csv_and_figure_with_one_argmin(self, tmp_path, capsys):
        cfg_path = _write_cfg(
            tmp_path,
            **{"noise_grid.levels": "0.001, 0.05", "noise_grid.n_train": "40"},
        )
        out = str(tmp_path / "grid.csv")
        code = main(["noise-grid", "--config", cfg_path, "--out", out])
        captured = capsys.readouterr()
        assert code == 0
        lines = open(out).read().splitlines()
        assert lines[0] == NOISE_GRID_HEADER
        assert len(lines) == 3
        assert sum(line.split(",")[4] == "1" for line in lines[1:]) == 1
        assert os.path.exists(str(tmp_path / "grid.png"))
        assert "argmin: noise = " in captured.out

    def test_grid_flag_overrides_the_configured_levels(self, tmp_path, capsys):
        cfg_path = _write_cfg(
            tmp_path,
            **{"noise_grid.levels": "0.001, 0.05", "noise_grid.n_train": "40"},
        )
        out = str(tmp_path / "grid.csv")
        code = main(
            ["noise-grid", "--config", cfg_path, "--grid", "0.02", "--out", out]
        )
        captured = capsys.readouterr()
        assert code == 0
        lines = open(out).read().splitlines()
        assert len(lines) == 2
        assert lines[1].startswith("0.02,")
        assert "argmin: noise = 0.02" in captured.out

    def test_malformed_grid_flag_exits_2(self, tmp_path, capsys):
        cfg_path = _write_cfg(tmp_path)
        code = main(
            [
                "noise-grid", "--config", cfg_path,
                "--grid", "0.1,fast", "--out", str(tmp_path / "g.csv"),
            ]
        )
        captured = capsys.readouterr()
        assert code == 2
        assert "--grid: expected comma-separated numbers" in captured.err

    def test_deferred_oracle_mode_exits_2(self, tmp_path, capsys):
        cfg_path = _write_cfg(tmp_path, **{"oracle.mode": "deferred"})
        code = main(
            ["noise-grid", "--config", cfg_path, "--out", str(tmp_path / "g.csv")]
        )
        captured = capsys.readouterr()
        assert code == 2
        assert "needs precomputed labels" in captured.err


class TestCurvesCommand:
    def _run_pair(self, tmp_path, capsys, search_over=None, ref_over=None):
        runs = str(tmp_path / "runs")
        common = {"target.epsilon": "-8.9", "run.seeds": "0, 1"}
        search = dict(common, strategy="property_search", **(search_over or {}))
        reference = dict(common, strategy="random", **(ref_over or {}))
        for name, over in (("search.cfg", search), ("ref.cfg", reference)):
            cfg_path = _write_cfg(tmp_path, name=name, **over)
            assert main(["run", "--config", cfg_path, "--out", runs]) == 0
        capsys.readouterr()
        return runs

    def test_joins_the_two_strategies_into_a_savings_table(
        self, tmp_path, capsys
    ):
        runs = self._run_pair(tmp_path, capsys)
        out = str(tmp_path / "savings.csv")
        code = main(["curves", "--runs", runs, "--out", out])
        captured = capsys.readouterr()
        assert code == 0
        lines = open(out).read().splitlines()
        assert lines[0] == SAVINGS_HEADER
        assert [line.split(",")[0] for line in lines[1:]] == ["20", "30", "40"]
        assert os.path.exists(str(tmp_path / "savings.png"))
        assert "largest advantage:" in captured.out

    def test_missing_reference_strategy_exits_2(self, tmp_path, capsys):
        runs = str(tmp_path / "runs")
        cfg_path = _write_cfg(
            tmp_path,
            strategy="property_search",
            **{"target.epsilon": "-8.9"},
        )
        assert main(["run", "--config", cfg_path, "--out", runs]) == 0
        capsys.readouterr()
        code = main(
            ["curves", "--runs", runs, "--out", str(tmp_path / "s.csv")]
        )
        captured = capsys.readouterr()
        assert code == 2
        assert "need both strategies" in captured.err
        assert "missing: random" in captured.err

    def test_reference_without_target_progress_exits_2(self, tmp_path, capsys):
        runs = str(tmp_path / "runs")
        search = _write_cfg(
            tmp_path, name="s.cfg", strategy="property_search",
            **{"target.epsilon": "-8.9"},
        )
        reference = _write_cfg(tmp_path, name="r.cfg", strategy="random")
        for cfg_path in (search, reference):
            assert main(["run", "--config", cfg_path, "--out", runs]) == 0
        capsys.readouterr()
        code = main(["curves", "--runs", runs, "--out", str(tmp_path / "s.csv")])
        captured = capsys.readouterr()
        assert code == 2
        assert "no in-range progress column" in captured.err

    def test_mismatched_train_size_grids_exit_2(self, tmp_path, capsys):
        runs = self._run_pair(
            tmp_path, capsys, ref_over={"run.max_train": "30"}
        )
        code = main(["curves", "--runs", runs, "--out", str(tmp_path / "s.csv")])
        captured = capsys.readouterr()
        assert code == 2
        assert "different train-size grids" in captured.err

    def test_duplicate_strategy_directories_exit_2(self, tmp_path, capsys):
        runs = str(tmp_path / "runs")
        for name, seeds in (("a.cfg", "0"), ("b.cfg", "1")):
            cfg_path = _write_cfg(tmp_path, name=name, **{"run.seeds": seeds})
            assert main(["run", "--config", cfg_path, "--out", runs]) == 0
        capsys.readouterr()
        code = main(["curves", "--runs", runs, "--out", str(tmp_path / "s.csv")])
        captured = capsys.readouterr()
        assert code == 2
        assert "appears in both" in captured.err

    def test_missing_runs_directory_exits_2(self, tmp_path, capsys):
        code = main(
            [
                "curves", "--runs", str(tmp_path / "nowhere"),
                "--out", str(tmp_path / "s.csv"),
            ]
        )
        captured = capsys.readouterr()
        assert code == 2
        assert "is not a directory" in captured.err
        empty = tmp_path / "empty"
        empty.mkdir()
        code = main(
            ["curves", "--runs", str(empty), "--out", str(tmp_path / "s.csv")]
        )
        captured = capsys.readouterr()
        assert code == 2
        assert "no aggregate.csv found" in captured.err


def _deferred_config(tmp_path):
    """A features-source config whose held-out molecules lack labels."""
    n, n_test, n_init, seed = 40, 8, 8, 0
    rng = np.random.default_rng([7, 11])
    feats = rng.standard_normal((n, 3))
    values = feats @ np.array([1.0, -0.5, 0.25]) - 9.0
    ids = [f"m{i:04d}" for i in range(n)]
    # The split depends only on (pool size, sizes, seed), so probe it on a
    # fully labeled twin to learn which molecules stay held out.
    probe = Dataset(
        name="probe",
        molecules=tuple(
            Molecule(
                id=ids[i],
                species=("H",),
                positions=np.zeros((1, 3)),
                label=float(values[i]),
            )
            for i in range(n)
        ),
        features=feats,
        feature_hash="memhash",
    )
    heldout = set(make_pool(probe, n_test, n_init, seed).heldout)
    features_path = tmp_path / "features.tsv"
    labels_path = tmp_path / "labels.tsv"
    features_path.write_text(
        format_feature_table(ids, DescriptorMatrix(feats, "memhash"))
    )
    visible = [i for i in range(n) if i not in heldout]
    labels_path.write_text(
        format_label_table([ids[i] for i in visible],
                           [values[i] for i in visible])
    )
    cfg_path = _write_cfg(
        tmp_path,
        name="deferred.cfg",
        **{
            "dataset.source": "features",
            "dataset.features_path": str(features_path),
            "dataset.labels_path": str(labels_path),
            "synth.pool_size": None,
            "synth.noise_sd": None,
            "oracle.mode": "deferred",
            "pool.n_test": str(n_test),
            "schedule.n_const": "6",
            "schedule.n_init": str(n_init),
            "run.max_train": "14",
        },
    )
    return cfg_path, ids, values


class TestDeferredRunFlow:
    def test_suspend_fill_response_resume(self, tmp_path, capsys):
        cfg_path, ids, values = _deferred_config(tmp_path)
        out = str(tmp_path / "runs")
        code = main(["run", "--config", cfg_path, "--out", out])
        captured = capsys.readouterr()
        assert code == 0  # a suspended run is not a failure
        assert "seed 0: awaiting labels" in captured.out
        assert "labels pending" in captured.out

        run_dir = experiment_run_dir(out, read_config(cfg_path))
        request = os.path.join(run_dir, "label_request.xyz")
        assert os.path.exists(request)
        batch = parse_xyz_blocks(open(request).read())
        assert len(batch) == 6
        with open(os.path.join(run_dir, "label_response.tsv"), "w") as fh:
            fh.write(
                format_label_table(
                    [m.id for m in batch],
                    [float(values[ids.index(m.id)]) for m in batch],
                )
            )
        code = main(["run", "--config", cfg_path, "--out", out, "--resume"])
        captured = capsys.readouterr()
        assert code == 0
        assert "seed 0: complete (train size 14, 1 iterations)" in captured.out
        rows = parse_aggregate_csv(
            open(os.path.join(run_dir, "aggregate.csv")).read()
        )
        assert [r["train_size"] for r in rows] == ["14"]

    def test_resume_with_labels_still_missing_exits_1(self, tmp_path, capsys):
        cfg_path, _, _ = _deferred_config(tmp_path)
        out = str(tmp_path / "runs")
        assert main(["run", "--config", cfg_path, "--out", out]) == 0
        capsys.readouterr()
        code = main(["run", "--config", cfg_path, "--out", out, "--resume"])
        captured = capsys.readouterr()
        assert code == 1
        assert "labels still missing for seed(s) 0" in captured.err
