import json
import re
import shutil

import pytest

from gnnsoup.checkpoint import load_ingredient
from gnnsoup.cli import RunConfig, main
from gnnsoup.graph import load_dataset


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def sbm_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "sbm"
    assert main(["prepare", "--sbm", "n=200", "k=4", "p_in=0.08", "p_out=0.01", "--seed", "3", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def run_dir(sbm_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = {
        "dataset": str(sbm_dir),
        "out": str(out),
        "ingredient_count": 4,
        "gpu_count": 2,
        "arch": {"kind": "gcn", "num_layers": 2, "hidden_dim": 16},
        "base_hyper": {"epochs": 10},
    }
    path = out / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["pipeline", "--config", str(path)]) == 0
    return out


def _accs(text):
    m = re.search(r"val=([0-9.]+) test=([0-9.]+)", text)
    return float(m.group(1)), float(m.group(2))


class TestPrepare:
    def test_sbm_deterministic(self, sbm_dir, tmp_path, capsys):
        code, out, _ = _run(capsys, "prepare", "--sbm", "n=200", "k=4", "p_in=0.08", "p_out=0.01", "--seed", 3, "--out", tmp_path / "again")
        assert code == 0 and "N=200" in out
        for name in ("edges.tsv", "features.bin", "labels.tsv", "splits.json", "meta.json"):
            assert (tmp_path / "again" / name).read_bytes() == (sbm_dir / name).read_bytes()

    def test_missing_features(self, tmp_path, capsys):
        (tmp_path / "e.tsv").write_text("0 1\n")
        (tmp_path / "y.txt").write_text("0\n1\n")
        code, _, err = _run(capsys, "prepare", "--edges", tmp_path / "e.tsv", "--features", tmp_path / "nope.txt", "--labels", tmp_path / "y.txt", "--out", tmp_path / "o")
        assert code == 1 and "missing file" in err

    def test_raw_files_and_bad_line(self, tmp_path, capsys):
        n = 20
        (tmp_path / "x.txt").write_text("\n".join(" ".join(["1", str(i % 2)]) for i in range(n)))
        (tmp_path / "y.txt").write_text("\n".join(str(i % 2) for i in range(n)))
        (tmp_path / "e.tsv").write_text("".join(f"{i}\t{i + 1}\n" for i in range(n - 1)))
        code, out, _ = _run(capsys, "prepare", "--edges", tmp_path / "e.tsv", "--features", tmp_path / "x.txt", "--labels", tmp_path / "y.txt", "--out", tmp_path / "d")
        assert code == 0
        ds = load_dataset(tmp_path / "d")
        assert ds.num_nodes == n and ds.num_classes == 2 and ds.graph.num_edges == n - 1
        # default split: 60/20/20 per class
        assert ds.splits.train.size == 12 and ds.splits.val.size == 4 and ds.splits.test.size == 4
        (tmp_path / "e.tsv").write_text("0 1\n1 x\n")
        code, _, err = _run(capsys, "prepare", "--edges", tmp_path / "e.tsv", "--features", tmp_path / "x.txt", "--labels", tmp_path / "y.txt", "--out", tmp_path / "d2")
        assert code == 1 and "e.tsv:2" in err

    def test_cora_linqs(self, tmp_path, capsys):
        rows = [f"p{i} {i % 2} {1 - i % 2} {'AB'[i % 2]}" for i in range(20)]
        (tmp_path / "cora.content").write_text("\n".join(rows) + "\n")
        (tmp_path / "cora.cites").write_text("".join(f"p{i} p{(i + 2) % 20}\n" for i in range(20)))
        code, out, _ = _run(capsys, "prepare", "--cora", tmp_path, "--out", tmp_path / "c")
        assert code == 0 and "N=20" in out and "classes=2" in out and "E=20" in out
        (tmp_path / "cora.cites").write_text("p1 p99\n")
        code, _, err = _run(capsys, "prepare", "--cora", tmp_path, "--out", tmp_path / "c2")
        assert code == 1 and "cora.cites:1: unknown paper id" in err


class TestPartitionCmd:
    def test_writes_partition(self, sbm_dir, tmp_path, capsys):
        code, out, _ = _run(capsys, "partition", "--dataset", sbm_dir, "--k", 4, "--out", tmp_path / "p")
        assert code == 0 and "k=4" in out
        header = json.loads((tmp_path / "p" / "header.json").read_text())
        assert header["num_nodes"] == 200 and header["num_clusters"] == 4

    def test_k_too_large(self, sbm_dir, tmp_path, capsys):
        code, _, err = _run(capsys, "partition", "--dataset", sbm_dir, "--k", 500, "--out", tmp_path / "p")
        assert code == 1 and "k must lie" in err


class TestPipelineCmd:
    def test_outputs(self, run_dir):
        for name in ("report.json", "report.txt", "ingredients.csv", "soup.ckpt/lineage.json", "ingredient_3.ckpt/params.bin"):
            assert (run_dir / name).exists()
        rep = json.loads((run_dir / "report.json").read_text())
        assert rep["soup_val"] >= rep["best_single"]["val_acc"]

    def test_eval_matches_report(self, run_dir, sbm_dir, capsys):
        rep = json.loads((run_dir / "report.json").read_text())
        code, out, _ = _run(capsys, "eval", "--dataset", sbm_dir, run_dir / "soup.ckpt")
        assert code == 0
        assert _accs(out) == (pytest.approx(rep["soup_val"], abs=5e-7), pytest.approx(rep["soup_test"], abs=5e-7))

    def test_eval_ingredient_reproduces_val(self, run_dir, sbm_dir, capsys):
        ing = load_ingredient(run_dir / "ingredient_2.ckpt")
        _, out, _ = _run(capsys, "eval", "--dataset", sbm_dir, run_dir / "ingredient_2.ckpt")
        assert _accs(out)[0] == pytest.approx(ing.val_acc, abs=5e-7)

    def test_node_sample_stats(self, sbm_dir, tmp_path, capsys):
        code, out, _ = _run(
            capsys, "pipeline", "--dataset", sbm_dir, "--out", tmp_path, "--mode", "node-sample", "--ingredient-count", 2
        )
        assert code == 0 and "sampler: " in out
        assert json.loads((tmp_path / "report.json").read_text())["sampler_stats"]["batches"] > 0

    def test_comm_interval_row(self, sbm_dir, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"base_hyper": {"epochs": 10}, "arch": {"kind": "gcn", "num_layers": 2, "hidden_dim": 8}}))
        code, out, _ = _run(
            capsys, "pipeline", "--config", tmp_path / "c.json", "--dataset", sbm_dir, "--out", tmp_path / "r",
            "--ingredient-count", 3, "--comm-interval", 5,
        )
        assert code == 0 and "comm every 5 ep" in out and "delta test" in out

    def test_saved_partition_used(self, sbm_dir, tmp_path, capsys):
        assert _run(capsys, "partition", "--dataset", sbm_dir, "--k", 6, "--out", tmp_path / "p")[0] == 0
        code, out, _ = _run(
            capsys, "pipeline", "--dataset", sbm_dir, "--out", tmp_path / "r", "--mode", "partition",
            "--ingredient-count", 2, "--partition", tmp_path / "p",
        )
        assert code == 0
        assert json.loads((tmp_path / "r" / "report.json").read_text())["sampler_stats"]["num_clusters"] == 6

    def test_report_rerun_identical(self, run_dir, tmp_path):
        cfg = json.loads((run_dir / "cfg.json").read_text())
        cfg["out"] = str(tmp_path)
        (tmp_path / "cfg.json").write_text(json.dumps(cfg))
        assert main(["pipeline", "--config", str(tmp_path / "cfg.json")]) == 0
        a = json.loads((run_dir / "report.json").read_text())
        b = json.loads((tmp_path / "report.json").read_text())
        a.pop("timing"), b.pop("timing")
        assert a == b

    def test_unknown_config_key(self, sbm_dir, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"dataset": str(sbm_dir), "learning_rate": 0.1}))
        code, _, err = _run(capsys, "pipeline", "--config", tmp_path / "c.json")
        assert code == 1 and "unknown config keys" in err

    def test_config_overrides_flags(self):
        cfg = RunConfig.from_dict({"mode": "edge-sample"}, RunConfig(mode="partition", ingredient_count=3))
        assert cfg.mode == "edge-sample" and cfg.ingredient_count == 3


class TestCheckpointCmds:
    def test_corrupted(self, run_dir, sbm_dir, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        shutil.copytree(run_dir / "ingredient_0.ckpt", bad)
        raw = (bad / "params.bin").read_bytes()
        (bad / "params.bin").write_bytes(raw[: len(raw) // 2])
        code, _, err = _run(capsys, "eval", "--dataset", sbm_dir, bad)
        assert code == 1 and "corrupt checkpoint" in err

    def test_dim_mismatch(self, run_dir, tmp_path, capsys):
        other = tmp_path / "other"
        assert main(["prepare", "--sbm", "n=60", "k=3", "--out", str(other)]) == 0
        code, _, err = _run(capsys, "eval", "--dataset", other, run_dir / "soup.ckpt")
        assert code == 1 and "do not match" in err

    def test_soup_over_checkpoints(self, run_dir, sbm_dir, tmp_path, capsys):
        ckpts = [run_dir / f"ingredient_{i}.ckpt" for i in range(4)]
        code, out, _ = _run(capsys, "soup", "--dataset", sbm_dir, "--out", tmp_path / "s.ckpt", *ckpts)
        assert code == 0
        val = float(re.search(r"val=([0-9.]+)", out).group(1))
        assert val >= max(load_ingredient(c).val_acc for c in ckpts) - 5e-5
        assert isinstance(json.loads((tmp_path / "s.ckpt" / "lineage.json").read_text()), list)

    def test_ensemble(self, run_dir, sbm_dir, capsys):
        ckpts = [run_dir / f"ingredient_{i}.ckpt" for i in range(4)]
        code, out, _ = _run(capsys, "ensemble", "--dataset", sbm_dir, *ckpts)
        assert code == 0 and "ensemble of 4" in out
        rep = json.loads((run_dir / "report.json").read_text())
        assert _accs(out) == (pytest.approx(rep["ensemble_val"], abs=5e-7), pytest.approx(rep["ensemble_test"], abs=5e-7))

    def test_single_copy_ensemble_equals_eval(self, run_dir, sbm_dir, capsys):
        ck = run_dir / "ingredient_1.ckpt"
        _, ens, _ = _run(capsys, "ensemble", "--dataset", sbm_dir, ck, ck, ck)
        _, ev, _ = _run(capsys, "eval", "--dataset", sbm_dir, ck)
        assert _accs(ens) == _accs(ev)


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for cmd in ("prepare", "partition", "pipeline", "soup", "eval", "ensemble"):
        assert cmd in out
