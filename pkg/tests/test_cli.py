import json

from click.testing import CliRunner

from needlesim.cli import main

SLAB = "AIR:4,SKIN:2,FAT_SOFT:10,LIVER:8,HEP_BILE:2.5,LIVER:5"


def run(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


class TestCli:
    def test_pipeline_end_to_end(self, tmp_path):
        out = tmp_path / "work"
        r = run(["phantom", "--out", str(out), "--name", "mini", "--slab", SLAB])
        assert r.exit_code == 0, r.output
        header = json.loads(r.output)["header_path"]

        paths_file = str(out / "paths.jsonl")
        r = run(["plan", "--volume", header, "--out", paths_file, "--q-min", "0.0"])
        assert r.exit_code == 0, r.output
        assert json.loads(r.output)["n_paths"] > 0

        r = run(["steer", "--volume", header, "--paths", paths_file,
                 "--index", "0", "--provider", "full",
                 "--out-prefix", str(out / "ref")])
        assert r.exit_code == 0, r.output
        n = json.loads(r.output)["n_samples"]
        assert n > 50

        r = run(["compare", "--ref", str(out / "ref.npz"),
                 "--test", str(out / "ref.npz")])
        assert r.exit_code == 0
        body = json.loads(r.output)
        assert body["pct_identical"] == 100.0

        study_dir = out / "study"
        r = run(["study", "--volume", header, "--out", str(study_dir),
                 "--paths", paths_file, "--provider", "full", "--max-paths", "3"])
        assert r.exit_code == 0, r.output
        body = json.loads(r.output)
        assert body["summary"]["rmse_n"]["mean"] == 0.0
        assert (study_dir / "metrics.csv").exists()
        assert (study_dir / "summary.json").exists()
        assert (study_dir / "quantiles.csv").exists()

        rep_dir = out / "report"
        r = run(["report", "--metrics", str(study_dir / "metrics.csv"),
                 "--out", str(rep_dir)])
        assert r.exit_code == 0
        assert (rep_dir / "box_mae_n.svg").exists()

    def test_error_is_machine_readable_on_stderr(self, tmp_path):
        out = tmp_path / "w"
        r = run(["phantom", "--out", str(out), "--name", "mini", "--slab", SLAB])
        header = json.loads(r.output)["header_path"]
        # no bone class in the slab: fit must fail cleanly
        r = run(["fit", "--volume", header])
        assert r.exit_code == 1
        err = json.loads(r.stderr)
        assert err["error"] == "DegenerateClass"

    def test_reproducible_outputs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            r = run(["phantom", "--out", str(out), "--name", "p", "--slab", SLAB])
            assert r.exit_code == 0
        assert (a / "p.hu.raw").read_bytes() == (b / "p.hu.raw").read_bytes()
        assert (a / "p.lbl.raw").read_bytes() == (b / "p.lbl.raw").read_bytes()
