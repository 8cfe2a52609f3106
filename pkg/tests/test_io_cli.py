import json

import numpy as np
import pytest
from oracles import random_rigid

from raylign import io as rio
from raylign.cli import RunConfig, gradcheck_suite, main
from raylign.geometry import PointCloud, RigidTransform, estimate_normals
from raylign.solvers import SolverConfig


@pytest.fixture
def cloud(rng):
    return estimate_normals(PointCloud(rng.normal(size=(60, 3))))


class TestCloudFiles:
    @pytest.mark.parametrize("name, binary", [("c.xyz", False), ("c.ply", False), ("c.ply", True)])
    def test_round_trip(self, tmp_path, cloud, name, binary):
        rio.write_cloud(tmp_path / name, cloud, binary=binary)
        back = rio.read_cloud(tmp_path / name)
        np.testing.assert_array_equal(back.points, cloud.points)
        np.testing.assert_allclose(back.normals, cloud.normals, atol=1e-15)

    def test_points_only(self, tmp_path, rng):
        c = PointCloud(rng.normal(size=(5, 3)))
        rio.write_cloud(tmp_path / "p.xyz", c)
        back = rio.read_cloud(tmp_path / "p.xyz")
        assert back.normals is None
        np.testing.assert_array_equal(back.points, c.points)

    def test_big_endian_float_ply_with_faces(self, tmp_path):
        pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=">f4")
        header = (
            "ply\nformat binary_big_endian 1.0\ncomment test\nelement vertex 3\n"
            "property float x\nproperty float y\nproperty float z\nproperty uchar red\n"
            "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
        ).encode()
        rows = b"".join(p.tobytes() + bytes([7]) for p in pts)
        face = bytes([3]) + np.array([0, 1, 2], dtype=">i4").tobytes()
        (tmp_path / "m.ply").write_bytes(header + rows + face)
        np.testing.assert_array_equal(rio.read_cloud(tmp_path / "m.ply").points, pts.astype(float))

    @pytest.mark.parametrize("content", ["1 2\n3 4\n", "a b c\n"])
    def test_malformed_xyz(self, tmp_path, content):
        (tmp_path / "bad.xyz").write_text(content)
        with pytest.raises(rio.CloudFormatError):
            rio.read_cloud(tmp_path / "bad.xyz")

    def test_truncated_binary_ply(self, tmp_path, cloud):
        rio.write_cloud(tmp_path / "c.ply", cloud, binary=True)
        data = (tmp_path / "c.ply").read_bytes()
        (tmp_path / "t.ply").write_bytes(data[:-10])
        with pytest.raises(rio.CloudFormatError):
            rio.read_cloud(tmp_path / "t.ply")


class TestTransformFile:
    def test_round_trip(self, tmp_path, rng):
        T = random_rigid(rng)
        rio.write_transform(tmp_path / "t.txt", T)
        np.testing.assert_array_equal(rio.read_transform(tmp_path / "t.txt").matrix(), T.matrix())

    def test_bad_last_row(self, tmp_path):
        m = np.eye(4)
        m[3, 0] = 0.5
        np.savetxt(tmp_path / "t.txt", m)
        with pytest.raises(rio.CloudFormatError):
            rio.read_transform(tmp_path / "t.txt")


def test_csv_round_trip(tmp_path):
    rows = [{"a": 1, "b": 0.1 + 0.2, "c": "x y"}, {"a": -3, "b": 1e-300, "c": "failed: z"}]
    rio.write_csv(tmp_path / "r.csv", rows)
    assert rio.read_csv(tmp_path / "r.csv") == rows


def test_run_config_round_trip():
    cfg = RunConfig(method="cd-w", solver=SolverConfig(nu0=0.25, sampler="box-point-direction"), jobs=3, paths={"out": "x"})
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()


@pytest.fixture(scope="module")
def bench_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    assert main(["genbench", "synthetic:figure:3000", "--count", "2", "--points", "200", "--crop", "half-space", "--out", str(out)]) == 0
    return out


class TestCommands:
    def test_genbench_is_byte_identical(self, bench_dir, tmp_path):
        assert main(["genbench", "synthetic:figure:3000", "--count", "2", "--points", "200", "--crop", "half-space", "--out", str(tmp_path)]) == 0
        for f in ("manifest.json", "pair_0000_source.xyz", "pair_0001_target.xyz"):
            assert (tmp_path / f).read_bytes() == (bench_dir / f).read_bytes()
        manifest = rio.read_json(tmp_path / "manifest.json")
        assert [p["pair_id"] for p in manifest["pairs"]] == ["pair_0000", "pair_0001"]
        assert all({"gt", "seed", "spec", "source", "target"} <= set(p) for p in manifest["pairs"])

    def test_register_self_is_identity(self, tmp_path, figure):
        cloud = figure.subset(np.arange(0, 8192, 16))
        rio.write_cloud(tmp_path / "c.xyz", cloud)
        rc = main(["register", str(tmp_path / "c.xyz"), str(tmp_path / "c.xyz"), "--out", str(tmp_path / "o"), "--iterations", "20", "--lines", "3000"])
        assert rc == 0
        T = rio.read_transform(tmp_path / "o" / "transform.txt")
        np.testing.assert_allclose(T.matrix(), np.eye(4), atol=1e-6)
        cfg = rio.read_json(tmp_path / "o" / "config.json")
        assert cfg["solver"]["max_iterations"] == 20
        assert len(rio.read_csv(tmp_path / "o" / "trace.csv")) >= 1

    def test_register_with_gt_prints_evaluation(self, bench_dir, tmp_path, capsys):
        src = bench_dir / "pair_0000_source.xyz"
        tgt = bench_dir / "pair_0000_target.xyz"
        rc = main(["register", str(src), str(tgt), "--method", "icp", "--out", str(tmp_path), "--gt", str(bench_dir / "manifest.json")])
        assert rc == 0
        printed = capsys.readouterr().out
        from raylign.evaluation import evaluate

        gt = RigidTransform.from_matrix(np.array(rio.read_json(bench_dir / "manifest.json")["pairs"][0]["gt"]))
        rep = evaluate(gt, rio.read_transform(tmp_path / "transform.txt"), rio.read_cloud(src))
        assert f"err_r_deg {rep.err_r_deg:.6f}" in printed

    def test_bench_outputs_and_jobs_determinism(self, bench_dir, tmp_path):
        common = ["--methods", "line-loss,cd", "--iterations", "15", "--lines", "2000", "--nu0", "0.5,1"]
        assert main(["bench", str(bench_dir), "--out", str(tmp_path / "a"), "--jobs", "1", *common]) == 0
        assert main(["bench", str(bench_dir), "--out", str(tmp_path / "b"), "--jobs", "2", *common]) == 0
        a = rio.read_csv(tmp_path / "a" / "pairs.csv")
        b = rio.read_csv(tmp_path / "b" / "pairs.csv")
        assert len(a) == 6
        for ra, rb in zip(a, b):
            ra.pop("seconds"), rb.pop("seconds")
            assert ra == rb
        summary = rio.read_csv(tmp_path / "a" / "summary.csv")
        assert [s["method"] for s in summary] == ["line-loss@nu0=0.5", "line-loss@nu0=1", "cd"]
        recall = rio.read_csv(tmp_path / "a" / "recall_cd.csv")
        assert set(recall[0]) == {"alpha", "recall"}

    def test_lines_debug(self, bench_dir, tmp_path):
        src = str(bench_dir / "pair_0000_source.xyz")
        assert main(["lines-debug", src, src, "--out", str(tmp_path), "--count", "50"]) == 0
        assert len(rio.read_csv(tmp_path / "chords.csv")) == 50

    def test_gradcheck(self, capsys):
        assert main(["gradcheck", "--states", "2"]) == 0
        assert "line-loss" in capsys.readouterr().out

    def test_seed_env_override(self, monkeypatch, tmp_path, bench_dir):
        monkeypatch.setenv("RAYLIGN_SEED", "77")
        src = str(bench_dir / "pair_0000_source.xyz")
        assert main(["register", src, src, "--method", "icp", "--out", str(tmp_path), "--seed", "3"]) == 0
        assert rio.read_json(tmp_path / "config.json")["solver"]["seed"] == 77


class TestExitCodes:
    def test_missing_file(self, tmp_path):
        assert main(["register", str(tmp_path / "no.xyz"), str(tmp_path / "no.xyz"), "--out", str(tmp_path)]) == 2

    def test_empty_method_list(self, bench_dir, tmp_path):
        assert main(["bench", str(bench_dir), "--out", str(tmp_path)]) == 1

    def test_unknown_setting(self, bench_dir, tmp_path):
        src = str(bench_dir / "pair_0000_source.xyz")
        assert main(["register", src, src, "--out", str(tmp_path), "--set", "bogus=1"]) == 1

    def test_no_command(self):
        assert main([]) == 1

    def test_numerical_failure(self, tmp_path):
        rio.write_cloud(tmp_path / "p.xyz", PointCloud(np.ones((5, 3))))
        assert main(["register", str(tmp_path / "p.xyz"), str(tmp_path / "p.xyz"), "--out", str(tmp_path / "o")]) == 3

    def test_infeasible_spec(self, tmp_path):
        rc = main(["genbench", "synthetic:figure:1000", "--count", "1", "--points", "1600", "--crop", "half-space", "--out", str(tmp_path)])
        assert rc == 3


def test_gradcheck_suite_small():
    worst = gradcheck_suite(states=3, seed=1)
    assert worst["cd"] < 1e-5 and worst["line-loss"] < 1e-4
