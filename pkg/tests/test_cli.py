import json
import math

import numpy as np
import pytest

from segrel import LabelMap, LogitStack
from segrel.cli import main
from segrel.imaging import write_image_png, write_label_png, write_mask_png
from segrel.reports import read_csv, read_json
from segrel.srt import write_array, write_tensor
from segrel.types import BinaryMask


def save(manifest_dict, path):
    path.write_text(json.dumps(manifest_dict, indent=2, sort_keys=True) + "\n")
    return str(path)


def write_gt_and_preds(tmp_path):
    """Two-sample ground truth, a perfect model and the hand fixture model."""
    gt_dir = tmp_path / "gt"
    pred_dir = tmp_path / "pred"
    gt_dir.mkdir()
    pred_dir.mkdir()
    gt_map = np.array([[0, 0], [1, 1]], dtype=np.uint8)
    hand_pred = np.array([[0, 1], [1, 1]], dtype=np.uint8)
    gt_entries = []
    pred_entries = []
    for sid in ("a", "b"):
        write_label_png(LabelMap(gt_map), gt_dir / f"{sid}.png")
        gt_entries.append({
            "sample_id": sid, "image_path": None, "label_path": f"{sid}.png",
            "logits_path": None, "ood_mask_path": None, "domain_tag": "real", "model_id": None,
        })
        write_label_png(LabelMap(gt_map), pred_dir / f"perfect_{sid}.png")
        write_label_png(LabelMap(hand_pred), pred_dir / f"hand_{sid}.png")
        for model, prefix in (("perfect", "perfect"), ("hand", "hand")):
            pred_entries.append({
                "sample_id": sid, "image_path": None, "label_path": f"{prefix}_{sid}.png",
                "logits_path": None, "ood_mask_path": None,
                "domain_tag": "real", "model_id": model,
            })
    gt_manifest = save({"entries": gt_entries, "num_classes": 2, "ignore_id": 255}, gt_dir / "gt.json")
    # one manifest per model keeps sample ids unique; sample_id pairs with
    # the ground truth, model_id drives the grouping
    perfect = [e for e in pred_entries if e["model_id"] == "perfect"]
    hand = [e for e in pred_entries if e["model_id"] == "hand"]
    p1 = save({"entries": perfect, "num_classes": 2, "ignore_id": 255}, pred_dir / "perfect.json")
    p2 = save({"entries": hand, "num_classes": 2, "ignore_id": 255}, pred_dir / "hand.json")
    return gt_manifest, [p1, p2]


class TestBench:
    def test_perfect_and_hand_fixture(self, tmp_path):
        gt, preds = write_gt_and_preds(tmp_path)
        out = tmp_path / "out"
        rc = main(["bench", "--gt", gt, "--pred", preds[0], "--pred", preds[1], "--out", str(out)])
        assert rc == 0
        header, rows = read_csv(out / "bench.csv")
        assert header == ["model_id", "domain_tag", "metric", "value"]
        values = {(r[0], r[2]): r[3] for r in rows}
        assert float(values[("perfect", "mIoU")]) == 1.0
        assert float(values[("hand", "mIoU")]) == pytest.approx(7 / 12, abs=1e-12)

    def test_empty_manifest_exits_2(self, tmp_path):
        gt = save({"entries": [], "num_classes": 2, "ignore_id": 255}, tmp_path / "gt.json")
        rc = main(["bench", "--gt", gt, "--pred", gt, "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_missing_file_exits_2(self, tmp_path):
        gt = save(
            {"entries": [{"sample_id": "a", "label_path": "nope.png", "domain_tag": "d"}],
             "num_classes": 2},
            tmp_path / "gt.json",
        )
        rc = main(["bench", "--gt", gt, "--pred", gt, "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_missing_manifest_path_exits_2(self, tmp_path, capsys):
        rc = main(["bench", "--gt", str(tmp_path / "ghost.json"),
                   "--pred", str(tmp_path / "ghost.json"), "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "does not exist" in capsys.readouterr().err

    def test_negative_seed_exits_2(self, tmp_path):
        manifest = _inpaint_fixture(tmp_path, n=1)
        rc = main(["plan-inpaint", "--manifest", manifest, "--seed", "-1",
                   "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_report_determinism(self, tmp_path):
        gt, preds = write_gt_and_preds(tmp_path)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        for out in (out1, out2):
            assert main(["bench", "--gt", gt, "--pred", preds[1], "--out", str(out)]) == 0
        assert (out1 / "bench.csv").read_bytes() == (out2 / "bench.csv").read_bytes()


class TestCalibrate:
    def test_recovers_planted_temperature(self, tmp_path, np_rng):
        from conftest import calibrated_pixels

        data_dir = tmp_path / "data"
        data_dir.mkdir()
        entries = []
        for i in range(2):
            logits, labels = calibrated_pixels(np_rng, 40_000, 3, scale=3.0)
            write_tensor(logits, data_dir / f"s{i}.srt")
            write_label_png(labels, data_dir / f"s{i}.png")
            entries.append({
                "sample_id": f"s{i}", "label_path": f"s{i}.png", "logits_path": f"s{i}.srt",
                "domain_tag": "syn:night", "model_id": "m0",
            })
        manifest = save({"entries": entries, "num_classes": 3, "ignore_id": 255}, data_dir / "m.json")
        out = tmp_path / "out"
        rc = main(["calibrate", "--manifest", manifest, "--out", str(out)])
        assert rc == 0
        (record,) = read_json(out / "calibrate.json")
        assert record["model_id"] == "m0"
        assert record["mode"] == "scalar"
        assert record["temperatures"][0] == pytest.approx(3.0, rel=0.05)
        assert record["ece_after"] <= record["ece_before"] + 1e-9
        out2 = tmp_path / "out_pc"
        rc = main(["calibrate", "--manifest", manifest, "--mode", "per_class", "--out", str(out2)])
        assert rc == 0
        (record,) = read_json(out2 / "calibrate.json")
        assert record["mode"] == "per_class"
        assert len(record["temperatures"]) == 3


class TestOodEval:
    def _fixture(self, tmp_path):
        data_dir = tmp_path / "ood"
        data_dir.mkdir()
        entries = []
        for i in range(2):
            n = 64
            logits = np.zeros((1, n, 2), dtype=np.float32)
            ood = np.zeros((1, n), dtype=bool)
            ood[0, : n // 4] = True
            logits[0, :, 0] = np.where(ood[0], 0.05, 6.0)  # OOD pixels near-uniform
            write_tensor(LogitStack(logits), data_dir / f"s{i}.srt")
            write_mask_png(BinaryMask(ood), data_dir / f"s{i}.png")
            entries.append({
                "sample_id": f"s{i}", "logits_path": f"s{i}.srt", "ood_mask_path": f"s{i}.png",
                "domain_tag": "inpaint:zebra", "model_id": "m0",
            })
        return save({"entries": entries, "num_classes": 2, "ignore_id": 255}, data_dir / "m.json")

    def test_perfect_separation(self, tmp_path):
        manifest = self._fixture(tmp_path)
        out = tmp_path / "out"
        rc = main(["ood-eval", "--manifest", manifest, "--score-fn", "entropy", "--out", str(out)])
        assert rc == 0
        (record,) = read_json(out / "ood_eval.json")
        assert record["auroc"] == 1.0
        assert record["fpr95"] == 0.0
        assert record["aupr_in"] == 1.0
        assert record["aupr_out"] == 1.0
        assert record["n_samples"] == 2

    def test_maxlogit_score_fn(self, tmp_path):
        manifest = self._fixture(tmp_path)
        out = tmp_path / "out2"
        rc = main(["ood-eval", "--manifest", manifest, "--score-fn", "maxlogit", "--out", str(out)])
        assert rc == 0
        (record,) = read_json(out / "ood_eval.json")
        assert record["score_fn"] == "maxlogit"
        assert record["auroc"] == 1.0


class TestCorrelate:
    def test_identity_vectors(self, tmp_path):
        rows = []
        for i in range(6):
            v = 0.3 + 0.1 * i
            rows.append(("m%d" % i, "syn:night", "mIoU", repr(v)))
            rows.append(("m%d" % i, "acdc:night", "mIoU", repr(v)))
        csv = tmp_path / "bench.csv"
        csv.write_text(
            "model_id,domain_tag,metric,value\n"
            + "\n".join(",".join(r) for r in rows)
            + "\n"
        )
        out = tmp_path / "out"
        rc = main([
            "correlate", "--metrics", str(csv),
            "--x", "syn:night", "--y", "acdc:night", "--out", str(out),
        ])
        assert rc == 0
        report = read_json(out / "correlate.json")
        assert report["pcc"] == pytest.approx(1.0)
        assert report["fit"]["slope"] == pytest.approx(1.0)
        header, scatter = read_csv(out / "correlate_scatter.csv")
        assert header == ["model_id", "x", "y"]
        assert len(scatter) == 6

    def test_per_class_metric(self, tmp_path):
        # class-wise correlation: pick a single class column out of bench CSVs
        rng = np.random.default_rng(3)
        rows = []
        for i in range(5):
            road = 0.5 + 0.08 * i
            rows.append((f"m{i}", "syn:fog", "road", repr(road)))
            rows.append((f"m{i}", "acdc:fog", "road", repr(road + 0.01 * rng.standard_normal())))
            rows.append((f"m{i}", "syn:fog", "mIoU", repr(0.9)))
            rows.append((f"m{i}", "acdc:fog", "mIoU", repr(0.9)))
        csv = tmp_path / "bench.csv"
        csv.write_text(
            "model_id,domain_tag,metric,value\n" + "\n".join(",".join(r) for r in rows) + "\n"
        )
        out = tmp_path / "out"
        rc = main([
            "correlate", "--metrics", str(csv), "--metric", "road",
            "--x", "syn:fog", "--y", "acdc:fog", "--out", str(out),
        ])
        assert rc == 0
        report = read_json(out / "correlate.json")
        assert report["metric"] == "road"
        assert report["pcc"] > 0.9


class TestFid:
    def test_closed_form(self, tmp_path):
        a = np.array([[-math.sqrt(0.5)], [math.sqrt(0.5)]])
        b = a + 1.0
        write_array(a, tmp_path / "a.srt")
        write_array(b, tmp_path / "b.srt")
        out = tmp_path / "out"
        rc = main(["fid", "--a", str(tmp_path / "a.srt"), "--b", str(tmp_path / "b.srt"), "--out", str(out)])
        assert rc == 0
        report = read_json(out / "fid.json")
        assert report["frechet_distance"] == pytest.approx(1.0, abs=1e-9)
        assert report["n_a"] == 2 and report["dim"] == 1


def _inpaint_fixture(tmp_path, n=3, w=256, h=128):
    data_dir = tmp_path / "imgs"
    data_dir.mkdir()
    rng = np.random.default_rng(5)
    entries = []
    for i in range(n):
        sid = f"s{i:03d}"
        write_image_png(rng.integers(0, 128, size=(h, w, 3)).astype(np.uint8), data_dir / f"{sid}.png")
        entries.append({"sample_id": sid, "image_path": f"{sid}.png", "domain_tag": "cityscapes"})
    return save({"entries": entries, "num_classes": 2, "ignore_id": 255}, data_dir / "m.json")


class TestPlanAndRun:
    def test_plan_inpaint_byte_identical(self, tmp_path):
        manifest = _inpaint_fixture(tmp_path)
        o1, o2 = tmp_path / "p1", tmp_path / "p2"
        assert main(["plan-inpaint", "--manifest", manifest, "--seed", "7", "--out", str(o1)]) == 0
        assert main(["plan-inpaint", "--manifest", manifest, "--seed", "7", "--out", str(o2)]) == 0
        assert (o1 / "inpaint_plans.json").read_bytes() == (o2 / "inpaint_plans.json").read_bytes()

    def test_plan_shift_byte_identical(self, tmp_path):
        data_dir = tmp_path / "lbls"
        data_dir.mkdir()
        entries = []
        for i in range(2):
            sid = f"s{i:03d}"
            write_label_png(LabelMap((np.arange(64 * 128).reshape(64, 128) % 3).astype(np.uint8)), data_dir / f"{sid}.png")
            entries.append({"sample_id": sid, "label_path": f"{sid}.png", "domain_tag": "cityscapes"})
        manifest = save({"entries": entries, "num_classes": 3, "ignore_id": 255}, data_dir / "m.json")
        caps = tmp_path / "caps.json"
        caps.write_text(json.dumps({"s000": "a road", "s001": "a street"}))
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            rc = main([
                "plan-shift", "--manifest", manifest, "--domain", "night", "--seed", "9",
                "--captions", str(caps), "--out", str(out),
            ])
            assert rc == 0
            outs.append((out / "shift_plans.json").read_bytes())
        assert outs[0] == outs[1]
        doc = json.loads(outs[0])
        assert doc["plans"][0]["prompt"] == "a road, in night"

    def test_run_inpaint_with_mock(self, tmp_path):
        manifest = _inpaint_fixture(tmp_path)
        plan_out = tmp_path / "plans"
        assert main(["plan-inpaint", "--manifest", manifest, "--seed", "3", "--out", str(plan_out)]) == 0
        run_out = tmp_path / "run"
        rc = main([
            "run-inpaint", "--plans", str(plan_out / "inpaint_plans.json"),
            "--service", "mock", "--out", str(run_out),
        ])
        assert rc == 0
        generated = read_json(run_out / "generated_manifest.json")
        assert len(generated["entries"]) == 3
        assert read_json(run_out / "rejections.json") == []
        for entry in generated["entries"]:
            assert (run_out / entry["image_path"]).is_file()
            assert (run_out / entry["ood_mask_path"]).is_file()
            assert entry["domain_tag"].startswith("inpaint:")

    def test_unreachable_service_exits_3(self, tmp_path, monkeypatch):
        import segrel.service as service_mod

        monkeypatch.setattr(service_mod, "DEFAULT_BACKOFF", (0.01,))
        manifest = _inpaint_fixture(tmp_path, n=2)
        plan_out = tmp_path / "plans"
        assert main(["plan-inpaint", "--manifest", manifest, "--seed", "3", "--out", str(plan_out)]) == 0
        run_out = tmp_path / "run"
        rc = main([
            "run-inpaint", "--plans", str(plan_out / "inpaint_plans.json"),
            "--service", "http://127.0.0.1:9", "--out", str(run_out),
        ])
        assert rc == 3
        rejections = read_json(run_out / "rejections.json")
        assert [r["sample_id"] for r in rejections] == ["s000", "s001"]
        assert read_json(run_out / "generated_manifest.json")["entries"] == []

    def test_env_var_overrides_service(self, tmp_path, monkeypatch):
        from segrel.service import MockServiceServer

        manifest = _inpaint_fixture(tmp_path, n=1)
        plan_out = tmp_path / "plans"
        assert main(["plan-inpaint", "--manifest", manifest, "--seed", "3", "--out", str(plan_out)]) == 0
        with MockServiceServer() as server:
            monkeypatch.setenv("SEGREL_SERVICE_URL", server.url)
            run_out = tmp_path / "run"
            rc = main([
                "run-inpaint", "--plans", str(plan_out / "inpaint_plans.json"),
                "--service", "mock", "--out", str(run_out),
            ])
        assert rc == 0
        assert len(read_json(run_out / "generated_manifest.json")["entries"]) == 1


class TestSubsampleStudyCli:
    def test_full_population_zero_std(self, tmp_path, np_rng):
        gt_dir = tmp_path / "gt"
        gt_dir.mkdir()
        n_imgs, h, w, C = 6, 16, 16, 3
        gt_maps = [
            LabelMap(np_rng.integers(0, C, size=(h, w)).astype(np.uint8)) for _ in range(n_imgs)
        ]
        gt_entries = []
        for i, m in enumerate(gt_maps):
            write_label_png(m, gt_dir / f"s{i}.png")
            gt_entries.append({"sample_id": f"s{i}", "label_path": f"s{i}.png", "domain_tag": "syn"})
        gt = save({"entries": gt_entries, "num_classes": C, "ignore_id": 255}, gt_dir / "gt.json")
        pred_entries = []
        ref_rows = []
        for mi, flip in enumerate((0.0, 0.2, 0.5)):
            model = f"m{mi}"
            for i, m in enumerate(gt_maps):
                pred = m.data.copy()
                mask = np_rng.random((h, w)) < flip
                pred[mask] = (pred[mask] + 1) % C
                write_label_png(LabelMap(pred), gt_dir / f"{model}_s{i}.png")
                pred_entries.append({
                    "sample_id": f"s{i}", "label_path": f"{model}_s{i}.png",
                    "domain_tag": "syn", "model_id": model,
                })
            ref_rows.append((model, "real", "mIoU", repr(1.0 - flip * 0.8)))
        preds = []
        for mi in range(3):
            model = f"m{mi}"
            entries = [e for e in pred_entries if e["model_id"] == model]
            preds.append(save({"entries": entries, "num_classes": C, "ignore_id": 255}, gt_dir / f"{model}.json"))
        ref = tmp_path / "ref.csv"
        ref.write_text("model_id,domain_tag,metric,value\n" + "\n".join(",".join(r) for r in ref_rows) + "\n")
        out = tmp_path / "out"
        args = ["subsample-study", "--gt", gt, "--reference", str(ref), "--reference-domain", "real",
                "--n-grid", "2,6", "--repeats", "5", "--seed", "3", "--out", str(out)]
        for p in preds:
            args.extend(["--pred", p])
        assert main(args) == 0
        header, rows = read_csv(out / "subsample_study.csv")
        assert header == ["n", "pcc_mean", "pcc_std"]
        by_n = {int(r[0]): (float(r[1]), float(r[2])) for r in rows}
        assert by_n[6][1] == 0.0  # full population
        out2 = tmp_path / "out2"
        args2 = [a if a != str(out) else str(out2) for a in args]
        assert main(args2) == 0
        assert (out / "subsample_study.csv").read_bytes() == (out2 / "subsample_study.csv").read_bytes()
