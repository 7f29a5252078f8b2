"""Feature extraction and the file-format bridge to the captioning package."""

import json

import numpy as np
import pytest

from vidcap.data import Manifest, read_features
from vidextract import (
    ColorStatBackbone,
    ExtractionJob,
    JobError,
    extract_attributes,
    extract_motion,
    extract_temporal,
    get_backbone,
    manifest_entry,
    read_frames,
    register_backbone,
    run_job,
    run_jobs,
    write_feature_file,
    write_manifest,
)
from vidextract.cli import main


def frames_of(n, h=12, w=12, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(n, h, w, 3), dtype=np.uint8)


class TestBackbone:
    def test_dim_and_model_id(self):
        bb = ColorStatBackbone()
        assert bb.dim == 30
        assert bb.model_id == "colorstat2x2-v1"
        assert ColorStatBackbone(cells=3).dim == 60

    def test_constant_frame_statistics(self):
        # uniform gray: every cell mean is 128/255 and every std is 0
        # up to accumulation error in the variance
        bb = ColorStatBackbone()
        vec = bb.transform(np.full((16, 16, 3), 128, dtype=np.uint8))
        expected = np.tile([128 / 255.0] * 3 + [0.0] * 3, 5)
        np.testing.assert_allclose(vec, expected, atol=1e-12)

    def test_values_stay_in_unit_interval(self):
        bb = ColorStatBackbone()
        vec = bb.transform(frames_of(1)[0])
        assert vec.shape == (30,)
        assert np.all(vec >= 0.0) and np.all(vec <= 1.0)

    def test_tiny_frame_still_works(self):
        vec = ColorStatBackbone(cells=4).transform(frames_of(1, h=2, w=2)[0])
        assert vec.shape == (102,)
        assert np.all(np.isfinite(vec))

    def test_bad_frame_shape(self):
        with pytest.raises(JobError, match="frame"):
            ColorStatBackbone().transform(np.zeros((4, 4), dtype=np.uint8))

    def test_bad_cells(self):
        with pytest.raises(JobError):
            ColorStatBackbone(cells=0)

    def test_registry(self):
        assert get_backbone("colorstat").model_id == "colorstat2x2-v1"
        with pytest.raises(JobError, match="unknown"):
            get_backbone("resnet")

    def test_register_custom(self):
        class Flat:
            model_id = "flat-v1"
            dim = 3

            def transform(self, frame):
                return np.asarray(frame, dtype=np.float64).reshape(-1, 3).mean(axis=0)

        register_backbone("flat", Flat)
        assert get_backbone("flat").dim == 3


class TestTemporal:
    def test_one_vector_per_frame(self):
        feats = extract_temporal(frames_of(30), ColorStatBackbone())
        assert feats.shape == (30, 30)

    def test_stride_subsamples(self):
        bb = ColorStatBackbone()
        frames = frames_of(30)
        assert extract_temporal(frames, bb, stride=2).shape[0] == 15
        assert extract_temporal(frames, bb, stride=7).shape[0] == 5
        # stride 2 keeps the even-indexed frames
        np.testing.assert_array_equal(
            extract_temporal(frames, bb, stride=2),
            extract_temporal(frames, bb)[::2],
        )

    def test_stride_validation(self):
        with pytest.raises(JobError, match="stride"):
            extract_temporal(frames_of(4), ColorStatBackbone(), stride=0)

    def test_deterministic(self):
        bb = ColorStatBackbone()
        frames = frames_of(8)
        a = extract_temporal(frames, bb)
        b = extract_temporal(frames, bb)
        np.testing.assert_array_equal(a, b)


class TestMotion:
    def test_window_counts(self):
        bb = ColorStatBackbone()
        assert extract_motion(frames_of(32), bb, window=16).shape == (2, 30)
        assert extract_motion(frames_of(31), bb, window=16).shape == (2, 30)
        assert extract_motion(frames_of(16), bb, window=16).shape == (1, 30)
        assert extract_motion(frames_of(33), bb, window=16).shape == (3, 30)

    def test_short_tail_is_padded_with_last_frame(self):
        # 17 frames: the second window is frame 16 repeated, so its
        # difference image is zero and the descriptor matches a black frame
        bb = ColorStatBackbone()
        vecs = extract_motion(frames_of(17, h=8, w=8), bb, window=16)
        static = bb.transform(np.zeros((8, 8, 3)))
        np.testing.assert_array_equal(vecs[1], static)

    def test_static_video_has_zero_motion(self):
        frames = np.full((20, 8, 8, 3), 77, dtype=np.uint8)
        vecs = extract_motion(frames, ColorStatBackbone(), window=16)
        assert not np.any(vecs)

    def test_window_one_sees_no_differences(self):
        vecs = extract_motion(frames_of(5, h=8, w=8), ColorStatBackbone(), window=1)
        assert vecs.shape[0] == 5
        assert not np.any(vecs)

    def test_window_validation(self):
        with pytest.raises(JobError, match="window"):
            extract_motion(frames_of(4), ColorStatBackbone(), window=0)

    def test_deterministic(self):
        bb = ColorStatBackbone()
        frames = frames_of(20)
        np.testing.assert_array_equal(
            extract_motion(frames, bb), extract_motion(frames, bb)
        )


class TestReadFrames:
    def test_npy_stack(self, sample_videos):
        frames = read_frames(sample_videos["vid_a"])
        assert frames.shape == (30, 20, 24, 3)
        assert frames.dtype == np.uint8

    def test_avi_container(self, sample_videos):
        frames = read_frames(sample_videos["vid_c"])
        assert frames.shape == (32, 20, 24, 3)
        assert frames.dtype == np.uint8
        # codec decode is stable run to run
        np.testing.assert_array_equal(frames, read_frames(sample_videos["vid_c"]))

    def test_missing_file(self, tmp_path):
        with pytest.raises(JobError, match="no such file"):
            read_frames(tmp_path / "absent.npy")

    def test_wrong_rank(self, tmp_path):
        path = tmp_path / "flat.npy"
        np.save(path, np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(JobError, match="shape"):
            read_frames(path)

    def test_wrong_channel_count(self, tmp_path):
        path = tmp_path / "gray.npy"
        np.save(path, np.zeros((4, 4, 4, 1), dtype=np.uint8))
        with pytest.raises(JobError, match="shape"):
            read_frames(path)

    def test_empty_stack(self, tmp_path):
        path = tmp_path / "empty.npy"
        np.save(path, np.zeros((0, 4, 4, 3), dtype=np.uint8))
        with pytest.raises(JobError, match="no frames"):
            read_frames(path)

    def test_corrupt_npy(self, tmp_path):
        path = tmp_path / "junk.npy"
        path.write_bytes(b"not a numpy file")
        with pytest.raises(JobError):
            read_frames(path)

    def test_undecodable_container(self, tmp_path):
        path = tmp_path / "junk.avi"
        path.write_bytes(b"\x00" * 64)
        with pytest.raises(JobError):
            read_frames(path)


class TestJobs:
    def test_job_validation(self, tmp_path):
        with pytest.raises(JobError, match="stride"):
            ExtractionJob("v.npy", "t.feat", "m.feat", stride=0)
        with pytest.raises(JobError, match="window"):
            ExtractionJob("v.npy", "t.feat", "m.feat", window=-1)

    def test_run_job_writes_features_and_sidecars(self, sample_videos, tmp_path):
        job = ExtractionJob(
            video_path=str(sample_videos["vid_a"]),
            temporal_out=str(tmp_path / "a.temporal.feat"),
            motion_out=str(tmp_path / "a.motion.feat"),
        )
        summary = run_job(job)
        assert summary["temporal_count"] == 30
        assert summary["motion_count"] == 2
        meta = json.loads((tmp_path / "a.temporal.feat.meta.json").read_text())
        assert meta["backbone"] == "colorstat2x2-v1"
        assert meta["stride"] == 1
        assert meta["frames"] == 30
        meta = json.loads((tmp_path / "a.motion.feat.meta.json").read_text())
        assert meta["window"] == 16

    def test_parallel_equals_sequential(self, sample_videos, tmp_path):
        def jobs_for(sub):
            out = tmp_path / sub
            return [
                ExtractionJob(
                    video_path=str(path),
                    temporal_out=str(out / f"{vid}.t.feat"),
                    motion_out=str(out / f"{vid}.m.feat"),
                )
                for vid, path in sorted(sample_videos.items())
            ]

        seq = run_jobs(jobs_for("seq"), processes=1)
        par = run_jobs(jobs_for("par"), processes=2)
        assert seq == par
        for vid in sample_videos:
            a = (tmp_path / "seq" / f"{vid}.t.feat").read_bytes()
            b = (tmp_path / "par" / f"{vid}.t.feat").read_bytes()
            assert a == b

    def test_processes_validation(self):
        with pytest.raises(JobError, match="processes"):
            run_jobs([], processes=0)


class TestFormatWriters:
    def test_feature_writer_validation(self, tmp_path):
        path = tmp_path / "x.feat"
        with pytest.raises(JobError):
            write_feature_file(path, np.zeros((0, 4)))
        with pytest.raises(JobError):
            write_feature_file(path, np.zeros(4))
        with pytest.raises(JobError):
            write_feature_file(path, np.array([[np.nan, 1.0]]))

    def test_manifest_entry_validation(self):
        with pytest.raises(JobError, match="split"):
            manifest_entry("v", "t", "m", [], ["a cat"], split="dev")
        with pytest.raises(JobError, match="caption"):
            manifest_entry("v", "t", "m", [], [], split="train")

    def test_manifest_rejects_duplicate_ids(self, tmp_path):
        entry = manifest_entry("v", "t.feat", "m.feat", [], ["a cat sits"], "train")
        with pytest.raises(JobError, match="duplicate"):
            write_manifest(tmp_path / "m.json", [entry, dict(entry)])


class TestPrimaryRoundTrip:
    """The whole point: extraction output must be consumable by the
    captioning package without any conversion step."""

    @pytest.fixture()
    def extracted(self, sample_videos, tmp_path):
        captions = {
            "vid_a": ["a man is playing a guitar", "a man plays the guitar"],
            "vid_b": ["a woman is slicing an onion"],
            "vid_c": ["two dogs play with a ball"],
        }
        splits = {"vid_a": "train", "vid_b": "validation", "vid_c": "test"}
        entries = []
        expected = {}
        for vid, path in sorted(sample_videos.items()):
            job = ExtractionJob(
                video_path=str(path),
                temporal_out=str(tmp_path / f"{vid}.temporal.feat"),
                motion_out=str(tmp_path / f"{vid}.motion.feat"),
            )
            run_job(job)
            bb = ColorStatBackbone()
            frames = read_frames(path)
            expected[vid] = {
                "temporal": extract_temporal(frames, bb),
                "motion": extract_motion(frames, bb),
            }
            entries.append(
                manifest_entry(
                    vid,
                    f"{vid}.temporal.feat",
                    f"{vid}.motion.feat",
                    extract_attributes(captions[vid]),
                    captions[vid],
                    splits[vid],
                )
            )
        manifest_path = tmp_path / "manifest.json"
        write_manifest(manifest_path, entries)
        return tmp_path, manifest_path, expected

    def test_feature_files_read_back_by_primary(self, extracted, announce):
        root, _, expected = extracted
        checked = []
        for vid, arrays in expected.items():
            for kind in ("temporal", "motion"):
                loaded = read_features(root / f"{vid}.{kind}.feat")
                # writer quantizes to little-endian f4; the reader hands
                # back float64 holding exactly those values
                checked.append(
                    loaded.dtype == np.float64
                    and np.array_equal(loaded, arrays[kind].astype("<f4"))
                )
        announce(
            "secondary round-trip",
            all(checked),
            "3 sample videos: feature files load through the captioning reader bit-exact",
        )

    def test_manifest_loads_through_primary(self, extracted):
        root, manifest_path, _ = extracted
        manifest = Manifest.load(manifest_path, check_files=True)
        assert [r.video_id for r in manifest.videos] == ["vid_a", "vid_b", "vid_c"]
        by_id = {r.video_id: r for r in manifest.videos}
        assert by_id["vid_a"].attributes == ["man", "play"]
        assert by_id["vid_b"].split == "validation"
        assert by_id["vid_c"].captions == ["two dogs play with a ball"]


class TestCli:
    def test_features_command(self, sample_videos, tmp_path, capsys):
        out = tmp_path / "feats"
        code = main(
            [
                "features",
                str(sample_videos["vid_a"]),
                str(sample_videos["vid_b"]),
                "--out-dir",
                str(out),
                "--stride",
                "2",
            ]
        )
        assert code == 0
        feats = read_features(out / "vid_a.temporal.feat")
        assert feats.shape == (15, 30)
        assert (out / "vid_b.motion.feat.meta.json").exists()

    def test_attributes_command(self, tmp_path, capsys):
        table = tmp_path / "captions.json"
        table.write_text(
            json.dumps({"v1": ["a man is playing a guitar"], "v2": ["blue sky"]})
        )
        assert main(["attributes", str(table)]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result == {"v1": ["man", "play"], "v2": []}

    def test_attributes_to_file(self, tmp_path):
        table = tmp_path / "captions.json"
        table.write_text(json.dumps({"v1": ["a cat jumps onto the table"]}))
        out = tmp_path / "attrs.json"
        assert main(["attributes", str(table), "--out", str(out)]) == 0
        assert json.loads(out.read_text()) == {"v1": ["cat", "jump"]}

    def test_missing_video_fails(self, tmp_path):
        assert main(["features", str(tmp_path / "nope.npy"), "--out-dir", str(tmp_path)]) == 1

    def test_unknown_backbone_fails_before_io(self, sample_videos, tmp_path):
        code = main(
            [
                "features",
                str(sample_videos["vid_a"]),
                "--out-dir",
                str(tmp_path),
                "--backbone",
                "vgg",
            ]
        )
        assert code == 1
        assert not list(tmp_path.glob("*.feat"))

    def test_bad_caption_table(self, tmp_path):
        table = tmp_path / "captions.json"
        table.write_text("[1, 2, 3]")
        assert main(["attributes", str(table)]) == 1
