import numpy as np
import pytest


@pytest.fixture
def announce(capsys):
    def check(name: str, ok: bool, detail: str = ""):
        tail = f" | {detail}" if detail else ""
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}{tail}")
        assert ok, f"{name}{tail}"

    return check


@pytest.fixture(scope="session")
def sample_videos(tmp_path_factory):
    """Three inputs covering both frame sources: two .npy stacks with
    different geometry and one real MJPG container."""
    import cv2

    root = tmp_path_factory.mktemp("videos")
    rng = np.random.default_rng(42)

    stack_a = rng.integers(0, 256, size=(30, 20, 24, 3), dtype=np.uint8)
    np.save(root / "vid_a.npy", stack_a)

    stack_b = rng.integers(0, 256, size=(31, 16, 16, 3), dtype=np.uint8)
    np.save(root / "vid_b.npy", stack_b)

    avi = root / "vid_c.avi"
    writer = cv2.VideoWriter(str(avi), cv2.VideoWriter_fourcc(*"MJPG"), 10.0, (24, 20))
    assert writer.isOpened()
    for _ in range(32):
        writer.write(rng.integers(0, 256, size=(20, 24, 3), dtype=np.uint8))
    writer.release()

    return {
        "vid_a": root / "vid_a.npy",
        "vid_b": root / "vid_b.npy",
        "vid_c": avi,
    }
