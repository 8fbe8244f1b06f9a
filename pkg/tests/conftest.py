import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import synth  # noqa: E402

_CRITERIA: dict[str, list[bool]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _CRITERIA.setdefault(marker.args[0], []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, results in _CRITERIA.items():
        verdict = "PASS" if results and all(results) else "FAIL"
        terminalreporter.write_line(f"ACCEPTANCE {verdict} {name}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- HD corpus


@pytest.fixture(scope="session")
def hd_corpus(tmp_path_factory):
    return synth.write_corpus(tmp_path_factory.mktemp("hd") / "frames")


@pytest.fixture(scope="session")
def hd_threshold(tmp_path_factory):
    """h_b at the midpoint between sharp and blurred FM on a separate calibration set."""
    from nerfprep.blur import sharpness_fm
    from nerfprep.frames import to_gray

    rng = np.random.default_rng(99)
    sharp, blurred = [], []
    for _ in range(8):
        rgb = synth.scene(rng)
        sharp.append(sharpness_fm(to_gray(synth.stored(rgb))))
        blurred.append(sharpness_fm(to_gray(synth.stored(synth.to_u8(synth.gaussian_blur(rgb, 3.0))))))
    assert max(blurred) < min(sharp)
    return (max(blurred) + min(sharp)) / 2.0


@pytest.fixture(scope="session")
def hd_run(hd_corpus, hd_threshold, tmp_path_factory):
    """One single-threaded pipeline run over the HD corpus: (manifest, seconds, config)."""
    from nerfprep.config import PipelineConfig
    from nerfprep.pipeline import run_pipeline

    config = PipelineConfig(
        input_root=hd_corpus.root,
        output_root=tmp_path_factory.mktemp("hd_out"),
        k=1,
        h_b=hd_threshold,
        h_s=10,
        pose_cmd=synth.stub_command(),
        workers=1,
    )
    t0 = time.perf_counter()
    manifest = run_pipeline(config)
    return manifest, time.perf_counter() - t0, config
