import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from voxcluster.cnn import REDUCED_ARCH, CnnModel, TrainConfig, sgd_train  # noqa: E402
from voxcluster.dataset import build_snippets  # noqa: E402
from voxcluster.synth import synth_speaker_corpus  # noqa: E402

CORPUS_SEED = 7


class TrainedCorpus:
    """8 synthetic speakers x 20 clips x 4 s, reduced CNN trained for 30 epochs."""

    def __init__(self):
        t0 = time.perf_counter()
        manifest, clips = synth_speaker_corpus(8, 20, 4.0, CORPUS_SEED)
        self.manifest = manifest
        labels = [e.speaker for e in manifest.entries]
        splits = [e.split for e in manifest.entries]
        tr = [i for i, s in enumerate(splits) if s == "train"]
        va = [i for i, s in enumerate(splits) if s == "validation"]
        self.train = build_snippets([clips[i] for i in tr], [labels[i] for i in tr])
        self.val = build_snippets([clips[i] for i in va], [labels[i] for i in va])
        self.model = CnnModel(REDUCED_ARCH, seed=42)
        self.history = sgd_train(self.model, self.train.x, self.train.y, TrainConfig(epochs=30, seed=42),
                                 val=(self.val.x, self.val.y))
        self.seconds = time.perf_counter() - t0
        self.seed = CORPUS_SEED


@pytest.fixture(scope="session")
def trained():
    return TrainedCorpus()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance report

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


def pytest_runtest_logreport(report):
    marker = dict(report.user_properties).get("criterion")
    if marker is None:
        return
    number, title = marker
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = dict(report.user_properties).get("detail", "")
        _CRITERIA[number] = (title, "PASS" if report.passed else "FAIL", detail)


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        item.user_properties.append(("criterion", tuple(marker.args)))


@pytest.fixture
def detail(request):
    """Attach a human-readable measurement to the acceptance line of the current test."""
    def record(text):
        request.node.user_properties[:] = [p for p in request.node.user_properties if p[0] != "detail"]
        request.node.user_properties.append(("detail", text))
        print(text)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, text = _CRITERIA[number]
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {title}" + (f" -- {text}" if text else ""))
