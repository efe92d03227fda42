import pytest

from hbfuse.harness import PipelineConfig
from hbfuse.synthetic import synth_split


@pytest.fixture(scope="session")
def small_split():
    return synth_split(train_per_class=30, test_per_class=10, seed=1)


@pytest.fixture(scope="session")
def small_config():
    # 16x16 images and narrow nets keep every pipeline to a few seconds
    return PipelineConfig(image_size=16, conv_channels=(4, 8, 8), feature_width=32, epochs=3,
                          batch_size=32, svm_epochs=5, bench_samples=4, bench_reps=1, seed=3)


# criterion number -> "PASS ..." / "FAIL ..." lines filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {num}: {ACCEPTANCE[num]}")
