import pytest

from cien_marl.config import RunConfig, from_dict


def tiny_dict(mode="cien_sac", **kw):
    """Small-network, short-horizon config for fast end-to-end runs."""
    d = {
        "mode": mode,
        "env": {"horizon": 20},
        "hyper": {"batch_size": 8},
        "episodes": 3,
        "seeds": [0],
        "warmup_steps": 10,
        "eval_episodes": 1,
        "hidden": [8, 8],
        "cien_hidden": [8, 8],
        "output_dir": None,
    }
    d.update(kw)
    return d


@pytest.fixture
def tiny_config():
    def make(mode="cien_sac", **kw) -> RunConfig:
        return from_dict(tiny_dict(mode, **kw))

    return make


_VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """Record the pass/fail line of an acceptance criterion."""

    def record(k: int, ok: bool, detail: str):
        _VERDICTS[k] = (bool(ok), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_VERDICTS):
        ok, detail = _VERDICTS[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")

