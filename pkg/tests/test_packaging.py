from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def _pins(name: str) -> dict[str, str]:
    lines = (ROOT / name).read_text(encoding="utf-8").splitlines()
    return dict(line.split("==") for line in lines if line.strip())


def test_runtime_requirements_exclude_test_tooling():
    runtime = _pins("requirements.txt")
    testing = _pins("requirements-test.txt")
    assert {"pytest", "hypothesis"} <= set(testing)
    assert not set(runtime) & set(testing)


def test_test_extra_is_declared():
    text = (ROOT / "pyproject.toml").read_text(encoding="utf-8")
    assert 'optional-dependencies.test = { file = ["requirements-test.txt"] }' in text
