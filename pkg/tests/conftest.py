import pytest

_RESULTS: dict[int, tuple[bool, str]] = {}
_NOTES: list[str] = []


class AcceptanceRecorder:
    def record(self, criterion: int, ok: bool, detail: str) -> bool:
        _RESULTS[criterion] = (bool(ok), detail)
        print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
        return bool(ok)

    def note(self, text: str) -> None:
        _NOTES.append(text)
        print(text)


@pytest.fixture
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        ok, detail = _RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    for text in _NOTES:
        terminalreporter.write_line(f"  note: {text}")
