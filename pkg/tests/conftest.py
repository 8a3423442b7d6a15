"""Shared pytest plumbing: the acceptance-criteria summary block."""

_acceptance_lines: list[str] = []


def record_acceptance_line(line: str) -> None:
    """Queue a one-line verdict to print in the terminal summary."""
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
