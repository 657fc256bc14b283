from .helpers import acceptance_lines


def pytest_terminal_summary(terminalreporter):
    lines = acceptance_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
