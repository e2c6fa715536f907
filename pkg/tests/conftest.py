def pytest_terminal_summary(terminalreporter):
    from test_acceptance import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(VERDICTS, key=lambda k: (int(k[3:].split("[")[0]), k)):
            terminalreporter.write_line(VERDICTS[key])
