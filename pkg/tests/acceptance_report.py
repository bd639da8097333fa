"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

LINES = []


def report(number, title, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
    LINES.append(line)
    print(line)
    return ok
