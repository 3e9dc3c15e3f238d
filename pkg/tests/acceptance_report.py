"""Collects one verdict line per acceptance criterion for the terminal summary."""

LINES = []


def record(number, title, ok, detail):
    line = f"ACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {title} | {detail}"
    LINES.append(line)
    print(line)
    return ok
