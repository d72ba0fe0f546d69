"""Collects one verdict line per acceptance criterion for the terminal summary."""

LINES: list[str] = []


def record(number: int, title: str, ok: bool | None, detail: str) -> str:
    status = "REPORT" if ok is None else ("PASS" if ok else "FAIL")
    line = f"[{status}] criterion {number:2d} {title}: {detail}"
    LINES.append(line)
    print(line)
    return line
