"""Collects one verdict per acceptance criterion for the end-of-session summary."""

RESULTS: dict[int, tuple[str, bool, str]] = {}


def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
    RESULTS[number] = (title, bool(ok), detail)
    print(line(number))
    return ok


def line(number: int) -> str:
    title, ok, detail = RESULTS[number]
    return f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")


def summary_lines() -> list[str]:
    return [line(n) for n in sorted(RESULTS)]
