"""Collects one verdict line per acceptance criterion."""

_RESULTS: dict[int, tuple[bool, str]] = {}


def record(number: int, ok: bool, detail: str) -> str:
    _RESULTS[number] = (bool(ok), detail)
    line = format_line(number)
    print(line, flush=True)
    return line


def format_line(number: int) -> str:
    ok, detail = _RESULTS[number]
    return f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def lines() -> list[str]:
    return [format_line(n) for n in sorted(_RESULTS)]
