"""Shared record of acceptance outcomes, printed at the end of the run."""

import contextlib
import time

RESULTS = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record PASS/FAIL for one criterion; details are appended by the body."""
    entry = {"title": title, "details": [], "status": "FAIL"}
    RESULTS[number] = entry
    t0 = time.perf_counter()
    try:
        yield entry["details"]
        entry["status"] = "PASS"
    except BaseException as exc:
        entry["details"].append(f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        raise
    finally:
        entry["details"].append(f"{time.perf_counter() - t0:.1f}s")
        print(line(number))


def line(number: int) -> str:
    e = RESULTS[number]
    return f"criterion {number:>2} {e['status']}: {e['title']} [{'; '.join(e['details'])}]"
