"""Reference model speaking the unishap wire protocol on stdin/stdout.

v(S) = sum_{j in S} (j + 1) + [0 in S and 1 in S], so the Shapley values are
(1.5, 2.5, 3, 4, ..., d).

Failure switches, for exercising the client:
    --corrupt-line N        replace the N-th response line of the session with garbage
    --exit-after K          answer K EVAL requests, then exit with code 3 on the next
    --hang-after K          answer K EVAL requests, then stop responding
    --wrong-handshake       answer the handshake with the wrong player count
"""
from __future__ import annotations

import argparse
import base64
import sys
import time


def value(mask: int, d: int) -> float:
    total = sum(j + 1 for j in range(d) if (mask >> j) & 1)
    if mask & 0b11 == 0b11:
        total += 1
    return float(total)


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--corrupt-line", type=int, default=0)
    parser.add_argument("--exit-after", type=int, default=-1)
    parser.add_argument("--hang-after", type=int, default=-1)
    parser.add_argument("--wrong-handshake", action="store_true")
    args = parser.parse_args()

    written = 0

    def emit(line: str) -> None:
        nonlocal written
        written += 1
        sys.stdout.write(("garbage" if written == args.corrupt_line else line) + "\n")

    hello = sys.stdin.readline().strip()
    d = int(hello.split("=", 1)[1])
    emit(f"HELLO d={d + 1 if args.wrong_handshake else d}")
    sys.stdout.flush()

    requests = 0
    for raw in sys.stdin:
        line = raw.strip()
        if line == "BYE":
            return 0
        if not line.startswith("EVAL "):
            sys.stderr.write(f"unexpected request {line!r}\n")
            return 2
        k = int(line.split()[1])
        masks = [
            int.from_bytes(base64.b64decode(sys.stdin.readline().strip()), "little")
            for _ in range(k)
        ]
        if requests == args.exit_after:
            sys.stderr.write("boom: reference model exiting on request\n")
            return 3
        if requests == args.hang_after:
            time.sleep(3600)
        requests += 1
        emit(f"VALUES {k}")
        for mask in masks:
            emit(repr(value(mask, d)))
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
