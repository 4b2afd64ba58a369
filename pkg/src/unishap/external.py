"""Games backed by a model running in a subprocess.

Wire protocol, one message per line over the child's stdin/stdout:

    -> HELLO d=<d>             <- HELLO d=<d>
    -> EVAL <k>                <- VALUES <k>
    -> <base64 mask> x k       <- <float> x k
    -> BYE                     (child exits)

Masks are little-endian bitmaps of ceil(d/8) bytes. Response lines are
numbered from 1 over the whole session so protocol errors can point at the
offending line.

Usage:
    with ExternalGame(["python", "model.py"], d=16) as game:
        values = game.evaluate_batch(batch)
"""
from __future__ import annotations

import asyncio
import shlex
from collections.abc import Sequence
from typing import Any

import numpy as np
import numpy.typing as npt
import structlog

from unishap.errors import (
    ConfigError,
    GameTimeoutError,
    ProtocolViolationError,
    SubprocessExitedError,
)
from unishap.games import Game
from unishap.settings import DEFAULT_BATCH_SIZE, DEFAULT_EXTERNAL_TIMEOUT
from unishap.subsets import SubsetBatch

log = structlog.get_logger(__name__)

_STDERR_TAIL = 2000
_STREAM_LIMIT = 1 << 24


class ProcessModelClient:
    """Asynchronous client for one model subprocess."""

    def __init__(self, command: Sequence[str], d: int, *, timeout: float) -> None:
        if not command:
            raise ConfigError("external game needs a command line")
        self.command = list(command)
        self.d = d
        self.timeout = timeout
        self._process: asyncio.subprocess.Process | None = None
        self._line_number = 0

    async def start(self) -> None:
        try:
            self._process = await asyncio.create_subprocess_exec(
                *self.command,
                stdin=asyncio.subprocess.PIPE,
                stdout=asyncio.subprocess.PIPE,
                stderr=asyncio.subprocess.PIPE,
                limit=_STREAM_LIMIT,
            )
        except OSError as exc:
            raise ConfigError(
                f"cannot start model process: {exc}", command=shlex.join(self.command)
            ) from exc
        await self._send([f"HELLO d={self.d}"])
        reply = await self._read_line()
        if reply != f"HELLO d={self.d}":
            raise ProtocolViolationError(
                f"expected handshake 'HELLO d={self.d}', got {reply!r}", self._line_number
            )
        log.info("external_game_started", command=shlex.join(self.command), d=self.d)

    async def evaluate(self, encoded: Sequence[str]) -> npt.NDArray[np.float64]:
        k = len(encoded)
        await self._send([f"EVAL {k}", *encoded])
        header = await self._read_line()
        if header != f"VALUES {k}":
            raise ProtocolViolationError(
                f"expected 'VALUES {k}', got {header!r}", self._line_number
            )
        values = np.empty(k)
        for i in range(k):
            line = await self._read_line()
            try:
                values[i] = float(line)
            except ValueError as exc:
                raise ProtocolViolationError(
                    f"expected a decimal value, got {line!r}", self._line_number
                ) from exc
        return values

    async def close(self) -> None:
        process = self._process
        if process is None:
            return
        self._process = None
        if process.returncode is None:
            try:
                assert process.stdin is not None
                process.stdin.write(b"BYE\n")
                await process.stdin.drain()
                process.stdin.close()
                async with asyncio.timeout(self.timeout):
                    await process.wait()
            except (ConnectionError, TimeoutError):
                process.kill()
                await process.wait()
        log.info("external_game_closed", returncode=process.returncode)

    async def _send(self, lines: Sequence[str]) -> None:
        process = self._require_process()
        assert process.stdin is not None
        try:
            process.stdin.write(("\n".join(lines) + "\n").encode("ascii"))
            await process.stdin.drain()
        except ConnectionError as exc:
            raise await self._exited() from exc

    async def _read_line(self) -> str:
        process = self._require_process()
        assert process.stdout is not None
        try:
            async with asyncio.timeout(self.timeout):
                raw = await process.stdout.readline()
        except TimeoutError as exc:
            raise GameTimeoutError(self.timeout) from exc
        if not raw:
            raise await self._exited()
        self._line_number += 1
        return raw.decode("utf-8", errors="replace").strip()

    async def _exited(self) -> SubprocessExitedError:
        process = self._require_process()
        try:
            async with asyncio.timeout(self.timeout):
                await process.wait()
        except TimeoutError:
            process.kill()
            await process.wait()
        tail = ""
        if process.stderr is not None:
            tail = (await process.stderr.read()).decode("utf-8", errors="replace")[-_STDERR_TAIL:]
        return SubprocessExitedError(process.returncode, tail)

    def _require_process(self) -> asyncio.subprocess.Process:
        if self._process is None:
            raise ConfigError("model process is not running")
        return self._process


class ExternalGame(Game):
    """Synchronous game over ``ProcessModelClient``, driven on a private event loop.

    One pipe means one request at a time; ``concurrent`` is False so the base
    class serializes calls.
    """

    concurrent = False
    name = "external"

    def __init__(
        self,
        command: Sequence[str] | str,
        d: int,
        *,
        batch_size: int = DEFAULT_BATCH_SIZE,
        timeout: float = DEFAULT_EXTERNAL_TIMEOUT,
    ) -> None:
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self._loop = asyncio.new_event_loop()
        self._client = ProcessModelClient(argv, d, timeout=timeout)
        try:
            self._loop.run_until_complete(self._client.start())
            super().__init__(d, batch_size=batch_size)
        except BaseException:
            self.close()
            raise

    def _evaluate(self, batch: SubsetBatch) -> npt.NDArray[np.float64]:
        return self._loop.run_until_complete(self._client.evaluate(batch.to_base64()))

    def close(self) -> None:
        if self._loop.is_closed():
            return
        try:
            self._loop.run_until_complete(self._client.close())
        finally:
            self._loop.close()

    def describe(self) -> dict[str, Any]:
        return {"game": self.name, "d": self.d, "command": shlex.join(self._client.command)}

    def __enter__(self) -> ExternalGame:
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


def external_game(
    command: Sequence[str] | str,
    d: int,
    *,
    batch_size: int = DEFAULT_BATCH_SIZE,
    timeout: float = DEFAULT_EXTERNAL_TIMEOUT,
) -> ExternalGame:
    return ExternalGame(command, d, batch_size=batch_size, timeout=timeout)
