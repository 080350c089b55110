"""Adapter for forward models running in a child process.

Wire protocol (line-delimited JSON over the child's stdin/stdout, UTF-8):

* on startup the child prints ``{"protocol": "bae-model/1", "input_dim": d, "output_dim": m}``;
* each request is ``{"id": <int>, "k": [<float>, ...]}``;
* each reply is ``{"id": <int>, "y": [<float>, ...]}`` or ``{"id": <int>, "error": "<text>"}``.

One request is in flight per process. Failures surface as
:class:`~hbae.forward.base.ModelFailure` with reason ``timeout``,
``simulator-error``, ``protocol-violation`` or ``process-died``; after a
timeout, protocol violation or death the child is restarted on the next call.
"""

from __future__ import annotations

import json
import logging
import os
import selectors
import subprocess
import time

import numpy as np

from .base import ForwardModel, ModelFailure

__all__ = ["PROTOCOL", "ExternalModel"]

PROTOCOL = "bae-model/1"
DEFAULT_TIMEOUT = 300.0

log = logging.getLogger(__name__)


class ExternalModel(ForwardModel):
    """A :class:`ForwardModel` backed by a long-lived child process.

    Parameters
    ----------
    command : sequence of str
        argv of the child.
    input_dim, output_dim : int, optional
        Expected dimensions; checked against the handshake when given.
    timeout : float
        Seconds to wait for the handshake and for each reply.
    cwd, env : optional
        Passed to :class:`subprocess.Popen`.

    The child is started lazily, so instances can be pickled and sent to
    worker processes; each worker then owns its own child.
    """

    def __init__(self, command, input_dim=None, output_dim=None, timeout=DEFAULT_TIMEOUT, cwd=None, env=None):
        self.command = [str(c) for c in command]
        self.timeout = float(timeout)
        self.cwd = cwd
        self.env = env
        self._expected = (input_dim, output_dim)
        self._proc = None
        self._buffer = b""
        self._next_id = 0
        self.n_restarts = 0
        if input_dim is None or output_dim is None:
            self._start()
        else:
            self.input_dim, self.output_dim = int(input_dim), int(output_dim)

    # -- process management ------------------------------------------------
    def _start(self):
        self.close()
        env = None if self.env is None else {**os.environ, **self.env}
        self._proc = subprocess.Popen(
            self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL, cwd=self.cwd, env=env,
        )
        self._buffer = b""
        try:
            hello = json.loads(self._readline(self.timeout))
        except ValueError as exc:
            self.close()
            raise ModelFailure("protocol-violation", f"bad handshake: {exc}") from None
        if not isinstance(hello, dict) or hello.get("protocol") != PROTOCOL:
            self.close()
            raise ModelFailure("protocol-violation", f"unexpected handshake {hello!r}")
        dims = (hello.get("input_dim"), hello.get("output_dim"))
        exp_in, exp_out = self._expected
        if (exp_in is not None and dims[0] != exp_in) or (exp_out is not None and dims[1] != exp_out):
            self.close()
            raise ModelFailure("protocol-violation", f"handshake dims {dims} != expected {self._expected}")
        self.input_dim, self.output_dim = int(dims[0]), int(dims[1])

    def close(self):
        proc, self._proc = self._proc, None
        if proc is None:
            return
        for stream in (proc.stdin, proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        if proc.poll() is None:
            proc.kill()
        proc.wait()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_proc"] = None
        state["_buffer"] = b""
        return state

    def _readline(self, timeout):
        deadline = time.monotonic() + timeout
        out = self._proc.stdout
        with selectors.DefaultSelector() as sel:
            sel.register(out, selectors.EVENT_READ)
            while b"\n" not in self._buffer:
                remaining = deadline - time.monotonic()
                if remaining <= 0 or not sel.select(remaining):
                    self.close()
                    raise ModelFailure("timeout", f"no reply within {timeout:g} s")
                chunk = os.read(out.fileno(), 65536)
                if not chunk:
                    code = self._proc.poll()
                    self.close()
                    raise ModelFailure("process-died", f"exit status {code}")
                self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line.decode("utf-8")

    # -- evaluation ----------------------------------------------------------
    def _evaluate(self, k):
        if self._proc is None or self._proc.poll() is not None:
            if self._proc is not None:
                log.warning("external model exited; restarting")
            if self._proc is not None or self._next_id:
                self.n_restarts += 1
            self._start()
        req_id = self._next_id
        self._next_id += 1
        message = json.dumps({"id": req_id, "k": [float(v) for v in k]}) + "\n"
        try:
            self._proc.stdin.write(message.encode("utf-8"))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            self.close()
            raise ModelFailure("process-died", "could not write request") from None
        line = self._readline(self.timeout)
        try:
            reply = json.loads(line)
        except ValueError:
            self.close()
            raise ModelFailure("protocol-violation", f"malformed reply {line[:80]!r}") from None
        if not isinstance(reply, dict) or reply.get("id") != req_id:
            self.close()
            raise ModelFailure("protocol-violation", f"reply id mismatch for request {req_id}")
        if "error" in reply:
            raise ModelFailure("simulator-error", str(reply["error"]))
        y = reply.get("y")
        if not isinstance(y, list):
            self.close()
            raise ModelFailure("protocol-violation", "reply carries neither 'y' nor 'error'")
        try:
            return np.asarray(y, dtype=float)
        except (TypeError, ValueError):
            self.close()
            raise ModelFailure("protocol-violation", "non-numeric 'y'") from None

    def __repr__(self):
        return f"ExternalModel({self.command!r})"
