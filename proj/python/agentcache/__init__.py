# Copyright (C) 2026 The agentcache Authors
# SPDX-License-Identifier: Apache-2.0
"""Persistent quantized KV-cache engine for multi-agent workloads."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

from . import _agentcache as _core
from ._agentcache import AgentCacheError, dequantize, memory_ratio, parse_byte_size, preset_names, quantize

__all__ = [
    "AgentCacheError",
    "Runtime",
    "capacity",
    "dequantize",
    "fp16_bytes",
    "inspect",
    "match",
    "memory_ratio",
    "parse_byte_size",
    "preset_names",
    "q4_bytes",
    "quantize",
    "run_scenario",
    "spec",
]


def spec(model: str) -> dict:
    """Model geometry as a dict; ``model`` is a preset name or ``"tiny"``."""
    return json.loads(_core.spec_json(model))


def fp16_bytes(model: str, tokens: int) -> int:
    return _core.fp16_bytes(model, tokens)


def q4_bytes(model: str, tokens: int) -> int:
    return _core.q4_bytes(model, tokens)


def capacity(model: str, budget: int | str = "10.2GB", contexts: Iterable[int] = (4096, 8192, 16384, 32768),
             block_rounded: bool = False) -> dict:
    return json.loads(_core.capacity_json(model, budget, list(contexts), block_rounded))


def match(transcript: str, char_offsets: Sequence[int], prompt: str, block_tokens: int) -> dict:
    return json.loads(_core.match_json(transcript, list(char_offsets), prompt, block_tokens))


def inspect(path: str | Path) -> dict:
    """Header summary of a persisted cache file."""
    return json.loads(_core.inspect_json(Path(path)))


def run_scenario(name: str, seed: int = 1, model: str = "tiny", chunk_tokens: int = 512) -> dict:
    return json.loads(_core.scenario_json(name, seed, model, chunk_tokens))


class Runtime:
    """Synthetic engine, block pool and scheduler in one object."""

    def __init__(self, model: str = "tiny", budget: int | str = "1G", cache_dir: str | Path = "",
                 chunk_tokens: int = 512, max_batch: int = 2) -> None:
        self._rt = _core.Runtime(model, budget, Path(cache_dir) if cache_dir else Path(), chunk_tokens, max_batch)

    def submit(self, request_id: str, agent: str, prompt: str, max_tokens: int = 1, persistent: bool = True) -> None:
        self._rt.submit(request_id, agent, prompt, max_tokens, persistent)

    def step(self) -> list[dict]:
        return json.loads(self._rt.step_json())

    def run(self) -> list[dict]:
        return json.loads(self._rt.run_json())

    def idle(self) -> bool:
        return self._rt.idle()

    def save_all(self) -> list[dict]:
        return json.loads(self._rt.save_all_json())

    def restore(self, agents: Sequence[str] = ()) -> list[dict]:
        return json.loads(self._rt.restore_json(list(agents)))

    def drop(self, agent: str, delete_disk: bool = False) -> None:
        self._rt.drop(agent, delete_disk)

    def match(self, agent: str, prompt: str) -> dict:
        return json.loads(self._rt.match_json(agent, prompt))

    def transcript(self, agent: str) -> str:
        return self._rt.transcript(agent)

    def stats(self) -> dict:
        return json.loads(self._rt.stats_json())
