"""
Multiply-accumulate counter for the attention path
"""

from contextlib import contextmanager
from contextvars import ContextVar
from typing import Dict, Iterator, Optional


class MacCounter:
    """Multiply-accumulate totals grouped by section name"""

    def __init__(self) -> None:
        self.sections: Dict[str, int] = {}

    def add(self, section_name: str, macs: int) -> None:
        self.sections[section_name] = self.sections.get(section_name, 0) + int(macs)

    def __getitem__(self, section_name: str) -> int:
        return self.sections.get(section_name, 0)

    @property
    def total(self) -> int:
        return sum(self.sections.values())

    def __str__(self) -> str:
        parts = ", ".join(f"{name}={count}" for name, count in sorted(self.sections.items()))
        return f"MacCounter({parts})"


_active_counter: ContextVar[Optional[MacCounter]] = ContextVar("hierform_mac_counter", default=None)
_active_section: ContextVar[str] = ContextVar("hierform_mac_section", default="other")


@contextmanager
def count_macs() -> Iterator[MacCounter]:
    """Count multiply-accumulates of every matrix product run inside the block"""
    counter = MacCounter()
    token = _active_counter.set(counter)
    try:
        yield counter
    finally:
        _active_counter.reset(token)


@contextmanager
def section(name: str) -> Iterator[None]:
    """Attribute multiply-accumulates inside the block to `name`"""
    token = _active_section.set(name)
    try:
        yield
    finally:
        _active_section.reset(token)


def record_macs(macs: int) -> None:
    counter = _active_counter.get()
    if counter is not None:
        counter.add(_active_section.get(), macs)
