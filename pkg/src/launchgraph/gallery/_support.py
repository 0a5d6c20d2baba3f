"""Helpers shared by the gallery programs."""
from ..errors import InvalidStateError


def require_finished(result):
    """Raise if any waited-on node ended up failed."""
    failed = [s for s in result.statuses.values() if s.status == "failed"]
    if failed:
        parts = ", ".join(f"node {s.node_id}: {s.detail}" for s in failed)
        raise InvalidStateError(f"gallery run failed ({parts})")


def last_tagged(text, tag):
    """Return the value of the last `tag=...` line in text, or None."""
    prefix = tag + "="
    value = None
    for line in text.splitlines():
        if line.startswith(prefix):
            value = line[len(prefix):]
    return value
