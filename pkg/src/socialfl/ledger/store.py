"""Content-addressed off-chain store (digest -> bytes)."""

from __future__ import annotations

from pathlib import Path

from socialfl.ledger.crypto import H, check_digest


class NotFoundError(KeyError):
    pass


class CorruptEntryError(ValueError):
    """Stored bytes no longer hash to their key."""


class OffchainStore:
    """In memory by default; with ``directory`` every entry is a file named
    by its lowercase hex digest and is read back from disk on each get."""

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._data: dict[bytes, bytes] = {}
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def put(self, data: bytes) -> bytes:
        data = bytes(data)
        key = H(data)
        if self.directory is None:
            self._data.setdefault(key, data)
        else:
            path = self.directory / key.hex()
            if not path.exists():
                path.write_bytes(data)
        return key

    def get(self, digest: bytes) -> bytes:
        digest = check_digest(digest)
        if self.directory is None:
            if digest not in self._data:
                raise NotFoundError(digest.hex())
            data = self._data[digest]
        else:
            path = self.directory / digest.hex()
            if not path.is_file():
                raise NotFoundError(digest.hex())
            data = path.read_bytes()
        if H(data) != digest:
            raise CorruptEntryError(digest.hex())
        return data

    def __contains__(self, digest: bytes) -> bool:
        try:
            self.get(digest)
        except (NotFoundError, CorruptEntryError):
            return False
        return True

    def keys(self) -> list[bytes]:
        if self.directory is None:
            return sorted(self._data)
        return sorted(bytes.fromhex(p.name) for p in self.directory.iterdir() if p.is_file())

    def __len__(self) -> int:
        return len(self.keys())
