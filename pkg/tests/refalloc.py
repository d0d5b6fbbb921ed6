"""Naive reference allocator for differential testing.

Tracks one bit per 16-byte granule and recomputes free runs from scratch on
every call.  Placement follows the same published policy as the real heap:
runs starting below the midpoint are searched lowest first and carved from
their start; otherwise runs at or above it are searched highest first and
carved from their end.
"""

G = 16


class BitmapAllocator:
    def __init__(self, length):
        self.n = length // G
        self.mid = (length // 2) // G
        self.used = [False] * self.n
        self.live = {}  # granule index -> granule count

    def runs(self):
        out, i = [], 0
        while i < self.n:
            if self.used[i]:
                i += 1
                continue
            j = i
            while j < self.n and not self.used[j]:
                j += 1
            out.append((i, j - i))
            i = j
        return out

    def alloc(self, size):
        need = max(1, -(-size // G))
        runs = self.runs()
        at = None
        for start, count in runs:
            if start < self.mid and count >= need:
                at = start
                break
        if at is None:
            for start, count in reversed(runs):
                if start >= self.mid and count >= need:
                    at = start + count - need
                    break
        if at is None:
            return None
        for k in range(at, at + need):
            self.used[k] = True
        self.live[at] = need
        return at * G

    def free(self, offset):
        need = self.live.pop(offset // G, None)
        if need is None or offset % G:
            return False
        for k in range(offset // G, offset // G + need):
            self.used[k] = False
        return True

    def free_bytes(self):
        return self.used.count(False) * G
